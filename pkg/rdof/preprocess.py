"""
Preprocessing choices: missing value handling, surrogate model for the
unobserved paO2, tuning, and per-case aggregation.
"""

# pylint: disable=invalid-name

import logging
from typing import Any, NamedTuple, Optional
import numpy as np
from pydantic import BaseModel, ConfigDict
from sklearn.base import RegressorMixin
from sklearn.linear_model import LinearRegression, Ridge
from sklearn.model_selection import KFold, cross_val_predict
from sklearn.neighbors import KNeighborsRegressor
from rdof.datamodels import (
    AggregationEnum,
    AnalysisFrame,
    CaseRecord,
    CaseTable,
    DegenerateDataException,
    DropLogEntry,
    MeasurementRow,
    MissingEnum,
    PreprocChoice,
    RdofException,
    SurrogateEnum,
    TuningEnum,
)

logger = logging.getLogger(__name__)

KNN_GRID = (3, 5, 10, 20)
RIDGE_GRID = (0.0, 0.1, 1.0, 10.0)
DEFAULT_K = 5
DEFAULT_LAMBDA = 0.0
CV_FOLDS = 5
MIN_TRAINING_ROWS = 10
PAO2_FLOOR = 1.0
IMPUTE_STREAM = 0x1A7E


class PreprocessException(RdofException):
    """Preprocessing failure"""


class SurrogateException(RdofException):
    """Surrogate model cannot be fitted or applied"""


class Handled(NamedTuple):
    table: CaseTable
    drop_log: list[DropLogEntry]


class SurrogateModel(BaseModel):
    """Fitted regression of pao2 on the proxies"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    kind: SurrogateEnum
    tuning: TuningEnum
    hyperparameter: float
    proxy_names: tuple[str, ...]
    estimator: Any
    residuals: Any  # in-sample training residuals
    training_rmse: float
    scores: dict[float, float] = {}  # grid value -> CV RMSE, TUNED only

    def predict(self, proxies) -> np.ndarray:
        proxies = np.asarray(proxies, dtype=float)
        if proxies.ndim != 2 or proxies.shape[1] != len(self.proxy_names):
            raise SurrogateException(
                f"proxy dimension mismatch: got {proxies.shape}, "
                f"model has {len(self.proxy_names)} proxies"
            )
        return np.maximum(self.estimator.predict(proxies), PAO2_FLOOR)


def make_estimator(kind: SurrogateEnum, hyperparameter: float) -> RegressorMixin:
    if kind == SurrogateEnum.KNN:
        return KNeighborsRegressor(n_neighbors=int(hyperparameter))
    if hyperparameter > 0:
        return Ridge(alpha=hyperparameter)
    return LinearRegression()


def fold_seed(seed: int) -> int:
    """32-bit random_state for the CV fold assignment"""
    return int(np.random.SeedSequence([seed, CV_FOLDS]).generate_state(1)[0])


def cv_rmse(X, y, kind: SurrogateEnum, hyperparameter: float, seed: int) -> float:
    """Pooled out-of-fold RMSE over seeded 5-fold CV"""
    folds = KFold(n_splits=CV_FOLDS, shuffle=True, random_state=fold_seed(seed))
    pred = cross_val_predict(make_estimator(kind, hyperparameter), X, y, cv=folds)
    return float(np.sqrt(np.mean((y - pred) ** 2)))


def training_rows(table: CaseTable) -> tuple[np.ndarray, np.ndarray]:
    cols = table.columns
    observed = ~np.isnan(cols.pao2)
    return cols.proxies[observed], cols.pao2[observed]


def tuning_grid(kind: SurrogateEnum, n_train: int) -> list[float]:
    if kind == SurrogateEnum.LINREG:
        return list(RIDGE_GRID)
    # k may not exceed the smallest CV training fold
    smallest_fold = n_train - -(-n_train // CV_FOLDS)
    return [k for k in KNN_GRID if k <= smallest_fold]


def default_hyperparameter(kind: SurrogateEnum, n_train: int) -> float:
    if kind == SurrogateEnum.KNN:
        return min(DEFAULT_K, n_train)
    return DEFAULT_LAMBDA


def fit_surrogate(
    table: CaseTable, kind: SurrogateEnum, tuning: TuningEnum, seed: int
) -> SurrogateModel:
    """Fit the surrogate on all rows with observed pao2"""
    X, y = training_rows(table)
    if len(y) < MIN_TRAINING_ROWS:
        raise SurrogateException(
            f"insufficient surrogate training data: {len(y)} rows, "
            f"need {MIN_TRAINING_ROWS}"
        )

    scores = {}
    if tuning == TuningEnum.TUNED:
        grid = tuning_grid(kind, len(y))
        scores = {v: cv_rmse(X, y, kind, v, seed) for v in grid}
        # Grid is ascending, strict comparison keeps the smaller value on ties
        hyperparameter = grid[0]
        for v in grid[1:]:
            if scores[v] < scores[hyperparameter]:
                hyperparameter = v
        logger.debug("Tuned %s: %s, CV RMSE %s", kind, hyperparameter, scores)
    else:
        hyperparameter = default_hyperparameter(kind, len(y))

    estimator = make_estimator(kind, hyperparameter).fit(X, y)
    residuals = y - estimator.predict(X)
    residuals.flags.writeable = False
    return SurrogateModel(
        kind=kind,
        tuning=tuning,
        hyperparameter=hyperparameter,
        proxy_names=table.proxy_names,
        estimator=estimator,
        residuals=residuals,
        training_rmse=float(np.sqrt(np.mean(residuals**2))),
        scores=scores,
    )


def _rebuild(table: CaseTable, pao2: np.ndarray, keep: np.ndarray) -> Handled:
    """Table with new pao2 column, keeping only rows flagged in keep"""
    cases = []
    drop_log = []
    r = 0
    for c in table.cases:
        rows = []
        for m in c.measurements:
            if keep[r]:
                if m.pao2 is not None or np.isnan(pao2[r]):
                    rows.append(m)
                else:
                    rows.append(
                        MeasurementRow.model_construct(
                            pao2=float(pao2[r]), proxies=m.proxies
                        )
                    )
            r += 1
        if not rows:
            drop_log.append(DropLogEntry(case_id=c.case_id, reason="all pao2 missing"))
            continue
        if len(rows) == len(c.measurements) and all(
            a is b for a, b in zip(rows, c.measurements)
        ):
            cases.append(c)
        else:
            cases.append(
                CaseRecord.model_construct(
                    case_id=c.case_id, outcome=c.outcome, measurements=tuple(rows)
                )
            )
    return Handled(
        CaseTable.model_construct(cases=tuple(cases), proxy_names=table.proxy_names),
        drop_log,
    )


def apply_surrogate(
    table: CaseTable, model: SurrogateModel, rng: Optional[np.random.Generator] = None
) -> CaseTable:
    """Replace every MISSING pao2 by the surrogate prediction.

    With a generator, a bootstrapped training residual is added to each
    prediction (single stochastic imputation)."""
    if len(table.proxy_names) != len(model.proxy_names):
        raise SurrogateException(
            f"proxy dimension mismatch: table has {len(table.proxy_names)}, "
            f"model has {len(model.proxy_names)}"
        )
    cols = table.columns
    missing = np.isnan(cols.pao2)
    if not missing.any():
        return table
    values = model.predict(cols.proxies[missing])
    if rng is not None:
        values = values + rng.choice(model.residuals, size=len(values), replace=True)
    pao2 = cols.pao2.copy()
    pao2[missing] = np.maximum(values, PAO2_FLOOR)
    return _rebuild(table, pao2, np.ones(len(pao2), dtype=bool)).table


def check_outcomes(table: CaseTable):
    outcomes = table.outcomes
    if table.n_cases < 2 or outcomes.min() == outcomes.max():
        raise DegenerateDataException(
            f"degenerate after drop: {table.n_cases} cases, "
            f"outcome levels {sorted(set(outcomes.tolist()))}"
        )


def handle_missing(
    table: CaseTable,
    mode: MissingEnum,
    seed: int,
    model: Optional[SurrogateModel] = None,
    check: bool = True,
) -> Handled:
    """Drop or impute measurement rows with MISSING pao2.

    check=False skips the outcome check after DROP, for callers that
    re-test the frame under other outcome vectors."""
    if not table.has_missing:
        return Handled(table, [])

    if mode == MissingEnum.DROP:
        cols = table.columns
        handled = _rebuild(table, cols.pao2, ~np.isnan(cols.pao2))
        for e in handled.drop_log:
            logger.debug("Dropped case %s: %s", e.case_id, e.reason)
        if check:
            check_outcomes(handled.table)
        return handled

    if model is None:
        model = fit_surrogate(table, SurrogateEnum.LINREG, TuningEnum.DEFAULT, seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, IMPUTE_STREAM]))
    return Handled(apply_surrogate(table, model, rng), [])


def aggregate(table: CaseTable, how: AggregationEnum) -> AnalysisFrame:
    """One exposure value per case"""
    cols = table.columns
    if np.isnan(cols.pao2).any():
        raise PreprocessException("aggregate on incomplete data")
    counts = np.bincount(cols.case_index, minlength=table.n_cases)
    if how == AggregationEnum.MEAN:
        exposures = np.bincount(cols.case_index, weights=cols.pao2) / counts
    else:
        # Rows of a case are contiguous in the columnar view
        exposures = np.array(
            [np.median(v) for v in np.split(cols.pao2, np.cumsum(counts)[:-1])]
        )
    return AnalysisFrame(
        case_ids=tuple(table.case_ids),
        outcomes=table.outcomes,
        exposures=exposures,
    )


def run_pipeline(
    table: CaseTable, choice: PreprocChoice, seed: int, check: bool = True
) -> Handled:
    """Apply the missing-value and surrogate stages of one preprocessing path"""
    if choice.missing == MissingEnum.IMPUTE and table.has_missing:
        model = fit_surrogate(table, choice.surrogate, choice.tuning, seed)
        return handle_missing(table, MissingEnum.IMPUTE, seed, model)
    return handle_missing(table, choice.missing, seed, check=check)


def preprocess(table: CaseTable, choice: PreprocChoice, seed: int) -> AnalysisFrame:
    """CaseTable to AnalysisFrame along one preprocessing path"""
    handled = run_pipeline(table, choice, seed)
    return aggregate(handled.table, choice.aggregation)
