"""
Exposure codings and their tests: logistic regression Wald test on the
continuous exposure, Fisher's exact test on the 200 mmHg dichotomization
and on the 200/250 mmHg trichotomization.
"""

# pylint: disable=invalid-name

import logging
from functools import lru_cache
from typing import NamedTuple
import numpy as np
from scipy.special import expit, gammaln, logit
from scipy.stats import norm
from rdof.datamodels import (
    AnalysisFrame,
    CodingEnum,
    ContingencyTable,
    DegenerateDataException,
    TestResult,
    PAO2_CUT,
    PAO2_TERNARY_CUTS,
)

logger = logging.getLogger(__name__)

IRLS_TOL = 1e-10
IRLS_MAX_ITER = 50
IRLS_MAX_HALVINGS = 30
LOGLIK_TOL = 1e-12
SEPARATION_EPS = 1e-10
TIE_TOL = 1e-12
NULL_CACHE_SIZE = 8


#
# Fisher's exact test (Freeman-Halton for 2 x 3)
#
#########################################################################


def _table(outcomes, columns, k: int) -> ContingencyTable:
    counts = np.bincount(
        np.asarray(outcomes, dtype=np.int64) * k + columns, minlength=2 * k
    ).reshape(2, k)
    return ContingencyTable(counts=tuple(tuple(int(x) for x in row) for row in counts))


def dichotomize(frame: AnalysisFrame, cut: float = PAO2_CUT) -> ContingencyTable:
    """Column 0: exposure < cut, column 1: exposure >= cut"""
    high = (np.asarray(frame.exposures) >= cut).astype(np.int64)
    return _table(frame.outcomes, high, 2)


def trichotomize(
    frame: AnalysisFrame, cuts: tuple[float, float] = PAO2_TERNARY_CUTS
) -> ContingencyTable:
    """Columns [<cuts[0], cuts[0]..<cuts[1], >=cuts[1]]"""
    bins = np.searchsorted(np.asarray(cuts), frame.exposures, side="right")
    return _table(frame.outcomes, bins.astype(np.int64), 3)


def _lncomb(n, k):
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def _log_prob(first_row: np.ndarray, cols: tuple[int, ...], row0: int) -> np.ndarray:
    """Log point probability of tables (one per row of first_row) given margins"""
    c = np.asarray(cols, dtype=float)
    return _lncomb(c, first_row).sum(axis=-1) - _lncomb(float(sum(cols)), float(row0))


def _first_rows(row0: int, cols: tuple[int, ...]) -> np.ndarray:
    """All first rows of 2 x K tables with the given margins"""
    if len(cols) == 2:
        x = np.arange(max(0, row0 - cols[1]), min(row0, cols[0]) + 1)
        return np.column_stack([x, row0 - x]).astype(float)
    x1, x2 = np.meshgrid(
        np.arange(min(row0, cols[0]) + 1),
        np.arange(min(row0, cols[1]) + 1),
        indexing="ij",
    )
    x3 = row0 - x1 - x2
    valid = (x3 >= 0) & (x3 <= cols[2])
    return np.column_stack([x1[valid], x2[valid], x3[valid]]).astype(float)


@lru_cache(maxsize=NULL_CACHE_SIZE)
def null_distribution(row0: int, cols: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
    """Sorted point probabilities of all tables with these margins, and their
    cumulative sums"""
    probs = np.sort(np.exp(_log_prob(_first_rows(row0, cols), cols, row0)))
    cumulative = np.cumsum(probs)
    probs.flags.writeable = False
    cumulative.flags.writeable = False
    return probs, cumulative


def fisher_exact(table: ContingencyTable) -> TestResult:
    """Two-sided exact test, point-probability method"""
    counts = table.array
    counts = counts[:, counts.sum(axis=0) > 0]
    k = counts.shape[1]
    tag = f"fisher_2x{max(k, 2)}"
    if k < 2 or np.any(counts.sum(axis=1) == 0):
        return TestResult(
            p_value=1.0, statistic=1.0, method_tag=tag, notes="degenerate margins"
        )

    row0 = int(counts[0].sum())
    cols = tuple(int(c) for c in counts.sum(axis=0))
    probs, cumulative = null_distribution(row0, cols)
    observed = float(np.exp(_log_prob(counts[0].astype(float)[None, :], cols, row0))[0])
    idx = int(np.searchsorted(probs, observed + TIE_TOL, side="right"))
    p = float(cumulative[idx - 1]) if idx > 0 else 0.0
    return TestResult(p_value=min(max(p, 0.0), 1.0), statistic=observed, method_tag=tag)


#
# Logistic regression
#
#########################################################################


class LogisticFit(NamedTuple):
    beta: np.ndarray
    se: np.ndarray
    iterations: int
    converged: bool
    separated: bool


def _loglik(X: np.ndarray, y: np.ndarray, beta: np.ndarray) -> float:
    eta = X @ beta
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def fit_logistic(x, y) -> LogisticFit:
    """outcome ~ intercept + exposure by iteratively reweighted least squares.

    Each Newton step is halved until the log-likelihood stops decreasing.
    separated is set only when every fitted probability saturates.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(np.unique(y)) < 2 or np.ptp(x) == 0:
        raise DegenerateDataException("degenerate regression input")

    X = np.column_stack([np.ones_like(x), x])
    beta = np.array([logit(y.mean()), 0.0])
    loglik = _loglik(X, y, beta)
    converged = False
    iterations = 0
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for iterations in range(1, IRLS_MAX_ITER + 1):
            mu = expit(X @ beta)
            w = mu * (1.0 - mu)
            info = (X.T * w) @ X
            try:
                step = np.linalg.solve(info, X.T @ (y - mu))
            except np.linalg.LinAlgError:
                break
            if not np.all(np.isfinite(step)):
                break
            if np.max(np.abs(step)) < IRLS_TOL:
                beta = beta + step
                converged = True
                break
            for _ in range(IRLS_MAX_HALVINGS):
                candidate = beta + step
                candidate_loglik = _loglik(X, y, candidate)
                floor = loglik - LOGLIK_TOL * (1.0 + abs(loglik))
                if np.isfinite(candidate_loglik) and candidate_loglik >= floor:
                    break
                step = step / 2.0
            else:
                logger.debug("Step halving exhausted after %d iterations", iterations)
                break
            beta, loglik = candidate, candidate_loglik

        mu = expit(X @ beta)
        separated = bool(np.all((mu < SEPARATION_EPS) | (mu > 1.0 - SEPARATION_EPS)))
        w = mu * (1.0 - mu)
        try:
            cov = np.linalg.inv((X.T * w) @ X)
            se = np.sqrt(np.diag(cov))
        except np.linalg.LinAlgError:
            se = np.full(2, np.nan)
    if separated or not np.all(np.isfinite(se)) or not np.all(np.isfinite(beta)):
        converged = False
    return LogisticFit(beta, se, iterations, converged, separated)


def logistic_wald(frame: AnalysisFrame) -> TestResult:
    """Wald test of the exposure slope; p = 1.0 when IRLS fails or separates"""
    fit = fit_logistic(frame.exposures, frame.outcomes)
    if not fit.converged:
        note = "separation" if fit.separated else f"no convergence in {fit.iterations} iterations"
        logger.debug("Logistic fit failed: %s", note)
        return TestResult(
            p_value=1.0,
            statistic=0.0,
            method_tag="logistic_wald",
            converged=False,
            notes=note,
        )
    z = float(fit.beta[1] / fit.se[1])
    return TestResult(
        p_value=float(min(2.0 * norm.sf(abs(z)), 1.0)),
        statistic=z,
        method_tag="logistic_wald",
    )


def method_tag(coding: CodingEnum) -> str:
    return {
        CodingEnum.CONTINUOUS: "logistic_wald",
        CodingEnum.BINARY_200: "fisher_2x2",
        CodingEnum.TERNARY_200_250: "fisher_2x3",
    }[coding]


def degenerate(coding: CodingEnum, note: str) -> TestResult:
    return TestResult(
        p_value=1.0, statistic=0.0, method_tag=method_tag(coding), notes=note
    )


def run_test(frame: AnalysisFrame, coding: CodingEnum) -> TestResult:
    """Test the frame under one exposure coding. Degenerate data gives p = 1.0."""
    try:
        if coding == CodingEnum.CONTINUOUS:
            return logistic_wald(frame)
        if coding == CodingEnum.BINARY_200:
            return fisher_exact(dichotomize(frame))
        return fisher_exact(trichotomize(frame))
    except DegenerateDataException as e:
        return degenerate(coding, str(e))

