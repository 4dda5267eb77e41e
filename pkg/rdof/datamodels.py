"""Data models for rdof"""

# pylint: disable=too-few-public-methods, missing-class-docstring, no-name-in-module
# pylint: disable=no-self-argument

import math
from enum import Enum
from typing import Optional, Any, NamedTuple
import numpy as np
from pydantic import (
    field_validator,
    model_validator,
    ConfigDict,
    BaseModel,
    Field,
)

# Exposure cutpoints in mmHg
PAO2_CUT = 200.0
PAO2_TERNARY_CUTS = (200.0, 250.0)


class RdofException(Exception):
    """Base exception for rdof"""


class DatasetException(RdofException):
    """Invalid dataset or dataset file"""


class DegenerateDataException(RdofException):
    """Too little or single-outcome data left for a test"""


class ConfigException(RdofException):
    """Invalid run configuration"""


class NumericException(RdofException):
    """Internal numeric failure"""


#
# Enumerations of the analysis choices
#
#########################################################################


class MissingEnum(str, Enum):
    """Missing value handling"""

    DROP = "DROP"
    IMPUTE = "IMPUTE"

    def __str__(self):
        return self.value


class SurrogateEnum(str, Enum):
    """Surrogate model for unobserved paO2"""

    KNN = "KNN"
    LINREG = "LINREG"

    def __str__(self):
        return self.value


class TuningEnum(str, Enum):
    """Surrogate hyperparameter choice"""

    DEFAULT = "DEFAULT"
    TUNED = "TUNED"

    def __str__(self):
        return self.value


class AggregationEnum(str, Enum):
    """Per-case aggregation of repeated measurements"""

    MEAN = "MEAN"
    MEDIAN = "MEDIAN"

    def __str__(self):
        return self.value


class CodingEnum(str, Enum):
    """Exposure coding and test"""

    CONTINUOUS = "CONTINUOUS"
    BINARY_200 = "BINARY_200"
    TERNARY_200_250 = "TERNARY_200_250"

    def __str__(self):
        return self.value


class MethodEnum(str, Enum):
    """Multiplicity adjustment method"""

    UNADJUSTED = "unadjusted"
    BONFERRONI = "bonferroni"
    HOLM = "holm"
    MINP = "minp"

    def __str__(self):
        return self.value


class StudyEnum(str, Enum):
    """Simulation study"""

    FWER = "fwer"
    POWER = "power"

    def __str__(self):
        return self.value


# Axis name -> (enum, default option) of the analysis pipeline
AXES = {
    "missing": (MissingEnum, MissingEnum.IMPUTE),
    "surrogate": (SurrogateEnum, SurrogateEnum.LINREG),
    "tuning": (TuningEnum, TuningEnum.DEFAULT),
    "aggregation": (AggregationEnum, AggregationEnum.MEAN),
    "coding": (CodingEnum, CodingEnum.CONTINUOUS),
}


#
# Dataset
#
#########################################################################


class MeasurementRow(BaseModel):
    """One measurement of a case. pao2 None means MISSING."""

    model_config = ConfigDict(frozen=True)

    pao2: Optional[float] = None
    proxies: tuple[float, ...]

    @field_validator("pao2")
    @classmethod
    def pao2_validator(cls, v):
        if v is not None and (not math.isfinite(v) or v <= 0):
            raise ValueError(f"pao2 must be positive and finite, got {v}")
        return v

    @field_validator("proxies")
    @classmethod
    def proxies_validator(cls, v):
        if not all(math.isfinite(x) for x in v):
            raise ValueError("proxies must be fully observed")
        return v


class CaseRecord(BaseModel):
    """A case: binary outcome and its repeated measurements"""

    model_config = ConfigDict(frozen=True)

    case_id: str
    outcome: int = Field(ge=0, le=1)
    measurements: tuple[MeasurementRow, ...] = Field(min_length=1)


class CaseColumns(NamedTuple):
    """Columnar view of a CaseTable, one entry per measurement row"""

    case_index: np.ndarray  # position of the row's case
    pao2: np.ndarray  # nan for MISSING
    proxies: np.ndarray  # (rows, K)


class CaseTable(BaseModel):
    """Long-format clinical-style dataset"""

    model_config = ConfigDict(frozen=True)

    cases: tuple[CaseRecord, ...]
    proxy_names: tuple[str, ...]

    @model_validator(mode="after")
    def table_validator(self):
        seen = set()
        k = len(self.proxy_names)
        for c in self.cases:
            if c.case_id in seen:
                raise ValueError(f"duplicate case_id: {c.case_id}")
            seen.add(c.case_id)
            for m in c.measurements:
                if len(m.proxies) != k:
                    raise ValueError(
                        f"case {c.case_id}: {len(m.proxies)} proxies, expected {k}"
                    )
        return self

    @property
    def n_cases(self) -> int:
        return len(self.cases)

    @property
    def n_rows(self) -> int:
        return sum(len(c.measurements) for c in self.cases)

    @property
    def missing_count(self) -> int:
        return int(np.isnan(self.columns.pao2).sum())

    @property
    def has_missing(self) -> bool:
        return self.missing_count > 0

    @property
    def case_ids(self) -> list[str]:
        return [c.case_id for c in self.cases]

    @property
    def outcomes(self) -> np.ndarray:
        v = np.array([c.outcome for c in self.cases], dtype=np.int64)
        v.flags.writeable = False
        return v

    @property
    def columns(self) -> CaseColumns:
        idx, pao2, proxies = [], [], []
        for i, c in enumerate(self.cases):
            for m in c.measurements:
                idx.append(i)
                pao2.append(np.nan if m.pao2 is None else m.pao2)
                proxies.append(m.proxies)
        proxies = np.array(proxies, dtype=float).reshape(len(idx), len(self.proxy_names))
        cols = CaseColumns(
            case_index=np.array(idx, dtype=np.int64),
            pao2=np.array(pao2, dtype=float),
            proxies=proxies,
        )
        for a in (cols.case_index, cols.pao2, cols.proxies):
            a.flags.writeable = False
        return cols

    def with_outcomes(self, outcomes) -> "CaseTable":
        """Copy of the table with per-case outcomes replaced"""
        if len(outcomes) != self.n_cases:
            raise DatasetException(
                f"outcome vector length {len(outcomes)} != {self.n_cases} cases"
            )
        cases = tuple(
            c.model_copy(update={"outcome": int(o)})
            for c, o in zip(self.cases, outcomes)
        )
        return CaseTable.model_construct(cases=cases, proxy_names=self.proxy_names)

    def subset(self, indices) -> "CaseTable":
        """Table restricted to the cases at the given positions"""
        cases = tuple(self.cases[int(i)] for i in indices)
        return CaseTable.model_construct(cases=cases, proxy_names=self.proxy_names)


class GenConfig(BaseModel):
    """Synthetic paO2-style data generator settings"""

    model_config = ConfigDict(frozen=True)

    n_cases: int = Field(default=200, ge=2)
    measurements_per_case: tuple[int, int] = (3, 8)
    missing_rate: float = Field(default=0.3, ge=0.0, lt=1.0)
    n_proxies: int = Field(default=3, ge=1, le=16)
    effect_size: float = 0.0
    seed: int = Field(default=0, ge=0, lt=2**64)
    pao2_median: float = Field(default=210.0, gt=0)
    pao2_sigma_log: float = Field(default=0.25, gt=0)
    proxy_noise: tuple[float, ...] = (10.0, 20.0, 40.0)

    @field_validator("measurements_per_case")
    @classmethod
    def range_validator(cls, v):
        lo, hi = v
        if lo < 1 or hi < lo:
            raise ValueError(f"invalid measurements_per_case range {v}")
        return v

    @field_validator("proxy_noise")
    @classmethod
    def noise_validator(cls, v):
        if not v or any(s < 0 for s in v):
            raise ValueError("proxy_noise must be nonempty and nonnegative")
        return v


#
# Preprocessing and tests
#
#########################################################################


class DropLogEntry(BaseModel):
    case_id: str
    reason: str


class PreprocChoice(BaseModel):
    """One combination of the four preprocessing axes"""

    model_config = ConfigDict(frozen=True)

    missing: MissingEnum = MissingEnum.IMPUTE
    surrogate: SurrogateEnum = SurrogateEnum.LINREG
    tuning: TuningEnum = TuningEnum.DEFAULT
    aggregation: AggregationEnum = AggregationEnum.MEAN

    def key(self) -> tuple[str, str, str, str]:
        return (
            self.missing.value,
            self.surrogate.value,
            self.tuning.value,
            self.aggregation.value,
        )


class AnalysisFrame(BaseModel):
    """One row per case: outcome and aggregated exposure"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    case_ids: tuple[str, ...]
    outcomes: Any  # int array
    exposures: Any  # float array, mmHg

    @model_validator(mode="after")
    def frame_validator(self):
        outcomes = np.asarray(self.outcomes)
        exposures = np.asarray(self.exposures, dtype=float)
        if not len(self.case_ids) == len(outcomes) == len(exposures):
            raise ValueError("frame columns differ in length")
        if not np.all(np.isfinite(exposures)):
            raise ValueError("exposure must be finite and non-missing")
        if not np.all((outcomes == 0) | (outcomes == 1)):
            raise ValueError("outcome must be binary")
        return self

    def __len__(self):
        return len(self.case_ids)

    def with_outcomes(self, outcomes) -> "AnalysisFrame":
        return AnalysisFrame.model_construct(
            case_ids=self.case_ids, outcomes=outcomes, exposures=self.exposures
        )


class TestResult(BaseModel):
    """Outcome of one hypothesis test"""

    model_config = ConfigDict(frozen=True)

    p_value: float = Field(ge=0.0, le=1.0)
    statistic: float
    method_tag: str
    converged: bool = True
    notes: Optional[str] = None

    @model_validator(mode="after")
    def fallback_validator(self):
        if not self.converged and self.p_value != 1.0:
            raise ValueError("non-converged test must report p = 1.0")
        return self


class ContingencyTable(BaseModel):
    """2 x K table, outcome rows by exposure-category columns"""

    model_config = ConfigDict(frozen=True)

    counts: tuple[tuple[int, ...], tuple[int, ...]]

    @field_validator("counts")
    @classmethod
    def counts_validator(cls, v):
        k = len(v[0])
        if k not in (2, 3) or len(v[1]) != k:
            raise ValueError(f"table must be 2x2 or 2x3, got {v}")
        if any(x < 0 for row in v for x in row):
            raise ValueError("negative count")
        if sum(v[0]) + sum(v[1]) == 0:
            raise ValueError("empty table")
        return v

    @property
    def array(self) -> np.ndarray:
        return np.array(self.counts, dtype=np.int64)


#
# Specification tree and p-values
#
#########################################################################


class SpecTree(BaseModel):
    """Decision tree of analytical choices"""

    axes: list[tuple[str, list[str]]] = Field(min_length=1)
    exclude: list[dict[str, str]] = []
    collapse_duplicates: bool = False
    covariates: list[str] = []

    @field_validator("axes")
    @classmethod
    def axes_validator(cls, v):
        names = [a for a, _ in v]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate axis names: {names}")
        for name, options in v:
            if not options:
                raise ValueError(f"axis {name} has no options")
            if len(set(options)) != len(options):
                raise ValueError(f"axis {name} has duplicate options")
        return v

    @model_validator(mode="after")
    def exclude_validator(self):
        axes = dict(self.axes)
        for e in self.exclude:
            for k, o in e.items():
                if k not in axes or o not in axes[k]:
                    raise ValueError(f"exclusion refers to unknown choice {k}={o}")
        return self

    @classmethod
    def default(cls) -> "SpecTree":
        """The 2 x 2 x 2 x 2 x 3 tree of the paO2 study"""
        return cls(
            axes=[(name, [o.value for o in enum]) for name, (enum, _) in AXES.items()]
        )

    @property
    def size(self) -> int:
        return math.prod(len(o) for _, o in self.axes)


class Spec(BaseModel):
    """One fully resolved path through a SpecTree"""

    model_config = ConfigDict(frozen=True)

    spec_id: int = Field(ge=0)
    options: dict[str, str]

    def resolve(self, axis: str):
        enum, default = AXES[axis]
        if axis not in self.options:
            return default
        return enum(self.options[axis])

    @property
    def choice(self) -> PreprocChoice:
        return PreprocChoice(
            missing=self.resolve("missing"),
            surrogate=self.resolve("surrogate"),
            tuning=self.resolve("tuning"),
            aggregation=self.resolve("aggregation"),
        )

    @property
    def coding(self) -> CodingEnum:
        return self.resolve("coding")

    @property
    def path(self) -> str:
        return " / ".join(f"{k}={v}" for k, v in self.options.items())


class PValueEntry(BaseModel):
    spec_id: int
    p_value: float = Field(ge=0.0, le=1.0)
    method_tag: str
    converged: bool = True
    notes: Optional[str] = None
    options: dict[str, str] = {}


class PValueVector(BaseModel):
    """Raw p-values, one per specification"""

    entries: list[PValueEntry] = Field(min_length=1)

    @property
    def m(self) -> int:
        return len(self.entries)

    @property
    def pvalues(self) -> np.ndarray:
        return np.array([e.p_value for e in self.entries], dtype=float)

    @property
    def spec_ids(self) -> list[int]:
        return [e.spec_id for e in self.entries]


class PermutationMatrix(BaseModel):
    """B x m p-values on outcome-permuted data"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    pvals: Any  # (B, m) float array
    row_minima: Any  # (B,) float array
    B: int = Field(ge=1)
    master_seed: int

    @model_validator(mode="after")
    def matrix_validator(self):
        pvals = np.asarray(self.pvals)
        if pvals.ndim != 2 or pvals.shape[0] != self.B:
            raise ValueError(f"pvals shape {pvals.shape} does not match B={self.B}")
        if not np.array_equal(np.asarray(self.row_minima), pvals.min(axis=1)):
            raise ValueError("row_minima must equal the row-wise minimum")
        return self

    @classmethod
    def from_rows(cls, pvals, master_seed: int) -> "PermutationMatrix":
        pvals = np.asarray(pvals, dtype=float)
        return cls(
            pvals=pvals,
            row_minima=pvals.min(axis=1),
            B=pvals.shape[0],
            master_seed=master_seed,
        )

    @property
    def m(self) -> int:
        return np.asarray(self.pvals).shape[1]


class AdjustmentReport(BaseModel):
    """Raw and adjusted p-values of one multiverse run"""

    raw: PValueVector
    bonferroni: list[float]
    holm: list[float]
    minp: list[float]
    alpha: float = Field(gt=0.0, lt=1.0)
    rejected_minp: list[bool]
    B: int = Field(ge=1)
    master_seed: int

    @model_validator(mode="after")
    def report_validator(self):
        m = self.raw.m
        for name in ("bonferroni", "holm", "minp", "rejected_minp"):
            if len(getattr(self, name)) != m:
                raise ValueError(f"{name} has length {len(getattr(self, name))}, m={m}")
        return self

    @property
    def argmin(self) -> int:
        """Position of p_(1), ties to the smallest spec_id"""
        p = self.raw.pvalues
        return int(np.flatnonzero(p == p.min())[0])


#
# Simulation studies
#
#########################################################################


class FwerStudyConfig(BaseModel):
    sample_sizes: list[int] = Field(default=[100, 300, 1000], min_length=1)
    runs: int = Field(default=200, ge=1)
    B: int = Field(default=200, ge=1)
    alpha: float = Field(default=0.05, gt=0.0, lt=1.0)
    master_seed: int = Field(default=0, ge=0)
    reference_size: int = Field(default=3163, ge=2)
    holm: bool = False

    @classmethod
    def full_scale(cls, **kwargs) -> "FwerStudyConfig":
        return cls(
            sample_sizes=[100, 200, 300, 500, 2000, 3000], runs=1000, B=1000, **kwargs
        )


class PowerStudyConfig(BaseModel):
    sample_sizes: list[int] = Field(
        default=[50, 100, 150, 200, 250, 300, 500], min_length=1
    )
    alphas: list[float] = Field(default=[0.01, 0.05, 0.1], min_length=1)
    runs: int = Field(default=200, ge=1)
    B: int = Field(default=200, ge=1)
    effect_size: float = 1.5
    master_seed: int = Field(default=0, ge=0)
    missing_rate: float = Field(default=0.3, ge=0.0, lt=1.0)
    holm: bool = False

    @field_validator("alphas")
    @classmethod
    def alphas_validator(cls, v):
        if any(not 0 < a < 1 for a in v):
            raise ValueError(f"alphas must lie in (0, 1): {v}")
        return v

    @classmethod
    def full_scale(cls, **kwargs) -> "PowerStudyConfig":
        return cls(runs=1000, B=1000, **kwargs)


class StudyRow(BaseModel):
    study: StudyEnum
    method: MethodEnum
    n: int
    alpha: float
    estimate: float = Field(ge=0.0, le=1.0)
    ci_low: float = Field(ge=0.0, le=1.0)
    ci_high: float = Field(ge=0.0, le=1.0)
    runs: int
    B: int
    seed: int

    @model_validator(mode="after")
    def ci_validator(self):
        if not self.ci_low <= self.estimate <= self.ci_high:
            raise ValueError(
                f"interval [{self.ci_low}, {self.ci_high}] excludes {self.estimate}"
            )
        return self


class OrderingCheck(BaseModel):
    n: int
    alpha: float
    holds: bool
    strict: bool
    values: dict[str, float]


class TrendCheck(BaseModel):
    """Change of one method's estimate between two consecutive sample sizes"""

    method: MethodEnum
    alpha: float
    n_from: int
    n_to: int
    delta: float
    holds: bool


class StudyResult(BaseModel):
    study: StudyEnum
    rows: list[StudyRow]
    checks: list[OrderingCheck] = []

    def get(self, method: MethodEnum, n: int, alpha: Optional[float] = None) -> StudyRow:
        for r in self.rows:
            if r.method == method and r.n == n and (alpha is None or r.alpha == alpha):
                return r
        raise KeyError((method, n, alpha))


#
# Command line configuration
#
#########################################################################


class RunConfig(BaseModel):
    """Declarative configuration of a multiverse run"""

    model_config = ConfigDict(extra="forbid")

    input: Optional[str] = None
    generator: Optional[GenConfig] = None
    tree: SpecTree = Field(default_factory=SpecTree.default)
    B: int = Field(default=1000, ge=1)
    alpha: float = Field(default=0.05, gt=0.0, lt=1.0)
    master_seed: int = Field(default=0, ge=0)
    output: str = "rdof-out"
    workers: Optional[int] = Field(default=None, ge=1)
    holm: bool = False

    @model_validator(mode="after")
    def source_validator(self):
        if (self.input is None) == (self.generator is None):
            raise ValueError("exactly one of input or generator must be given")
        return self
