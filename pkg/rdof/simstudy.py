"""
Simulation studies of the adjustment methods.

FWER: covariates drawn without replacement from a reference table, outcomes
scrambled to independent coin flips, so every specification tests a true
null. Reports the share of runs with at least one rejection.

Power: signal-bearing tables, reports the mean share of specifications
rejected at each level.
"""

# pylint: disable=invalid-name

import logging
import math
from typing import Callable, Optional
import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import norm
from rdof.datamodels import (
    CaseTable,
    FwerStudyConfig,
    GenConfig,
    MethodEnum,
    OrderingCheck,
    PowerStudyConfig,
    RdofException,
    SpecTree,
    StudyEnum,
    StudyResult,
    StudyRow,
    TrendCheck,
)
from rdof.dataset import generate, null_scramble
from rdof.multiverse import evaluate, prepare, to_vector
from rdof.adjust import assemble, permute_pvalues

logger = logging.getLogger(__name__)

STUDY_COLUMNS = [
    "study",
    "method",
    "n",
    "alpha",
    "estimate",
    "ci_low",
    "ci_high",
    "runs",
    "B",
    "seed",
]
METHOD_ORDER = list(MethodEnum)


class StudyException(RdofException):
    """Invalid simulation study input"""


def newcombe_ci(successes: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    """Wilson score interval of a binomial proportion"""
    if trials < 1 or not 0 <= successes <= trials:
        raise StudyException(f"invalid counts: {successes} of {trials}")
    if not 0 < level < 1:
        raise StudyException(f"confidence level must lie in (0, 1), got {level}")
    z = norm.ppf((1 + level) / 2)
    p = successes / trials
    denom = 1 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    low = 0.0 if successes == 0 else max(0.0, center - half)
    high = 1.0 if successes == trials else min(1.0, center + half)
    return low, high


def mean_ci(values, level: float = 0.95) -> tuple[float, float, float]:
    """Mean with a normal-approximation interval, clamped to [0, 1]"""
    values = np.asarray(values, dtype=float)
    mean = float(values.mean())
    if len(values) < 2:
        return mean, mean, mean
    half = norm.ppf((1 + level) / 2) * values.std(ddof=1) / math.sqrt(len(values))
    return mean, max(0.0, mean - half), min(1.0, mean + half)


def run_seed(master_seed: int, n: int, r: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([master_seed, n, r])


def _adjusted(table: CaseTable, tree: SpecTree, B: int, seed: int, alpha: float):
    prepared = prepare(table, tree, seed)
    raw = to_vector(prepared, evaluate(prepared, table.outcomes))
    perm = permute_pvalues(table, tree, B, seed, prepared=prepared)
    report = assemble(raw, perm, alpha)
    return {
        MethodEnum.UNADJUSTED: raw.pvalues,
        MethodEnum.BONFERRONI: np.asarray(report.bonferroni),
        MethodEnum.HOLM: np.asarray(report.holm),
        MethodEnum.MINP: np.asarray(report.minp),
    }


def _run_all(tasks, workers: int, progress: Optional[Callable[[int], None]]) -> list:
    """Evaluate (function, args) tasks in order, threads when workers > 1"""
    results = []
    if workers > 1:
        runner = Parallel(n_jobs=workers, prefer="threads", return_as="generator")
        iterator = runner(delayed(f)(*args) for f, args in tasks)
    else:
        iterator = (f(*args) for f, args in tasks)
    for result in iterator:
        results.append(result)
        if progress:
            progress(1)
    return results


#
# FWER under the global null
#
#########################################################################


def reference_table(config: FwerStudyConfig) -> CaseTable:
    return generate(
        GenConfig(
            n_cases=config.reference_size, effect_size=0.0, seed=config.master_seed
        )
    )


def _fwer_run(
    reference: CaseTable, tree: SpecTree, config: FwerStudyConfig, n: int, r: int
) -> dict[MethodEnum, bool]:
    ss = run_seed(config.master_seed, n, r)
    rng = np.random.default_rng(ss)
    seed = int(ss.generate_state(1, np.uint64)[0])
    drawn = np.sort(rng.choice(reference.n_cases, size=n, replace=False))
    table = null_scramble(reference.subset(drawn), seed)
    pvalues = _adjusted(table, tree, config.B, seed, config.alpha)
    return {method: bool(np.any(p < config.alpha)) for method, p in pvalues.items()}


def study_methods(holm: bool) -> list[MethodEnum]:
    return [m for m in METHOD_ORDER if holm or m != MethodEnum.HOLM]


def run_fwer_study(
    config: FwerStudyConfig,
    tree: SpecTree,
    workers: int = 1,
    progress: Optional[Callable[[int], None]] = None,
) -> StudyResult:
    """Share of null datasets with at least one rejection, per method and n"""
    for n in config.sample_sizes:
        if not 2 <= n <= config.reference_size:
            raise StudyException(
                f"sample size {n} outside [2, {config.reference_size}] of the reference table"
            )
    reference = reference_table(config)
    tasks = [
        (_fwer_run, (reference, tree, config, n, r))
        for n in config.sample_sizes
        for r in range(config.runs)
    ]
    logger.info(
        "FWER study: sizes %s, %d runs, B=%d", config.sample_sizes, config.runs, config.B
    )
    decisions = _run_all(tasks, workers, progress)

    methods = study_methods(config.holm)
    rows = []
    checks = []
    for k, n in enumerate(config.sample_sizes):
        runs = decisions[k * config.runs : (k + 1) * config.runs]
        estimates = {}
        for method in methods:
            successes = sum(d[method] for d in runs)
            low, high = newcombe_ci(successes, config.runs)
            estimates[method] = successes / config.runs
            rows.append(
                StudyRow(
                    study=StudyEnum.FWER,
                    method=method,
                    n=n,
                    alpha=config.alpha,
                    estimate=successes / config.runs,
                    ci_low=low,
                    ci_high=high,
                    runs=config.runs,
                    B=config.B,
                    seed=config.master_seed,
                )
            )
        checks.append(fwer_check(n, config.alpha, estimates))
    return StudyResult(study=StudyEnum.FWER, rows=rows, checks=checks)


def fwer_check(n: int, alpha: float, estimates: dict) -> OrderingCheck:
    """Bonferroni <= minP <= unadjusted"""
    bonf = estimates[MethodEnum.BONFERRONI]
    minp = estimates[MethodEnum.MINP]
    unadj = estimates[MethodEnum.UNADJUSTED]
    check = OrderingCheck(
        n=n,
        alpha=alpha,
        holds=bonf <= minp <= unadj,
        strict=bonf < minp < unadj,
        values={str(k): v for k, v in estimates.items()},
    )
    if not check.holds:
        logger.warning(
            "n=%d: expected bonferroni <= minp <= unadjusted FWER, got %s",
            n,
            check.values,
        )
    return check


#
# Power under signal
#
#########################################################################


def _power_run(
    tree: SpecTree,
    config: PowerStudyConfig,
    reference: Optional[CaseTable],
    n: int,
    r: int,
) -> dict[tuple[MethodEnum, float], float]:
    ss = run_seed(config.master_seed, n, r)
    seed = int(ss.generate_state(1, np.uint64)[0])
    if reference is None:
        table = generate(
            GenConfig(
                n_cases=n,
                effect_size=config.effect_size,
                missing_rate=config.missing_rate,
                seed=seed,
            )
        )
    else:
        drawn = np.random.default_rng(ss).choice(reference.n_cases, size=n, replace=False)
        table = reference.subset(np.sort(drawn))
    pvalues = _adjusted(table, tree, config.B, seed, max(config.alphas))
    return {
        (method, a): float(np.mean(p < a))
        for method, p in pvalues.items()
        for a in config.alphas
    }


def run_power_study(
    config: PowerStudyConfig,
    tree: SpecTree,
    workers: int = 1,
    progress: Optional[Callable[[int], None]] = None,
    reference: Optional[CaseTable] = None,
) -> StudyResult:
    """Mean share of significant specifications, per method, n and alpha"""
    if reference is not None:
        too_large = [n for n in config.sample_sizes if n > reference.n_cases]
        if too_large:
            raise StudyException(
                f"sample sizes {too_large} exceed the {reference.n_cases} reference cases"
            )
    tasks = [
        (_power_run, (tree, config, reference, n, r))
        for n in config.sample_sizes
        for r in range(config.runs)
    ]
    logger.info(
        "Power study: sizes %s, alphas %s, %d runs, B=%d, effect %s",
        config.sample_sizes,
        config.alphas,
        config.runs,
        config.B,
        config.effect_size,
    )
    shares = _run_all(tasks, workers, progress)

    methods = study_methods(config.holm)
    rows = []
    checks = []
    for k, n in enumerate(config.sample_sizes):
        runs = shares[k * config.runs : (k + 1) * config.runs]
        for a in config.alphas:
            estimates = {}
            for method in methods:
                mean, low, high = mean_ci([s[(method, a)] for s in runs])
                estimates[method] = mean
                rows.append(
                    StudyRow(
                        study=StudyEnum.POWER,
                        method=method,
                        n=n,
                        alpha=a,
                        estimate=mean,
                        ci_low=low,
                        ci_high=high,
                        runs=config.runs,
                        B=config.B,
                        seed=config.master_seed,
                    )
                )
            checks.append(power_check(n, a, estimates))
    return StudyResult(study=StudyEnum.POWER, rows=rows, checks=checks)


def power_check(n: int, alpha: float, estimates: dict) -> OrderingCheck:
    """Unadjusted >= minP >= Bonferroni"""
    bonf = estimates[MethodEnum.BONFERRONI]
    minp = estimates[MethodEnum.MINP]
    unadj = estimates[MethodEnum.UNADJUSTED]
    check = OrderingCheck(
        n=n,
        alpha=alpha,
        holds=unadj >= minp >= bonf,
        strict=unadj > minp > bonf,
        values={str(k): v for k, v in estimates.items()},
    )
    if not check.holds:
        logger.warning(
            "n=%d alpha=%s: expected unadjusted >= minp >= bonferroni, got %s",
            n,
            alpha,
            check.values,
        )
    return check


def power_trend(result: StudyResult, level: float = 0.95) -> list[TrendCheck]:
    """One-sided check that each method's estimate does not fall between
    consecutive sample sizes by more than the Monte-Carlo noise allows"""
    z = norm.ppf((1 + level) / 2)
    one_sided = norm.ppf(level)
    checks = []
    keys = sorted(
        {(r.method, r.alpha) for r in result.rows},
        key=lambda k: (k[1], METHOD_ORDER.index(k[0])),
    )
    for method, alpha in keys:
        series = sorted(
            (r for r in result.rows if r.method == method and r.alpha == alpha),
            key=lambda r: r.n,
        )
        for a, b in zip(series, series[1:]):
            se = math.hypot(a.ci_high - a.ci_low, b.ci_high - b.ci_low) / (2 * z)
            delta = b.estimate - a.estimate
            checks.append(
                TrendCheck(
                    method=method,
                    alpha=alpha,
                    n_from=a.n,
                    n_to=b.n,
                    delta=delta,
                    holds=delta >= -one_sided * se,
                )
            )
    for c in checks:
        if not c.holds:
            logger.warning(
                "%s at alpha=%s drops from n=%d to n=%d by %.4f",
                c.method,
                c.alpha,
                c.n_from,
                c.n_to,
                -c.delta,
            )
    return checks


def write_study_csv(result: StudyResult, path):
    rows = sorted(
        result.rows, key=lambda r: (r.n, r.alpha, METHOD_ORDER.index(r.method))
    )
    records = [
        [
            str(r.study),
            str(r.method),
            str(r.n),
            repr(float(r.alpha)),
            repr(float(r.estimate)),
            repr(float(r.ci_low)),
            repr(float(r.ci_high)),
            str(r.runs),
            str(r.B),
            str(r.seed),
        ]
        for r in rows
    ]
    df = pd.DataFrame(records, columns=STUDY_COLUMNS, dtype=str)
    df.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")
    logger.info("Wrote %d %s rows to %s", len(rows), result.study, path)
