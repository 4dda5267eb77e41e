"""
Multiplicity adjustment of the p-values of one multiverse: Bonferroni,
Holm, and the single-step minP procedure. The null distribution of the
smallest p-value is approximated by shuffling the per-case outcome labels
and re-running every specification; a +1 correction keeps the adjusted
values valid at finite B.
"""

# pylint: disable=invalid-name

import itertools
import logging
import math
from typing import Callable, Optional
import numpy as np
import pandas as pd
import simplejson as json
from joblib import Parallel, delayed
from rdof.datamodels import (
    AXES,
    AdjustmentReport,
    CaseTable,
    NumericException,
    PValueVector,
    PermutationMatrix,
    RdofException,
    SpecTree,
)
from rdof.multiverse import (
    Prepared,
    evaluate,
    evaluate_pvalues,
    prepare,
    to_vector,
)

logger = logging.getLogger(__name__)

TIE_TOL = 1e-12

REPORT_COLUMNS = [
    "spec_id",
    *AXES,
    "p_raw",
    "p_bonferroni",
    "p_holm",
    "p_minp",
    "rejected_minp",
    "converged",
    "notes",
]


class AdjustmentException(RdofException):
    """P-values and permutation matrix do not fit together"""


def bonferroni(v: PValueVector) -> np.ndarray:
    return np.minimum(v.pvalues * v.m, 1.0)


def holm(v: PValueVector) -> np.ndarray:
    """Step-down Holm adjustment, in the original order"""
    p = v.pvalues
    m = len(p)
    order = np.argsort(p, kind="stable")
    stepped = np.maximum.accumulate(p[order] * (m - np.arange(m)))
    adjusted = np.empty(m)
    adjusted[order] = np.minimum(stepped, 1.0)
    return adjusted


#
# Permutation engine
#
#########################################################################


def permute_outcomes(outcomes, b: int, master_seed: int) -> np.ndarray:
    """Outcome labels shuffled across cases by permutation b"""
    rng = np.random.default_rng(np.random.SeedSequence([master_seed, b]))
    return np.asarray(outcomes)[rng.permutation(len(outcomes))]


def _permuted_row(prepared: Prepared, outcomes, b: int, master_seed: int):
    return evaluate_pvalues(prepared, permute_outcomes(outcomes, b, master_seed))


def permute_pvalues(
    table: CaseTable,
    tree: SpecTree,
    B: int,
    master_seed: int,
    workers: int = 1,
    prepared: Optional[Prepared] = None,
    progress: Optional[Callable[[int], None]] = None,
) -> PermutationMatrix:
    """B x m p-values, row b from the outcomes shuffled with (master_seed, b).

    Preprocessing uses the seed of the unshuffled run, so the shuffle is
    the only thing that varies between rows."""
    if B < 1:
        raise AdjustmentException(f"B must be at least 1, got {B}")
    if prepared is None:
        prepared = prepare(table, tree, master_seed, workers)
    outcomes = table.outcomes

    logger.info("Running %d permutations of %d cases", B, table.n_cases)
    if workers > 1:
        rows = []
        for row in Parallel(n_jobs=workers, prefer="threads", return_as="generator")(
            delayed(_permuted_row)(prepared, outcomes, b, master_seed)
            for b in range(1, B + 1)
        ):
            rows.append(row)
            if progress:
                progress(1)
    else:
        rows = []
        for b in range(1, B + 1):
            rows.append(_permuted_row(prepared, outcomes, b, master_seed))
            if progress:
                progress(1)
    return PermutationMatrix.from_rows(np.vstack(rows), master_seed)


def minp_adjust(v: PValueVector, perm: PermutationMatrix) -> np.ndarray:
    """(1 + #{b: min_b <= p_i}) / (B + 1) for every spec i"""
    if perm.m != v.m:
        raise AdjustmentException(
            f"dimension mismatch: {v.m} p-values, permutation matrix has {perm.m} columns"
        )
    minima = np.sort(np.asarray(perm.row_minima, dtype=float))
    if not np.all(np.isfinite(minima)):
        raise NumericException("non-finite p-value in the permutation matrix")
    counts = np.searchsorted(minima, v.pvalues + TIE_TOL, side="right")
    return (1.0 + counts) / (perm.B + 1.0)


def _arrangements(outcomes: np.ndarray):
    """Every distinct assignment of the outcome labels to the cases"""
    n = len(outcomes)
    k = int(np.sum(outcomes))
    for ones in itertools.combinations(range(n), k):
        y = np.zeros(n, dtype=np.int64)
        y[list(ones)] = 1
        yield y


def exhaustive_permutations(
    table: CaseTable, tree: SpecTree, seed: int
) -> PermutationMatrix:
    """Permutation matrix over all distinct outcome arrangements except the
    observed one, B = C(n, k) - 1. Only sensible for a handful of cases."""
    prepared = prepare(table, tree, seed)
    observed = table.outcomes
    rows = [
        evaluate_pvalues(prepared, y)
        for y in _arrangements(observed)
        if not np.array_equal(y, observed)
    ]
    if not rows:
        raise AdjustmentException("outcome has a single arrangement, nothing to permute")
    return PermutationMatrix.from_rows(np.vstack(rows), seed)


def exact_minp(table: CaseTable, tree: SpecTree, seed: int) -> np.ndarray:
    """minP adjusted p-values by full enumeration: the share of all outcome
    arrangements, the observed included, whose smallest p-value is at most p_i"""
    prepared = prepare(table, tree, seed)
    p = evaluate_pvalues(prepared, table.outcomes)
    minima = np.array(
        [evaluate_pvalues(prepared, y).min() for y in _arrangements(table.outcomes)]
    )
    total = math.comb(table.n_cases, int(np.sum(table.outcomes)))
    counts = (minima[None, :] <= p[:, None] + TIE_TOL).sum(axis=1)
    return counts / total


#
# Reports
#
#########################################################################


def assemble(
    raw: PValueVector, perm: PermutationMatrix, alpha: float
) -> AdjustmentReport:
    minp = minp_adjust(raw, perm)
    return AdjustmentReport(
        raw=raw,
        bonferroni=bonferroni(raw).tolist(),
        holm=holm(raw).tolist(),
        minp=minp.tolist(),
        alpha=alpha,
        rejected_minp=(minp < alpha).tolist(),
        B=perm.B,
        master_seed=perm.master_seed,
    )


def adjust_all(
    table: CaseTable,
    tree: SpecTree,
    B: int,
    alpha: float,
    master_seed: int,
    workers: int = 1,
    progress: Optional[Callable[[int], None]] = None,
) -> AdjustmentReport:
    """Raw p-values of the tree and all three adjustments"""
    prepared = prepare(table, tree, master_seed, workers)
    raw = to_vector(prepared, evaluate(prepared, table.outcomes))
    perm = permute_pvalues(
        table,
        tree,
        B,
        master_seed,
        workers=workers,
        prepared=prepared,
        progress=progress,
    )
    report = assemble(raw, perm, alpha)
    s = summary(report)
    logger.info(
        "p_(1) = %.4g (spec %d), minP %.4g, Bonferroni %.4g",
        s["p_min"],
        s["p_min_spec_id"],
        s["minp_min"],
        s["bonferroni_min"],
    )
    return report


def summary(report: AdjustmentReport) -> dict:
    i = report.argmin
    entry = report.raw.entries[i]
    return {
        "m": report.raw.m,
        "B": report.B,
        "seed": report.master_seed,
        "alpha": report.alpha,
        "p_min": entry.p_value,
        "p_min_spec_id": entry.spec_id,
        "minp_min": report.minp[i],
        "bonferroni_min": report.bonferroni[i],
        "holm_min": report.holm[i],
        "winning_spec": dict(entry.options),
        "rejected_count": sum(report.rejected_minp),
    }


def write_report_csv(report: AdjustmentReport, path):
    rows = []
    for i, e in enumerate(report.raw.entries):
        rows.append(
            [
                str(e.spec_id),
                *(e.options.get(axis, str(default)) for axis, (_, default) in AXES.items()),
                repr(float(e.p_value)),
                repr(float(report.bonferroni[i])),
                repr(float(report.holm[i])),
                repr(float(report.minp[i])),
                "true" if report.rejected_minp[i] else "false",
                "true" if e.converged else "false",
                e.notes or "",
            ]
        )
    df = pd.DataFrame(rows, columns=REPORT_COLUMNS, dtype=str)
    df.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")
    logger.info("Wrote report of %d specs to %s", report.raw.m, path)


def write_report_json(report: AdjustmentReport, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(summary(report), f, indent=4, sort_keys=True)
        f.write("\n")
    logger.info("Wrote summary to %s", path)
