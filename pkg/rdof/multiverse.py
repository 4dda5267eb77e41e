"""
Specification trees: enumeration of all analysis paths and their execution
on a case table.

Preprocessing does not look at the outcome, so a run is split in two:
prepare() computes the distinct analysis frames once, evaluate() tests them
against an outcome vector. run_all() is evaluate(prepare(table), outcomes);
the permutation engine reuses one prepared multiverse for every shuffle.
"""

# pylint: disable=invalid-name

import itertools
import logging
from typing import NamedTuple, Optional
import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from rdof.datamodels import (
    AXES,
    AnalysisFrame,
    CaseTable,
    CodingEnum,
    DatasetException,
    PValueEntry,
    PValueVector,
    PreprocChoice,
    RdofException,
    Spec,
    SpecTree,
    TestResult,
)
from rdof.preprocess import aggregate, run_pipeline
from rdof.stattests import degenerate, method_tag, run_test

logger = logging.getLogger(__name__)

PVALUE_COLUMNS = ["spec_id", *AXES, "p_value", "converged", "notes"]


class SpecTreeException(RdofException):
    """Invalid specification tree"""


class PreparedFrame(NamedTuple):
    frame: Optional[AnalysisFrame]  # None when no case survived preprocessing
    positions: np.ndarray  # case positions in the source table
    dropped: int  # cases removed by DROP
    note: Optional[str] = None


class Prepared(NamedTuple):
    specs: list[Spec]
    frames: list[PreparedFrame]
    frame_of: list[int]  # spec position -> frame index
    kept: list[int]  # spec positions that enter the p-value vector


def excluded(options: dict[str, str], exclude: list[dict[str, str]]) -> bool:
    return any(all(options.get(k) == v for k, v in e.items()) for e in exclude)


def enumerate_specs(tree: SpecTree) -> list[Spec]:
    """Axis-ordered cartesian product of the tree minus the exclusions"""
    names = [name for name, _ in tree.axes]
    specs = []
    for combo in itertools.product(*(options for _, options in tree.axes)):
        options = dict(zip(names, combo))
        if excluded(options, tree.exclude):
            continue
        specs.append(Spec(spec_id=len(specs), options=options))
    if not specs:
        raise SpecTreeException("specification tree is empty after exclusions")
    return specs


def validate_tree(tree: SpecTree):
    """Check that every axis and option is one the pipeline can run"""
    for name, options in tree.axes:
        if name not in AXES:
            raise SpecTreeException(
                f"unknown axis {name!r}, expected one of {', '.join(AXES)}"
            )
        enum = AXES[name][0]
        valid = [e.value for e in enum]
        for o in options:
            if o not in valid:
                raise SpecTreeException(
                    f"unknown option {name}={o!r}, expected one of {', '.join(valid)}"
                )
    if tree.covariates:
        logger.warning(
            "Tree names covariates %s: shuffling the outcome also breaks their "
            "association with it, the permutation null is then stricter than "
            "the hypothesis tested",
            tree.covariates,
        )


def stage_seed(seed: int, ordinal: int) -> int:
    """Seed of the preprocessing stage shared by all specs of one prefix"""
    return int(np.random.SeedSequence([seed, ordinal]).generate_state(1, np.uint64)[0])


def _prepare_one(table: CaseTable, choice: PreprocChoice, seed: int) -> PreparedFrame:
    handled = run_pipeline(table, choice, seed, check=False)
    position = {c: i for i, c in enumerate(table.case_ids)}
    positions = np.array([position[c] for c in handled.table.case_ids], dtype=np.int64)
    dropped = len(handled.drop_log)
    if handled.table.n_cases == 0:
        return PreparedFrame(None, positions, dropped, "degenerate after drop: 0 cases")
    return PreparedFrame(aggregate(handled.table, choice.aggregation), positions, dropped)


def prepare(
    table: CaseTable, tree: SpecTree, seed: int, workers: int = 1
) -> Prepared:
    """Enumerate the tree and preprocess each distinct path once"""
    validate_tree(tree)
    specs = enumerate_specs(tree)

    prefixes: dict[tuple, int] = {}
    choices = []
    for s in specs:
        key = s.choice.key()
        if key not in prefixes:
            prefixes[key] = len(prefixes)
            choices.append(s.choice)

    jobs = [
        delayed(_prepare_one)(table, choice, stage_seed(seed, i))
        for i, choice in enumerate(choices)
    ]
    if workers > 1 and len(jobs) > 1:
        pipelines = Parallel(n_jobs=workers, prefer="threads")(jobs)
    else:
        pipelines = [f(*a, **kw) for f, a, kw in jobs]

    # Pipelines that produce the same frame share it
    frames: list[PreparedFrame] = []
    frame_index: dict[tuple, int] = {}
    pipeline_frame = []
    for choice, p in zip(choices, pipelines):
        if p.frame is None:
            key = ("empty", choice.key())
        else:
            key = (p.frame.case_ids, np.asarray(p.frame.exposures).tobytes())
        if key not in frame_index:
            frame_index[key] = len(frames)
            frames.append(p)
            if p.dropped:
                logger.info(
                    "%s removed %d of %d cases with no observed pao2",
                    choice.key(),
                    p.dropped,
                    table.n_cases,
                )
        pipeline_frame.append(frame_index[key])

    frame_of = [pipeline_frame[prefixes[s.choice.key()]] for s in specs]

    kept = list(range(len(specs)))
    if tree.collapse_duplicates:
        seen = set()
        kept = []
        for i, s in enumerate(specs):
            key = (frame_of[i], s.coding)
            if key not in seen:
                seen.add(key)
                kept.append(i)
        logger.info("Collapsed %d duplicate specs", len(specs) - len(kept))

    logger.info(
        "%d specs, %d distinct pipelines, %d distinct frames",
        len(kept),
        len(choices),
        len(frames),
    )
    return Prepared(specs, frames, frame_of, kept)


def _evaluate_frame(
    prepared_frame: PreparedFrame, outcomes: np.ndarray, coding: CodingEnum
) -> TestResult:
    if prepared_frame.frame is None:
        return degenerate(coding, prepared_frame.note)
    y = outcomes[prepared_frame.positions]
    if len(y) < 2 or y.min() == y.max():
        if prepared_frame.dropped:
            note = (
                f"degenerate after drop: {len(y)} cases, "
                f"outcome levels {sorted(set(y.tolist()))}"
            )
        else:
            note = "single outcome level"
        return degenerate(coding, note)
    return run_test(prepared_frame.frame.with_outcomes(y), coding)


def evaluate(prepared: Prepared, outcomes) -> list[TestResult]:
    """Test results of the kept specs for one per-case outcome vector"""
    outcomes = np.asarray(outcomes, dtype=np.int64)
    cache: dict[tuple[int, CodingEnum], TestResult] = {}
    results = []
    for i in prepared.kept:
        coding = prepared.specs[i].coding
        key = (prepared.frame_of[i], coding)
        if key not in cache:
            cache[key] = _evaluate_frame(prepared.frames[key[0]], outcomes, coding)
        results.append(cache[key])
    return results


def evaluate_pvalues(prepared: Prepared, outcomes) -> np.ndarray:
    return np.array([r.p_value for r in evaluate(prepared, outcomes)], dtype=float)


def to_vector(prepared: Prepared, results: list[TestResult]) -> PValueVector:
    entries = []
    for i, r in zip(prepared.kept, results):
        spec = prepared.specs[i]
        if r.notes:
            logger.debug("Spec %d (%s): %s", spec.spec_id, spec.path, r.notes)
        entries.append(
            PValueEntry(
                spec_id=spec.spec_id,
                p_value=r.p_value,
                method_tag=r.method_tag,
                converged=r.converged,
                notes=r.notes,
                options={axis: str(spec.resolve(axis)) for axis in AXES},
            )
        )
    return PValueVector(entries=entries)


def run_all(
    table: CaseTable, tree: SpecTree, seed: int, workers: int = 1
) -> PValueVector:
    """Raw p-value of every specification of the tree"""
    prepared = prepare(table, tree, seed, workers)
    vector = to_vector(prepared, evaluate(prepared, table.outcomes))
    degenerate_count = sum(1 for e in vector.entries if e.notes)
    if degenerate_count:
        logger.warning("%d of %d specs fell back to p = 1.0", degenerate_count, vector.m)
    return vector


def min_p(v: PValueVector) -> tuple[int, float]:
    """Smallest p-value and its spec_id, ties to the smallest spec_id"""
    p = v.pvalues
    order = sorted(range(v.m), key=lambda i: (p[i], v.entries[i].spec_id))
    e = v.entries[order[0]]
    return e.spec_id, e.p_value


def write_pvalues(v: PValueVector, path):
    rows = [
        [
            str(e.spec_id),
            *(e.options.get(axis, str(default)) for axis, (_, default) in AXES.items()),
            repr(float(e.p_value)),
            "true" if e.converged else "false",
            e.notes or "",
        ]
        for e in v.entries
    ]
    df = pd.DataFrame(rows, columns=PVALUE_COLUMNS, dtype=str)
    df.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")
    logger.info("Wrote %d p-values to %s", v.m, path)


def read_pvalues(path) -> PValueVector:
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    if list(df.columns) != PVALUE_COLUMNS:
        raise DatasetException(
            f"header mismatch: expected {','.join(PVALUE_COLUMNS)}, "
            f"got {','.join(df.columns)}"
        )
    entries = [
        PValueEntry(
            spec_id=int(r["spec_id"]),
            p_value=float(r["p_value"]),
            method_tag=method_tag(CodingEnum(r["coding"])),
            converged=r["converged"] == "true",
            notes=r["notes"] or None,
            options={axis: r[axis] for axis in AXES},
        )
        for r in df.to_dict("records")
    ]
    return PValueVector(entries=entries)
