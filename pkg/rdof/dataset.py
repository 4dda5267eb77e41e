"""
Case tables: long-format CSV ingestion and a synthetic paO2-style generator.
"""

# pylint: disable=invalid-name

import logging
import math
import numpy as np
import pandas as pd
from pandas.errors import EmptyDataError, ParserError
from scipy.special import expit
from rdof.datamodels import (
    CaseTable,
    CaseRecord,
    MeasurementRow,
    GenConfig,
    DatasetException,
)

logger = logging.getLogger(__name__)

MISSING_TOKENS = ("", "NA")
NULL_SCRAMBLE_STREAM = 0x5C7A


def header_for(proxy_names) -> list[str]:
    return ["case_id", "outcome", "pao2", *proxy_names]


def _parse_float(value, what: str, line: int) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError) as e:
        raise DatasetException(f"malformed row at line {line}: {what}={value!r}") from e
    if not math.isfinite(v):
        raise DatasetException(f"malformed row at line {line}: {what}={value!r}")
    return v


def load_csv(path) -> CaseTable:  # noqa: C901
    """Read and validate a long-format case table"""
    try:
        df = pd.read_csv(
            path,
            dtype=str,
            keep_default_na=False,
            encoding="utf-8",
            on_bad_lines="error",
        )
    except EmptyDataError as e:
        raise DatasetException(f"empty file: {path}") from e
    except ParserError as e:
        raise DatasetException(f"malformed row: {e}") from e

    if df.empty:
        raise DatasetException(f"empty file: {path}")

    columns = list(df.columns)
    proxy_names = columns[3:]
    expected = header_for([f"proxy_{i + 1}" for i in range(len(proxy_names))])
    if columns != expected:
        raise DatasetException(
            f"header mismatch: expected {','.join(expected)}, got {','.join(columns)}"
        )

    groups: dict[str, dict] = {}
    for i, record in enumerate(df.itertuples(index=False, name=None)):
        line = i + 2
        if any(not isinstance(v, str) for v in record):
            raise DatasetException(f"malformed row at line {line}: missing fields")
        case_id, outcome, pao2, *proxies = record
        if case_id == "":
            raise DatasetException(f"malformed row at line {line}: empty case_id")
        if outcome not in ("0", "1"):
            raise DatasetException(
                f"non-binary outcome at line {line}: case {case_id} outcome={outcome!r}"
            )
        if pao2 in MISSING_TOKENS:
            value = None
        else:
            value = _parse_float(pao2, "pao2", line)
            if value <= 0:
                raise DatasetException(
                    f"malformed row at line {line}: pao2 must be positive, got {value}"
                )
        row = (
            value,
            tuple(_parse_float(p, n, line) for p, n in zip(proxies, proxy_names)),
        )

        group = groups.setdefault(case_id, {"outcome": outcome, "rows": []})
        if group["outcome"] != outcome:
            raise DatasetException(
                f"outcome not constant within case at line {line}: case {case_id}"
            )
        if row in group["rows"]:
            raise DatasetException(
                f"duplicate row at line {line}: case {case_id} repeats an earlier row"
            )
        group["rows"].append(row)

    cases = [
        CaseRecord(
            case_id=case_id,
            outcome=int(g["outcome"]),
            measurements=[MeasurementRow(pao2=v, proxies=p) for v, p in g["rows"]],
        )
        for case_id, g in groups.items()
    ]
    table = CaseTable(cases=cases, proxy_names=proxy_names)
    logger.info(
        "Loaded %s: %d cases, %d rows, %d missing pao2",
        path,
        table.n_cases,
        table.n_rows,
        table.missing_count,
    )
    return table


def write_csv(table: CaseTable, path):
    """Write a case table in the long format read by load_csv"""
    records = []
    for c in table.cases:
        for m in c.measurements:
            records.append(
                [
                    c.case_id,
                    str(c.outcome),
                    "" if m.pao2 is None else repr(float(m.pao2)),
                    *(repr(float(p)) for p in m.proxies),
                ]
            )
    df = pd.DataFrame(records, columns=header_for(table.proxy_names), dtype=str)
    df.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")
    logger.info("Wrote %d cases (%d rows) to %s", table.n_cases, table.n_rows, path)


def draw_outcomes(rng: np.random.Generator, probabilities) -> np.ndarray:
    """Bernoulli draws, repeated until both outcome levels occur"""
    probabilities = np.asarray(probabilities, dtype=float)
    if len(probabilities) < 2:
        raise DatasetException("at least two cases are needed for both outcome levels")
    if np.all(probabilities == 0) or np.all(probabilities == 1):
        raise DatasetException("outcome probabilities admit a single level only")
    while True:
        y = (rng.random(len(probabilities)) < probabilities).astype(np.int64)
        if 0 < y.sum() < len(y):
            return y
        logger.debug("Single outcome level drawn, resampling")


def generate(config: GenConfig) -> CaseTable:
    """Synthetic case table. Deterministic in config."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed]))
    n = config.n_cases
    lo, hi = config.measurements_per_case
    counts = rng.integers(lo, hi + 1, size=n)

    # Split log-scale variance between case level and measurement level,
    # so that single measurements have sigma_log marginally.
    log_median = math.log(config.pao2_median)
    case_level = rng.normal(log_median, 0.8 * config.pao2_sigma_log, size=n)
    rows = int(counts.sum())
    case_index = np.repeat(np.arange(n), counts)
    pao2 = np.exp(
        case_level[case_index] + rng.normal(0.0, 0.6 * config.pao2_sigma_log, size=rows)
    )

    noise = np.array(
        [config.proxy_noise[j % len(config.proxy_noise)] for j in range(config.n_proxies)]
    )
    proxies = pao2[:, None] + rng.normal(size=(rows, config.n_proxies)) * noise

    mean_pao2 = np.bincount(case_index, weights=pao2) / counts
    beta0 = -config.effect_size * config.pao2_median / 100.0
    outcome = draw_outcomes(rng, expit(beta0 + config.effect_size * mean_pao2 / 100.0))

    missing = rng.random(rows) < config.missing_rate

    proxy_names = [f"proxy_{j + 1}" for j in range(config.n_proxies)]
    cases = []
    start = 0
    for i in range(n):
        stop = start + int(counts[i])
        measurements = [
            MeasurementRow(
                pao2=None if missing[r] else float(pao2[r]),
                proxies=tuple(float(x) for x in proxies[r]),
            )
            for r in range(start, stop)
        ]
        cases.append(
            CaseRecord(
                case_id=f"case{i + 1:05d}",
                outcome=int(outcome[i]),
                measurements=measurements,
            )
        )
        start = stop
    table = CaseTable(cases=cases, proxy_names=proxy_names)
    logger.info(
        "Generated %d cases, %d rows, %d missing (effect %s, seed %d)",
        n,
        rows,
        int(missing.sum()),
        config.effect_size,
        config.seed,
    )
    return table


def null_scramble(table: CaseTable, seed: int) -> CaseTable:
    """Replace outcomes by iid Bernoulli(0.5) draws, exposures kept"""
    rng = np.random.default_rng(np.random.SeedSequence([seed, NULL_SCRAMBLE_STREAM]))
    outcome = draw_outcomes(rng, np.full(table.n_cases, 0.5))
    return table.with_outcomes(outcome)


def summary(table: CaseTable) -> dict:
    """Basic descriptive numbers of a case table"""
    rows = table.n_rows
    return {
        "cases": table.n_cases,
        "rows": rows,
        "proxies": len(table.proxy_names),
        "missing": table.missing_count,
        "missing_rate": table.missing_count / rows if rows else 0.0,
        "outcome_rate": float(np.mean(table.outcomes)) if table.n_cases else 0.0,
    }
