from math import comb
import numpy as np
import pytest
import simplejson as json
from rdof.datamodels import (
    GenConfig,
    PValueEntry,
    PValueVector,
    PermutationMatrix,
    SpecTree,
)
from rdof.dataset import generate
from rdof.multiverse import run_all
from rdof.adjust import (
    AdjustmentException,
    adjust_all,
    bonferroni,
    exact_minp,
    exhaustive_permutations,
    holm,
    minp_adjust,
    permute_outcomes,
    permute_pvalues,
    write_report_csv,
    write_report_json,
)

SMALL_TREE = SpecTree(
    axes=[("aggregation", ["MEAN", "MEDIAN"]), ("coding", ["CONTINUOUS", "BINARY_200"])]
)


def vector(pvalues) -> PValueVector:
    return PValueVector(
        entries=[
            PValueEntry(spec_id=i, p_value=p, method_tag="x")
            for i, p in enumerate(pvalues)
        ]
    )


def test_bonferroni():
    p = [0.001] + [0.5] * 47
    assert bonferroni(vector(p))[0] == pytest.approx(0.048)
    assert bonferroni(vector([0.05] + [0.5] * 47))[0] == 1.0
    assert bonferroni(vector([0.03])).tolist() == [0.03]


def test_holm():
    assert holm(vector([0.01, 0.02])).tolist() == [0.02, 0.02]
    assert np.allclose(holm(vector([0.04, 0.01, 0.03])), [0.06, 0.03, 0.06])
    assert np.allclose(holm(vector([0.01] * 5)), [0.05] * 5)
    assert holm(vector([0.3] * 5)).tolist() == [1.0] * 5

    p = [0.0005] + list(np.linspace(0.01, 0.9, 47))
    v = vector(p)
    assert holm(v)[0] == pytest.approx(0.024)
    assert holm(v)[0] == bonferroni(v)[0]


def test_holm_bounds():
    rng = np.random.default_rng(0)
    v = vector(rng.random(30).tolist())
    h = holm(v)
    b = bonferroni(v)
    assert np.all(b >= h)
    assert np.all(h >= v.pvalues)
    order = np.argsort(v.pvalues)
    assert np.all(np.diff(h[order]) >= 0)


def test_minp_adjust():
    perm = PermutationMatrix.from_rows(
        [[0.5, 0.2], [0.01, 0.3], [0.04, 0.04], [0.9, 0.8]], master_seed=0
    )
    adjusted = minp_adjust(vector([0.04, 0.5]), perm)
    # minima: 0.2, 0.01, 0.04, 0.8
    assert adjusted.tolist() == [3 / 5, 4 / 5]


def test_minp_single_permutation():
    perm = PermutationMatrix.from_rows([[0.2, 0.3]], master_seed=0)
    adjusted = minp_adjust(vector([0.1, 0.25]), perm)
    assert adjusted.tolist() == [0.5, 1.0]


def test_minp_monotone():
    rng = np.random.default_rng(6)
    for _ in range(200):
        m = int(rng.integers(1, 50))
        B = int(rng.integers(1, 100))
        pvalues = rng.random(m)
        pvalues[rng.random(m) < 0.2] = 1.0
        perm = PermutationMatrix.from_rows(rng.random((B, m)).tolist(), master_seed=0)
        adjusted = minp_adjust(vector(pvalues.tolist()), perm)
        order = np.argsort(pvalues, kind="stable")
        assert np.all(np.diff(adjusted[order]) >= 0)
        assert np.all(adjusted >= 1 / (B + 1))
        assert np.all(adjusted <= 1.0)


def test_minp_dimension_mismatch():
    perm = PermutationMatrix.from_rows([[0.2, 0.3, 0.4]], master_seed=0)
    with pytest.raises(AdjustmentException, match="dimension mismatch"):
        minp_adjust(vector([0.1, 0.2]), perm)


def test_permutation_matrix_validation():
    with pytest.raises(ValueError):
        PermutationMatrix(
            pvals=np.array([[0.1, 0.2]]), row_minima=np.array([0.2]), B=1, master_seed=0
        )
    with pytest.raises(ValueError):
        PermutationMatrix(
            pvals=np.array([[0.1, 0.2]]), row_minima=np.array([0.1]), B=2, master_seed=0
        )


def test_permute_outcomes():
    y = np.array([1, 1, 0, 0, 0, 1, 0])
    a = permute_outcomes(y, 1, 42)
    assert sorted(a.tolist()) == sorted(y.tolist())
    assert np.array_equal(a, permute_outcomes(y, 1, 42))
    assert any(
        not np.array_equal(permute_outcomes(y, b, 42), a) for b in range(2, 10)
    )


def test_permute_pvalues():
    table = generate(GenConfig(n_cases=40, seed=31))
    tree = SpecTree.default()
    one = permute_pvalues(table, tree, B=1, master_seed=3)
    assert np.asarray(one.pvals).shape == (1, 48)
    assert one.row_minima[0] == np.asarray(one.pvals).min()

    a = permute_pvalues(table, tree, B=6, master_seed=3)
    b = permute_pvalues(table, tree, B=6, master_seed=3, workers=3)
    assert np.array_equal(a.pvals, b.pvals)
    assert np.array_equal(np.asarray(a.pvals)[0], np.asarray(one.pvals)[0])


def test_permutation_row_is_run_on_shuffled_table():
    table = generate(GenConfig(n_cases=30, seed=32))
    perm = permute_pvalues(table, SMALL_TREE, B=2, master_seed=8)
    shuffled = table.with_outcomes(permute_outcomes(table.outcomes, 2, 8))
    v = run_all(shuffled, SMALL_TREE, seed=8)
    assert np.array_equal(np.asarray(perm.pvals)[1], v.pvalues)


def test_exhaustive_oracle():
    table = generate(GenConfig(n_cases=7, seed=33, missing_rate=0))
    raw = run_all(table, SMALL_TREE, seed=4)
    perm = exhaustive_permutations(table, SMALL_TREE, seed=4)
    k = int(table.outcomes.sum())
    assert perm.B == comb(7, k) - 1
    assert np.array_equal(minp_adjust(raw, perm), exact_minp(table, SMALL_TREE, seed=4))


def test_perfect_dependence_has_no_penalty():
    table = generate(GenConfig(n_cases=50, seed=34, missing_rate=0))
    single = SpecTree(axes=[("coding", ["CONTINUOUS"])])
    # Four specs that differ only in inert surrogate choices
    repeated = SpecTree(
        axes=[("surrogate", ["KNN", "LINREG"]), ("tuning", ["DEFAULT", "TUNED"])]
    )
    one = adjust_all(table, single, B=30, alpha=0.05, master_seed=5)
    many = adjust_all(table, repeated, B=30, alpha=0.05, master_seed=5)
    assert many.raw.m == 4
    assert many.minp == [one.minp[0]] * 4
    assert many.bonferroni[0] == min(4 * one.raw.pvalues[0], 1.0)


def test_adjust_all():
    table = generate(GenConfig(n_cases=60, seed=35, effect_size=2.0))
    report = adjust_all(table, SpecTree.default(), B=19, alpha=0.05, master_seed=6)
    raw = report.raw.pvalues
    minp = np.asarray(report.minp)
    assert report.raw.m == 48
    assert report.B == 19
    assert np.all(minp >= 1 / 20)
    assert np.all(minp <= 1.0)
    # Multiples of 1/(B+1)
    assert np.allclose(minp * 20, np.round(minp * 20))
    assert np.all(np.asarray(report.bonferroni) >= np.asarray(report.holm))
    assert np.all(np.asarray(report.holm) >= raw)
    i = report.argmin
    assert report.holm[i] == report.bonferroni[i]
    order = np.argsort(raw, kind="stable")
    assert np.all(np.diff(minp[order]) >= 0)
    assert report.rejected_minp == (minp < 0.05).tolist()

    again = adjust_all(
        table, SpecTree.default(), B=19, alpha=0.05, master_seed=6, workers=4
    )
    assert again == report


def test_report_files(tmp_path):
    table = generate(GenConfig(n_cases=40, seed=36))
    report = adjust_all(table, SMALL_TREE, B=9, alpha=0.1, master_seed=7)
    write_report_csv(report, tmp_path / "report.csv")
    write_report_json(report, tmp_path / "summary.json")

    lines = (tmp_path / "report.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == (
        "spec_id,missing,surrogate,tuning,aggregation,coding,"
        "p_raw,p_bonferroni,p_holm,p_minp,rejected_minp,converged,notes"
    )
    assert len(lines) == 5

    with open(tmp_path / "summary.json", encoding="utf-8") as f:
        summary = json.load(f)
    assert summary["m"] == 4
    assert summary["B"] == 9
    assert summary["seed"] == 7
    assert summary["alpha"] == 0.1
    assert summary["p_min"] == min(report.raw.pvalues)
    assert set(summary["winning_spec"]) == {
        "missing",
        "surrogate",
        "tuning",
        "aggregation",
        "coding",
    }
