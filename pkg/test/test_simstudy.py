import logging
import numpy as np
import pytest
from scipy.stats import norm
from rdof.datamodels import (
    FwerStudyConfig,
    GenConfig,
    MethodEnum,
    PowerStudyConfig,
    SpecTree,
    StudyEnum,
    StudyResult,
    StudyRow,
)
from rdof.dataset import generate
from rdof.simstudy import (
    StudyException,
    fwer_check,
    mean_ci,
    newcombe_ci,
    power_check,
    power_trend,
    run_fwer_study,
    run_power_study,
    write_study_csv,
)

SMALL_TREE = SpecTree(
    axes=[("aggregation", ["MEAN", "MEDIAN"]), ("coding", ["CONTINUOUS", "BINARY_200"])]
)


def row(method, n, estimate, low, high, alpha=0.05, study=StudyEnum.POWER) -> StudyRow:
    return StudyRow(
        study=study,
        method=method,
        n=n,
        alpha=alpha,
        estimate=estimate,
        ci_low=low,
        ci_high=high,
        runs=10,
        B=9,
        seed=0,
    )


def test_newcombe_known_values():
    low, high = newcombe_ci(5, 10)
    assert low == pytest.approx(0.2366, abs=1e-4)
    assert high == pytest.approx(0.7634, abs=1e-4)

    low, high = newcombe_ci(0, 10)
    assert low == 0.0
    assert high == pytest.approx(0.2775, abs=1e-4)

    low, high = newcombe_ci(10, 10)
    assert high == 1.0
    assert low == pytest.approx(0.7225, abs=1e-4)


def test_newcombe_z():
    # Half-width of the 1/2 interval in the large-n limit is z / (2 sqrt(n))
    n = 10**8
    low, high = newcombe_ci(n // 2, n)
    z = (high - low) * np.sqrt(n)
    assert z == pytest.approx(norm.ppf(0.975), abs=1e-6)
    assert z == pytest.approx(1.959964, abs=1e-5)


def test_newcombe_symmetric():
    for k in range(21):
        low, high = newcombe_ci(k, 20)
        mirror_low, mirror_high = newcombe_ci(20 - k, 20)
        assert low == pytest.approx(1 - mirror_high, abs=1e-12)
        assert high == pytest.approx(1 - mirror_low, abs=1e-12)


def test_newcombe_contains_estimate():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        trials = int(rng.integers(1, 2000))
        successes = int(rng.integers(0, trials + 1))
        low, high = newcombe_ci(successes, trials)
        assert 0.0 <= low <= successes / trials <= high <= 1.0
    narrow = newcombe_ci(50, 100, level=0.8)
    wide = newcombe_ci(50, 100, level=0.99)
    assert wide[0] < narrow[0] and narrow[1] < wide[1]


@pytest.mark.parametrize("successes,trials", [(1, 0), (-1, 5), (6, 5)])
def test_newcombe_invalid(successes, trials):
    with pytest.raises(StudyException):
        newcombe_ci(successes, trials)


def test_mean_ci():
    mean, low, high = mean_ci([0.2, 0.4, 0.6])
    assert mean == pytest.approx(0.4)
    assert low < mean < high
    assert mean_ci([0.3]) == (0.3, 0.3, 0.3)
    assert mean_ci([0.0, 0.0, 0.0]) == (0.0, 0.0, 0.0)


def test_fwer_study():
    config = FwerStudyConfig(
        sample_sizes=[40], runs=3, B=9, reference_size=300, master_seed=2
    )
    result = run_fwer_study(config, SMALL_TREE)
    assert result.study == StudyEnum.FWER
    assert len(result.rows) == 3
    assert [r.method for r in result.rows] == [
        MethodEnum.UNADJUSTED,
        MethodEnum.BONFERRONI,
        MethodEnum.MINP,
    ]
    for r in result.rows:
        assert r.ci_low <= r.estimate <= r.ci_high
        assert r.runs == 3
        assert r.B == 9
        assert r.estimate * 3 == round(r.estimate * 3)

    unadjusted = result.get(MethodEnum.UNADJUSTED, 40)
    bonferroni = result.get(MethodEnum.BONFERRONI, 40)
    assert unadjusted.estimate >= bonferroni.estimate
    # With B=9 the smallest adjusted value is 1/10, never below 0.05
    assert result.get(MethodEnum.MINP, 40).estimate == 0.0
    assert len(result.checks) == 1

    again = run_fwer_study(config, SMALL_TREE, workers=2)
    assert again == result


def test_fwer_study_with_holm_and_progress():
    config = FwerStudyConfig(
        sample_sizes=[30, 40], runs=2, B=4, reference_size=200, holm=True
    )
    ticks = []
    result = run_fwer_study(config, SMALL_TREE, progress=ticks.append)
    assert sum(ticks) == 4
    assert len(result.rows) == 8
    for n in (30, 40):
        holm = result.get(MethodEnum.HOLM, n).estimate
        assert result.get(MethodEnum.UNADJUSTED, n).estimate >= holm
        assert holm >= result.get(MethodEnum.BONFERRONI, n).estimate


def test_fwer_size_validation():
    config = FwerStudyConfig(sample_sizes=[400], runs=1, B=1, reference_size=300)
    with pytest.raises(StudyException, match="sample size"):
        run_fwer_study(config, SMALL_TREE)


def test_power_study():
    config = PowerStudyConfig(
        sample_sizes=[30, 40], alphas=[0.05, 0.2], runs=2, B=9, master_seed=4, holm=True
    )
    result = run_power_study(config, SMALL_TREE)
    assert result.study == StudyEnum.POWER
    assert len(result.rows) == 2 * 2 * 4
    assert len(result.checks) == 4
    for n in (30, 40):
        for a in (0.05, 0.2):
            unadjusted = result.get(MethodEnum.UNADJUSTED, n, a).estimate
            holm = result.get(MethodEnum.HOLM, n, a).estimate
            bonferroni = result.get(MethodEnum.BONFERRONI, n, a).estimate
            assert unadjusted >= holm >= bonferroni
            assert 0.0 <= result.get(MethodEnum.MINP, n, a).estimate <= 1.0
    assert result.get(MethodEnum.MINP, 30, 0.05).estimate == 0.0

    again = run_power_study(config, SMALL_TREE, workers=3)
    assert again == result


def test_power_study_on_reference():
    reference = generate(GenConfig(n_cases=80, seed=5, effect_size=2.0))
    config = PowerStudyConfig(sample_sizes=[40], alphas=[0.1], runs=2, B=4)
    result = run_power_study(config, SMALL_TREE, reference=reference)
    assert len(result.rows) == 3

    config = PowerStudyConfig(sample_sizes=[100], alphas=[0.1], runs=1, B=1)
    with pytest.raises(StudyException, match="exceed"):
        run_power_study(config, SMALL_TREE, reference=reference)


def test_ordering_checks(caplog):
    caplog.set_level(logging.WARNING)
    ok = fwer_check(
        100,
        0.05,
        {
            MethodEnum.UNADJUSTED: 0.6,
            MethodEnum.BONFERRONI: 0.02,
            MethodEnum.MINP: 0.05,
        },
    )
    assert ok.holds and ok.strict
    assert ok.values == {"unadjusted": 0.6, "bonferroni": 0.02, "minp": 0.05}
    assert caplog.text == ""

    tied = power_check(
        100,
        0.05,
        {
            MethodEnum.UNADJUSTED: 0.4,
            MethodEnum.BONFERRONI: 0.1,
            MethodEnum.MINP: 0.1,
        },
    )
    assert tied.holds and not tied.strict

    bad = power_check(
        100,
        0.05,
        {
            MethodEnum.UNADJUSTED: 0.4,
            MethodEnum.BONFERRONI: 0.2,
            MethodEnum.MINP: 0.1,
        },
    )
    assert not bad.holds
    assert "expected unadjusted >= minp >= bonferroni" in caplog.text


def test_power_trend(caplog):
    caplog.set_level(logging.WARNING)
    result = StudyResult(
        study=StudyEnum.POWER,
        rows=[
            row(MethodEnum.UNADJUSTED, 200, 0.2, 0.15, 0.25),
            row(MethodEnum.UNADJUSTED, 50, 0.3, 0.25, 0.35),
            row(MethodEnum.UNADJUSTED, 100, 0.5, 0.45, 0.55),
            row(MethodEnum.UNADJUSTED, 300, 0.19, 0.14, 0.24),
            row(MethodEnum.BONFERRONI, 50, 0.1, 0.05, 0.15),
        ],
    )
    checks = power_trend(result)
    assert [(c.n_from, c.n_to) for c in checks] == [(50, 100), (100, 200), (200, 300)]
    assert [c.holds for c in checks] == [True, False, True]
    assert checks[1].delta == pytest.approx(-0.3)
    assert "drops from n=100 to n=200" in caplog.text


def test_write_study_csv(tmp_path):
    result = StudyResult(
        study=StudyEnum.FWER,
        rows=[
            row(MethodEnum.MINP, 300, 0.05, 0.03, 0.08, study=StudyEnum.FWER),
            row(MethodEnum.UNADJUSTED, 300, 0.5, 0.4, 0.6, study=StudyEnum.FWER),
            row(MethodEnum.BONFERRONI, 100, 0.0, 0.0, 0.02, study=StudyEnum.FWER),
        ],
    )
    path = tmp_path / "fwer.csv"
    write_study_csv(result, path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "study,method,n,alpha,estimate,ci_low,ci_high,runs,B,seed"
    assert lines[1] == "fwer,bonferroni,100,0.05,0.0,0.0,0.02,10,9,0"
    assert [line.split(",")[1] for line in lines[1:]] == [
        "bonferroni",
        "unadjusted",
        "minp",
    ]


@pytest.mark.slow
def test_fwer_acceptance():
    config = FwerStudyConfig(sample_sizes=[100, 300], runs=200, B=200)
    result = run_fwer_study(config, SpecTree.default(), workers=4)
    for n in (100, 300):
        unadjusted = result.get(MethodEnum.UNADJUSTED, n).estimate
        minp = result.get(MethodEnum.MINP, n).estimate
        bonferroni = result.get(MethodEnum.BONFERRONI, n).estimate
        assert unadjusted >= 0.5
        assert minp <= 0.081
        assert bonferroni <= minp


@pytest.mark.slow
def test_power_acceptance():
    config = PowerStudyConfig(sample_sizes=[100], runs=200, B=200)
    result = run_power_study(config, SpecTree.default(), workers=4)
    assert 0.2 <= result.get(MethodEnum.UNADJUSTED, 100, 0.05).estimate <= 0.8
    assert len(result.checks) == 3
    assert all(c.holds for c in result.checks)
    assert sum(c.strict for c in result.checks) >= 2
