import numpy as np
import pytest

from seqident import checks
from seqident.model import ProblemConfig


def fig1(**kw):
    return ProblemConfig.gaussian(0.5, 1, 6, 5, 1e-3, 1e-3, num_sources=10, **kw)


def test_fig1_sweep_passes():
    res = checks.sweep_allocations(fig1())
    assert res.checks == 847 and res.ok


def test_random_sweep_passes():
    res = checks.sweep_random(60, seed=3)
    assert res.ok, res.failures


@pytest.mark.parametrize("suite", [checks.reduction_homogeneous, checks.reduction_single_sample])
def test_reductions_pass(suite):
    res = suite(states=2000, seed=1)
    assert res.checks == 2000 and res.ok, res.failures


def test_reduction_detects_wrong_rule():
    configs = checks.homogeneous_configs(np.random.default_rng(0), count=4)
    wrong = lambda llr, cfg: frozenset({0})  # noqa: E731
    res = checks._reduction("wrong", configs, wrong, 50, 0)
    assert not res.ok and res.failure_count > 0
    assert len(res.failures) <= checks.MAX_EXAMPLES


def test_homogeneous_configs_cover_both_branches():
    configs = checks.homogeneous_configs(np.random.default_rng(2), count=10)
    branches = {(c.num_sources - c.lower_bound) * c.sources[0].kl_alt_null
                >= c.sources[0].kl_null_alt * c.lower_bound for c in configs}
    assert branches == {True, False}


def test_explicit_homogeneous_rule_cases():
    # K <= l on the first branch: the K smallest LLRs among the top l
    cfg = ProblemConfig.gaussian(0.5, 3, 3, 2, 1e-3, 1e-3, num_sources=6)
    llr = np.array([5.0, 4.0, 3.0, 2.0, 1.0, 0.0])
    assert checks.homogeneous_known_rule(llr, cfg) == frozenset({1, 2})
    # K > l: all of the estimate plus the K - l largest outside it
    cfg = ProblemConfig.gaussian(0.5, 3, 3, 4, 1e-3, 1e-3, num_sources=6)
    assert checks.homogeneous_known_rule(llr, cfg) == frozenset({0, 1, 2, 3})


def test_bad_override_reported():
    a = frozenset({0, 1, 2})
    cfg = fig1(budget_overrides=((a, 6.0, 0.0),))
    suites = checks.run_all(cfg, random_configs=2, states=20)
    bad = [s for s in suites if not s.ok]
    assert [s.name for s in bad] == ["budget overrides"]
    assert "exceeds K" in bad[0].failures[0]["violation"]


def test_two_level_table():
    res = checks.two_level_table(budgets=8)
    assert res.ok
    assert all(row["match"] for row in res.table)
    # the middle branch (only the slow half sampled continuously) occurs
    assert any(row["g_hat"] == [1, 2, 3, 4, 5] and row["size"] > 5 for row in res.table)


def test_violation_messages_for_tampered_allocation(monkeypatch):
    cfg = fig1()
    real = checks.allocation

    def tampered(config, subset):
        al = real(config, subset)
        import dataclasses

        return dataclasses.replace(al, x=1.5)

    monkeypatch.setattr(checks, "allocation", tampered)
    msgs = checks.allocation_violations(cfg, frozenset({0, 1, 2}))
    assert msgs
