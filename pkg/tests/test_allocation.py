import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqident.allocation import (
    AllocationDomainError,
    admissible_subsets,
    allocation,
    compute_c_star,
    compute_xy,
    k_check,
    k_hat,
    kl_summary,
    limit_frequencies,
    select_budgets,
    select_g_sets,
)
from seqident.checks import allocation_violations, random_config, two_level_config
from seqident.model import ConfigurationError, ProblemConfig


def fig1(budget=5.0, lo=1, up=6, **kw):
    return ProblemConfig.gaussian(0.5, lo, up, budget, 1e-3, 1e-3, num_sources=10, **kw)


def test_kl_summary_homogeneous():
    s = kl_summary(fig1(), {0, 1, 2})
    assert s.i_star == s.i_tilde == 0.125
    assert s.j_star == s.j_tilde == 0.125
    assert s.k_hat == pytest.approx(3.0) and s.k_check == pytest.approx(7.0)
    assert s.theta == 1.0


def test_empty_side_conventions():
    cfg = fig1(lo=0, up=10)
    assert k_hat(cfg, set()) == 0.0
    assert k_check(cfg, range(10)) == 0.0


def test_k_hat_slow_half_of_split_setup():
    cfg = ProblemConfig.gaussian([0.5] * 5 + [1.0] * 5, 1, 9, 5, 1e-3, 1e-3)
    s = kl_summary(cfg, range(5))
    assert s.i_star == s.i_tilde == 0.125
    assert s.k_hat == pytest.approx(5.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_k_hat_two_forms_agree(seed):
    cfg = random_config(np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 1)
    a = {i for i in range(cfg.num_sources) if rng.random() < 0.5}
    s = kl_summary(cfg, a)
    I, J = cfg.kl_alt, cfg.kl_null
    inside = sorted(a)
    outside = [i for i in range(cfg.num_sources) if i not in a]
    if inside:
        assert s.k_hat == pytest.approx(len(inside) * s.i_star / s.i_tilde, abs=1e-12)
        assert s.k_hat == pytest.approx(sum(s.i_star / I[i] for i in inside), abs=1e-12)
        assert s.k_hat <= len(inside) + 1e-12
    if outside:
        assert s.k_check == pytest.approx(len(outside) * s.j_star / s.j_tilde, abs=1e-12)
        assert s.k_check <= len(outside) + 1e-12


def test_known_count_homogeneous_example():
    cfg = fig1(lo=5, up=5)
    for a in [range(5), range(5, 10), (0, 2, 4, 6, 8)]:
        al = allocation(cfg, a)
        assert (al.x, al.y) == (1.0, 0.0)
        assert al.c_star == tuple(1.0 if i in al.subset else 0.0 for i in range(10))
        assert (al.n_hat, al.n_check) == (5.0, 0.0)


def test_empty_subset_allocates_complement_only():
    cfg = fig1(lo=0, up=6)
    x, y = compute_xy(cfg, set())
    assert x == 0.0
    assert y == pytest.approx(min(5.0 / 10.0, 1.0))


def test_interior_example():
    cfg = fig1()
    al = allocation(cfg, {0, 1, 2})
    assert (al.x, al.y) == pytest.approx((0.5, 0.5))
    assert al.c_star == pytest.approx((0.5,) * 10)
    assert (al.n_hat, al.n_check) == pytest.approx((1.5, 3.5))
    assert al.n_hat + al.n_check == pytest.approx(5.0)


def test_subset_outside_family_rejected():
    with pytest.raises(AllocationDomainError):
        compute_xy(fig1(), range(7))
    with pytest.raises(AllocationDomainError):
        allocation(fig1(), [])
    with pytest.raises(AllocationDomainError):
        allocation(fig1(), [10])


def slack_config(**kw):
    # large K: the default budgets leave part of K unassigned
    return ProblemConfig.gaussian([0.5, 0.7, 1.0, 0.4, 0.9, 1.2], 1, 5, 6.0, 1e-3, 1e-3, **kw)


SLACK_A = frozenset({0, 2, 4})


@pytest.mark.parametrize(
    "make, fragment",
    [
        (lambda kh, kc: (3.0, 3.1), "exceeds K"),
        (lambda kh, kc: (kh - 0.1, kc), "below x\\(A\\)"),
        (lambda kh, kc: (kh, kc - 0.1), "below y\\(A\\)"),
        (lambda kh, kc: (3.5, kc), "outside \\[0, \\|A\\|\\]"),
    ],
)
def test_bad_override_names_inequality(make, fragment):
    cfg = slack_config()
    x, y = compute_xy(cfg, SLACK_A)
    override = make(x * k_hat(cfg, SLACK_A), y * k_check(cfg, SLACK_A))
    with pytest.raises(ConfigurationError, match=fragment):
        select_budgets(cfg, SLACK_A, override)


def test_override_above_budget_rejected():
    with pytest.raises(ConfigurationError, match="exceeds K"):
        select_budgets(fig1(), {0, 1, 2}, (6.0, 0.0))


def test_valid_override_used_by_allocation():
    probe = slack_config()
    x, y = compute_xy(probe, SLACK_A)
    kc = y * k_check(probe, SLACK_A)
    assert 3.0 + kc <= 6.0
    cfg = slack_config(budget_overrides=((SLACK_A, 3.0, kc),))
    al = allocation(cfg, SLACK_A)
    assert (al.n_hat, al.n_check) == (3.0, pytest.approx(kc))
    assert al.g_hat == SLACK_A
    # other subsets keep the default construction
    assert allocation(cfg, {0, 1}).n_hat == pytest.approx(compute_xy(cfg, {0, 1})[0] * k_hat(cfg, {0, 1}))


def test_g_sets_homogeneous_branches():
    cfg = fig1()
    a = {0, 1, 2}
    assert select_g_sets(cfg, a, (2.9, 2.0)) == (frozenset(), frozenset())
    g_hat, g_check = select_g_sets(cfg, a, (3.0, 7.0))
    assert g_hat == frozenset(a) and g_check == frozenset(range(3, 10))


def test_g_sets_two_level_middle_branch():
    # first five sources are the slow ones (smallest I); A holds all of them plus two fast ones
    cfg = two_level_config(10, 0.5, 1, 9, 10.0)
    a = range(7)
    # efforts: all of A = 5 + 2 * 0.5 = 6; the budget sits between 6 and |A| = 7
    assert select_g_sets(cfg, a, (6.5, 0.0))[0] == frozenset(range(5))
    assert select_g_sets(cfg, a, (5.5, 0.0))[0] == frozenset()
    assert select_g_sets(cfg, a, (7.0, 0.0))[0] == frozenset(range(7))


def test_family_enumeration_size():
    subsets = list(admissible_subsets(fig1()))
    assert len(subsets) == 847 == sum(math.comb(10, m) for m in range(1, 7))
    assert len(set(subsets)) == 847


def test_every_fig1_subset_satisfies_invariants():
    cfg = fig1()
    for a in admissible_subsets(cfg):
        assert allocation_violations(cfg, a) == []


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_configs_satisfy_invariants(seed):
    cfg = random_config(np.random.default_rng(seed))
    for m in range(cfg.lower_bound, cfg.upper_bound + 1):
        for a in list(combinations(range(cfg.num_sources), m))[:6]:
            al = allocation(cfg, a)
            assert allocation_violations(cfg, al.subset) == []
            # identities checked directly here as well
            c = np.array(al.c_star)
            inside = list(al.subset)
            outside = [i for i in range(cfg.num_sources) if i not in al.subset]
            assert c[inside].sum() == pytest.approx(al.x * al.kl.k_hat, abs=1e-10)
            assert c[outside].sum() == pytest.approx(al.y * al.kl.k_check, abs=1e-10)
            assert al.x * al.kl.k_hat + al.y * al.kl.k_check <= cfg.budget + 1e-9
            assert al.n_hat + al.n_check <= cfg.budget + 1e-9


@pytest.mark.parametrize("lo", [2, 4, 6])
def test_homogeneous_known_count_invariance(lo):
    cfg = fig1(lo=lo, up=lo, budget=3.0)
    xy = {compute_xy(cfg, a) for a in combinations(range(10), lo)}
    assert len(xy) == 1


def test_c_star_matches_equalised_information():
    cfg = ProblemConfig.gaussian([0.5, 0.7, 1.0, 0.4, 0.9, 1.2], 1, 5, 2.5, 1e-3, 1e-3)
    a = {0, 2, 4}
    c = compute_c_star(cfg, a)
    I, J = cfg.kl_alt, cfg.kl_null
    x, y = compute_xy(cfg, a)
    assert c[0] * I[0] == pytest.approx(c[2] * I[2]) == pytest.approx(x * min(I[[0, 2, 4]]))
    assert c[1] * J[1] == pytest.approx(c[3] * J[3]) == pytest.approx(y * min(J[[1, 3, 5]]))


def test_limit_frequencies():
    cfg = ProblemConfig.gaussian([0.5, 0.7, 1.0, 0.4, 0.9, 1.2], 1, 5, 2.5, 1e-3, 1e-3)
    al = allocation(cfg, {0, 2, 4})
    c = limit_frequencies(cfg, al)
    for g in (al.g_hat, al.g_check):
        assert all(c[i] == 1.0 for i in g)
    free = [i for i in al.subset if i not in al.g_hat]
    assert c[free].sum() == pytest.approx(al.n_hat - len(al.g_hat))
    prod = c[free] * cfg.kl_alt[free]
    assert np.ptp(prod) == pytest.approx(0.0, abs=1e-12)


def test_allocation_is_cached():
    cfg = fig1()
    assert allocation(cfg, {0, 1}) is allocation(cfg, [1, 0])
