"""Property suites behind ``seqident verify``.

Each suite returns a :class:`SuiteResult` carrying the number of checks run
and the first few counterexamples.  The same functions back the test suite.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .allocation import (
    TOL,
    admissible_subsets,
    allocation,
    k_check,
    k_hat,
    select_g_sets,
)
from .model import ConfigurationError, Gaussian, ProblemConfig, SourceModel
from .rules import TrialState, decide, order_sources, ordering_step

SUM_TOL = 1e-10
MAX_EXAMPLES = 5


@dataclass
class SuiteResult:
    name: str
    checks: int = 0
    failures: list = field(default_factory=list)
    failure_count: int = 0
    table: list | None = None

    @property
    def ok(self) -> bool:
        return self.failure_count == 0

    def fail(self, example: dict) -> None:
        self.failure_count += 1
        if len(self.failures) < MAX_EXAMPLES:
            self.failures.append(example)


def _label(subset) -> list[int]:
    return sorted(i + 1 for i in subset)


def describe(config: ProblemConfig) -> dict:
    return {
        "M": config.num_sources, "l": config.lower_bound, "u": config.upper_bound, "K": config.budget,
        "alpha": config.alpha, "beta": config.beta,
        "I": [round(float(v), 12) for v in config.kl_alt],
        "J": [round(float(v), 12) for v in config.kl_null],
    }


# --------------------------------------------------------------------------
# allocation properties
# --------------------------------------------------------------------------

def allocation_violations(config: ProblemConfig, subset: frozenset) -> list[str]:
    """Names (with values) of every allocation property violated at ``subset``."""
    out = []
    al = allocation(config, subset)
    x, y = al.x, al.y
    size, M = len(subset), config.num_sources
    lo, up = config.lower_bound, config.upper_bound
    kh, kc = al.kl.k_hat, al.kl.k_check
    if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
        out.append(f"x, y in [0, 1] (x={x}, y={y})")
    if not x + y > 0:
        out.append("x + y > 0")
    if lo < size < up and not (x > 0 and y > 0):
        out.append(f"interior subset needs x, y > 0 (x={x}, y={y})")
    if x == 0 and not (size == lo and y > 0):
        out.append("x = 0 requires |A| = l and y > 0")
    if y == 0 and not (size == up and x > 0):
        out.append("y = 0 requires |A| = u and x > 0")
    if x * kh + y * kc > config.budget + TOL:
        out.append(f"x K_hat + y K_check <= K ({x * kh + y * kc} > {config.budget})")
    c = np.asarray(al.c_star)
    inside = np.array([i in subset for i in range(M)])
    if np.any(c < -TOL) or np.any(c > 1 + TOL):
        out.append("c* in [0, 1]")
    if abs(c[inside].sum() - x * kh) > SUM_TOL:
        out.append(f"sum of c* over A equals x K_hat (diff {c[inside].sum() - x * kh:.3g})")
    if abs(c[~inside].sum() - y * kc) > SUM_TOL:
        out.append(f"sum of c* over A^c equals y K_check (diff {c[~inside].sum() - y * kc:.3g})")
    nh, nc = al.n_hat, al.n_check
    if nh + nc > config.budget + TOL or nh < x * kh - TOL or nc < y * kc - TOL:
        out.append("default budgets satisfy the budget system")
    # the c* = 1 characterisation only applies to the default budgets
    default = config.override_for(subset) is None
    out.extend(_g_violations("G_hat", subset, al.g_hat, nh, config.kl_alt,
                             lambda rest: k_hat(config, rest), c, x if default else None))
    complement = frozenset(range(M)) - subset
    out.extend(_g_violations("G_check", complement, al.g_check, nc, config.kl_null,
                             lambda rest: k_check(config, frozenset(range(M)) - rest), c,
                             y if default else None))
    return out


def _g_violations(name: str, side: frozenset, g: frozenset, budget: float, kl: np.ndarray,
                  effort: Callable, c: np.ndarray, frac: float | None) -> list[str]:
    """Well-definedness and design conditions of one continuously sampled set.

    ``effort(S)`` is the effective effort of the side restricted to ``S``.
    """
    out = []
    if not g <= side:
        return [f"{name} is not contained in its side"]
    ranked = sorted(side, key=lambda i: (kl[i], i))
    n = len(side)
    full = abs(budget - n) <= TOL
    if full:
        if g != side:
            out.append(f"{name} must be the whole side when the budget equals its size")
        return out
    if budget < effort(side) - TOL:
        if g:
            out.append(f"{name} must be empty when the budget is below the side effort")
    else:
        k = len(g)
        if not 1 <= k <= n - 1:
            out.append(f"{name} size {k} outside 1..{n - 1}")
            return out
        if g != frozenset(ranked[:k]):
            out.append(f"{name} is not the {k} smallest-KL sources")
        if k > math.floor(budget + TOL):
            out.append(f"|{name}| = {k} exceeds floor(budget) = {math.floor(budget)}")
        if not budget - k < effort(frozenset(ranked[k:])) + TOL:
            out.append(f"{name} witness condition fails at {k}")
        for j in range(1, k):
            if budget - j < effort(frozenset(ranked[j:])) - TOL:
                out.append(f"{name} is not minimal (size {j} already qualifies)")
                break
    # leftover budget covers the critical frequencies of the free sources
    free = [i for i in side if i not in g]
    if budget - len(g) < c[free].sum() - TOL:
        out.append(f"{name}: budget - |{name}| below the free sources' critical frequencies")
    # with the whole effort allocated, G is exactly the set of sources with c* = 1
    if frac == 1.0 and side and g != frozenset(i for i in side if abs(c[i] - 1.0) <= 1e-12):
        out.append(f"{name} differs from {{i : c*_i = 1}} although the side fraction is 1")
    return out


def sweep_allocations(config: ProblemConfig, result: SuiteResult | None = None) -> SuiteResult:
    """All allocation properties over every admissible subset."""
    res = result or SuiteResult("allocation sweep")
    xy0 = None
    homogeneous_known = (config.known_count and np.ptp(config.kl_alt) == 0 and np.ptp(config.kl_null) == 0)
    for a in admissible_subsets(config):
        res.checks += 1
        try:
            bad = allocation_violations(config, a)
        except (ConfigurationError, AssertionError) as exc:
            bad = [f"{type(exc).__name__}: {exc}"]
        if homogeneous_known:
            al = allocation(config, a)
            if xy0 is None:
                xy0 = (al.x, al.y)
            elif abs(al.x - xy0[0]) > TOL or abs(al.y - xy0[1]) > TOL:
                bad.append("(x, y) must not depend on A when l = u in a homogeneous setup")
        if bad:
            res.fail({"config": describe(config), "A": _label(a), "violations": bad})
    return res


def random_config(rng: np.random.Generator, max_sources: int = 8) -> ProblemConfig:
    """Random heterogeneous Gaussian configuration; variances differ so that I != J in general."""
    M = int(rng.integers(2, max_sources + 1))
    lo = int(rng.integers(0, M))
    up = int(rng.integers(max(lo, 1), M + 1))
    K = float(rng.uniform(0.05, M)) if rng.random() < 0.8 else float(rng.integers(1, M + 1))
    alpha, beta = (float(10 ** rng.uniform(-6, -1)) for _ in range(2))
    if rng.random() < 0.3:
        beta = alpha
    srcs = []
    for i in range(M):
        mu = float(rng.uniform(0.2, 2.0))
        var1 = 1.0 if rng.random() < 0.5 else float(rng.uniform(0.5, 2.0))
        srcs.append(SourceModel(i, Gaussian(0.0, 1.0), Gaussian(mu, var1)))
    return ProblemConfig(M, lo, up, K, alpha, beta, tuple(srcs))


def sweep_random(count: int, seed: int) -> SuiteResult:
    res = SuiteResult("random heterogeneous configs")
    rng = np.random.default_rng(seed)
    for _ in range(count):
        sweep_allocations(random_config(rng), res)
    return res


# --------------------------------------------------------------------------
# special-case reductions
# --------------------------------------------------------------------------

def homogeneous_known_rule(llr: np.ndarray, config: ProblemConfig) -> frozenset:
    """Explicit rule for a homogeneous setup with l = u and an integer budget."""
    M, lo, K = config.num_sources, config.lower_bound, int(round(config.budget))
    I, J = config.sources[0].kl_alt_null, config.sources[0].kl_null_alt
    w = order_sources(llr)  # w[0] is the largest LLR
    if (M - lo) * I >= J * lo:
        ranks = range(lo - K + 1, lo + 1) if K <= lo else range(1, K + 1)
    else:
        ranks = range(lo + 1, lo + K + 1) if K <= M - lo else range(M - K + 1, M + 1)
    return frozenset(w[k - 1] for k in ranks)


def single_sample_rule(llr: np.ndarray, config: ProblemConfig) -> frozenset:
    """Explicit rule for l = u and K = 1 in a general setup."""
    lo = config.lower_bound
    d = decide(llr, config)
    a = config.kl_alt[sorted(d)]
    b = config.kl_null[[i for i in range(config.num_sources) if i not in d]]
    i_star, j_star = a.min(), b.min()
    kh, kc = float(np.sum(i_star / a)), float(np.sum(j_star / b))
    w = order_sources(llr)
    return frozenset({w[lo - 1] if kh * j_star <= kc * i_star else w[lo]})


def _random_state(rng: np.random.Generator, M: int) -> np.ndarray:
    kind = rng.random()
    if kind < 0.6:
        return rng.normal(0.0, 5.0, M)
    if kind < 0.9:
        # coarse values produce ties
        return rng.integers(-2, 3, M).astype(float)
    return np.zeros(M)


def _reduction(name: str, configs: list[ProblemConfig], explicit: Callable, states: int,
               seed: int) -> SuiteResult:
    res = SuiteResult(name)
    rng = np.random.default_rng(seed)
    for k in range(states):
        config = configs[k % len(configs)]
        llr = _random_state(rng, config.num_sources)
        state = TrialState(llr, np.zeros(config.num_sources, dtype=np.int64), decide(llr, config))
        z = tuple(rng.random(2))
        got = ordering_step(state, allocation(config, state.estimate), draws=z).sampled
        want = explicit(llr, config)
        res.checks += 1
        if got != want:
            res.fail({"config": describe(config), "llr": llr.tolist(), "ordering": _label(got),
                      "explicit": _label(want)})
    return res


def homogeneous_configs(rng: np.random.Generator, count: int = 40) -> list[ProblemConfig]:
    """Homogeneous l = u configurations with integer K, covering both KL branches."""
    out = []
    while len(out) < count:
        M = int(rng.integers(2, 11))
        lo = int(rng.integers(1, M))
        K = int(rng.integers(1, M + 1))
        mu = float(rng.uniform(0.3, 2.0))
        var1 = 1.0 if rng.random() < 0.3 else float(rng.uniform(0.3, 3.0))
        src = [SourceModel(i, Gaussian(0.0, 1.0), Gaussian(mu, var1)) for i in range(M)]
        I, J = src[0].kl_alt_null, src[0].kl_null_alt
        # alternate branches so both are covered
        branch = (M - lo) * I >= J * lo
        if branch != (len(out) % 2 == 0):
            continue
        alpha = float(10 ** rng.uniform(-6, -1))
        out.append(ProblemConfig(M, lo, lo, float(K), alpha, alpha, tuple(src)))
    return out


def single_sample_configs(rng: np.random.Generator, count: int = 40) -> list[ProblemConfig]:
    out = []
    for _ in range(count):
        M = int(rng.integers(2, 11))
        lo = int(rng.integers(1, M))
        srcs = [SourceModel(i, Gaussian(0.0, 1.0),
                            Gaussian(float(rng.uniform(0.2, 2.0)),
                                     1.0 if rng.random() < 0.5 else float(rng.uniform(0.3, 3.0))))
                for i in range(M)]
        alpha, beta = (float(10 ** rng.uniform(-6, -1)) for _ in range(2))
        out.append(ProblemConfig(M, lo, lo, 1.0, alpha, beta, tuple(srcs)))
    return out


def reduction_homogeneous(states: int = 10_000, seed: int = 0) -> SuiteResult:
    configs = homogeneous_configs(np.random.default_rng([seed, 1]))
    return _reduction("reduction: homogeneous, known count", configs, homogeneous_known_rule, states, seed)


def reduction_single_sample(states: int = 10_000, seed: int = 0) -> SuiteResult:
    configs = single_sample_configs(np.random.default_rng([seed, 2]))
    return _reduction("reduction: known count, K = 1", configs, single_sample_rule, states, seed + 1)


# --------------------------------------------------------------------------
# two-level example (first half I, second half I/phi, I_i = J_i)
# --------------------------------------------------------------------------

def two_level_config(M: int, phi: float, lower: int, upper: int, budget: float, alpha: float = 1e-3,
                     mu: float = 0.5) -> ProblemConfig:
    """Mean-shift sources with variance 1 (first half) and ``phi`` (second half)."""
    srcs = tuple(SourceModel(i, Gaussian(0.0, 1.0 if i < M // 2 else phi),
                             Gaussian(mu, 1.0 if i < M // 2 else phi)) for i in range(M))
    return ProblemConfig(M, lower, upper, budget, alpha, alpha, srcs)


def two_level_g_sets(M: int, size: int, phi: float, n_hat: float, n_check: float) -> tuple[frozenset, frozenset]:
    """Closed-form G sets for ``A = {first size sources}`` in the two-level setup."""
    h = M // 2
    rest = M - size
    if abs(n_hat - size) <= TOL:
        g_hat = frozenset(range(size))
    elif n_hat < min(h, size) + max(size - h, 0) * phi - TOL:
        g_hat = frozenset()
    else:
        g_hat = frozenset(range(h))
    if abs(n_check - rest) <= TOL:
        g_check = frozenset(range(size, M))
    elif n_check < min(h, rest) + ((phi * h - size) if size < h else 0.0) - TOL:
        g_check = frozenset()
    else:
        g_check = frozenset(range(size, h))
    return g_hat, g_check


def two_level_table(M: int = 10, phis: Iterable[float] = (0.25, 0.5, 0.8, 1.0), budgets: int = 25,
                    lower: int = 1, upper: int = 9) -> SuiteResult:
    """Compare computed G sets with the closed form over prefix subsets and a budget grid."""
    res = SuiteResult("two-level G-set table", table=[])
    for phi in phis:
        config = two_level_config(M, phi, lower, upper, float(M))
        for size in range(lower, upper + 1):
            a = frozenset(range(size))
            kh, kc = k_hat(config, a), k_check(config, a)
            grid_h = np.unique(np.concatenate([np.linspace(max(kh - 0.5, 0), size, budgets), [kh, size]]))
            grid_c = np.unique(np.concatenate([np.linspace(max(kc - 0.5, 0), M - size, budgets), [kc, M - size]]))
            for nh, nc in zip(grid_h, grid_c[: len(grid_h)]):
                got = select_g_sets(config, a, (float(nh), float(nc)))
                want = two_level_g_sets(M, size, phi, float(nh), float(nc))
                res.checks += 1
                res.table.append({"phi": phi, "size": size, "n_hat": float(nh), "n_check": float(nc),
                                  "g_hat": _label(got[0]), "g_check": _label(got[1]),
                                  "match": got == want})
                if got != want:
                    res.fail({"phi": phi, "A": _label(a), "n_hat": float(nh), "n_check": float(nc),
                              "computed": [_label(got[0]), _label(got[1])],
                              "closed_form": [_label(want[0]), _label(want[1])]})
    return res


# --------------------------------------------------------------------------
# budget overrides
# --------------------------------------------------------------------------

def check_overrides(config: ProblemConfig) -> SuiteResult:
    """Every configured override must satisfy the budget system."""
    res = SuiteResult("budget overrides")
    for a, nh, nc in config.budget_overrides:
        res.checks += 1
        try:
            allocation(config, a)
        except ConfigurationError as exc:
            res.fail({"A": _label(a), "n_hat": nh, "n_check": nc, "violation": str(exc)})
    return res


def run_all(config: ProblemConfig, random_configs: int = 500, states: int = 10_000,
            seed: int = 0) -> list[SuiteResult]:
    overrides = check_overrides(config)
    results = [overrides]
    if overrides.ok:
        # a rejected override would make every allocation of its subset fail
        results.append(sweep_allocations(config, SuiteResult("allocation sweep")))
    results += [
        sweep_random(random_configs, seed),
        reduction_homogeneous(states, seed),
        reduction_single_sample(states, seed),
        two_level_table(),
    ]
    return results
