"""Static allocation quantities for a candidate anomalous subset.

Everything here is a pure function of ``(config, subset)``:
effective efforts ``K_hat``/``K_check``, the side fractions ``x``/``y``,
critical frequencies ``c*``, the stationary budgets ``N_hat``/``N_check``
and the continuously sampled sets ``G_hat``/``G_check``.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .model import ConfigurationError, ProblemConfig

TOL = 1e-9


class AllocationDomainError(ValueError):
    """Subset outside the admissible family."""


@dataclass(frozen=True)
class KlSummary:
    i_star: float
    i_tilde: float
    j_star: float
    j_tilde: float
    k_hat: float
    k_check: float
    theta: float


@dataclass(frozen=True)
class AllocationResult:
    subset: frozenset
    x: float
    y: float
    c_star: tuple[float, ...]
    n_hat: float
    n_check: float
    g_hat: frozenset
    g_check: frozenset
    kl: KlSummary


def _effort(values: np.ndarray) -> float:
    """``sum(min/v)``; equals ``|S| * min / harmonic_mean``."""
    if values.size == 0:
        return 0.0
    return float(np.sum(values.min() / values))


def _harmonic(values: np.ndarray) -> float:
    if values.size == 0:
        return math.inf
    return values.size / float(np.sum(1.0 / values))


def _check_subset(config: ProblemConfig, subset: Iterable[int]) -> frozenset:
    a = frozenset(int(i) for i in subset)
    if any(not 0 <= i < config.num_sources for i in a):
        raise AllocationDomainError(f"subset {sorted(a)} has indices outside [0, {config.num_sources})")
    return a


def _side_arrays(config: ProblemConfig, a: frozenset) -> tuple[np.ndarray, np.ndarray]:
    inside = np.array(sorted(a), dtype=int)
    outside = np.array([i for i in range(config.num_sources) if i not in a], dtype=int)
    return config.kl_alt[inside], config.kl_null[outside]


def kl_summary(config: ProblemConfig, subset: Iterable[int]) -> KlSummary:
    a = _check_subset(config, subset)
    i_vals, j_vals = _side_arrays(config, a)
    i_star = float(i_vals.min()) if i_vals.size else math.inf
    j_star = float(j_vals.min()) if j_vals.size else math.inf
    if math.isinf(i_star) and math.isinf(j_star):
        theta = math.nan
    elif math.isinf(j_star):
        theta = 0.0
    else:
        theta = i_star / j_star
    return KlSummary(
        i_star=i_star,
        i_tilde=_harmonic(i_vals),
        j_star=j_star,
        j_tilde=_harmonic(j_vals),
        k_hat=_effort(i_vals),
        k_check=_effort(j_vals),
        theta=theta,
    )


def k_hat(config: ProblemConfig, subset: Iterable[int]) -> float:
    i_vals, _ = _side_arrays(config, _check_subset(config, subset))
    return _effort(i_vals)


def k_check(config: ProblemConfig, subset: Iterable[int]) -> float:
    _, j_vals = _side_arrays(config, _check_subset(config, subset))
    return _effort(j_vals)


def _cap(num: float, den: float) -> float:
    # (num / den) ∧ 1, with nothing-to-allocate (den == 0) mapped to 0
    if den <= 0.0:
        return 0.0
    return min(num / den, 1.0)


def compute_xy(config: ProblemConfig, subset: Iterable[int]) -> tuple[float, float]:
    """Fractions of ``K_hat(A)`` and ``K_check(A)`` allocated to each side."""
    a = _check_subset(config, subset)
    size = len(a)
    lo, up, K, r = config.lower_bound, config.upper_bound, config.budget, config.r
    if not lo <= size <= up:
        raise AllocationDomainError(f"|A|={size} outside [{lo}, {up}]")
    s = kl_summary(config, a)
    kh, kc, theta = s.k_hat, s.k_check, s.theta

    if lo == up:
        if kh <= theta * kc + TOL:
            return _cap(K, kh), _cap(max(K - kh, 0.0), kc)
        return _cap(max(K - kc, 0.0), kh), _cap(K, kc)

    if lo < size < up:
        x = min(K / (kh + (theta / r) * kc), r / theta, 1.0)
        # x <= r/theta, so y <= 1 exactly; the clamp only removes rounding
        return x, min((theta / r) * x, 1.0)

    if size == lo:
        if lo == 0 or r <= 1.0 + TOL:
            return 0.0, _cap(K, kc)
        z = theta / (r - 1.0)
        if z < 1.0 and K > kh + z * kc + TOL:
            return 1.0, _cap(K - kh, kc)
        x = min(K / (kh + z * kc), 1.0 / z, 1.0)
        y = min(K / (kc + kh / z), z, 1.0)
        return x, y

    # size == up
    if up == config.num_sources or r >= 1.0 - TOL:
        return _cap(K, kh), 0.0
    w = (1.0 / theta) / (1.0 / r - 1.0)
    if w < 1.0 and K > kc + w * kh + TOL:
        return _cap(K - kc, kh), 1.0
    x = min(K / (kh + kc / w), w, 1.0)
    y = min(K / (kc + w * kh), 1.0 / w, 1.0)
    return x, y


def compute_c_star(config: ProblemConfig, subset: Iterable[int],
                   xy: tuple[float, float] | None = None) -> np.ndarray:
    a = _check_subset(config, subset)
    x, y = compute_xy(config, a) if xy is None else xy
    s = kl_summary(config, a)
    c = np.empty(config.num_sources)
    for i, src in enumerate(config.sources):
        if i in a:
            c[i] = x * s.i_star / src.kl_alt_null
        else:
            c[i] = y * s.j_star / src.kl_null_alt
    return c


def check_budgets(config: ProblemConfig, subset: frozenset, n_hat: float, n_check: float,
                  x: float, y: float, kh: float, kc: float) -> None:
    """Raise ConfigurationError naming the first violated budget condition."""
    size, rest = len(subset), config.num_sources - len(subset)
    K = config.budget
    label = sorted(i + 1 for i in subset)
    if n_hat + n_check > K + TOL:
        raise ConfigurationError(
            f"A={label}: N_hat + N_check = {n_hat + n_check:.9g} exceeds K = {K:.9g}")
    if n_hat < x * kh - TOL:
        raise ConfigurationError(
            f"A={label}: N_hat = {n_hat:.9g} is below x(A) K_hat(A) = {x * kh:.9g}")
    if n_check < y * kc - TOL:
        raise ConfigurationError(
            f"A={label}: N_check = {n_check:.9g} is below y(A) K_check(A) = {y * kc:.9g}")
    if not -TOL <= n_hat <= size + TOL:
        raise ConfigurationError(f"A={label}: N_hat = {n_hat:.9g} outside [0, |A|] = [0, {size}]")
    if not -TOL <= n_check <= rest + TOL:
        raise ConfigurationError(
            f"A={label}: N_check = {n_check:.9g} outside [0, |A^c|] = [0, {rest}]")


def select_budgets(config: ProblemConfig, subset: Iterable[int],
                   override: tuple[float, float] | None = None) -> tuple[float, float]:
    """Per-instant budgets on the estimated-anomalous and estimated-normal sides.

    Defaults to ``(x K_hat, y K_check)``.  An override (explicit, or taken from
    ``config.budget_overrides``) is validated against the budget system.
    """
    a = _check_subset(config, subset)
    x, y = compute_xy(config, a)
    s = kl_summary(config, a)
    if override is None:
        override = config.override_for(a)
    if override is None:
        n_hat, n_check = x * s.k_hat, y * s.k_check
    else:
        n_hat, n_check = float(override[0]), float(override[1])
    check_budgets(config, a, n_hat, n_check, x, y, s.k_hat, s.k_check)
    # snap rounding noise onto integers (in particular the endpoints |A|, |A^c|)
    return _snap(n_hat), _snap(n_check)


def _snap(v: float) -> float:
    k = round(v)
    return float(k) if abs(v - k) <= TOL else max(v, 0.0)


def _g_set(order: list[int], budget: float, effort_without) -> frozenset:
    size = len(order)
    if budget >= size - TOL:
        return frozenset(order)
    if budget < effort_without(0) - TOL:
        return frozenset()
    for i in range(1, size):
        if budget - i < effort_without(i) - TOL:
            assert i <= math.floor(budget + TOL), "G-set search passed its witness"
            return frozenset(order[:i])
    raise AssertionError(f"G-set search found no admissible size (budget={budget}, size={size})")


def select_g_sets(config: ProblemConfig, subset: Iterable[int],
                  budgets: tuple[float, float]) -> tuple[frozenset, frozenset]:
    """Continuously sampled sets on each side for the given budgets.

    Sources are ranked by increasing ``I_i`` inside ``A`` and by increasing
    ``J_i`` outside ``A``; ties go to the smaller index.
    """
    a = _check_subset(config, subset)
    n_hat, n_check = budgets
    I, J = config.kl_alt, config.kl_null
    inside = sorted(a, key=lambda i: (I[i], i))
    outside = sorted((i for i in range(config.num_sources) if i not in a), key=lambda i: (J[i], i))

    g_hat = _g_set(inside, n_hat, lambda k: _effort(I[np.array(inside[k:], dtype=int)]))
    g_check = _g_set(outside, n_check, lambda k: _effort(J[np.array(outside[k:], dtype=int)]))
    return g_hat, g_check


@functools.lru_cache(maxsize=65536)
def _allocation(config: ProblemConfig, subset: frozenset) -> AllocationResult:
    if not config.lower_bound <= len(subset) <= config.upper_bound:
        raise AllocationDomainError(
            f"|A|={len(subset)} outside [{config.lower_bound}, {config.upper_bound}]")
    s = kl_summary(config, subset)
    x, y = compute_xy(config, subset)
    c = compute_c_star(config, subset, (x, y))
    n_hat, n_check = select_budgets(config, subset)
    g_hat, g_check = select_g_sets(config, subset, (n_hat, n_check))
    return AllocationResult(subset, x, y, tuple(float(v) for v in c), n_hat, n_check,
                            g_hat, g_check, s)


def allocation(config: ProblemConfig, subset: Iterable[int]) -> AllocationResult:
    """Full allocation for ``subset``; memoised per ``(config, subset)``."""
    return _allocation(config, _check_subset(config, subset))


def limit_frequencies(config: ProblemConfig, alloc: AllocationResult) -> np.ndarray:
    """Long-run sampling frequencies of the stationary ordering rule frozen at ``alloc.subset``.

    1 on ``G_hat`` and ``G_check``; on the remaining sources of each side the
    frequencies are proportional to ``1/I_i`` (resp. ``1/J_i``) and sum to the
    side's leftover budget.
    """
    a = alloc.subset
    M = config.num_sources
    c = np.zeros(M)
    for g in (alloc.g_hat, alloc.g_check):
        for i in g:
            c[i] = 1.0
    sides = (
        ([i for i in sorted(a) if i not in alloc.g_hat], config.kl_alt, alloc.n_hat - len(alloc.g_hat)),
        ([i for i in range(M) if i not in a and i not in alloc.g_check], config.kl_null,
         alloc.n_check - len(alloc.g_check)),
    )
    for free, kl, left in sides:
        if not free:
            continue
        inv = 1.0 / kl[free]
        c[free] = left * inv / inv.sum()
    return c


def admissible_subsets(config: ProblemConfig):
    """Yield every subset with ``l <= |A| <= u`` (by size, then lexicographically)."""
    from itertools import combinations

    for m in range(config.lower_bound, config.upper_bound + 1):
        for comb in combinations(range(config.num_sources), m):
            yield frozenset(comb)
