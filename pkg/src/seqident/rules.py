"""Sequential decision core: LLR state, sampling, stopping and decision rules.

This is the scalar reference implementation; one ``TrialState`` describes
one trial.  ``seqident.engine`` runs the same rules vectorised over trials.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .allocation import AllocationResult
from .model import GroundTruth, ProblemConfig, draw_observation, log_likelihood_ratio


class RuleKind(str, Enum):
    ORDERING = "ordering"
    PROBABILISTIC = "probabilistic"
    FULL = "full"
    STABILIZED = "stabilized"

    @property
    def code(self) -> int:
        # stable identifiers used in seed derivation; never renumber
        return {"ordering": 0, "probabilistic": 1, "full": 2, "stabilized": 3}[self.value]


class RuleError(RuntimeError):
    """Internal inconsistency between a state and the allocation it is given."""


def order_sources(llr: Sequence[float]) -> tuple[int, ...]:
    """Indices by decreasing LLR; ties go to the smaller index."""
    return tuple(sorted(range(len(llr)), key=lambda i: (-llr[i], i)))


def decision_size(positives: int, config: ProblemConfig) -> int:
    if config.known_count:
        return config.lower_bound
    return min(max(positives, config.lower_bound), config.upper_bound)


def decide(llr: Sequence[float], config: ProblemConfig) -> frozenset:
    p = sum(1 for v in llr if v > 0)
    return frozenset(order_sources(llr)[: decision_size(p, config)])


@dataclass
class TrialState:
    """Per-trial sequential state at time ``n``."""

    llr: np.ndarray
    samples: np.ndarray
    estimate: frozenset
    time: int = 0
    last_observations: dict = field(default_factory=dict)
    log: list | None = None

    @classmethod
    def initial(cls, config: ProblemConfig, record: bool = False) -> "TrialState":
        M = config.num_sources
        llr = np.zeros(M)
        return cls(llr, np.zeros(M, dtype=np.int64), decide(llr, config), log=[] if record else None)

    @property
    def ordering(self) -> tuple[int, ...]:
        return order_sources(self.llr)

    @property
    def positives(self) -> int:
        return int(np.sum(self.llr > 0))

    @property
    def frequency(self) -> np.ndarray:
        if self.time == 0:
            return np.zeros(len(self.llr))
        return self.samples / self.time

    def sorted_llr(self) -> np.ndarray:
        return self.llr[list(self.ordering)]


@dataclass(frozen=True)
class Thresholds:
    """Stopping thresholds in nats; the known-count variant only uses ``c``."""

    c: float
    a: float | None = None
    b: float | None = None
    d: float | None = None

    def __post_init__(self):
        for name in ("a", "b", "c", "d"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"threshold {name} must be positive (got {v})")
        if len({self.a is None, self.b is None, self.d is None}) > 1:
            raise ValueError("thresholds a, b, d must be given together")

    @property
    def known_count(self) -> bool:
        return self.a is None

    def scaled(self, factor: float) -> "Thresholds":
        f = float(factor)
        if self.known_count:
            return Thresholds(self.c * f)
        return Thresholds(self.c * f, self.a * f, self.b * f, self.d * f)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("a", "b", "c", "d") if getattr(self, k) is not None}


def compute_thresholds(config: ProblemConfig) -> Thresholds:
    """Error-controlling thresholds obtained from union bounds."""
    M, lo, up = config.num_sources, config.lower_bound, config.upper_bound
    la, lb = abs(math.log(config.alpha)), abs(math.log(config.beta))
    if config.known_count:
        return Thresholds(c=abs(math.log(min(config.alpha, config.beta))) + math.log(lo * (M - lo)))
    return Thresholds(
        a=lb + math.log(M),
        b=la + math.log(M),
        c=la + math.log((M - lo) * M),
        d=lb + math.log(up * M),
    )


def _gap(srt: np.ndarray, k: int) -> float:
    """``Lambda_(k) - Lambda_(k+1)`` with the boundary conventions (+inf/-inf sentinels)."""
    if k <= 0 or k >= len(srt):
        return math.inf
    return float(srt[k - 1] - srt[k])


def should_stop(state: TrialState, config: ProblemConfig, thr: Thresholds) -> bool:
    srt = state.sorted_llr()
    lo, up = config.lower_bound, config.upper_bound
    if config.known_count:
        return _gap(srt, lo) >= thr.c
    a, b, c, d = thr.a, thr.b, thr.c, thr.d
    # Lambda_(l+1) always exists since l < M; Lambda_(u) since u >= 1
    if srt[lo] <= -a and _gap(srt, lo) >= c:
        return True
    p = state.positives
    if lo <= p <= up and bool(np.all((srt >= b) | (srt <= -a))):
        return True
    return bool(srt[up - 1] >= b and _gap(srt, up) >= d)


def stop_scale(srt: np.ndarray, positives: int, config: ProblemConfig, thr: Thresholds) -> float:
    """Largest factor ``s`` for which the rule stops with thresholds ``s * thr``.

    ``srt`` is the decreasingly sorted LLR vector.  Stopping with scaled
    thresholds happens exactly when ``stop_scale(...) >= s``.
    """
    lo, up = config.lower_bound, config.upper_bound
    if config.known_count:
        return _gap(srt, lo) / thr.c
    a, b, c, d = thr.a, thr.b, thr.c, thr.d
    s1 = min(-srt[lo] / a, _gap(srt, lo) / c) if srt[lo] < 0 else 0.0
    s2 = 0.0
    if lo <= positives <= up:
        s2 = float(np.min(np.where(srt > 0, srt / b, -srt / a)))
    s3 = min(srt[up - 1] / b, _gap(srt, up) / d) if srt[up - 1] > 0 else 0.0
    return max(s1, s2, s3)


@dataclass(frozen=True)
class StepOutcome:
    sampled: frozenset
    draws: tuple[float, ...] = ()


def _side_count(budget: float, fixed: int, z: float) -> int:
    # strict comparison: an integer budget never adds a slot, even for z == 0.0
    whole = math.floor(budget)
    return whole - fixed + (1 if z < budget - whole else 0)


def _ordering_select(llr: np.ndarray, estimate: frozenset, alloc: AllocationResult,
                     z1: float, z2: float) -> frozenset:
    M = len(llr)
    chosen = set(alloc.g_hat) | set(alloc.g_check)
    k1 = _side_count(alloc.n_hat, len(alloc.g_hat), z1)
    k2 = _side_count(alloc.n_check, len(alloc.g_check), z2)
    # one ranking (decreasing LLR, ties to the smaller index) serves both sides:
    # "smallest" means last in that ranking
    low_side = sorted((i for i in estimate if i not in alloc.g_hat), key=lambda i: (llr[i], -i))
    high_side = sorted((i for i in range(M) if i not in estimate and i not in alloc.g_check),
                       key=lambda i: (-llr[i], i))
    if k1 > len(low_side) or k2 > len(high_side):
        raise RuleError(
            f"requested {k1}/{k2} sources but only {len(low_side)}/{len(high_side)} are eligible")
    chosen.update(low_side[:k1])
    chosen.update(high_side[:k2])
    return frozenset(chosen)


def ordering_step(state: TrialState, alloc: AllocationResult, rng: np.random.Generator | None = None,
                  draws: tuple[float, float] | None = None) -> StepOutcome:
    """Sampled set of the stationary ordering rule for the current estimate.

    Two uniforms are consumed every step whatever the fractional budgets are.
    """
    if alloc.subset != state.estimate:
        raise RuleError(
            f"allocation for {sorted(alloc.subset)} used with estimate {sorted(state.estimate)}")
    z1, z2 = (float(v) for v in (rng.random(2) if draws is None else draws))
    return StepOutcome(_ordering_select(state.llr, state.estimate, alloc, z1, z2), (z1, z2))


def stabilized_step(state: TrialState, frozen: frozenset, alloc: AllocationResult,
                    rng: np.random.Generator | None = None,
                    draws: tuple[float, float] | None = None) -> StepOutcome:
    """Ordering rule that acts as if the estimate were always ``frozen``."""
    if alloc.subset != frozenset(frozen):
        raise RuleError("allocation does not match the frozen subset")
    z1, z2 = (float(v) for v in (rng.random(2) if draws is None else draws))
    return StepOutcome(_ordering_select(state.llr, frozenset(frozen), alloc, z1, z2), (z1, z2))


def probabilistic_step(state: TrialState, alloc: AllocationResult, rng: np.random.Generator | None = None,
                       draws: Sequence[float] | None = None) -> StepOutcome:
    """Each source sampled independently with probability ``c*_i`` of the estimate."""
    if alloc.subset != state.estimate:
        raise RuleError("allocation does not match the current estimate")
    u = rng.random(len(state.llr)) if draws is None else np.asarray(draws, dtype=float)
    c = np.asarray(alloc.c_star)
    return StepOutcome(frozenset(int(i) for i in np.flatnonzero(u < c)), tuple(float(v) for v in u))


def full_sampling_step(state: TrialState) -> StepOutcome:
    return StepOutcome(frozenset(range(len(state.llr))))


def advance(state: TrialState, outcome: StepOutcome, truth: GroundTruth, config: ProblemConfig,
            rng: np.random.Generator) -> TrialState:
    """Observe the sampled sources (in increasing index order) and update the state."""
    llr = state.llr.copy()
    samples = state.samples.copy()
    n = state.time + 1
    obs = {}
    for i in sorted(outcome.sampled):
        src = config.sources[i]
        x = draw_observation(src, i in truth.anomalous_set, rng)
        obs[i] = x
        llr[i] += log_likelihood_ratio(src, x)
        samples[i] += 1
    log = state.log
    if log is not None:
        log = log + [(n, i, x) for i, x in obs.items()]
    return TrialState(llr, samples, decide(llr, config), n, obs, log)


def replay_llr(log: list, config: ProblemConfig) -> np.ndarray:
    """Recompute every LLR from an observation log ``[(n, i, x), ...]``."""
    llr = np.zeros(config.num_sources)
    for _, i, x in sorted(log, key=lambda t: (t[1], t[0])):
        llr[i] += log_likelihood_ratio(config.sources[i], x)
    return llr
