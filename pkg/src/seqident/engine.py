"""Monte Carlo execution of sampling/stopping/decision policies.

Trials are simulated in chunks by a compiled loop.  Each chunk owns one
random stream derived from ``(master seed, rule, truth, chunk index)`` and
runs its trials one after another on it, consuming the stream exactly as
:func:`run_trial` does: per step the rule's uniforms, then one standard
normal per sampled source in increasing index order.  With ``chunk_size=1``
a chunk is a single trial seeded like the scalar path.

The sampling rules never look at the thresholds, so a single trajectory
determines the stopping time for every multiple ``s * thresholds``.
``simulate`` exploits this to track a whole grid of threshold scales at once,
which is what calibration uses.
"""
from __future__ import annotations

import functools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as _k
from .allocation import admissible_subsets, allocation, limit_frequencies
from .model import ConfigurationError, GroundTruth, ProblemConfig
from .rules import (
    RuleError,
    RuleKind,
    Thresholds,
    TrialState,
    advance,
    full_sampling_step,
    ordering_step,
    probabilistic_step,
    should_stop,
    stabilized_step,
)

DEFAULT_HORIZON = 1_000_000
DEFAULT_CHUNK = 2000
MAX_VECTOR_SOURCES = 62
WORKERS_ENV = "SEQIDENT_WORKERS"


class CalibrationError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


def subset_mask(subset) -> int:
    return sum(1 << int(i) for i in subset)


def mask_subset(mask: int, num_sources: int) -> frozenset:
    return frozenset(i for i in range(num_sources) if mask >> i & 1)


def trial_seed(master: int, rule: RuleKind, truth: GroundTruth | frozenset, index: int) -> np.random.SeedSequence:
    """Seed for chunk/trial ``index`` of one (rule, truth) cell."""
    a = truth.anomalous_set if isinstance(truth, GroundTruth) else truth
    return np.random.SeedSequence([int(master), RuleKind(rule).code, subset_mask(a), int(index)])


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


# --------------------------------------------------------------------------
# scalar trial
# --------------------------------------------------------------------------

@dataclass
class TrialRecord:
    stopping_time: int
    decision: frozenset
    truth: frozenset
    false_positive: bool
    false_negative: bool
    total_observations: int
    settle_time: int  # -1 when the final decision is not the truth
    frequencies: np.ndarray
    truncated: bool = False
    expected_observations: float = 0.0
    observation_variance: float = 0.0


def _expected_step(rule: RuleKind, alloc, num_sources: int) -> tuple[float, float]:
    if rule is RuleKind.FULL:
        return float(num_sources), 0.0
    if rule is RuleKind.PROBABILISTIC:
        c = np.asarray(alloc.c_star)
        return float(c.sum()), float(np.sum(c * (1.0 - c)))
    fh = alloc.n_hat - math.floor(alloc.n_hat)
    fc = alloc.n_check - math.floor(alloc.n_check)
    return alloc.n_hat + alloc.n_check, fh * (1 - fh) + fc * (1 - fc)


def run_trial(config: ProblemConfig, truth: GroundTruth, rule: RuleKind | str, thresholds: Thresholds,
              seed, horizon: int = DEFAULT_HORIZON, frozen: frozenset | None = None,
              record: bool = False) -> TrialRecord | tuple[TrialRecord, TrialState]:
    """One trial of the policy, step by step on a :class:`TrialState`.

    ``frozen`` fixes the subset used by the stabilized rule (default: the truth).
    With ``record=True`` the final state (carrying its observation log) is
    returned as well.
    """
    rule = RuleKind(rule)
    rng = np.random.default_rng(seed)
    state = TrialState.initial(config, record=record)
    a = truth.anomalous_set
    frozen = a if frozen is None else frozenset(frozen)
    total, expected, var = 0, 0.0, 0.0
    last_bad = 0
    truncated = True
    while state.time < horizon:
        if rule is RuleKind.STABILIZED:
            alloc = allocation(config, frozen)
            out = stabilized_step(state, frozen, alloc, rng)
        elif rule is RuleKind.FULL:
            alloc = None
            out = full_sampling_step(state)
        else:
            alloc = allocation(config, state.estimate)
            out = (ordering_step if rule is RuleKind.ORDERING else probabilistic_step)(state, alloc, rng)
        e, v = _expected_step(rule, alloc, config.num_sources)
        expected += e
        var += v
        total += len(out.sampled)
        state = advance(state, out, truth, config, rng)
        if state.estimate != a:
            last_bad = state.time
        if should_stop(state, config, thresholds):
            truncated = False
            break
    dec = state.estimate
    rec = TrialRecord(
        stopping_time=state.time,
        decision=dec,
        truth=a,
        false_positive=bool(dec - a),
        false_negative=bool(a - dec),
        total_observations=total,
        settle_time=last_bad + 1 if dec == a else -1,
        frequencies=state.frequency,
        truncated=truncated,
        expected_observations=expected,
        observation_variance=var,
    )
    return (rec, state) if record else rec


# --------------------------------------------------------------------------
# compiled chunk driver
# --------------------------------------------------------------------------

def _family_size(config: ProblemConfig) -> int:
    return sum(math.comb(config.num_sources, m) for m in range(config.lower_bound, config.upper_bound + 1))


class AllocationTable:
    """Allocation arrays for the subsets met so far, looked up by bitmask.

    Rows are appended as the kernel asks for them; ``keys``/``rows`` give the
    sorted bitmask index the kernel searches.
    """

    PRELOAD_LIMIT = 5000

    def __init__(self, config: ProblemConfig, rule: RuleKind):
        self.config = config
        self.rule = rule
        self._items: list = []
        self._masks: list[int] = []
        if rule is not RuleKind.FULL and _family_size(config) <= self.PRELOAD_LIMIT:
            for a in admissible_subsets(config):
                self._items.append(allocation(config, a))
                self._masks.append(subset_mask(a))
        self._refresh()

    @staticmethod
    @functools.lru_cache(maxsize=32)
    def shared(config: ProblemConfig, rule: RuleKind) -> "AllocationTable":
        """Per-process table reused by every chunk of a (config, rule) pair."""
        return AllocationTable(config, rule)

    def _refresh(self):
        M = self.config.num_sources
        items = self._items
        self.n_hat = np.array([a.n_hat for a in items], dtype=float)
        self.n_check = np.array([a.n_check for a in items], dtype=float)
        self.g_hat = np.zeros((len(items), M), dtype=bool)
        self.g_check = np.zeros((len(items), M), dtype=bool)
        for k, a in enumerate(items):
            self.g_hat[k, list(a.g_hat)] = True
            self.g_check[k, list(a.g_check)] = True
        self.c_star = np.array([a.c_star for a in items], dtype=float).reshape(-1, M)
        ev = [_expected_step(self.rule, a, M) for a in items]
        self.e_step = np.array([e for e, _ in ev], dtype=float)
        self.v_step = np.array([v for _, v in ev], dtype=float)
        masks = np.array(self._masks, dtype=np.int64)
        perm = np.argsort(masks, kind="stable")
        self.keys = masks[perm]
        self.rows = perm.astype(np.int64)

    def add(self, mask: int) -> None:
        if int(mask) in set(self._masks):
            return
        self._items.append(allocation(self.config, mask_subset(mask, self.config.num_sources)))
        self._masks.append(int(mask))
        self._refresh()

    def arrays(self) -> tuple:
        return (self.keys, self.rows, self.n_hat, self.n_check, self.g_hat, self.g_check,
                self.c_star, self.e_step, self.v_step)


@dataclass
class BatchResult:
    """Per-trial outcomes for a grid of threshold scales (shape ``(trials, scales)``)."""

    scales: np.ndarray
    stopping_time: np.ndarray
    decision: np.ndarray  # subset bitmasks
    total_observations: np.ndarray
    expected_observations: np.ndarray
    observation_variance: np.ndarray
    settle_time: np.ndarray
    truncated: np.ndarray
    counts: np.ndarray | None = None  # (trials, M), only for a single scale
    truth_mask: int = 0
    final_llr: np.ndarray | None = None

    @staticmethod
    def concat(parts: list["BatchResult"]) -> "BatchResult":
        first = parts[0]
        cat = lambda name: np.concatenate([getattr(p, name) for p in parts])
        return BatchResult(
            scales=first.scales,
            stopping_time=cat("stopping_time"),
            decision=cat("decision"),
            total_observations=cat("total_observations"),
            expected_observations=cat("expected_observations"),
            observation_variance=cat("observation_variance"),
            settle_time=cat("settle_time"),
            truncated=cat("truncated"),
            counts=None if first.counts is None else cat("counts"),
            truth_mask=first.truth_mask,
            final_llr=None if first.final_llr is None else cat("final_llr"),
        )

    @property
    def false_positive(self) -> np.ndarray:
        return (self.decision & ~np.int64(self.truth_mask)) != 0

    @property
    def false_negative(self) -> np.ndarray:
        return (np.int64(self.truth_mask) & ~self.decision) != 0


def simulate_chunk(config: ProblemConfig, truth: frozenset, rule: RuleKind, base: Thresholds | None,
                   size: int, seed, scales=(1.0,), horizon: int = DEFAULT_HORIZON,
                   frozen: frozenset | None = None, keep_llr: bool = False) -> BatchResult:
    """Simulate ``size`` trials in sequence on one random stream, tracking every threshold scale.

    Equivalent to calling :func:`run_trial` ``size`` times on a shared generator.
    """
    rule = RuleKind(rule)
    M = config.num_sources
    if M > MAX_VECTOR_SOURCES:
        raise ConfigurationError(f"the compiled engine supports at most {MAX_VECTOR_SOURCES} sources")
    scales = np.asarray(scales, dtype=float)
    if scales[0] <= 0 or np.any(np.diff(scales) <= 0):
        raise ValueError("scales must be positive and strictly increasing")
    G = len(scales)
    truth = frozenset(truth)
    if base is None:
        thr = (1.0, 1.0, 1.0, 1.0)
    elif base.known_count:
        thr = (1.0, 1.0, base.c, 1.0)
    else:
        thr = (base.a, base.b, base.c, base.d)
    fz = truth if frozen is None else frozenset(frozen)
    dens = [s.alt_density if i in truth else s.null_density for i, s in enumerate(config.sources)]
    obs_mean = np.array([d.mean for d in dens])
    obs_sd = np.array([d.sd for d in dens])
    coef = np.array([s.llr_coef for s in config.sources]).reshape(M, 3)
    quad, lin, const = (np.ascontiguousarray(coef[:, k]) for k in range(3))

    table = AllocationTable.shared(config, rule)
    if rule is RuleKind.STABILIZED:
        table.add(subset_mask(fz))
    rng = np.random.default_rng(seed)
    work_i = np.zeros(7, dtype=np.int64)
    work_i[_k.W_TIME] = -1
    work_f = np.zeros(2)
    llr = np.zeros(M)
    counts = np.zeros(M, dtype=np.int64)
    order = np.arange(M, dtype=np.int64)
    T = np.zeros((size, G), dtype=np.int64)
    dec = np.zeros((size, G), dtype=np.int64)
    obs_at = np.zeros((size, G), dtype=np.int64)
    exp_at = np.zeros((size, G))
    var_at = np.zeros((size, G))
    settle = np.full((size, G), -1, dtype=np.int64)
    trunc = np.zeros((size, G), dtype=bool)
    counts_out = np.zeros((size, M), dtype=np.int64)
    llr_out = np.zeros((size, M))
    truth_mask = subset_mask(truth)
    while True:
        status = _k.run_chunk(
            rng, rule.code, config.lower_bound, config.upper_bound, config.known_count, *thr,
            scales, int(horizon), truth_mask, subset_mask(fz),
            obs_mean, obs_sd, quad, lin, const, *table.arrays(),
            work_i, work_f, llr, counts, order,
            T, dec, obs_at, exp_at, var_at, settle, trunc, counts_out, llr_out)
        if status == _k.DONE:
            break
        if status == _k.INELIGIBLE:
            raise RuleError("ordering rule asked for more sources than are eligible")
        table.add(int(work_i[_k.W_MISSING]))
    return BatchResult(scales, T, dec, obs_at, exp_at, var_at, settle, trunc,
                       counts_out if G == 1 else None, truth_mask, llr_out if keep_llr else None)


def _chunk_job(args):
    return simulate_chunk(*args)


def simulate(config: ProblemConfig, truth: GroundTruth, rule: RuleKind | str, thresholds: Thresholds,
             trials: int, seed: int, scales=(1.0,), horizon: int = DEFAULT_HORIZON,
             chunk_size: int = DEFAULT_CHUNK, workers: int | None = None,
             frozen: frozenset | None = None, keep_llr: bool = False) -> BatchResult:
    """Run ``trials`` trials split in chunks; output is independent of ``workers``."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    rule = RuleKind(rule)
    a = truth.anomalous_set
    jobs = []
    start, k = 0, 0
    while start < trials:
        size = min(chunk_size, trials - start)
        jobs.append((config, a, rule, thresholds, size, trial_seed(seed, rule, a, k), tuple(scales),
                     horizon, frozen, keep_llr))
        start += size
        k += 1
    workers = default_workers() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_chunk_job, jobs))
    else:
        parts = [_chunk_job(j) for j in jobs]
    return BatchResult.concat(parts)


def records_from_batch(batch: BatchResult, config: ProblemConfig, scale_index: int = 0) -> list[TrialRecord]:
    M = config.num_sources
    truth = mask_subset(batch.truth_mask, M)
    out = []
    for t in range(len(batch.stopping_time)):
        T = int(batch.stopping_time[t, scale_index])
        dec = mask_subset(int(batch.decision[t, scale_index]), M)
        freq = batch.counts[t] / T if batch.counts is not None else np.full(M, np.nan)
        out.append(TrialRecord(
            stopping_time=T,
            decision=dec,
            truth=truth,
            false_positive=bool(dec - truth),
            false_negative=bool(truth - dec),
            total_observations=int(batch.total_observations[t, scale_index]),
            settle_time=int(batch.settle_time[t, scale_index]),
            frequencies=freq,
            truncated=bool(batch.truncated[t, scale_index]),
            expected_observations=float(batch.expected_observations[t, scale_index]),
            observation_variance=float(batch.observation_variance[t, scale_index]),
        ))
    return out


# --------------------------------------------------------------------------
# aggregation
# --------------------------------------------------------------------------

@dataclass
class CellSummary:
    rule: str
    truth: frozenset
    trials: int
    truncated: int
    mean_T: float
    se_T: float
    fp_rate: float
    fn_rate: float
    fp_count: int
    fn_count: int
    budget_ratio: float
    budget_ratio_se: float
    budget_z: float
    mean_settle: float
    freq_deviation: float = math.nan

    METRICS = ("trials", "truncated", "mean_T", "se_T", "fp_rate", "fn_rate", "fp_count", "fn_count",
               "budget_ratio", "budget_ratio_se", "budget_z", "mean_settle", "freq_deviation")

    def metrics(self) -> dict:
        return {m: getattr(self, m) for m in self.METRICS}


def summarize(batch: BatchResult, rule: str, config: ProblemConfig, scale_index: int = 0) -> CellSummary:
    g = scale_index
    ok = ~batch.truncated[:, g]
    n_ok = int(ok.sum())
    T = batch.stopping_time[ok, g].astype(float)
    obs = batch.total_observations[ok, g].astype(float)
    truth = mask_subset(batch.truth_mask, config.num_sources)
    if n_ok:
        mean_T = float(T.mean())
        se_T = float(T.std(ddof=1) / math.sqrt(n_ok)) if n_ok > 1 else math.nan
        ratio = float(obs.sum() / T.sum())
        resid = obs - ratio * T
        ratio_se = float(resid.std(ddof=1) / (math.sqrt(n_ok) * mean_T)) if n_ok > 1 else math.nan
    else:
        mean_T = se_T = ratio = ratio_se = math.nan
    fp = int(batch.false_positive[ok, g].sum())
    fn = int(batch.false_negative[ok, g].sum())
    diff = float(batch.total_observations[:, g].sum() - batch.expected_observations[:, g].sum())
    v = float(batch.observation_variance[:, g].sum())
    if v > 0:
        z = diff / math.sqrt(v)
    else:
        z = 0.0 if abs(diff) < 1e-6 else math.copysign(math.inf, diff)
    st = batch.settle_time[ok, g]
    st = st[st >= 0]
    return CellSummary(
        rule=rule,
        truth=truth,
        trials=len(batch.stopping_time),
        truncated=int((~ok).sum()),
        mean_T=mean_T,
        se_T=se_T,
        fp_rate=fp / n_ok if n_ok else math.nan,
        fn_rate=fn / n_ok if n_ok else math.nan,
        fp_count=fp,
        fn_count=fn,
        budget_ratio=ratio,
        budget_ratio_se=ratio_se,
        budget_z=z,
        mean_settle=float(st.mean()) if len(st) else math.nan,
    )


@dataclass
class ExperimentReport:
    cells: list[CellSummary]
    seed: int
    thresholds: dict[str, Thresholds]
    trials: int
    horizon: int
    chunk_size: int

    def cell(self, rule: str, truth) -> CellSummary:
        t = frozenset(truth)
        for c in self.cells:
            if c.rule == rule and c.truth == t:
                return c
        raise KeyError((rule, sorted(t)))

    @property
    def truncated(self) -> int:
        return sum(c.truncated for c in self.cells)


def run_experiment(config: ProblemConfig, truths: list[GroundTruth], rules: list, trials: int, seed: int,
                   thresholds: Thresholds | dict | None = None, horizon: int = DEFAULT_HORIZON,
                   chunk_size: int = DEFAULT_CHUNK, workers: int | None = None,
                   probe_horizon: int = 0, probe_trials: int = 0) -> ExperimentReport:
    """Monte Carlo estimates for every (rule, truth) cell.

    ``thresholds`` is one :class:`Thresholds` for all rules, a mapping
    ``rule -> Thresholds``, or ``None`` for the analytic thresholds.
    """
    from .rules import compute_thresholds

    if trials <= 0:
        raise ValueError("number of trials must be positive")
    rules = [RuleKind(r) for r in rules]
    if thresholds is None:
        thresholds = compute_thresholds(config)
    thr = {r.value: (thresholds[r.value] if isinstance(thresholds, dict) else thresholds) for r in rules}
    cells = []
    for r in rules:
        for truth in truths:
            batch = simulate(config, truth, r, thr[r.value], trials, seed, horizon=horizon,
                             chunk_size=chunk_size, workers=workers)
            cell = summarize(batch, r.value, config)
            if probe_horizon > 0 and probe_trials > 0:
                cell.freq_deviation = frequency_convergence_probe(
                    config, truth, r, probe_horizon, probe_trials, seed).max_deviation
            cells.append(cell)
    return ExperimentReport(cells, seed, thr, trials, horizon, chunk_size)


# --------------------------------------------------------------------------
# calibration
# --------------------------------------------------------------------------

@dataclass
class Calibration:
    thresholds: Thresholds
    scale: float
    fp_rate: float
    fn_rate: float
    per_truth: dict = field(default_factory=dict)
    trials: int = 0


def calibrate_thresholds(config: ProblemConfig, truths: list[GroundTruth], rule: RuleKind | str,
                         alpha: float | None = None, beta: float | None = None, trials: int = 10_000,
                         seed: int = 0, grid: int = 200, horizon: int = DEFAULT_HORIZON,
                         chunk_size: int = DEFAULT_CHUNK, workers: int | None = None) -> Calibration:
    """Scale the analytic thresholds by one common factor in ``(0, 1]``.

    Every trajectory is simulated once while tracking all ``grid`` scale
    factors ``k/grid``; the factor is then located by bisection as the
    smallest one whose worst-case (over ``truths``) empirical false-positive
    and false-negative rates stay within ``alpha`` and ``beta``.
    """
    from .rules import compute_thresholds

    alpha = config.alpha if alpha is None else alpha
    beta = config.beta if beta is None else beta
    if trials * min(alpha, beta) < 1:
        raise CalibrationError(
            f"{trials} trials cannot resolve error targets alpha={alpha}, beta={beta}",
            {"trials": trials, "alpha": alpha, "beta": beta})
    base = compute_thresholds(config)
    scales = np.arange(1, grid + 1) / grid
    fp = np.zeros((len(truths), grid))
    fn = np.zeros((len(truths), grid))
    for k, truth in enumerate(truths):
        b = simulate(config, truth, rule, base, trials, seed, scales=scales, horizon=horizon,
                     chunk_size=chunk_size, workers=workers)
        ok = ~b.truncated
        n_ok = np.maximum(ok.sum(axis=0), 1)
        fp[k] = (b.false_positive & ok).sum(axis=0) / n_ok
        fn[k] = (b.false_negative & ok).sum(axis=0) / n_ok
    worst_fp, worst_fn = fp.max(axis=0), fn.max(axis=0)
    meets = (worst_fp <= alpha) & (worst_fn <= beta)
    diag = {"scales": scales.tolist(), "worst_fp": worst_fp.tolist(), "worst_fn": worst_fn.tolist()}
    if not meets[-1]:
        raise CalibrationError(
            f"analytic thresholds exceed the error targets (FP={worst_fp[-1]:.4g}, FN={worst_fn[-1]:.4g})",
            diag)
    lo, hi = -1, grid - 1  # meets[hi] holds; invariant: index lo fails (or is the open end)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if meets[mid]:
            hi = mid
        else:
            lo = mid
    if hi == 0:
        raise CalibrationError(
            "error targets met at the smallest grid scale; the targets are not resolved by this bracket",
            diag)
    per_truth = {
        tuple(sorted(t.anomalous_set)): {"fp_rate": float(fp[k, hi]), "fn_rate": float(fn[k, hi])}
        for k, t in enumerate(truths)
    }
    return Calibration(base.scaled(scales[hi]), float(scales[hi]), float(worst_fp[hi]),
                       float(worst_fn[hi]), per_truth, trials)


# --------------------------------------------------------------------------
# frequency convergence
# --------------------------------------------------------------------------

@dataclass
class ProbeReport:
    truth: frozenset
    rule: str
    horizon: int
    trials: int
    limits: np.ndarray
    mean_frequency: np.ndarray
    max_deviation: float
    mean_trial_deviation: float
    continuous: frozenset
    continuous_exact: bool
    gap_hat: float  # mean over trials of max pairwise |Λi-Λj|/n on A \ G_hat
    gap_check: float  # same on A^c \ G_check


def _pair_gap(llr: np.ndarray, cols: list[int], n: int) -> float:
    if len(cols) < 2:
        return math.nan
    sub = llr[:, cols]
    return float(np.mean((sub.max(axis=1) - sub.min(axis=1)) / n))


def frequency_convergence_probe(config: ProblemConfig, truth: GroundTruth, rule: RuleKind | str,
                                horizon: int, trials: int, seed: int,
                                chunk_size: int = DEFAULT_CHUNK) -> ProbeReport:
    """Run the rule without stopping for ``horizon`` steps and compare frequencies to their limits."""
    rule = RuleKind(rule)
    a = truth.anomalous_set
    alloc = allocation(config, a)
    if rule in (RuleKind.ORDERING, RuleKind.STABILIZED):
        limits = limit_frequencies(config, alloc)
    elif rule is RuleKind.PROBABILISTIC:
        limits = np.asarray(alloc.c_star)
    else:
        limits = np.ones(config.num_sources)
    b = simulate(config, truth, rule, None, trials, seed, scales=(math.inf,), horizon=horizon,
                 chunk_size=chunk_size, workers=1, keep_llr=True)
    freq = b.counts / horizon
    llr = b.final_llr
    mean_freq = freq.mean(axis=0)
    cont = alloc.g_hat | alloc.g_check
    exact = bool(np.all(freq[:, sorted(cont)] == 1.0)) if cont else True
    free_hat = [i for i in sorted(a) if i not in alloc.g_hat]
    free_check = [i for i in range(config.num_sources) if i not in a and i not in alloc.g_check]
    return ProbeReport(
        truth=a,
        rule=rule.value,
        horizon=horizon,
        trials=trials,
        limits=limits,
        mean_frequency=mean_freq,
        max_deviation=float(np.max(np.abs(mean_freq - limits))),
        mean_trial_deviation=float(np.mean(np.max(np.abs(freq - limits), axis=1))),
        continuous=cont,
        continuous_exact=exact,
        gap_hat=_pair_gap(llr, free_hat, horizon),
        gap_check=_pair_gap(llr, free_check, horizon),
    )
