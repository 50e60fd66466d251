"""Source distributions, observation generation and problem parameters.

Sources are indexed ``0 .. M-1`` inside the library.  Human-facing
surfaces (config files, CSV truth labels) use ``1 .. M``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class ModelError(ValueError):
    """Invalid density or source description."""


class ConfigurationError(ValueError):
    """Problem parameters that violate the admissible ranges."""


@dataclass(frozen=True)
class Gaussian:
    """Tagged density descriptor for a normal distribution."""

    mean: float
    var: float = 1.0
    kind: str = field(default="gaussian", init=False)

    def __post_init__(self):
        if not (math.isfinite(self.mean) and math.isfinite(self.var)):
            raise ModelError(f"non-finite Gaussian parameters: mean={self.mean}, var={self.var}")
        if self.var <= 0.0:
            raise ModelError(f"degenerate Gaussian density (var={self.var})")

    @property
    def sd(self) -> float:
        return math.sqrt(self.var)


def _gaussian_kl(p: Gaussian, q: Gaussian) -> float:
    # KL(p || q)
    return 0.5 * math.log(q.var / p.var) + (p.var + (p.mean - q.mean) ** 2) / (2.0 * q.var) - 0.5


@dataclass(frozen=True)
class SourceModel:
    """Null/alternative pair of densities for one source.

    The log-likelihood ratio ``log(f1/f0)`` of a Gaussian pair is a quadratic
    in the observation; its coefficients are cached in ``llr_coef`` so the
    scalar and vectorised evaluations share one arithmetic path.
    """

    index: int
    null_density: Gaussian
    alt_density: Gaussian
    kl_alt_null: float = field(init=False)
    kl_null_alt: float = field(init=False)
    llr_coef: tuple[float, float, float] = field(init=False, repr=False)

    def __post_init__(self):
        f0, f1 = self.null_density, self.alt_density
        if f0.kind != "gaussian" or f1.kind != "gaussian":
            raise ModelError(f"unsupported density kind: {f0.kind}/{f1.kind}")
        i_kl = _gaussian_kl(f1, f0)
        j_kl = _gaussian_kl(f0, f1)
        # mean-shift with common variance: exact closed form
        if f0.var == f1.var:
            i_kl = j_kl = (f1.mean - f0.mean) ** 2 / (2.0 * f0.var)
        if not (i_kl > 0.0 and j_kl > 0.0 and math.isfinite(i_kl) and math.isfinite(j_kl)):
            raise ModelError(
                f"source {self.index}: KL divergences must be positive and finite "
                f"(got I={i_kl}, J={j_kl}); the two hypotheses are indistinguishable"
            )
        quad = 0.5 / f0.var - 0.5 / f1.var
        lin = f1.mean / f1.var - f0.mean / f0.var
        const = f0.mean**2 / (2.0 * f0.var) - f1.mean**2 / (2.0 * f1.var)
        if f0.var != f1.var:
            const += 0.5 * math.log(f0.var / f1.var)
        object.__setattr__(self, "kl_alt_null", i_kl)
        object.__setattr__(self, "kl_null_alt", j_kl)
        object.__setattr__(self, "llr_coef", (quad, lin, const))

    @classmethod
    def mean_shift(cls, index: int, mu: float, var: float = 1.0) -> "SourceModel":
        """N(0, var) against N(mu, var)."""
        return cls(index, Gaussian(0.0, var), Gaussian(mu, var))


def llr_polynomial(x, quad, lin, const):
    """Evaluate ``(quad*x + lin)*x + const``; works on floats and arrays alike."""
    return (quad * x + lin) * x + const


def log_likelihood_ratio(model: SourceModel, observation: float) -> float:
    """``g_i(x) = log f1(x) - log f0(x)`` in nats."""
    if not math.isfinite(observation):
        raise ValueError(f"non-finite observation: {observation!r}")
    return llr_polynomial(observation, *model.llr_coef)


def kl_divergences(model: SourceModel) -> tuple[float, float]:
    """Return ``(I_i, J_i)``: KL(f1||f0) and KL(f0||f1)."""
    return model.kl_alt_null, model.kl_null_alt


def draw_observation(model: SourceModel, is_anomalous: bool, rng: np.random.Generator) -> float:
    dens = model.alt_density if is_anomalous else model.null_density
    return dens.mean + dens.sd * rng.standard_normal()


@dataclass(frozen=True)
class ProblemConfig:
    """Parameters of the identification problem.

    ``budget_overrides`` optionally replaces the default per-subset budgets
    ``(N_hat, N_check)``; each entry is ``(subset, n_hat, n_check)``.
    """

    num_sources: int
    lower_bound: int
    upper_bound: int
    budget: float
    alpha: float
    beta: float
    sources: tuple[SourceModel, ...]
    r: float | None = None
    budget_overrides: tuple[tuple[frozenset, float, float], ...] = ()

    def __post_init__(self):
        M, lo, up = self.num_sources, self.lower_bound, self.upper_bound
        if M < 1:
            raise ConfigurationError(f"num_sources must be positive (got {M})")
        if not (0 <= lo <= up <= M and lo < M and up > 0):
            raise ConfigurationError(
                f"requires 0 <= l <= u <= M, l < M, u > 0 (got l={lo}, u={up}, M={M})"
            )
        if not (0.0 < self.budget <= M):
            raise ConfigurationError(f"budget K must lie in (0, M] (got K={self.budget}, M={M})")
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise ConfigurationError(f"{name} must lie in (0, 1) (got {v})")
        if len(self.sources) != M:
            raise ConfigurationError(f"expected {M} sources, got {len(self.sources)}")
        for i, s in enumerate(self.sources):
            if s.index != i:
                raise ConfigurationError(f"source at position {i} carries index {s.index}")
        if self.r is None:
            object.__setattr__(self, "r", abs(math.log(self.alpha)) / abs(math.log(self.beta)))
        elif not (self.r > 0.0 and math.isfinite(self.r)):
            raise ConfigurationError(f"r must be a positive finite number (got {self.r})")
        object.__setattr__(
            self,
            "budget_overrides",
            tuple((frozenset(a), float(nh), float(nc)) for a, nh, nc in self.budget_overrides),
        )

    @classmethod
    def gaussian(cls, means: Sequence[float] | float, lower: int, upper: int, budget: float,
                 alpha: float, beta: float, num_sources: int | None = None, **kw) -> "ProblemConfig":
        """Unit-variance mean-shift sources; ``means`` is a scalar (homogeneous) or a vector."""
        if np.isscalar(means):
            if num_sources is None:
                raise ConfigurationError("num_sources is required with a scalar mean")
            means = [float(means)] * num_sources
        means = [float(m) for m in means]
        srcs = tuple(SourceModel.mean_shift(i, mu) for i, mu in enumerate(means))
        return cls(len(means), lower, upper, budget, alpha, beta, srcs, **kw)

    @property
    def known_count(self) -> bool:
        return self.lower_bound == self.upper_bound

    @property
    def kl_alt(self) -> np.ndarray:
        return np.array([s.kl_alt_null for s in self.sources])

    @property
    def kl_null(self) -> np.ndarray:
        return np.array([s.kl_null_alt for s in self.sources])

    def admissible(self, subset: Iterable[int]) -> bool:
        a = frozenset(subset)
        return self.lower_bound <= len(a) <= self.upper_bound and all(
            0 <= i < self.num_sources for i in a
        )

    def override_for(self, subset: frozenset) -> tuple[float, float] | None:
        for a, nh, nc in self.budget_overrides:
            if a == subset:
                return nh, nc
        return None


@dataclass(frozen=True)
class GroundTruth:
    anomalous_set: frozenset

    @classmethod
    def of(cls, config: ProblemConfig, subset: Iterable[int]) -> "GroundTruth":
        a = frozenset(int(i) for i in subset)
        if not config.admissible(a):
            raise ConfigurationError(
                f"true anomalous set {sorted(a)} is not admissible: need "
                f"{config.lower_bound} <= |A| <= {config.upper_bound} and indices in [0, {config.num_sources})"
            )
        return cls(a)


def prefix_truths(config: ProblemConfig) -> list[GroundTruth]:
    """Truths ``{0..m-1}`` for ``m = l..u``."""
    lo, up = config.lower_bound, config.upper_bound
    return [GroundTruth.of(config, range(m)) for m in range(lo, up + 1)]


def split_means(num_sources: int, mu: float, factor: float = 2.0) -> list[float]:
    """First half of the sources at ``mu``, second half at ``factor * mu``."""
    half = num_sources // 2
    return [mu] * half + [factor * mu] * (num_sources - half)
