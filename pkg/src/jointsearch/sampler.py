"""Kernel-density model that guides configuration sampling.

Observations at one budget are split by loss rank into a *good* and a *bad*
set. Each set gets a product-kernel density over unit space: a Gaussian
truncated to ``[0, 1]`` on numeric dimensions and a smoothed indicator on
categorical ones. New configurations are drawn from the good density and the
candidate with the largest good/bad density ratio wins.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp, ndtr, ndtri

from .space import Configuration, SearchSpace


@dataclass(frozen=True)
class SamplerParams:
    gamma: float = 0.15
    random_fraction: float = 1 / 3
    n_candidates: int = 64
    min_points: int | None = None  # None: dimension + 1
    bandwidth_factor: float = 3.0
    min_bandwidth: float = 0.05  # unit-space floor; far below this the good set collapses
    categorical_smoothing: float = 0.2

    def __post_init__(self) -> None:
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must be in (0, 1), got {self.gamma}")
        if not 0 <= self.random_fraction <= 1:
            raise ValueError(f"random_fraction must be in [0, 1], got {self.random_fraction}")
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be positive")
        if self.min_points is not None and self.min_points < 1:
            raise ValueError("min_points must be positive")
        if self.bandwidth_factor < 1:
            raise ValueError("bandwidth_factor must be >= 1")
        if not self.min_bandwidth > 0:
            raise ValueError("min_bandwidth must be positive")
        if not 0 < self.categorical_smoothing < 1:
            raise ValueError("categorical_smoothing must be in (0, 1)")

    def n_min(self, space: SearchSpace) -> int:
        return self.min_points if self.min_points is not None else space.dimension + 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "SamplerParams":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown sampler parameters: {sorted(unknown)}")
        return cls(**doc)


@dataclass(frozen=True)
class KernelSet:
    """Points and per-dimension bandwidths of one density estimate.

    For categorical dimensions ``bandwidths`` holds the smoothing ``lambda``:
    the stored choice keeps ``1 - lambda`` and the other ``k - 1`` choices
    share ``lambda`` equally.
    """

    points: np.ndarray  # (n, d)
    bandwidths: np.ndarray  # (d,)
    cardinalities: np.ndarray  # (d,), 0 for numeric dims

    def __post_init__(self) -> None:
        if len(self.points) == 0:
            raise ValueError("a kernel density needs at least one point")

    @property
    def numeric(self) -> np.ndarray:
        return self.cardinalities == 0

    def log_density(self, u: np.ndarray) -> np.ndarray:
        """Log density at query points ``u`` of shape ``(m, d)`` or ``(d,)``."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        pts, bw, num = self.points, self.bandwidths, self.numeric
        # (m, n, d) per-dimension log kernel values
        log_k = np.empty((u.shape[0], pts.shape[0], pts.shape[1]))
        if num.any():
            x = pts[:, num]
            h = bw[num]
            z = (u[:, None, num] - x[None]) / h
            mass = ndtr((1 - x) / h) - ndtr(-x / h)
            log_k[:, :, num] = (-0.5 * z * z - 0.5 * math.log(2 * math.pi)
                                - np.log(h) - np.log(mass)[None])
        for j in np.flatnonzero(~num):
            k = self.cardinalities[j]
            lam = bw[j]
            same = u[:, None, j] == pts[None, :, j]
            log_k[:, :, j] = np.where(same, math.log1p(-lam), math.log(lam / (k - 1)))
        return logsumexp(log_k.sum(axis=2), axis=1) - math.log(pts.shape[0])

    def density(self, u: np.ndarray) -> np.ndarray:
        return np.exp(self.log_density(u))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw from the mixture: pick a point, then perturb each dimension by its kernel."""
        centers = self.points[rng.integers(len(self.points), size=size)]
        out = centers.copy()
        num = self.numeric
        if num.any():
            x = centers[:, num]
            h = np.broadcast_to(self.bandwidths[num], x.shape)
            lo, hi = ndtr(-x / h), ndtr((1 - x) / h)
            q = lo + rng.random(x.shape) * (hi - lo)
            out[:, num] = np.clip(x + h * ndtri(q), 0.0, 1.0)
        for j in np.flatnonzero(~num):
            k = int(self.cardinalities[j])
            lam = self.bandwidths[j]
            change = rng.random(size) < lam
            # a uniformly chosen *other* choice: shift by 1..k-1 modulo k
            shift = rng.integers(1, k, size=size)
            out[:, j] = np.where(change, (centers[:, j] + shift) % k, centers[:, j])
        return out


def kde_density(side: KernelSet, u: np.ndarray) -> np.ndarray | float:
    dens = side.density(u)
    return float(dens[0]) if np.ndim(u) == 1 else dens


@dataclass(frozen=True)
class KdeModel:
    budget: float
    good: KernelSet
    bad: KernelSet
    good_ids: tuple = field(default=())
    bad_ids: tuple = field(default=())

    def log_ratio(self, u: np.ndarray) -> np.ndarray:
        return self.good.log_density(u) - self.bad.log_density(u)


def normal_reference_bandwidth(x: np.ndarray) -> np.ndarray:
    """Per-column ``1.06 * std * n**(-1/5)`` with the sample standard deviation."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    sd = x.std(axis=0, ddof=1) if n > 1 else np.zeros(x.shape[1:])
    return 1.06 * sd * n ** (-0.2)


def split_sizes(n: int, n_min: int, gamma: float) -> tuple[int, int] | None:
    """Good/bad set sizes for ``n`` observations, or ``None`` if too few."""
    if n < n_min + 2:
        return None
    n_good = max(n_min, math.floor(gamma * n))
    n_bad = n - n_good
    if n_bad < n_min:
        return None
    return n_good, n_bad


def _kernel_set(points: np.ndarray, space: SearchSpace, params: SamplerParams) -> KernelSet:
    card = space.cardinalities
    bw = normal_reference_bandwidth(points) * params.bandwidth_factor
    bw = np.maximum(bw, params.min_bandwidth)
    for j in np.flatnonzero(card > 0):
        k = card[j]
        bw[j] = min(max(params.categorical_smoothing, params.min_bandwidth), (k - 1) / k)
    return KernelSet(points, bw, card)


def successful_at(history, budget: float) -> list:
    return [o for o in history.observations if o.status == "success" and o.budget == budget]


def fit_models(history, space: SearchSpace, budget: float, params: SamplerParams) -> KdeModel | None:
    """Fit the good/bad densities from successful observations at ``budget``.

    Returns ``None`` when there are not enough observations. The split is by
    loss rank with ties resolved by submission order, so any strictly
    increasing transformation of the losses yields the same model.
    """
    obs = successful_at(history, budget)
    sizes = split_sizes(len(obs), params.n_min(space), params.gamma)
    if sizes is None:
        return None
    n_good, _ = sizes
    order = sorted(range(len(obs)), key=lambda i: (obs[i].loss, i))
    X = np.array([space.to_unit(o.config) for o in obs])
    good, bad = order[:n_good], order[n_good:]
    return KdeModel(
        budget,
        _kernel_set(X[good], space, params),
        _kernel_set(X[bad], space, params),
        tuple(obs[i].trial_id for i in good),
        tuple(obs[i].trial_id for i in bad),
    )


def select_model_budget(history, space: SearchSpace, params: SamplerParams) -> float | None:
    """Largest budget with enough successful observations to fit a model."""
    counts: dict[float, int] = {}
    for o in history.observations:
        if o.status == "success":
            counts[o.budget] = counts.get(o.budget, 0) + 1
    n_min = params.n_min(space)
    ok = [b for b, n in counts.items() if split_sizes(n, n_min, params.gamma) is not None]
    return max(ok) if ok else None


def propose_unit(model: KdeModel | None, space: SearchSpace, params: SamplerParams,
                 rng: np.random.Generator) -> tuple[np.ndarray, bool]:
    """Return a unit vector and whether the model produced it."""
    if model is None or rng.random() < params.random_fraction:
        return space.sample_unit(rng), False
    cands = model.good.sample(rng, params.n_candidates)
    score = model.log_ratio(cands)
    # nan only if both densities vanish; such candidates never win
    score = np.where(np.isnan(score), -np.inf, score)
    return cands[int(np.argmax(score))], True


def propose(model: KdeModel | None, space: SearchSpace, params: SamplerParams,
            rng: np.random.Generator) -> Configuration:
    u, _ = propose_unit(model, space, params, rng)
    return space.from_unit(u)


def fit_and_propose(history, space: SearchSpace, params: SamplerParams,
                    rng: np.random.Generator) -> tuple[Configuration, dict]:
    """Refit on the current history and propose; returns the config and provenance info."""
    budget = select_model_budget(history, space, params)
    model = fit_models(history, space, budget, params) if budget is not None else None
    u, from_model = propose_unit(model, space, params, rng)
    info = {"model_based_pick": "true" if from_model else "false"}
    if from_model:
        info["model_budget"] = repr(float(model.budget))
    return space.from_unit(u), info

