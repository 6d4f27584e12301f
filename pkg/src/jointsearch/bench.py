"""Desk-scale objectives.

* :func:`count_parameters` -- trainable parameter count of the three-stage
  multi-branch residual network family spanned by :func:`~jointsearch.space.joint_space`.
* :class:`SyntheticBenchmark` -- a cheap multi-fidelity function whose
  low-budget evaluations are biased proxies of the full-budget loss, with
  a tunable amount of rank disagreement between budgets.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .space import CONTINUOUS, ParameterSpec, SearchSpace, make_space, round_half_away


@dataclass(frozen=True)
class ArchConfig:
    filters0: int
    res_blocks: tuple[int, int, int]
    res_branches: tuple[int, int, int]
    widen_factors: tuple[float, float, float]

    def __post_init__(self) -> None:
        if not 8 <= self.filters0 <= 32:
            raise ValueError(f"filters0 must be in [8, 32], got {self.filters0}")
        for name, vals, lo, hi in (("res_blocks", self.res_blocks, 1, 16),
                                   ("res_branches", self.res_branches, 1, 5),
                                   ("widen_factors", self.widen_factors, 0.5, 8.0)):
            if len(vals) != 3 or not all(lo <= v <= hi for v in vals):
                raise ValueError(f"{name} must hold three values in [{lo}, {hi}], got {vals}")

    @classmethod
    def from_config(cls, config: dict) -> "ArchConfig":
        """Extract the architecture part of a joint-space configuration."""
        return cls(
            int(config["filters_0"]),
            tuple(int(config[f"res_blocks_{j}"]) for j in (1, 2, 3)),
            tuple(int(config[f"res_branches_{j}"]) for j in (1, 2, 3)),
            tuple(float(config[f"widen_factor_{j}"]) for j in (1, 2, 3)),
        )


def filters_sequence(a: ArchConfig) -> tuple[int, int, int, int]:
    """Channel widths ``F_0..F_3`` with ``F_j = round(w_j * F_{j-1})``, at least 1."""
    f = [a.filters0]
    for w in a.widen_factors:
        f.append(max(1, round_half_away(w * f[-1])))
    return tuple(f)


def _conv_bn(c_in: int, c_out: int, k: int = 3) -> int:
    return k * k * c_in * c_out + 2 * c_out


def count_parameters(a: ArchConfig, classes: int = 10) -> int:
    """Trainable parameters of the network described by ``a``.

    Convolutions are bias-free and each is followed by batch-norm (scale and
    shift). A branch is conv3x3-BN-conv3x3-BN; a block whose input width
    differs from its output width adds one 1x1 projection with batch-norm.
    Strides change feature-map sizes only and do not enter the count.
    """
    f = filters_sequence(a)
    total = _conv_bn(3, f[0])
    for j in range(3):
        c = f[j + 1]
        for k in range(a.res_blocks[j]):
            c_in = f[j] if k == 0 else c
            total += a.res_branches[j] * (_conv_bn(c_in, c) + _conv_bn(c, c))
            if c_in != c:
                total += _conv_bn(c_in, c, k=1)
    return total + f[3] * classes + classes


# Reference encodings of hand-designed networks inside the joint space.
SHAKE_SHAKE_26_2X32D = ArchConfig(16, (4, 4, 4), (2, 2, 2), (2.0, 2.0, 2.0))
SHAKE_SHAKE_26_2X64D = ArchConfig(16, (4, 4, 4), (2, 2, 2), (4.0, 2.0, 2.0))
SHAKE_SHAKE_26_2X96D = ArchConfig(16, (4, 4, 4), (2, 2, 2), (6.0, 2.0, 2.0))


# --- synthetic multi-fidelity benchmark ----------------------------------------

def _digest_seed(*parts) -> int:
    h = hashlib.blake2b(json.dumps(parts, sort_keys=True).encode(), digest_size=8)
    return struct.unpack("<Q", h.digest())[0]


@dataclass(frozen=True)
class SyntheticBenchmark:
    """``loss = |u - u*|^2 + c * (b_max / b - 1) * g(u) + sigma * noise``.

    ``g`` is a fixed random field (a sum of ``n_waves`` sinusoids drawn from
    ``seed``) uncorrelated with the quadratic, so the larger ``fidelity_bias``
    the more low-budget rankings drift away from the full-budget ranking.
    ``noise`` is a standard normal draw keyed on (config, budget, seed).
    """

    dimension: int = 2
    optimum: tuple[float, ...] | None = None
    fidelity_bias: float = 0.0
    noise: float = 0.0
    b_max: float = 27.0
    seed: int = 0
    n_waves: int = 8
    names: tuple[str, ...] | None = None
    _waves: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        if self.fidelity_bias < 0 or self.noise < 0:
            raise ValueError("fidelity_bias and noise must be non-negative")
        opt = self.optimum if self.optimum is not None else (0.5,) * self.dimension
        if len(opt) != self.dimension:
            raise ValueError("optimum must have one coordinate per dimension")
        object.__setattr__(self, "optimum", tuple(float(x) for x in opt))
        rng = np.random.default_rng([self.seed, 7919])
        freq = rng.normal(0.0, 2.0 * math.pi, size=(self.n_waves, self.dimension))
        phase = rng.uniform(0.0, 2.0 * math.pi, size=self.n_waves)
        # amplitude sqrt(2/n) gives g unit variance for generic frequencies
        amp = math.sqrt(2.0 / self.n_waves)
        object.__setattr__(self, "_waves", (freq, phase, amp))

    def space(self) -> SearchSpace:
        names = self.names or tuple(f"x{i}" for i in range(self.dimension))
        return make_space(ParameterSpec(n, CONTINUOUS, 0.0, 1.0) for n in names)

    def unit(self, config) -> np.ndarray:
        if isinstance(config, dict):
            names = self.names or tuple(f"x{i}" for i in range(self.dimension))
            return np.array([float(config[n]) for n in names])
        return np.asarray(config, dtype=float)

    def field(self, u: np.ndarray) -> float:
        freq, phase, amp = self._waves
        return float(amp * np.sum(np.sin(freq @ u + phase)))

    def evaluate(self, config, budget: float) -> float:
        if not budget > 0:
            raise ValueError("budget must be positive")
        u = self.unit(config)
        loss = float(np.sum((u - np.array(self.optimum)) ** 2))
        if self.fidelity_bias:
            loss += self.fidelity_bias * (self.b_max / budget - 1.0) * self.field(u)
        if self.noise:
            key = _digest_seed([round(float(x), 12) for x in u], float(budget), self.seed)
            loss += self.noise * float(np.random.default_rng(key).standard_normal())
        return loss

    def __call__(self, config, budget: float) -> float:
        return self.evaluate(config, budget)


def synthetic_eval(b: SyntheticBenchmark, config, budget: float, seed: int | None = None) -> float:
    if seed is not None and seed != b.seed:
        b = SyntheticBenchmark(b.dimension, b.optimum, b.fidelity_bias, b.noise, b.b_max, seed,
                               b.n_waves, b.names)
    return b.evaluate(config, budget)


@dataclass(frozen=True)
class StepBenchmark:
    """``loss = 1[x1 > 0.5]`` on the unit square; every budget agrees."""

    def space(self) -> SearchSpace:
        return make_space([ParameterSpec("x1", CONTINUOUS, 0.0, 1.0),
                           ParameterSpec("x2", CONTINUOUS, 0.0, 1.0)])

    def __call__(self, config, budget: float) -> float:
        return 1.0 if config["x1"] > 0.5 else 0.0


@dataclass(frozen=True)
class JointToyBenchmark:
    """Toy objective on the joint architecture/hyperparameter space.

    The loss is a scaled log distance of the parameter count from
    ``target_params`` plus a quadratic in the unit coordinates of the seven
    training hyperparameters, plus a fidelity bias that favours small
    networks on small budgets.
    """

    target_params: float = 1.0e7
    b_max: float = 10800.0
    fidelity_bias: float = 0.02

    def space(self) -> SearchSpace:
        from .space import joint_space
        return joint_space()

    def __call__(self, config, budget: float) -> float:
        space = self.space()
        u = space.to_unit(config)
        n = count_parameters(ArchConfig.from_config(config))
        size_term = 0.1 * abs(math.log(n / self.target_params))
        hp = u[:7]
        hp_term = float(np.sum((hp - 0.4) ** 2)) / 7
        bias = self.fidelity_bias * (self.b_max / budget - 1.0) * math.log10(n) / 8
        return size_term + hp_term + bias


def demo_benchmark(b_max: float = 27.0, seed: int = 0) -> SyntheticBenchmark:
    """The bundled 2-D benchmark used by the demo configuration and efficacy checks."""
    return SyntheticBenchmark(dimension=2, optimum=(0.3, 0.7), fidelity_bias=0.002,
                              noise=0.0, b_max=b_max, seed=seed)


def correlation_benchmark(b_max: float = 27.0, seed: int = 0) -> SyntheticBenchmark:
    """A benchmark with strong fidelity bias: neighbouring budgets agree, distant ones do not."""
    return SyntheticBenchmark(dimension=2, optimum=(0.5, 0.5), fidelity_bias=0.05,
                              noise=0.0, b_max=b_max, seed=seed)


def grid_history(benchmark, ladder, n_configs: int, seed: int = 0):
    """Evaluate ``n_configs`` uniform random configurations on every budget of ``ladder``.

    This is the design a rank-correlation study between budgets needs: every
    configuration is observed on every budget, so no optimizer selection skews
    the sample.
    """
    from .history import Observation, RunHistory

    space = benchmark.space()
    rng = np.random.default_rng(seed)
    history = RunHistory(space, ladder, seed, meta={"method": "grid"})
    clock = 0.0
    for tid in range(n_configs):
        config = space.sample_uniform(rng)
        for b in ladder.budgets:
            loss = float(benchmark(config, b))
            history.append(Observation(tid, config, b, loss, "success", b, clock, clock + b))
            clock += b
    return history


BENCHMARKS = {
    "synthetic-2d": demo_benchmark,
    "synthetic-biased": correlation_benchmark,
    "step": lambda b_max=27.0, seed=0: StepBenchmark(),
    "joint-toy": lambda b_max=10800.0, seed=0: JointToyBenchmark(b_max=b_max),
}


def make_benchmark(name: str, b_max: float, seed: int = 0):
    try:
        factory = BENCHMARKS[name]
    except KeyError:
        raise ValueError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}") from None
    return factory(b_max=b_max, seed=seed)
