"""Mixed search spaces: continuous, integer and categorical parameters.

Configurations are plain ``dict`` objects mapping parameter names to values.
Categorical values are stored as choice labels; an integer choice index is
accepted on input and normalized to the label.

Internally the optimizer works on *unit vectors*: numeric dimensions are
mapped affinely (in log space when ``log`` is set) onto ``[0, 1]`` while
categorical dimensions carry the choice index as a whole number.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

CONTINUOUS = "continuous"
INTEGER = "integer"
CATEGORICAL = "categorical"
KINDS = (CONTINUOUS, INTEGER, CATEGORICAL)

Configuration = dict


class SpaceError(ValueError):
    """Raised for malformed space documents or invalid configurations."""


def round_half_away(x: float) -> int:
    """Round to the nearest integer, halves away from zero."""
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


@dataclass(frozen=True)
class ParameterSpec:
    name: str
    kind: str
    low: float | None = None
    high: float | None = None
    log: bool = False
    choices: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.name, str) or not self.name:
            raise SpaceError(f"parameter name must be a non-empty string, got {self.name!r}")
        if self.kind not in KINDS:
            raise SpaceError(f"{self.name}: unknown kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            if self.low is not None or self.high is not None or self.log:
                raise SpaceError(f"{self.name}: categorical parameters take no bounds or log flag")
            if self.choices is None or len(self.choices) < 2:
                raise SpaceError(f"{self.name}: categorical needs at least 2 choices")
            choices = tuple(str(c) for c in self.choices)
            if len(set(choices)) != len(choices):
                raise SpaceError(f"{self.name}: duplicate choices")
            object.__setattr__(self, "choices", choices)
            return
        if self.choices is not None:
            raise SpaceError(f"{self.name}: numeric parameters take no choices")
        if self.low is None or self.high is None:
            raise SpaceError(f"{self.name}: numeric parameters need low and high")
        low, high = float(self.low), float(self.high)
        if not (math.isfinite(low) and math.isfinite(high)):
            raise SpaceError(f"{self.name}: bounds must be finite")
        if low >= high:
            raise SpaceError(f"{self.name}: low must be < high (got {low}, {high})")
        if self.log and low <= 0:
            raise SpaceError(f"{self.name}: log scale requires low > 0")
        if self.kind == INTEGER and (low != int(low) or high != int(high)):
            raise SpaceError(f"{self.name}: integer bounds must be whole numbers")
        object.__setattr__(self, "low", int(low) if self.kind == INTEGER else low)
        object.__setattr__(self, "high", int(high) if self.kind == INTEGER else high)
        object.__setattr__(self, "log", bool(self.log))

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL

    @property
    def n_choices(self) -> int:
        return len(self.choices) if self.choices else 0

    def _transform(self, x: float) -> float:
        return math.log(x) if self.log else float(x)

    def to_unit(self, value: Any) -> float:
        if self.is_categorical:
            return float(self.choice_index(value))
        lo, hi = self._transform(self.low), self._transform(self.high)
        return (self._transform(value) - lo) / (hi - lo)

    def from_unit(self, coord: float) -> Any:
        if self.is_categorical:
            idx = int(coord)
            if idx != coord or not 0 <= idx < self.n_choices:
                raise SpaceError(f"{self.name}: invalid choice index {coord!r}")
            return self.choices[idx]
        if not 0.0 <= coord <= 1.0:
            raise SpaceError(f"{self.name}: unit coordinate {coord!r} outside [0, 1]")
        lo, hi = self._transform(self.low), self._transform(self.high)
        t = lo + coord * (hi - lo)
        value = math.exp(t) if self.log else t
        if self.kind == INTEGER:
            return min(max(round_half_away(value), self.low), self.high)
        return min(max(value, self.low), self.high)

    def choice_index(self, value: Any) -> int:
        if isinstance(value, str):
            try:
                return self.choices.index(value)
            except ValueError:
                raise SpaceError(f"{self.name}: {value!r} is not a valid choice") from None
        if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
            if 0 <= value < self.n_choices:
                return int(value)
        raise SpaceError(f"{self.name}: {value!r} is not a valid choice")

    def normalize(self, value: Any) -> Any:
        """Return ``value`` in canonical form, raising if it is invalid."""
        if self.is_categorical:
            return self.choices[self.choice_index(value)]
        if isinstance(value, bool) or not isinstance(value, (int, float, np.integer, np.floating)):
            raise SpaceError(f"{self.name}: expected a number, got {value!r}")
        if not math.isfinite(value) or not self.low <= value <= self.high:
            raise SpaceError(f"{self.name}: {value!r} outside [{self.low}, {self.high}]")
        if self.kind == INTEGER:
            if value != int(value):
                raise SpaceError(f"{self.name}: {value!r} is not an integer")
            return int(value)
        return float(value)

    def to_dict(self) -> dict:
        if self.is_categorical:
            return {"name": self.name, "kind": self.kind, "choices": list(self.choices)}
        return {"name": self.name, "kind": self.kind, "low": self.low, "high": self.high, "log": self.log}


@dataclass(frozen=True)
class SearchSpace:
    parameters: tuple[ParameterSpec, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        params = tuple(self.parameters)
        if not params:
            raise SpaceError("a search space needs at least one parameter")
        index = {}
        for i, p in enumerate(params):
            if p.name in index:
                raise SpaceError(f"duplicate parameter name {p.name!r}")
            index[p.name] = i
        object.__setattr__(self, "parameters", params)
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.parameters)

    def __iter__(self):
        return iter(self.parameters)

    def __getitem__(self, key: str | int) -> ParameterSpec:
        if isinstance(key, str):
            return self.parameters[self._index[key]]
        return self.parameters[key]

    @property
    def dimension(self) -> int:
        return len(self.parameters)

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.parameters]

    def index(self, name: str) -> int:
        return self._index[name]

    @property
    def categorical_mask(self) -> np.ndarray:
        return np.array([p.is_categorical for p in self.parameters])

    @property
    def cardinalities(self) -> np.ndarray:
        """Number of choices per dimension (0 for numeric dimensions)."""
        return np.array([p.n_choices for p in self.parameters], dtype=int)

    def validate(self, config: Mapping[str, Any]) -> Configuration:
        """Check ``config`` and return a normalized copy."""
        if not isinstance(config, Mapping):
            raise SpaceError(f"configuration must be a mapping, got {type(config).__name__}")
        extra = set(config) - set(self._index)
        if extra:
            raise SpaceError(f"unknown parameters: {sorted(extra)}")
        missing = [n for n in self.names if n not in config]
        if missing:
            raise SpaceError(f"missing parameters: {missing}")
        return {p.name: p.normalize(config[p.name]) for p in self.parameters}

    def to_unit(self, config: Mapping[str, Any]) -> np.ndarray:
        config = self.validate(config)
        return np.array([p.to_unit(config[p.name]) for p in self.parameters])

    def from_unit(self, u: Sequence[float]) -> Configuration:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dimension,):
            raise SpaceError(f"unit vector must have shape ({self.dimension},), got {u.shape}")
        return {p.name: p.from_unit(float(c)) for p, c in zip(self.parameters, u)}

    def sample_unit(self, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(self.dimension)
        for i, p in enumerate(self.parameters):
            if p.is_categorical:
                u[i] = rng.integers(p.n_choices)
        return u

    def sample_uniform(self, rng: np.random.Generator) -> Configuration:
        """Draw a configuration uniformly in the transformed scale."""
        return self.from_unit(self.sample_unit(rng))

    def to_dict(self) -> dict:
        return {"parameters": [p.to_dict() for p in self.parameters]}

    def serialize(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, doc: Any) -> "SearchSpace":
        if not isinstance(doc, Mapping) or not isinstance(doc.get("parameters"), list):
            raise SpaceError('space document must be an object with a "parameters" array')
        params = []
        for i, entry in enumerate(doc["parameters"]):
            if not isinstance(entry, Mapping):
                raise SpaceError(f"parameter #{i} is not an object")
            kind = entry.get("kind")
            allowed = {"name", "kind", "choices"} if kind == CATEGORICAL else {"name", "kind", "low", "high", "log"}
            unknown = set(entry) - allowed
            if unknown:
                raise SpaceError(f"parameter #{i}: unexpected keys {sorted(unknown)}")
            if kind == CATEGORICAL:
                choices = entry.get("choices")
                if not isinstance(choices, list) or not all(isinstance(c, str) for c in choices):
                    raise SpaceError(f"parameter #{i}: choices must be a list of strings")
                params.append(ParameterSpec(entry.get("name"), kind, choices=tuple(choices)))
            else:
                for key in ("low", "high"):
                    v = entry.get(key)
                    if isinstance(v, bool) or not isinstance(v, (int, float)):
                        raise SpaceError(f"parameter #{i}: {key!r} must be a number")
                log = entry.get("log", False)
                if not isinstance(log, bool):
                    raise SpaceError(f"parameter #{i}: 'log' must be a boolean")
                params.append(ParameterSpec(entry.get("name"), kind, entry["low"], entry["high"], log))
        return cls(tuple(params))


def parse_space(text: str) -> SearchSpace:
    """Parse a JSON search-space document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpaceError(f"malformed space document: {exc}") from exc
    return SearchSpace.from_dict(doc)


def load_space(path: str) -> SearchSpace:
    with open(path, encoding="utf-8") as fh:
        return parse_space(fh.read())


def make_space(params: Iterable[ParameterSpec]) -> SearchSpace:
    return SearchSpace(tuple(params))


# --- built-in spaces ---------------------------------------------------------

def joint_space() -> SearchSpace:
    """The 17-dimensional joint architecture/hyperparameter space.

    Seven training hyperparameters followed by ten architectural choices of a
    three-stage multi-branch residual network.
    """
    P = ParameterSpec
    return make_space([
        P("learning_rate", CONTINUOUS, 0.001, 1.0, log=True),
        P("batch_size", INTEGER, 32, 128, log=True),
        P("weight_decay", CONTINUOUS, 1e-5, 1e-3, log=True),
        P("momentum", CONTINUOUS, 0.001, 0.99),
        P("mixup_alpha", CONTINUOUS, 0.0, 1.0),
        P("cutout_length", INTEGER, 0, 20),
        P("shakedrop_death_rate", CONTINUOUS, 0.0, 1.0),
        P("res_blocks_1", INTEGER, 1, 16, log=True),
        P("res_blocks_2", INTEGER, 1, 16, log=True),
        P("res_blocks_3", INTEGER, 1, 16, log=True),
        P("res_branches_1", INTEGER, 1, 5),
        P("res_branches_2", INTEGER, 1, 5),
        P("res_branches_3", INTEGER, 1, 5),
        P("filters_0", INTEGER, 8, 32, log=True),
        P("widen_factor_1", CONTINUOUS, 0.5, 8.0, log=True),
        P("widen_factor_2", CONTINUOUS, 0.5, 8.0, log=True),
        P("widen_factor_3", CONTINUOUS, 0.5, 8.0, log=True),
    ])


# Best configuration found on the 3h budget.
JOINT_BEST_CONFIG: Configuration = {
    "learning_rate": 0.648188,
    "batch_size": 89,
    "weight_decay": 0.000339,
    "momentum": 0.099601,
    "mixup_alpha": 0.492042,
    "cutout_length": 3,
    "shakedrop_death_rate": 0.038439,
    "res_blocks_1": 3,
    "res_blocks_2": 4,
    "res_blocks_3": 2,
    "res_branches_1": 1,
    "res_branches_2": 1,
    "res_branches_3": 4,
    "filters_0": 16,
    "widen_factor_1": 6.241141,
    "widen_factor_2": 1.388867,
    "widen_factor_3": 3.344766,
}

CELL_OPERATIONS = (
    "identity",
    "conv_1x3_3x1",
    "conv_1x7_7x1",
    "dil_conv_3x3",
    "avg_pool_3x3",
    "max_pool_3x3",
    "max_pool_5x5",
    "max_pool_7x7",
    "conv_1x1",
    "conv_3x3",
    "sep_conv_3x3",
    "sep_conv_5x5",
    "sep_conv_7x7",
)
CELL_COMBINERS = ("add", "concat")


def cell_space(blocks: int = 5) -> SearchSpace:
    """Flattened convolutional cell space: five categorical choices per block.

    Block ``k`` (1-based) picks two inputs among the two cell inputs and the
    outputs of blocks ``1..k-1``, one operation for each input, and a
    combiner.
    """
    if blocks < 1:
        raise SpaceError(f"block count must be >= 1, got {blocks}")
    P = ParameterSpec
    params = []
    for k in range(1, blocks + 1):
        inputs = ("cell_input_0", "cell_input_1") + tuple(f"block_{i}" for i in range(1, k))
        params += [
            P(f"block{k}_input_a", CATEGORICAL, choices=inputs),
            P(f"block{k}_input_b", CATEGORICAL, choices=inputs),
            P(f"block{k}_op_a", CATEGORICAL, choices=CELL_OPERATIONS),
            P(f"block{k}_op_b", CATEGORICAL, choices=CELL_OPERATIONS),
            P(f"block{k}_combine", CATEGORICAL, choices=CELL_COMBINERS),
        ]
    return make_space(params)


def space_size(space: SearchSpace) -> int:
    """Number of distinct configurations of an all-categorical space."""
    if not all(p.is_categorical for p in space):
        raise SpaceError("space_size is only defined for all-categorical spaces")
    return math.prod(p.n_choices for p in space)


BUILTIN_SPACES = {
    "joint-table3": joint_space,
    "cell-B5": lambda: cell_space(5),
}


def builtin_space(name: str) -> SearchSpace:
    if name in BUILTIN_SPACES:
        return BUILTIN_SPACES[name]()
    if name.startswith("cell-B") and name[6:].isdigit():
        return cell_space(int(name[6:]))
    raise SpaceError(f"unknown built-in space {name!r}")
