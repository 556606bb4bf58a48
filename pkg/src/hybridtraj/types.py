"""Shared domain types: modes, hybrid states, scene records, model configuration.

Conventions used throughout the package:
  - positions are planar (x, y) in meters, in an agent-centric frame whose
    origin is the agent's last observed position and whose x-axis points
    along its last observed heading;
  - trajectories are sampled at 10 Hz (0.1 s per step);
  - discrete modes are integers in [0, vocab_size). The default vocabulary
    has five maneuvers (see ``Mode``).

All record types are immutable after construction (arrays are marked
read-only) and safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from enum import IntEnum
from typing import Optional

import numpy as np

STEP_DT = 0.1  # seconds per trajectory step (10 Hz)
POSITION_DIM = 2

MODE_NAMES = ("stop", "fast_forward", "slow_forward", "left_turn", "right_turn")


class Mode(IntEnum):
    """Default 5-way maneuver vocabulary."""

    STOP = 0
    FAST_FORWARD = 1
    SLOW_FORWARD = 2
    LEFT_TURN = 3
    RIGHT_TURN = 4


class DimensionMismatchError(ValueError):
    """A field has the wrong length or shape; the message names the field."""


class NonFiniteValueError(ValueError):
    """A field contains NaN or infinity; the message names the field."""


VARIANTS = (
    "full",
    "transition_only",
    "nonadaptive_proposal",
    "coverage_only",
    "single_mode",
    "linear_decoder",
    "fixed_mode_baseline",
)


@dataclass
class ModelConfig:
    """Architecture and sampling hyperparameters.

    Defaults follow the reference configuration: 5 modes, 3 s horizon at
    10 Hz, hidden size 32, K/M/N = 6/50/6, unit loss coefficients.
    """

    vocab_size: int = 5
    horizon: int = 30
    obs_horizon: int = 20
    hidden_size: int = 32
    K: int = 6
    M: int = 50
    N: int = 6
    alpha: float = 1.0
    beta: float = 1.0
    gumbel_temperature: float = 1.0
    dropout: float = 0.1
    variant: str = "full"

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.variant == "single_mode":
            self.vocab_size = 1
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be >= 1")
        if self.horizon < 1 or self.obs_horizon < 1:
            raise ValueError("horizons must be >= 1")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.N > self.M:
            raise ValueError(f"N={self.N} must not exceed M={self.M}")
        if self.gumbel_temperature <= 0:
            raise ValueError("gumbel_temperature must be > 0")


def _as_positions(value, name: str, length: Optional[int] = None) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != POSITION_DIM:
        raise DimensionMismatchError(f"{name} must have shape (n, {POSITION_DIM}), got {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise DimensionMismatchError(f"{name} has {arr.shape[0]} steps, expected {length}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValueError(f"{name} contains non-finite values")
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class HybridState:
    """One time step of an agent: discrete mode plus continuous position."""

    mode: int
    position: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", _as_positions([self.position], "position")[0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, HybridState):
            return NotImplemented
        return self.mode == other.mode and np.array_equal(self.position, other.position)


@dataclass(frozen=True)
class HybridSequence:
    """A mode/position trajectory over the prediction horizon.

    ``log_likelihood`` is the sum of per-step transition log-probabilities
    and unit-variance Gaussian position log-densities; it is ``None`` until
    the sequence has been scored.
    """

    modes: np.ndarray
    positions: np.ndarray
    log_likelihood: Optional[float] = None

    def __post_init__(self) -> None:
        modes = np.ascontiguousarray(np.asarray(self.modes, dtype=np.int64))
        positions = _as_positions(self.positions, "positions")
        if modes.ndim != 1 or modes.shape[0] != positions.shape[0]:
            raise DimensionMismatchError(
                f"modes has shape {modes.shape}, expected ({positions.shape[0]},)"
            )
        modes.flags.writeable = False
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "positions", positions)
        if self.log_likelihood is not None and not np.isfinite(self.log_likelihood):
            raise NonFiniteValueError("log_likelihood must be finite once set")

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def steps(self) -> list[HybridState]:
        return [HybridState(int(z), x) for z, x in zip(self.modes, self.positions)]

    @property
    def endpoint(self) -> np.ndarray:
        return self.positions[-1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, HybridSequence):
            return NotImplemented
        return (
            np.array_equal(self.modes, other.modes)
            and np.array_equal(self.positions, other.positions)
            and self.log_likelihood == other.log_likelihood
        )


@dataclass(frozen=True)
class SceneRecord:
    """One dataset example: observed track, future track, mode labels, map.

    ``centerlines`` is a list of lane-centerline polylines, each an (L, 2)
    array; it may be empty.
    """

    scene_id: str
    observed: np.ndarray
    future: np.ndarray
    future_modes: np.ndarray
    centerlines: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self) -> None:
        object.__setattr__(self, "observed", _as_positions(self.observed, "observed"))
        object.__setattr__(self, "future", _as_positions(self.future, "future"))
        modes = np.ascontiguousarray(np.asarray(self.future_modes, dtype=np.int64))
        if modes.ndim != 1:
            raise DimensionMismatchError(f"future_modes must be 1-D, got shape {modes.shape}")
        modes.flags.writeable = False
        object.__setattr__(self, "future_modes", modes)
        lines = [_as_positions(line, f"centerlines[{i}]") for i, line in enumerate(self.centerlines)]
        object.__setattr__(self, "centerlines", lines)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SceneRecord):
            return NotImplemented
        return (
            self.scene_id == other.scene_id
            and np.array_equal(self.observed, other.observed)
            and np.array_equal(self.future, other.future)
            and np.array_equal(self.future_modes, other.future_modes)
            and len(self.centerlines) == len(other.centerlines)
            and all(np.array_equal(a, b) for a, b in zip(self.centerlines, other.centerlines))
        )

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "observed": self.observed.tolist(),
            "future": self.future.tolist(),
            "future_modes": self.future_modes.tolist(),
            "centerlines": [line.tolist() for line in self.centerlines],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SceneRecord":
        missing = {"scene_id", "observed", "future", "future_modes", "centerlines"} - set(doc)
        if missing:
            raise DimensionMismatchError(f"record document missing keys: {sorted(missing)}")
        return cls(
            scene_id=doc["scene_id"],
            observed=doc["observed"],
            future=doc["future"],
            future_modes=doc["future_modes"],
            centerlines=doc["centerlines"],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def validate_record(record: SceneRecord, config: ModelConfig) -> SceneRecord:
    """Check a record against the configured horizons and mode vocabulary.

    Returns the record unchanged if every invariant holds; raises
    ``DimensionMismatchError`` or ``NonFiniteValueError`` naming the
    offending field otherwise. Finiteness is enforced at construction, so
    only shape and vocabulary checks remain here.
    """
    if record.observed.shape[0] != config.obs_horizon:
        raise DimensionMismatchError(
            f"observed has {record.observed.shape[0]} steps, expected {config.obs_horizon}"
        )
    if record.future.shape[0] != config.horizon:
        raise DimensionMismatchError(
            f"future has {record.future.shape[0]} steps, expected {config.horizon}"
        )
    if record.future_modes.shape[0] != record.future.shape[0]:
        raise DimensionMismatchError(
            f"future_modes has {record.future_modes.shape[0]} entries, "
            f"expected {record.future.shape[0]}"
        )
    if record.future_modes.size and (
        record.future_modes.min() < 0 or record.future_modes.max() >= config.vocab_size
    ):
        raise DimensionMismatchError(
            f"future_modes contains values outside [0, {config.vocab_size})"
        )
    return record


def config_to_dict(config) -> dict:
    """Flatten a (possibly nested) dataclass config to plain JSON-able types."""
    out = {}
    for f in fields(config):
        value = getattr(config, f.name)
        if hasattr(value, "__dataclass_fields__"):
            out[f.name] = config_to_dict(value)
        else:
            out[f.name] = value
    return out
