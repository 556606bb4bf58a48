"""Synthetic driving-scenario generator.

Scenes are built in the agent frame (origin at the last observed position,
heading along +x) with a straight constant-speed observed segment, so the
future maneuver is not revealed by the history. Futures follow piecewise
constant-curvature / constant-acceleration kinematics with segment
boundaries drawn inside the prediction horizon, which guarantees labeled
mode changes at known times for every kind except ``lane_follow``.

Mode labels are derived by running the auto-labeler on the generated
future, so stored labels and re-derived labels agree by construction on
noiseless data.
"""

from __future__ import annotations

import math

import numpy as np

from .labeling import LabelThresholds, SmootherConfig, auto_label, smooth_trajectory
from .seeding import derive_seed
from .types import STEP_DT, ModelConfig, SceneRecord, validate_record

SCENARIO_KINDS = (
    "lane_follow",
    "lane_change_mid_horizon",
    "turn_after_follow",
    "decelerate_to_stop",
)

DEFAULT_MIX = {
    "lane_follow": 0.25,
    "lane_change_mid_horizon": 0.25,
    "turn_after_follow": 0.25,
    "decelerate_to_stop": 0.25,
}

LANE_WIDTH = 3.5


class InvalidMixError(ValueError):
    pass


def _check_mix(mix: dict[str, float]) -> dict[str, float]:
    if not mix:
        raise InvalidMixError("scenario mix is empty")
    unknown = set(mix) - set(SCENARIO_KINDS)
    if unknown:
        raise InvalidMixError(f"unknown scenario kinds: {sorted(unknown)}")
    if any(p < 0 for p in mix.values()):
        raise InvalidMixError("scenario proportions must be non-negative")
    total = sum(mix.values())
    if abs(total - 1.0) > 1e-9:
        raise InvalidMixError(f"scenario proportions must sum to 1, got {total}")
    return mix


def _allocate_counts(count: int, mix: dict[str, float]) -> list[str]:
    """Largest-remainder allocation of exact per-kind counts."""
    kinds = sorted(mix)
    floors = {k: int(math.floor(mix[k] * count)) for k in kinds}
    remainder = count - sum(floors.values())
    by_fraction = sorted(kinds, key=lambda k: (-(mix[k] * count - floors[k]), k))
    for k in by_fraction[:remainder]:
        floors[k] += 1
    out = []
    for k in kinds:
        out.extend([k] * floors[k])
    return out


def _observed_track(v0: float, obs_horizon: int) -> np.ndarray:
    idx = np.arange(obs_horizon, dtype=np.float64)
    x = (idx - (obs_horizon - 1)) * v0 * STEP_DT
    return np.stack([x, np.zeros_like(x)], axis=1)


def _future_lane_follow(rng, v0: float, horizon: int) -> np.ndarray:
    # accel bounded so speed stays well above the fast-forward threshold
    a_min = max(-0.4, (1.3 - v0) / (horizon * STEP_DT))
    a = rng.uniform(a_min, 0.4)
    pos = np.zeros(2)
    out = np.empty((horizon, 2))
    v = v0
    for t in range(horizon):
        pos = pos + np.array([v * STEP_DT, 0.0])
        out[t] = pos
        v = max(1.3, v + a * STEP_DT)
    return out


def _future_lane_change(rng, v0: float, horizon: int, direction: int) -> np.ndarray:
    t_start = rng.uniform(0.4, 1.4)
    duration = rng.uniform(1.0, 1.4)
    times = (np.arange(horizon) + 1) * STEP_DT
    x = v0 * times
    u = np.clip((times - t_start) / duration, 0.0, 1.0)
    y = direction * LANE_WIDTH * 0.5 * (1.0 - np.cos(np.pi * u))
    return np.stack([x, y], axis=1)


def _future_turn(rng, v0: float, horizon: int, direction: int) -> np.ndarray:
    t_start = rng.uniform(0.5, 1.5)
    rate = direction * math.radians(rng.uniform(35.0, 65.0))  # rad/s
    cap = math.radians(rng.uniform(80.0, 110.0))
    heading = 0.0
    pos = np.zeros(2)
    out = np.empty((horizon, 2))
    for t in range(horizon):
        time = (t + 1) * STEP_DT
        if time > t_start and abs(heading) < cap:
            heading += rate * STEP_DT
        pos = pos + v0 * STEP_DT * np.array([math.cos(heading), math.sin(heading)])
        out[t] = pos
    return out


def _future_decelerate(rng, v0: float, horizon: int) -> np.ndarray:
    t_stop = rng.uniform(1.6, 2.4)
    decel = v0 / t_stop
    pos = np.zeros(2)
    out = np.empty((horizon, 2))
    for t in range(horizon):
        v = max(0.0, v0 - decel * (t * STEP_DT))
        pos = pos + np.array([v * STEP_DT, 0.0])
        out[t] = pos
    return out


def _arc_centerline(start_x: float, radius: float, direction: int, y0: float) -> np.ndarray:
    angles = np.linspace(0.0, math.pi / 2.0, 16)
    cx, cy = start_x, y0 + direction * radius
    pts = np.stack(
        [cx + radius * np.sin(angles), cy - direction * radius * np.cos(angles)], axis=1
    )
    lead_x = np.arange(-40.0, start_x, 2.5)
    lead = np.stack([lead_x, np.full_like(lead_x, y0)], axis=1)
    return np.vstack([lead, pts])


def _straight_centerline(y: float, x_min: float, x_max: float) -> np.ndarray:
    x = np.arange(x_min, x_max, 2.5)
    return np.stack([x, np.full_like(x, y)], axis=1)


def _scene_centerlines(rng, kind: str, direction: int, v0: float) -> list[np.ndarray]:
    y_jit = rng.uniform(-0.3, 0.3)
    x_max = max(40.0, v0 * 3.0 + 15.0)
    lines = [_straight_centerline(y_jit, -45.0, x_max)]
    # side lanes / turn branches: forced when the maneuver needs one,
    # otherwise present at random so the map hints at but does not
    # determine the future.
    for side in (1, -1):
        needed = kind == "lane_change_mid_horizon" and side == direction
        if needed or rng.random() < 0.5:
            lines.append(_straight_centerline(side * LANE_WIDTH + y_jit, -45.0, x_max))
    for side in (1, -1):
        needed = kind == "turn_after_follow" and side == direction
        if needed or rng.random() < 0.5:
            lines.append(
                _arc_centerline(rng.uniform(2.0, 10.0), rng.uniform(6.0, 14.0), side, y_jit)
            )
    return lines


def _generate_one(
    rng: np.random.Generator,
    kind: str,
    scene_id: str,
    obs_horizon: int,
    horizon: int,
    thresholds: LabelThresholds,
    noise_std: float,
    smoother: SmootherConfig,
) -> SceneRecord:
    direction = 1 if rng.random() < 0.5 else -1
    if kind == "lane_follow":
        v0 = rng.uniform(2.5, 10.0)
        future = _future_lane_follow(rng, v0, horizon)
    elif kind == "lane_change_mid_horizon":
        v0 = rng.uniform(4.0, 8.0)
        future = _future_lane_change(rng, v0, horizon, direction)
    elif kind == "turn_after_follow":
        v0 = rng.uniform(3.0, 7.0)
        future = _future_turn(rng, v0, horizon, direction)
    elif kind == "decelerate_to_stop":
        v0 = rng.uniform(3.0, 6.0)
        future = _future_decelerate(rng, v0, horizon)
    else:  # pragma: no cover - guarded by _check_mix
        raise InvalidMixError(f"unknown scenario kind {kind!r}")

    observed = _observed_track(v0, obs_horizon)
    centerlines = _scene_centerlines(rng, kind, direction, v0)

    if noise_std > 0:
        observed = observed + rng.normal(0.0, noise_std, observed.shape)
        future = future + rng.normal(0.0, noise_std, future.shape)
        label_source = smooth_trajectory(future, smoother)
    else:
        label_source = future
    modes = auto_label(label_source, thresholds)

    return SceneRecord(
        scene_id=scene_id,
        observed=observed,
        future=future,
        future_modes=modes,
        centerlines=centerlines,
    )


def generate_synthetic(
    count: int,
    seed: int,
    scenario_mix: dict[str, float] | None = None,
    *,
    obs_horizon: int = 20,
    horizon: int = 30,
    thresholds: LabelThresholds | None = None,
    noise_std: float = 0.0,
    smoother: SmootherConfig | None = None,
) -> list[SceneRecord]:
    """Generate ``count`` scene records, deterministic given ``seed``."""
    mix = _check_mix(dict(scenario_mix) if scenario_mix is not None else dict(DEFAULT_MIX))
    thresholds = thresholds or LabelThresholds()
    smoother = smoother or SmootherConfig()
    if count < 0:
        raise ValueError("count must be >= 0")
    if count == 0:
        return []

    kinds = _allocate_counts(count, mix)
    order_rng = np.random.default_rng(derive_seed(seed, "scenario-order"))
    order_rng.shuffle(kinds)

    config = ModelConfig(obs_horizon=obs_horizon, horizon=horizon)
    records = []
    for i, kind in enumerate(kinds):
        rng = np.random.default_rng(derive_seed(seed, f"scene-{i}"))
        record = _generate_one(
            rng, kind, f"{kind}-{i:05d}", obs_horizon, horizon, thresholds, noise_std, smoother
        )
        records.append(validate_record(record, config))
    return records


def has_mode_change(record: SceneRecord) -> bool:
    return len(np.unique(record.future_modes)) >= 2
