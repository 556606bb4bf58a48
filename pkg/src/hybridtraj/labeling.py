"""Maneuver auto-labeling, trajectory smoothing, and label perturbation.

Labels are derived from step-wise velocity magnitude and heading change,
computed with forward differences at 10 Hz. The rule chain is evaluated in
a fixed order so exactly one rule fires per step:

    heading change >  theta -> left_turn
    heading change < -theta -> right_turn
    speed > v_fast          -> fast_forward
    speed > v_slow          -> slow_forward
    otherwise               -> stop

``theta`` is interpreted as degrees per 0.1 s step.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .types import STEP_DT, Mode, SceneRecord


class TooFewPointsError(ValueError):
    pass


@dataclass
class LabelThresholds:
    """Auto-labeling thresholds: heading change (deg/step) and speeds (m/s)."""

    theta: float = 2.0
    v_fast: float = 1.0
    v_slow: float = 0.05

    def __post_init__(self) -> None:
        if self.theta <= 0:
            raise ValueError("theta must be > 0")
        if not self.v_fast > self.v_slow > 0:
            raise ValueError("thresholds must satisfy v_fast > v_slow > 0")


@dataclass
class SmootherConfig:
    """Gaussian-process smoother settings (Matern-family kernel)."""

    kernel_nu: float = 1.5
    noise_alpha: float = 0.1

    def __post_init__(self) -> None:
        if self.noise_alpha <= 0:
            raise ValueError("noise_alpha must be > 0")


def step_speeds_and_heading_changes(trajectory: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-step speed (m/s) and heading change (radians), forward differences.

    The last step reuses the preceding difference since no forward one
    exists. Zero-displacement steps get heading 0 by the atan2 convention.
    """
    traj = np.asarray(trajectory, dtype=np.float64)
    if traj.ndim != 2 or traj.shape[1] != 2:
        raise ValueError(f"trajectory must have shape (n, 2), got {traj.shape}")
    n = traj.shape[0]
    if n < 2:
        raise TooFewPointsError("need at least 2 points to differentiate a trajectory")

    deltas = np.diff(traj, axis=0)  # (n-1, 2), deltas[i] = p[i+1] - p[i]
    seg_speeds = np.linalg.norm(deltas, axis=1) / STEP_DT
    speeds = np.concatenate([seg_speeds, seg_speeds[-1:]])  # replicate last step

    headings = np.arctan2(deltas[:, 1], deltas[:, 0])
    seg_changes = np.diff(headings)
    seg_changes = (seg_changes + np.pi) % (2.0 * np.pi) - np.pi  # wrap to (-pi, pi]
    if seg_changes.size == 0:
        changes = np.zeros(n)
    else:
        changes = np.concatenate([seg_changes, seg_changes[-1:], seg_changes[-1:]])
    return speeds, changes


def auto_label(trajectory, thresholds: LabelThresholds | None = None) -> np.ndarray:
    """Label every point of a trajectory with a maneuver mode."""
    thresholds = thresholds or LabelThresholds()
    speeds, heading_changes = step_speeds_and_heading_changes(np.asarray(trajectory))
    theta_rad = np.deg2rad(thresholds.theta)

    labels = np.empty(speeds.shape[0], dtype=np.int64)
    for i, (speed, change) in enumerate(zip(speeds, heading_changes)):
        if change > theta_rad:
            labels[i] = Mode.LEFT_TURN
        elif change < -theta_rad:
            labels[i] = Mode.RIGHT_TURN
        elif speed > thresholds.v_fast:
            labels[i] = Mode.FAST_FORWARD
        elif speed > thresholds.v_slow:
            labels[i] = Mode.SLOW_FORWARD
        else:
            labels[i] = Mode.STOP
    return labels


def smooth_trajectory(raw, config: SmootherConfig | None = None) -> np.ndarray:
    """GP-regression posterior mean of each coordinate over step indices."""
    from sklearn.gaussian_process import GaussianProcessRegressor
    from sklearn.gaussian_process.kernels import ConstantKernel, Matern

    config = config or SmootherConfig()
    traj = np.asarray(raw, dtype=np.float64)
    if traj.ndim != 2 or traj.shape[1] != 2:
        raise ValueError(f"trajectory must have shape (n, 2), got {traj.shape}")
    if traj.shape[0] < 2:
        raise TooFewPointsError("need at least 2 points to smooth a trajectory")

    t = np.arange(traj.shape[0], dtype=np.float64).reshape(-1, 1)
    smoothed = np.empty_like(traj)
    for dim in range(2):
        gp = GaussianProcessRegressor(
            kernel=ConstantKernel(1.0) * Matern(nu=config.kernel_nu),
            alpha=config.noise_alpha,
        )
        with warnings.catch_warnings():
            # hyperparameter bounds warnings on degenerate inputs are benign
            warnings.simplefilter("ignore")
            gp.fit(t, traj[:, dim])
        smoothed[:, dim] = gp.predict(t)
    return smoothed


def perturb_labels(
    records: list[SceneRecord], fraction: float, seed: int, vocab_size: int = 5
) -> list[SceneRecord]:
    """Replace a fixed fraction of step labels with uniformly drawn other modes.

    Exactly ``round(fraction * total_steps)`` labels change, chosen without
    replacement across all (record, step) pairs. Continuous data is untouched.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    total_steps = sum(len(r.future_modes) for r in records)
    n_changes = int(round(fraction * total_steps))
    if n_changes and vocab_size < 2:
        raise ValueError("cannot perturb labels with a single-mode vocabulary")

    rng = np.random.default_rng(seed)
    flat_choice = rng.choice(total_steps, size=n_changes, replace=False) if n_changes else []
    chosen = np.zeros(total_steps, dtype=bool)
    chosen[flat_choice] = True

    out = []
    offset = 0
    for record in records:
        n = len(record.future_modes)
        mask = chosen[offset : offset + n]
        offset += n
        if not mask.any():
            out.append(record)
            continue
        modes = record.future_modes.copy()
        for idx in np.flatnonzero(mask):
            alternatives = [m for m in range(vocab_size) if m != modes[idx]]
            modes[idx] = alternatives[rng.integers(len(alternatives))]
        out.append(
            SceneRecord(
                scene_id=record.scene_id,
                observed=record.observed,
                future=record.future,
                future_modes=modes,
                centerlines=record.centerlines,
            )
        )
    return out
