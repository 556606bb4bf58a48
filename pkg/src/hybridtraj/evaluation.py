"""Metrics and the ablation/evaluation harness.

Metrics follow the min-over-samples convention: minADE/minFDE for
continuous error, minDER for the fraction of wrongly predicted modes, and
NLL as the negative log-density of the ground-truth future under the
probability-weighted mixture of unit-variance Gaussians centered on the
selected samples. Horizon cuts are reported at 1 s (first 10 steps) and
3 s (full horizon).

Sampling-based rows are averaged over several runs with derived seeds, so
reports are reproducible end to end.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np
import torch

from .dataset_io import write_jsonl
from .model import PhaModel, load_checkpoint
from .seeding import derive_seed
from .selection import SampleSet, SelectionResult, select, select_most_likely
from .selection import generate_samples_batch
from .types import HybridSequence, SceneRecord

LOG_2PI = math.log(2.0 * math.pi)
ONE_SECOND_STEPS = 10  # 10 Hz


class MissingCheckpointError(ValueError):
    pass


class MissingDataError(ValueError):
    pass


def _positions_array(predictions) -> np.ndarray:
    if isinstance(predictions, np.ndarray):
        arr = np.asarray(predictions, dtype=np.float64)
    else:
        arr = np.stack([np.asarray(p.positions, dtype=np.float64) for p in predictions])
    if arr.ndim != 3 or arr.shape[-1] != 2:
        raise ValueError(f"predictions must have shape (N, H, 2), got {arr.shape}")
    return arr


def _modes_array(predictions) -> np.ndarray:
    if isinstance(predictions, np.ndarray):
        arr = np.asarray(predictions, dtype=np.int64)
    else:
        arr = np.stack([np.asarray(p.modes, dtype=np.int64) for p in predictions])
    if arr.ndim != 2:
        raise ValueError(f"mode predictions must have shape (N, H), got {arr.shape}")
    return arr


def min_ade_fde(
    predictions, ground_truth, horizon_steps: Optional[int] = None
) -> tuple[float, float]:
    """Minimum average / final displacement error over the sample set.

    The minimum is taken per metric independently; the cut uses the first
    ``horizon_steps`` steps (default: the full horizon).
    """
    preds = _positions_array(predictions)
    gt = np.asarray(ground_truth, dtype=np.float64)
    horizon = gt.shape[0]
    if preds.shape[1] != horizon:
        raise ValueError(f"predictions have {preds.shape[1]} steps, ground truth {horizon}")
    cut = horizon if horizon_steps is None else horizon_steps
    if cut < 1 or cut > horizon:
        raise ValueError(f"horizon_steps={cut} outside [1, {horizon}]")
    errors = np.linalg.norm(preds[:, :cut] - gt[None, :cut], axis=-1)  # (N, cut)
    return float(errors.mean(axis=1).min()), float(errors[:, -1].min())


def min_der(predictions, ground_truth_modes, horizon_steps: Optional[int] = None) -> float:
    """Minimum fraction of wrong-mode steps over the sample set."""
    preds = _modes_array(predictions)
    gt = np.asarray(ground_truth_modes, dtype=np.int64)
    if preds.shape[1] != gt.shape[0]:
        raise ValueError(f"mode predictions have {preds.shape[1]} steps, ground truth {gt.shape[0]}")
    cut = gt.shape[0] if horizon_steps is None else horizon_steps
    if cut < 1 or cut > gt.shape[0]:
        raise ValueError(f"horizon_steps={cut} outside [1, {gt.shape[0]}]")
    wrong = (preds[:, :cut] != gt[None, :cut]).mean(axis=1)
    return float(wrong.min())


def nll(predictions: Union[SelectionResult, tuple], ground_truth) -> float:
    """Negative log-likelihood of the ground truth under the weighted sample
    mixture of per-step unit-variance Gaussians (log-sum-exp stabilized)."""
    if isinstance(predictions, SelectionResult):
        probs = predictions.probabilities
        positions = _positions_array(predictions.selected)
    else:
        probs, positions = predictions
        probs = np.asarray(probs, dtype=np.float64)
        positions = _positions_array(positions)
        if abs(probs.sum() - 1.0) > 1e-6:
            raise ValueError("probabilities must sum to 1")
    gt = np.asarray(ground_truth, dtype=np.float64)
    sq = ((positions - gt[None]) ** 2).sum(axis=(1, 2))
    log_density = -0.5 * sq - gt.shape[0] * LOG_2PI
    with np.errstate(divide="ignore"):
        components = np.log(probs) + log_density
    peak = components.max()
    if not np.isfinite(peak):
        return float("inf")
    return float(-(peak + np.log(np.exp(components - peak).sum())))


@dataclass
class EvalReport:
    """Aggregated metrics for one (method, M, N) configuration."""

    method: str
    n_scenes: int
    n_runs: int
    M: int
    N: int
    minade_1s: float
    minfde_1s: float
    minder_1s: float
    minade_3s: float
    minfde_3s: float
    minder_3s: float
    nll: float

    def to_dict(self) -> dict:
        return asdict(self)


def _select_for_method(
    sample_set: SampleSet,
    n: int,
    method: str,
    nms_threshold_m: float,
    rng: np.random.Generator,
) -> SelectionResult:
    if method == "none":
        return select_most_likely(sample_set, len(sample_set))
    return select(sample_set, n, method, nms_threshold_m=nms_threshold_m, rng=rng)


def evaluate_method(
    records: Sequence[SceneRecord],
    model: PhaModel,
    method: str = "fps",
    M: Optional[int] = None,
    N: Optional[int] = None,
    nms_threshold_m: float = 2.0,
    seed: int = 0,
    n_runs: int = 5,
    label: Optional[str] = None,
    batch_size: int = 256,
) -> EvalReport:
    """Generate M samples per scene, select N, and average metrics over runs."""
    if len(records) == 0:
        raise MissingDataError("no records to evaluate")
    cfg = model.config
    m = M if M is not None else cfg.M
    n = N if N is not None else cfg.N
    gen_cfg = replace(cfg, M=m, N=min(n, m))

    one_sec = min(ONE_SECOND_STEPS, cfg.horizon)
    totals = np.zeros(7)
    for run in range(n_runs):
        gen_rng = torch.Generator().manual_seed(derive_seed(seed, f"eval-gen-{run}"))
        sel_rng = np.random.default_rng(derive_seed(seed, f"eval-select-{run}"))
        for start in range(0, len(records), batch_size):
            chunk = records[start : start + batch_size]
            sample_sets = generate_samples_batch(chunk, model, config=gen_cfg, rng=gen_rng)
            for record, sample_set in zip(chunk, sample_sets):
                result = _select_for_method(sample_set, n, method, nms_threshold_m, sel_rng)
                ade1, fde1 = min_ade_fde(result.selected, record.future, one_sec)
                der1 = min_der(result.selected, record.future_modes, one_sec)
                ade3, fde3 = min_ade_fde(result.selected, record.future)
                der3 = min_der(result.selected, record.future_modes)
                scene_nll = nll(result, record.future)
                totals += np.array([ade1, fde1, der1, ade3, fde3, der3, scene_nll])
    means = totals / (n_runs * len(records))
    return EvalReport(
        method=label or f"{method}(M={m},N={n})",
        n_scenes=len(records),
        n_runs=n_runs,
        M=m,
        N=n,
        minade_1s=means[0],
        minfde_1s=means[1],
        minder_1s=means[2],
        minade_3s=means[3],
        minfde_3s=means[4],
        minder_3s=means[5],
        nll=means[6],
    )


PROTOCOLS = ("table1", "table2", "table4", "full")

# checkpoint keys each protocol needs
_PROTOCOL_CHECKPOINTS = {
    "table1": ("full", "nonadaptive", "transition"),
    "table2": ("full",),
    "table4": ("full", "fixed_mode"),
}


def _resolve_model(checkpoints: dict, key: str) -> PhaModel:
    if key not in checkpoints:
        raise MissingCheckpointError(f"protocol requires checkpoint {key!r}")
    value = checkpoints[key]
    if isinstance(value, PhaModel):
        return value
    if not os.path.exists(str(value)):
        raise MissingCheckpointError(f"checkpoint file not found: {value}")
    model, _ = load_checkpoint(str(value))
    return model


def run_ablation(
    dataset: Sequence[SceneRecord],
    checkpoints: dict,
    protocol: str,
    out_dir: Optional[str] = None,
    seed: int = 0,
    n_runs: int = 5,
    plot_scenes: int = 3,
) -> list[EvalReport]:
    """Run one of the comparison protocols and emit reports (and plots)."""
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
    if len(dataset) == 0:
        raise MissingDataError("no scenes supplied to the ablation harness")
    protocols = [protocol] if protocol != "full" else ["table1", "table2", "table4"]

    reports: list[EvalReport] = []
    plots: list[tuple[str, PhaModel, str, int, int, float]] = []
    for proto in protocols:
        for key in _PROTOCOL_CHECKPOINTS[proto]:
            _resolve_model(checkpoints, key)  # fail fast on anything missing
        if proto == "table1":
            for label, key in (
                ("transition", "transition"),
                ("proposal-nonadaptive", "nonadaptive"),
                ("proposal-adaptive", "full"),
            ):
                model = _resolve_model(checkpoints, key)
                reports.append(
                    evaluate_method(
                        dataset, model, method="none", M=6, N=6,
                        seed=derive_seed(seed, f"table1-{label}"), n_runs=n_runs,
                        label=f"table1/{label}",
                    )
                )
        elif proto == "table2":
            model = _resolve_model(checkpoints, "full")
            for m in (6, 30, 50):
                for method, thr in (
                    ("random", 0.0),
                    ("most_likely", 0.0),
                    ("nms", 2.0),
                    ("nms", 4.0),
                    ("fps", 0.0),
                ):
                    label = f"table2/{method}" + (f"-{thr:g}m" if method == "nms" else "")
                    reports.append(
                        evaluate_method(
                            dataset, model, method=method, M=m, N=6,
                            nms_threshold_m=thr or 2.0,
                            seed=derive_seed(seed, f"table2-{label}-{m}"),
                            n_runs=n_runs, label=f"{label}(M={m})",
                        )
                    )
                    if method == "fps":
                        plots.append((f"{label}-M{m}", model, "fps", m, 6, 2.0))
        elif proto == "table4":
            full_model = _resolve_model(checkpoints, "full")
            fixed_model = _resolve_model(checkpoints, "fixed_mode")
            n_modes = fixed_model.config.vocab_size
            reports.append(
                evaluate_method(
                    dataset, full_model, method="fps", M=full_model.config.M, N=n_modes,
                    seed=derive_seed(seed, "table4-evolving"), n_runs=n_runs,
                    label="table4/evolving-mode",
                )
            )
            reports.append(
                evaluate_method(
                    dataset, fixed_model, method="none", M=n_modes, N=n_modes,
                    seed=derive_seed(seed, "table4-fixed"), n_runs=n_runs,
                    label="table4/fixed-mode",
                )
            )

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_jsonl(
            [r.to_dict() for r in reports],
            os.path.join(out_dir, f"report_{protocol}.jsonl"),
        )
        _render_ablation_plots(dataset, checkpoints, protocol, out_dir, seed, plot_scenes)
    return reports


def _render_ablation_plots(
    dataset, checkpoints, protocol: str, out_dir: str, seed: int, plot_scenes: int
) -> None:
    from . import plotting

    if plot_scenes <= 0 or "full" not in checkpoints:
        return
    model = _resolve_model(checkpoints, "full")
    rng = torch.Generator().manual_seed(derive_seed(seed, "plot-gen"))
    scenes = list(dataset[: plot_scenes])
    sample_sets = generate_samples_batch(scenes, model, rng=rng)
    for record, sample_set in zip(scenes, sample_sets):
        result = select(sample_set, min(model.config.N, len(sample_set)), "fps")
        path = os.path.join(out_dir, f"scene_{record.scene_id}_{protocol}.png")
        plotting.plot_scene(record, result.selected, result.probabilities, path)
