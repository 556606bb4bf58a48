"""Desk-scale experiment orchestration.

Builds a synthetic intent-changing dataset, trains the model variants the
comparison protocols need (adaptive / non-adaptive / transition-only
proposals across seeds, a fixed-mode baseline, and a perturbed-label run),
evaluates them on a held-out split, and writes a machine-readable summary.

Every stage is cached inside the working directory keyed by a manifest of
its parameters, so re-runs only redo what changed.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

from . import dataset_io
from .evaluation import EvalReport, evaluate_method
from .labeling import perturb_labels
from .model import PhaModel, load_checkpoint, save_checkpoint
from .seeding import derive_seed
from .synthetic import generate_synthetic, has_mode_change
from .training import OptimizerConfig, train
from .types import ModelConfig

DESK_MIX = {
    "lane_follow": 0.20,
    "lane_change_mid_horizon": 0.30,
    "turn_after_follow": 0.30,
    "decelerate_to_stop": 0.20,
}


@dataclass
class DeskScale:
    """Size knobs for the desk-scale protocol runs."""

    n_train: int = 2400
    n_eval: int = 260
    data_seed: int = 1234
    epochs: int = 18
    batch_size: int = 128
    patience: int = 4
    train_seeds: tuple = (0, 1, 2)
    eval_runs: int = 5
    eval_scenes: int = 200
    perturb_fraction: float = 0.05
    mix: dict = field(default_factory=lambda: dict(DESK_MIX))

    def manifest(self) -> dict:
        doc = asdict(self)
        doc["train_seeds"] = list(self.train_seeds)
        return doc


VARIANT_ALIASES = {
    "full": "full",
    "nonadaptive": "nonadaptive_proposal",
    "transition": "transition_only",
    "fixed_mode": "fixed_mode_baseline",
}


def _manifest_matches(path: str, manifest: dict) -> bool:
    if not os.path.exists(path):
        return False
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh) == json.loads(json.dumps(manifest))


def _write_manifest(path: str, manifest: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def build_datasets(workdir: str, scale: DeskScale, verbose: bool = False):
    """Generate (or reload) the train and held-out evaluation datasets."""
    os.makedirs(workdir, exist_ok=True)
    train_path = os.path.join(workdir, "train.jsonl")
    eval_path = os.path.join(workdir, "eval.jsonl")
    manifest = {"kind": "datasets", "scale": scale.manifest()}
    manifest_path = os.path.join(workdir, "datasets.manifest.json")
    if not _manifest_matches(manifest_path, manifest):
        if verbose:
            print(f"generating {scale.n_train}+{scale.n_eval} scenes ...")
        records = generate_synthetic(
            scale.n_train + scale.n_eval, scale.data_seed, scale.mix
        )
        dataset_io.write_dataset(records[: scale.n_train], train_path, meta=manifest)
        dataset_io.write_dataset(records[scale.n_train :], eval_path, meta=manifest)
        _write_manifest(manifest_path, manifest)
    return dataset_io.read_dataset(train_path), dataset_io.read_dataset(eval_path)


def _model_config(variant_alias: str) -> ModelConfig:
    variant = VARIANT_ALIASES[variant_alias]
    cfg = ModelConfig(variant=variant)
    if variant == "transition_only":
        cfg = replace(cfg, alpha=0.0, beta=0.0)
    return cfg


def train_variant(
    workdir: str,
    records,
    variant_alias: str,
    seed: int,
    scale: DeskScale,
    data_tag: str = "clean",
    verbose: bool = False,
) -> str:
    """Train one variant/seed pair, cached; returns the checkpoint path."""
    name = f"{variant_alias}_{data_tag}_seed{seed}"
    ckpt_path = os.path.join(workdir, f"{name}.pt")
    manifest = {
        "kind": "checkpoint",
        "variant": variant_alias,
        "seed": seed,
        "data_tag": data_tag,
        "scale": scale.manifest(),
    }
    manifest_path = ckpt_path + ".manifest.json"
    if _manifest_matches(manifest_path, manifest):
        return ckpt_path

    cfg = _model_config(variant_alias)
    opt = OptimizerConfig(
        epochs=scale.epochs, batch_size=scale.batch_size, patience=scale.patience
    )
    start = time.time()
    if verbose:
        print(f"training {name} ...")
    model, _ = train(
        records, cfg, optimizer=opt, seed=seed,
        log_path=ckpt_path + ".train_log.jsonl", verbose=verbose,
    )
    save_checkpoint(model, ckpt_path, run_config={"experiment": manifest}, seed=seed)
    _write_manifest(manifest_path, manifest)
    if verbose:
        print(f"  {name} done in {time.time() - start:.0f} s")
    return ckpt_path


def _load(path: str) -> PhaModel:
    model, _ = load_checkpoint(path)
    return model


def run_desk_suite(
    workdir: str, scale: Optional[DeskScale] = None, verbose: bool = False
) -> dict:
    """Train and evaluate everything the ordering criteria compare.

    Returns (and caches) a summary dict with per-variant/per-seed min-of-6
    metrics, the selection-method comparison, the fixed-mode comparison,
    and the perturbed-label comparison.
    """
    scale = scale or DeskScale()
    os.makedirs(workdir, exist_ok=True)
    summary_path = os.path.join(workdir, "summary.json")
    manifest = {"kind": "summary", "scale": scale.manifest()}
    if _manifest_matches(summary_path + ".manifest.json", manifest):
        with open(summary_path, "r", encoding="utf-8") as fh:
            return json.load(fh)

    train_records, eval_records = build_datasets(workdir, scale, verbose=verbose)
    eval_subset = eval_records[: scale.eval_scenes]
    change_subset = [r for r in eval_subset if has_mode_change(r)]

    summary: dict = {
        "scale": scale.manifest(),
        "n_eval": len(eval_subset),
        "eval_mode_change_fraction": len(change_subset) / len(eval_subset),
    }

    # --- proposal-function comparison (one row per variant and seed) ----- #
    table1 = {}
    for alias in ("full", "nonadaptive", "transition"):
        for seed in scale.train_seeds:
            ckpt = train_variant(workdir, train_records, alias, seed, scale, verbose=verbose)
            report = evaluate_method(
                eval_subset, _load(ckpt), method="none", M=6, N=6,
                seed=derive_seed(scale.data_seed, f"table1-{alias}-{seed}"),
                n_runs=scale.eval_runs, label=f"table1/{alias}/seed{seed}",
            )
            table1[f"{alias}_seed{seed}"] = report.to_dict()
    summary["table1"] = table1

    # --- selection-method comparison on the full model ------------------ #
    full_ckpt = train_variant(workdir, train_records, "full", scale.train_seeds[0], scale)
    full_model = _load(full_ckpt)
    table2 = {}
    method_grid = [
        ("fps", 50, 0.0),
        ("nms", 50, 2.0),
        ("random", 50, 0.0),
        ("most_likely", 50, 0.0),
        ("none", 6, 0.0),
    ]
    for method, m, thr in method_grid:
        key = f"{method}_M{m}" + (f"_{thr:g}m" if method == "nms" else "")
        report = evaluate_method(
            eval_subset, full_model, method=method, M=m, N=6,
            nms_threshold_m=thr or 2.0,
            seed=derive_seed(scale.data_seed, f"table2-{key}"),
            n_runs=scale.eval_runs, label=f"table2/{key}",
        )
        table2[key] = report.to_dict()
    summary["table2"] = table2

    # --- evolving vs fixed-mode comparison on mode-change scenes -------- #
    fixed_ckpt = train_variant(
        workdir, train_records, "fixed_mode", scale.train_seeds[0], scale, verbose=verbose
    )
    fixed_model = _load(fixed_ckpt)
    n_modes = fixed_model.config.vocab_size
    table4 = {
        "evolving": evaluate_method(
            change_subset, full_model, method="fps", M=50, N=n_modes,
            seed=derive_seed(scale.data_seed, "table4-evolving"),
            n_runs=scale.eval_runs, label="table4/evolving",
        ).to_dict(),
        "fixed": evaluate_method(
            change_subset, fixed_model, method="none", M=n_modes, N=n_modes,
            seed=derive_seed(scale.data_seed, "table4-fixed"),
            n_runs=scale.eval_runs, label="table4/fixed",
        ).to_dict(),
        "n_scenes": len(change_subset),
    }
    summary["table4"] = table4

    # --- label-noise robustness ----------------------------------------- #
    perturbed = perturb_labels(
        train_records, scale.perturb_fraction, derive_seed(scale.data_seed, "perturb")
    )
    perturbed_ckpt = train_variant(
        workdir, perturbed, "full", scale.train_seeds[0], scale,
        data_tag="perturbed", verbose=verbose,
    )
    robust = {}
    for tag, model in (("clean", full_model), ("perturbed", _load(perturbed_ckpt))):
        robust[tag] = evaluate_method(
            eval_subset, model, method="fps", M=50, N=6,
            seed=derive_seed(scale.data_seed, "robustness"),
            n_runs=scale.eval_runs, label=f"robustness/{tag}",
        ).to_dict()
    summary["robustness"] = robust

    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    _write_manifest(summary_path + ".manifest.json", manifest)
    return summary
