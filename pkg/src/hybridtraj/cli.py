"""Command-line entry point wiring all pipeline stages.

Subcommands: generate, label, perturb, train, sample, eval, plot. Every
command resolves its configuration (defaults < --config file < flags),
derives per-purpose seeds from the run seed, and writes a provenance
sidecar next to each artifact. On failure a single machine-parsable JSON
line goes to stderr and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np
import torch

from . import dataset_io, evaluation, labeling, selection, synthetic, training
from .config import ConfigError, load_config
from .model import load_checkpoint, save_checkpoint
from .seeding import derive_seed
from .types import SceneRecord


def _parse_mix(text: str) -> dict[str, float]:
    mix = {}
    for part in text.split(","):
        if not part.strip():
            continue
        if "=" not in part:
            raise ConfigError(f"bad mix entry {part!r}; expected kind=proportion")
        kind, value = part.split("=", 1)
        mix[kind.strip()] = float(value)
    return mix


def _meta(config, extra: dict | None = None) -> dict:
    meta = {"config": config.to_dict(), "seed": config.seed}
    if extra:
        meta.update(extra)
    return meta


def cmd_generate(args) -> int:
    config = load_config(args.config, {"seed": args.seed})
    mix = _parse_mix(args.mix) if args.mix else None
    records = synthetic.generate_synthetic(
        args.count,
        config.seed,
        mix,
        obs_horizon=config.model.obs_horizon,
        horizon=config.model.horizon,
        thresholds=config.thresholds,
        noise_std=args.noise_std,
        smoother=config.smoother,
    )
    dataset_io.write_dataset(records, args.out, meta=_meta(config, {"count": args.count}))
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def cmd_label(args) -> int:
    overrides = {
        "thresholds.theta": args.theta,
        "thresholds.v_fast": args.vfast,
        "thresholds.v_slow": args.vslow,
    }
    config = load_config(args.config, overrides)
    records = dataset_io.read_dataset(args.infile)
    out = []
    for record in records:
        source = record.future
        if args.smooth:
            source = labeling.smooth_trajectory(source, config.smoother)
        modes = labeling.auto_label(source, config.thresholds)
        out.append(
            SceneRecord(
                scene_id=record.scene_id,
                observed=record.observed,
                future=record.future,
                future_modes=modes,
                centerlines=record.centerlines,
            )
        )
    dataset_io.write_dataset(out, args.out, meta=_meta(config, {"smoothed": args.smooth}))
    print(f"labeled {len(out)} records -> {args.out}")
    return 0


def cmd_perturb(args) -> int:
    config = load_config(args.config, {"seed": args.seed})
    records = dataset_io.read_dataset(args.infile)
    out = labeling.perturb_labels(
        records, args.fraction, config.seed, vocab_size=config.model.vocab_size
    )
    dataset_io.write_dataset(out, args.out, meta=_meta(config, {"fraction": args.fraction}))
    print(f"perturbed {len(out)} records -> {args.out}")
    return 0


def cmd_train(args) -> int:
    overrides = {
        "seed": args.seed,
        "model.variant": args.variant,
        "model.K": args.K,
        "model.M": args.M,
        "model.N": args.N,
        "model.alpha": args.alpha,
        "model.beta": args.beta,
        "optimizer.epochs": args.epochs,
        "optimizer.learning_rate": args.lr,
        "optimizer.batch_size": args.batch_size,
    }
    config = load_config(args.config, overrides)
    records = dataset_io.read_dataset(args.data)
    log_path = args.out_checkpoint + ".train_log.jsonl"
    model, _ = training.train(
        records,
        config.model,
        optimizer=config.optimizer,
        seed=config.seed,
        thresholds=config.thresholds,
        log_path=log_path,
        verbose=not args.quiet,
    )
    save_checkpoint(model, args.out_checkpoint, run_config=config.to_dict(), seed=config.seed)
    dataset_io.write_meta(args.out_checkpoint, _meta(config, {"data": args.data}))
    print(f"trained {config.model.variant} model -> {args.out_checkpoint}")
    return 0


def cmd_sample(args) -> int:
    config = load_config(args.config, {"seed": args.seed, "model.M": args.M, "model.N": args.N})
    model, payload = load_checkpoint(args.checkpoint)
    records = dataset_io.read_dataset(args.data)
    gen_cfg = replace(model.config, M=config.model.M, N=min(config.model.N, config.model.M))

    rng = torch.Generator().manual_seed(derive_seed(config.seed, "sample-gen"))
    sel_rng = np.random.default_rng(derive_seed(config.seed, "sample-select"))
    rows = []
    for start in range(0, len(records), args.batch_size):
        chunk = records[start : start + args.batch_size]
        sample_sets = selection.generate_samples_batch(chunk, model, config=gen_cfg, rng=rng)
        for record, sample_set in zip(chunk, sample_sets):
            result = selection.select(
                sample_set, gen_cfg.N, args.method, nms_threshold_m=args.nms_threshold, rng=sel_rng
            )
            rows.append(
                {
                    "scene_id": record.scene_id,
                    "predictions": [
                        {
                            "modes": seq.modes.tolist(),
                            "positions": seq.positions.tolist(),
                            "probability": float(prob),
                            "log_likelihood": seq.log_likelihood,
                        }
                        for seq, prob in zip(result.selected, result.probabilities)
                    ],
                }
            )
    meta = _meta(config, {"method": args.method, "checkpoint": args.checkpoint})
    dataset_io.write_jsonl(rows, args.out, meta=meta)
    print(f"sampled {len(rows)} scenes -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    config = load_config(args.config, {"seed": args.seed})
    checkpoints = {}
    for entry in args.checkpoint:
        if "=" in entry:
            name, path = entry.split("=", 1)
        else:
            name, path = "full", entry
        checkpoints[name] = path
    records = dataset_io.read_dataset(args.data)
    reports = evaluation.run_ablation(
        records,
        checkpoints,
        args.protocol,
        out_dir=args.out_dir,
        seed=config.seed,
        n_runs=args.runs,
    )
    dataset_io.write_meta(
        os.path.join(args.out_dir, f"report_{args.protocol}.jsonl"),
        _meta(config, {"protocol": args.protocol, "checkpoints": checkpoints}),
    )
    for report in reports:
        print(json.dumps(report.to_dict()))
    return 0


def cmd_plot(args) -> int:
    from . import plotting
    from .types import HybridSequence

    records = {r.scene_id: r for r in dataset_io.read_dataset(args.data)}
    rows = dataset_io.read_jsonl(args.predictions)
    os.makedirs(args.out_dir, exist_ok=True)
    count = 0
    for row in rows[: args.limit]:
        record = records.get(row["scene_id"])
        if record is None:
            continue
        sequences = [
            HybridSequence(
                modes=p["modes"], positions=p["positions"], log_likelihood=p["log_likelihood"]
            )
            for p in row["predictions"]
        ]
        probs = np.array([p["probability"] for p in row["predictions"]])
        path = os.path.join(args.out_dir, f"{row['scene_id']}.png")
        plotting.plot_scene(record, sequences, probs, path, title=row["scene_id"])
        count += 1
    print(f"rendered {count} scenes -> {args.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hybridtraj",
        description="hybrid discrete-continuous trajectory prediction pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mix", type=str, default=None, help="kind=prop,... (sums to 1)")
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--noise-std", type=float, default=0.0)
    p.add_argument("--config", type=str, default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("label", help="re-derive mode labels for a dataset")
    p.add_argument("--in", dest="infile", type=str, required=True)
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--vfast", type=float, default=None)
    p.add_argument("--vslow", type=float, default=None)
    p.add_argument("--smooth", action="store_true", help="GP-smooth futures before labeling")
    p.add_argument("--config", type=str, default=None)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("perturb", help="randomly perturb a fraction of mode labels")
    p.add_argument("--in", dest="infile", type=str, required=True)
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", type=str, default=None)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--config", type=str, default=None)
    p.add_argument("--out-checkpoint", type=str, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--variant", type=str, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--K", type=int, default=None)
    p.add_argument("--M", type=int, default=None)
    p.add_argument("--N", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate and select predictions")
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--M", type=int, default=None)
    p.add_argument("--N", type=int, default=None)
    p.add_argument("--method", type=str, default="fps",
                   choices=("fps", "nms", "most_likely", "random"))
    p.add_argument("--nms-threshold", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--config", type=str, default=None)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="run an ablation protocol")
    p.add_argument("--checkpoint", action="append", required=True,
                   help="name=path (repeatable); bare path means name 'full'")
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--protocol", type=str, required=True, choices=evaluation.PROTOCOLS)
    p.add_argument("--out-dir", type=str, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--config", type=str, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="render prediction plots")
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--predictions", type=str, required=True)
    p.add_argument("--out-dir", type=str, required=True)
    p.add_argument("--limit", type=int, default=10)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # single-line machine-parsable error contract
        print(json.dumps({"error": str(exc), "type": type(exc).__name__}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
