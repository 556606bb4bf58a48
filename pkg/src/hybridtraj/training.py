"""Loss terms and the joint training loop.

The objective combines three terms: the negated teacher-forced data
log-likelihood (trains transition and dynamics), a min-of-K L2 coverage
loss over sequentially generated rollouts (trains the proposal to spread
samples), and an L2 penalty between transition and proposal logits that
keeps the proposal anchored to the transition distribution. Coverage
rollouts are generated sequentially within each example so the adaptive
proposal conditions on earlier rollouts exactly as it does at inference.

Transition logits are detached inside the regularization term: it pulls
the proposal toward the transition distribution without disturbing the
maximum-likelihood fit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from .dataset_io import write_jsonl
from .model import PhaModel, collate_records
from .labeling import LabelThresholds
from .seeding import derive_seed
from .types import ModelConfig, SceneRecord, validate_record


class EmptyDatasetError(ValueError):
    pass


@dataclass
class OptimizerConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    epochs: int = 30
    patience: int = 5
    val_fraction: float = 0.1
    grad_clip: float = 5.0


@dataclass
class LossBreakdown:
    """Per-example loss terms; ``total = mle + alpha*coverage + beta*regularization``."""

    mle: torch.Tensor
    coverage: torch.Tensor
    regularization: torch.Tensor
    total: torch.Tensor


def coverage_loss(samples, ground_truth):
    """Minimum over samples of the summed squared position error.

    ``samples`` has shape (K, H, 2) and ``ground_truth`` (H, 2). Accepts
    numpy arrays (returns float) or torch tensors (returns a scalar tensor,
    differentiable).
    """
    if isinstance(samples, torch.Tensor):
        if samples.ndim != 3 or samples.shape[1:] != ground_truth.shape:
            raise ValueError(
                f"samples shape {tuple(samples.shape)} incompatible with "
                f"ground truth {tuple(ground_truth.shape)}"
            )
        errors = ((samples - ground_truth.unsqueeze(0)) ** 2).sum(dim=(1, 2))
        return errors.min()
    arr = np.asarray(samples, dtype=np.float64)
    gt = np.asarray(ground_truth, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[1:] != gt.shape:
        raise ValueError(f"samples shape {arr.shape} incompatible with ground truth {gt.shape}")
    return float(((arr - gt[None]) ** 2).sum(axis=(1, 2)).min())


def regularization_loss(transition_logits, proposal_logits):
    """Sum over steps of the squared L2 difference between the two logit sequences."""
    if isinstance(transition_logits, torch.Tensor):
        if transition_logits.shape != proposal_logits.shape:
            raise ValueError(
                f"logit shapes differ: {tuple(transition_logits.shape)} vs "
                f"{tuple(proposal_logits.shape)}"
            )
        return ((transition_logits - proposal_logits) ** 2).sum()
    t = np.asarray(transition_logits, dtype=np.float64)
    q = np.asarray(proposal_logits, dtype=np.float64)
    if t.shape != q.shape:
        raise ValueError(f"logit shapes differ: {t.shape} vs {q.shape}")
    return float(((t - q) ** 2).sum())


def compute_loss_batch(
    model: PhaModel,
    batch: dict,
    rng: Optional[torch.Generator] = None,
    config: Optional[ModelConfig] = None,
    hard: bool = True,
) -> LossBreakdown:
    """Per-example loss terms for a collated batch (differentiable)."""
    cfg = config or model.config
    future = batch["future"]
    n = future.shape[0]
    zero = future.new_zeros(n)

    state = model.encode_batch(batch)

    if cfg.variant == "coverage_only":
        mle = zero
    else:
        mle = -model.teacher_forced_batch(state, batch)["log_likelihood"]

    if cfg.variant == "transition_only":
        coverage, reg = zero, zero
    else:
        pooled = None
        best_err = None
        reg_sum = zero
        for k in range(cfg.K):
            enc = model.pool_sample_features(pooled)
            forced = None
            if cfg.variant == "fixed_mode_baseline":
                forced = torch.full((n,), k % cfg.vocab_size, dtype=torch.long)
            out = model.rollout_batch(
                state, batch["init_pos"], batch["init_onehot"], enc,
                rng=rng, hard=hard, forced_modes=forced,
                init_delta=batch["init_delta"],
            )
            err = ((out["positions"] - future) ** 2).sum(dim=(1, 2))
            best_err = err if best_err is None else torch.minimum(best_err, err)
            diff = out["transition_logits"].detach() - out["proposal_logits"]
            reg_sum = reg_sum + (diff**2).sum(dim=(1, 2))
            feat = model.sample_features(out["positions"], out["mode_onehots"])
            pooled = feat if pooled is None else torch.maximum(pooled, feat)
        coverage = best_err
        reg = zero if cfg.variant == "coverage_only" else reg_sum / cfg.K

    total = mle + cfg.alpha * coverage + cfg.beta * reg
    return LossBreakdown(mle=mle, coverage=coverage, regularization=reg, total=total)


def total_loss(
    record: SceneRecord,
    model: PhaModel,
    config: Optional[ModelConfig] = None,
    rng: Optional[torch.Generator] = None,
    hard: bool = True,
) -> LossBreakdown:
    """Loss terms for a single record, as scalar (differentiable) tensors."""
    cfg = config or model.config
    batch = collate_records([record], cfg, model.dtype)
    parts = compute_loss_batch(model, batch, rng=rng, config=cfg, hard=hard)
    return LossBreakdown(
        mle=parts.mle.squeeze(0),
        coverage=parts.coverage.squeeze(0),
        regularization=parts.regularization.squeeze(0),
        total=parts.total.squeeze(0),
    )


def train(
    dataset: Sequence[SceneRecord],
    config: ModelConfig,
    optimizer: Optional[OptimizerConfig] = None,
    seed: int = 0,
    thresholds: Optional[LabelThresholds] = None,
    log_path: Optional[str] = None,
    verbose: bool = False,
) -> tuple[PhaModel, list[dict]]:
    """Train a model; deterministic given the seed. Returns (model, epoch log)."""
    opt_cfg = optimizer or OptimizerConfig()
    if len(dataset) == 0:
        raise EmptyDatasetError("cannot train on an empty dataset")
    for record in dataset:
        validate_record(record, config)

    torch.manual_seed(derive_seed(seed, "train-torch"))
    model = PhaModel(config)
    adam = torch.optim.Adam(model.parameters(), lr=opt_cfg.learning_rate)

    split_rng = np.random.default_rng(derive_seed(seed, "train-split"))
    order = split_rng.permutation(len(dataset))
    n_val = int(round(opt_cfg.val_fraction * len(dataset)))
    n_val = min(n_val, len(dataset) - 1)
    val_records = [dataset[i] for i in order[:n_val]]
    train_records = [dataset[i] for i in order[n_val:]]

    val_batches = [
        collate_records(val_records[i : i + opt_cfg.batch_size], config, model.dtype, thresholds)
        for i in range(0, len(val_records), opt_cfg.batch_size)
    ]

    log_rows: list[dict] = []
    best_val = float("inf")
    best_state = None
    stale = 0
    for epoch in range(opt_cfg.epochs):
        model.train()
        epoch_rng = np.random.default_rng(derive_seed(seed, f"train-shuffle-{epoch}"))
        perm = epoch_rng.permutation(len(train_records))
        sums = {"mle": 0.0, "coverage": 0.0, "regularization": 0.0, "total": 0.0}
        for start in range(0, len(train_records), opt_cfg.batch_size):
            chunk = [train_records[i] for i in perm[start : start + opt_cfg.batch_size]]
            batch = collate_records(chunk, config, model.dtype, thresholds)
            parts = compute_loss_batch(model, batch)
            loss = parts.total.mean()
            adam.zero_grad()
            loss.backward()
            if opt_cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), opt_cfg.grad_clip)
            adam.step()
            for key in sums:
                sums[key] += float(getattr(parts, key).detach().sum())
        means = {key: value / len(train_records) for key, value in sums.items()}

        model.eval()
        if val_batches:
            val_rng = torch.Generator().manual_seed(derive_seed(seed, "train-val"))
            with torch.no_grad():
                val_sum = sum(
                    float(compute_loss_batch(model, vb, rng=val_rng).total.sum())
                    for vb in val_batches
                )
            val_total = val_sum / len(val_records)
        else:
            val_total = means["total"]

        row = {"epoch": epoch, **means, "val_total": val_total}
        log_rows.append(row)
        if verbose:
            print(
                f"epoch {epoch:3d}  total {means['total']:.3f}  mle {means['mle']:.3f}  "
                f"coverage {means['coverage']:.3f}  reg {means['regularization']:.3f}  "
                f"val {val_total:.3f}"
            )

        if val_total < best_val - 1e-6:
            best_val = val_total
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            stale = 0
        else:
            stale += 1
            if stale > opt_cfg.patience:
                break

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    if log_path:
        write_jsonl(log_rows, log_path)
    return model, log_rows
