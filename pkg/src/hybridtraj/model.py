"""The hybrid automaton as a differentiable network.

Encoder: a per-step MLP over the observed path, a map encoder that pools
lane-centerline embeddings with self-attention, and an LSTM that produces
the context hidden state ``h0``. Decoder: an LSTM cell that at each step
emits transition logits (the true next-mode distribution), proposal logits
(used only to decide which mode to sample), and a unit-variance Gaussian
mean over the next position. The proposal additionally conditions on a
max-pooled encoding of previously generated sample trajectories, which is
what makes sampling adaptive.

A sequence's log-likelihood always comes from the transition and dynamics
heads; the proposal changes which sequences get sampled, never how a fixed
sequence is scored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .labeling import LabelThresholds, auto_label
from .types import HybridSequence, ModelConfig, SceneRecord

GUMBEL_EPS = 1e-20
LOG_2PI_2D = math.log(2.0 * math.pi)  # -log N(mu; mu, I) for a 2-D unit Gaussian

# raw coordinates span tens of meters; scaling them at the input interface
# keeps the recurrent units out of tanh saturation
INPUT_POS_SCALE = 0.1


class CheckpointMismatchError(ValueError):
    pass


def gumbel_softmax_sample(
    logits: torch.Tensor,
    temperature: float = 1.0,
    hard: bool = True,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """Reparameterized categorical sample over the last axis.

    With ``hard`` the forward value is a one-hot vector while gradients pass
    through the underlying softmax (straight-through estimator).
    """
    u = torch.rand(logits.shape, dtype=logits.dtype, device=logits.device, generator=generator)
    g = -torch.log(-torch.log(u + GUMBEL_EPS) + GUMBEL_EPS)
    y = torch.softmax((logits + g) / temperature, dim=-1)
    if not hard:
        return y
    index = y.argmax(dim=-1, keepdim=True)
    y_hard = torch.zeros_like(y).scatter_(-1, index, 1.0)
    return (y_hard - y).detach() + y


def _feature_layer(in_dim: int, out_dim: int, dropout: float, linear: bool = False) -> nn.Module:
    if linear:
        return nn.Linear(in_dim, out_dim)
    return nn.Sequential(nn.Linear(in_dim, out_dim), nn.ReLU(), nn.Dropout(dropout))


def _head(in_dim: int, hidden: int, out_dim: int, dropout: float, linear: bool = False) -> nn.Module:
    """Two-layer MLP head (hidden ReLU + dropout, linear output)."""
    if linear:
        return nn.Linear(in_dim, out_dim)
    return nn.Sequential(
        nn.Linear(in_dim, hidden), nn.ReLU(), nn.Dropout(dropout), nn.Linear(hidden, out_dim)
    )


class AffineCell(nn.Module):
    """Purely affine recurrence used by the linear-decoder variant."""

    def __init__(self, input_size: int, hidden_size: int):
        super().__init__()
        self.ih = nn.Linear(input_size, hidden_size)
        self.hh = nn.Linear(hidden_size, hidden_size, bias=False)

    def forward(self, x, state):
        h, c = state
        return self.ih(x) + self.hh(h), c


class MapEncoder(nn.Module):
    """Centerline set encoder: point MLP, per-line max-pool, self-attention
    across lines, then attention pooling with a learned query."""

    def __init__(self, hidden: int, dropout: float):
        super().__init__()
        self.point_mlp = _feature_layer(4, hidden, dropout)
        self.query = nn.Linear(hidden, hidden, bias=False)
        self.key = nn.Linear(hidden, hidden, bias=False)
        self.value = nn.Linear(hidden, hidden, bias=False)
        self.pool_query = nn.Parameter(torch.zeros(hidden))
        self.out = _feature_layer(hidden, hidden, dropout)
        nn.init.normal_(self.pool_query, std=1.0 / math.sqrt(hidden))

    def forward(
        self, points: torch.Tensor, point_mask: torch.Tensor, line_mask: torch.Tensor
    ) -> torch.Tensor:
        # points (B, C, L, 4); point_mask (B, C, L); line_mask (B, C)
        batch, n_lines = points.shape[0], points.shape[1]
        hidden = self.pool_query.shape[0]
        if n_lines == 0 or not bool(line_mask.any()):
            return points.new_zeros((batch, hidden))
        feat = self.point_mlp(points)
        neg = torch.finfo(feat.dtype).min
        feat = feat.masked_fill(~point_mask.unsqueeze(-1), neg)
        line_feat = feat.max(dim=2).values  # (B, C, H)
        line_feat = line_feat.masked_fill(~line_mask.unsqueeze(-1), 0.0)

        q, k, v = self.query(line_feat), self.key(line_feat), self.value(line_feat)
        scores = q @ k.transpose(1, 2) / math.sqrt(hidden)  # (B, C, C)
        scores = scores.masked_fill(~line_mask.unsqueeze(1), neg)
        attended = torch.softmax(scores, dim=-1) @ v
        attended = attended.masked_fill(~line_mask.unsqueeze(-1), 0.0)

        pool_scores = attended @ self.pool_query / math.sqrt(hidden)  # (B, C)
        pool_scores = pool_scores.masked_fill(~line_mask, neg)
        weights = torch.softmax(pool_scores, dim=-1).unsqueeze(-1)
        pooled = self.out((weights * attended).sum(dim=1))
        # scenes without any centerline contribute a zero map embedding
        return pooled * line_mask.any(dim=1, keepdim=True).to(pooled.dtype)


@dataclass
class EncoderState:
    """Context encoding: decoder initial state plus per-step encodings."""

    h0: torch.Tensor
    c0: torch.Tensor
    step_encodings: torch.Tensor


@dataclass
class DecoderStep:
    """Everything one decoder step produces."""

    hidden: torch.Tensor
    cell: torch.Tensor
    output: torch.Tensor
    transition_logits: torch.Tensor
    proposal_logits: torch.Tensor
    mode_onehot: torch.Tensor
    mode_sample: torch.Tensor
    mean: torch.Tensor
    position_sample: torch.Tensor


class PhaModel(nn.Module):
    """Encoder-decoder hybrid automaton with learned proposal sampling."""

    def __init__(self, config: ModelConfig, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.config = config
        hs = config.hidden_size
        z = config.vocab_size
        drop = config.dropout
        linear = config.variant == "linear_decoder"

        self.path_mlp = _feature_layer(4, hs, drop)
        self.map_encoder = MapEncoder(hs, drop)
        self.encoder_lstm = nn.LSTM(2 * hs, hs, batch_first=True)

        dec_in = 2 + 2 + z  # previous position, previous step displacement, mode one-hot
        self.decoder_cell: nn.Module = (
            AffineCell(dec_in, hs) if linear else nn.LSTMCell(dec_in, hs)
        )
        self.transition_head = _head(hs, hs, z, drop, linear)
        self.proposal_head = _head(z + hs + hs, hs, z, drop, linear)
        self.dynamics_head = _head(hs + z, hs, 2, drop, linear)
        self.sample_mlp = _feature_layer(config.horizon * (2 + z), hs, drop, linear)
        self.sample_pool_mlp = _feature_layer(hs, hs, drop, linear)
        self.to(dtype)

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    # ------------------------------------------------------------------ #
    # encoding
    # ------------------------------------------------------------------ #

    def encode_batch(self, batch: dict) -> EncoderState:
        obs = batch["observed"]  # (B, T, 2)
        deltas = torch.diff(obs, dim=1)
        deltas = torch.cat([deltas[:, :1], deltas], dim=1)
        path_feat = self.path_mlp(
            torch.cat([obs * INPUT_POS_SCALE, deltas], dim=-1)
        )  # (B, T, H)
        map_feat = self.map_encoder(
            batch["map_points"], batch["map_point_mask"], batch["map_line_mask"]
        )
        step_in = torch.cat(
            [path_feat, map_feat.unsqueeze(1).expand(-1, obs.shape[1], -1)], dim=-1
        )
        step_enc, (h, c) = self.encoder_lstm(step_in)
        return EncoderState(h0=h.squeeze(0), c0=c.squeeze(0), step_encodings=step_enc)

    # ------------------------------------------------------------------ #
    # decoding
    # ------------------------------------------------------------------ #

    def decode_step_batch(
        self,
        h: torch.Tensor,
        c: torch.Tensor,
        prev_pos: torch.Tensor,
        prev_onehot: torch.Tensor,
        prev_samples_enc: Optional[torch.Tensor],
        rng: Optional[torch.Generator] = None,
        greedy: bool = False,
        hard: bool = True,
        forced_onehot: Optional[torch.Tensor] = None,
        prev_delta: Optional[torch.Tensor] = None,
    ) -> DecoderStep:
        cfg = self.config
        if prev_delta is None:
            prev_delta = torch.zeros_like(prev_pos)
        cell_in = torch.cat([prev_pos * INPUT_POS_SCALE, prev_delta, prev_onehot], dim=-1)
        h_t, c_t = self.decoder_cell(cell_in, (h, c))
        y_t = h_t

        t_logits = self.transition_head(y_t)
        if cfg.variant == "transition_only":
            q_logits = t_logits
        else:
            if cfg.variant == "nonadaptive_proposal" or prev_samples_enc is None:
                enc = torch.zeros_like(y_t)
            else:
                enc = prev_samples_enc
            q_logits = self.proposal_head(torch.cat([t_logits, y_t, enc], dim=-1))

        if forced_onehot is not None:
            onehot = forced_onehot.to(y_t.dtype)
        else:
            onehot = gumbel_softmax_sample(
                q_logits, cfg.gumbel_temperature, hard=hard, generator=rng
            )

        mu = prev_pos + self.dynamics_head(torch.cat([y_t, onehot], dim=-1))
        if greedy:
            x = mu
        else:
            eps = torch.randn(mu.shape, dtype=mu.dtype, device=mu.device, generator=rng)
            x = mu + eps
        return DecoderStep(
            hidden=h_t,
            cell=c_t,
            output=y_t,
            transition_logits=t_logits,
            proposal_logits=q_logits,
            mode_onehot=onehot,
            mode_sample=onehot.argmax(dim=-1),
            mean=mu,
            position_sample=x,
        )

    def rollout_batch(
        self,
        encoder_state: EncoderState,
        init_pos: torch.Tensor,
        init_onehot: torch.Tensor,
        prev_samples_enc: Optional[torch.Tensor],
        rng: Optional[torch.Generator] = None,
        greedy: bool = False,
        hard: bool = True,
        forced_modes: Optional[torch.Tensor] = None,
        init_delta: Optional[torch.Tensor] = None,
    ) -> dict:
        """Sample a full hybrid sequence per batch row.

        Returns positions (B, H, 2), mode one-hots, transition/proposal
        logit sequences, and the log-likelihood computed from the
        transition and dynamics distributions only.
        """
        cfg = self.config
        h, c = encoder_state.h0, encoder_state.c0
        pos, onehot = init_pos, init_onehot
        delta = init_delta if init_delta is not None else torch.zeros_like(init_pos)
        forced_onehot = None
        if forced_modes is not None:
            forced_onehot = torch.nn.functional.one_hot(forced_modes, cfg.vocab_size)

        positions, onehots, t_logits_seq, q_logits_seq = [], [], [], []
        log_lik = init_pos.new_zeros(init_pos.shape[0])
        for _ in range(cfg.horizon):
            step = self.decode_step_batch(
                h, c, pos, onehot, prev_samples_enc, rng=rng, greedy=greedy,
                hard=hard, forced_onehot=forced_onehot, prev_delta=delta,
            )
            log_pt = torch.log_softmax(step.transition_logits, dim=-1)
            log_lik = log_lik + log_pt.gather(1, step.mode_sample.unsqueeze(1)).squeeze(1)
            sq = ((step.position_sample - step.mean) ** 2).sum(dim=-1)
            log_lik = log_lik - 0.5 * sq - LOG_2PI_2D

            h, c = step.hidden, step.cell
            delta = step.position_sample - pos
            pos, onehot = step.position_sample, step.mode_onehot
            positions.append(step.position_sample)
            onehots.append(step.mode_onehot)
            t_logits_seq.append(step.transition_logits)
            q_logits_seq.append(step.proposal_logits)

        return {
            "positions": torch.stack(positions, dim=1),
            "mode_onehots": torch.stack(onehots, dim=1),
            "transition_logits": torch.stack(t_logits_seq, dim=1),
            "proposal_logits": torch.stack(q_logits_seq, dim=1),
            "log_likelihood": log_lik,
        }

    def teacher_forced_batch(self, encoder_state: EncoderState, batch: dict) -> dict:
        """Evaluate the exact log-likelihood of the given future under the model."""
        cfg = self.config
        future, modes = batch["future"], batch["future_modes"]
        onehots = torch.nn.functional.one_hot(modes, cfg.vocab_size).to(future.dtype)

        h, c = encoder_state.h0, encoder_state.c0
        pos, onehot = batch["init_pos"], batch["init_onehot"]
        delta = batch["init_delta"]
        log_lik = pos.new_zeros(pos.shape[0])
        t_logits_seq, means = [], []
        for t in range(cfg.horizon):
            cell_in = torch.cat([pos * INPUT_POS_SCALE, delta, onehot], dim=-1)
            h, c = self.decoder_cell(cell_in, (h, c))
            t_logits = self.transition_head(h)
            mu = pos + self.dynamics_head(torch.cat([h, onehots[:, t]], dim=-1))

            log_pt = torch.log_softmax(t_logits, dim=-1)
            log_lik = log_lik + log_pt.gather(1, modes[:, t : t + 1]).squeeze(1)
            sq = ((future[:, t] - mu) ** 2).sum(dim=-1)
            log_lik = log_lik - 0.5 * sq - LOG_2PI_2D

            t_logits_seq.append(t_logits)
            means.append(mu)
            delta = future[:, t] - pos
            pos, onehot = future[:, t], onehots[:, t]
        return {
            "log_likelihood": log_lik,
            "transition_logits": torch.stack(t_logits_seq, dim=1),
            "means": torch.stack(means, dim=1),
        }

    # ------------------------------------------------------------------ #
    # previously-generated-sample encoding
    # ------------------------------------------------------------------ #

    def sample_features(self, positions: torch.Tensor, onehots: torch.Tensor) -> torch.Tensor:
        """Encode one completed trajectory sample per batch row: (B, hidden)."""
        flat = torch.cat(
            [positions.flatten(1) * INPUT_POS_SCALE, onehots.flatten(1)], dim=-1
        )
        return self.sample_mlp(flat)

    def pool_sample_features(self, pooled_max: Optional[torch.Tensor]) -> Optional[torch.Tensor]:
        """Map the running max-pool of sample features to the proposal input."""
        if pooled_max is None:
            return None
        return self.sample_pool_mlp(pooled_max)


# ---------------------------------------------------------------------- #
# record batching
# ---------------------------------------------------------------------- #


def centerline_tangents(line: np.ndarray) -> np.ndarray:
    deltas = np.diff(line, axis=0)
    if len(deltas) == 0:
        return np.zeros_like(line)
    deltas = np.vstack([deltas, deltas[-1:]])
    norms = np.linalg.norm(deltas, axis=1, keepdims=True)
    return deltas / np.maximum(norms, 1e-9)


def initial_hybrid_state(
    record: SceneRecord, config: ModelConfig, thresholds: Optional[LabelThresholds] = None
) -> tuple[np.ndarray, int]:
    """Decoder start state: last observed position plus the auto-labeled tail mode.

    Auto-labels exist only for the default 5-mode vocabulary; other vocabulary
    sizes start from mode 0.
    """
    pos = record.observed[-1]
    mode = int(auto_label(record.observed, thresholds)[-1]) if config.vocab_size == 5 else 0
    return pos, mode


def collate_records(
    records: Sequence[SceneRecord],
    config: ModelConfig,
    dtype: torch.dtype = torch.float32,
    thresholds: Optional[LabelThresholds] = None,
) -> dict:
    """Stack records into padded tensors for batched encoding/decoding."""
    batch_size = len(records)
    observed = torch.as_tensor(np.stack([r.observed for r in records]), dtype=dtype)
    future = torch.as_tensor(np.stack([r.future for r in records]), dtype=dtype)
    modes = torch.as_tensor(np.stack([r.future_modes for r in records]), dtype=torch.long)

    n_lines = max((len(r.centerlines) for r in records), default=0)
    max_len = max((len(l) for r in records for l in r.centerlines), default=0)
    map_points = torch.zeros((batch_size, n_lines, max_len, 4), dtype=dtype)
    point_mask = torch.zeros((batch_size, n_lines, max_len), dtype=torch.bool)
    line_mask = torch.zeros((batch_size, n_lines), dtype=torch.bool)
    for i, record in enumerate(records):
        for j, line in enumerate(record.centerlines):
            feats = np.concatenate([line * INPUT_POS_SCALE, centerline_tangents(line)], axis=1)
            map_points[i, j, : len(line)] = torch.as_tensor(feats, dtype=dtype)
            point_mask[i, j, : len(line)] = True
            line_mask[i, j] = True

    init = [initial_hybrid_state(r, config, thresholds) for r in records]
    init_pos = torch.as_tensor(np.stack([p for p, _ in init]), dtype=dtype)
    init_modes = torch.as_tensor([m for _, m in init], dtype=torch.long)
    init_onehot = torch.nn.functional.one_hot(init_modes, config.vocab_size).to(dtype)
    init_delta = torch.as_tensor(
        np.stack([r.observed[-1] - r.observed[-2] for r in records]), dtype=dtype
    )
    return {
        "observed": observed,
        "future": future,
        "future_modes": modes,
        "map_points": map_points,
        "map_point_mask": point_mask,
        "map_line_mask": line_mask,
        "init_pos": init_pos,
        "init_onehot": init_onehot,
        "init_delta": init_delta,
    }


# ---------------------------------------------------------------------- #
# single-record operations
# ---------------------------------------------------------------------- #


def encode(record: SceneRecord, model: PhaModel) -> EncoderState:
    batch = collate_records([record], model.config, model.dtype)
    with torch.no_grad():
        state = model.encode_batch(batch)
    return EncoderState(
        h0=state.h0.squeeze(0), c0=state.c0.squeeze(0), step_encodings=state.step_encodings.squeeze(0)
    )


def encode_previous_samples(
    model: PhaModel, sequences: Sequence[HybridSequence]
) -> Optional[torch.Tensor]:
    """Max-pooled encoding of completed sequences; ``None`` when there are none."""
    if not sequences:
        return None
    cfg = model.config
    pooled = None
    for seq in sequences:
        pos = torch.as_tensor(np.array(seq.positions), dtype=model.dtype).unsqueeze(0)
        onehot = torch.nn.functional.one_hot(
            torch.as_tensor(seq.modes, dtype=torch.long), cfg.vocab_size
        ).to(model.dtype).unsqueeze(0)
        feat = model.sample_features(pos, onehot)
        pooled = feat if pooled is None else torch.maximum(pooled, feat)
    return model.pool_sample_features(pooled)


def decode_step(
    h_prev: torch.Tensor,
    c_prev: torch.Tensor,
    prev_state: tuple[np.ndarray, int],
    prev_samples_encoding: Optional[torch.Tensor],
    model: PhaModel,
    rng: Optional[torch.Generator] = None,
    greedy: bool = False,
) -> DecoderStep:
    """Single-record decoder step; ``prev_state`` is a (position, mode) pair."""
    pos, mode = prev_state
    cfg = model.config
    pos_t = torch.as_tensor(np.asarray(pos), dtype=model.dtype).unsqueeze(0)
    onehot = torch.nn.functional.one_hot(
        torch.as_tensor([int(mode)]), cfg.vocab_size
    ).to(model.dtype)
    enc = None
    if prev_samples_encoding is not None:
        enc = prev_samples_encoding.reshape(1, -1).to(model.dtype)
    with torch.no_grad():
        step = model.decode_step_batch(
            h_prev.reshape(1, -1), c_prev.reshape(1, -1), pos_t, onehot, enc,
            rng=rng, greedy=greedy,
        )
    return step


def rollout(
    record: SceneRecord,
    model: PhaModel,
    config: Optional[ModelConfig] = None,
    rng: Optional[torch.Generator] = None,
    prev_samples: Sequence[HybridSequence] = (),
    forced_mode: Optional[int] = None,
    greedy: bool = False,
) -> HybridSequence:
    """Generate one hybrid sequence for a scene, scored by transition/dynamics."""
    config = config or model.config
    was_training = model.training
    model.eval()
    try:
        batch = collate_records([record], config, model.dtype)
        with torch.no_grad():
            state = model.encode_batch(batch)
            enc = encode_previous_samples(model, prev_samples)
            forced = None
            if config.variant == "fixed_mode_baseline":
                forced = torch.as_tensor([forced_mode if forced_mode is not None else 0])
            elif forced_mode is not None:
                forced = torch.as_tensor([forced_mode])
            out = model.rollout_batch(
                state, batch["init_pos"], batch["init_onehot"], enc,
                rng=rng, greedy=greedy,
                forced_modes=forced, init_delta=batch["init_delta"],
            )
    finally:
        model.train(was_training)
    return HybridSequence(
        modes=out["mode_onehots"][0].argmax(dim=-1).numpy(),
        positions=out["positions"][0].numpy().astype(np.float64),
        log_likelihood=float(out["log_likelihood"][0]),
    )


def sequence_log_likelihood(
    record: SceneRecord,
    observed_future: tuple[np.ndarray, np.ndarray],
    model: PhaModel,
    config: Optional[ModelConfig] = None,
) -> float:
    """Teacher-forced log-likelihood of an arbitrary hybrid future sequence."""
    config = config or model.config
    o_x, o_z = observed_future
    probe = SceneRecord(
        scene_id=record.scene_id,
        observed=record.observed,
        future=o_x,
        future_modes=o_z,
        centerlines=record.centerlines,
    )
    was_training = model.training
    model.eval()
    try:
        batch = collate_records([probe], config, model.dtype)
        with torch.no_grad():
            state = model.encode_batch(batch)
            out = model.teacher_forced_batch(state, batch)
    finally:
        model.train(was_training)
    return float(out["log_likelihood"][0])


# ---------------------------------------------------------------------- #
# checkpoints
# ---------------------------------------------------------------------- #


def save_checkpoint(
    model: PhaModel, path: str, run_config: Optional[dict] = None, seed: Optional[int] = None
) -> None:
    from dataclasses import asdict

    payload = {
        "format_version": 1,
        "model_config": asdict(model.config),
        "state_dict": model.state_dict(),
        "run_config": run_config or {},
        "seed": seed,
    }
    torch.save(payload, path)


def load_checkpoint(path: str, expected_config: Optional[ModelConfig] = None) -> tuple[PhaModel, dict]:
    payload = torch.load(path, weights_only=False)
    stored = ModelConfig(**payload["model_config"])
    if expected_config is not None:
        from dataclasses import asdict

        if asdict(expected_config) != asdict(stored):
            raise CheckpointMismatchError(
                f"checkpoint config {asdict(stored)} does not match expected {asdict(expected_config)}"
            )
    model = PhaModel(stored)
    model.load_state_dict(payload["state_dict"], strict=True)
    model.eval()
    return model, payload
