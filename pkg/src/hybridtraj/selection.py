"""Inference-time sample generation and final-set selection.

``generate_samples`` draws M weighted hybrid sequences per scene, each
conditioned on a pooled encoding of the previously generated ones. The
selectors reduce the M samples to N final predictions:

  - farthest-point selection: start from the most likely sample, then
    repeatedly take the sample whose endpoint is farthest from the already
    selected endpoints (greedy max-min dispersion, a 2-approximation);
  - non-maximum suppression: accept samples in likelihood order whose
    endpoint clears a distance threshold, filling randomly if short;
  - most-likely and likelihood-weighted random selection as baselines.

Selected probabilities renormalize the model likelihoods over the chosen
subset; selection never rescores or fabricates sequences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from .model import PhaModel, collate_records
from .types import HybridSequence, ModelConfig, SceneRecord


@dataclass
class SampleSet:
    """M generated sequences, in the order their proposals were conditioned."""

    sequences: list[HybridSequence]
    generation_order: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.generation_order:
            self.generation_order = list(range(len(self.sequences)))
        lengths = {len(s) for s in self.sequences}
        if len(lengths) > 1:
            raise ValueError(f"sequences have mixed horizons: {sorted(lengths)}")
        for i, seq in enumerate(self.sequences):
            if seq.log_likelihood is None:
                raise ValueError(f"sequence {i} has no log_likelihood")

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def log_likelihoods(self) -> np.ndarray:
        return np.array([s.log_likelihood for s in self.sequences])

    @property
    def endpoints(self) -> np.ndarray:
        return np.stack([s.endpoint for s in self.sequences])


@dataclass
class SelectionResult:
    selected: list[HybridSequence]
    probabilities: np.ndarray

    def __post_init__(self) -> None:
        probs = np.asarray(self.probabilities, dtype=np.float64)
        if probs.shape != (len(self.selected),):
            raise ValueError("probabilities must align with selected sequences")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("probabilities must be non-negative and sum to 1")
        self.probabilities = probs


def _renormalized_probabilities(log_likelihoods: np.ndarray) -> np.ndarray:
    shifted = log_likelihoods - log_likelihoods.max()
    weights = np.exp(shifted)
    probs = weights / weights.sum()
    return probs / probs.sum()


def _result_from_indices(sample_set: SampleSet, indices: Sequence[int]) -> SelectionResult:
    selected = [sample_set.sequences[i] for i in indices]
    probs = _renormalized_probabilities(np.array([s.log_likelihood for s in selected]))
    return SelectionResult(selected=selected, probabilities=probs)


def _check_n(sample_set: SampleSet, n: int) -> None:
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > len(sample_set):
        raise ValueError(f"cannot select n={n} from {len(sample_set)} samples")


def generate_samples(
    record: SceneRecord,
    model: PhaModel,
    config: Optional[ModelConfig] = None,
    rng: Optional[torch.Generator] = None,
    greedy: bool = False,
) -> SampleSet:
    """Sequentially generate M weighted samples for one scene."""
    sets = generate_samples_batch([record], model, config=config, rng=rng, greedy=greedy)
    return sets[0]


def generate_samples_batch(
    records: Sequence[SceneRecord],
    model: PhaModel,
    config: Optional[ModelConfig] = None,
    rng: Optional[torch.Generator] = None,
    greedy: bool = False,
) -> list[SampleSet]:
    """Generate M samples per scene, batched across scenes.

    Sampling within a scene stays sequential (sample k conditions on samples
    1..k-1); only the across-scene dimension is vectorized.
    """
    cfg = config or model.config
    was_training = model.training
    model.eval()
    try:
        batch = collate_records(records, cfg, model.dtype)
        n = len(records)
        all_positions, all_modes, all_ll = [], [], []
        with torch.no_grad():
            state = model.encode_batch(batch)
            pooled = None
            for k in range(cfg.M):
                enc = model.pool_sample_features(pooled)
                forced = None
                if cfg.variant == "fixed_mode_baseline":
                    forced = torch.full((n,), k % cfg.vocab_size, dtype=torch.long)
                out = model.rollout_batch(
                    state, batch["init_pos"], batch["init_onehot"], enc,
                    rng=rng, greedy=greedy, forced_modes=forced,
                    init_delta=batch["init_delta"],
                )
                all_positions.append(out["positions"])
                all_modes.append(out["mode_onehots"].argmax(dim=-1))
                all_ll.append(out["log_likelihood"])
                feat = model.sample_features(out["positions"], out["mode_onehots"])
                pooled = feat if pooled is None else torch.maximum(pooled, feat)
    finally:
        model.train(was_training)

    results = []
    for i in range(len(records)):
        sequences = [
            HybridSequence(
                modes=all_modes[k][i].numpy(),
                positions=all_positions[k][i].numpy().astype(np.float64),
                log_likelihood=float(all_ll[k][i]),
            )
            for k in range(cfg.M)
        ]
        results.append(SampleSet(sequences=sequences))
    return results


def select_fps(sample_set: SampleSet, n: int) -> SelectionResult:
    """Farthest-point selection over sample endpoints.

    The first pick is the most likely sample; each next pick maximizes the
    minimum endpoint distance to the already selected ones. Ties break by
    higher likelihood, then lower index.
    """
    _check_n(sample_set, n)
    lls = sample_set.log_likelihoods
    endpoints = sample_set.endpoints
    m = len(sample_set)

    first = max(range(m), key=lambda i: (lls[i], -i))
    selected = [first]
    min_dist = np.linalg.norm(endpoints - endpoints[first], axis=1)
    while len(selected) < n:
        chosen = None
        for i in range(m):
            if i in selected:
                continue
            key = (min_dist[i], lls[i], -i)
            if chosen is None or key > chosen[0]:
                chosen = (key, i)
        idx = chosen[1]
        selected.append(idx)
        min_dist = np.minimum(min_dist, np.linalg.norm(endpoints - endpoints[idx], axis=1))
    return _result_from_indices(sample_set, selected)


def select_nms(
    sample_set: SampleSet,
    n: int,
    threshold_m: float,
    rng: Optional[np.random.Generator] = None,
) -> SelectionResult:
    """Greedy suppression by endpoint distance, in descending likelihood order.

    If fewer than n samples survive suppression, the remainder is filled
    uniformly at random from the rejected samples.
    """
    _check_n(sample_set, n)
    if threshold_m <= 0:
        raise ValueError("threshold_m must be > 0")
    rng = rng if rng is not None else np.random.default_rng(0)
    lls = sample_set.log_likelihoods
    endpoints = sample_set.endpoints

    order = sorted(range(len(sample_set)), key=lambda i: (-lls[i], i))
    accepted: list[int] = []
    rejected: list[int] = []
    for i in order:
        if len(accepted) == n:
            rejected.append(i)
            continue
        dists = [np.linalg.norm(endpoints[i] - endpoints[j]) for j in accepted]
        if all(d >= threshold_m for d in dists):
            accepted.append(i)
        else:
            rejected.append(i)
    if len(accepted) < n:
        fill = rng.choice(len(rejected), size=n - len(accepted), replace=False)
        accepted.extend(rejected[int(i)] for i in fill)
    return _result_from_indices(sample_set, accepted)


def select_most_likely(sample_set: SampleSet, n: int) -> SelectionResult:
    _check_n(sample_set, n)
    lls = sample_set.log_likelihoods
    order = sorted(range(len(sample_set)), key=lambda i: (-lls[i], i))
    return _result_from_indices(sample_set, order[:n])


def select_random(
    sample_set: SampleSet, n: int, rng: Optional[np.random.Generator] = None
) -> SelectionResult:
    """Draw n samples without replacement, weighted by normalized likelihood."""
    _check_n(sample_set, n)
    rng = rng if rng is not None else np.random.default_rng(0)
    weights = _renormalized_probabilities(sample_set.log_likelihoods)
    indices = rng.choice(len(sample_set), size=n, replace=False, p=weights)
    return _result_from_indices(sample_set, [int(i) for i in indices])


SELECTORS = ("fps", "nms", "most_likely", "random")


def select(
    sample_set: SampleSet,
    n: int,
    method: str,
    nms_threshold_m: float = 2.0,
    rng: Optional[np.random.Generator] = None,
) -> SelectionResult:
    """Dispatch to a selector by name."""
    if method == "fps":
        return select_fps(sample_set, n)
    if method == "nms":
        return select_nms(sample_set, n, nms_threshold_m, rng=rng)
    if method == "most_likely":
        return select_most_likely(sample_set, n)
    if method == "random":
        return select_random(sample_set, n, rng=rng)
    raise ValueError(f"unknown selection method {method!r}; expected one of {SELECTORS}")
