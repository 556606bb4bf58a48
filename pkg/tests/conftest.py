import numpy as np
import pytest
import torch

import hybridtraj as ht
from hybridtraj.training import OptimizerConfig, train

torch.set_num_threads(2)


TINY_MIX = {
    "lane_follow": 0.25,
    "lane_change_mid_horizon": 0.25,
    "turn_after_follow": 0.25,
    "decelerate_to_stop": 0.25,
}


@pytest.fixture(scope="session")
def tiny_config():
    return ht.ModelConfig(hidden_size=8, K=2, M=6, N=3)


@pytest.fixture(scope="session")
def default_records():
    return ht.generate_synthetic(16, 101, TINY_MIX)


@pytest.fixture(scope="session")
def trained_tiny_model(default_records):
    """A briefly trained small model on default-shaped scenes (shared)."""
    records = ht.generate_synthetic(60, 202, TINY_MIX)
    cfg = ht.ModelConfig(hidden_size=16, K=2, M=6, N=3)
    model, log = train(
        records, cfg, OptimizerConfig(epochs=4, batch_size=32, patience=10), seed=5
    )
    return model


def make_sample_set(rng, m, horizon=6, spread=8.0):
    """Random SampleSet with Gaussian endpoints and random likelihoods."""
    from hybridtraj.selection import SampleSet

    sequences = []
    for _ in range(m):
        positions = np.cumsum(rng.normal(0.0, spread / horizon, (horizon, 2)), axis=0)
        modes = rng.integers(0, 5, horizon)
        sequences.append(
            ht.HybridSequence(
                modes=modes, positions=positions, log_likelihood=float(rng.normal(-50, 5))
            )
        )
    return SampleSet(sequences=sequences)
