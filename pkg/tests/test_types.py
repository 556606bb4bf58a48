import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import hybridtraj as ht
from hybridtraj.types import DimensionMismatchError, NonFiniteValueError, validate_record


def make_record(obs=20, fut=30, scene_id="s0", centerlines=1):
    rng = np.random.default_rng(0)
    return ht.SceneRecord(
        scene_id=scene_id,
        observed=rng.normal(0, 5, (obs, 2)),
        future=rng.normal(0, 5, (fut, 2)),
        future_modes=rng.integers(0, 5, fut),
        centerlines=[rng.normal(0, 5, (12, 2)) for _ in range(centerlines)],
    )


def test_validate_well_formed_returns_record():
    record = make_record()
    assert validate_record(record, ht.ModelConfig()) is record


def test_validate_wrong_future_length():
    record = make_record(fut=29)
    with pytest.raises(DimensionMismatchError, match="future"):
        validate_record(record, ht.ModelConfig())


def test_validate_wrong_observed_length():
    record = make_record(obs=19)
    with pytest.raises(DimensionMismatchError, match="observed"):
        validate_record(record, ht.ModelConfig())


def test_nan_position_rejected():
    future = np.zeros((30, 2))
    future[3, 1] = np.nan
    with pytest.raises(NonFiniteValueError, match="future"):
        ht.SceneRecord(
            scene_id="bad",
            observed=np.zeros((20, 2)),
            future=future,
            future_modes=np.zeros(30, dtype=int),
        )


def test_mode_outside_vocabulary_rejected():
    record = make_record()
    cfg = ht.ModelConfig(vocab_size=3)
    with pytest.raises(DimensionMismatchError, match="future_modes"):
        validate_record(record, cfg)


def test_validate_idempotent():
    record = make_record()
    cfg = ht.ModelConfig()
    once = validate_record(record, cfg)
    twice = validate_record(once, cfg)
    assert twice == record


def test_record_arrays_read_only():
    record = make_record()
    with pytest.raises(ValueError):
        record.future[0, 0] = 1.0
    with pytest.raises(ValueError):
        record.future_modes[0] = 1


positions = st.lists(
    st.tuples(
        st.floats(-1e6, 1e6, allow_nan=False, width=64),
        st.floats(-1e6, 1e6, allow_nan=False, width=64),
    ),
    min_size=2,
    max_size=12,
)


@settings(max_examples=40, deadline=None)
@given(obs=positions, fut=positions, data=st.data())
def test_serialization_round_trip(obs, fut, data):
    modes = data.draw(st.lists(st.integers(0, 4), min_size=len(fut), max_size=len(fut)))
    lines = data.draw(st.lists(positions, min_size=0, max_size=3))
    record = ht.SceneRecord(
        scene_id="roundtrip", observed=obs, future=fut, future_modes=modes, centerlines=lines
    )
    back = ht.SceneRecord.from_dict(record.to_dict())
    assert back == record
    import json

    again = ht.SceneRecord.from_dict(json.loads(record.to_json()))
    assert again == record


def test_hybrid_sequence_invariants():
    seq = ht.HybridSequence(modes=[0, 1], positions=[[0, 0], [1, 1]], log_likelihood=-3.0)
    assert len(seq) == 2
    assert seq.steps[1] == ht.HybridState(1, np.array([1.0, 1.0]))
    with pytest.raises(DimensionMismatchError):
        ht.HybridSequence(modes=[0], positions=[[0, 0], [1, 1]])
    with pytest.raises(NonFiniteValueError):
        ht.HybridSequence(modes=[0], positions=[[0, 0]], log_likelihood=float("nan"))


def test_model_config_invariants():
    with pytest.raises(ValueError):
        ht.ModelConfig(N=10, M=5)
    with pytest.raises(ValueError):
        ht.ModelConfig(K=0)
    with pytest.raises(ValueError):
        ht.ModelConfig(variant="nonsense")
    assert ht.ModelConfig(variant="single_mode").vocab_size == 1


def test_default_config_matches_reference_values():
    cfg = ht.ModelConfig()
    assert (cfg.vocab_size, cfg.horizon, cfg.obs_horizon) == (5, 30, 20)
    assert (cfg.K, cfg.M, cfg.N) == (6, 50, 6)
    assert (cfg.alpha, cfg.beta) == (1.0, 1.0)
    assert cfg.hidden_size == 32
    assert cfg.dropout == 0.1
