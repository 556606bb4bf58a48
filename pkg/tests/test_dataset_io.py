import numpy as np
import pytest

import hybridtraj as ht
from hybridtraj import dataset_io
from hybridtraj.dataset_io import MalformedLineError, read_dataset, write_dataset


def test_write_read_round_trip(tmp_path, default_records):
    path = str(tmp_path / "data.jsonl")
    write_dataset(default_records[:10], path)
    back = read_dataset(path)
    assert back == list(default_records[:10])


def test_round_trip_preserves_float_bits(tmp_path):
    rng = np.random.default_rng(3)
    record = ht.SceneRecord(
        scene_id="bits",
        observed=rng.normal(0, 1e3, (4, 2)) * np.pi,
        future=rng.normal(0, 1e-7, (5, 2)),
        future_modes=[0, 1, 2, 3, 4],
    )
    path = str(tmp_path / "bits.jsonl")
    write_dataset([record], path)
    (back,) = read_dataset(path)
    np.testing.assert_array_equal(back.observed, record.observed)
    np.testing.assert_array_equal(back.future, record.future)


def test_truncated_line_names_line_number(tmp_path, default_records):
    path = str(tmp_path / "broken.jsonl")
    write_dataset(default_records[:3], path)
    with open(path) as fh:
        lines = fh.readlines()
    lines[1] = lines[1][: len(lines[1]) // 2] + "\n"
    with open(path, "w") as fh:
        fh.writelines(lines)
    with pytest.raises(MalformedLineError, match="line 2"):
        read_dataset(path)


def test_missing_key_reports_line(tmp_path):
    path = str(tmp_path / "short.jsonl")
    with open(path, "w") as fh:
        fh.write('{"scene_id": "x"}\n')
    with pytest.raises(MalformedLineError, match="line 1"):
        read_dataset(path)


def test_empty_file(tmp_path):
    path = str(tmp_path / "empty.jsonl")
    open(path, "w").close()
    assert read_dataset(path) == []


def test_meta_sidecar(tmp_path, default_records):
    path = str(tmp_path / "with_meta.jsonl")
    meta = {"config": {"model": {"K": 6}}, "seed": 9}
    write_dataset(default_records[:2], path, meta=meta)
    assert dataset_io.read_meta(path) == meta
    assert (tmp_path / "with_meta.jsonl.meta.json").exists()
