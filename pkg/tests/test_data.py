import struct
from pathlib import Path

import numpy as np
import pytest

from pwoa.data import (BatchPlan, Dataset, batches, load_csv, load_idx, one_hot, synth_blobs, write_csv,
                       write_idx)
from pwoa.errors import FormatError, InputError, ParameterError

FIX = Path(__file__).parent / "fixtures"

TINY_PIXELS = np.array([[0, 255, 128, 1], [10, 20, 30, 40], [255, 255, 0, 0]]) / 255.0
TINY_LABELS = [7, 0, 9]


@pytest.mark.parametrize("suffix", ["", ".gz"])
def test_idx_fixture_parses_exactly(suffix):
    ds = load_idx(FIX / f"tiny-images-idx3-ubyte{suffix}", FIX / f"tiny-labels-idx1-ubyte{suffix}", "test")
    np.testing.assert_array_equal(ds.inputs, TINY_PIXELS)
    assert ds.label_indices.tolist() == TINY_LABELS
    assert ds.num_classes == 10 and ds.split == "test"


def test_csv_fixture_parses_exactly():
    ds = load_csv(FIX / "tiny.csv", d=3, k=3)
    np.testing.assert_array_equal(ds.inputs, [[0.0, 0.5, 1.0], [0.25, 0.125, 0.1], [1.0, 0.0, 1 / 3]])
    assert ds.label_indices.tolist() == [2, 0, 1]


def test_idx_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (5, 3, 4), dtype=np.uint8)
    lab = rng.integers(0, 10, 5)
    write_idx(img, lab, tmp_path / "i", tmp_path / "l")
    ds = load_idx(tmp_path / "i", tmp_path / "l")
    np.testing.assert_array_equal(ds.inputs, img.reshape(5, 12) / 255.0)
    assert ds.label_indices.tolist() == lab.tolist()


def test_csv_roundtrip_is_exact(tmp_path):
    ds = synth_blobs(seed=2, n=30, d=3, k=3, margin=0.2)
    write_csv(ds, tmp_path / "a.csv")
    back = load_csv(tmp_path / "a.csv", 3, 3)
    np.testing.assert_array_equal(back.inputs, ds.inputs)
    np.testing.assert_array_equal(back.labels, ds.labels)


def test_idx_errors_carry_offsets(tmp_path):
    raw = (FIX / "tiny-images-idx3-ubyte").read_bytes()
    labels = FIX / "tiny-labels-idx1-ubyte"
    (tmp_path / "bad").write_bytes(struct.pack(">I", 0x801) + raw[4:])
    with pytest.raises(FormatError) as info:
        load_idx(tmp_path / "bad", labels)
    assert info.value.offset == 0
    (tmp_path / "short").write_bytes(raw[:-1])
    with pytest.raises(FormatError, match="truncated"):
        load_idx(tmp_path / "short", labels)
    (tmp_path / "lab").write_bytes(struct.pack(">2I", 0x801, 3) + bytes([1, 12, 0]))
    with pytest.raises(FormatError) as info:
        load_idx(FIX / "tiny-images-idx3-ubyte", tmp_path / "lab")
    assert info.value.offset == 9


def test_csv_errors_carry_line_numbers(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("0.1,0.2,1\n0.1,1.5,0\n")
    with pytest.raises(FormatError) as info:
        load_csv(p, 2, 2)
    assert info.value.line == 2
    p.write_text("0.1,0\n")
    with pytest.raises(FormatError) as info:
        load_csv(p, 2, 2)
    assert info.value.line == 1


def test_dataset_validation():
    with pytest.raises(InputError):
        Dataset(np.array([[1.5]]), one_hot([0], 2))
    with pytest.raises(InputError):
        Dataset(np.array([[0.5]]), np.array([[1.0, 1.0]]))
    ds = Dataset(np.zeros((3, 2)), one_hot([0, 1, 1], 2))
    with pytest.raises(ValueError):
        ds.inputs[0, 0] = 1.0


def test_synth_blobs_is_deterministic_and_balanced():
    a = synth_blobs(seed=5, n=90, d=3, k=3, margin=0.4)
    b = synth_blobs(seed=5, n=90, d=3, k=3, margin=0.4)
    np.testing.assert_array_equal(a.inputs, b.inputs)
    assert np.bincount(a.label_indices).tolist() == [30, 30, 30]
    assert a.inputs.min() >= 0 and a.inputs.max() <= 1
    with pytest.raises(ParameterError):
        synth_blobs(seed=0, n=10, d=2, k=2, margin=1.0)


def test_batches_cover_each_row_once():
    ds = synth_blobs(seed=0, n=50, d=2, k=2, margin=0.1)
    idx = np.concatenate([i for _, _, i in batches(ds, BatchPlan(16, 3), epoch=2)])
    assert sorted(idx.tolist()) == list(range(50))
    dropped = [len(i) for _, _, i in batches(ds, BatchPlan(16, 3, drop_last=True), epoch=2)]
    assert dropped == [16, 16, 16]
    other = np.concatenate([i for _, _, i in batches(ds, BatchPlan(16, 3), epoch=3)])
    assert not np.array_equal(idx, other)
    with pytest.raises(ParameterError):
        BatchPlan(1)
