import json
import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from donnsim import UsageError
from donnsim.data_io import (
    MNIST_SHA256,
    IdxParseError,
    MnistSet,
    ReportVersionError,
    RunReport,
    encode_idx,
    load_idx,
    load_mnist,
    mnist_dir,
    parse_idx,
    read_report,
    sha256_file,
    write_idx,
    write_report,
)


def idx_oracle(a: np.ndarray) -> bytes:
    """Independent IDX writer: magic, big-endian dims, raw bytes."""
    out = bytearray([0, 0, 0x08, a.ndim])
    for d in a.shape:
        out += d.to_bytes(4, "big")
    out += bytes(a.ravel().tolist())
    return bytes(out)


@settings(max_examples=30)
@given(arrays(np.uint8, st.tuples(st.integers(0, 5), st.integers(1, 4), st.integers(1, 4))))
def test_images_round_trip(a):
    assert encode_idx(a) == idx_oracle(a)
    assert np.array_equal(parse_idx(idx_oracle(a)), a)


@settings(max_examples=30)
@given(arrays(np.uint8, st.integers(0, 50), elements=st.integers(0, 9)))
def test_labels_round_trip(a):
    assert encode_idx(a) == idx_oracle(a)
    assert np.array_equal(parse_idx(idx_oracle(a)), a)


def test_file_round_trip_and_max_items(tmp_path):
    a = np.arange(5 * 2 * 3, dtype=np.uint8).reshape(5, 2, 3)
    write_idx(a, tmp_path / "x.idx")
    assert (tmp_path / "x.idx").read_bytes() == idx_oracle(a)
    assert np.array_equal(load_idx(tmp_path / "x.idx", max_items=2), a[:2])
    assert load_idx(tmp_path / "x.idx", max_items=50).shape == (5, 2, 3)


def test_bad_magic():
    raw = struct.pack(">II", 0x00000802, 0)
    with pytest.raises(IdxParseError, match="byte 0: bad magic"):
        parse_idx(raw)


def test_truncated_file_names_lengths(tmp_path):
    raw = idx_oracle(np.zeros((3, 2, 2), np.uint8))[:-1]
    (tmp_path / "t.idx").write_bytes(raw)
    with pytest.raises(IdxParseError, match=f"expected {len(raw) + 1} bytes.*got {len(raw)}") as ei:
        load_idx(tmp_path / "t.idx")
    assert ei.value.offset == len(raw)
    with pytest.raises(IdxParseError):
        parse_idx(b"\x00\x00")
    with pytest.raises(IdxParseError):
        parse_idx(struct.pack(">I", 0x803) + b"\x00\x00\x00\x01")


def test_trailing_bytes_rejected():
    with pytest.raises(IdxParseError):
        parse_idx(idx_oracle(np.zeros(3, np.uint8)) + b"\x00")


def test_missing_file(tmp_path):
    with pytest.raises(UsageError, match="cannot read"):
        load_idx(tmp_path / "nope")
    with pytest.raises(UsageError, match="not found"):
        load_mnist("test", tmp_path)


def test_mnist_set_invariants():
    with pytest.raises(UsageError):
        MnistSet(np.zeros((2, 28, 28), np.uint8), np.zeros(3, np.uint8), "test")
    with pytest.raises(UsageError):
        MnistSet(np.zeros((1, 28, 28), np.uint8), np.array([10], np.uint8), "test")


def test_mnist_dir_env(monkeypatch, tmp_path):
    monkeypatch.setenv("DONNSIM_MNIST_DIR", str(tmp_path))
    assert mnist_dir() == tmp_path
    assert mnist_dir("/x") == type(tmp_path)("/x")


@pytest.fixture(scope="module")
def mnist_test_dir():
    d = mnist_dir()
    if not (d / "t10k-images-idx3-ubyte").exists():
        pytest.skip(f"MNIST IDX files not present in {d}")
    return d


def test_official_test_set(mnist_test_dir):
    full = load_mnist("test", mnist_test_dir)
    assert full.images.shape == (10000, 28, 28) and len(full) == 10000
    head = load_mnist("test", mnist_test_dir, max_items=500)
    assert head.images.shape == (500, 28, 28)
    assert np.array_equal(head.images, full.images[:500])
    assert head.labels[:5].tolist() == [7, 2, 1, 0, 4]


def test_mnist_checksums(mnist_test_dir):
    for name, digest in MNIST_SHA256.items():
        assert sha256_file(mnist_test_dir / name) == digest


# --- reports ----------------------------------------------------------------

def _report(**kw):
    base = dict(command="ber", config={"n_p": 100, "nested": {"xi": 0.19}}, seed=7, version="0.1.0",
                created="2026-01-01T00:00:00Z", wall_clock_s=1.5, accuracy=0.1 + 0.2)
    base.update(kw)
    return RunReport(**base)


def test_report_round_trip(tmp_path):
    r = _report(confusion_matrix=[[1, 0], [0, 1]], energy={"e": 1e-15 / 3},
                output_scores=np.full((2, 2), 1 / 3), results={"values": [math.pi, 2.0**-1074]})
    write_report(r, tmp_path / "r.json")
    back = read_report(tmp_path / "r.json")
    assert back.to_dict() == r.to_dict()
    assert back.accuracy == 0.1 + 0.2
    assert back.energy["e"] == 1e-15 / 3
    assert back.results["values"][1] == 2.0**-1074


def test_optional_fields_absent(tmp_path):
    write_report(_report(), tmp_path / "r.json")
    d = json.loads((tmp_path / "r.json").read_text())
    assert "confusion_matrix" not in d and "ber" not in d
    assert d["schema_version"] == 1


def test_schema_version_mismatch(tmp_path):
    d = _report().to_dict()
    d["schema_version"] = 99
    (tmp_path / "r.json").write_text(json.dumps(d))
    with pytest.raises(ReportVersionError, match="99"):
        read_report(tmp_path / "r.json")


def test_report_io_errors_name_path(tmp_path):
    with pytest.raises(OSError, match="missing.json"):
        read_report(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(UsageError, match="bad.json"):
        read_report(tmp_path / "bad.json")


def test_comparable_drops_timestamps():
    a = _report(created="a", wall_clock_s=1.0)
    b = _report(created="b", wall_clock_s=2.0)
    assert a.comparable() == b.comparable() and a.to_dict() != b.to_dict()
