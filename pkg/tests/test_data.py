import struct

import numpy as np
import pytest

from kritensor import data as D
from kritensor.errors import ConfigError, FormatError


def cifar_record(label: int, fill) -> bytes:
    return bytes([label]) + bytes(fill)


def test_cifar_two_records(tmp_path):
    px0 = [(i * 7) % 256 for i in range(3072)]
    px1 = [255 - (i % 256) for i in range(3072)]
    (tmp_path / "b.bin").write_bytes(cifar_record(3, px0) + cifar_record(7, px1))
    ds = D.import_cifar([tmp_path / "b.bin"])
    assert len(ds) == 2 and ds.labels.tolist() == [3, 7]
    assert ds.geometry == (32, 32, 3)
    expected = np.array([px0, px1], dtype=np.float32) / np.float32(255)
    assert np.array_equal(ds.images.astype(np.float32), expected)
    # channel planes stay in (R, G, B) order: pixel 1024 is the first green value
    assert ds.images[0, 1024] == pytest.approx(px0[1024] / 255)
    assert ds.images[1, 0] == 1.0


def test_cifar_malformed():
    with pytest.raises(FormatError):
        D.parse_cifar_batch(b"\x01" * 3000)
    with pytest.raises(FormatError):
        D.parse_cifar_batch(b"")
    with pytest.raises(FormatError, match="label"):
        D.parse_cifar_batch(bytes([10]) + bytes(3072))


def test_krid_round_trip(tmp_path):
    ds = D.make_blobs(10, 2, (2, 3, 1), seed=1)
    D.save_krid(ds, tmp_path / "d.krid")
    raw = (tmp_path / "d.krid").read_bytes()
    assert struct.unpack_from("<4sH4I", raw) == (b"KRID", 1, 10, 2, 3, 1)
    back = D.load_krid(tmp_path / "d.krid")
    assert np.array_equal(back.images, ds.images.astype(np.float32).astype(np.float64))
    assert back.labels.tolist() == ds.labels.tolist()
    assert D.krid_bytes(back) == raw


def test_krid_rejects_bad_input():
    raw = D.krid_bytes(D.make_blobs(4, 2, (1, 2, 1), seed=0))
    for bad in (b"XXXX" + raw[4:], raw[:-1], raw + b"\0", raw[:10], raw[:4] + b"\2\0" + raw[6:]):
        with pytest.raises(FormatError):
            D.parse_krid(bad)


def test_dataset_validation():
    with pytest.raises(FormatError):
        D.LabeledDataset(np.array([[1.5]]), np.array([0]), (1, 1, 1))
    with pytest.raises(FormatError):
        D.LabeledDataset(np.zeros((2, 1)), np.array([0, 1]), (1, 1, 1), ["a", "a"])
    with pytest.raises(FormatError):
        D.LabeledDataset(np.zeros((2, 3)), np.array([0, 1]), (1, 2, 1))
    ds = D.LabeledDataset(np.zeros((3, 1)), np.array([0, 1, 0]), (1, 1, 1), ["a", "b", "c"])
    assert ds.subset(["c", "a"]).sample_ids == ["c", "a"]
    with pytest.raises(ConfigError):
        ds.subset(["z"])


def test_blobs_deterministic_and_balanced():
    a = D.make_blobs(101, 3, (4, 4, 1), seed=9)
    b = D.make_blobs(101, 3, (4, 4, 1), seed=9)
    assert D.krid_bytes(a) == D.krid_bytes(b)
    counts = np.bincount(a.labels)
    assert counts.max() - counts.min() <= 1
    assert D.krid_bytes(D.make_blobs(101, 3, (4, 4, 1), seed=10)) != D.krid_bytes(a)


def test_rings_in_range_and_balanced():
    ds = D.make_rings(50, 2, (3, 3, 1), seed=2)
    assert ds.images.min() >= 0 and ds.images.max() <= 1
    assert np.bincount(ds.labels).tolist() == [25, 25]


def test_synthetic_argument_checks():
    with pytest.raises(ConfigError):
        D.make_blobs(1, 2, (2, 2, 1), seed=0)
    with pytest.raises(ConfigError):
        D.make_blobs(10, 1, (2, 2, 1), seed=0)
    with pytest.raises(ConfigError):
        D.make_rings(10, 2, (0, 2, 1), seed=0)
