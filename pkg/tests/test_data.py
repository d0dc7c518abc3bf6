from __future__ import annotations

import gzip

import numpy as np
import pytest

from depthprune import nn
from depthprune.data import IdxError, gen_synthetic, load_idx, split, write_idx


def linear_probe_accuracy(ds, epochs=200):
    net = nn.mlp([2, ds.n_classes], seed=0)
    nn.train(net, *ds.xy, nn.TrainConfig(epochs=epochs, lr=0.05, seed=0))
    return nn.evaluate(net, *ds.xy)


def test_blobs_linearly_separable():
    ds = gen_synthetic("blobs", 1000, 0.0, seed=3)
    assert linear_probe_accuracy(ds, 30) == 1.0


def test_noisy_moons_not_linearly_separable():
    ds = gen_synthetic("moons", 1000, 0.2, seed=3)
    assert linear_probe_accuracy(ds) < 0.95


@pytest.mark.parametrize("kind", ["blobs", "moons", "rings"])
def test_synthetic_properties(kind):
    a = gen_synthetic(kind, 500, 0.1, seed=9)
    b = gen_synthetic(kind, 500, 0.1, seed=9)
    assert a.inputs.tobytes() == b.inputs.tobytes()
    assert np.bincount(a.labels).tolist() == [250, 250]
    np.testing.assert_allclose(a.inputs.mean(0), 0, atol=1e-6)
    np.testing.assert_allclose(a.inputs.std(0), 1, atol=1e-5)
    assert a.inputs.dtype == np.float32


def test_synthetic_errors():
    with pytest.raises(ValueError):
        gen_synthetic("spirals", 100)
    with pytest.raises(ValueError):
        gen_synthetic("blobs", 3)


def test_split_is_disjoint():
    ds = gen_synthetic("blobs", 200, 0.0, seed=0)
    ds.inputs[:, 0] = np.arange(200)  # tag each sample
    tr, va, te = split(ds, 0.2, 0.1, seed=1)
    ids = [set(d.inputs[:, 0].tolist()) for d in (tr, va, te)]
    assert (len(te), len(va), len(tr)) == (40, 16, 144)
    assert not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])
    assert (tr.split, va.split, te.split) == ("train", "val", "test")


@pytest.fixture
def idx_files(tmp_path):
    imgs = np.arange(4 * 3 * 5, dtype=np.uint8).reshape(4, 3, 5) * 4
    labels = np.array([3, 0, 9, 1], np.uint8)
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    write_idx(imgs, labels, ip, lp)
    return imgs, labels, ip, lp


def test_idx_round_trip(idx_files):
    imgs, labels, ip, lp = idx_files
    ds = load_idx(ip, lp, "train", 10)
    assert ds.inputs.shape == (4, 1, 3, 5)
    np.testing.assert_array_equal(ds.labels, labels)
    x = imgs.astype(np.float64) / 255
    np.testing.assert_allclose(ds.inputs[:, 0], (x - x.mean()) / x.std(), atol=1e-5)
    assert abs(ds.inputs.mean()) < 1e-3 and abs(ds.inputs.std() - 1) < 1e-3


def test_idx_header_bytes(idx_files):
    _, _, ip, lp = idx_files
    assert ip.read_bytes()[:16] == bytes.fromhex("00000803 00000004 00000003 00000005".replace(" ", ""))
    assert lp.read_bytes()[:8] == bytes.fromhex("0000080100000004")


def test_idx_gzip(idx_files, tmp_path):
    _, labels, ip, lp = idx_files
    gz = tmp_path / "img.idx.gz"
    gz.write_bytes(gzip.compress(ip.read_bytes()))
    assert load_idx(gz, lp, n_classes=10).inputs.shape == (4, 1, 3, 5)


def test_idx_truncated_names_offset(idx_files):
    _, _, ip, lp = idx_files
    ip.write_bytes(ip.read_bytes()[:30])
    with pytest.raises(IdxError, match="byte offset 30"):
        load_idx(ip, lp)


def test_idx_bad_magic(idx_files):
    _, _, ip, lp = idx_files
    with pytest.raises(IdxError, match="magic"):
        load_idx(lp, ip)


def test_idx_count_mismatch(idx_files, tmp_path):
    imgs, labels, ip, _ = idx_files
    lp2 = tmp_path / "short.idx"
    write_idx(imgs, labels[:3], tmp_path / "unused.idx", lp2)
    with pytest.raises(IdxError, match="4 images but 3 labels"):
        load_idx(ip, lp2)
