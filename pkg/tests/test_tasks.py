import gzip
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lamaml.algorithms import TrainerConfig, run_training
from lamaml.errors import BadMagicError, CountMismatchError, DataError, TruncatedFileError
from lamaml.metrics import retained_accuracy
from lamaml.rng import seeded_rng
from lamaml.tasks import (
    Example,
    TaskStream,
    Task,
    load_idx,
    make_permutation_tasks,
    make_rotation_tasks,
    make_synthetic_tasks,
    read_idx_arrays,
    rotate_images,
    rotation_angles,
    stream_batches,
    write_idx,
)


def idx_bytes(magic, dims, payload):
    return struct.pack(">I", magic) + struct.pack(f">{len(dims)}I", *dims) + bytes(payload)


@pytest.fixture
def tiny_idx(tmp_path):
    pixels = list(range(0, 18 * 14, 14))  # 2 images x 3 x 3, all values < 256
    img = tmp_path / "img.idx"
    lab = tmp_path / "lab.idx"
    img.write_bytes(idx_bytes(0x803, (2, 3, 3), pixels))
    lab.write_bytes(idx_bytes(0x801, (2,), [7, 2]))
    return img, lab, np.array(pixels, dtype=float).reshape(2, 9) / 255.0


# ---------------------------------------------------------------- IDX


def test_idx_round_trip(tiny_idx):
    img, lab, expect = tiny_idx
    data = load_idx(img, lab)
    assert [y for _, y in data] == [7, 2]
    assert np.array_equal(np.stack([x for x, _ in data]), expect)


def test_idx_gzip_and_writer(tmp_path, rng):
    images = rng.integers(0, 256, size=(4, 5, 6), dtype=np.uint8)
    labels = np.array([0, 9, 3, 3], dtype=np.uint8)
    for compress in (False, True):
        ip, lp = tmp_path / f"i{compress}", tmp_path / f"l{compress}"
        write_idx(images, labels, ip, lp, compress=compress)
        X, y = read_idx_arrays(ip, lp)
        assert np.array_equal(X, images.reshape(4, 30) / 255.0)
        assert y.tolist() == labels.tolist()
    assert gzip.decompress((tmp_path / "iTrue").read_bytes()) == (tmp_path / "iFalse").read_bytes()


def test_idx_bad_magic(tiny_idx, tmp_path):
    img, _, _ = tiny_idx
    bad = tmp_path / "bad.idx"
    bad.write_bytes(idx_bytes(0x803, (2,), [1, 2]))  # labels file carrying the images magic
    with pytest.raises(BadMagicError):
        read_idx_arrays(img, bad)


def test_idx_count_mismatch(tmp_path):
    img, lab = tmp_path / "i", tmp_path / "l"
    img.write_bytes(idx_bytes(0x803, (5, 2, 2), [0] * 20))
    lab.write_bytes(idx_bytes(0x801, (4,), [0] * 4))
    with pytest.raises(CountMismatchError):
        read_idx_arrays(img, lab)


def test_idx_truncated(tiny_idx, tmp_path):
    img, lab, _ = tiny_idx
    short = tmp_path / "short.idx"
    short.write_bytes(img.read_bytes()[:-3])
    with pytest.raises(TruncatedFileError):
        read_idx_arrays(short, lab)
    stub = tmp_path / "stub.idx"
    stub.write_bytes(b"\x00\x00")
    with pytest.raises(TruncatedFileError):
        read_idx_arrays(stub, lab)


def test_idx_errors_are_distinct():
    assert len({BadMagicError, TruncatedFileError, CountMismatchError}) == 3
    assert not issubclass(BadMagicError, TruncatedFileError)
    assert not issubclass(CountMismatchError, BadMagicError)


# ---------------------------------------------------------------- permutations


def toy_base(n=300, d=16, seed=0):
    r = np.random.default_rng(seed)
    return r.random((n, d)), r.integers(0, 10, n)


def test_single_permutation_task_is_subsampled_base():
    X, y = toy_base()
    ts = make_permutation_tasks((X, y), 1, 50, rng=np.random.default_rng(1))
    task = ts.tasks[0]
    order = np.random.default_rng(1).permutation(len(X))
    assert np.array_equal(task.train_arrays[0], X[order[:50]])
    assert task.train_arrays[1].tolist() == y[order[:50]].tolist()


def test_permutations_are_bijections_and_invertible():
    X, y = toy_base()
    ts = make_permutation_tasks((X, y), 4, 30, rng=np.random.default_rng(2))
    assert np.array_equal(ts.tasks[0].transform["perm"], np.arange(16))
    for t in ts.tasks:
        perm = t.transform["perm"]
        assert np.array_equal(np.sort(perm), np.arange(16))
        inv = np.argsort(perm)
        x = t.train[0].x
        assert np.array_equal(x[inv][perm], x)


def test_tasks_are_disjoint_and_labelled():
    X, y = toy_base(n=400)
    ts = make_permutation_tasks((X, y), 5, 40, rng=np.random.default_rng(3))
    # the base rows are distinct random vectors, so identity of rows identifies base indices
    seen = set()
    for t in ts.tasks:
        inv = np.argsort(t.transform["perm"])
        assert all(e.task_id == t.id for e in t.train + t.test)
        for e in t.train + t.test:
            key = e.x[inv].tobytes()
            assert key not in seen
            seen.add(key)


def test_paper_sizing(mnist_base):
    ts = make_permutation_tasks(mnist_base, 20, 200, rng=seeded_rng(0, "tasks"))
    assert len(ts) == 20
    assert all(len(t.train) == 200 for t in ts.tasks)
    assert all(len(t.test) >= 1 for t in ts.tasks)


def test_insufficient_data():
    with pytest.raises(DataError):
        make_permutation_tasks(toy_base(n=100), 5, 20)


def test_test_fraction():
    ts = make_permutation_tasks(toy_base(n=300), 2, 100, test_frac=0.25, rng=np.random.default_rng(0))
    assert [len(t.test) for t in ts.tasks] == [25, 25]


# ---------------------------------------------------------------- rotations


def test_angle_schedule():
    assert rotation_angles(5) == [0.0, 45.0, 90.0, 135.0, 180.0]
    assert rotation_angles(1) == [0.0]


def test_zero_rotation_is_exact(rng):
    X = rng.random((3, 784))
    assert np.array_equal(rotate_images(X, 0.0), X)


def test_half_turn_reverses_indices():
    img = np.arange(1.0, 10.0)  # asymmetric 3x3
    out = rotate_images(img, 180.0, 3, 3)
    assert np.array_equal(out, img[::-1])


def test_quarter_turn_matches_coordinate_map():
    img = np.arange(16.0).reshape(4, 4)
    out = rotate_images(img.ravel(), 90.0, 4, 4).reshape(4, 4)
    # counter-clockwise quarter turn about the centre
    assert np.allclose(out, np.rot90(img), atol=1e-12)


def _in_frame_disc(side=28, radius=12.5):
    r, c = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    return (((r - 13.5) ** 2 + (c - 13.5) ** 2) <= radius**2).ravel()


def test_rotation_round_trip_blob():
    r, c = np.meshgrid(np.arange(28), np.arange(28), indexing="ij")
    blob = np.exp(-((r - 13.5) ** 2 + (c - 11.0) ** 2) / 18.0).ravel()
    for angle in (10.0, 33.0, 45.0, 75.0, 120.0):
        back = rotate_images(rotate_images(blob, angle), -angle)
        assert np.max(np.abs(back - blob)) <= 0.15


def test_rotation_round_trip_smoothed_digits(mnist_base):
    from scipy import ndimage

    X = np.stack([ndimage.gaussian_filter(x.reshape(28, 28), 1.0).ravel() for x in mnist_base[0][:50]])
    disc = _in_frame_disc()
    for angle in (10.0, 33.0, 45.0, 75.0):
        back = rotate_images(rotate_images(X, angle), -angle)
        # corners rotate out of the frame and come back as zeros, so only the inscribed disc is compared
        assert np.max(np.abs(back - X)[:, disc]) <= 0.15


def test_rotation_stream(mnist_base):
    ts = make_rotation_tasks(mnist_base, 3, 50, rng=np.random.default_rng(0))
    assert [t.transform["angle"] for t in ts.tasks] == [0.0, 90.0, 180.0]
    X0 = ts.tasks[0].train_arrays[0]
    order = np.random.default_rng(0).permutation(len(mnist_base[0]))
    assert np.array_equal(X0, mnist_base[0][order[:50]])


# ---------------------------------------------------------------- synthetic


def test_synthetic_is_deterministic():
    a = make_synthetic_tasks(3, 4, 5, 20, 2.0, seeded_rng(3, "tasks"))
    b = make_synthetic_tasks(3, 4, 5, 20, 2.0, seeded_rng(3, "tasks"))
    for ta, tb in zip(a.tasks, b.tasks):
        assert np.array_equal(ta.train_arrays[0], tb.train_arrays[0])
        assert np.array_equal(ta.test_arrays[1], tb.test_arrays[1])


def _train_online(ts, seed=0):
    cfg = TrainerConfig(algorithm="online", lr=0.1, hidden=(16,), glances=3)
    return run_training(ts.with_protocol(glances=3), cfg, seed)


def test_separable_limit():
    ts = make_synthetic_tasks(1, 3, 2, 300, 100.0, seeded_rng(0, "tasks"))
    assert retained_accuracy(_train_online(ts)) >= 99.0


def test_indistinguishable_classes():
    ts = make_synthetic_tasks(1, 4, 2, 300, 0.0, seeded_rng(0, "tasks"), n_test=2000)
    assert abs(retained_accuracy(_train_online(ts)) / 100 - 0.25) <= 0.05


def test_synthetic_rejects_negative_separation():
    with pytest.raises(ValueError):
        make_synthetic_tasks(1, 3, 2, 10, -1.0, np.random.default_rng(0))


# ---------------------------------------------------------------- streaming


def counting_stream(n=20, **kw):
    ex = [Example(np.zeros(2), 0, 0) for _ in range(n)]
    return TaskStream([Task(0, ex, ex[:1])], n_classes=2, **kw)


def test_single_pass_glances():
    batches = list(stream_batches(counting_stream(glances=5), 0))
    assert len(batches) == 10
    distinct = []
    for b in batches:
        if not distinct or distinct[-1] is not b:
            distinct.append(b)
    assert len(distinct) == 2
    for i in range(0, 10, 5):
        assert all(batches[i + j] is batches[i] for j in range(5))


def test_multi_pass_epochs(rng):
    ts = counting_stream(protocol="multi-pass", epochs=10)
    batches = list(stream_batches(ts, 0, rng))
    assert len(batches) == 20
    with pytest.raises(ValueError):
        list(stream_batches(ts, 0))


def test_stream_validation():
    with pytest.raises(ValueError):
        counting_stream(batch_size=0)
    with pytest.raises(ValueError):
        counting_stream(epochs=2)  # single-pass with two epochs
    with pytest.raises(IndexError):
        list(stream_batches(counting_stream(), 3))


@given(st.integers(1, 40), st.integers(1, 12), st.integers(1, 4))
def test_single_pass_visits_each_example_once_per_glance(n, bs, g):
    ts = counting_stream(n=n, batch_size=bs, glances=g)
    batches = list(stream_batches(ts, 0))
    assert sum(len(b) for b in batches) == n * g
    assert len(batches) == g * -(-n // bs)
