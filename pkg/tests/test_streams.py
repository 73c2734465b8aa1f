import math
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from plasticity_lab.errors import ConfigError, ParseError, StreamExhausted
from plasticity_lab.streams import (
    Dataset,
    ReplayBuffer,
    StreamConfig,
    TaskStream,
    buffer_insert,
    buffer_sample,
    load_csv,
    load_dataset,
    load_idx,
    make_blobs,
    train_eval_split,
)


def idx_bytes(array: np.ndarray, magic_dims: int) -> bytes:
    array = np.asarray(array, dtype=np.uint8)
    head = struct.pack(">I", 0x0800 | magic_dims) + struct.pack(f">{array.ndim}I", *array.shape)
    return head + array.tobytes()


@pytest.fixture
def idx_pair(tmp_path):
    images = np.arange(16, dtype=np.uint8).reshape(4, 2, 2) * 17
    labels = np.array([0, 1, 2, 1], dtype=np.uint8)
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    ip.write_bytes(idx_bytes(images, 3))
    lp.write_bytes(idx_bytes(labels, 1))
    return ip, lp, images, labels


@pytest.fixture(scope="module")
def blobs():
    return make_blobs(n_classes=20, per_class=60, dim=16, seed=3)


# --------------------------------------------------------------------------- loaders


def test_idx_round_trip(idx_pair):
    ip, lp, images, labels = idx_pair
    data = load_idx(ip, lp)
    assert data.features.shape == (4, 4)
    np.testing.assert_array_equal(data.features, images.reshape(4, 4) / 255.0)
    np.testing.assert_array_equal(data.labels, labels)
    assert data.n_classes == 3
    assert load_dataset(ip, "IDX", labels_path=lp).features.shape == (4, 4)


def test_idx_bad_magic(idx_pair, tmp_path):
    ip, lp, images, _ = idx_pair
    bad = tmp_path / "bad.idx"
    bad.write_bytes(b"\x00\x00\x09\x03" + ip.read_bytes()[4:])
    with pytest.raises(ParseError, match="offset 0"):
        load_idx(bad, lp)


def test_idx_truncated(idx_pair, tmp_path):
    ip, lp, _, _ = idx_pair
    short = tmp_path / "short.idx"
    short.write_bytes(ip.read_bytes()[:-3])
    with pytest.raises(ParseError, match="truncated data at byte offset 29"):
        load_idx(short, lp)
    head = tmp_path / "head.idx"
    head.write_bytes(ip.read_bytes()[:9])
    with pytest.raises(ParseError, match="dimension header"):
        load_idx(head, lp)


def test_idx_empty_and_trailing(idx_pair, tmp_path):
    ip, lp, _, _ = idx_pair
    empty = tmp_path / "empty.idx"
    empty.write_bytes(b"")
    with pytest.raises(ParseError, match="byte offset 0"):
        load_idx(empty, lp)
    extra = tmp_path / "extra.idx"
    extra.write_bytes(ip.read_bytes() + b"\x00")
    with pytest.raises(ParseError, match="trailing"):
        load_idx(extra, lp)


def test_idx_label_out_of_range(idx_pair):
    ip, lp, _, _ = idx_pair
    with pytest.raises(ParseError, match="offset 10"):
        load_idx(ip, lp, n_classes=2)


def test_idx_count_mismatch(idx_pair, tmp_path):
    ip, _, _, _ = idx_pair
    lp = tmp_path / "few.idx"
    lp.write_bytes(idx_bytes(np.array([0, 1]), 1))
    with pytest.raises(ParseError, match="2 labels for 4 images"):
        load_idx(ip, lp)


def test_csv_header_and_scaling(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("label,a,b\n0,0.0,10\n1,5,20\n\n2,2.5,0\n")
    data = load_csv(p)
    assert data.n_classes == 3
    np.testing.assert_allclose(data.features, [[0, 0.5], [0.25, 1.0], [0.125, 0.0]])


def test_csv_without_header_keeps_unit_range(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("1,0.2,0.4\n0,0.9,0.1\n")
    data = load_csv(p)
    np.testing.assert_array_equal(data.features, [[0.2, 0.4], [0.9, 0.1]])
    np.testing.assert_array_equal(data.labels, [1, 0])


@pytest.mark.parametrize("body, line, fragment", [
    ("0,1,2\n1,3\n", 2, "expected 2 features"),
    ("0,1,2\nx,3,4\n", 2, "could not convert"),
    ("0,1\n1.5,2\n", 2, "not a non-negative integer"),
    ("h,a\n0,1\n-1,2\n", 3, "not a non-negative integer"),
    ("0,1\n7,2\n", 2, "out of range"),
])
def test_csv_errors_carry_line_numbers(tmp_path, body, line, fragment):
    p = tmp_path / "d.csv"
    p.write_text(body)
    with pytest.raises(ParseError) as err:
        load_csv(p, n_classes=3)
    assert f":{line}:" in str(err.value)
    assert fragment in str(err.value)


def test_csv_empty(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("label,a\n")
    with pytest.raises(ParseError, match="no data rows"):
        load_csv(p)
    with pytest.raises(ConfigError):
        load_dataset(p, "parquet")
    with pytest.raises(ConfigError):
        load_dataset(p, "idx")


def test_dataset_validation():
    with pytest.raises(ConfigError):
        Dataset(np.zeros(3), np.zeros(3), 2)
    with pytest.raises(ConfigError):
        Dataset(np.zeros((3, 2)), np.array([0, 1, 2]), 2)


def test_make_blobs_and_split():
    data = make_blobs(n_classes=4, per_class=30, dim=5, seed=1)
    assert data.features.min() == 0.0 and data.features.max() == 1.0
    assert np.bincount(data.labels).tolist() == [30] * 4
    np.testing.assert_array_equal(data.features, make_blobs(4, 30, 5, seed=1).features)
    tr, ev = train_eval_split(data, 0.2, seed=0)
    assert len(tr) + len(ev) == 120
    assert np.bincount(ev.labels).tolist() == [6] * 4


# --------------------------------------------------------------------------- stream config


def test_step_budget_formula():
    cfg = StreamConfig("split_class", samples=450, batch_size=16, epochs=100, n_tasks=4)
    assert cfg.steps_per_task == math.ceil(5 * 450 * 100 / 16)
    assert StreamConfig("split_class", 450, 16, 100, 4, step_budget=7).steps_per_task == 7
    assert StreamConfig("permuted", 100, 16, 3, 2).steps_per_task == 3 * 7


def test_stream_config_validation():
    with pytest.raises(ConfigError):
        StreamConfig("shuffled", 10, 2, 1, 1)
    with pytest.raises(ConfigError):
        StreamConfig("permuted", 10, 0, 1, 1)


# --------------------------------------------------------------------------- tasks


ALL_KINDS = [
    StreamConfig("permuted", samples=200, batch_size=16, epochs=2, n_tasks=3),
    StreamConfig("random_label", samples=200, batch_size=16, epochs=2, n_tasks=3),
    StreamConfig("split_class", samples=20, batch_size=16, epochs=2, n_tasks=3),
    StreamConfig("binary_pair", samples=20, batch_size=16, epochs=2, n_tasks=3),
]


@pytest.mark.parametrize("cfg", ALL_KINDS, ids=lambda c: c.kind)
def test_stream_determinism(cfg, blobs):
    def dump(seed):
        out = []
        for task in TaskStream(cfg, blobs, seed):
            out.extend((x.copy(), y.copy()) for x, y in task.batches())
        return out

    a, b = dump(5), dump(5)
    assert len(a) == len(b) > 0
    for (xa, ya), (xb, yb) in zip(a, b):
        np.testing.assert_array_equal(xa, xb)
        np.testing.assert_array_equal(ya, yb)
    c = dump(6)
    assert any(not np.array_equal(xa, xc) for (xa, _), (xc, _) in zip(a, c))


def test_tasks_are_random_access(blobs):
    stream = TaskStream(ALL_KINDS[0], blobs, 1)
    later = stream.task(2)
    again = TaskStream(ALL_KINDS[0], blobs, 1).task(2)
    np.testing.assert_array_equal(later.features, again.features)
    with pytest.raises(ConfigError):
        stream.task(-1)


def test_epoch_reshuffle(blobs):
    task = TaskStream(ALL_KINDS[0], blobs, 0).task(0)
    assert not np.array_equal(task.epoch_order(0), task.epoch_order(1))
    batches = list(task.batches())
    assert len(batches) == task.n_batches() == 2 * math.ceil(200 / 16)
    first = np.concatenate([y for _, y in batches[:13]])
    assert sorted(first.tolist()) == sorted(task.labels.tolist())


def test_permuted_stream(blobs):
    stream = TaskStream(ALL_KINDS[0], blobs, 0)
    p0, p1 = stream.permutation(0), stream.permutation(1)
    assert sorted(p0.tolist()) == list(range(blobs.dim))
    assert not np.array_equal(p0, p1)
    t0, t1 = stream.task(0), stream.task(1)
    np.testing.assert_array_equal(t0.labels, t1.labels)
    # undo the permutations to recover the same inputs
    inv0, inv1 = np.argsort(p0), np.argsort(p1)
    np.testing.assert_array_equal(t0.features[:, inv0], t1.features[:, inv1])
    np.testing.assert_array_equal(t0.eval_features[:, inv0], t1.eval_features[:, inv1])


@given(st.integers(0, 2**31 - 1), st.integers(0, 50))
def test_permutation_is_bijection(seed, index):
    data = make_blobs(n_classes=2, per_class=3, dim=12, seed=0)
    stream = TaskStream(StreamConfig("permuted", 4, 2, 1, 1), data, seed)
    assert np.array_equal(np.sort(stream.permutation(index)), np.arange(12))


def test_random_label_stream(blobs):
    cfg = StreamConfig("random_label", samples=1000, batch_size=50, epochs=1, n_tasks=3)
    stream = TaskStream(cfg, blobs, 0)
    t0, t1 = stream.task(0), stream.task(1)
    np.testing.assert_array_equal(t0.features, t1.features)
    assert not np.array_equal(t0.labels, t1.labels)
    np.testing.assert_array_equal(t0.eval_labels, t0.labels)
    k, n = blobs.n_classes, 1000
    counts = np.bincount(t0.labels, minlength=k)
    sd = math.sqrt(n * (1 / k) * (1 - 1 / k))
    assert np.all(np.abs(counts - n / k) < 5 * sd)


def test_split_class_alternates(blobs):
    cfg = StreamConfig("split_class", samples=20, batch_size=16, epochs=3, n_tasks=6)
    stream = TaskStream(cfg, blobs, 0)
    seen = []
    for t in range(6):
        task = stream.task(t)
        assert len(task.classes) == (5 if t % 2 == 0 else 1)
        assert set(np.unique(task.labels)) == set(task.classes)
        assert set(np.unique(task.eval_labels)) == set(task.classes)
        assert len(list(task.batches())) == cfg.steps_per_task == math.ceil(5 * 20 * 3 / 16)
        seen.extend(task.classes)
    assert len(seen) == len(set(seen)) == 18
    with pytest.raises(StreamExhausted):
        stream.task(6)


def test_binary_pair_stream(blobs):
    cfg = StreamConfig("binary_pair", samples=20, batch_size=8, epochs=1, n_tasks=10)
    stream = TaskStream(cfg, blobs, 0)
    union = set()
    for task in stream:
        assert np.bincount(task.labels).tolist() == [20, 20]
        assert set(np.unique(task.eval_labels)) == {0, 1}
        union.update(task.classes)
    assert len(union) == 2 * 10 == blobs.n_classes
    assert stream.n_outputs == 2
    with pytest.raises(StreamExhausted):
        stream.task(10)


def test_stream_needs_enough_data(blobs):
    with pytest.raises(ConfigError):
        TaskStream(StreamConfig("permuted", 10**6, 16, 1, 1), blobs, 0)
    with pytest.raises(ConfigError):
        TaskStream(StreamConfig("binary_pair", 1000, 16, 1, 1), blobs, 0).task(0)


# --------------------------------------------------------------------------- replay buffer


def test_per_task_cap():
    buf = ReplayBuffer(capacity=10_000, per_task_cap=500, seed=0)
    buf.insert(np.arange(700.0)[:, None], np.zeros(700), task_id=0)
    assert buf.task_count(0) == 500 == len(buf)


def test_global_capacity():
    buf = ReplayBuffer(capacity=50, per_task_cap=20, seed=0)
    for t in range(6):
        buf.insert(np.full((30, 1), t), np.full(30, t), task_id=t)
        assert len(buf) <= 50
    assert len(buf) == 50
    assert set(buf.tasks()) <= set(range(6))


def test_reservoir_keeps_uniform_subset():
    # each offered item should survive with probability cap / offered
    hits = np.zeros(100)
    for seed in range(200):
        buf = ReplayBuffer(capacity=1000, per_task_cap=10, seed=seed)
        buf.insert(np.arange(100.0)[:, None], np.zeros(100), task_id=0)
        x, _, _ = buf.sample(10)
        hits[x[:, 0].astype(int)] += 1
    p = 0.1
    sd = math.sqrt(200 * p * (1 - p))
    assert np.all(np.abs(hits - 200 * p) < 5 * sd)


def test_sampling_uniformity():
    buf = ReplayBuffer(capacity=1000, per_task_cap=100, seed=4)
    buffer_insert(buf, np.arange(100.0)[:, None], np.arange(100) % 3, task_id=2)
    counts = np.zeros(100)
    for _ in range(10_000):
        x, y, t = buffer_sample(buf, 1)
        counts[int(x[0, 0])] += 1
        assert t[0] == 2 and y[0] == int(x[0, 0]) % 3
    p = 0.01
    sd = math.sqrt(10_000 * p * (1 - p))
    assert np.all(np.abs(counts - 100) < 5 * sd)


def test_sample_without_replacement():
    buf = ReplayBuffer(capacity=100, per_task_cap=100, seed=0)
    buf.insert(np.arange(30.0)[:, None], np.zeros(30), task_id=0)
    x, _, _ = buf.sample(30)
    assert sorted(x[:, 0].tolist()) == list(range(30))


def test_buffer_errors():
    buf = ReplayBuffer(capacity=10, per_task_cap=5, seed=0)
    with pytest.raises(ConfigError, match="empty"):
        buf.sample(1)
    buf.insert([[1.0]], [0], task_id=0)
    with pytest.raises(ConfigError):
        buf.sample(2)
    with pytest.raises(ConfigError):
        buf.insert(np.zeros((2, 1)), [0], task_id=0)
    with pytest.raises(ConfigError):
        ReplayBuffer(capacity=0)


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(1, 40)), max_size=30),
       st.integers(1, 60), st.integers(1, 25))
def test_buffer_invariants(ops, capacity, cap):
    buf = ReplayBuffer(capacity=capacity, per_task_cap=cap, seed=0)
    for task, n in ops:
        buf.insert(np.zeros((n, 1)), np.zeros(n), task_id=task)
        assert len(buf) <= capacity
        assert all(buf.task_count(t) <= cap for t in range(6))
