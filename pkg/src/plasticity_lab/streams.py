"""Datasets, continual task streams and the replay buffer."""

from __future__ import annotations

import csv
import math
import struct
from collections.abc import Iterator
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError, StreamExhausted

STREAM_KINDS = ("permuted", "random_label", "split_class", "binary_pair")
_KIND_CODE = {k: i + 1 for i, k in enumerate(STREAM_KINDS)}
_SUBSET_CODE = 202


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ConfigError(f"features must be 2-D, got shape {self.features.shape}")
        if len(self.features) < 1 or len(self.features) != len(self.labels):
            raise ConfigError("dataset needs N >= 1 samples with one label each")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise ConfigError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def class_indices(self, cls: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cls)


def make_blobs(
    n_classes: int = 10,
    per_class: int = 200,
    dim: int = 64,
    seed: int = 0,
    clusters_per_class: int = 1,
    spread: float = 1.0,
    center_scale: float = 2.0,
) -> Dataset:
    """Seeded K-class Gaussian mixture, min-max scaled to [0, 1].

    With ``clusters_per_class > 1`` each class is a mixture of several blobs,
    which makes the problem non-linearly separable.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB10B]))
    centers = rng.normal(0.0, center_scale, size=(n_classes, clusters_per_class, dim))
    xs, ys = [], []
    for k in range(n_classes):
        which = rng.integers(0, clusters_per_class, size=per_class)
        xs.append(centers[k, which] + rng.normal(0.0, spread, size=(per_class, dim)))
        ys.append(np.full(per_class, k))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    order = rng.permutation(len(y))
    x, y = x[order], y[order]
    lo, hi = x.min(), x.max()
    return Dataset((x - lo) / (hi - lo), y, n_classes)


def train_eval_split(data: Dataset, eval_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified split; every class keeps at least one sample on each side when possible."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5917]))
    tr, ev = [], []
    for k in range(data.n_classes):
        idx = rng.permutation(data.class_indices(k))
        n_ev = int(round(eval_fraction * len(idx)))
        if len(idx) > 1:
            n_ev = min(max(n_ev, 1), len(idx) - 1)
        ev.append(idx[:n_ev])
        tr.append(idx[n_ev:])
    tr_i, ev_i = np.sort(np.concatenate(tr)), np.sort(np.concatenate(ev))
    return (
        Dataset(data.features[tr_i], data.labels[tr_i], data.n_classes),
        Dataset(data.features[ev_i], data.labels[ev_i], data.n_classes),
    )


# --------------------------------------------------------------------------- loaders

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _read_idx(path: Path, magic: int) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) < 4:
        raise ParseError(f"{path}: truncated header at byte offset {len(raw)} (need 4 magic bytes)")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise ParseError(f"{path}: bad magic 0x{got:08x} at byte offset 0, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise ParseError(f"{path}: truncated dimension header at byte offset {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    need = header + math.prod(dims)
    if len(raw) < need:
        raise ParseError(f"{path}: truncated data at byte offset {len(raw)}, expected {need} bytes")
    if len(raw) > need:
        raise ParseError(f"{path}: {len(raw) - need} trailing bytes after byte offset {need}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path, n_classes: int | None = None) -> Dataset:
    """Big-endian IDX image/label pair; pixels are scaled by 1/255."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC).astype(np.int64)
    if len(images) != len(labels):
        raise ParseError(f"{labels_path}: {len(labels)} labels for {len(images)} images")
    if len(images) == 0:
        raise ParseError(f"{images_path}: no images")
    k = int(labels.max()) + 1 if n_classes is None else n_classes
    bad = np.flatnonzero((labels < 0) | (labels >= k))
    if bad.size:
        offset = 8 + int(bad[0])
        raise ParseError(f"{labels_path}: label {labels[bad[0]]} out of range [0, {k}) at byte offset {offset}")
    features = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return Dataset(features, labels, k)


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_csv(path, n_classes: int | None = None) -> Dataset:
    """Label in the first column, features after; a header row is detected
    by a non-numeric first cell.  Features outside [0, 1] are min-max scaled."""
    path = Path(path)
    rows: list[list[float]] = []
    labels: list[int] = []
    width = None
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and not _is_number(row[0]):
                continue
            try:
                label_f = float(row[0])
                values = [float(c) for c in row[1:]]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            if label_f != int(label_f) or label_f < 0:
                raise ParseError(f"{path}:{lineno}: label {row[0]!r} is not a non-negative integer")
            if width is None:
                width = len(values)
                if width == 0:
                    raise ParseError(f"{path}:{lineno}: no feature columns")
            elif len(values) != width:
                raise ParseError(f"{path}:{lineno}: expected {width} features, got {len(values)}")
            if n_classes is not None and int(label_f) >= n_classes:
                raise ParseError(f"{path}:{lineno}: label {int(label_f)} out of range [0, {n_classes})")
            labels.append(int(label_f))
            rows.append(values)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    x = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ParseError(f"{path}: non-finite feature values")
    lo, hi = x.min(), x.max()
    if lo < 0.0 or hi > 1.0:
        x = (x - lo) / (hi - lo) if hi > lo else np.zeros_like(x)
    k = max(labels) + 1 if n_classes is None else n_classes
    return Dataset(x, np.array(labels), k)


def load_dataset(path, format: str, labels_path=None, n_classes: int | None = None) -> Dataset:
    fmt = format.lower()
    if fmt == "idx":
        if labels_path is None:
            raise ConfigError("IDX datasets need a separate labels file")
        return load_idx(path, labels_path, n_classes)
    if fmt == "csv":
        return load_csv(path, n_classes)
    raise ConfigError(f"unknown dataset format {format!r}")


# --------------------------------------------------------------------------- streams


def _rng(*parts: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(p) for p in parts]))


@dataclass(frozen=True)
class StreamConfig:
    """Task-stream schedule.

    ``samples`` is per task for ``permuted``/``random_label`` and per class for
    ``split_class``/``binary_pair``.  Every size is divided by ``scale``.
    """

    kind: str
    samples: int
    batch_size: int
    epochs: int
    n_tasks: int
    scale: int = 1
    classes_per_hard_task: int = 5
    classes_per_easy_task: int = 1
    step_budget: int | None = None
    eval_samples: int = 512

    def __post_init__(self):
        if self.kind not in STREAM_KINDS:
            raise ConfigError(f"unknown stream kind {self.kind!r}; expected one of {STREAM_KINDS}")
        for name in ("samples", "batch_size", "epochs", "n_tasks", "scale", "eval_samples"):
            if getattr(self, name) < 1:
                raise ConfigError(f"stream.{name} must be >= 1, got {getattr(self, name)}")
        if self.step_budget is not None and self.step_budget < 1:
            raise ConfigError(f"stream.step_budget must be >= 1, got {self.step_budget}")

    @property
    def scaled_samples(self) -> int:
        return max(1, self.samples // self.scale)

    @property
    def steps_per_task(self) -> int:
        """Optimizer steps a task runs for (fixed budget for split_class)."""
        if self.kind == "split_class":
            if self.step_budget is not None:
                return self.step_budget
            hard = self.classes_per_hard_task * self.scaled_samples
            return math.ceil(hard * self.epochs / self.batch_size)
        n = self.task_size
        return self.epochs * math.ceil(n / self.batch_size)

    @property
    def task_size(self) -> int:
        if self.kind == "binary_pair":
            return 2 * self.scaled_samples
        if self.kind == "split_class":
            return self.classes_per_hard_task * self.scaled_samples
        return self.scaled_samples

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind, "samples": self.samples, "batch_size": self.batch_size,
            "epochs": self.epochs, "n_tasks": self.n_tasks, "scale": self.scale,
            "eval_samples": self.eval_samples,
        }
        if self.kind == "split_class":
            out["classes_per_hard_task"] = self.classes_per_hard_task
            out["classes_per_easy_task"] = self.classes_per_easy_task
            if self.step_budget is not None:
                out["step_budget"] = self.step_budget
        return out


@dataclass
class Task:
    index: int
    features: np.ndarray
    labels: np.ndarray
    eval_features: np.ndarray
    eval_labels: np.ndarray
    classes: tuple[int, ...]
    batch_size: int
    epochs: int
    seed: int
    kind_code: int
    step_budget: int | None = None
    permutation: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.labels)

    def batches(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Mini-batches, reshuffled each epoch from (seed, task, epoch).

        With a step budget the data is cycled until exactly that many
        batches have been produced.
        """
        n = len(self.labels)
        produced = 0
        epoch = 0
        while True:
            if self.step_budget is None and epoch >= self.epochs:
                return
            order = self.epoch_order(epoch)
            for start in range(0, n, self.batch_size):
                if self.step_budget is not None and produced >= self.step_budget:
                    return
                idx = order[start:start + self.batch_size]
                yield self.features[idx], self.labels[idx]
                produced += 1
            epoch += 1

    def epoch_order(self, epoch: int) -> np.ndarray:
        return _rng(self.seed, self.kind_code, self.index, epoch).permutation(len(self.labels))

    def epoch_batches(self, epoch: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """One full pass in the order fixed by ``epoch``."""
        order = self.epoch_order(epoch)
        for start in range(0, len(order), self.batch_size):
            idx = order[start:start + self.batch_size]
            yield self.features[idx], self.labels[idx]

    def n_batches(self) -> int:
        if self.step_budget is not None:
            return self.step_budget
        return self.epochs * math.ceil(len(self.labels) / self.batch_size)


class TaskStream:
    """Lazy, deterministic sequence of tasks built from a base dataset."""

    def __init__(self, config: StreamConfig, data: Dataset, seed: int, eval_data: Dataset | None = None):
        self.config = config
        self.data = data
        self.eval_data = data if eval_data is None else eval_data
        self.seed = int(seed)
        self.code = _KIND_CODE[config.kind]
        cfg = config
        if cfg.kind in ("permuted", "random_label"):
            if cfg.scaled_samples > len(data):
                raise ConfigError(f"stream needs {cfg.scaled_samples} samples, dataset has {len(data)}")
            rng = _rng(self.seed, self.code, _SUBSET_CODE)
            self._subset = np.sort(rng.choice(len(data), cfg.scaled_samples, replace=False))
            n_ev = min(cfg.eval_samples, len(self.eval_data))
            self._eval_subset = np.sort(rng.choice(len(self.eval_data), n_ev, replace=False))
        else:
            self._class_order = _rng(self.seed, self.code, _SUBSET_CODE).permutation(data.n_classes)

    @property
    def n_outputs(self) -> int:
        if self.config.kind == "binary_pair":
            return 2
        return self.data.n_classes

    def __len__(self) -> int:
        return self.config.n_tasks

    def __iter__(self) -> Iterator[Task]:
        for t in range(self.config.n_tasks):
            yield self.task(t)

    def task(self, index: int) -> Task:
        if index < 0:
            raise ConfigError(f"task index must be >= 0, got {index}")
        kind = self.config.kind
        if kind == "permuted":
            return self.permuted_task(index)
        if kind == "random_label":
            return self.random_label_task(index)
        if kind == "split_class":
            return self.split_class_alternating_task(index)
        return self.binary_pair_task(index)

    def _make(self, index, x, y, ex, ey, classes, **kw) -> Task:
        cfg = self.config
        return Task(index, x, y, ex, ey, tuple(int(c) for c in classes), cfg.batch_size,
                    cfg.epochs, self.seed, self.code, **kw)

    def permutation(self, index: int) -> np.ndarray:
        return _rng(self.seed, self.code, index).permutation(self.data.dim)

    def permuted_task(self, index: int) -> Task:
        perm = self.permutation(index)
        x = self.data.features[self._subset][:, perm]
        ex = self.eval_data.features[self._eval_subset][:, perm]
        return self._make(
            index, x, self.data.labels[self._subset], ex, self.eval_data.labels[self._eval_subset],
            range(self.data.n_classes), permutation=perm,
        )

    def random_label_task(self, index: int) -> Task:
        x = self.data.features[self._subset]
        y = _rng(self.seed, self.code, index).integers(0, self.data.n_classes, size=len(x))
        # The task is memorization: evaluation uses the training inputs.
        return self._make(index, x, y, x, y, range(self.data.n_classes))

    def _class_slice(self, start: int, count: int) -> np.ndarray:
        order = self._class_order
        if start + count > len(order):
            raise StreamExhausted(
                f"{self.config.kind} stream needs classes {start}..{start + count - 1} "
                f"but the dataset has only {len(order)}"
            )
        return order[start:start + count]

    def _class_task(self, index: int, classes: np.ndarray, remap: bool, **kw) -> Task:
        per = self.config.scaled_samples
        rng = _rng(self.seed, self.code, index)
        xs, ys, exs, eys = [], [], [], []
        for j, c in enumerate(classes):
            idx = self.data.class_indices(c)
            if len(idx) < per:
                raise ConfigError(f"class {c} has {len(idx)} samples, stream needs {per}")
            idx = np.sort(rng.choice(idx, per, replace=False))
            label = j if remap else c
            xs.append(self.data.features[idx])
            ys.append(np.full(per, label))
            eidx = self.eval_data.class_indices(c)
            exs.append(self.eval_data.features[eidx])
            eys.append(np.full(len(eidx), label))
        return self._make(index, np.concatenate(xs), np.concatenate(ys),
                          np.concatenate(exs), np.concatenate(eys), classes, **kw)

    def split_class_alternating_task(self, index: int) -> Task:
        """Even tasks take ``classes_per_hard_task`` fresh classes, odd tasks
        ``classes_per_easy_task``; labels keep their original class ids."""
        cfg = self.config
        hard, easy = cfg.classes_per_hard_task, cfg.classes_per_easy_task
        start = (index + 1) // 2 * hard + index // 2 * easy
        count = hard if index % 2 == 0 else easy
        classes = self._class_slice(start, count)
        return self._class_task(index, classes, remap=False, step_budget=cfg.steps_per_task)

    def binary_pair_task(self, index: int) -> Task:
        """Two fresh classes per task, relabelled to {0, 1}."""
        classes = self._class_slice(2 * index, 2)
        return self._class_task(index, classes, remap=True)


# --------------------------------------------------------------------------- replay


class ReplayBuffer:
    """Capped memory with reservoir sampling inside each task.

    A task keeps at most ``per_task_cap`` items, chosen uniformly from all
    items of that task offered so far.  When the global ``capacity`` is
    reached a uniformly random stored item is evicted.
    """

    def __init__(self, capacity: int = 10_000, per_task_cap: int = 500, seed: int = 0):
        if capacity < 1 or per_task_cap < 1:
            raise ConfigError("buffer capacity and per-task cap must be >= 1")
        self.capacity = capacity
        self.per_task_cap = per_task_cap
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB0F]))
        self._items: dict[int, list[tuple[np.ndarray, int]]] = {}
        self._seen: dict[int, int] = {}

    def __len__(self) -> int:
        return sum(len(v) for v in self._items.values())

    def task_count(self, task_id: int) -> int:
        return len(self._items.get(task_id, ()))

    def tasks(self) -> list[int]:
        return [t for t, v in self._items.items() if v]

    def _evict_random(self):
        sizes = [(t, len(v)) for t, v in self._items.items() if v]
        total = sum(n for _, n in sizes)
        j = int(self.rng.integers(total))
        for t, n in sizes:
            if j < n:
                items = self._items[t]
                items[j] = items[-1]
                items.pop()
                return
            j -= n

    def insert(self, features, labels, task_id: int) -> None:
        features = np.atleast_2d(np.asarray(features, dtype=float))
        labels = np.atleast_1d(np.asarray(labels, dtype=int))
        if len(features) != len(labels):
            raise ConfigError("features and labels differ in length")
        store = self._items.setdefault(task_id, [])
        for x, y in zip(features, labels):
            seen = self._seen.get(task_id, 0)
            self._seen[task_id] = seen + 1
            item = (x.copy(), int(y))
            if len(store) < self.per_task_cap:
                if len(self) >= self.capacity:
                    self._evict_random()
                store.append(item)
            else:
                j = int(self.rng.integers(seen + 1))
                if j < len(store):
                    store[j] = item
        self._check()

    def _check(self):
        size = len(self)
        if size > self.capacity:
            raise AssertionError(f"buffer holds {size} items, capacity {self.capacity}")
        for t, v in self._items.items():
            if len(v) > self.per_task_cap:
                raise AssertionError(f"task {t} holds {len(v)} items, cap {self.per_task_cap}")

    def sample(self, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``n`` distinct stored items, uniformly: ``(features, labels, task_ids)``."""
        size = len(self)
        if size == 0:
            raise ConfigError("cannot sample from an empty replay buffer")
        if not 0 < n <= size:
            raise ConfigError(f"requested {n} samples from a buffer of {size}")
        flat = [(x, y, t) for t, v in self._items.items() for x, y in v]
        pick = self.rng.choice(size, n, replace=False)
        xs = np.stack([flat[i][0] for i in pick])
        ys = np.array([flat[i][1] for i in pick])
        ts = np.array([flat[i][2] for i in pick])
        return xs, ys, ts


def buffer_insert(buf: ReplayBuffer, items, labels, task_id: int) -> None:
    buf.insert(items, labels, task_id)


def buffer_sample(buf: ReplayBuffer, n: int):
    return buf.sample(n)
