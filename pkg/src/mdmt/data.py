"""Task sequences: pixel permutations, class splits, synthetic blobs, IDX files."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class LabeledDataset:
    inputs: np.ndarray  # (n, dim)
    labels: np.ndarray  # (n,)
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] != self.labels.shape[0]:
            raise ConfigError("inputs and labels are not aligned")
        if self.inputs.shape[0] < 1:
            raise ConfigError("dataset is empty")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ConfigError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]


@dataclass
class Task:
    train: LabeledDataset
    test: LabeledDataset

    @property
    def num_classes(self) -> int:
        return self.train.num_classes


@dataclass
class TaskSequence:
    tasks: list[Task]
    kind: str
    # per-kind bookkeeping: permutations for "permuted", class lists for "split"
    records: list = field(default_factory=list)

    def __post_init__(self):
        dims = {t.train.dim for t in self.tasks} | {t.test.dim for t in self.tasks}
        if len(dims) > 1:
            raise ConfigError(f"tasks disagree on input dimension: {sorted(dims)}")

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, i):
        return self.tasks[i]


def gen_synthetic(
    num_classes: int,
    dim: int,
    per_class: int,
    spread: float,
    seed: int,
    test_per_class: int | None = None,
) -> tuple[LabeledDataset, LabeledDataset]:
    """Gaussian blobs around unit-norm class centres in the positive orthant.

    Centres are ``|z| / ||z||`` for standard normal ``z``, so clipping samples
    to [0, 1] never moves a centre. Train and test sets are drawn
    independently from the same centres.
    """
    if num_classes <= 0 or dim <= 0 or per_class <= 0 or spread < 0:
        raise ConfigError("synthetic parameters must be positive")
    test_per_class = per_class if test_per_class is None else test_per_class
    rng = np.random.default_rng(seed)
    centers = _draw_centers(rng, num_classes, dim)

    def draw(count, split):
        labels = np.repeat(np.arange(num_classes), count)
        noise = rng.normal(scale=spread, size=(labels.size, dim)) if spread > 0 else 0.0
        inputs = np.clip(centers[labels] + noise, 0.0, 1.0)
        order = rng.permutation(labels.size)
        return LabeledDataset(inputs[order], labels[order], num_classes, split)

    train = draw(per_class, "train")
    test = draw(test_per_class, "test")
    return train, test


def synthetic_centers(num_classes: int, dim: int, seed: int) -> np.ndarray:
    """The class centres ``gen_synthetic`` uses for the same arguments."""
    return _draw_centers(np.random.default_rng(seed), num_classes, dim)


def _draw_centers(rng, num_classes, dim):
    centers = np.abs(rng.normal(size=(num_classes, dim)))
    return centers / np.linalg.norm(centers, axis=1, keepdims=True)


def gen_permuted_tasks(base: tuple[LabeledDataset, LabeledDataset], T: int, seed: int) -> TaskSequence:
    """``T`` tasks, each applying its own fixed input permutation; task 0 is the identity."""
    if T < 1:
        raise ConfigError("need at least one task")
    train, test = base
    dim = train.dim
    rng = np.random.default_rng(seed)
    perms = [np.arange(dim)] + [rng.permutation(dim) for _ in range(T - 1)]
    tasks = []
    for perm in perms:
        tasks.append(Task(
            LabeledDataset(train.inputs[:, perm], train.labels, train.num_classes, "train"),
            LabeledDataset(test.inputs[:, perm], test.labels, test.num_classes, "test"),
        ))
    return TaskSequence(tasks, "permuted", [p.tolist() for p in perms])


def gen_split_tasks(
    base: tuple[LabeledDataset, LabeledDataset],
    classes_per_task: int,
    seed: int,
    sequential: bool = False,
) -> TaskSequence:
    """Partition the classes into disjoint groups, one task per group.

    Labels are remapped to ``0..classes_per_task-1`` following the ascending
    order of the original class ids in each group. ``sequential=True`` takes
    groups in class-id order instead of a seeded random partition.
    """
    train, test = base
    C = train.num_classes
    if classes_per_task <= 0 or C % classes_per_task:
        raise ConfigError(f"{C} classes cannot be split into groups of {classes_per_task}")
    order = np.arange(C) if sequential else np.random.default_rng(seed).permutation(C)
    groups = [np.sort(order[i:i + classes_per_task]) for i in range(0, C, classes_per_task)]
    tasks = []
    for group in groups:
        remap = {int(c): j for j, c in enumerate(group)}

        def select(ds, split):
            mask = np.isin(ds.labels, group)
            labels = np.array([remap[int(c)] for c in ds.labels[mask]], dtype=np.int64)
            return LabeledDataset(ds.inputs[mask], labels, classes_per_task, split)

        tasks.append(Task(select(train, "train"), select(test, "test")))
    return TaskSequence(tasks, "split", [g.tolist() for g in groups])


def gen_synthetic_tasks(
    T: int, num_classes: int, dim: int, per_class: int, spread: float, seed: int,
    test_per_class: int | None = None,
) -> TaskSequence:
    """``T`` unrelated blob datasets with consecutive seeds."""
    if T < 1:
        raise ConfigError("need at least one task")
    tasks = []
    for t in range(T):
        tr, te = gen_synthetic(num_classes, dim, per_class, spread, seed + t, test_per_class)
        tasks.append(Task(tr, te))
    return TaskSequence(tasks, "synthetic", [seed + t for t in range(T)])


def _read_exact(buf: bytes, offset: int, size: int, path) -> bytes:
    if offset + size > len(buf):
        raise ParseError("truncated payload", source=str(path))
    return buf[offset:offset + size]


def load_idx(images_path, labels_path, num_classes: int = 10, split: str = "train") -> LabeledDataset:
    """Read an IDX image/label pair (uncompressed) into a dataset scaled to [0, 1]."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    img = images_path.read_bytes()
    lab = labels_path.read_bytes()

    magic, = struct.unpack(">I", _read_exact(img, 0, 4, images_path))
    if magic != IDX_IMAGES_MAGIC:
        raise ParseError(f"bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}", source=str(images_path))
    count, rows, cols = struct.unpack(">III", _read_exact(img, 4, 12, images_path))
    pixels = np.frombuffer(_read_exact(img, 16, count * rows * cols, images_path), dtype=np.uint8)

    magic, = struct.unpack(">I", _read_exact(lab, 0, 4, labels_path))
    if magic != IDX_LABELS_MAGIC:
        raise ParseError(f"bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}", source=str(labels_path))
    n_labels, = struct.unpack(">I", _read_exact(lab, 4, 4, labels_path))
    labels = np.frombuffer(_read_exact(lab, 8, n_labels, labels_path), dtype=np.uint8)

    if n_labels != count:
        raise ParseError(f"{n_labels} labels for {count} images", source=str(labels_path))
    if labels.size and labels.max() >= num_classes:
        raise ParseError(f"label {labels.max()} outside [0, {num_classes})", source=str(labels_path))
    inputs = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    return LabeledDataset(inputs, labels.astype(np.int64), num_classes, split)


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 ``images`` of shape (n, rows, cols) and ``labels`` as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, labels.size) + labels.tobytes())


def save_dataset_csv(ds: LabeledDataset, path) -> None:
    """One row per sample: label first, then the inputs at round-trip precision."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for label, row in zip(ds.labels, ds.inputs):
            writer.writerow([int(label)] + [repr(float(v)) for v in row])


def load_dataset_csv(path, num_classes: int, split: str = "train") -> LabeledDataset:
    labels, rows = [], []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            try:
                labels.append(int(rec[0]))
                rows.append([float(v) for v in rec[1:]])
            except (ValueError, IndexError) as exc:
                raise ParseError(str(exc), source=str(path), line=lineno) from None
    if len({len(r) for r in rows}) > 1:
        raise ParseError("ragged rows", source=str(path))
    return LabeledDataset(np.array(rows), np.array(labels), num_classes, split)
