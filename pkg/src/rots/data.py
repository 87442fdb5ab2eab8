"""Labeled time-series datasets: loading, writing, synthesis and z-normalization.

A dataset holds ``n`` series of identical shape ``C x T`` as one array of
shape ``(n, C, T)``. Labels are always remapped to contiguous ids
``0..num_classes-1`` in first-seen order; the original labels are kept in
``label_map`` for reporting.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rots.errors import EmptyDatasetError, ParseError, ShapeError
from rots.seeding import stream

SPLITS = ("train", "validation", "test")


@dataclass(frozen=True)
class TimeSeries:
    values: np.ndarray  # (C, T)
    label: int

    @property
    def channels(self):
        return self.values.shape[0]

    @property
    def length(self):
        return self.values.shape[1]


@dataclass
class Dataset:
    X: np.ndarray  # (n, C, T)
    y: np.ndarray  # (n,) int
    num_classes: int
    split: str = "train"
    label_map: dict = field(default_factory=dict)  # original label -> id

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=int)
        if self.X.ndim != 3:
            raise ShapeError(f"expected (n, C, T) array, got shape {self.X.shape}")
        if len(self.X) != len(self.y):
            raise ShapeError("values and labels disagree on sample count")
        if self.X.shape[1] < 1 or self.X.shape[2] < 1:
            raise ShapeError("series need at least one channel and one time step")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("dataset contains non-finite values")
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise ValueError("label outside [0, num_classes)")

    def __len__(self):
        return len(self.y)

    def __getitem__(self, i):
        return TimeSeries(self.X[i], int(self.y[i]))

    @property
    def samples(self):
        return [self[i] for i in range(len(self))]

    @property
    def channels(self):
        return self.X.shape[1]

    @property
    def length(self):
        return self.X.shape[2]

    def with_split(self, split):
        return Dataset(self.X, self.y, self.num_classes, split, dict(self.label_map))


def _remap(raw_labels):
    label_map = {}
    for lab in raw_labels:
        label_map.setdefault(lab, len(label_map))
    return np.array([label_map[lab] for lab in raw_labels], dtype=int), label_map


def _parse_label(tok, lineno):
    try:
        value = float(tok)
    except ValueError:
        raise ParseError(f"bad label {tok!r}", lineno) from None
    return int(value) if value.is_integer() else value


def _finish(rows, labels, split, path):
    if not rows:
        raise EmptyDatasetError(f"{path}: no samples")
    y, label_map = _remap(labels)
    X = np.stack(rows)
    return Dataset(X, y, max(len(label_map), 1), split, label_map)


def load_ucr_tsv(path, split="train"):
    """Read a univariate UCR file: ``label<TAB>v1<TAB>...<TAB>vT`` per line."""
    rows, labels = [], []
    length = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            toks = line.split()
            if len(toks) < 2:
                raise ParseError("expected a label and at least one value", lineno)
            label = _parse_label(toks[0], lineno)
            try:
                vals = np.array([float(t) for t in toks[1:]])
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            if length is None:
                length = len(vals)
            elif len(vals) != length:
                raise ShapeError(
                    f"line {lineno}: length {len(vals)} differs from {length}"
                )
            rows.append(vals[None, :])
            labels.append(label)
    return _finish(rows, labels, split, path)


def load_multichannel_csv(path, channels, split="train"):
    """Read ``label,v_{1,1},...,v_{C,T}`` records (channel-major)."""
    if channels < 1:
        raise ValueError("channels must be >= 1")
    rows, labels = [], []
    shape = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            toks = [t.strip() for t in line.strip().split(",")]
            label = _parse_label(toks[0], lineno)
            try:
                vals = np.array([float(t) for t in toks[1:]])
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            if len(vals) == 0 or len(vals) % channels:
                raise ShapeError(
                    f"line {lineno}: {len(vals)} values not divisible by {channels} channels"
                )
            sample = vals.reshape(channels, -1)
            if shape is None:
                shape = sample.shape
            elif sample.shape != shape:
                raise ShapeError(f"line {lineno}: shape {sample.shape} differs from {shape}")
            rows.append(sample)
            labels.append(label)
    return _finish(rows, labels, split, path)


def load_series(path):
    """Read one unlabeled series: one line per channel, values split by whitespace or commas."""
    chans = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                chans.append([float(t) for t in line.replace(",", " ").split()])
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
    if not chans:
        raise EmptyDatasetError(f"{path}: empty series file")
    if len({len(c) for c in chans}) != 1:
        raise ShapeError(f"{path}: channels have different lengths")
    return np.array(chans)


def _inverse_labels(dataset):
    inv = {v: k for k, v in dataset.label_map.items()}
    return [inv.get(int(lab), int(lab)) for lab in dataset.y]


def write_ucr_tsv(dataset, path):
    if dataset.channels != 1:
        raise ShapeError("UCR TSV holds univariate series only")
    labels = _inverse_labels(dataset)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for lab, x in zip(labels, dataset.X[:, 0, :]):
            fh.write("\t".join([str(lab)] + [repr(float(v)) for v in x]) + "\n")


def write_multichannel_csv(dataset, path):
    labels = _inverse_labels(dataset)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for lab, x in zip(labels, dataset.X):
            fh.write(",".join([str(lab)] + [repr(float(v)) for v in x.ravel()]) + "\n")


def synth_two_class(n, T, noise_sigma, seed, split="train"):
    """Two sine classes: ``sin(2 pi t / T)`` (label 0) and ``sin(4 pi t / T)`` (label 1).

    The first ``n/2`` samples are class 0, the rest class 1. Noise is i.i.d.
    Gaussian with standard deviation ``noise_sigma``.
    """
    if n % 2:
        raise ValueError("n must be even")
    if T < 8:
        raise ValueError("T must be at least 8")
    t = np.arange(T)
    base = np.stack([np.sin(2 * np.pi * t / T), np.sin(4 * np.pi * t / T)])
    y = np.repeat([0, 1], n // 2)
    rng = stream(seed, "synth_two_class")
    X = base[y][:, None, :] + noise_sigma * rng.standard_normal((n, 1, T))
    return Dataset(X, y, 2, split, {0: 0, 1: 1})


def znormalize(dataset):
    """Per sample and channel: zero mean, unit (population) standard deviation.

    Channels with zero variance become all zeros.
    """
    X = dataset.X
    mean = X.mean(axis=2, keepdims=True)
    std = X.std(axis=2, keepdims=True)
    flat = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    Z = np.where(flat, 0.0, (X - mean) / np.where(flat, 1.0, std))
    return Dataset(Z, dataset.y.copy(), dataset.num_classes, dataset.split,
                   dict(dataset.label_map))


def load_dataset(path, fmt="ucr", channels=1, split="train"):
    path = Path(path)
    if fmt == "ucr":
        return load_ucr_tsv(path, split)
    if fmt == "csv":
        return load_multichannel_csv(path, channels, split)
    raise ValueError(f"unknown dataset format {fmt!r}")


def align_labels(dataset, reference):
    """Re-express ``dataset``'s labels in ``reference``'s label ids.

    Separately loaded files number their labels in their own first-seen order;
    this maps a test split onto the ids used for training.
    """
    inv = {v: k for k, v in dataset.label_map.items()}
    try:
        y = [reference.label_map[inv[int(lab)]] for lab in dataset.y]
    except KeyError as exc:
        raise ValueError(f"label {exc.args[0]!r} does not occur in the reference split") from None
    return Dataset(dataset.X, y, reference.num_classes, dataset.split,
                   dict(reference.label_map))
