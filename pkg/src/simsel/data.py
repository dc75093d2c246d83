"""Dataset model, on-disk format, deterministic splits, synthetic corpus.

A dataset is a named pair of labelled instance sets (train, test) of
multichannel series with a fixed shape (n_channels, length). On disk the
RTSC format is a directory holding ``meta.json`` plus ``train.csv`` and
``test.csv``; each CSV row is a label followed by n_channels*length floats
in channel-major order.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError, InvariantError
from .seeding import rng_from


class InstanceSet:
    """Labelled instances stacked as one (n, channels, length) array."""

    def __init__(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.intp)
        if x.ndim != 3:
            raise InvariantError(f"instances must be (n, channels, length), got {x.shape}")
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise InvariantError(f"{x.shape[0]} instances but {y.shape} labels")
        if x.size and not np.isfinite(x).all():
            raise InvariantError("instances contain non-finite values")
        self.x = x
        self.y = y

    def __len__(self):
        return self.x.shape[0]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.intp)
        return InstanceSet(self.x[idx], self.y[idx])

    def class_counts(self, n_classes):
        return np.bincount(self.y, minlength=n_classes)


@dataclass(frozen=True)
class Dataset:
    name: str
    train: InstanceSet
    test: InstanceSet
    n_channels: int
    length: int
    n_classes: int

    def __post_init__(self):
        if min(self.n_channels, self.length, self.n_classes) < 1:
            raise InvariantError(f"{self.name}: dimensions must be positive")
        for part_name, part in (("train", self.train), ("test", self.test)):
            if len(part) and part.x.shape[1:] != (self.n_channels, self.length):
                raise InvariantError(
                    f"{self.name}/{part_name}: instances are {part.x.shape[1:]}, "
                    f"metadata says ({self.n_channels}, {self.length})"
                )
            if len(part) and (part.y.min() < 0 or part.y.max() >= self.n_classes):
                raise InvariantError(
                    f"{self.name}/{part_name}: label outside [0, {self.n_classes})"
                )
        counts = self.train.class_counts(self.n_classes)
        if len(self.train) and (counts == 0).any():
            missing = int(np.flatnonzero(counts == 0)[0])
            raise InvariantError(f"{self.name}: class {missing} absent from train part")

    def with_parts(self, train, test):
        return Dataset(self.name, train, test, self.n_channels, self.length, self.n_classes)


# ---------------------------------------------------------------- on-disk IO

def _write_rows(path, part):
    with open(path, "w", encoding="utf-8") as f:
        for xi, yi in zip(part.x, part.y):
            vals = ",".join(repr(float(v)) for v in xi.reshape(-1))
            f.write(f"{int(yi)},{vals}\n" if vals else f"{int(yi)}\n")


def _read_rows(path, n_channels, length, n_classes):
    want = n_channels * length
    xs, ys = [], []
    with open(path, "r", encoding="utf-8") as f:
        for row, line in enumerate(f):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != want + 1:
                raise DataError(
                    f"{path}: row {row} has {len(fields) - 1} values, expected {want}"
                )
            try:
                label = int(fields[0])
                values = np.array([float(v) for v in fields[1:]])
            except ValueError as e:
                raise DataError(f"{path}: row {row}: {e}") from e
            if not 0 <= label < n_classes:
                raise DataError(
                    f"{path}: row {row}: label {label} outside [0, {n_classes})"
                )
            xs.append(values.reshape(n_channels, length))
            ys.append(label)
    if xs:
        return InstanceSet(np.stack(xs), np.array(ys))
    return InstanceSet(np.zeros((0, n_channels, length)), np.zeros(0, dtype=np.intp))


def save_dataset(ds: Dataset, path):
    """Write a dataset directory in RTSC format."""
    os.makedirs(path, exist_ok=True)
    meta = {
        "name": ds.name,
        "version": 1,
        "n_channels": ds.n_channels,
        "length": ds.length,
        "n_classes": ds.n_classes,
    }
    with open(os.path.join(path, "meta.json"), "w", encoding="utf-8") as f:
        json.dump(meta, f, sort_keys=True)
        f.write("\n")
    _write_rows(os.path.join(path, "train.csv"), ds.train)
    _write_rows(os.path.join(path, "test.csv"), ds.test)


def load_dataset(path) -> Dataset:
    """Read an RTSC dataset directory; values round-trip losslessly."""
    meta_path = os.path.join(path, "meta.json")
    try:
        with open(meta_path, "r", encoding="utf-8") as f:
            meta = json.load(f)
    except FileNotFoundError as e:
        raise DataError(f"{path}: missing meta.json") from e
    except json.JSONDecodeError as e:
        raise DataError(f"{meta_path}: invalid JSON: {e}") from e
    if meta.get("version") != 1:
        raise DataError(f"{meta_path}: unknown version {meta.get('version')!r}")
    for key in ("name", "n_channels", "length", "n_classes"):
        if key not in meta:
            raise DataError(f"{meta_path}: missing key {key!r}")
    c, length, k = int(meta["n_channels"]), int(meta["length"]), int(meta["n_classes"])
    train = _read_rows(os.path.join(path, "train.csv"), c, length, k)
    test = _read_rows(os.path.join(path, "test.csv"), c, length, k)
    try:
        return Dataset(str(meta["name"]), train, test, c, length, k)
    except InvariantError as e:
        raise DataError(str(e)) from e


# ------------------------------------------------------- splits and segments

@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise InvariantError("train_fraction must be in (0, 1)")


def split_train_val(ds: Dataset, spec: SplitSpec):
    """Stratified split of the train part into (train_part, val_part).

    Per class, round((1 - train_fraction) * count) instances go to
    validation; a singleton class stays in train.
    """
    # keyed by seed only: two datasets with identical contents then get
    # identical splits, which exact self-match checks rely on
    rng = rng_from(spec.seed, "split")
    val_frac = 1.0 - spec.train_fraction
    train_idx, val_idx = [], []
    for cls in range(ds.n_classes):
        cls_idx = np.flatnonzero(ds.train.y == cls)
        n_val = int(round(val_frac * len(cls_idx)))
        n_val = min(n_val, len(cls_idx) - 1)
        perm = rng.permutation(len(cls_idx))
        val_idx.extend(cls_idx[perm[:n_val]])
        train_idx.extend(cls_idx[perm[n_val:]])
    if not val_idx:
        raise DataError(f"{ds.name}: validation part would be empty")
    return ds.train.subset(sorted(train_idx)), ds.train.subset(sorted(val_idx))


@dataclass(frozen=True)
class SegmentPlan:
    k: int
    order: tuple    # permutation of validation indices
    bounds: tuple   # (start, end) pairs into order

    def indices(self, i):
        s, e = self.bounds[i]
        return np.array(self.order[s:e], dtype=np.intp)

    @property
    def segments(self):
        return [self.indices(i) for i in range(self.k)]


def segment_validation(val: InstanceSet, k: int, seed: int) -> SegmentPlan:
    """k near-equal segments over a seeded shuffle of validation indices."""
    n = len(val)
    if k < 1:
        raise InvariantError("k must be positive")
    if n < k:
        raise DataError(f"cannot cut {n} validation instances into {k} segments")
    order = tuple(int(i) for i in rng_from(seed, "segments").permutation(n))
    base, rem = divmod(n, k)
    bounds, start = [], 0
    for i in range(k):
        size = base + (1 if i < rem else 0)
        bounds.append((start, start + size))
        start += size
    return SegmentPlan(k, order, tuple(bounds))


# ------------------------------------------------------------ synthetic data

@dataclass(frozen=True)
class DatasetConfig:
    name: str
    n_channels: int
    length: int
    n_classes: int
    n_train: int
    n_test: int
    freq_base: float = 1.0
    freq_step: float = 1.0
    noise_sigma: float = 0.05

    def __post_init__(self):
        if min(self.n_channels, self.length, self.n_classes, self.n_train, self.n_test) < 1:
            raise InvariantError(f"{self.name}: dimensions must be positive")
        if self.noise_sigma < 0:
            raise InvariantError(f"{self.name}: noise_sigma must be non-negative")


@dataclass(frozen=True)
class CorpusConfig:
    datasets: tuple

    def __post_init__(self):
        object.__setattr__(self, "datasets", tuple(self.datasets))
        names = [d.name for d in self.datasets]
        if len(set(names)) != len(names):
            raise InvariantError("dataset names must be unique")


def default_corpus_config() -> CorpusConfig:
    """Seven small datasets with heterogeneous shapes and class counts.

    Frequency bands are disjoint per dataset so distance metrics see
    genuinely different dynamics, not just different shapes.
    """
    # each band [base, base + step*(k-1)] is separated from its neighbours by
    # more than its own width, and tops out under length/3 cycles per window
    return CorpusConfig((
        DatasetConfig("field5", n_channels=5, length=24, n_classes=6, n_train=72, n_test=36,
                      freq_base=1.0, freq_step=0.4),
        DatasetConfig("tremor4", n_channels=4, length=28, n_classes=3, n_train=54, n_test=27,
                      freq_base=4.5, freq_step=0.5),
        DatasetConfig("gesture6", n_channels=6, length=30, n_classes=4, n_train=64, n_test=32,
                      freq_base=7.0, freq_step=0.5),
        DatasetConfig("orbit2", n_channels=2, length=36, n_classes=5, n_train=70, n_test=30,
                      freq_base=10.0, freq_step=0.45),
        DatasetConfig("gait3", n_channels=3, length=40, n_classes=3, n_train=60, n_test=30,
                      freq_base=13.0, freq_step=0.5),
        DatasetConfig("pulse1", n_channels=1, length=50, n_classes=2, n_train=50, n_test=26,
                      freq_base=15.5, freq_step=0.6),
        DatasetConfig("swing2", n_channels=2, length=60, n_classes=2, n_train=48, n_test=24,
                      freq_base=17.6, freq_step=0.7),
    ))


def _synth_part(cfg: DatasetConfig, chan_phase, rng, n):
    t = np.arange(cfg.length) / cfg.length
    labels = np.arange(n) % cfg.n_classes  # balanced, at least one per class
    x = np.empty((n, cfg.n_channels, cfg.length))
    for i in range(n):
        freq = cfg.freq_base + labels[i] * cfg.freq_step
        psi = rng.uniform(0.0, 2.0 * np.pi)
        phase = chan_phase[:, None] + psi
        x[i] = np.sin(2.0 * np.pi * freq * t[None, :] + phase)
        if cfg.noise_sigma > 0:
            x[i] += rng.normal(0.0, cfg.noise_sigma, size=(cfg.n_channels, cfg.length))
    return InstanceSet(x, labels)


def generate_dataset(cfg: DatasetConfig, seed: int) -> Dataset:
    """One synthetic dataset: class k is a sinusoid family at frequency
    freq_base + k*freq_step with fixed per-channel phase offsets, a uniform
    per-instance global phase, and Gaussian noise."""
    rng = rng_from(seed, "corpus", cfg.name)
    # band-limited channel phases: the channel mean of the signal keeps
    # amplitude >= cos(pi/4), so per-dataset frequency signatures survive
    # univariate reduction instead of cancelling out
    chan_phase = rng.uniform(0.0, 0.5 * np.pi, size=cfg.n_channels)
    train = _synth_part(cfg, chan_phase, rng, cfg.n_train)
    test = _synth_part(cfg, chan_phase, rng, cfg.n_test)
    return Dataset(cfg.name, train, test, cfg.n_channels, cfg.length, cfg.n_classes)


def generate_synthetic_corpus(cfg: CorpusConfig, seed: int):
    """All datasets in the config, each deterministic in (seed, name)."""
    return [generate_dataset(d, seed) for d in cfg.datasets]


# --------------------------------------------------------------- preprocessing

def normalize(ds: Dataset) -> Dataset:
    """Per-channel z-score with train-part statistics applied to all parts.

    Channels with (near-)zero spread keep scale 1 so constants map to zero.
    """
    mean = ds.train.x.mean(axis=(0, 2))
    std = ds.train.x.std(axis=(0, 2))
    std = np.where(std < 1e-12, 1.0, std)
    def apply(part):
        if not len(part):
            return part
        x = (part.x - mean[None, :, None]) / std[None, :, None]
        return InstanceSet(x, part.y)
    return ds.with_parts(apply(ds.train), apply(ds.test))
