"""Model catalogue, hyperparameter tuning, training, clean metrics.

Six feedforward families cover the linear / fully-connected / convolutional
design space. Each family maps any (channels, length, classes) shape to a
NetworkSpec, so the whole zoo instantiates on every dataset.
"""

import json
from dataclasses import dataclass, replace

import numpy as np

from . import timing
from .data import Dataset, InstanceSet
from .errors import ConfigError, DataError, InvariantError
from .nncore import (
    Network,
    NetworkSpec,
    TrainConfig,
    adaptive_max_pool,
    build_network,
    confusion_matrix,
    conv1d,
    dense,
    dropout,
    fit,
    flatten,
    infer_shapes,
    macro_f1_from_confusion,
    relu,
    softmax_head,
)

FAMILIES = ("linear", "mlp", "resmlp", "fcn1d", "cnnpool", "widecnn")


@dataclass(frozen=True)
class ArchSpec:
    family: str
    width: int = 0
    depth: int = 0
    kernel: int = 0
    kernel2: int = 0
    channels: int = 0
    channels2: int = 0
    pool: int = 0
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown model family {self.family!r}")

    def to_dict(self):
        d = {"family": self.family}
        for k in ("width", "depth", "kernel", "kernel2", "channels", "channels2", "pool"):
            v = getattr(self, k)
            if v:
                d[k] = v
        if self.dropout_rate:
            d["dropout_rate"] = self.dropout_rate
        return d


def default_zoo():
    """The six stock architectures, keyed by family name."""
    return (
        ArchSpec("linear"),
        ArchSpec("mlp", width=16, depth=2),
        ArchSpec("resmlp", width=12, depth=3, dropout_rate=0.1),
        ArchSpec("fcn1d", channels=16, kernel=7, channels2=32, kernel2=5),
        ArchSpec("cnnpool", channels=16, kernel=5, pool=4, width=32),
        ArchSpec("widecnn", channels=48, kernel=3, pool=8),
    )


def instantiate(arch: ArchSpec, shape, n_classes) -> NetworkSpec:
    """Compose the NetworkSpec for a family on a concrete dataset shape.

    Validates composition eagerly, so an oversized kernel fails here.
    """
    f = arch.family
    if f == "linear":
        layers = (flatten(), softmax_head())
    elif f == "mlp":
        core = []
        for _ in range(arch.depth):
            core += [dense(arch.width), relu()]
        layers = (flatten(), *core, softmax_head())
    elif f == "resmlp":
        core = []
        for _ in range(arch.depth):
            core += [dense(arch.width), relu(), dropout(arch.dropout_rate)]
        layers = (flatten(), *core, softmax_head())
    elif f == "fcn1d":
        layers = (
            conv1d(arch.channels, arch.kernel), relu(),
            conv1d(arch.channels2, arch.kernel2), relu(),
            adaptive_max_pool(1), flatten(), softmax_head(),
        )
    elif f == "cnnpool":
        layers = (
            conv1d(arch.channels, arch.kernel), relu(),
            adaptive_max_pool(arch.pool), flatten(),
            dense(arch.width), relu(), softmax_head(),
        )
    else:  # widecnn
        layers = (
            conv1d(arch.channels, arch.kernel), relu(),
            adaptive_max_pool(arch.pool), flatten(), softmax_head(),
        )
    spec = NetworkSpec(layers, tuple(shape), n_classes)
    infer_shapes(spec)
    return spec


# ------------------------------------------------------------------- tuning

@dataclass(frozen=True)
class HyperGrid:
    learning_rates: tuple = (0.01, 0.003)
    epochs: tuple = (14,)
    batch_sizes: tuple = (8, 16)

    def __post_init__(self):
        object.__setattr__(self, "learning_rates", tuple(self.learning_rates))
        object.__setattr__(self, "epochs", tuple(self.epochs))
        object.__setattr__(self, "batch_sizes", tuple(self.batch_sizes))
        if not (self.learning_rates and self.epochs and self.batch_sizes):
            raise ConfigError("hyperparameter grid must be non-empty on every axis")

    def points(self):
        pts = []
        for lr in self.learning_rates:
            for ep in self.epochs:
                for bs in self.batch_sizes:
                    pts.append((lr, ep, bs))
        return pts


@dataclass(frozen=True)
class TuneResult:
    config: TrainConfig
    val_accuracy: float
    grid_index: int


def tune(arch: ArchSpec, train_part: InstanceSet, val_part: InstanceSet,
         shape, n_classes, grid: HyperGrid, seed: int) -> TuneResult:
    """Exhaustive grid search by validation accuracy.

    One shared training seed across grid points, so identical configs tie
    exactly. Ties break by (epochs, learning rate, grid order).
    """
    if not len(train_part) or not len(val_part):
        raise DataError("tuning needs non-empty train and validation parts")
    spec = instantiate(arch, shape, n_classes)
    best = None
    for gi, (lr, ep, bs) in enumerate(grid.points()):
        cfg = TrainConfig(optimizer="adam", learning_rate=lr, epochs=ep,
                          batch_size=bs, seed=seed)
        net = build_network(spec, seed=seed)
        fit(net, train_part.x, train_part.y, cfg)
        acc = float((net.predict(val_part.x) == val_part.y).mean())
        key = (-acc, ep, lr, gi)
        if best is None or key < best[0]:
            best = (key, TuneResult(cfg, acc, gi))
    return best[1]


# ------------------------------------------------------------------ training

@dataclass(frozen=True)
class TrainedModel:
    model_id: str
    arch: ArchSpec
    config: TrainConfig
    net: Network
    dataset_name: str
    seed: int
    train_seconds: float

    def predict(self, x):
        return self.net.predict(x)


def train_model(arch: ArchSpec, config: TrainConfig, ds: Dataset, seed: int) -> TrainedModel:
    """Train one family on a dataset's train part with a tuned config."""
    spec = instantiate(arch, (ds.n_channels, ds.length), ds.n_classes)
    net = build_network(spec, seed=seed)
    cfg = replace(config, seed=seed)
    watch = timing.Stopwatch()
    fit(net, ds.train.x, ds.train.y, cfg)
    return TrainedModel(
        model_id=arch.family,
        arch=arch,
        config=cfg,
        net=net,
        dataset_name=ds.name,
        seed=seed,
        train_seconds=watch.seconds(),
    )


# ----------------------------------------------------------------- metrics

@dataclass(frozen=True)
class Metrics:
    accuracy: float
    f1_macro: float
    n: int
    confusion: tuple

    def __post_init__(self):
        if not (0.0 <= self.accuracy <= 1.0 and 0.0 <= self.f1_macro <= 1.0):
            raise InvariantError("metrics must lie in [0, 1]")


def evaluate(model: TrainedModel, part: InstanceSet) -> Metrics:
    """Accuracy and macro-F1 from one confusion matrix."""
    if not len(part):
        raise DataError("cannot evaluate on an empty part")
    pred = model.predict(part.x)
    m = confusion_matrix(part.y, pred, model.net.n_classes)
    return Metrics(
        accuracy=float(np.trace(m) / m.sum()),
        f1_macro=macro_f1_from_confusion(m),
        n=len(part),
        confusion=tuple(tuple(int(v) for v in row) for row in m),
    )


# ---------------------------------------------------------------- registry

def default_registry():
    """Model registry: families with their arch parameters and grids."""
    return {
        "models": [a.to_dict() for a in default_zoo()],
        "grid": {
            "learning_rates": list(HyperGrid().learning_rates),
            "epochs": list(HyperGrid().epochs),
            "batch_sizes": list(HyperGrid().batch_sizes),
        },
    }


def save_registry(registry, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(registry, f, indent=2, sort_keys=True)
        f.write("\n")


def load_registry(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            reg = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read model registry {path}: {e}") from e
    if "models" not in reg or "grid" not in reg:
        raise ConfigError(f"{path}: registry needs 'models' and 'grid' keys")
    archs = tuple(ArchSpec(**m) for m in reg["models"])
    ids = [a.family for a in archs]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"{path}: duplicate model families")
    grid = HyperGrid(**reg["grid"])
    return archs, grid
