"""Dataset-to-dataset similarity.

Primary metric: each dataset trains its own small CNN classifier; instances
are embedded at the pooled pre-head tap (fixed width regardless of input
shape), L2-normalized, mean-pooled, re-normalized, and compared by cosine.
Baselines: DTW over channel-mean-reduced series and per-channel 1D
Wasserstein distance, both on raw values.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import wasserstein_distance as _scipy_w1

from . import timing
from .data import Dataset, InstanceSet, SplitSpec, split_train_val
from .errors import ConfigError, DataError, InvariantError
from .nncore import (
    NetworkSpec,
    TrainConfig,
    adaptive_max_pool,
    build_network,
    conv1d,
    dropout,
    fit,
    flatten,
    relu,
    softmax_head,
)
from .seeding import rng_from

METRICS = ("embed_cosine", "dtw", "wasserstein")

EMBEDDING_DIM = 64
_ENC_CHANNELS = 16
_ENC_POOL = 4
_ENC_KERNEL = 3
_ENC_EPOCHS = 6


@dataclass(frozen=True)
class Encoder:
    net: object
    dataset_name: str
    seed: int
    embedding_dim: int
    tap_index: int
    train_seconds: float
    train_accuracy: float


def encoder_spec(n_channels, length, n_classes) -> NetworkSpec:
    """Two conv layers, adaptive pooling to a fixed-width tap, dropout, head."""
    return NetworkSpec(
        (
            conv1d(_ENC_CHANNELS, _ENC_KERNEL), relu(),
            conv1d(_ENC_CHANNELS, _ENC_KERNEL), relu(),
            adaptive_max_pool(_ENC_POOL), flatten(),
            dropout(0.1), softmax_head(),
        ),
        (n_channels, length),
        n_classes,
    )


def train_encoder(train_part: InstanceSet, n_classes: int, seed: int,
                  dataset_name: str = "") -> Encoder:
    """Fit the embedding encoder as a classifier on its own train part."""
    if not len(train_part):
        raise DataError("encoder needs a non-empty train part")
    c, length = train_part.x.shape[1:]
    spec = encoder_spec(c, length, n_classes)
    net = build_network(spec, seed=seed)
    watch = timing.Stopwatch()
    fit(net, train_part.x, train_part.y,
        TrainConfig(optimizer="adam", learning_rate=0.01, epochs=_ENC_EPOCHS,
                    batch_size=8, seed=seed))
    seconds = watch.seconds()
    acc = float((net.predict(train_part.x) == train_part.y).mean())
    tap = next(i for i, l in enumerate(spec.layers) if l.kind == "flatten")
    return Encoder(net, dataset_name, seed, _ENC_CHANNELS * _ENC_POOL, tap, seconds, acc)


def embed_split(encoder: Encoder, part: InstanceSet):
    """One unit vector per instance plus a validity mask.

    Vectors whose pre-normalization norm is (near) zero come back as zero
    vectors flagged invalid; pooling skips them.
    """
    if not len(part):
        raise DataError("cannot embed an empty part")
    if part.x.shape[1:] != encoder.net.spec.input_shape:
        raise DataError(
            f"part shape {part.x.shape[1:]} does not match encoder input "
            f"{encoder.net.spec.input_shape}"
        )
    timing.add_model_work(len(part), encoder.net.n_params, 1)
    raw = encoder.net.activations(part.x)[encoder.tap_index]
    norms = np.sqrt((raw**2).sum(axis=1))
    valid = norms > 1e-12
    out = np.zeros_like(raw)
    out[valid] = raw[valid] / norms[valid, None]
    return out, valid


def cosine_similarity(a, b) -> float:
    """A.B / (|A||B|), clamped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvariantError(f"dimension mismatch {a.shape} vs {b.shape}")
    na, nb = float(np.sqrt(a @ a)), float(np.sqrt(b @ b))
    if na < 1e-12 or nb < 1e-12:
        raise InvariantError("cosine of a zero-norm vector is undefined")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def embedding_dataset_similarity(incoming_embeddings, drive_embeddings,
                                 incoming_valid=None, drive_valid=None,
                                 mean_pairwise=False) -> float:
    """Cosine of the re-normalized mean embeddings of two sets.

    With mean_pairwise, returns the mean pairwise cosine instead, which
    for unit rows equals the dot of the means before re-normalization.
    """
    def pooled(embs, valid):
        embs = np.asarray(embs, dtype=np.float64)
        if valid is None:
            valid = np.ones(len(embs), dtype=bool)
        if not valid.any():
            raise DataError("all embeddings degenerate; nothing to pool")
        return embs[valid].mean(axis=0)

    ma = pooled(incoming_embeddings, incoming_valid)
    mb = pooled(drive_embeddings, drive_valid)
    if mean_pairwise:
        return float(np.clip(ma @ mb, -1.0, 1.0))
    return cosine_similarity(ma, mb)


# ------------------------------------------------------------------ baselines

def dtw_distance(seq_a, seq_b) -> float:
    """Unconstrained DTW with squared local cost between 1-D sequences."""
    a = np.asarray(seq_a, dtype=np.float64).reshape(-1)
    b = np.asarray(seq_b, dtype=np.float64).reshape(-1)
    if not len(a) or not len(b):
        raise DataError("DTW needs non-empty sequences")
    timing.add_work(len(a) * len(b))
    diff = a[:, None] - b[None, :]
    cost = diff * diff  # explicit multiply: uniquely rounded, unlike pow
    acc = np.empty_like(cost)
    # borders accumulate sequentially so every cell holds an exact
    # path-ordered sum (cumsum's pairwise partials can differ by a ulp)
    acc[0, 0] = cost[0, 0]
    for j in range(1, len(b)):
        acc[0, j] = acc[0, j - 1] + cost[0, j]
    for i in range(1, len(a)):
        acc[i, 0] = acc[i - 1, 0] + cost[i, 0]
    for i in range(1, len(a)):
        row = acc[i - 1]
        prev = acc[i, 0]
        ci = cost[i]
        for j in range(1, len(b)):
            prev = ci[j] + min(row[j], row[j - 1], prev)
            acc[i, j] = prev
    return float(acc[-1, -1])


def reduce_channels(instance):
    """Multivariate (channels, length) to univariate by channel mean."""
    arr = np.asarray(instance, dtype=np.float64)
    if arr.ndim == 1:
        return arr
    return arr.mean(axis=0)


def dtw_dataset_distance(part_a: InstanceSet, part_b: InstanceSet,
                         seed: int, max_pairs: int = 200) -> float:
    """Mean DTW over a seeded sample of cross-dataset instance pairs."""
    if not len(part_a) or not len(part_b):
        raise DataError("DTW dataset distance needs non-empty parts")
    rng = rng_from(seed, "dtwpairs")
    n = min(max_pairs, len(part_a) * len(part_b))
    ia = rng.integers(0, len(part_a), size=n)
    ib = rng.integers(0, len(part_b), size=n)
    total = 0.0
    for i, j in zip(ia, ib):
        total += dtw_distance(reduce_channels(part_a.x[i]), reduce_channels(part_b.x[j]))
    return total / n


def wasserstein_1d(values_a, values_b) -> float:
    """1D W1 between two empirical samples (sorted-quantile formula)."""
    a = np.asarray(values_a, dtype=np.float64).reshape(-1)
    b = np.asarray(values_b, dtype=np.float64).reshape(-1)
    if not len(a) or not len(b):
        raise DataError("Wasserstein needs non-empty samples")
    timing.add_work(len(a) + len(b))
    return float(_scipy_w1(a, b))


def wasserstein_dataset_distance(part_a: InstanceSet, part_b: InstanceSet) -> float:
    """Per-channel pooled-value W1, averaged over shared channel indices."""
    if not len(part_a) or not len(part_b):
        raise DataError("Wasserstein dataset distance needs non-empty parts")
    shared = min(part_a.x.shape[1], part_b.x.shape[1])
    vals = [
        wasserstein_1d(part_a.x[:, c, :].reshape(-1), part_b.x[:, c, :].reshape(-1))
        for c in range(shared)
    ]
    return float(np.mean(vals))


# -------------------------------------------------------------------- ranking

@dataclass(frozen=True)
class SimilarityReport:
    metric: str
    condition: str
    scores: dict      # drive dataset name -> score
    ranking: tuple    # names, most similar first
    wall_clock: float


def encoder_for(ds: Dataset, seed: int, split_seed: int, cache=None) -> Encoder:
    """Train (or fetch from cache) the dataset's own encoder.

    The encoder seed is shared across datasets, so identical datasets get
    identical encoders.
    """
    key = (ds.name, seed, split_seed)
    if cache is not None and key in cache:
        return cache[key]
    train_part, _ = split_train_val(ds, SplitSpec(seed=split_seed))
    enc = train_encoder(train_part, ds.n_classes, seed, dataset_name=ds.name)
    if cache is not None:
        cache[key] = enc
    return enc


def default_view(ds: Dataset, split_seed: int) -> InstanceSet:
    """The portion similarity looks at: the dataset's validation part."""
    _, val_part = split_train_val(ds, SplitSpec(seed=split_seed))
    return val_part


def rank_candidates(incoming: Dataset, drive, metric: str, condition: str,
                    seed: int, split_seed: int = 0, views=None, cache=None,
                    mean_pairwise=False) -> SimilarityReport:
    """Score every drive dataset against the incoming one and rank.

    ``views`` optionally maps dataset name to the InstanceSet to compare
    (attacked validation portions, for conditioned matching); defaults to
    each dataset's clean validation part. Cosine ranks descending,
    distances ascending; ties break by dataset name.
    """
    if metric not in METRICS:
        raise ConfigError(f"unknown similarity metric {metric!r}")
    if not drive:
        raise DataError("no drive datasets to rank")
    names = [d.name for d in drive]
    if len(set(names)) != len(names) or incoming.name in names:
        raise DataError("drive dataset names must be unique and differ from incoming")
    watch = timing.Stopwatch()

    def view_of(ds):
        if views is not None and ds.name in views:
            return views[ds.name]
        return default_view(ds, split_seed)

    scores = {}
    if metric == "embed_cosine":
        inc_enc = encoder_for(incoming, seed, split_seed, cache)
        inc_emb, inc_valid = embed_split(inc_enc, view_of(incoming))
        for ds in drive:
            enc = encoder_for(ds, seed, split_seed, cache)
            emb, valid = embed_split(enc, view_of(ds))
            scores[ds.name] = embedding_dataset_similarity(
                inc_emb, emb, inc_valid, valid, mean_pairwise=mean_pairwise
            )
        reverse = True
    elif metric == "dtw":
        inc_view = view_of(incoming)
        for ds in drive:
            scores[ds.name] = dtw_dataset_distance(inc_view, view_of(ds), seed)
        reverse = False
    else:
        inc_view = view_of(incoming)
        for ds in drive:
            scores[ds.name] = wasserstein_dataset_distance(inc_view, view_of(ds))
        reverse = False

    if reverse:
        ranking = tuple(sorted(scores, key=lambda n: (-scores[n], n)))
    else:
        ranking = tuple(sorted(scores, key=lambda n: (scores[n], n)))
    return SimilarityReport(metric, condition, scores, ranking, watch.seconds())
