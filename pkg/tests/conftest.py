import numpy as np
import pytest

from simsel import timing
from simsel.data import CorpusConfig, DatasetConfig, generate_synthetic_corpus
from simsel.nncore import (NetworkSpec, adaptive_max_pool, build_network,
                           conv1d, dense, dropout, flatten, relu, softmax_head)
from simsel.seeding import rng_from


@pytest.fixture(autouse=True)
def deterministic_clock():
    timing.set_deterministic(True)
    yield
    timing.set_deterministic(False)


def small_corpus_config():
    """Three tiny datasets, enough for rotation tests without the full corpus."""
    return CorpusConfig((
        DatasetConfig("alpha", n_channels=2, length=20, n_classes=2,
                      n_train=24, n_test=12, freq_base=1.0, freq_step=0.5),
        DatasetConfig("beta", n_channels=3, length=24, n_classes=3,
                      n_train=30, n_test=15, freq_base=3.0, freq_step=0.5),
        DatasetConfig("gamma", n_channels=2, length=20, n_classes=2,
                      n_train=24, n_test=12, freq_base=5.5, freq_step=0.6),
    ))


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic_corpus(small_corpus_config(), seed=0)


def random_net_spec(rng) -> NetworkSpec:
    """A small random network touching every layer kind."""
    n_channels = int(rng.integers(1, 4))
    length = int(rng.integers(8, 15))
    n_classes = int(rng.integers(2, 5))
    layers = []
    if rng.random() < 0.7:
        kernel = int(rng.integers(2, 4))
        layers.append(conv1d(int(rng.integers(2, 5)), kernel))
        layers.append(relu())
        if rng.random() < 0.5:
            layers.append(adaptive_max_pool(int(rng.integers(2, 5))))
    layers.append(flatten())
    if rng.random() < 0.6:
        layers.append(dense(int(rng.integers(4, 10))))
        layers.append(relu())
    if rng.random() < 0.4:
        layers.append(dropout(float(rng.uniform(0.1, 0.4))))
    layers.append(softmax_head())
    return NetworkSpec(tuple(layers), (n_channels, length), n_classes)


def random_net(seed):
    rng = rng_from(seed, "netgen")
    spec = random_net_spec(rng)
    return build_network(spec, seed=seed)


def fd_loss_grad(net, x, labels, h=1e-5, l2_penalty=0.0):
    """Central-difference gradient of the loss in parameter space."""
    theta = net.flat_params()
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        for sign, slot in ((1.0, 0), (-1.0, 1)):
            t = theta.copy()
            t[i] += sign * h
            net.set_flat_params(t)
            val = net.loss(x, labels, l2_penalty=l2_penalty)
            grad[i] += sign * val / (2 * h)
    net.set_flat_params(theta)
    return grad
