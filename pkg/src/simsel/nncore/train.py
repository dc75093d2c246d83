"""Mini-batch training with SGD or Adam."""

import numpy as np

from .. import timing
from ..errors import TrainingDiverged
from ..seeding import rng_from
from .metrics import accuracy
from .spec import TrainConfig


class _Sgd:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        return params - self.lr * grads


class _Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params, grads):
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1 - self.beta2) * grads**2
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def fit(net, x, labels, config: TrainConfig, x_val=None, labels_val=None):
    """Train in place; returns a history dict.

    Batch order and dropout noise are drawn from streams derived from
    ``config.seed``, so a given (network, data, config) triple always
    produces identical parameters.
    """
    labels = np.asarray(labels, dtype=np.intp)
    n = x.shape[0]
    watch = timing.Stopwatch()
    opt = _Sgd(config.learning_rate) if config.optimizer == "sgd" else _Adam(config.learning_rate)
    rng_batch = rng_from(config.seed, "batches")
    rng_drop = rng_from(config.seed, "dropout")
    history = {"train_loss": [], "val_accuracy": []}
    for epoch in range(config.epochs):
        order = rng_batch.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb, yb = x[idx], labels[idx]
            loss, _ = net.loss_and_gradients(
                xb, yb, l2_penalty=config.l2_penalty, train_mode=True, rng=rng_drop
            )
            timing.add_model_work(len(idx), net.n_params, 3)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"loss became non-finite at epoch {epoch} "
                    f"(learning_rate={config.learning_rate})"
                )
            net.set_flat_params(opt.step(net.flat_params(), net.flat_grads()))
            epoch_loss += loss * len(idx)
        history["train_loss"].append(epoch_loss / n)
        if x_val is not None:
            history["val_accuracy"].append(accuracy(labels_val, net.predict(x_val)))
    history["seconds"] = watch.seconds()
    history["epochs"] = config.epochs
    return history


def evaluate(net, x, labels):
    """Accuracy of the network on a labelled set."""
    return accuracy(np.asarray(labels, dtype=np.intp), net.predict(x))
