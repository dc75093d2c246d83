"""Network assembly, loss, prediction, and input-space gradients."""

import numpy as np

from .. import timing
from ..errors import InvariantError
from ..seeding import rng_from
from .layers import AdaptiveMaxPool, Conv1d, Dense, Dropout, Flatten, ReLU
from .spec import NetworkSpec, infer_shapes
from .tensor import as_tensor


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class Network:
    """A spec instantiated with parameters.

    Inputs are (n, channels, length); the head emits one logit per class.
    """

    def __init__(self, spec: NetworkSpec, layers, shapes):
        self.spec = spec
        self.layers = layers
        self.shapes = shapes

    @property
    def n_classes(self):
        return self.spec.n_classes

    @property
    def n_params(self):
        return sum(l.n_params for l in self.layers)

    def _check_input(self, x):
        x = as_tensor(x)
        c, length = self.spec.input_shape
        if x.ndim != 3 or x.shape[1:] != (c, length):
            raise InvariantError(
                f"input shape {x.shape} does not match (n, {c}, {length})"
            )
        return x

    def forward(self, x, train_mode=False, rng=None):
        """Logits for a batch. Caches per-layer state for backward."""
        h = self._check_input(x)
        for layer in self.layers:
            if isinstance(layer, Dropout):
                h = layer.forward(h, train_mode=train_mode, rng=rng)
            else:
                h = layer.forward(h, train_mode=train_mode)
        return h

    def backward(self, dlogits):
        """Backprop from the head output; fills layer grads, returns dx."""
        d = dlogits
        for layer in reversed(self.layers):
            d = layer.backward(d)
        return d

    def loss_and_gradients(self, x, labels, l2_penalty=0.0, train_mode=False, rng=None):
        """Mean softmax cross-entropy and parameter gradients.

        Returns (loss, dx). Gradients live on the layers afterwards.
        """
        labels = np.asarray(labels, dtype=np.intp)
        logits = self.forward(x, train_mode=train_mode, rng=rng)
        n = logits.shape[0]
        probs = softmax(logits)
        eps = np.finfo(np.float64).tiny
        loss = -np.log(probs[np.arange(n), labels] + eps).mean()
        if l2_penalty:
            loss += 0.5 * l2_penalty * sum(
                float((layer.params["W"] ** 2).sum())
                for layer in self.layers
                if "W" in layer.params
            )
        dlogits = probs.copy()
        dlogits[np.arange(n), labels] -= 1.0
        dlogits /= n
        dx = self.backward(dlogits)
        if l2_penalty:
            for layer in self.layers:
                if "W" in layer.params:
                    layer.grads["W"] = layer.grads["W"] + l2_penalty * layer.params["W"]
        return float(loss), dx

    def loss(self, x, labels, l2_penalty=0.0):
        labels = np.asarray(labels, dtype=np.intp)
        logits = self.forward(x)
        n = logits.shape[0]
        probs = softmax(logits)
        eps = np.finfo(np.float64).tiny
        value = -np.log(probs[np.arange(n), labels] + eps).mean()
        if l2_penalty:
            value += 0.5 * l2_penalty * sum(
                float((layer.params["W"] ** 2).sum())
                for layer in self.layers
                if "W" in layer.params
            )
        return float(value)

    def predict_proba(self, x):
        x = self._check_input(x)
        timing.add_model_work(x.shape[0], self.n_params, 1)
        return softmax(self.forward(x))

    def predict(self, x):
        return self.predict_proba(x).argmax(axis=1)

    def input_gradient(self, x, labels):
        """d loss / d input, evaluation mode. Same shape as x."""
        x = self._check_input(x)
        timing.add_model_work(x.shape[0], self.n_params, 3)
        _, dx = self.loss_and_gradients(x, labels)
        return dx

    def logit_input_jacobian(self, x_single):
        """Jacobian of the logits wrt one input, shape (n_classes, c, l)."""
        x_single = as_tensor(x_single)
        if x_single.ndim == 2:
            x_single = x_single[None]
        if x_single.shape[0] != 1:
            raise InvariantError("jacobian expects a single instance")
        c = self.n_classes
        timing.add_model_work(c, self.n_params, 3)
        batch = np.repeat(x_single, c, axis=0)
        self.forward(batch)
        dx = self.backward(np.eye(c))
        return dx

    def activations(self, x):
        """Evaluation-mode activation after every layer (list, one per layer)."""
        h = self._check_input(x)
        out = []
        for layer in self.layers:
            h = layer.forward(h, train_mode=False)
            out.append(h)
        return out

    def dropout_layers(self):
        return [l for l in self.layers if isinstance(l, Dropout)]

    def pin_dropout_masks(self, masks):
        drops = self.dropout_layers()
        if len(masks) != len(drops):
            raise InvariantError("one mask per dropout layer required")
        for layer, mask in zip(drops, masks):
            layer.set_mask(mask)

    def unpin_dropout_masks(self):
        for layer in self.dropout_layers():
            layer.set_mask(None)

    def flat_params(self):
        parts = []
        for layer in self.layers:
            for name in layer.params:
                parts.append(layer.params[name].ravel())
        if not parts:
            return np.zeros(0)
        return np.concatenate(parts)

    def set_flat_params(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.n_params:
            raise InvariantError(f"expected {self.n_params} values, got {vec.size}")
        pos = 0
        for layer in self.layers:
            for name in layer.params:
                p = layer.params[name]
                layer.params[name] = vec[pos : pos + p.size].reshape(p.shape).copy()
                pos += p.size

    def flat_grads(self):
        parts = []
        for layer in self.layers:
            for name in layer.params:
                parts.append(layer.grads[name].ravel())
        if not parts:
            return np.zeros(0)
        return np.concatenate(parts)

    def copy(self):
        clone = build_network(self.spec, seed=0)
        clone.set_flat_params(self.flat_params())
        return clone


def build_network(spec: NetworkSpec, seed: int) -> Network:
    """Instantiate a spec; parameters drawn deterministically from the seed."""
    shapes = infer_shapes(spec)
    rng = rng_from(seed, "init")
    layers = []
    shape = tuple(spec.input_shape)
    for ls, out_shape in zip(spec.layers, shapes):
        k = ls.kind
        if k == "dense":
            layers.append(Dense(shape[0], ls.units))
        elif k == "conv1d":
            layers.append(Conv1d(shape[0], ls.channels, ls.kernel))
        elif k == "relu":
            layers.append(ReLU())
        elif k == "dropout":
            layers.append(Dropout(ls.rate))
        elif k == "adaptive_max_pool":
            layers.append(AdaptiveMaxPool(ls.out_len))
        elif k == "flatten":
            layers.append(Flatten())
        elif k == "softmax_head":
            layers.append(Dense(shape[0], spec.n_classes))
        shape = out_shape
    net = Network(spec, layers, shapes)
    for layer in net.layers:
        layer.init_params(rng)
    return net
