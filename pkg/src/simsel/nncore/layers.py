"""Layer kernels: forward passes with caches, exact backward passes.

All arrays are float64. Batch layout is (n, channels, length) for sequence
layers and (n, features) after flatten. Each layer owns its parameters and,
after a backward pass, the matching gradients.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Layer:
    """Base: no parameters, identity shapes."""

    def __init__(self):
        self.params = {}
        self.grads = {}

    def init_params(self, rng):
        pass

    def forward(self, x, train_mode=False):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    @property
    def n_params(self):
        return sum(p.size for p in self.params.values())


def _he_uniform(rng, shape, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Dense(Layer):
    def __init__(self, in_features, out_features):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.params = {
            "W": np.zeros((in_features, out_features)),
            "b": np.zeros(out_features),
        }
        self._x = None

    def init_params(self, rng):
        self.params["W"] = _he_uniform(rng, (self.in_features, self.out_features), self.in_features)
        self.params["b"] = np.zeros(self.out_features)

    def forward(self, x, train_mode=False):
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dy):
        self.grads = {"W": self._x.T @ dy, "b": dy.sum(axis=0)}
        return dy @ self.params["W"].T


class Conv1d(Layer):
    """Valid cross-correlation, stride 1. W is (out_c, in_c, kernel)."""

    def __init__(self, in_channels, out_channels, kernel):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.params = {
            "W": np.zeros((out_channels, in_channels, kernel)),
            "b": np.zeros(out_channels),
        }
        self._win = None
        self._in_len = 0

    def init_params(self, rng):
        fan_in = self.in_channels * self.kernel
        self.params["W"] = _he_uniform(
            rng, (self.out_channels, self.in_channels, self.kernel), fan_in
        )
        self.params["b"] = np.zeros(self.out_channels)

    def forward(self, x, train_mode=False):
        # windows: (n, in_c, out_len, kernel)
        self._in_len = x.shape[2]
        self._win = sliding_window_view(x, self.kernel, axis=2)
        y = np.einsum("nclk,ock->nol", self._win, self.params["W"])
        return y + self.params["b"][None, :, None]

    def backward(self, dy):
        k = self.kernel
        self.grads = {
            "W": np.einsum("nol,nclk->ock", dy, self._win),
            "b": dy.sum(axis=(0, 2)),
        }
        # full correlation: pad dy by k-1 on both ends, flip kernel taps
        pad = np.pad(dy, ((0, 0), (0, 0), (k - 1, k - 1)))
        win_dy = sliding_window_view(pad, k, axis=2)  # (n, out_c, in_len, k)
        return np.einsum("nolk,ock->ncl", win_dy, self.params["W"][:, :, ::-1])


class ReLU(Layer):
    def __init__(self):
        super().__init__()
        self._mask = None

    def forward(self, x, train_mode=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask


class Dropout(Layer):
    """Inverted dropout; identity when not training.

    A mask can be injected via ``set_mask`` so two passes (analytic and
    numerical) see the same noise; otherwise one is drawn from the rng
    handed to ``forward``.
    """

    def __init__(self, rate):
        super().__init__()
        self.rate = rate
        self._mask = None
        self._pinned = None

    def set_mask(self, mask):
        self._pinned = mask

    def forward(self, x, train_mode=False, rng=None):
        if not train_mode or self.rate == 0.0:
            self._mask = None
            return x
        if self._pinned is not None:
            mask = self._pinned
        else:
            if rng is None:
                raise ValueError("dropout in train mode needs an rng or a pinned mask")
            mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        self._mask = mask
        return x * mask

    def backward(self, dy):
        if self._mask is None:
            return dy
        return dy * self._mask


class AdaptiveMaxPool(Layer):
    """Max over out_len near-equal bins; ties go to the earliest index."""

    def __init__(self, out_len):
        super().__init__()
        self.out_len = out_len
        self._argmax = None
        self._in_shape = None
        self._bounds = None

    def _bin_bounds(self, length):
        if self._bounds is not None and self._bounds[0] == length:
            return self._bounds[1]
        out = self.out_len
        starts = [(i * length) // out for i in range(out)]
        ends = [-(-((i + 1) * length) // out) for i in range(out)]
        self._bounds = (length, list(zip(starts, ends)))
        return self._bounds[1]

    def forward(self, x, train_mode=False):
        n, c, length = x.shape
        self._in_shape = x.shape
        y = np.empty((n, c, self.out_len))
        arg = np.empty((n, c, self.out_len), dtype=np.intp)
        for i, (s, e) in enumerate(self._bin_bounds(length)):
            seg = x[:, :, s:e]
            idx = seg.argmax(axis=2)
            arg[:, :, i] = idx + s
            y[:, :, i] = np.take_along_axis(seg, idx[:, :, None], axis=2)[:, :, 0]
        self._argmax = arg
        return y

    def backward(self, dy):
        dx = np.zeros(self._in_shape)
        n, c, _ = self._in_shape
        ni = np.arange(n)[:, None, None]
        ci = np.arange(c)[None, :, None]
        np.add.at(dx, (ni, ci, self._argmax), dy)
        return dx


class Flatten(Layer):
    def __init__(self):
        super().__init__()
        self._in_shape = None

    def forward(self, x, train_mode=False):
        self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._in_shape)
