"""Finite-difference verification of the analytic gradients.

Central differences in parameter space, compared coordinate-wise against
backprop with a floored relative error. ReLU kinks and pooling ties make
the loss locally non-smooth, so inputs can be resampled until every unit
sits a safe margin away from those points.
"""

import numpy as np

from ..errors import InvariantError
from .layers import AdaptiveMaxPool, Dropout, ReLU


def relative_error(a, n, floor=1e-3):
    """|a - n| over max(floor, |a|, |n|), elementwise."""
    a = np.asarray(a, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    denom = np.maximum(floor, np.maximum(np.abs(a), np.abs(n)))
    return np.abs(a - n) / denom


def _is_margin_safe(net, x, margin):
    h = x
    for layer in net.layers:
        if isinstance(layer, ReLU):
            if np.abs(h).min() < margin:
                return False
        if isinstance(layer, AdaptiveMaxPool):
            length = h.shape[2]
            for s, e in layer._bin_bounds(length):
                seg = np.sort(h[:, :, s:e], axis=2)
                if seg.shape[2] < 2:
                    continue
                t1, t2 = seg[:, :, -1], seg[:, :, -2]
                # exact-zero ties come from clamped relu units and are
                # locally constant; only ties between live values hurt
                risky = (t1 - t2 < margin) & ~((t1 == 0.0) & (t2 == 0.0))
                if risky.any():
                    return False
        h = layer.forward(h, train_mode=False)
    return True


def draw_safe_batch(net, batch_size, rng, margin=1e-3, max_tries=500):
    """Inputs and labels for which the loss is smooth around the current
    parameters: no ReLU input or pooling-window runner-up within margin."""
    c, length = net.spec.input_shape
    for _ in range(max_tries):
        x = rng.normal(size=(batch_size, c, length))
        if _is_margin_safe(net, x, margin):
            labels = rng.integers(0, net.n_classes, size=batch_size)
            return x, labels
    raise InvariantError("could not sample a kink-free batch")


def check_gradients(net, x, labels, h=1e-5, l2_penalty=0.0, train_mode=False,
                    mask_rng=None, max_coords=None, coord_rng=None):
    """Max floored relative error between backprop and central differences.

    In train mode each dropout layer gets one pinned mask so the analytic
    and numerical passes see identical noise. ``max_coords`` limits the
    check to a random subset of parameter coordinates.
    """
    labels = np.asarray(labels, dtype=np.intp)
    pinned = False
    if train_mode:
        drops = net.dropout_layers()
        if drops:
            if mask_rng is None:
                raise InvariantError("train-mode check needs mask_rng for dropout")
            acts = net.activations(x)
            masks = []
            for layer, prev in zip(net.layers, [x] + acts[:-1]):
                if isinstance(layer, Dropout):
                    keep = mask_rng.random(prev.shape) >= layer.rate
                    masks.append(keep / (1.0 - layer.rate))
            net.pin_dropout_masks(masks)
            pinned = True
    try:
        net.loss_and_gradients(x, labels, l2_penalty=l2_penalty, train_mode=train_mode)
        analytic = net.flat_grads()
        theta = net.flat_params()
        coords = np.arange(theta.size)
        if max_coords is not None and theta.size > max_coords:
            if coord_rng is None:
                raise InvariantError("coordinate subsampling needs coord_rng")
            coords = coord_rng.choice(theta.size, size=max_coords, replace=False)
        numeric = np.zeros(len(coords))
        for j, i in enumerate(coords):
            step = np.zeros_like(theta)
            step[i] = h
            net.set_flat_params(theta + step)
            lp = net.loss(x, labels, l2_penalty) if not train_mode else _train_loss(
                net, x, labels, l2_penalty
            )
            net.set_flat_params(theta - step)
            lm = net.loss(x, labels, l2_penalty) if not train_mode else _train_loss(
                net, x, labels, l2_penalty
            )
            numeric[j] = (lp - lm) / (2 * h)
        net.set_flat_params(theta)
        return float(relative_error(analytic[coords], numeric).max())
    finally:
        if pinned:
            net.unpin_dropout_masks()


def _train_loss(net, x, labels, l2_penalty):
    loss, _ = net.loss_and_gradients(x, labels, l2_penalty=l2_penalty, train_mode=True)
    return loss
