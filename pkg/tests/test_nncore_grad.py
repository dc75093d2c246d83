import math

import numpy as np

from simsel.nncore import build_network, check_gradients, draw_safe_batch
from simsel.seeding import rng_from

from conftest import fd_loss_grad, random_net, random_net_spec


def test_uniform_logits_loss_is_log_n_classes():
    for n_classes in (2, 3, 5):
        net = random_net(n_classes * 11)
        net.set_flat_params(np.zeros(net.n_params))
        x = rng_from(0, "unif").normal(size=(6,) + net.spec.input_shape)
        labels = rng_from(1, "unif").integers(0, net.n_classes, size=6)
        assert abs(net.loss(x, labels) - math.log(net.n_classes)) < 1e-12


def test_gradients_match_finite_differences_eval_mode():
    worst = 0.0
    for seed in range(12):
        net = random_net(seed)
        rng = rng_from(seed, "batch")
        x, labels = draw_safe_batch(net, 4, rng)
        err = check_gradients(net, x, labels, max_coords=30,
                              coord_rng=rng_from(seed, "coords"))
        worst = max(worst, err)
    assert worst < 1e-4


def test_gradients_match_finite_differences_train_mode():
    worst = 0.0
    for seed in range(8):
        net = random_net(seed + 100)
        rng = rng_from(seed, "batch2")
        x, labels = draw_safe_batch(net, 4, rng)
        err = check_gradients(net, x, labels, train_mode=True,
                              mask_rng=rng_from(seed, "mask"),
                              max_coords=30, coord_rng=rng_from(seed, "c2"))
        worst = max(worst, err)
    assert worst < 1e-4


def test_l2_penalty_adds_half_lambda_weight_norm():
    net = random_net(3)
    x, labels = draw_safe_batch(net, 4, rng_from(0, "l2"))
    base = net.loss(x, labels)
    lam = 0.37
    w2 = sum(float((layer.params["W"] ** 2).sum())
             for layer in net.layers if "W" in layer.params)
    assert abs(net.loss(x, labels, l2_penalty=lam) - base - 0.5 * lam * w2) < 1e-12


def test_l2_gradient_matches_finite_differences():
    net = random_net(5)
    x, labels = draw_safe_batch(net, 4, rng_from(1, "l2g"))
    err = check_gradients(net, x, labels, l2_penalty=0.1, max_coords=30,
                          coord_rng=rng_from(2, "l2g"))
    assert err < 1e-4


def test_input_gradient_matches_finite_differences():
    net = random_net(9)
    x, labels = draw_safe_batch(net, 3, rng_from(4, "ig"))
    analytic = net.input_gradient(x, labels)
    h = 1e-5
    flat = x.reshape(-1)
    for i in rng_from(5, "ig").choice(flat.size, size=12, replace=False):
        xp, xm = flat.copy(), flat.copy()
        xp[i] += h
        xm[i] -= h
        lp = net.loss(xp.reshape(x.shape), labels)
        lm = net.loss(xm.reshape(x.shape), labels)
        fd = (lp - lm) / (2 * h)
        a = analytic.reshape(-1)[i]
        assert abs(a - fd) / max(1e-3, abs(a), abs(fd)) < 1e-4


def test_logit_jacobian_matches_finite_differences():
    net = random_net(13)
    x, _ = draw_safe_batch(net, 1, rng_from(6, "jac"))
    x = x[0]
    jac = net.logit_input_jacobian(x)
    assert jac.shape == (net.n_classes,) + x.shape
    h = 1e-5
    flat = x.reshape(-1)
    for i in rng_from(7, "jac").choice(flat.size, size=8, replace=False):
        xp, xm = flat.copy(), flat.copy()
        xp[i] += h
        xm[i] -= h
        lp = net.forward(xp.reshape(x.shape)[None])[0]
        lm = net.forward(xm.reshape(x.shape)[None])[0]
        fd = (lp - lm) / (2 * h)
        got = jac.reshape(net.n_classes, -1)[:, i]
        assert np.abs(got - fd).max() < 1e-4


def test_full_parameter_gradient_on_one_tiny_net():
    rng = rng_from(21, "netgen")
    spec = random_net_spec(rng)
    net = build_network(spec, seed=21)
    x, labels = draw_safe_batch(net, 3, rng_from(8, "full"))
    net.loss_and_gradients(x, labels)
    analytic = net.flat_grads()
    numeric = fd_loss_grad(net, x, labels)
    rel = np.abs(analytic - numeric) / np.maximum(
        1e-3, np.maximum(np.abs(analytic), np.abs(numeric)))
    assert rel.max() < 1e-4


def test_safe_batch_has_requested_size_and_valid_labels():
    net = random_net(2)
    x, labels = draw_safe_batch(net, 4, rng_from(3, "safe"), margin=1e-3)
    assert x.shape == (4,) + net.spec.input_shape
    assert labels.shape == (4,)
    assert set(labels) <= set(range(net.n_classes))
