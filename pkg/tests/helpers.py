"""Shared test utilities: kink-free model sampling and finite differences."""

import numpy as np

from vdd_robust.cnn import cnn_backward, cnn_forward, cross_entropy, init_cnn


def random_tiny_model(rng, input_shape=(1, 7, 8), conv_channels=(2, 3),
                      kernel_size=2, hidden_units=(5,)):
    model = init_cnn(input_shape, conv_channels, kernel_size, hidden_units, rng=rng)
    # keep weights O(1) but nonzero so activations stay away from ReLU kinks
    for w in model.parameters():
        w += 0.01 * rng.standard_normal(w.shape)
    return model


def well_separated_case(rng, margin=1e-3, **kwargs):
    """Model/input pair whose pre-activations sit away from ReLU and pool ties.

    Finite differences are only a valid oracle where the loss is smooth, so
    test points within h of a kink are resampled.
    """
    for _ in range(200):
        model = random_tiny_model(rng, **kwargs)
        x = rng.uniform(0.05, 1.0, model.input_shape)
        _, cache = cnn_forward(model, x)
        ok = all(np.min(np.abs(z)) > margin for z in cache.conv_pre)
        ok = ok and all(np.min(np.abs(z)) > margin for z in cache.fc_pre[:-1])
        n, c, h, w = cache.pool_in_shape
        win = cache.conv_act[-1][:, :, : h // 2 * 2, : w // 2 * 2]
        win = win.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        win = np.sort(win.reshape(n, c, h // 2, w // 2, 4), axis=-1)
        ok = ok and np.min(win[..., 3] - win[..., 2]) > margin
        if ok:
            return model, x
    raise RuntimeError("could not find a kink-free test point")


def loss_at(model, x, label):
    logits, _ = cnn_forward(model, x)
    return float(cross_entropy(logits[None], np.array([label]))[0])


def max_rel_error(analytic, numeric):
    # denominators are floored so finite-difference noise on near-zero
    # gradients does not register as relative error
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
    return float(np.max(np.abs(analytic - numeric) / denom))


def finite_diff_max_error(model, x, label, h=1e-4):
    """Worst relative error of analytic vs central-difference gradients."""
    _, cache = cnn_forward(model, x)
    grads, input_grad = cnn_backward(model, cache, label)
    worst = 0.0
    for param, grad in zip(model.parameters(), grads.arrays()):
        numeric = np.zeros_like(param)
        flat_p = param.reshape(-1)
        flat_n = numeric.reshape(-1)
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + h
            up = loss_at(model, x, label)
            flat_p[i] = orig - h
            down = loss_at(model, x, label)
            flat_p[i] = orig
            flat_n[i] = (up - down) / (2 * h)
        worst = max(worst, max_rel_error(grad, numeric))

    numeric_in = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_n = numeric_in.reshape(-1)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + h
        up = loss_at(model, x, label)
        flat_x[i] = orig - h
        down = loss_at(model, x, label)
        flat_x[i] = orig
        flat_n[i] = (up - down) / (2 * h)
    worst = max(worst, max_rel_error(input_grad, numeric_in))
    return worst
