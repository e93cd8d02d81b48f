"""Independent reference computations used by the unit and acceptance tests.

Nothing here calls into the package's kernels: loops are written out in
plain Python so they can serve as oracles for the vectorized code.
"""

import math

import numpy as np

from hdc_ifd import substitute as sub

TOY = sub.NetworkConfig(input_length=12, wide_kernel=5, wide_filters=2, small_kernel=3,
                        small_filters=2, pool_width=2, dense_units=4, num_classes=3)


def random_toy_net(seed, cfg=TOY, scale=1.0):
    """Toy net with every parameter, biases included, drawn N(0, scale^2)."""
    rng = np.random.default_rng(seed)
    net = sub.init_net(cfg)
    for k, v in net.params.items():
        net.params[k] = scale * rng.standard_normal(v.shape)
    return net


def _conv(x, w, b):
    F, C, K = len(w), len(w[0]), len(w[0][0])
    L = len(x[0]) - K + 1
    return [[b[f] + sum(w[f][c][k] * x[c][t + k] for c in range(C) for k in range(K))
             for t in range(L)] for f in range(F)]


def _relu(rows):
    return [[v if v > 0 else 0.0 for v in r] for r in rows]


def _pool(rows, p):
    return [[max(r[i * p:(i + 1) * p]) for i in range(len(r) // p)] for r in rows]


def _dense(v, W, b):
    return [b[i] + sum(W[i][j] * v[j] for j in range(len(v))) for i in range(len(b))]


def logits(net, x):
    P = {k: v.tolist() for k, v in net.params.items()}
    pw = net.config.pool_width
    a = _pool(_relu(_conv([list(map(float, x))], P["conv_wide_w"], P["conv_wide_b"])), pw)
    a = _pool(_relu(_conv(a, P["conv_small_w"], P["conv_small_b"])), pw)
    flat = [v for r in a for v in r]
    h = [max(v, 0.0) for v in _dense(flat, P["dense_hidden_w"], P["dense_hidden_b"])]
    return _dense(h, P["dense_out_w"], P["dense_out_b"])


def cross_entropy(net, x, y):
    z = logits(net, x)
    exps = [math.exp(v) for v in z]
    return -math.log(exps[y] / sum(exps))


def finite_difference(net, x, y, step=1e-5):
    """Central differences of the loss w.r.t. every parameter and every input sample."""
    grads = {}
    for name, arr in net.params.items():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            keep = arr[idx]
            arr[idx] = keep + step
            up = sub.loss(net, x, y)
            arr[idx] = keep - step
            down = sub.loss(net, x, y)
            arr[idx] = keep
            g[idx] = (up - down) / (2 * step)
        grads[name] = g
    x = np.array(x, dtype=float)
    gx = np.zeros_like(x)
    for i in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        gx[i] = (sub.loss(net, xp, y) - sub.loss(net, xm, y)) / (2 * step)
    return grads, gx


def relative_error(analytic, numeric, floor=1e-8):
    """Norm-wise relative error of one gradient tensor."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), floor))


def gradient_check(seed, step=1e-5):
    """Worst relative error over all tensors for one random toy (net, x, y)."""
    rng = np.random.default_rng([seed, 1])
    net = random_toy_net(seed)
    x = rng.standard_normal(TOY.input_length)
    y = int(rng.integers(TOY.num_classes))
    bundle = sub.backward(net, x, y)
    num, num_x = finite_difference(net, x, y, step)
    errs = {k: relative_error(bundle.param_grads[k], num[k]) for k in num}
    errs["input"] = relative_error(bundle.input_grad, num_x)
    return errs


def bim_straight_line(net, x, y, eps, iters):
    """Iterated sign step with an element-wise clip, one sample, written as plain loops."""
    alpha = eps / iters
    x = [float(v) for v in x]
    adv = list(x)
    for _ in range(iters):
        g = sub.backward(net, np.array(adv), y).input_grad
        step = [adv[i] + alpha * (1.0 if g[i] > 0 else -1.0 if g[i] < 0 else 0.0) for i in range(len(x))]
        adv = [min(x[i] + eps, max(x[i] - eps, step[i])) for i in range(len(x))]
    return np.array(adv)


def accuracy_recount(pred, labels):
    correct = 0
    for p, t in zip(pred, labels):
        if p == t:
            correct += 1
    return correct / len(labels)
