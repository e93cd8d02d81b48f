"""Pure numpy implementations of the hot kernels.

Used when the compiled ``_kernels`` extension is unavailable or when
``HDC_IFD_BACKEND=python`` is set. Signatures mirror ``_kernels.pyx``.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = ["conv1d_forward", "conv1d_backward", "maxpool_forward", "maxpool_backward",
           "hdc_retrain_epoch"]


def conv1d_forward(x, w, b):
    """Valid, stride-1 cross-correlation.

    x: (B, Cin, L), w: (Cout, Cin, K), b: (Cout,) -> (B, Cout, L - K + 1)
    """
    B, cin, L = x.shape
    cout, _, K = w.shape
    lout = L - K + 1
    cols = sliding_window_view(x, K, axis=2)  # (B, Cin, Lout, K)
    cols = cols.transpose(0, 2, 1, 3).reshape(B * lout, cin * K)
    out = cols @ w.reshape(cout, cin * K).T
    out += b
    return np.ascontiguousarray(out.reshape(B, lout, cout).transpose(0, 2, 1))


def conv1d_backward(x, w, dout, need_dx=True):
    """Gradients of conv1d_forward. Returns (dx or None, dw, db)."""
    B, cin, L = x.shape
    cout, _, K = w.shape
    lout = dout.shape[2]
    cols = sliding_window_view(x, K, axis=2).transpose(0, 2, 1, 3).reshape(B * lout, cin * K)
    d2 = dout.transpose(0, 2, 1).reshape(B * lout, cout)
    dw = (d2.T @ cols).reshape(cout, cin, K)
    db = dout.sum(axis=(0, 2))
    dx = None
    if need_dx:
        dcols = (d2 @ w.reshape(cout, cin * K)).reshape(B, lout, cin, K)
        dx = np.zeros_like(x)
        for k in range(K):
            dx[:, :, k:k + lout] += dcols[:, :, :, k].transpose(0, 2, 1)
    return dx, dw, db


def maxpool_forward(x, p):
    """Non-overlapping max pool of width p; trailing remainder dropped.

    Returns (out, idx) where idx holds the absolute position of the first
    maximal element of each pooling window.
    """
    B, C, L = x.shape
    lp = L // p
    win = x[:, :, :lp * p].reshape(B, C, lp, p)
    arg = win.argmax(axis=3)  # argmax picks the first maximum
    out = np.take_along_axis(win, arg[..., None], axis=3)[..., 0]
    idx = arg + np.arange(lp) * p
    return np.ascontiguousarray(out), idx.astype(np.int64)


def maxpool_backward(dout, idx, L):
    B, C, lp = dout.shape
    dx = np.zeros((B, C, L))
    np.put_along_axis(dx, idx, dout, axis=2)
    return dx


def hdc_retrain_epoch(C, H, hnorm, labels, order, eta):
    """One online retraining pass over H in the given order.

    C is updated in place. Returns the number of misclassified visits.
    """
    J = C.shape[0]
    cnorm = np.sqrt(np.einsum("jd,jd->j", C, C))
    updates = 0
    for m in order:
        h = H[m]
        y = labels[m]
        dots = C @ h
        best = 0
        best_sim = -np.inf
        for j in range(J):
            den = hnorm[m] * cnorm[j]
            sim = dots[j] / den if den > 0.0 else 0.0
            if sim > best_sim:
                best_sim = sim
                best = j
        if best != y:
            C[y] += eta * h
            C[best] -= eta * h
            cnorm[y] = np.sqrt(C[y] @ C[y])
            cnorm[best] = np.sqrt(C[best] @ C[best])
            updates += 1
    return updates
