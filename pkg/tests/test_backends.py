import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hdc_ifd import _fallback
from hdc_ifd._backend import get_kernels

try:
    compiled = get_kernels("compiled")
except ImportError:
    compiled = None

BACKENDS = [_fallback] + ([compiled] if compiled is not None else [])
ids = [m.__name__.rsplit(".", 1)[-1] for m in BACKENDS]
needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled extension not built")


def conv_loop(x, w, b):
    B, C, L = x.shape
    F, _, K = w.shape
    out = np.zeros((B, F, L - K + 1))
    for i in range(B):
        for f in range(F):
            for t in range(L - K + 1):
                out[i, f, t] = b[f] + sum(w[f, c, k] * x[i, c, t + k] for c in range(C) for k in range(K))
    return out


def pool_loop(x, p):
    B, C, L = x.shape
    out = np.zeros((B, C, L // p))
    idx = np.zeros((B, C, L // p), dtype=np.int64)
    for i in range(B):
        for c in range(C):
            for j in range(L // p):
                seg = list(x[i, c, j * p:(j + 1) * p])
                m = max(seg)
                out[i, c, j] = m
                idx[i, c, j] = j * p + seg.index(m)
    return out, idx


@pytest.mark.parametrize("k", BACKENDS, ids=ids)
@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(1, 5), st.integers(0, 8),
       st.integers(0, 2**31))
def test_conv_forward_matches_loop(k, B, C, F, K, extra, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((B, C, K + extra))
    w, b = rng.standard_normal((F, C, K)), rng.standard_normal(F)
    assert np.allclose(k.conv1d_forward(x, w, b), conv_loop(x, w, b), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("k", BACKENDS, ids=ids)
@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 4), st.integers(0, 9), st.integers(0, 2**31))
def test_maxpool_matches_loop(k, B, C, p, L, seed):
    rng = np.random.default_rng(seed)
    x = rng.integers(-2, 3, (B, C, max(L, p))).astype(float)  # integer values force ties
    out, idx = k.maxpool_forward(x, p)
    ref_out, ref_idx = pool_loop(x, p)
    assert np.array_equal(out, ref_out) and np.array_equal(idx, ref_idx)
    back = k.maxpool_backward(np.ones_like(out), idx, x.shape[2])
    assert back.sum() == out.size


@pytest.mark.parametrize("k", BACKENDS, ids=ids)
def test_conv_backward_adjoint(k):
    # <conv(x), g> is linear in x and w, so its gradients must reproduce the inner product
    rng = np.random.default_rng(0)
    x, w, b = rng.standard_normal((3, 2, 20)), rng.standard_normal((4, 2, 5)), rng.standard_normal(4)
    g = rng.standard_normal((3, 4, 16))
    dx, dw, db = k.conv1d_backward(x, w, g)
    inner = float((k.conv1d_forward(x, w, np.zeros(4)) * g).sum())
    assert np.isclose((dx * x).sum(), inner, rtol=1e-12)
    assert np.isclose((dw * w).sum(), inner, rtol=1e-12)
    assert np.allclose(db, g.sum(axis=(0, 2)))
    assert k.conv1d_backward(x, w, g, need_dx=False)[0] is None


@needs_compiled
def test_backends_agree_on_gradients():
    rng = np.random.default_rng(1)
    x, w = rng.standard_normal((16, 16, 18)), rng.standard_normal((32, 16, 3))
    g = rng.standard_normal((16, 32, 16))
    for a, b in zip(_fallback.conv1d_backward(x, w, g), compiled.conv1d_backward(x, w, g)):
        assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


@needs_compiled
def test_backends_agree_on_retrain_epoch():
    rng = np.random.default_rng(2)
    H = rng.standard_normal((200, 300))
    labels = rng.integers(0, 5, 200)
    C0 = rng.standard_normal((5, 300))
    order = rng.permutation(200).astype(np.int64)
    hnorm = np.linalg.norm(H, axis=1)
    Ca, Cb = C0.copy(), C0.copy()
    na = _fallback.hdc_retrain_epoch(Ca, H, hnorm, labels, order, 0.005)
    nb = compiled.hdc_retrain_epoch(Cb, H, hnorm, labels, order, 0.005)
    assert na == nb > 0
    assert np.allclose(Ca, Cb, rtol=0, atol=1e-12)


def test_environment_forces_fallback():
    code = "import hdc_ifd; print(hdc_ifd.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                         env={"HDC_IFD_BACKEND": "python", "PATH": ""}, check=True)
    assert out.stdout.strip() == "python"


def test_unknown_backend_name():
    with pytest.raises(ValueError):
        get_kernels("gpu")


@needs_compiled
def test_active_compiled_backend_mixes_kernels():
    from hdc_ifd import _backend
    if _backend.BACKEND != "compiled":
        pytest.skip("fallback forced by environment")
    assert _backend.kernels.conv1d_forward is _fallback.conv1d_forward
    assert _backend.kernels.maxpool_forward is compiled.maxpool_forward
    assert _backend.kernels.hdc_retrain_epoch is compiled.hdc_retrain_epoch
