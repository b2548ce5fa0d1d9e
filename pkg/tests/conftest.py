"""Shared oracles and generators for the test suite.

The finite-difference helpers here are the independent gradient oracle:
they never touch the backward pass, only repeated forward losses.
"""

from __future__ import annotations

import numpy as np
import pytest

from advlab import nn

FD_STEP = 1e-4


def fd_grad_params(net: nn.DenseNet, X, y, spec: nn.LossSpec, h: float = FD_STEP) -> np.ndarray:
    """Central finite differences of the mean batch loss w.r.t. parameters."""
    theta = net.flatten()
    out = np.empty_like(theta)
    for i in range(len(theta)):
        tp = theta.copy()
        tp[i] += h
        tm = theta.copy()
        tm[i] -= h
        lp = nn.loss_batch(net.with_params(tp), (X, y), spec)[0]
        lm = nn.loss_batch(net.with_params(tm), (X, y), spec)[0]
        out[i] = (lp - lm) / (2 * h)
    return out


def fd_grad_inputs(net: nn.DenseNet, X, y, spec: nn.LossSpec, h: float = FD_STEP) -> np.ndarray:
    """Central finite differences of each per-example loss w.r.t. its features."""
    X = np.asarray(X, dtype=np.float64)
    out = np.empty_like(X)
    for i in range(X.shape[0]):
        for j in range(X.shape[1]):
            Xp = X.copy()
            Xp[i, j] += h
            Xm = X.copy()
            Xm[i, j] -= h
            lp = nn.loss_batch(net, (Xp, y), spec)[1][i]
            lm = nn.loss_batch(net, (Xm, y), spec)[1][i]
            out[i, j] = (lp - lm) / (2 * h)
    return out


def random_net_and_batch(seed: int, activation: str = "relu", widths=(4, 6, 3), n: int = 5):
    """Random net plus a batch kept away from relu kinks and the loss clip.

    Pre-activations are resampled until every |z| exceeds 1e-3, which both
    satisfies the kink-exclusion rule and keeps the finite-difference step
    inside a smooth region.
    """
    rng = np.random.default_rng(seed)
    for attempt in range(50):
        ws = tuple(rng.normal(scale=0.6, size=(o, i))
                   for i, o in zip(widths[:-1], widths[1:]))
        bs = tuple(rng.normal(scale=0.3, size=o) for o in widths[1:])
        net = nn.DenseNet(ws, bs, activation)
        X = rng.normal(size=(n, widths[0]))
        y = rng.integers(0, widths[-1], size=n)
        acts, zs = nn._forward_cached(net, X)
        margin = min(np.abs(z).min() for z in zs[:-1]) if len(zs) > 1 else 1.0
        if activation != "relu" or margin > 1e-3:
            return net, X, y
    raise AssertionError("could not find a kink-free instance")


def assert_grad_close(analytic: np.ndarray, numeric: np.ndarray, rtol: float = 1e-5):
    """Componentwise relative comparison with an absolute floor of rtol."""
    scale = np.maximum(1.0, np.abs(numeric))
    err = np.abs(analytic - numeric) / scale
    assert err.max() < rtol, f"gradient mismatch: max scaled error {err.max():.3g}"


@pytest.fixture
def tiny_blobs():
    from advlab.data import split, synth_blobs
    pool = synth_blobs(40, 3, 4, 1.0, seed=9)
    return split(pool, 80, seed=9)
