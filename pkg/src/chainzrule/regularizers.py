"""Spectral normalization by power iteration, applied as a projection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class PowerIterState:
    u: np.ndarray | None = None
    v: np.ndarray | None = None
    iters: int = 0


def _unit(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x)
    return x / n if n > 0 else x


MAX_POWER_ITERS = 200


def spectral_norm_estimate(W, iters: int = 1, state: PowerIterState | None = None,
                           seed: int = 0, tol: float | None = None,
                           max_iters: int = MAX_POWER_ITERS) -> tuple[float, PowerIterState]:
    """Largest singular value of ``W`` by power iteration.

    The returned state warm-starts the next call, so a single iteration per
    optimizer step is usually enough once training is underway. With ``tol``
    set, iteration continues past ``iters`` until the estimate changes by less
    than ``tol`` (relative) or ``max_iters`` is reached; this matters when the
    top two singular values sit close together and one step cannot follow the
    leading direction.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    W = np.asarray(W, dtype=np.float64)
    if not np.any(W):
        return 0.0, state or PowerIterState()
    state = state or PowerIterState()
    u = state.u
    if u is None or u.shape != (W.shape[0],):
        u = _unit(np.random.default_rng(seed).standard_normal(W.shape[0]))
    v = state.v
    done = 0
    prev = None
    while True:
        v = _unit(W.T @ u)
        if not np.any(v):
            # u landed in the left null space; restart from a fresh direction
            u = _unit(np.random.default_rng(seed + state.iters + done + 1).standard_normal(W.shape[0]))
            v = _unit(W.T @ u)
        Wv = W @ v
        sigma = float(np.linalg.norm(Wv))
        u = _unit(Wv)
        done += 1
        if done >= iters:
            if tol is None or done >= max(iters, max_iters):
                break
            if prev is not None and abs(sigma - prev) <= tol * sigma:
                break
        prev = sigma
    return sigma, PowerIterState(u, v, state.iters + done)


def apply_spectral_constraint(W, sigma: float) -> np.ndarray:
    """Scale ``W`` into the unit spectral ball; matrices already inside are untouched."""
    W = np.asarray(W)
    if sigma <= 1.0:
        return W
    return W / sigma


def project_network(net, states: list[PowerIterState] | None, power_iters: int,
                    tol: float | None = None):
    """Apply the spectral constraint to every weight matrix of ``net`` in place."""
    if states is None:
        states = [PowerIterState() for _ in net.layers]
    for i, layer in enumerate(net.layers):
        sigma, states[i] = spectral_norm_estimate(layer.W, power_iters, states[i], seed=i, tol=tol)
        layer.W = apply_spectral_constraint(layer.W, sigma).astype(layer.W.dtype, copy=False)
    return states
