"""PGD attacks and noise corruptions for desk-scale robustness probes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import polynet
from .grad import reverse, task_loss_grad_per_sample
from .polynet import PolyNetwork, forward

GAUSSIAN_SIGMA = (0.04, 0.06, 0.08, 0.09, 0.10)
IMPULSE_FRACTION = (0.01, 0.02, 0.03, 0.05, 0.07)
CORRUPTIONS = ("gaussian_noise", "impulse_noise")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 8 / 255
    steps: int = 10
    step_size: float | None = None  # defaults to 2.5 * epsilon / steps
    seed: int = 0
    random_start: bool = True

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step_size must be positive")

    @property
    def resolved_step_size(self) -> float:
        if self.step_size is not None:
            return self.step_size
        return 2.5 * self.epsilon / self.steps


def input_loss_grad(net: PolyNetwork, X, y, loss_kind: str) -> np.ndarray:
    """Per-sample dL/dx, the same reverse path used by the sensitivity reports."""
    tape = forward(net, X, jacobian=False)
    g_out = task_loss_grad_per_sample(tape.output, y, loss_kind)
    _, gx = reverse(net, tape, g_out, input_grad=True)
    return gx


def pgd_attack(net: PolyNetwork, x, label, cfg: AttackConfig,
               loss_kind: str = "cross_entropy") -> np.ndarray:
    """L-inf PGD with sign steps, box [0, 1] and epsilon-ball projection."""
    x0 = np.asarray(x, dtype=net.dtype)
    single = x0.ndim == 1
    X0 = x0.reshape(1, -1) if single else x0
    y = np.atleast_1d(np.asarray(label))
    eps = cfg.epsilon
    lo, hi = X0 - eps, X0 + eps
    xa = X0.copy()
    if cfg.random_start:
        rng = np.random.default_rng(cfg.seed)
        xa = np.clip(xa + rng.uniform(-eps, eps, size=xa.shape), 0.0, 1.0)
    step = cfg.resolved_step_size
    for _ in range(cfg.steps):
        g = input_loss_grad(net, xa, y, loss_kind)
        xa = np.clip(np.clip(xa + step * np.sign(g), 0.0, 1.0), lo, hi)
    return xa[0] if single else xa


def corrupt(x, kind: str, severity: int, seed: int = 0, scale: float = 1.0) -> np.ndarray:
    """Gaussian or salt-and-pepper noise on inputs in [0, 1], clipped back to [0, 1]."""
    if kind not in CORRUPTIONS:
        raise ValueError(f"unknown corruption {kind!r}")
    if severity not in (1, 2, 3, 4, 5):
        raise ValueError(f"severity must be 1..5, got {severity!r}")
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(seed)
    if kind == "gaussian_noise":
        sigma = GAUSSIAN_SIGMA[severity - 1] * scale
        return np.clip(x + rng.normal(0.0, sigma, size=x.shape), 0.0, 1.0)
    X = x.reshape(-1, x.shape[-1]).copy()
    n_coords = X.shape[1]
    k = math.ceil(IMPULSE_FRACTION[severity - 1] * n_coords - 1e-9)
    for row in X:
        idx = rng.choice(n_coords, size=k, replace=False)
        row[idx] = rng.integers(0, 2, size=k).astype(np.float64)
    return X.reshape(x.shape)


def pgd_probe(net: PolyNetwork, cfg: AttackConfig, loss_kind: str = "cross_entropy"):
    def probe(X, y):
        return pgd_attack(net, X, y, cfg, loss_kind)
    return probe


def corruption_probe(kind: str, severity: int, seed: int = 0):
    def probe(X, y):
        return corrupt(X, kind, severity, seed)
    return probe


def identity_probe(X, y):
    return X


def robust_accuracy(net: PolyNetwork, X, y, probe=identity_probe, batch_size: int = 1000) -> float:
    """Accuracy on probed inputs; ``probe(X, y)`` returns perturbed X."""
    y = np.asarray(y)
    correct = 0
    for i in range(0, len(X), batch_size):
        xb = probe(np.asarray(X[i:i + batch_size]), y[i:i + batch_size])
        pred = np.argmax(polynet.predict(net, xb), axis=1)
        correct += int(np.sum(pred == y[i:i + batch_size]))
    return correct / len(y)
