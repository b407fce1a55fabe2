"""Input-gradient diagnostics, the layer-wise chain bound, and summary metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import polynet
from .grad import reverse, task_loss_grad_per_sample
from .polynet import PolyNetwork, activation_deriv, forward

SOURCES = ("loss_grad", "output_jacobian_fro")
REPORT_COLUMNS = ("method", "h1", "h2", "seed", "acc", "ig_mean", "ig_p95", "ig_p99",
                  "ig_max", "tail_ratio")


@dataclass
class SensitivityReport:
    mean: float
    p95: float
    p99: float
    max: float
    tail_ratio: float
    n_samples: int
    ig_source: str = "loss_grad"

    def to_dict(self) -> dict:
        return asdict(self)


def input_gradient_norms(net: PolyNetwork, X, y=None, source: str = "loss_grad",
                         loss_kind: str = "cross_entropy", batch_size: int = 512) -> np.ndarray:
    """Per-sample ||dL/dx||_2 (``loss_grad``) or ||dy/dx||_F (``output_jacobian_fro``)."""
    if source not in SOURCES:
        raise ValueError(f"unknown source {source!r}")
    X = polynet.check_input(net, X)
    out = []
    for i in range(0, len(X), batch_size):
        xb = X[i:i + batch_size]
        if source == "output_jacobian_fro":
            S = forward(net, xb, jacobian=True).Ss[-1]
            out.append(np.sqrt(np.sum(S * S, axis=(1, 2))))
        else:
            if y is None:
                raise ValueError("loss_grad needs targets")
            tape = forward(net, xb, jacobian=False)
            g_out = task_loss_grad_per_sample(tape.output, np.asarray(y)[i:i + batch_size],
                                              loss_kind)
            _, gx = reverse(net, tape, g_out, input_grad=True)
            out.append(np.sqrt(np.sum(gx * gx, axis=1)))
    return np.concatenate(out) if out else np.zeros(0)


def summarize(norms, ig_source: str = "loss_grad") -> SensitivityReport:
    """Mean, linear-interpolated p95/p99, max, and tail ratio p99/mean."""
    norms = np.asarray(norms, dtype=np.float64).ravel()
    if norms.size == 0:
        raise ValueError("summarize needs at least one value")
    s = np.sort(norms)
    mean = float(np.mean(s))
    p95, p99 = (float(v) for v in np.percentile(s, [95, 99], method="linear"))
    return SensitivityReport(mean, p95, p99, float(s[-1]), tail_ratio(mean, p99), s.size,
                             ig_source)


def tail_ratio(mean: float, p99: float) -> float:
    return p99 / mean if mean > 0 else float("nan")


def lipschitz_chain_check(net: PolyNetwork, x) -> tuple[float, float]:
    """(||S^(L)(x)||_F, prod_l ||diag(phi'(z_l)) W_l||_F) for one input."""
    tape = forward(net, np.asarray(x).reshape(1, -1), jacobian=True)
    S = tape.Ss[-1][0]
    lhs = math.sqrt(float(np.sum(S * S)))
    rhs = 1.0
    for layer, z in zip(net.layers, tape.zs):
        p = activation_deriv(layer.activation, z[0], layer.alpha)
        M = p[:, None] * layer.W
        rhs *= math.sqrt(float(np.sum(M * M)))
    return lhs, rhs


def pareto_distance(acc: float, tail: float, tail_min: float) -> float:
    """Distance to the ideal corner (accuracy 1, smallest observed tail ratio)."""
    if not 0.0 <= acc <= 1.0:
        raise ValueError("accuracy must lie in [0, 1]")
    if tail < tail_min:
        raise ValueError("tail ratio below the reference minimum")
    return math.hypot(1.0 - acc, tail - tail_min)


def efficiency_kpi(acc_percent: float, params: int) -> float:
    if params < 10:
        raise ValueError("efficiency KPI needs at least 10 parameters")
    return acc_percent / math.log10(params)


def accuracy(net: PolyNetwork, X, y) -> float:
    pred = np.argmax(polynet.predict(net, X), axis=1)
    return float(np.mean(pred == np.asarray(y)))
