"""Reverse-mode gradients through the dual-stream pass, Adam, and training.

The Jacobian penalty depends on the parameters through every factor of
``S^(l) = diag(phi'(z^(l))) W^(l) S^(l-1)``. ``backward`` differentiates that
recursion with hand-derived adjoints over the forward tape: the adjoint of
``S^(l)`` flows into ``W^(l)`` directly, into ``phi'`` (hence into ``alpha``
and, through ``phi''``, into ``z``), and back to ``S^(l-1)``.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import polynet
from .polynet import PolyNetwork, Tape, activation_deriv, activation_deriv2, forward
from .regularizers import project_network

LOSSES = ("mse", "cross_entropy")


class TrainingDivergedError(FloatingPointError):
    def __init__(self, message: str, report: "TrainReport | None" = None):
        super().__init__(message)
        self.report = report


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class LayerGrads:
    dW: np.ndarray
    db: np.ndarray
    dalpha: np.ndarray | None = None

    def arrays(self) -> list[np.ndarray]:
        return [self.dW, self.db] + ([self.dalpha] if self.dalpha is not None else [])


@dataclass
class ParamGrads:
    layers: list[LayerGrads]

    def arrays(self) -> list[np.ndarray]:
        return [a for g in self.layers for a in g.arrays()]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def global_norm(self) -> float:
        return float(np.sqrt(sum(np.sum(a * a) for a in self.arrays())))


# ---------------------------------------------------------------------------
# losses


def _targets(loss_kind: str, y, out: np.ndarray) -> np.ndarray:
    if loss_kind == "mse":
        y = np.asarray(y, dtype=out.dtype)
        return y.reshape(out.shape)
    if loss_kind == "cross_entropy":
        y = np.asarray(y)
        if not np.issubdtype(y.dtype, np.integer):
            raise TypeError("cross_entropy needs integer class targets")
        return y.reshape(-1)
    raise ValueError(f"unknown loss {loss_kind!r}")


def _log_softmax(out: np.ndarray) -> np.ndarray:
    shifted = out - out.max(axis=1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))


def task_loss_per_sample(out: np.ndarray, y, loss_kind: str) -> np.ndarray:
    t = _targets(loss_kind, y, out)
    if loss_kind == "mse":
        return np.mean((out - t) ** 2, axis=1)
    return -_log_softmax(out)[np.arange(len(t)), t]


def task_loss_grad_per_sample(out: np.ndarray, y, loss_kind: str) -> np.ndarray:
    """d(per-sample loss)/d(out), one row per sample (not averaged)."""
    t = _targets(loss_kind, y, out)
    if loss_kind == "mse":
        return 2.0 * (out - t) / out.shape[1]
    probs = np.exp(_log_softmax(out))
    probs[np.arange(len(t)), t] -= 1.0
    return probs


def task_loss(net: PolyNetwork, X, y, loss_kind: str) -> float:
    out = polynet.predict(net, X)
    return float(np.mean(task_loss_per_sample(out, y, loss_kind)))


def loss_total(net: PolyNetwork, X, y, loss_kind: str) -> tuple[float, Tape]:
    """Mean task loss plus the regularizer's Jacobian penalty."""
    X = np.asarray(X)
    if len(X) == 0:
        raise ValueError("empty batch")
    scope = net.regularizer.penalty_scope
    tape = forward(net, X, jacobian=scope is not None)
    value = float(np.mean(task_loss_per_sample(tape.output, y, loss_kind)))
    if scope is not None:
        value += net.regularizer.lam * polynet.dreg_penalty(tape.Ss, scope)
    if not np.isfinite(value):
        raise TrainingDivergedError(f"non-finite loss {value!r}")
    return value, tape


# ---------------------------------------------------------------------------
# reverse pass


def reverse(net: PolyNetwork, tape: Tape, g_out: np.ndarray, penalty_coef: float = 0.0,
            scope: str | None = None, input_grad: bool = False):
    """Backpropagate ``g_out`` (dL/d output) and a Jacobian penalty.

    The penalty is ``penalty_coef * sum_b sum_{l in scope} ||S_b^(l)||_F^2``;
    pass ``lam / B`` to get the batch mean. Returns ``(ParamGrads, dL/dx)``,
    the latter None unless ``input_grad`` (only the task path reaches x).
    """
    L = len(net.layers)
    use_S = scope is not None and penalty_coef != 0.0
    if use_S and tape.Ss is None:
        raise ValueError("tape was recorded without the Jacobian stream")
    grads: list[LayerGrads] = [None] * L
    gh = g_out
    gS = None
    for l in range(L - 1, -1, -1):
        layer = net.layers[l]
        z = tape.zs[l]
        h_in = tape.hs[l]
        if use_S and (scope == "all_layers" or l == L - 1):
            contrib = 2.0 * penalty_coef * tape.Ss[l]
            gS = contrib if gS is None else gS + contrib
        p = activation_deriv(layer.activation, z, layer.alpha)
        gz = gh * p
        dW = np.zeros_like(layer.W)
        dalpha = None if layer.alpha is None else np.zeros_like(layer.alpha)
        gS_prev = None
        if gS is not None:
            if l == 0:
                A = np.broadcast_to(layer.W, gS.shape)
            else:
                A = np.matmul(layer.W, tape.Ss[l - 1])
            gp = np.sum(gS * A, axis=2)
            gz = gz + gp * activation_deriv2(layer.activation, z, layer.alpha)
            gA = p[:, :, None] * gS
            if l == 0:
                dW += gA.sum(axis=0)
            else:
                S_prev = tape.Ss[l - 1]
                dW += (gA.transpose(1, 0, 2).reshape(gA.shape[1], -1)
                       @ S_prev.transpose(1, 0, 2).reshape(S_prev.shape[1], -1).T)
                gS_prev = np.matmul(layer.W.T, gA)
            if dalpha is not None:
                # d phi'(z) / d alpha_k = k z^(k-1)
                zp = np.ones_like(z)
                for k in range(1, layer.degree + 1):
                    dalpha[:, k - 1] += k * np.sum(gp * zp, axis=0)
                    zp = zp * z
        if dalpha is not None:
            zp = z.copy()
            for k in range(1, layer.degree + 1):
                dalpha[:, k - 1] += np.sum(gh * zp, axis=0)
                zp = zp * z
        dW += gz.T @ h_in
        db = gz.sum(axis=0)
        grads[l] = LayerGrads(dW, db, dalpha)
        if l > 0 or input_grad:
            gh = gz @ layer.W
        gS = gS_prev
    for l, g in enumerate(grads):
        for name, arr in zip(("W", "b", "alpha"), g.arrays()):
            if not np.all(np.isfinite(arr)):
                raise NonFiniteGradientError(f"non-finite gradient in layer {l}, block {name}")
    return ParamGrads(grads), (gh if input_grad else None)


def backward(net: PolyNetwork, X, y, loss_kind: str, tape: Tape | None = None) -> ParamGrads:
    """Exact gradient of ``loss_total`` with respect to every W, b and alpha."""
    scope = net.regularizer.penalty_scope
    if tape is None or (scope is not None and tape.Ss is None):
        tape = forward(net, X, jacobian=scope is not None)
    B = tape.x.shape[0]
    g_out = task_loss_grad_per_sample(tape.output, y, loss_kind) / B
    coef = net.regularizer.lam / B if scope is not None else 0.0
    grads, _ = reverse(net, tape, g_out, coef, scope)
    return grads


def finite_diff_grad(net: PolyNetwork, X, y, loss_kind: str, step: float = 1e-5) -> ParamGrads:
    """Central differences of ``loss_total`` per parameter (test oracle, 64-bit only)."""
    if net.dtype != np.float64:
        raise TypeError("finite differences need a float64 network")
    work = net.copy()
    out = []
    for layer in work.layers:
        blocks = []
        for arr in layer.arrays():
            g = np.zeros_like(arr)
            flat = arr.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                fp, _ = loss_total(work, X, y, loss_kind)
                flat[i] = orig - step
                fm, _ = loss_total(work, X, y, loss_kind)
                flat[i] = orig
                gflat[i] = (fp - fm) / (2.0 * step)
            blocks.append(g)
        out.append(LayerGrads(*blocks))
    return ParamGrads(out)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(params, grads, state: AdamState, t: int, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update. Returns (new_params, new_state)."""
    if t < 1:
        raise ValueError("step index starts at 1")
    new_params, ms, vs = [], [], []
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        step = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_params.append((p - step).astype(p.dtype, copy=False))
        ms.append(m)
        vs.append(v)
    return new_params, AdamState(ms, vs, t)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    clip_norm: float | None = None
    precision: int = 64

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")
        if self.precision not in (32, 64):
            raise ValueError("precision is 32 or 64")

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    status: str = "ok"
    final_metrics: dict = field(default_factory=dict)
    epoch_seconds: list[float] = field(default_factory=list, compare=False)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def train(net: PolyNetwork, train_set, val_set, config: TrainConfig, loss_kind: str):
    """Mini-batch Adam with early stopping on validation task loss.

    ``train_set`` and ``val_set`` are ``(X, y)`` pairs. Returns the network
    snapshot with the best validation loss, and the report.
    """
    if loss_kind not in LOSSES:
        raise ValueError(f"unknown loss {loss_kind!r}")
    Xtr, ytr = train_set
    Xva, yva = val_set
    net = net.copy()
    Xtr = polynet.check_input(net, Xtr)
    Xva = polynet.check_input(net, Xva)
    ytr = np.asarray(ytr)
    rng = np.random.default_rng(config.seed)
    reg = net.regularizer
    sn_states = None
    if reg.kind == "spectral_norm":
        sn_states = project_network(net, None, reg.power_iters, reg.power_tol)
    params = net.param_arrays()
    adam = AdamState.zeros_like(params)
    report = TrainReport()
    best = net.copy()
    wait = 0
    n = len(Xtr)
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            try:
                value, tape = loss_total(net, Xtr[idx], ytr[idx], loss_kind)
                grads = backward(net, Xtr[idx], ytr[idx], loss_kind, tape)
            except (FloatingPointError, polynet.PolyOverflowError) as exc:
                report.status = "diverged"
                report.stopped_epoch = epoch
                raise TrainingDivergedError(f"epoch {epoch}: {exc}", report) from exc
            g = grads.arrays()
            if config.clip_norm is not None:
                norm = grads.global_norm()
                if norm > config.clip_norm:
                    g = [a * (config.clip_norm / norm) for a in g]
            params, adam = adam_step(net.param_arrays(), g, adam, adam.t + 1, config.lr,
                                     config.beta1, config.beta2, config.eps)
            if not all(np.all(np.isfinite(a)) for a in params + adam.v):
                report.status = "diverged"
                report.stopped_epoch = epoch
                raise TrainingDivergedError(f"epoch {epoch}: non-finite optimizer state", report)
            net.set_param_arrays(params)
            if sn_states is not None:
                sn_states = project_network(net, sn_states, reg.power_iters,
                                            reg.power_tol)
            total += value * len(idx)
            seen += len(idx)
        try:
            val = task_loss(net, Xva, yva, loss_kind)
        except FloatingPointError:
            val = float("nan")
        report.train_loss.append(total / seen)
        report.val_loss.append(val)
        report.epoch_seconds.append(time.perf_counter() - t0)
        report.stopped_epoch = epoch
        if not np.isfinite(val):
            report.status = "diverged"
            raise TrainingDivergedError(f"epoch {epoch}: non-finite validation loss", report)
        if val < report.best_val_loss:
            report.best_val_loss = val
            report.best_epoch = epoch
            best = net.copy()
            wait = 0
        else:
            wait += 1
            if wait >= max(config.patience, 1):
                break
    return best, report
