"""Polynomial-activation networks with a dual-stream forward pass.

Every layer computes ``z = W h + b`` followed by a per-neuron activation.
Alongside the values ``h`` the forward pass carries ``S = dh/dx``, the
Jacobian of the current layer with respect to the network input, updated
as ``S <- diag(phi'(z)) W S``. The readout layer is always affine.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .linalg import ShapeError, frobenius_norm_sq

ACTIVATIONS = ("poly", "relu", "gelu", "linear")
REGULARIZERS = ("none", "dreg", "igpen", "spectral_norm")
SCOPES = ("all_layers", "final_layer")

MAX_ABS_INPUT = 10.0
SERIAL_FORMAT = "chainzrule.polynet"
SERIAL_VERSION = 1


class PolyOverflowError(FloatingPointError):
    pass


class InputRangeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# scalar polynomial helpers


def poly_eval(alpha_row, z: float) -> float:
    """Evaluate ``sum_k alpha[k-1] * z**k`` (no constant term) by Horner."""
    acc = 0.0
    for a in reversed(list(alpha_row)):
        acc = acc * z + a
    out = acc * z
    if not math.isfinite(out):
        raise PolyOverflowError(f"polynomial overflow at z={z!r}")
    return out


def poly_deriv(alpha_row, z: float) -> float:
    acc = 0.0
    for k in range(len(alpha_row), 0, -1):
        acc = acc * z + k * alpha_row[k - 1]
    if not math.isfinite(acc):
        raise PolyOverflowError(f"polynomial derivative overflow at z={z!r}")
    return acc


# ---------------------------------------------------------------------------
# vectorized activations; z is (..., H) and alpha is (H, G)


def _horner(coefs: np.ndarray, z: np.ndarray) -> np.ndarray:
    # coefs[:, j] multiplies z**j
    acc = np.broadcast_to(coefs[:, -1], z.shape).copy()
    for j in range(coefs.shape[1] - 2, -1, -1):
        acc = acc * z + coefs[:, j]
    return acc


def _poly_coefs(alpha: np.ndarray, order: int) -> np.ndarray:
    """Coefficients of the ``order``-th derivative as a power series in z."""
    G = alpha.shape[1]
    k = np.arange(1, G + 1, dtype=alpha.dtype)
    scale = np.ones(G, dtype=alpha.dtype)
    for r in range(order):
        scale = scale * (k - r)
    # phi^(order)(z) = sum_k scale_k alpha_k z^(k - order)
    full = alpha * scale
    if order == 0:
        return np.concatenate([np.zeros((alpha.shape[0], 1), alpha.dtype), full], axis=1)
    tail = full[:, order - 1:]
    return tail if tail.shape[1] else np.zeros((alpha.shape[0], 1), alpha.dtype)


def activation_value(kind: str, z: np.ndarray, alpha: np.ndarray | None = None) -> np.ndarray:
    if kind == "poly":
        return _horner(_poly_coefs(alpha, 0), z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "gelu":
        return z * 0.5 * (1.0 + erf(z / math.sqrt(2.0)))
    if kind == "linear":
        return z
    raise ValueError(f"unknown activation {kind!r}")


def activation_deriv(kind: str, z: np.ndarray, alpha: np.ndarray | None = None) -> np.ndarray:
    if kind == "poly":
        return _horner(_poly_coefs(alpha, 1), z)
    if kind == "relu":
        # exactly 0 at z == 0
        return (z > 0).astype(z.dtype)
    if kind == "gelu":
        cdf = 0.5 * (1.0 + erf(z / math.sqrt(2.0)))
        pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        return cdf + z * pdf
    if kind == "linear":
        return np.ones_like(z)
    raise ValueError(f"unknown activation {kind!r}")


def activation_deriv2(kind: str, z: np.ndarray, alpha: np.ndarray | None = None) -> np.ndarray:
    if kind == "poly":
        if alpha.shape[1] < 2:
            return np.zeros_like(z)
        return _horner(_poly_coefs(alpha, 2), z)
    if kind == "gelu":
        pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        return pdf * (2.0 - z * z)
    if kind in ("relu", "linear"):
        return np.zeros_like(z)
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# network containers


@dataclass
class PolyLayer:
    W: np.ndarray
    b: np.ndarray
    alpha: np.ndarray | None = None
    activation: str = "poly"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ShapeError(f"inconsistent layer shapes W{self.W.shape} b{self.b.shape}")
        if self.activation == "poly":
            if self.alpha is None or self.alpha.ndim != 2 or self.alpha.shape[0] != self.W.shape[0]:
                raise ShapeError("poly layer needs alpha of shape (out, G)")
            if self.alpha.shape[1] < 1:
                raise ShapeError("polynomial degree must be >= 1")
        elif self.alpha is not None:
            raise ShapeError(f"{self.activation} layer carries no alpha")

    @property
    def fan_in(self) -> int:
        return self.W.shape[1]

    @property
    def fan_out(self) -> int:
        return self.W.shape[0]

    @property
    def degree(self) -> int:
        return 0 if self.alpha is None else self.alpha.shape[1]

    def arrays(self) -> list[np.ndarray]:
        out = [self.W, self.b]
        if self.alpha is not None:
            out.append(self.alpha)
        return out


@dataclass(frozen=True)
class Regularizer:
    kind: str = "none"
    lam: float = 0.0
    scope: str = "all_layers"
    power_iters: int = 1
    power_tol: float | None = None

    def __post_init__(self):
        if self.kind not in REGULARIZERS:
            raise ValueError(f"unknown regularizer {self.kind!r}")
        if self.scope not in SCOPES:
            raise ValueError(f"unknown scope {self.scope!r}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.power_iters < 1:
            raise ValueError("power_iters must be >= 1")
        if self.power_tol is not None and self.power_tol <= 0:
            raise ValueError("power_tol must be positive")

    @classmethod
    def dreg(cls, lam: float, scope: str = "all_layers") -> "Regularizer":
        return cls("dreg", lam, scope)

    @classmethod
    def igpen(cls, lam: float) -> "Regularizer":
        # the end-to-end Jacobian penalty is the final-layer restriction of DREG
        return cls("igpen", lam, "final_layer")

    @classmethod
    def spectral_norm(cls, power_iters: int = 1, power_tol: float | None = None) -> "Regularizer":
        return cls("spectral_norm", 0.0, "all_layers", power_iters, power_tol)

    @property
    def penalty_scope(self) -> str | None:
        """Scope of the Jacobian penalty, or None when nothing is penalized."""
        if self.kind == "dreg" and self.lam > 0:
            return self.scope
        if self.kind == "igpen" and self.lam > 0:
            return "final_layer"
        return None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lam": self.lam, "scope": self.scope,
                "power_iters": self.power_iters, "power_tol": self.power_tol}


@dataclass
class PolyNetwork:
    layers: list[PolyLayer]
    input_dim: int
    regularizer: Regularizer = field(default_factory=Regularizer)

    def __post_init__(self):
        width = self.input_dim
        for i, layer in enumerate(self.layers):
            if layer.fan_in != width:
                raise ShapeError(f"layer {i} expects input width {layer.fan_in}, got {width}")
            width = layer.fan_out
        if self.layers and self.layers[-1].activation != "linear":
            raise ValueError("final layer must be linear")

    @property
    def output_dim(self) -> int:
        return self.layers[-1].fan_out

    @property
    def dtype(self):
        return self.layers[0].W.dtype

    @property
    def n_params(self) -> int:
        return sum(a.size for layer in self.layers for a in layer.arrays())

    def param_arrays(self) -> list[np.ndarray]:
        return [a for layer in self.layers for a in layer.arrays()]

    def set_param_arrays(self, arrays) -> None:
        arrays = list(arrays)
        i = 0
        for layer in self.layers:
            layer.W = arrays[i]
            layer.b = arrays[i + 1]
            i += 2
            if layer.alpha is not None:
                layer.alpha = arrays[i]
                i += 1

    def copy(self) -> "PolyNetwork":
        return copy.deepcopy(self)

    def widths(self) -> list[int]:
        return [layer.fan_out for layer in self.layers[:-1]]


def count_params(input_dim: int, widths, output_dim: int, activation: str = "poly",
                 degree: int = 3) -> int:
    """Parameter count of a dense net; poly hidden units carry ``degree`` extra coefficients."""
    total = 0
    fan_in = input_dim
    for h in widths:
        total += fan_in * h + h
        if activation == "poly":
            total += h * degree
        fan_in = h
    return total + fan_in * output_dim + output_dim


def build_network(input_dim: int, widths, output_dim: int = 1, activation: str = "poly",
                  degree: int = 3, regularizer: Regularizer | None = None, seed: int = 0,
                  alpha_noise: bool = False, dtype=np.float64) -> PolyNetwork:
    """Initialize a network.

    Weights are Xavier-uniform, divided by sqrt(degree) for poly layers so that
    pre-activations stay in the range where the cubic basis is tame. Polynomial
    coefficients start at the identity map (alpha = (1, 0, ..., 0)).
    """
    rng = np.random.default_rng(seed)
    layers = []
    fan_in = input_dim
    dims = list(widths) + [output_dim]
    for i, fan_out in enumerate(dims):
        final = i == len(dims) - 1
        kind = "linear" if final else activation
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        if kind == "poly":
            limit /= math.sqrt(degree)
        W = rng.uniform(-limit, limit, size=(fan_out, fan_in)).astype(dtype)
        b = np.zeros(fan_out, dtype=dtype)
        alpha = None
        if kind == "poly":
            alpha = np.zeros((fan_out, degree), dtype=dtype)
            alpha[:, 0] = 1.0
            if alpha_noise:
                alpha += rng.uniform(-0.01, 0.01, size=alpha.shape).astype(dtype)
        layers.append(PolyLayer(W, b, alpha, kind))
        fan_in = fan_out
    return PolyNetwork(layers, input_dim, regularizer or Regularizer())


# ---------------------------------------------------------------------------
# forward pass


@dataclass
class DualState:
    """Layer output ``h`` and its Jacobian ``S`` with respect to the input."""

    h: np.ndarray
    S: np.ndarray | None


@dataclass
class Tape:
    x: np.ndarray                      # (B, D)
    zs: list[np.ndarray]               # pre-activations, (B, H_l)
    hs: list[np.ndarray]               # hs[0] = x, hs[l] = layer l output
    Ss: list[np.ndarray] | None        # S^(l), (B, H_l, D), l = 1..L

    @property
    def output(self) -> np.ndarray:
        return self.hs[-1]


def check_input(net: PolyNetwork, X) -> np.ndarray:
    X = np.asarray(X, dtype=net.dtype)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise ShapeError(f"input of shape {X.shape} does not match input_dim={net.input_dim}")
    if X.size and np.max(np.abs(X)) > MAX_ABS_INPUT:
        raise InputRangeError(
            f"max |x| = {np.max(np.abs(X)):.4g} exceeds {MAX_ABS_INPUT}; "
            "scale features to [0, 1] or standardize them")
    return X


def _check_layer(l: int, arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        neuron = int(np.argwhere(~np.isfinite(arr))[0][-1])
        raise PolyOverflowError(f"non-finite {what} in layer {l}, neuron {neuron}")


def layer_forward(layer: PolyLayer, h_in: np.ndarray, S_in: np.ndarray | None,
                  layer_index: int = 0, input_is_identity: bool = False):
    """One dual-stream step for a batch.

    ``h_in`` is (B, H_in); ``S_in`` is (B, H_in, D) or None to skip the
    Jacobian stream. With ``input_is_identity`` the incoming Jacobian is taken
    to be I_D and is never materialized.
    Returns (z, h_out, S_out).
    """
    z = h_in @ layer.W.T + layer.b
    h = activation_value(layer.activation, z, layer.alpha)
    _check_layer(layer_index, h, "activation")
    if S_in is None and not input_is_identity:
        return z, h, None
    p = activation_deriv(layer.activation, z, layer.alpha)
    if input_is_identity:
        S = p[:, :, None] * layer.W[None, :, :]
    else:
        S = p[:, :, None] * np.matmul(layer.W, S_in)
    _check_layer(layer_index, S, "Jacobian")
    return z, h, S


def forward(net: PolyNetwork, X, jacobian: bool = True) -> Tape:
    X = check_input(net, X)
    zs, hs, Ss = [], [X], ([] if jacobian else None)
    S = None
    for l, layer in enumerate(net.layers):
        z, h, S = layer_forward(layer, hs[-1], S, l, input_is_identity=jacobian and l == 0)
        zs.append(z)
        hs.append(h)
        if jacobian:
            Ss.append(S)
    return Tape(X, zs, hs, Ss)


def network_forward(net: PolyNetwork, x):
    """Forward a single sample (D,) or a batch (B, D).

    Returns ``(output, states, tape)`` where ``states[l]`` is the DualState
    after layer l+1 and ``states[-1].S`` is the network Jacobian dy/dx.
    """
    x_arr = np.asarray(x)
    single = x_arr.ndim == 1
    tape = forward(net, x_arr, jacobian=True)
    states = []
    for h, S in zip(tape.hs[1:], tape.Ss):
        states.append(DualState(h[0], S[0]) if single else DualState(h, S))
    out = tape.output[0] if single else tape.output
    return out, states, tape


def dreg_penalty(states, scope: str = "all_layers") -> float:
    """Sum over layers of ||S||_F^2, averaged over the batch.

    ``states`` holds DualStates or bare Jacobians, each (H, D) or (B, H, D).
    """
    if not states:
        raise ValueError("dreg_penalty needs at least one state")
    if scope not in SCOPES:
        raise ValueError(f"unknown scope {scope!r}")
    mats = [s.S if isinstance(s, DualState) else s for s in states]
    if scope == "final_layer":
        mats = mats[-1:]
    total = 0.0
    for S in mats:
        S = np.asarray(S)
        if S.ndim == 2:
            total += frobenius_norm_sq(S)
        else:
            total += float(np.mean(np.sum(S * S, axis=(1, 2))))
    return total


def predict(net: PolyNetwork, X, batch_size: int = 4096) -> np.ndarray:
    X = check_input(net, X)
    outs = [forward(net, X[i:i + batch_size], jacobian=False).output
            for i in range(0, len(X), batch_size)]
    return np.concatenate(outs, axis=0) if outs else np.zeros((0, net.output_dim))


# ---------------------------------------------------------------------------
# serialization


def to_dict(net: PolyNetwork) -> dict:
    params = []
    for a in net.param_arrays():
        params.extend(float(v) for v in a.ravel(order="C"))
    return {
        "format": SERIAL_FORMAT,
        "version": SERIAL_VERSION,
        "dtype": str(np.dtype(net.dtype)),
        "input_dim": net.input_dim,
        "regularizer": net.regularizer.to_dict(),
        "layers": [{"in": l.fan_in, "out": l.fan_out, "activation": l.activation,
                    "degree": l.degree} for l in net.layers],
        "params": params,
    }


def from_dict(doc: dict) -> PolyNetwork:
    if doc.get("format") != SERIAL_FORMAT:
        raise ValueError(f"not a {SERIAL_FORMAT} document")
    if doc.get("version") != SERIAL_VERSION:
        raise ValueError(f"unsupported version {doc.get('version')!r}")
    dtype = np.dtype(doc["dtype"])
    flat = np.asarray(doc["params"], dtype=np.float64)
    pos = 0

    def take(shape):
        nonlocal pos
        n = int(np.prod(shape))
        if pos + n > flat.size:
            raise ValueError("parameter array is too short for the declared layers")
        out = flat[pos:pos + n].reshape(shape).astype(dtype)
        pos += n
        return out

    layers = []
    for spec in doc["layers"]:
        W = take((spec["out"], spec["in"]))
        b = take((spec["out"],))
        alpha = take((spec["out"], spec["degree"])) if spec["activation"] == "poly" else None
        layers.append(PolyLayer(W, b, alpha, spec["activation"]))
    if pos != flat.size:
        raise ValueError(f"{flat.size - pos} trailing parameters")
    reg = Regularizer(**doc.get("regularizer", {}))
    return PolyNetwork(layers, doc["input_dim"], reg)


def save(net: PolyNetwork, path) -> None:
    with open(path, "w") as fh:
        json.dump(to_dict(net), fh)


def load(path) -> PolyNetwork:
    with open(path) as fh:
        return from_dict(json.load(fh))
