import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from chainzrule.polynet import PolyLayer, PolyNetwork, Regularizer, build_network

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_net(seed, D=None, widths=None, activation="poly", regularizer=None,
               output_dim=1, coef_scale=0.3):
    """Small net with non-trivial polynomial coefficients and biases."""
    rng = np.random.default_rng(seed)
    if D is None:
        D = int(rng.integers(2, 7))
    if widths is None:
        widths = [int(w) for w in rng.integers(2, 9, size=int(rng.integers(1, 3)))]
    net = build_network(D, widths, output_dim, activation, regularizer=regularizer, seed=seed)
    for layer in net.layers:
        layer.b = rng.normal(0, 0.2, size=layer.b.shape)
        if layer.activation == "poly":
            layer.alpha = np.column_stack([
                1.0 + rng.normal(0, 0.1, size=layer.fan_out),
                rng.normal(0, coef_scale, size=(layer.fan_out, layer.degree - 1)),
            ])
    return net


def fd_jacobian(net, x, step=1e-5):
    from chainzrule.polynet import predict

    x = np.asarray(x, dtype=np.float64)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step
        cols.append((predict(net, (x + e)[None])[0] - predict(net, (x - e)[None])[0]) / (2 * step))
    return np.column_stack(cols)


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


@pytest.fixture
def identity_net():
    layers = [PolyLayer(np.eye(3), np.zeros(3), np.array([[1.0, 0, 0]] * 3), "poly"),
              PolyLayer(np.eye(3), np.zeros(3), None, "linear")]
    return PolyNetwork(layers, 3, Regularizer())


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
