"""Experiment runners: MNIST sensitivity bench, lambda sweep, fair fight,
scaling sweeps, ordinal readout, and robustness probes.

Every runner takes an ``ExperimentConfig``, writes CSVs with a fixed column
order into ``cfg.out`` and finishes with ``manifest.json``. Floats are written
with ``repr`` so 64-bit reruns are byte-identical; wall-clock time only goes
into the manifest.
"""

from __future__ import annotations

import csv
import io
import json
import os
import platform
import time
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import __version__, data, ordinal, polynet, robust, sensitivity, stats
from .grad import TrainConfig, TrainingDivergedError, task_loss, train
from .polynet import Regularizer, build_network, count_params

KINDS = ("train", "mnist-bench", "lambda-sweep", "fairfight", "scaling-sweep", "ordinal",
         "attack")
METHODS = tuple(f"{act}_{reg}" for act in ("POLY", "RELU")
                for reg in ("BASE", "DREG", "IGPEN", "SN"))
DEFAULT_SEEDS = (1337, 1339, 2024)
DEFAULT_LAMBDA = 10 ** -2.5
LAMBDA_GRID = (0.0, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 10 ** -2.5)
MNIST_FILES = ("train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz",
               "t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz")

MNIST_COLUMNS = sensitivity.REPORT_COLUMNS + ("status",)
MNIST_DIAG_COLUMNS = ("method", "h1", "h2", "seed", "params", "best_epoch", "stopped_epoch",
                      "max_sigma", "status")
SWEEP_COLUMNS = ("family", "lambda", "seed", "mse", "grad_p90", "status")
FAIRFIGHT_COLUMNS = ("model", "params", "test_mse", "status")
FAIRFIGHT_DETAIL_COLUMNS = ("model", "params", "widths", "family", "seed", "test_mse", "status")
SCALING_COLUMNS = ("axis", "value", "model", "seed", "test_mse", "status")
ORDINAL_COLUMNS = ("seed", "accuracy", "qwk", "t1", "t2", "t3", "t4", "status")
ATTACK_COLUMNS = ("probe", "param", "accuracy")
TRAIN_COLUMNS = ("dataset", "method", "seed", "params", "best_epoch", "test_loss", "test_acc",
                 "ig_mean", "ig_p99", "tail_ratio", "status")


class BudgetError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    kind: str = "train"
    out: str = "results"
    seeds: tuple = DEFAULT_SEEDS
    precision: int = 64
    limit: int | None = None
    # training
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 100
    patience: int = 10
    clip_norm: float | None = None
    lam: float = DEFAULT_LAMBDA
    power_iters: int = 1
    power_tol: float | None = 1e-6
    # mnist
    data_dir: str = "data/mnist10k"
    methods: tuple = ("POLY_BASE", "POLY_DREG", "POLY_SN", "RELU_SN")
    capacities: tuple = ((32, 16),)
    val_fraction: float = 0.1
    ig_batch: int = 500
    # synthetic
    families: tuple = data.FAMILIES
    D: int = 10
    N: int = 4096
    hidden: int = 16
    data_seed: int = 0
    lambdas: tuple = LAMBDA_GRID
    # fair fight
    budget_small: int = 3300
    budget_large: int = 51200
    mlp_depth: int = 2
    budget_tolerance: float = 0.10
    # scaling
    scaling_family: str = "smooth"
    d_grid: tuple = (16, 32, 64, 128)
    h_grid: tuple = (4, 8, 16, 32, 64, 128)
    # ordinal
    ordinal_csv: str | None = None
    ordinal_widths: tuple = (16,)
    grid_step: float = 0.05
    # attack
    checkpoint: str | None = None
    epsilons: tuple = (0.0, 2 / 255, 4 / 255, 8 / 255)
    attack_steps: int = 10
    step_size: float | None = None
    # single training run
    dataset: str = "smooth"
    method: str = "POLY_DREG"
    widths: tuple = (32, 16)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if len(self.seeds) == 0:
            raise ConfigError("seed list must not be empty")
        bad = [m for m in tuple(self.methods) + (self.method,) if m not in METHODS]
        if bad:
            raise ConfigError(f"methods must come from {METHODS}, got {bad}")
        if self.precision not in (32, 64):
            raise ConfigError("precision is 32 or 64")
        if self.limit is not None and self.limit < 1:
            raise ConfigError("limit must be >= 1")
        for fam in self.families:
            if fam not in data.FAMILIES:
                raise ConfigError(f"unknown family {fam!r}")

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32

    def train_config(self, seed: int, **overrides) -> TrainConfig:
        base = dict(lr=self.lr, batch_size=self.batch_size, max_epochs=self.epochs,
                    patience=self.patience, seed=seed, clip_norm=self.clip_norm,
                    precision=self.precision)
        base.update(overrides)
        return TrainConfig(**base)

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


# ---------------------------------------------------------------------------
# flat key = value config files


def _parse_scalar(text: str):
    low = text.lower()
    if low in ("none", "null", ""):
        return None
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def parse_value(name: str, text: str):
    """Coerce a config string to the type of field ``name``.

    Lists are comma separated; capacity pairs are ``32x16``.
    """
    text = text.strip()
    default = ExperimentConfig.__dataclass_fields__[name].default
    if name == "capacities":
        return tuple(tuple(int(v) for v in item.split("x")) for item in _items(text))
    if isinstance(default, tuple):
        return tuple(_parse_scalar(item) for item in _items(text))
    value = _parse_scalar(text)
    if isinstance(default, float) and isinstance(value, int):
        value = float(value)
    return value


def _items(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    names = {f.name for f in fields(ExperimentConfig)}
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in names:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = parse_value(key, value)
    return out


def resolve_config(kind: str, path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Defaults, then the config file, then explicit overrides (flags win)."""
    values = {}
    if path is not None:
        values.update(read_config_file(path))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    values["kind"] = kind
    return ExperimentConfig(**values)


# ---------------------------------------------------------------------------
# output helpers


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_csv(path, columns, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(row[c]) for c in columns])
    _atomic_write(path, buf.getvalue())
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _atomic_write(path, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def write_manifest(cfg: ExperimentConfig, outputs, started: float, extra: dict | None = None):
    doc = {
        "kind": cfg.kind,
        "config": cfg.to_dict(),
        "seeds": list(cfg.seeds),
        "precision": cfg.precision,
        "version": __version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
        "wall_clock_seconds": time.perf_counter() - started,
        "outputs": sorted(Path(p).name for p in outputs),
    }
    if extra:
        doc.update(extra)
    return write_json(Path(cfg.out) / "manifest.json", doc)


# ---------------------------------------------------------------------------
# method matrix


def method_spec(method: str, lam: float = DEFAULT_LAMBDA, power_iters: int = 1,
                power_tol: float | None = None):
    """(activation, Regularizer) for one of the eight method names."""
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")
    act, reg = method.split("_")
    regularizer = {
        "BASE": Regularizer(),
        "DREG": Regularizer.dreg(lam),
        "IGPEN": Regularizer.igpen(lam),
        "SN": Regularizer.spectral_norm(power_iters, power_tol),
    }[reg]
    return act.lower(), regularizer


def _fit(net, tr, va, tcfg, loss_kind):
    """Train; a diverged run returns (None, report) instead of raising."""
    try:
        best, report = train(net, (tr.X, tr.y), (va.X, va.y), tcfg, loss_kind)
        return best, report
    except TrainingDivergedError as exc:
        return None, exc.report


def max_spectral_norm(net) -> float:
    return max(float(np.linalg.norm(l.W.astype(np.float64), 2)) for l in net.layers)


def _cast(ds: data.Dataset, dtype) -> data.Dataset:
    return replace(ds, X=ds.X.astype(dtype))


# ---------------------------------------------------------------------------
# MNIST


def load_mnist(cfg: ExperimentConfig):
    root = Path(cfg.data_dir)
    missing = [f for f in MNIST_FILES if not (root / f).exists()]
    if missing:
        raise FileNotFoundError(f"missing MNIST files in {root}: {', '.join(missing)}")
    full = data.load_idx(root / MNIST_FILES[0], root / MNIST_FILES[1], cfg.limit)
    test = data.load_idx(root / MNIST_FILES[2], root / MNIST_FILES[3], cfg.limit)
    n_val = max(1, int(round(len(full) * cfg.val_fraction)))
    perm = np.random.default_rng(cfg.data_seed).permutation(len(full))
    tr, va = full.subset(perm[n_val:]), full.subset(perm[:n_val])
    return _cast(tr, cfg.dtype), _cast(va, cfg.dtype), _cast(test, cfg.dtype)


def _nan_row():
    return {k: float("nan") for k in ("acc", "ig_mean", "ig_p95", "ig_p99", "ig_max",
                                      "tail_ratio")}


def mnist_cell(cfg, splits, method, capacity, seed, ckpt_dir: Path | None = None):
    """Train one (method, capacity, seed) cell; returns (row, jacobian_row, diag_row)."""
    tr, va, te = splits
    act, reg = method_spec(method, cfg.lam, cfg.power_iters, cfg.power_tol)
    net = build_network(tr.dim, capacity, 10, act, regularizer=reg, seed=seed, dtype=cfg.dtype)
    best, report = _fit(net, tr, va, cfg.train_config(seed), "cross_entropy")
    key = {"method": method, "h1": capacity[0], "h2": capacity[1], "seed": seed}
    diag = dict(key, params=net.n_params, best_epoch=report.best_epoch,
                stopped_epoch=report.stopped_epoch, max_sigma=float("nan"),
                status=report.status)
    if best is None:
        row = dict(key, **_nan_row(), status="diverged")
        return row, dict(row), diag
    diag["max_sigma"] = max_spectral_norm(best)
    acc = sensitivity.accuracy(best, te.X, te.y)
    rows = []
    for source in sensitivity.SOURCES:
        norms = sensitivity.input_gradient_norms(best, te.X, te.y, source, "cross_entropy",
                                                 cfg.ig_batch)
        rep = sensitivity.summarize(norms, source)
        rows.append(dict(key, acc=acc, ig_mean=rep.mean, ig_p95=rep.p95, ig_p99=rep.p99,
                         ig_max=rep.max, tail_ratio=rep.tail_ratio, status="ok"))
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        polynet.save(best, ckpt_dir / f"{method}_{capacity[0]}x{capacity[1]}_{seed}.json")
    return rows[0], rows[1], diag


def paired_summary(rows, a: str, b: str, metrics=("tail_ratio", "ig_p99", "acc")) -> dict:
    """Paired tests of method ``a`` against ``b`` over runs matched on (h1, h2, seed)."""
    index = {(r["method"], r["h1"], r["h2"], r["seed"]): r for r in rows if r["status"] == "ok"}
    keys = sorted({k[1:] for k in index if k[0] == a} & {k[1:] for k in index if k[0] == b})
    out = {"a": a, "b": b, "n_pairs": len(keys), "pairs": [list(k) for k in keys]}
    for metric in metrics:
        xa = [float(index[(a,) + k][metric]) for k in keys]
        xb = [float(index[(b,) + k][metric]) for k in keys]
        res = {"mean_a": float(np.mean(xa)) if xa else None,
               "mean_b": float(np.mean(xb)) if xb else None}
        for name, test in (("paired_t", stats.paired_t_test), ("wilcoxon", stats.wilcoxon_signed_rank),
                           ("sign", stats.sign_test)):
            try:
                res[name] = test(xa, xb).to_dict()
            except ValueError as exc:
                res[name] = {"error": str(exc)}
        out[metric] = res
    return out


def _sort_key(row, cols):
    return tuple(row[c] for c in cols)


def run_mnist_bench(cfg: ExperimentConfig) -> dict:
    started = time.perf_counter()
    out = Path(cfg.out)
    splits = load_mnist(cfg)
    rows, jrows, diags = [], [], []
    for method in cfg.methods:
        for cap in cfg.capacities:
            for seed in cfg.seeds:
                r, j, d = mnist_cell(cfg, splits, method, tuple(cap), seed, out / "checkpoints")
                rows.append(r)
                jrows.append(j)
                diags.append(d)
    order = ("method", "h1", "h2", "seed")
    rows.sort(key=lambda r: _sort_key(r, order))
    jrows.sort(key=lambda r: _sort_key(r, order))
    diags.sort(key=lambda r: _sort_key(r, order))
    outputs = [write_csv(out / "mnist_bench.csv", MNIST_COLUMNS, rows),
               write_csv(out / "mnist_bench_jacobian.csv", MNIST_COLUMNS, jrows),
               write_csv(out / "mnist_diagnostics.csv", MNIST_DIAG_COLUMNS, diags)]
    summary = {}
    for act in ("POLY", "RELU"):
        dreg = f"{act}_DREG"
        for other in (f"{act}_BASE", f"{act}_SN"):
            if dreg in cfg.methods and other in cfg.methods:
                summary[f"{dreg}_vs_{other}"] = paired_summary(rows, dreg, other)
    outputs.append(write_json(out / "paired_tests.json", summary))
    write_manifest(cfg, outputs, started, {"n_train": len(splits[0]), "n_val": len(splits[1]),
                                          "n_test": len(splits[2])})
    return {"rows": rows, "jacobian_rows": jrows, "diagnostics": diags, "paired": summary}


# ---------------------------------------------------------------------------
# synthetic regression


def synthetic_splits(cfg: ExperimentConfig, family: str, D: int | None = None):
    N = cfg.N if cfg.limit is None else min(cfg.N, cfg.limit)
    ds = data.gen_synthetic(data.SyntheticFamily(family, D or cfg.D, N, cfg.data_seed))
    return tuple(_cast(s, cfg.dtype) for s in data.split(ds, (0.7, 0.15, 0.15), cfg.data_seed))


def fit_regression(cfg, splits, widths, activation, regularizer, seed):
    """Train a scalar regressor; returns (net or None, test mse, status)."""
    tr, va, te = splits
    net = build_network(tr.dim, widths, 1, activation, regularizer=regularizer, seed=seed,
                        dtype=cfg.dtype)
    best, report = _fit(net, tr, va, cfg.train_config(seed), "mse")
    if best is None:
        return None, float("nan"), "diverged"
    return best, task_loss(best, te.X, te.y, "mse"), "ok"


def run_lambda_sweep(cfg: ExperimentConfig) -> dict:
    """Test MSE and p90 of ||dy/dx|| per (family, lambda, seed) for a D -> H -> 1 poly net."""
    started = time.perf_counter()
    rows = []
    for family in cfg.families:
        splits = synthetic_splits(cfg, family)
        for lam in sorted(set(float(v) for v in cfg.lambdas)):
            reg = Regularizer.dreg(lam) if lam > 0 else Regularizer()
            for seed in cfg.seeds:
                best, mse, status = fit_regression(cfg, splits, (cfg.hidden,), "poly", reg, seed)
                p90 = float("nan")
                if best is not None:
                    norms = sensitivity.input_gradient_norms(best, splits[2].X,
                                                             source="output_jacobian_fro")
                    p90 = float(np.percentile(norms, 90))
                rows.append({"family": family, "lambda": lam, "seed": seed, "mse": mse,
                             "grad_p90": p90, "status": status})
    rows.sort(key=lambda r: _sort_key(r, ("family", "lambda", "seed")))
    outputs = [write_csv(Path(cfg.out) / "lambda_sweep.csv", SWEEP_COLUMNS, rows)]
    write_manifest(cfg, outputs, started)
    return {"rows": rows}


def solve_width(budget: int, input_dim: int, activation: str, depth: int,
                tolerance: float = 0.10, degree: int = 3, max_width: int = 100000):
    """Equal-width hidden stack whose parameter count is nearest ``budget``.

    Returns (widths, params). Raises BudgetError with the nearest candidates
    when no width lands within ``tolerance`` of the budget.
    """
    if budget < 1 or depth < 1:
        raise ValueError("budget and depth must be >= 1")
    best = None
    below = None
    for h in range(1, max_width + 1):
        n = count_params(input_dim, [h] * depth, 1, activation, degree)
        cand = (abs(n - budget), h, n)
        if best is None or cand < best:
            best = cand
        if n > budget:
            break
        below = (h, n)
    _, h, n = best
    if abs(n - budget) > tolerance * budget:
        near = [below, (h, n)] if below and below[0] != h else [(h, n)]
        raise BudgetError(f"no {activation} width within {tolerance:.0%} of {budget} params; "
                          f"nearest (width, params): {near}")
    return [h] * depth, n


def _budget_label(budget: int) -> str:
    return f"{budget / 1000:g}k"


def fairfight_models(cfg: ExperimentConfig):
    """(name, widths, activation, regularizer, params) for the four contenders."""
    D = cfg.D
    cr_w, cr_n = solve_width(cfg.budget_small, D, "poly", 1, cfg.budget_tolerance)
    small_w, small_n = solve_width(cfg.budget_small, D, "relu", cfg.mlp_depth,
                                   cfg.budget_tolerance)
    large_w, large_n = solve_width(cfg.budget_large, D, "relu", cfg.mlp_depth,
                                   cfg.budget_tolerance)
    s, l = _budget_label(cfg.budget_small), _budget_label(cfg.budget_large)
    return [
        (f"CR_DREG_{s}", cr_w, "poly", Regularizer.dreg(cfg.lam), cr_n),
        (f"CR_{s}", cr_w, "poly", Regularizer(), cr_n),
        (f"MLP_{s}", small_w, "relu", Regularizer(), small_n),
        (f"MLP_{l}", large_w, "relu", Regularizer(), large_n),
    ]


def run_fairfight(cfg: ExperimentConfig) -> dict:
    started = time.perf_counter()
    models = fairfight_models(cfg)
    detail = []
    for family in cfg.families:
        splits = synthetic_splits(cfg, family)
        for name, widths, act, reg, n in models:
            for seed in cfg.seeds:
                _, mse, status = fit_regression(cfg, splits, widths, act, reg, seed)
                detail.append({"model": name, "params": n, "widths": "x".join(map(str, widths)),
                               "family": family, "seed": seed, "test_mse": mse,
                               "status": status})
    summary = []
    for name, _, _, _, n in models:
        cells = [r for r in detail if r["model"] == name]
        ok = [r["test_mse"] for r in cells if r["status"] == "ok"]
        status = "ok" if len(ok) == len(cells) else f"diverged:{len(cells) - len(ok)}"
        summary.append({"model": name, "params": n,
                        "test_mse": float(np.mean(ok)) if ok else float("nan"),
                        "status": status})
    detail.sort(key=lambda r: _sort_key(r, ("model", "family", "seed")))
    out = Path(cfg.out)
    outputs = [write_csv(out / "fairfight.csv", FAIRFIGHT_COLUMNS, summary),
               write_csv(out / "fairfight_detail.csv", FAIRFIGHT_DETAIL_COLUMNS, detail)]
    write_manifest(cfg, outputs, started)
    return {"rows": summary, "detail": detail}


def run_scaling_sweep(cfg: ExperimentConfig) -> dict:
    """CR (poly + DREG) against a ReLU MLP of equal width, sweeping D and then H."""
    started = time.perf_counter()
    models = (("CR", "poly", Regularizer.dreg(cfg.lam)), ("MLP", "relu", Regularizer()))
    rows = []
    points = [("D", d, d, cfg.hidden) for d in cfg.d_grid]
    points += [("H", h, cfg.D, h) for h in cfg.h_grid]
    for axis, value, D, H in points:
        splits = synthetic_splits(cfg, cfg.scaling_family, D)
        for name, act, reg in models:
            for seed in cfg.seeds:
                _, mse, status = fit_regression(cfg, splits, (H,), act, reg, seed)
                rows.append({"axis": axis, "value": value, "model": name, "seed": seed,
                             "test_mse": mse, "status": status})
    rows.sort(key=lambda r: _sort_key(r, ("axis", "value", "model", "seed")))
    outputs = [write_csv(Path(cfg.out) / "scaling_sweep.csv", SCALING_COLUMNS, rows)]
    write_manifest(cfg, outputs, started)
    return {"rows": rows}


# ---------------------------------------------------------------------------
# ordinal


def load_ordinal(cfg: ExperimentConfig) -> data.Dataset:
    if cfg.ordinal_csv:
        ds = data.load_embedding_csv(cfg.ordinal_csv)
        if cfg.limit is not None:
            ds = ds.subset(np.arange(min(cfg.limit, len(ds))))
        return ds
    N = 2000 if cfg.limit is None else min(2000, cfg.limit)
    return data.gen_ordinal_fixture(N=N, seed=cfg.data_seed)


def run_ordinal(cfg: ExperimentConfig) -> dict:
    """Scalar MSE + DREG regressor on ratings, thresholds tuned for QWK on validation."""
    started = time.perf_counter()
    ds = load_ordinal(cfg)
    K = ds.n_classes or 5
    tr, va, te = data.split(ds, (0.7, 0.15, 0.15), cfg.data_seed)
    tr, va, te = (replace(s, X=s.X.astype(cfg.dtype), y=s.y.astype(cfg.dtype), kind="regression",
                          n_classes=None) for s in (tr, va, te))
    rows, thresholds = [], {}
    for seed in cfg.seeds:
        best, _, status = fit_regression(cfg, (tr, va, te), cfg.ordinal_widths, "poly",
                                         Regularizer.dreg(cfg.lam), seed)
        row = {"seed": seed, "accuracy": float("nan"), "qwk": float("nan"), "status": status}
        row.update({f"t{i + 1}": float("nan") for i in range(4)})
        if best is not None:
            val_scores = polynet.predict(best, va.X)[:, 0].astype(np.float64)
            test_scores = polynet.predict(best, te.X)[:, 0].astype(np.float64)
            t = ordinal.threshold_search(val_scores, va.y.astype(int), K, cfg.grid_step)
            pred = ordinal.map_to_class(test_scores, t)
            truth = te.y.astype(int)
            row.update(accuracy=float(np.mean(pred == truth)),
                       qwk=ordinal.qwk(pred, truth, K))
            row.update({f"t{i + 1}": float(v) for i, v in enumerate(t[:4])})
            thresholds[str(seed)] = [float(v) for v in t]
        rows.append(row)
    rows.sort(key=lambda r: r["seed"])
    out = Path(cfg.out)
    outputs = [write_csv(out / "ordinal.csv", ORDINAL_COLUMNS, rows),
               write_json(out / "thresholds.json", thresholds)]
    write_manifest(cfg, outputs, started)
    return {"rows": rows, "thresholds": thresholds}


# ---------------------------------------------------------------------------
# robustness


def attack_rows(net, X, y, cfg: ExperimentConfig, seed: int = 0) -> list[dict]:
    rows = [{"probe": "clean", "param": 0.0,
             "accuracy": robust.robust_accuracy(net, X, y)}]
    for eps in sorted(cfg.epsilons):
        acfg = robust.AttackConfig(epsilon=float(eps), steps=cfg.attack_steps,
                                   step_size=cfg.step_size, seed=seed)
        rows.append({"probe": "pgd_linf", "param": float(eps),
                     "accuracy": robust.robust_accuracy(net, X, y, robust.pgd_probe(net, acfg))})
    for kind in robust.CORRUPTIONS:
        for sev in (1, 2, 3, 4, 5):
            probe = robust.corruption_probe(kind, sev, seed)
            rows.append({"probe": kind, "param": float(sev),
                         "accuracy": robust.robust_accuracy(net, X, y, probe)})
    return rows


def run_attack(cfg: ExperimentConfig) -> dict:
    started = time.perf_counter()
    if not cfg.checkpoint:
        raise ConfigError("attack needs checkpoint = PATH (a saved network)")
    net = polynet.load(cfg.checkpoint)
    root = Path(cfg.data_dir)
    test = data.load_idx(root / MNIST_FILES[2], root / MNIST_FILES[3], cfg.limit)
    X = test.X.astype(net.dtype)
    rows = attack_rows(net, X, test.y, cfg, cfg.seeds[0])
    outputs = [write_csv(Path(cfg.out) / "attack.csv", ATTACK_COLUMNS, rows)]
    write_manifest(cfg, outputs, started)
    return {"rows": rows}


# ---------------------------------------------------------------------------
# single run


def run_train(cfg: ExperimentConfig) -> dict:
    """Train one network on MNIST (``dataset = mnist``) or a synthetic family."""
    started = time.perf_counter()
    out = Path(cfg.out)
    act, reg = method_spec(cfg.method, cfg.lam, cfg.power_iters, cfg.power_tol)
    if cfg.dataset == "mnist":
        splits, loss_kind, n_out = load_mnist(cfg), "cross_entropy", 10
    elif cfg.dataset in data.FAMILIES:
        splits, loss_kind, n_out = synthetic_splits(cfg, cfg.dataset), "mse", 1
    else:
        raise ConfigError(f"dataset must be 'mnist' or a synthetic family, got {cfg.dataset!r}")
    tr, va, te = splits
    rows, outputs = [], []
    for seed in cfg.seeds:
        net = build_network(tr.dim, cfg.widths, n_out, act, regularizer=reg, seed=seed,
                            dtype=cfg.dtype)
        best, report = _fit(net, tr, va, cfg.train_config(seed), loss_kind)
        row = {"dataset": cfg.dataset, "method": cfg.method, "seed": seed,
               "params": net.n_params, "best_epoch": report.best_epoch,
               "test_loss": float("nan"), "test_acc": float("nan"), "ig_mean": float("nan"),
               "ig_p99": float("nan"), "tail_ratio": float("nan"), "status": report.status}
        if best is not None:
            rep = sensitivity.summarize(sensitivity.input_gradient_norms(
                best, te.X, te.y, "loss_grad", loss_kind, cfg.ig_batch))
            row.update(test_loss=task_loss(best, te.X, te.y, loss_kind), ig_mean=rep.mean,
                       ig_p99=rep.p99, tail_ratio=rep.tail_ratio)
            if loss_kind == "cross_entropy":
                row["test_acc"] = sensitivity.accuracy(best, te.X, te.y)
            ckpt = out / f"model_{seed}.json"
            out.mkdir(parents=True, exist_ok=True)
            polynet.save(best, ckpt)
            outputs.append(ckpt)
        rows.append(row)
    outputs.append(write_csv(out / "train.csv", TRAIN_COLUMNS, rows))
    write_manifest(cfg, outputs, started)
    return {"rows": rows}


RUNNERS = {
    "train": run_train,
    "mnist-bench": run_mnist_bench,
    "lambda-sweep": run_lambda_sweep,
    "fairfight": run_fairfight,
    "scaling-sweep": run_scaling_sweep,
    "ordinal": run_ordinal,
    "attack": run_attack,
}


def run(cfg: ExperimentConfig) -> dict:
    return RUNNERS[cfg.kind](cfg)


# ---------------------------------------------------------------------------
# stats over a results CSV


def stats_from_csv(path, metric: str, a: str, b: str, group_col: str = "method",
                   pair_on=("h1", "h2", "seed")) -> dict:
    """Paired and Welch tests comparing groups ``a`` and ``b`` of a results CSV."""
    rows = [r for r in read_csv(path) if r.get("status", "ok") == "ok"]
    if not rows:
        raise ValueError(f"{path} has no usable rows")
    for col in (metric, group_col) + tuple(pair_on):
        if col not in rows[0]:
            raise ValueError(f"column {col!r} not in {path}")
    index = {}
    for r in rows:
        index[(r[group_col],) + tuple(r[c] for c in pair_on)] = float(r[metric])
    keys = sorted({k[1:] for k in index if k[0] == a} & {k[1:] for k in index if k[0] == b})
    xa = [index[(a,) + k] for k in keys]
    xb = [index[(b,) + k] for k in keys]
    ga = [v for k, v in index.items() if k[0] == a]
    gb = [v for k, v in index.items() if k[0] == b]
    out = {"metric": metric, "a": a, "b": b, "n_pairs": len(keys),
           "bonferroni_alpha_0.05_m4": stats.bonferroni_alpha(0.05, 4)}
    tests = (("paired_t", stats.paired_t_test, xa, xb),
             ("wilcoxon", stats.wilcoxon_signed_rank, xa, xb),
             ("sign", stats.sign_test, xa, xb),
             ("welch_t", stats.welch_t_test, ga, gb))
    for name, test, u, v in tests:
        try:
            out[name] = test(u, v).to_dict()
        except ValueError as exc:
            out[name] = {"error": str(exc)}
    return out
