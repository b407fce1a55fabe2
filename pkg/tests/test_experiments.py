import json

import numpy as np
import pytest

from chainzrule import experiments as E
from chainzrule.cli import main
from chainzrule.polynet import count_params

MNIST_DIR = E.ExperimentConfig().data_dir


def cfg(kind, tmp_path, **kw):
    base = dict(kind=kind, out=str(tmp_path / kind), seeds=(1, 2), epochs=2, limit=300)
    base.update(kw)
    return E.ExperimentConfig(**base)


class TestConfig:
    def test_defaults(self):
        c = E.ExperimentConfig()
        assert c.seeds == (1337, 1339, 2024)
        assert set(c.lambdas) == {0.0, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 10 ** -2.5}
        assert c.d_grid == (16, 32, 64, 128) and c.h_grid == (4, 8, 16, 32, 64, 128)
        assert len(E.METHODS) == 8

    def test_invariants(self):
        with pytest.raises(E.ConfigError):
            E.ExperimentConfig(seeds=())
        with pytest.raises(E.ConfigError):
            E.ExperimentConfig(methods=("POLY_DROPOUT",))
        with pytest.raises(E.ConfigError):
            E.ExperimentConfig(kind="bench")

    def test_file_then_flags(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("# sweep\nseeds = 5, 6\nlam = 0.01\ncapacities = 32x16, 8x4\n"
                     "families = smooth\nepochs = 3  # short\n")
        c = E.resolve_config("lambda-sweep", p, {"seeds": (9,), "limit": None})
        assert c.seeds == (9,) and c.lam == 0.01 and c.epochs == 3
        assert c.capacities == ((32, 16), (8, 4)) and c.families == ("smooth",)

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("learning_rate = 1\n")
        with pytest.raises(E.ConfigError, match="learning_rate"):
            E.read_config_file(p)


class TestWidthSolver:
    def test_hand_count(self):
        assert count_params(4, [3], 1, "poly", 3) == 4 * 3 + 3 + 3 * 3 + 3 + 1

    def test_budgets(self):
        w, n = E.solve_width(3300, 10, "poly", 1)
        assert w == [220] and n == count_params(10, w, 1, "poly") == 3301
        w, n = E.solve_width(51200, 10, "relu", 2)
        assert abs(n - 51200) / 51200 < 0.10 and n == count_params(10, w, 1, "relu")

    def test_unreachable_budget(self):
        with pytest.raises(E.BudgetError, match="nearest"):
            E.solve_width(5, 10, "poly", 1)


@pytest.mark.skipif(not (E.Path(MNIST_DIR) / E.MNIST_FILES[0]).exists(), reason="no MNIST subset")
class TestMnistBench:
    def test_rows_and_determinism(self, tmp_path):
        c = cfg("mnist-bench", tmp_path, methods=("POLY_BASE", "POLY_DREG"))
        E.run_mnist_bench(c)
        out = tmp_path / "mnist-bench"
        first = (out / "mnist_bench.csv").read_bytes()
        lines = first.decode().splitlines()
        assert lines[0] == ",".join(E.MNIST_COLUMNS)
        assert len(lines) == 1 + 4
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seeds"] == [1, 2] and manifest["precision"] == 64
        assert "wall_clock_seconds" in manifest and manifest["version"]
        E.run_mnist_bench(c)
        assert (out / "mnist_bench.csv").read_bytes() == first
        assert "POLY_DREG_vs_POLY_BASE" in json.loads((out / "paired_tests.json").read_text())

    def test_missing_files(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            E.run_mnist_bench(cfg("mnist-bench", tmp_path, data_dir=str(tmp_path)))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_diverged_run_is_recorded(tmp_path):
    c = cfg("lambda-sweep", tmp_path, families=("smooth",), lambdas=(0.0,), seeds=(1,), lr=1e100,
            hidden=8, epochs=3)
    rows = E.run_lambda_sweep(c)["rows"]
    assert [r["status"] for r in rows] == ["diverged"]
    text = (tmp_path / "lambda-sweep" / "lambda_sweep.csv").read_text()
    assert text.splitlines()[1].endswith(",diverged")


def test_lambda_sweep_sorted(tmp_path):
    c = cfg("lambda-sweep", tmp_path, families=("sparse", "piecewise"), lambdas=(1e-2, 0.0))
    rows = E.run_lambda_sweep(c)["rows"]
    keys = [(r["family"], r["lambda"], r["seed"]) for r in rows]
    assert keys == sorted(keys) and len(keys) == 8


def test_scaling_rows_per_point(tmp_path):
    c = cfg("scaling-sweep", tmp_path, d_grid=(16,), h_grid=(4, 8), seeds=(1, 2, 3), epochs=1)
    rows = E.run_scaling_sweep(c)["rows"]
    for point in [("D", 16), ("H", 4), ("H", 8)]:
        for model in ("CR", "MLP"):
            assert sum(1 for r in rows if (r["axis"], r["value"], r["model"]) == point + (model,)) == 3


def test_fairfight_table(tmp_path):
    c = cfg("fairfight", tmp_path, families=("smooth",), seeds=(1,), epochs=1)
    res = E.run_fairfight(c)
    assert [r["model"] for r in res["rows"]] == ["CR_DREG_3.3k", "CR_3.3k", "MLP_3.3k", "MLP_51.2k"]
    for r in res["rows"]:
        assert abs(r["params"] - (3300 if "3.3k" in r["model"] else 51200)) <= 0.1 * r["params"]


def test_ordinal_fixture(tmp_path):
    c = cfg("ordinal", tmp_path, seeds=(1,), epochs=60, limit=None)
    row = E.run_ordinal(c)["rows"][0]
    assert row["accuracy"] > 0.8 and row["qwk"] > 0.8
    t = [row[f"t{i}"] for i in range(1, 5)]
    assert t == sorted(t)
    again = E.run_ordinal(c)["rows"][0]
    assert again == row


def test_ordinal_csv_input(tmp_path):
    from chainzrule import data

    p = tmp_path / "emb.csv"
    data.write_embedding_csv(data.gen_ordinal_fixture(N=400, D=8, seed=3), p)
    row = E.run_ordinal(cfg("ordinal", tmp_path, seeds=(1,), ordinal_csv=str(p), limit=None))["rows"][0]
    assert row["status"] == "ok" and row["qwk"] > 0.5


@pytest.mark.skipif(not (E.Path(MNIST_DIR) / E.MNIST_FILES[0]).exists(), reason="no MNIST subset")
def test_attack_rows(tmp_path):
    E.run_train(cfg("train", tmp_path, dataset="mnist", seeds=(1,), widths=(16, 8), epochs=3))
    c = cfg("attack", tmp_path, checkpoint=str(tmp_path / "train" / "model_1.json"), limit=200)
    rows = E.run_attack(c)["rows"]
    clean = rows[0]["accuracy"]
    pgd = [r for r in rows if r["probe"] == "pgd_linf"]
    assert pgd[0]["param"] == 0.0 and pgd[0]["accuracy"] == clean
    accs = [r["accuracy"] for r in pgd]
    assert all(a >= b for a, b in zip(accs, accs[1:]))
    for kind in ("gaussian_noise", "impulse_noise"):
        assert sorted(r["param"] for r in rows if r["probe"] == kind) == [1, 2, 3, 4, 5]


class TestCli:
    def test_rerun_byte_identical(self, tmp_path):
        args = ["lambda-sweep", "--out", str(tmp_path / "a"), "--seeds", "3", "--limit", "200",
                "--set", "families=piecewise", "--set", "lambdas=0,0.01", "--set", "epochs=2"]
        assert main(args) == 0
        first = (tmp_path / "a" / "lambda_sweep.csv").read_bytes()
        assert main(args) == 0
        assert (tmp_path / "a" / "lambda_sweep.csv").read_bytes() == first

    def test_precision_32(self, tmp_path):
        out = tmp_path / "p32"
        assert main(["train", "--out", str(out), "--seeds", "1", "--limit", "200",
                     "--precision", "32", "--set", "epochs=2", "--set", "widths=4"]) == 0
        assert json.loads((out / "manifest.json").read_text())["precision"] == 32

    def test_bad_config_exit_code(self, tmp_path, capsys):
        assert main(["train", "--out", str(tmp_path), "--set", "bogus=1"]) == 2
        assert "bogus" in capsys.readouterr().err

    def test_stats_subcommand(self, tmp_path, capsys):
        p = tmp_path / "r.csv"
        rows = [{"method": m, "h1": 32, "h2": 16, "seed": s, "tail_ratio": v, "status": "ok"}
                for m, vals in (("POLY_DREG", [5, 6, 7, 5.5, 6.5, 7.2]),
                                ("POLY_BASE", [8, 9, 9.5, 8.2, 9.9, 10.1]))
                for s, v in enumerate(vals)]
        E.write_csv(p, ("method", "h1", "h2", "seed", "tail_ratio", "status"), rows)
        assert main(["stats", "--input", str(p), "--out", str(tmp_path)]) == 0
        res = json.loads((tmp_path / "stats.json").read_text())
        assert res["n_pairs"] == 6
        assert res["wilcoxon"]["p_value"] == 0.03125
        assert res["sign"]["p_value"] == 0.03125
