"""Run the experiment suite end to end with the configs in scripts/configs.

    python3 scripts/reproduce.py                       # everything
    python3 scripts/reproduce.py lambda_sweep fairfight
    python3 scripts/reproduce.py --seeds 1337 --limit 500   # quick smoke run

Attack runs last because it reads a checkpoint written by the MNIST bench.
"""

import argparse
import time
from pathlib import Path

from chainzrule import experiments

CONFIG_DIR = Path(__file__).resolve().parent / "configs"
ORDER = ("mnist_bench", "lambda_sweep", "fairfight", "scaling_sweep", "ordinal", "attack")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("experiments", nargs="*", metavar="NAME", help=f"subset of {', '.join(ORDER)}")
    ap.add_argument("--seeds", help="comma separated seeds")
    ap.add_argument("--limit", type=int)
    ap.add_argument("--precision", type=int, choices=(32, 64))
    ap.add_argument("--results", default=None, help="root directory replacing results/")
    args = ap.parse_args()
    unknown = set(args.experiments) - set(ORDER)
    if unknown:
        ap.error(f"unknown experiments: {sorted(unknown)}")
    chosen = args.experiments or list(ORDER)

    overrides = {"limit": args.limit, "precision": args.precision}
    if args.seeds:
        overrides["seeds"] = tuple(int(s) for s in args.seeds.split(","))
    for name in ORDER:
        if name not in chosen:
            continue
        cfg = experiments.resolve_config(name.replace("_", "-"), CONFIG_DIR / f"{name}.cfg", overrides)
        if args.results:
            cfg.out = str(Path(args.results) / Path(cfg.out).name)
            if cfg.checkpoint:
                cfg.checkpoint = str(Path(args.results) / Path(cfg.checkpoint).relative_to("results"))
        t0 = time.perf_counter()
        print(f"[{name}] -> {cfg.out}", flush=True)
        experiments.run(cfg)
        print(f"[{name}] done in {time.perf_counter() - t0:.1f}s", flush=True)


if __name__ == "__main__":
    main()
