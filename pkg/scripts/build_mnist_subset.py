"""Build the desk-scale MNIST IDX files from the `mnist` npm package.

The npm package (MIT licensed) ships 10,000 genuine MNIST digits as JSON
arrays of pixel/255 values rounded to three decimals; rounding back to bytes
recovers the original pixels exactly. We shuffle once with a fixed seed and
write an 8,000 / 2,000 train/test split in gzipped IDX format.

    npm pack mnist && tar xzf mnist-1.1.0.tgz
    python scripts/build_mnist_subset.py package/src/digits data/mnist10k
"""

import argparse
import json
from pathlib import Path

import numpy as np

from chainzrule.data import write_idx


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir", type=Path)
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--n-test", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    images, labels = [], []
    for d in range(10):
        raw = np.asarray(json.loads((args.digits_dir / f"{d}.json").read_text())["data"])
        px = np.rint(raw * 255).reshape(-1, 784)
        if np.max(np.abs(px - raw.reshape(-1, 784) * 255)) >= 0.5:
            raise SystemExit(f"digit {d}: pixel values do not round-trip to bytes")
        images.append(px.astype(np.uint8))
        labels.append(np.full(len(px), d, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    perm = np.random.default_rng(args.seed).permutation(len(labels))
    images, labels = images[perm], labels[perm]
    n_train = len(labels) - args.n_test

    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_idx(images[:n_train], labels[:n_train],
              args.out_dir / "train-images-idx3-ubyte.gz", args.out_dir / "train-labels-idx1-ubyte.gz")
    write_idx(images[n_train:], labels[n_train:],
              args.out_dir / "t10k-images-idx3-ubyte.gz", args.out_dir / "t10k-labels-idx1-ubyte.gz")
    print(f"wrote {n_train} train / {args.n_test} test images to {args.out_dir}")


if __name__ == "__main__":
    main()
