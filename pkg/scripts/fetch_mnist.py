#!/usr/bin/env python3
"""Build ``data/mnist_10k.csv.gz`` from the 10,000 digits bundled in the npm ``mnist`` package.

The test suite never downloads anything; run this once (needs ``npm`` and registry access)::

    python scripts/fetch_mnist.py            # runs `npm pack mnist` in a temp dir
    python scripts/fetch_mnist.py --tarball mnist-1.1.0.tgz

Rows are shuffled with a fixed seed so any prefix is a class-balanced random subset.
"""
import argparse
import gzip
import json
import subprocess
import tarfile
import tempfile
from pathlib import Path

import numpy as np

N_PIXELS = 28 * 28


def read_tarball(path):
    images, labels = [], []
    with tarfile.open(path, "r:gz") as tar:
        for digit in range(10):
            member = tar.getmember(f"package/src/digits/{digit}.json")
            flat = np.asarray(json.load(tar.extractfile(member))["data"], dtype=np.float64)
            rows = flat.reshape(-1, N_PIXELS)
            images.append(rows)
            labels.append(np.full(len(rows), digit, dtype=np.int64))
    return np.concatenate(images), np.concatenate(labels)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--tarball", type=Path, help="existing mnist-*.tgz from `npm pack mnist`")
    parser.add_argument(
        "--output",
        type=Path,
        default=Path(__file__).resolve().parent.parent / "data" / "mnist_10k.csv.gz",
    )
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        tarball = args.tarball
        if tarball is None:
            subprocess.run(["npm", "pack", "mnist"], cwd=tmp, check=True, capture_output=True)
            tarball = next(Path(tmp).glob("mnist-*.tgz"))
        X, y = read_tarball(tarball)

    order = np.random.default_rng(args.seed).permutation(len(X))
    X, y = X[order], y[order]

    args.output.parent.mkdir(parents=True, exist_ok=True)
    header = ",".join(f"p{i}" for i in range(N_PIXELS)) + ",label\n"
    with gzip.open(args.output, "wt", compresslevel=9) as fh:
        fh.write(header)
        for row, label in zip(X, y):
            fh.write(",".join(f"{v:g}" for v in row) + f",{label}\n")
    print(f"wrote {len(X)} rows to {args.output}")


if __name__ == "__main__":
    main()
