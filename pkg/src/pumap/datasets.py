"""Bundled synthetic datasets and the MNIST subset loader."""
import os
from importlib import resources
from pathlib import Path

import numpy as np
from sklearn.datasets import make_blobs, make_moons

from .exceptions import DataError
from .io import load_dataset

MNIST_ENV = "PUMAP_MNIST"
_REPO_MNIST = Path(__file__).resolve().parents[2] / "data" / "mnist_10k.csv.gz"


def moons(n_samples=1000, noise=0.05, seed=0, unit_box=True):
    """Two interleaved half circles; optionally min-max scaled into [0, 1]^2."""
    X, y = make_moons(n_samples=n_samples, noise=noise, random_state=seed)
    if unit_box:
        X = (X - X.min(axis=0)) / (X.max(axis=0) - X.min(axis=0))
    return X, y.astype(np.int64)


def blobs(n_samples=500, n_features=10, centers=5, cluster_std=1.0, seed=0):
    X, y = make_blobs(
        n_samples=n_samples,
        n_features=n_features,
        centers=centers,
        cluster_std=cluster_std,
        random_state=seed,
    )
    return X, y.astype(np.int64)


def bundled_moons_path():
    return resources.files("pumap").joinpath("data", "moons.csv")


def mnist_path():
    env = os.environ.get(MNIST_ENV)
    return Path(env) if env else _REPO_MNIST


_MNIST_CACHE = {}


def load_mnist(n_samples=None, path=None):
    """MNIST rows (pixels in [0, 1]) and digit labels.

    Reads ``$PUMAP_MNIST`` or ``data/mnist_10k.csv.gz`` produced by
    ``scripts/fetch_mnist.py``. The file is pre-shuffled, so the first
    ``n_samples`` rows form a random subset.
    """
    path = Path(path) if path else mnist_path()
    if not path.exists():
        raise DataError(f"{path} not found; run scripts/fetch_mnist.py or set ${MNIST_ENV}")
    key = str(path)
    if key not in _MNIST_CACHE:
        X, y = load_dataset(path)
        if y is None:
            raise DataError(f"{path}: MNIST file needs a label column")
        _MNIST_CACHE[key] = (X, y)
    X, y = _MNIST_CACHE[key]
    if n_samples is not None:
        if n_samples > len(X):
            raise DataError(f"{path} holds only {len(X)} rows, {n_samples} requested")
        X, y = X[:n_samples], y[:n_samples]
    return X.copy(), y.copy()
