"""Input validation helpers shared by the estimators."""
import numpy as np
from sklearn.utils import check_array

from .exceptions import DimensionError, ParameterError


def check_data(X, name="X"):
    """Finite float64 2-D array (C order)."""
    try:
        return check_array(X, dtype=np.float64, order="C", ensure_min_samples=1, input_name=name)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None


def check_labels(y, n_samples, allow_unlabeled=True):
    """Integer labels; ``-1`` marks an unlabeled row when allowed."""
    y = np.asarray(y)
    if y.shape != (n_samples,):
        raise DimensionError(f"labels must have shape ({n_samples},), got {y.shape}")
    if not np.all(np.equal(np.mod(y, 1), 0)):
        raise ParameterError("labels must be integers")
    y = y.astype(np.int64)
    floor = -1 if allow_unlabeled else 0
    if np.any(y < floor):
        raise ParameterError("labels must be >= 0 (or -1 for unlabeled)")
    return y


def check_random_state(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def derive_seeds(root, n):
    """Split one root seed into ``n`` independent 32-bit stage seeds."""
    if root is None:
        root = np.random.SeedSequence().entropy
    if isinstance(root, np.random.Generator):
        root = int(root.integers(2**63))
    children = np.random.SeedSequence(int(root)).spawn(n)
    return [int(c.generate_state(1)[0]) for c in children]
