"""Input validation helpers shared by the estimators."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array


def check_states(X, n_states: int = 4) -> np.ndarray:
    """Validate a batch of states, returning a float array of shape ``(k, n_states)``."""
    X = check_array(np.atleast_2d(np.asarray(X, dtype=float)), dtype=float, ensure_all_finite=True)
    if X.shape[1] != n_states:
        raise ValueError(f"expected states with {n_states} components, got shape {X.shape}")
    return X


def check_state(x, n_states: int = 4) -> np.ndarray:
    """Validate one state; non-finite values are allowed through for guard handling."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (n_states,):
        raise ValueError(f"expected a state with {n_states} components, got shape {x.shape}")
    return x


def check_square(M, n: int, name: str) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape != (n, n):
        raise ValueError(f"{name} must be {n}x{n}, got {M.shape}")
    return M
