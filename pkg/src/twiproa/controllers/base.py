"""Common contract for the state-feedback policies."""
from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .._validation import check_state, check_states

OK = "ok"
INFEASIBLE = "infeasible"
DIVERGED = "diverged"


class ControllerPolicy(BaseEstimator, ABC):
    """A policy maps a state to a motor voltage.

    ``fit(model)`` synthesizes the policy from a
    :class:`~twiproa.model.LinearDiscreteModel`; ``compute(x)`` returns
    ``(u, status)`` with ``status`` one of ``"ok"``, ``"infeasible"`` or
    ``"diverged"``; ``predict(X)`` maps a batch of states to inputs, with NaN
    wherever the status is not ``"ok"``.
    """

    @abstractmethod
    def fit(self, model, y=None):
        ...

    @abstractmethod
    def _compute(self, x: np.ndarray) -> tuple[float, str]:
        ...

    def compute(self, x) -> tuple[float, str]:
        check_is_fitted(self)
        x = check_state(x)
        if not np.all(np.isfinite(x)) or np.any(np.abs(x) > 1e6):
            return 0.0, DIVERGED
        return self._compute(x)

    def predict(self, X) -> np.ndarray:
        X = check_states(X)
        out = np.empty(len(X))
        for i, x in enumerate(X):
            self.reset()
            u, status = self.compute(x)
            out[i] = u if status == OK else np.nan
        return out

    def reset(self):
        """Forget solver warm starts (no-op for stateless policies)."""
        return self

    def __call__(self, x):
        return self.compute(x)
