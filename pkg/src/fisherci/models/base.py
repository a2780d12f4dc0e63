from __future__ import annotations

import numpy as np

from ..core import Dataset, FimKind, FimMatrix, ParameterVector


class Model:
    """Interface the estimators and the Monte Carlo engine rely on.

    Subclasses provide ``names``, ``lower``/``upper`` bounds, the negative
    log-likelihood with analytic gradient and Hessian, the per-sample expected
    FIM and a sampler. ``log_space`` marks components that the quasi-Newton
    search optimizes on the log scale.
    """

    names: tuple[str, ...] = ()
    lower: np.ndarray
    upper: np.ndarray
    log_space: np.ndarray
    # lower floor for log-space components in the quasi-Newton search
    positive_floor: float | None = None

    @property
    def p(self) -> int:
        return len(self.names)

    def parameter_vector(self, values) -> ParameterVector:
        return ParameterVector(values, self.names, self.lower, self.upper)

    def nll(self, data: Dataset, theta) -> float:
        raise NotImplementedError

    def grad(self, data: Dataset, theta) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, data: Dataset, theta) -> np.ndarray:
        raise NotImplementedError

    def nll_grad(self, data: Dataset, theta):
        return self.nll(data, theta), self.grad(data, theta)

    def expected_fim(self, theta, n: int) -> FimMatrix:
        raise NotImplementedError

    def sample(self, n: int, theta, seed) -> Dataset:
        raise NotImplementedError

    def project(self, theta) -> np.ndarray:
        """Clamp an iterate back into the feasible region."""
        return np.asarray(theta, dtype=float)

    def at_boundary(self, theta) -> bool:
        return False

    def canonicalize(self, theta) -> tuple[np.ndarray, bool]:
        """Pick the identifiable labeling; returns (theta, relabeled)."""
        return np.asarray(theta, dtype=float), False

    def observed_fim(self, data: Dataset, theta) -> FimMatrix:
        h = self.hessian(data, theta) / data.n
        return FimMatrix(0.5 * (h + h.T), FimKind.OBSERVED, np.asarray(theta, float), data.n)
