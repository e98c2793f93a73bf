"""Power-law fit of error against compute in log-log space."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class FitResult:
    alpha: float
    log_a: float
    r2: float

    def predict(self, compute):
        return np.exp(self.log_a) * np.asarray(compute, dtype=np.float64) ** (-self.alpha)


def fit_power_law(compute, error) -> FitResult:
    """Least-squares fit of ln(error) = log_a - alpha * ln(compute)."""
    c = np.asarray(compute, dtype=np.float64)
    e = np.asarray(error, dtype=np.float64)
    if c.shape != e.shape or c.ndim != 1:
        raise ValueError("compute and error must be 1-D arrays of equal length")
    if c.size < 2:
        raise DomainError("need at least two points")
    if np.any(~(c > 0)) or np.any(~(e > 0)):
        raise DomainError("compute and error must be positive")
    x, y = np.log(c), np.log(e)
    if np.ptp(x) == 0:
        raise DomainError("compute values must not all be equal")
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    r2 = 1.0 if ss_tot == 0 else min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return FitResult(alpha=float(-slope), log_a=float(intercept), r2=r2)
