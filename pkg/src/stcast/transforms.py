"""Target preprocessing: optional log1p compression plus per-region
standardization, with exact inverses for reporting forecasts on the
original scale.  Statistics are fitted on the conditioning range only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputValidationError

TRANSFORM_KINDS = ("log1p-standardize", "standardize", "none")

_STD_FLOOR = 1e-8


@dataclass(frozen=True)
class TargetTransform:
    kind: str
    mean: np.ndarray   # (N,)
    std: np.ndarray    # (N,)

    def apply(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.kind == "none":
            return y.copy()
        if self.kind == "log1p-standardize":
            y = _log1p_checked(y)
        return (y - self.mean[:, None]) / self.std[:, None]

    def invert(self, values: np.ndarray) -> np.ndarray:
        """Inverse along axis 0 (regions); works for (N, ...) arrays."""
        values = np.asarray(values, dtype=float)
        if self.kind == "none":
            return values.copy()
        extra = (1,) * (values.ndim - 1)
        out = values * self.std.reshape(-1, *extra) + self.mean.reshape(-1, *extra)
        if self.kind == "log1p-standardize":
            out = np.expm1(out)
        return out


def _log1p_checked(y: np.ndarray) -> np.ndarray:
    if np.any(y <= -1.0):
        raise InputValidationError(
            "log1p transform needs values > -1; use target_transform="
            "'standardize' or 'none' for real-valued data"
        )
    return np.log1p(y)


def fit_target_transform(y: np.ndarray, kind: str = "log1p-standardize") -> TargetTransform:
    """Fit per-region mean/std (after any log1p) on the given range."""
    if kind not in TRANSFORM_KINDS:
        raise InputValidationError(
            f"unknown transform {kind!r}; choose from {TRANSFORM_KINDS}"
        )
    y = np.asarray(y, dtype=float)
    if y.ndim != 2:
        raise InputValidationError(f"expected (N, T) array, got shape {y.shape}")
    if kind == "none":
        n = y.shape[0]
        return TargetTransform(kind, np.zeros(n), np.ones(n))
    base = _log1p_checked(y) if kind == "log1p-standardize" else y
    mean = base.mean(axis=1)
    std = base.std(axis=1)
    std = np.where(std < _STD_FLOOR, 1.0, std)
    return TargetTransform(kind, mean, std)
