"""Shape-parameter vector for merged TPMS unit cells.

A cell is fully described by six numbers: three merging weights on the
2-simplex and three level-set offsets in [-0.4, 0.4].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

ALPHA_SUM_TOL = 1e-9
T_MIN = -0.4
T_MAX = 0.4


@dataclass(frozen=True)
class ShapeParams:
    """Weights (alpha1, alpha2, alpha3) and level-set offsets (t1, t2, t3)."""

    alpha1: float
    alpha2: float
    alpha3: float
    t1: float
    t2: float
    t3: float

    def __post_init__(self):
        a = np.array([self.alpha1, self.alpha2, self.alpha3], dtype=float)
        t = np.array([self.t1, self.t2, self.t3], dtype=float)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(t))):
            raise ValidationError("shape parameters must be finite")
        if abs(a.sum() - 1.0) > ALPHA_SUM_TOL:
            raise ValidationError(f"alpha weights must sum to 1, got {a.sum()!r}")
        if np.any(a < -ALPHA_SUM_TOL) or np.any(a > 1.0 + ALPHA_SUM_TOL):
            raise ValidationError(f"alpha weights must lie in [0, 1], got {a}")
        if np.any(t < T_MIN) or np.any(t > T_MAX):
            raise ValidationError(f"level-set offsets must lie in [{T_MIN}, {T_MAX}], got {t}")

    @property
    def alphas(self) -> np.ndarray:
        return np.array([self.alpha1, self.alpha2, self.alpha3])

    @property
    def ts(self) -> np.ndarray:
        return np.array([self.t1, self.t2, self.t3])

    def to_array(self) -> np.ndarray:
        return np.array([self.alpha1, self.alpha2, self.alpha3,
                         self.t1, self.t2, self.t3])

    @classmethod
    def from_array(cls, arr) -> "ShapeParams":
        arr = np.asarray(arr, dtype=float).ravel()
        if arr.shape != (6,):
            raise ValidationError(f"expected 6 shape parameters, got shape {arr.shape}")
        return cls(*arr.tolist())

    def csv_row(self) -> str:
        return ",".join(repr(v) for v in self.to_array().tolist())

    @classmethod
    def from_csv_row(cls, row: str) -> "ShapeParams":
        parts = row.strip().split(",")
        if len(parts) != 6:
            raise ValidationError(f"expected 6 comma-separated values, got {len(parts)}")
        return cls.from_array([float(p) for p in parts])


def params_array(items) -> np.ndarray:
    """Stack ShapeParams (or raw 6-vectors) into an (n, 6) float array."""
    rows = []
    for it in items:
        if isinstance(it, ShapeParams):
            rows.append(it.to_array())
        else:
            rows.append(ShapeParams.from_array(it).to_array())
    return np.array(rows, dtype=float)
