"""Numeric column transforms: quantile map to a standard Gaussian and back."""

from __future__ import annotations

import numpy as np
from scipy.special import erf, erfc


# Acklam's rational approximation of the inverse standard-normal CDF,
# absolute error < 1.15e-9 over (0, 1).
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def inverse_normal_cdf(p):
    """Vectorized inverse standard-normal CDF (Acklam's approximation)."""
    p = np.asarray(p, dtype=np.float64)
    scalar = p.ndim == 0
    p = np.atleast_1d(p)
    if ((p <= 0.0) | (p >= 1.0)).any():
        raise ValueError("inverse_normal_cdf requires probabilities strictly in (0, 1)")
    x = np.empty_like(p)

    lo = p < _P_LOW
    hi = p > 1.0 - _P_LOW
    mid = ~(lo | hi)

    if lo.any():
        q = np.sqrt(-2.0 * np.log(p[lo]))
        x[lo] = ((((( _C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    if hi.any():
        q = np.sqrt(-2.0 * np.log(1.0 - p[hi]))
        x[hi] = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    if mid.any():
        q = p[mid] - 0.5
        r = q * q
        x[mid] = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)

    # one Halley step against the exact CDF pushes the error near machine eps
    with np.errstate(over="ignore"):
        e = 0.5 * erfc(-x / np.sqrt(2.0)) - p
        u = e * np.sqrt(2.0 * np.pi) * np.exp(x * x / 2.0)
        refined = x - u / (1.0 + x * u / 2.0)
    x = np.where(np.isfinite(refined), refined, x)
    return x[0] if scalar else x


def normal_cdf(z):
    z = np.asarray(z, dtype=np.float64)
    return 0.5 * (1.0 + erf(z / np.sqrt(2.0)))


class QuantileGaussianTransform:
    """Monotone map from a numeric column to an approximately N(0, 1) one.

    Fit on training rows only: up to ``min(1000, n_train)`` quantile knots
    are stored and the empirical CDF is linearly interpolated between them.
    The Gaussian side is clipped to ``[-clip_z, clip_z]``.
    """

    def __init__(self, knots=None, clip_z: float = 5.2):
        self.clip_z = float(clip_z)
        self.knots = None if knots is None else np.asarray(knots, dtype=np.float64)
        self._refs = None if knots is None else np.linspace(0.0, 1.0, len(self.knots))

    def fit(self, values: np.ndarray) -> "QuantileGaussianTransform":
        values = np.asarray(values, dtype=np.float64)
        if values.size == 0:
            raise ValueError("cannot fit a quantile transform on an empty column")
        n_knots = int(min(1000, values.size))
        if n_knots < 2:
            n_knots = 2
        self._refs = np.linspace(0.0, 1.0, n_knots)
        self.knots = np.quantile(values, self._refs)
        return self

    def _check_fitted(self):
        if self.knots is None:
            raise RuntimeError("transform used before fit")

    def forward(self, x):
        self._check_fitted()
        x = np.asarray(x, dtype=np.float64)
        u = np.interp(x, self.knots, self._refs)
        u = np.clip(u, normal_cdf(-self.clip_z), normal_cdf(self.clip_z))
        return np.clip(inverse_normal_cdf(u), -self.clip_z, self.clip_z)

    def inverse(self, z):
        self._check_fitted()
        z = np.asarray(z, dtype=np.float64)
        u = normal_cdf(np.clip(z, -self.clip_z, self.clip_z))
        # at or beyond the clip bound means "past the fitted support"
        u = np.where(z >= self.clip_z, 1.0, np.where(z <= -self.clip_z, 0.0, u))
        return np.interp(u, self._refs, self.knots)

    def to_dict(self) -> dict:
        self._check_fitted()
        return {"knots": self.knots.tolist(), "clip_z": self.clip_z}

    @classmethod
    def from_dict(cls, d: dict) -> "QuantileGaussianTransform":
        return cls(knots=d["knots"], clip_z=d["clip_z"])


def one_hot(indices: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros((len(indices), width))
    out[np.arange(len(indices)), np.asarray(indices, dtype=np.int64)] = 1.0
    return out
