"""Cross-sectional least squares on polynomial bases of the simulated state.

Features are standardised before the monomials are formed, and columns that
are (numerically) linear combinations of earlier ones are dropped by a
pivoted QR.  The second step matters here: in one-factor markets ``log P_1``
and ``log H`` are affine in the same Brownian motion, so a naive basis in
both is exactly rank deficient.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateBasisError
from .linalg import independent_columns

DEFAULT_DEGREE = 4


def exponents(k: int, degree: int) -> np.ndarray:
    """All exponent vectors of total degree <= ``degree`` in ``k`` variables, by degree."""
    out = [e for e in itertools.product(range(degree + 1), repeat=k) if sum(e) <= degree]
    out.sort(key=sum)
    return np.array(out, dtype=int).reshape(len(out), k)


def monomials(z: np.ndarray, powers: np.ndarray) -> np.ndarray:
    """Design matrix ``prod_j z_j ** powers[c, j]`` for each column ``c``."""
    out = np.ones((z.shape[0], powers.shape[0]))
    max_p = int(powers.max()) if powers.size else 0
    pw = [np.ones_like(z)]
    for _ in range(max_p):
        pw.append(pw[-1] * z)
    for c, e in enumerate(powers):
        for j, q in enumerate(e):
            if q:
                out[:, c] *= pw[q][:, j]
    return out


@dataclass(frozen=True)
class PolyFit:
    """A fitted polynomial in standardised features, clamped to the fitted range."""

    mean: np.ndarray
    scale: np.ndarray
    powers: np.ndarray
    coef: np.ndarray
    lo: np.ndarray = None
    hi: np.ndarray = None

    def design(self, features: np.ndarray) -> np.ndarray:
        z = (np.asarray(features, dtype=float) - self.mean) / self.scale
        if self.lo is not None:
            # polynomials extrapolate badly: evaluate outside the fitted range at its edge
            z = np.clip(z, self.lo, self.hi)
        return monomials(z, self.powers)

    def predict(self, features: np.ndarray) -> np.ndarray:
        return self.design(features) @ self.coef


def fit(features: np.ndarray, y: np.ndarray, degree: int = DEFAULT_DEGREE, mask=None, tol: float = 1e-9) -> PolyFit:
    """Least-squares polynomial fit of ``y`` (shape ``(N,)`` or ``(N, m)``) on ``features``.

    ``mask`` selects the rows used for fitting.  Constant features are
    dropped.  Raises :class:`DegenerateBasisError` for empty or non-finite
    designs.
    """
    features = np.asarray(features, dtype=float)
    if features.ndim == 1:
        features = features[:, None]
    y = np.asarray(y, dtype=float)
    rows = np.ones(features.shape[0], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not np.any(rows):
        raise DegenerateBasisError("regression has no rows")
    F, Y = features[rows], y[rows]
    if not (np.all(np.isfinite(F)) and np.all(np.isfinite(Y))):
        raise DegenerateBasisError("regression data are not finite")
    mean = F.mean(axis=0)
    scale = F.std(axis=0)
    live = scale > 1e-12 * np.maximum(1.0, np.abs(mean))
    scale = np.where(live, scale, 1.0)
    powers = exponents(features.shape[1], degree)
    # a monomial touching a constant feature duplicates a lower-order one
    powers = powers[~np.any(powers[:, ~live] > 0, axis=1)]
    Z = (F - mean) / scale
    X = monomials(Z, powers)
    keep = independent_columns(X, tol)
    if keep.size == 0:
        raise DegenerateBasisError("regression design has rank 0")
    sol, *_ = np.linalg.lstsq(X[:, keep], Y, rcond=None)
    coef = np.zeros((powers.shape[0],) + Y.shape[1:])
    coef[keep] = sol
    return PolyFit(mean=mean, scale=scale, powers=powers, coef=coef, lo=Z.min(axis=0), hi=Z.max(axis=0))


def constant_fit(value, k: int) -> PolyFit:
    """A fit that predicts ``value`` everywhere (used where all states coincide)."""
    value = np.asarray(value, dtype=float)
    return PolyFit(np.zeros(k), np.ones(k), np.zeros((1, k), dtype=int), value[None, ...])
