"""Isotropic Gaussian correlation with a nugget.

    K(x, x') = exp(-||x - x'||^2 / theta) + eta * [x == x']

theta is measured in squared-distance units.  Only squared distances are
ever formed; no square roots are taken.  The nugget has no theta
dependence, so it never appears in the derivative functions.
"""
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

DEFAULT_NUGGET = 1e-6


@dataclass(frozen=True)
class Hyper:
    """Correlation parameters: lengthscale ``theta`` and nugget ``eta``."""

    theta: float
    eta: float = DEFAULT_NUGGET

    def __post_init__(self):
        if not (np.isfinite(self.theta) and self.theta > 0):
            raise InvalidInputError(f"theta must be positive and finite, got {self.theta!r}")
        if not (np.isfinite(self.eta) and self.eta >= 0):
            raise InvalidInputError(f"eta must be non-negative and finite, got {self.eta!r}")

    def with_theta(self, theta):
        return Hyper(float(theta), self.eta)


def _as_point(x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise InvalidInputError(f"expected a 1-d point, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("point has non-finite coordinates")
    return x


def _as_rows(X, p=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1 and p is not None and X.size == 0:
        X = X.reshape(0, p)
    if X.ndim != 2:
        raise InvalidInputError(f"expected a 2-d matrix, got shape {X.shape}")
    if p is not None and X.shape[1] != p and X.shape[0] > 0:
        raise InvalidInputError(f"dimension mismatch: point has p={p}, matrix has {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("matrix has non-finite coordinates")
    return X


def sqdist(A, B):
    """Matrix of squared Euclidean distances between rows of A and B.

    Accumulated per coordinate so the result is exactly symmetric when
    A is B and exactly zero on bitwise-equal rows.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    D = np.zeros((A.shape[0], B.shape[0]))
    for c in range(A.shape[1]):
        diff = A[:, c, None] - B[None, :, c]
        D += diff * diff
    return D


def sqdist_to(x, X):
    """Squared distances from point x to each row of X.

    Same accumulation order as :func:`sqdist`, so both agree bitwise.
    """
    d = np.zeros(X.shape[0])
    for c in range(X.shape[1]):
        diff = X[:, c] - x[c]
        d += diff * diff
    return d


def corr(x, xp, h):
    """Correlation between two points, nugget added on exact equality."""
    x = _as_point(x)
    xp = _as_point(xp)
    if x.shape != xp.shape:
        raise InvalidInputError(f"points differ in dimension: {x.size} vs {xp.size}")
    d2 = float(np.sum((x - xp) ** 2))
    k = np.exp(-d2 / h.theta)
    if np.array_equal(x, xp):
        k += h.eta
    return float(k)


def corr_dtheta(x, xp, h):
    """First and second theta-derivatives of :func:`corr`.

    With K0 = exp(-d2/theta): dK = K0 d2/theta^2 and
    d2K = K0 (d2^2/theta^4 - 2 d2/theta^3).
    """
    x = _as_point(x)
    xp = _as_point(xp)
    if x.shape != xp.shape:
        raise InvalidInputError(f"points differ in dimension: {x.size} vs {xp.size}")
    d2 = float(np.sum((x - xp) ** 2))
    dk, d2k = _dtheta_from_d2(np.array(d2), h.theta)
    return float(dk), float(d2k)


def _dtheta_from_d2(D2, theta, K0=None):
    if K0 is None:
        K0 = np.exp(-D2 / theta)
    r = D2 / theta
    dK = K0 * r / theta
    d2K = K0 * (r * r - 2.0 * r) / (theta * theta)
    return dK, d2K


def cross_corr_vector(x, X_sub, h, derivs=False, nugget=True):
    """Correlations k(x) between x and each row of ``X_sub``.

    With ``derivs=True`` also returns the theta-derivative vectors
    (k, dk, d2k).  ``nugget=False`` drops the exact-match nugget, for
    when x is itself another observation of the design (rows are
    distinct observations even when their coordinates coincide).
    """
    x = _as_point(x)
    X_sub = _as_rows(X_sub, p=x.size)
    d2 = sqdist_to(x, X_sub)
    k0 = np.exp(-d2 / h.theta)
    k = k0.copy()
    if nugget and h.eta and X_sub.shape[0]:
        k[np.all(X_sub == x, axis=1)] += h.eta
    if not derivs:
        return k
    dk, d2k = _dtheta_from_d2(d2, h.theta, k0)
    return k, dk, d2k


def corr_matrix(X, h, D2=None):
    """j x j correlation matrix of the rows of X.

    The nugget goes on the diagonal only: rows are distinct observations
    even when their coordinates coincide.
    """
    if D2 is None:
        D2 = sqdist(X, X)
    K = np.exp(-D2 / h.theta)
    K[np.diag_indices_from(K)] += h.eta
    return K


def corr_matrix_dtheta(D2, theta):
    """theta-derivative matrices (dK, d2K) from squared distances D2."""
    return _dtheta_from_d2(D2, theta)
