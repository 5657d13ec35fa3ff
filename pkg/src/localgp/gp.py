"""Batch GP computations on a (sub-)design with the scale integrated out.

With a reference prior on the variance the marginal likelihood is

    log p(Y | K) = log Gamma(j/2) - (j/2) log(2 pi) - logdet(K)/2 - (j/2) log(psi/2)

with psi = Y^T K^{-1} Y, and the predictive distribution at x is
Student-t with j degrees of freedom, mean k^T K^{-1} Y and scale
psi (K(x, x) - k^T K^{-1} k) / j.
"""
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import gammaln

from . import kernel
from .errors import ConditioningError, InvalidInputError, NumericalError
from .linalg import SpdInverse, spd_build, trace_product

LOG2PI = np.log(2.0 * np.pi)

# Clamp threshold for slightly negative predictive brackets (roundoff).
BRACKET_TOL = 1e-10


@dataclass
class GpFit:
    """A sub-design with everything needed for likelihood and prediction."""

    X_sub: np.ndarray
    Y_sub: np.ndarray
    h: kernel.Hyper
    inv: SpdInverse
    KinvY: np.ndarray
    psi: float
    indices: list = field(default_factory=list)
    D2: np.ndarray = None

    @property
    def j(self):
        return self.Y_sub.size

    def dist2(self):
        if self.D2 is None:
            self.D2 = kernel.sqdist(self.X_sub, self.X_sub)
        return self.D2


@dataclass(frozen=True)
class Prediction:
    """Student-t predictive summary at one location."""

    mean: float
    scale2: float
    dof: int
    variance: float
    theta_hat: float
    n_used: int


class MleResult(NamedTuple):
    theta: float
    iters: int
    converged: bool
    at_bound: bool


def fit_gp(X_sub, Y_sub, h, indices=None, D2=None):
    """Build a :class:`GpFit` from scratch (O(j^3))."""
    X_sub = np.asarray(X_sub, dtype=float)
    Y_sub = np.asarray(Y_sub, dtype=float)
    if X_sub.ndim != 2 or Y_sub.shape != (X_sub.shape[0],):
        raise InvalidInputError(f"X_sub {X_sub.shape} and Y_sub {Y_sub.shape} do not conform")
    if D2 is None:
        D2 = kernel.sqdist(X_sub, X_sub)
    inv = spd_build(kernel.corr_matrix(X_sub, h, D2=D2))
    KinvY = inv.Kinv @ Y_sub
    psi = float(Y_sub @ KinvY)
    idx = list(indices) if indices is not None else list(range(Y_sub.size))
    return GpFit(X_sub, Y_sub, h, inv, KinvY, psi, idx, D2)


def refit(fit, theta):
    """The same sub-design rebuilt at a new lengthscale."""
    return fit_gp(fit.X_sub, fit.Y_sub, fit.h.with_theta(theta), fit.indices, D2=fit.dist2())


def log_marginal(fit):
    j = fit.j
    if not fit.psi > 0.0:
        raise NumericalError(f"psi = {fit.psi!r} must be positive for the marginal likelihood")
    return float(
        gammaln(0.5 * j) - 0.5 * j * LOG2PI - 0.5 * fit.inv.logdet - 0.5 * j * np.log(0.5 * fit.psi)
    )


def _dK(fit):
    D2 = fit.dist2()
    return kernel.corr_matrix_dtheta(D2, fit.h.theta)


def loglik_dtheta(fit):
    """First and second theta-derivatives of :func:`log_marginal`."""
    j = fit.j
    if j < 2:
        raise InvalidInputError("likelihood derivatives need at least two points")
    Ki = fit.inv.Kinv
    w = fit.KinvY
    psi = fit.psi
    if not psi > 0.0:
        raise NumericalError(f"psi = {psi!r} must be positive")
    dK, d2K = _dK(fit)
    A = Ki @ dK
    dKw = dK @ w
    q = float(w @ dKw)
    l1 = -0.5 * np.trace(A) + 0.5 * j * q / psi
    tr2 = trace_product(Ki, d2K) - trace_product(A, A)
    quad = float(w @ (d2K @ w)) - 2.0 * float(dKw @ (Ki @ dKw))
    l2 = -0.5 * tr2 + 0.5 * j * quad / psi + 0.5 * j * q * q / (psi * psi)
    return float(l1), float(l2)


def fisher_info(fit):
    """Observed information -l'' at the fit's lengthscale."""
    return -loglik_dtheta(fit)[1]


_GOLD = 0.3819660112501051


def mle_theta(fit, bounds, tol=1e-5, max_iter=50):
    """Newton search for the lengthscale maximizing the marginal likelihood.

    A bracket [a, b] known to contain an ascent target is maintained from
    the sign of l'.  Newton steps that leave the bracket, or are taken
    where l'' >= 0, are replaced by a golden-section step in log theta
    towards the ascent side.  Convergence is a relative change in theta
    below ``tol``.
    """
    lo, hi = float(bounds[0]), float(bounds[1])
    if not (0.0 < lo < hi):
        raise InvalidInputError(f"invalid theta bounds {bounds!r}")
    theta = float(np.clip(fit.h.theta, lo, hi))
    X, Y, D2, eta = fit.X_sub, fit.Y_sub, fit.dist2(), fit.h.eta
    a, b = lo, hi
    best = (-np.inf, theta)
    for it in range(1, max_iter + 1):
        try:
            cur = fit_gp(X, Y, kernel.Hyper(theta, eta), fit.indices, D2=D2)
            l1, l2 = loglik_dtheta(cur)
            ll = log_marginal(cur)
        except (ConditioningError, NumericalError):
            # step landed somewhere unusable; shrink back towards the
            # last good point
            prev = best[1]
            if theta > prev:
                b = theta
            else:
                a = theta
            theta = np.sqrt(a * b) if a < b else prev
            continue
        if ll > best[0]:
            best = (ll, theta)
        if l1 > 0.0:
            a = theta
            if theta >= hi:
                return MleResult(hi, it, True, True)
        else:
            b = theta
            if theta <= lo and l1 < 0.0:
                return MleResult(lo, it, True, True)
        new = None
        if l2 < 0.0:
            cand = theta - l1 / l2
            if a <= cand <= b:
                new = cand
            elif cand > hi and b >= hi and theta < hi:
                new = hi
            elif cand < lo and a <= lo and theta > lo:
                new = lo
        if new is None:
            lt = np.log(theta)
            if l1 > 0.0:
                new = np.exp(lt + _GOLD * (np.log(b) - lt))
            else:
                new = np.exp(lt - _GOLD * (lt - np.log(a)))
        new = float(np.clip(new, lo, hi))
        if abs(new - theta) <= tol * theta:
            return MleResult(new, it, True, False)
        theta = new
    return MleResult(best[1], max_iter, False, False)


def predict(fit, x, nugget=True):
    """Student-t predictive summary at x.

    ``nugget=False`` treats x as a new observation rather than a
    location, so no nugget enters k(x) on coordinate matches.
    """
    j = fit.j
    k = kernel.cross_corr_vector(x, fit.X_sub, fit.h, nugget=nugget)
    mean = float(k @ fit.KinvY)
    z = fit.inv.Kinv @ k
    bracket = (1.0 + fit.h.eta) - float(k @ z)
    if bracket < -BRACKET_TOL:
        raise ConditioningError(f"negative predictive bracket {bracket:.3e}")
    bracket = max(bracket, 0.0)
    scale2 = fit.psi * bracket / j
    variance = scale2 * j / (j - 2) if j > 2 else float("inf")
    return Prediction(mean, scale2, j, variance, fit.h.theta, j)


def predict_dtheta(fit, x, nugget=True):
    """theta-derivatives (dmu, d2mu, dV, d2V) of the predictive mean and variance.

    With z = K^{-1} k and w = K^{-1} Y:
        dz = K^{-1}(dk - dK z),  d2z = K^{-1}(d2k - d2K z - 2 dK dz)
        dmu = dz^T Y, d2mu = d2z^T Y
        V = psi v / (j - 2),  v = K(x, x) - k^T z
    """
    j = fit.j
    if j < 3:
        raise InvalidInputError("variance derivatives need at least three points")
    Ki = fit.inv.Kinv
    w = fit.KinvY
    psi = fit.psi
    dK, d2K = _dK(fit)
    k, dk, d2k = kernel.cross_corr_vector(x, fit.X_sub, fit.h, derivs=True, nugget=nugget)
    z = Ki @ k
    dKz = dK @ z
    dz = Ki @ (dk - dKz)
    d2z = Ki @ (d2k - d2K @ z - 2.0 * (dK @ dz))
    dmu = float(dz @ fit.Y_sub)
    d2mu = float(d2z @ fit.Y_sub)
    v = (1.0 + fit.h.eta) - float(k @ z)
    dv = -(float(dk @ z) + float(k @ dz))
    d2v = -(float(d2k @ z) + 2.0 * float(dk @ dz) + float(k @ d2z))
    dKw = dK @ w
    dpsi = -float(w @ dKw)
    d2psi = 2.0 * float(dKw @ (Ki @ dKw)) - float(w @ (d2K @ w))
    c = 1.0 / (j - 2)
    dV = c * (dpsi * v + psi * dv)
    d2V = c * (d2psi * v + 2.0 * dpsi * dv + psi * d2v)
    return dmu, d2mu, dV, d2V
