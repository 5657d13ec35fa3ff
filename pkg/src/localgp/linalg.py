"""Dense SPD kernel algebra and one-row/column bordered updates.

The inverse is carried explicitly because the design criteria consume
inverse-vector products directly.  Appending the point x' to a system
with inverse Kinv uses

    m^{-1} = K(x', x') - k' Kinv k'       g = -m Kinv k'

    new Kinv = [[Kinv + g g^T / m, g], [g^T, m]]
    new logdet = logdet + log(m^{-1})

so each extension costs O(j^2), and the solution Kinv Y and the
quadratic form psi = Y^T Kinv Y extend in O(j).
"""
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from .errors import ConditioningError, InvalidInputError


class SpdInverse:
    """Explicit inverse and log-determinant of a j x j SPD matrix.

    Storage is a square buffer of size ``capacity`` so that in-place
    extensions do not reallocate; ``Kinv`` is a view of the leading
    ``dim x dim`` block.
    """

    __slots__ = ("_buf", "dim", "logdet")

    def __init__(self, Kinv, logdet, capacity=None):
        Kinv = np.asarray(Kinv, dtype=float)
        j = Kinv.shape[0]
        cap = max(j, capacity or 0)
        self._buf = np.zeros((cap, cap))
        self._buf[:j, :j] = Kinv
        self.dim = j
        self.logdet = float(logdet)

    @property
    def Kinv(self):
        return self._buf[: self.dim, : self.dim]

    @property
    def capacity(self):
        return self._buf.shape[0]

    def copy(self, capacity=None):
        return SpdInverse(self.Kinv, self.logdet, capacity=capacity or self.capacity)

    def __repr__(self):
        return f"SpdInverse(dim={self.dim}, logdet={self.logdet:.6g})"


@dataclass
class ExtensionScratch:
    """Quantities for bordering an inverse with one new point.

    ``minv`` is the Schur complement m^{-1} = kself - kvec^T Kinv kvec,
    ``m`` its reciprocal and ``z`` = Kinv kvec (so g = -m z).
    """

    g: np.ndarray
    m: float
    kvec: np.ndarray
    minv: float
    z: np.ndarray


def spd_build(K, capacity=None):
    """Invert a symmetric positive-definite matrix via Cholesky.

    Raises
    ------
    ConditioningError
        If the factorization hits a non-positive pivot; ``pivot`` is the
        zero-based index of the failing leading minor.
    """
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1] or K.shape[0] < 1:
        raise InvalidInputError(f"expected a non-empty square matrix, got shape {K.shape}")
    if not np.all(np.isfinite(K)):
        raise InvalidInputError("matrix has non-finite entries")
    c, info = lapack.dpotrf(K, lower=1, clean=1)
    if info > 0:
        raise ConditioningError(
            f"matrix is not positive definite (leading minor {info} failed)", pivot=info - 1
        )
    if info < 0:
        raise InvalidInputError(f"dpotrf argument {-info} invalid")
    logdet = 2.0 * float(np.sum(np.log(np.diag(c))))
    inv, info = lapack.dpotri(c, lower=1)
    if info != 0:
        raise ConditioningError("inverse from Cholesky factor failed", pivot=max(info - 1, 0))
    inv = np.tril(inv)
    inv = inv + np.tril(inv, -1).T
    return SpdInverse(inv, logdet, capacity=capacity)


def extend_scratch(inv, kvec, kself):
    """Schur complement and border vector for appending one point.

    Raises ConditioningError when m^{-1} <= 0, i.e. the new point is
    numerically inside the span of the current ones.
    """
    kvec = np.asarray(kvec, dtype=float)
    if kvec.shape != (inv.dim,):
        raise InvalidInputError(f"kvec has shape {kvec.shape}, expected ({inv.dim},)")
    if not np.all(np.isfinite(kvec)):
        raise InvalidInputError("kvec has non-finite entries")
    z = inv.Kinv @ kvec
    minv = float(kself) - float(kvec @ z)
    if not minv > 0.0:
        raise ConditioningError(f"Schur complement {minv:.3e} is not positive", pivot=inv.dim)
    m = 1.0 / minv
    return ExtensionScratch(g=-m * z, m=m, kvec=kvec, minv=minv, z=z)


def extend_inverse(inv, s, inplace=False):
    """Bordered inverse of dimension j+1 from ``inv`` and its scratch.

    With ``inplace=True`` the buffer of ``inv`` is reused when it has
    room and ``inv`` itself is returned (and mutated).
    """
    j = inv.dim
    if inplace and inv.capacity > j:
        out = inv
    else:
        out = SpdInverse(inv.Kinv, inv.logdet, capacity=max(inv.capacity, j + 1))
    buf = out._buf
    # g g^T m^{-1} stays exactly symmetric: g_i g_k == g_k g_i bitwise
    buf[:j, :j] += np.outer(s.g, s.g) * s.minv
    buf[:j, j] = s.g
    buf[j, :j] = s.g
    buf[j, j] = s.m
    out.dim = j + 1
    out.logdet = out.logdet + float(np.log(s.minv))
    return out


def extend_solution(KinvY, psi, s, Yj, y_new):
    """Extend K^{-1}Y and psi = Y^T K^{-1} Y by one observation."""
    KinvY = np.asarray(KinvY, dtype=float)
    h = float(np.asarray(Yj, dtype=float) @ s.g)
    top = KinvY + s.g * (h * s.minv + y_new)
    new = np.empty(KinvY.size + 1)
    new[:-1] = top
    new[-1] = h + y_new * s.m
    psi_new = psi + h * h * s.minv + 2.0 * y_new * h + y_new * y_new * s.m
    return new, float(psi_new)


def trace_product(A, B):
    """tr(AB) as sum_{k,l} A_lk B_kl, without forming AB."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape != B.shape[::-1]:
        raise InvalidInputError(f"trace_product needs conformable square matrices, got {A.shape}, {B.shape}")
    return float(np.einsum("lk,kl->", A, B))


def condition_number(K):
    """Ratio of largest to smallest eigenvalue of a symmetric matrix.

    Returns ``inf`` when the smallest eigenvalue is not positive.
    """
    K = np.asarray(K, dtype=float)
    lam = np.linalg.eigvalsh(K)
    if lam[0] <= 0.0:
        return float("inf")
    return float(lam[-1] / lam[0])
