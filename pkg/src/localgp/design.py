"""Training design with an exact nearest-neighbour index."""
import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidInputError
from .kernel import sqdist_to

# Extra neighbours fetched so distance ties at the k-th position can be
# ordered by row id.
_TIE_PAD = 64


class DesignSet:
    """Inputs X (N x p) and responses Y (N,), shared read-only by workers.

    Neighbour queries are exact: they return the k rows with smallest
    squared distance, ordered by (squared distance, row id).
    """

    def __init__(self, X, Y):
        X = np.ascontiguousarray(X, dtype=float)
        Y = np.ascontiguousarray(Y, dtype=float).ravel()
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] != Y.size:
            raise InvalidInputError(f"X {X.shape} and Y {Y.shape} do not conform")
        if X.shape[0] == 0:
            raise InvalidInputError("empty design")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise InvalidInputError("design contains NaN or infinite values")
        X.setflags(write=False)
        Y.setflags(write=False)
        self.X = X
        self.Y = Y
        self._tree = None

    @property
    def N(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def tree(self):
        if self._tree is None:
            self._tree = cKDTree(self.X)
        return self._tree

    def __getstate__(self):
        # rebuild the tree lazily after pickling
        return {"X": self.X, "Y": self.Y}

    def __setstate__(self, state):
        self.X = state["X"]
        self.Y = state["Y"]
        self._tree = None

    def nearest(self, x, k):
        """Row ids of the k nearest rows to x and their squared distances."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.p,):
            raise InvalidInputError(f"query has shape {x.shape}, design has p={self.p}")
        k = int(min(k, self.N))
        if k <= 0:
            return np.empty(0, dtype=np.intp), np.empty(0)
        kq = min(self.N, k + _TIE_PAD)
        if kq >= self.N // 2:
            return self._brute(x, k)
        _, idx = self.tree.query(x, k=kq)
        idx = np.atleast_1d(idx).astype(np.intp)
        d2 = sqdist_to(x, self.X[idx])
        order = np.lexsort((idx, d2))
        idx, d2 = idx[order], d2[order]
        # a tie spilling past the fetched set could hide a lower row id
        if kq < self.N and d2[-1] <= d2[k - 1]:
            return self._brute(x, k)
        return idx[:k], d2[:k]

    def _brute(self, x, k):
        d2 = sqdist_to(x, self.X)
        ids = np.arange(self.N)
        order = np.lexsort((ids, d2))[:k]
        return order.astype(np.intp), d2[order]
