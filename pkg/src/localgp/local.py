"""Greedy local sub-design construction for prediction at a single x.

The design starts from the n0 nearest neighbours of x and grows one row
at a time to n rows.  Each step scores the remaining candidates with one
of three criteria:

* NN   - smallest distance to x,
* ALC  - largest reduction in predictive variance at x,
* MSPE - smallest approximate mean-squared prediction error, which adds
         a lengthscale-uncertainty term to the reduced variance.

Everything is held at a fixed lengthscale during the loop, so the
inverse, K^{-1}Y, psi and the observed information are all extended in
O(j^2) per step.
"""
from dataclasses import dataclass

import numpy as np

from . import gp, kernel
from .config import Method, StageConfig
from .errors import ConditioningError, DesignStallError, InvalidInputError
from .linalg import extend_inverse, extend_scratch, extend_solution, spd_build

# reductions below this fraction of v_j(x) are roundoff
ALC_FLOOR = 1e-14


@dataclass
class CandidateScore:
    candidate: int
    value: float
    feasible: bool


@dataclass
class StepRecord:
    """One row added to a local design (initial neighbours included)."""

    row: int
    value: float
    vx_after: float


class LocalState:
    """Incremental state of the local design at prediction location x.

    Buffers are sized to ``capacity`` (the final design size) up front
    and every extension writes in place.
    """

    def __init__(self, x, D, h, indices, capacity=None, fisher=False):
        x = np.asarray(x, dtype=float)
        if x.shape != (D.p,):
            raise InvalidInputError(f"location has shape {x.shape}, design has p={D.p}")
        indices = [int(i) for i in indices]
        j = len(indices)
        if j < 1:
            raise InvalidInputError("a local design needs at least one row")
        if len(set(indices)) != j:
            raise InvalidInputError("local design indices must be distinct")
        cap = max(j, capacity or 0)
        self.x = x
        self.D = D
        self.h = h
        self.indices = indices
        self._X = np.zeros((cap, D.p))
        self._Y = np.zeros(cap)
        self._D2 = np.zeros((cap, cap))
        self._kx = np.zeros(cap)
        self._d2x = np.zeros(cap)
        self._w = np.zeros(cap)
        self._X[:j] = D.X[indices]
        self._Y[:j] = D.Y[indices]
        self._D2[:j, :j] = kernel.sqdist(self._X[:j], self._X[:j])
        self.inv = spd_build(kernel.corr_matrix(self._X[:j], h, D2=self._D2[:j, :j]), capacity=cap)
        self._w[:j] = self.inv.Kinv @ self._Y[:j]
        self.psi = float(self._Y[:j] @ self._w[:j])
        self._d2x[:j] = kernel.sqdist_to(x, self._X[:j])
        self._kx[:j] = kernel.cross_corr_vector(x, self._X[:j], h)
        self.vx = self._bracket_at_x()
        self.fisher = None
        if fisher:
            self.fisher = _batch_fisher(self.fit(copy=False))

    @property
    def j(self):
        return len(self.indices)

    @property
    def capacity(self):
        return self._Y.size

    @property
    def X_sub(self):
        return self._X[: self.j]

    @property
    def Y_sub(self):
        return self._Y[: self.j]

    @property
    def D2(self):
        return self._D2[: self.j, : self.j]

    @property
    def kx(self):
        return self._kx[: self.j]

    @property
    def KinvY(self):
        return self._w[: self.j]

    def _bracket_at_x(self):
        kx = self.kx
        return float((1.0 + self.h.eta) - kx @ (self.inv.Kinv @ kx))

    def fit(self, copy=True):
        """The current sub-design as a :class:`gp.GpFit`."""
        j = self.j
        if copy:
            return gp.GpFit(
                self.X_sub.copy(), self.Y_sub.copy(), self.h, self.inv.copy(capacity=j),
                self.KinvY.copy(), self.psi, list(self.indices), self.D2.copy(),
            )
        return gp.GpFit(self.X_sub, self.Y_sub, self.h, self.inv, self.KinvY, self.psi,
                        self.indices, self.D2)

    def _grow(self, cap):
        j = self.j
        for name in ("_X", "_Y", "_kx", "_d2x", "_w"):
            old = getattr(self, name)
            new = np.zeros((cap,) + old.shape[1:])
            new[:j] = old[:j]
            setattr(self, name, new)
        D2 = np.zeros((cap, cap))
        D2[:j, :j] = self.D2
        self._D2 = D2
        self.inv = self.inv.copy(capacity=cap)

    def candidate_kvec(self, row):
        """Correlations between design row ``row`` and the sub-design.

        Rows are distinct observations, so no nugget is added even when
        coordinates coincide.
        """
        d2 = kernel.sqdist_to(self.D.X[row], self.X_sub)
        return np.exp(-d2 / self.h.theta), d2

    def extend(self, row, scratch=None, kvec=None, d2=None):
        """Append design row ``row`` in place (O(j^2))."""
        if row in self.indices:
            raise InvalidInputError(f"row {row} is already in the local design")
        j = self.j
        if j >= self.capacity:
            self._grow(max(2 * self.capacity, j + 1))
        if kvec is None:
            kvec, d2 = self.candidate_kvec(row)
        if scratch is None:
            scratch = extend_scratch(self.inv, kvec, 1.0 + self.h.eta)
        xs = self.D.X[row]
        ys = float(self.D.Y[row])
        new_w, self.psi = extend_solution(self.KinvY, self.psi, scratch, self.Y_sub, ys)
        d2s = float(kernel.sqdist_to(self.x, xs[None, :])[0])
        kxs = float(np.exp(-d2s / self.h.theta))
        if self.h.eta and np.array_equal(self.x, xs):
            kxs += self.h.eta
        c = kxs - float(self.kx @ scratch.z)
        extend_inverse(self.inv, scratch, inplace=True)
        self._w[: j + 1] = new_w
        self._X[j] = xs
        self._Y[j] = ys
        self._D2[:j, j] = d2
        self._D2[j, :j] = d2
        self._D2[j, j] = 0.0
        self._kx[j] = kxs
        self._d2x[j] = d2s
        self.indices.append(int(row))
        self.vx = max(self.vx - c * c * scratch.m, 0.0)
        return self


def _batch_fisher(fit):
    if not fit.psi > 0.0:
        return 0.0
    return gp.fisher_info(fit)


def init_nn(x, D, n0, h, capacity=None, fisher=False):
    """Local state holding the n0 nearest rows to x (ties by lower row id)."""
    if n0 < 1:
        raise InvalidInputError("n0 must be at least 1")
    if D.N < n0:
        raise InvalidInputError(f"design has {D.N} rows, fewer than n0={n0}")
    ids, _ = D.nearest(np.asarray(x, dtype=float), n0)
    return LocalState(x, D, h, ids, capacity=capacity, fisher=fisher)


def alc_reduction(state, candidate):
    """Reduction v_j(x) - v_{j+1}(x) in the predictive bracket at x.

    With g and m from the bordered inverse and K' = K(x_{j+1}, x):
        (k^T g)^2 / m + 2 (k^T g) K' + K'^2 m
    Raises ConditioningError when the candidate cannot be appended.
    """
    kvec, _ = state.candidate_kvec(candidate)
    s = extend_scratch(state.inv, kvec, 1.0 + state.h.eta)
    kc = kernel.corr(state.x, state.D.X[candidate], state.h)
    kg = float(state.kx @ s.g)
    red = kg * kg * s.minv + 2.0 * kg * kc + kc * kc * s.m
    if red < ALC_FLOOR * state.vx:
        return 0.0
    return float(red)


def _mspe_terms(state):
    """Pieces of the MSPE criterion shared by every candidate."""
    j = state.j
    if j < 3:
        raise InvalidInputError("MSPE needs at least three design points")
    if state.fisher is None:
        state.fisher = _batch_fisher(state.fit(copy=False))
    theta = state.h.theta
    D2 = state.D2
    dK = np.exp(-D2 / theta) * D2 / (theta * theta)
    w = state.KinvY
    dKw = dK @ w
    dkx = np.exp(-state._d2x[:j] / theta) * state._d2x[:j] / (theta * theta)
    zx = state.inv.Kinv @ state.kx
    dmu_x = float(dkx @ w - zx @ dKw)
    return dK, dKw, dmu_x


def mspe_criterion(state, candidate):
    """Approximate MSPE at x after adding ``candidate`` (smaller is better).

        J = (j+1) psi / (j (j-1)) v_{j+1}(x) + dmu(x)^2 / G
        G = max(F_j, 0) + dV'^2 / (2 V'^2) + dmu'^2 / V'

    where primed quantities are predictive moments at the candidate.
    When G <= 0 only the variance term is returned.
    """
    j = state.j
    red = alc_reduction(state, candidate)
    vterm = (j + 1) * state.psi / (j * (j - 1)) * (state.vx - red)
    _, _, dmu_x = _mspe_terms(state)
    if dmu_x == 0.0:
        return float(vterm)
    fit = state.fit(copy=False)
    xc = state.D.X[candidate]
    V = gp.predict(fit, xc, nugget=False).variance
    dmu_c, _, dV_c, _ = gp.predict_dtheta(fit, xc, nugget=False)
    G = max(state.fisher, 0.0) + dV_c * dV_c / (2.0 * V * V) + dmu_c * dmu_c / V
    if not G > 0.0:
        return float(vterm)
    return float(vterm + dmu_x * dmu_x / G)


def cond_loglik_d2(j, y, mu, V, dmu, d2mu, dV, d2V):
    """Second theta-derivative of the Student-t log density of y | Y_j.

    The density is, up to a constant,
        -log(V)/2 - (j+1)/2 log(j - 2 + (y - mu)^2 / V).
    """
    r = y - mu
    Q = j - 2 + r * r / V
    dQ = -2.0 * r * dmu / V - r * r * dV / (V * V)
    d2Q = (2.0 * dmu * dmu / V - 2.0 * r * d2mu / V + 4.0 * r * dmu * dV / (V * V)
           - r * r * d2V / (V * V) + 2.0 * r * r * dV * dV / (V ** 3))
    return (-d2V / (2.0 * V) + dV * dV / (2.0 * V * V)
            - 0.5 * (j + 1) * (d2Q / Q - dQ * dQ / (Q * Q)))


def update_fisher(state, new_row, y_new=None):
    """Observed information after adding ``new_row``: F_j - l''(y_new | Y_j)."""
    if state.fisher is None:
        state.fisher = _batch_fisher(state.fit(copy=False))
    fit = state.fit(copy=False)
    xs = state.D.X[new_row]
    if y_new is None:
        y_new = float(state.D.Y[new_row])
    pred = gp.predict(fit, xs, nugget=False)
    V = pred.variance
    if not V > 0.0:
        raise ConditioningError(f"predictive variance {V:.3e} at row {new_row} is not positive")
    dmu, d2mu, dV, d2V = gp.predict_dtheta(fit, xs, nugget=False)
    return float(state.fisher - cond_loglik_d2(state.j, y_new, pred.mean, V, dmu, d2mu, dV, d2V))


class CandidatePool:
    """Running per-candidate quantities for a growing local design.

    For each candidate row c it keeps Z[c] = K^{-1} k_c, the bracket
    v_c = K(c, c) - k_c^T K^{-1} k_c and the residual covariance
    cov_c = K(c, x) - k_c^T K^{-1} k(x).  Appending row s with
    z_s = K^{-1} k_s updates all of them in O(M j) through the residual
    correlation u = k(., s) - K(., X) z_s:

        Z <- [Z - u z_s^T / v_s, u / v_s]
        v <- v - u^2 / v_s,   cov <- cov - u cov_s / v_s

    Z itself is only needed by MSPE and is kept when ``track_z`` is set.
    """

    def __init__(self, state, candidates, track_z=True):
        ids = np.asarray(candidates, dtype=np.intp)
        if ids.size == 0:
            raise InvalidInputError("no candidates")
        if np.intersect1d(ids, state.indices).size:
            raise InvalidInputError("candidates overlap the local design")
        j, cap, theta = state.j, state.capacity, state.h.theta
        M = ids.size
        self.ids = ids
        self._theta = theta
        self.C = state.D.X[ids]
        self.D2c = np.empty((M, cap))
        self.Kc = np.empty((M, cap))
        self.D2c[:, :j] = kernel.sqdist(self.C, state.X_sub)
        self.Kc[:, :j] = np.exp(-self.D2c[:, :j] / theta)
        Z = self.Kc[:, :j] @ state.inv.Kinv
        self.Z = None
        if track_z:
            self.Z = np.empty((M, cap))
            self.Z[:, :j] = Z
        self.v = (1.0 + state.h.eta) - np.einsum("ij,ij->i", Z, self.Kc[:, :j])
        self.d2x = kernel.sqdist_to(state.x, self.C)
        kxc = np.exp(-self.d2x / theta)
        if state.h.eta:
            kxc[np.all(self.C == state.x, axis=1)] += state.h.eta
        self.cov = kxc - Z @ state.kx
        self.active = np.ones(M, dtype=bool)
        self.j = j

    def feasible(self):
        return self.active & (self.v > 0.0)

    def reductions(self, vx):
        ok = self.feasible()
        red = np.full(self.ids.size, -np.inf)
        red[ok] = self.cov[ok] ** 2 / self.v[ok]
        red[ok & (red < ALC_FLOOR * vx)] = 0.0
        return red

    def mspe(self, state):
        j = self.j
        ok = self.feasible()
        red = self.reductions(state.vx)
        out = np.full(self.ids.size, np.inf)
        vterm = (j + 1) * state.psi / (j * (j - 1)) * (state.vx - red[ok])
        dK, dKw, dmu_x = _mspe_terms(state)
        if dmu_x == 0.0:
            out[ok] = vterm
            return out
        theta = state.h.theta
        Z = self.Z[ok, :j]
        D2c = self.D2c[ok, :j]
        dKc = self.Kc[ok, :j] * D2c / (theta * theta)
        w = state.KinvY
        vc = self.v[ok]
        psi = state.psi
        dmu_c = dKc @ w - Z @ dKw
        zKz = np.einsum("ij,ij->i", Z @ dK, Z)
        dv_c = -(2.0 * np.einsum("ij,ij->i", dKc, Z) - zKz)
        dpsi = -float(w @ dKw)
        V = psi * vc / (j - 2)
        dV = (dpsi * vc + psi * dv_c) / (j - 2)
        G = max(state.fisher, 0.0) + dV * dV / (2.0 * V * V) + dmu_c * dmu_c / V
        extra = np.zeros_like(G)
        pos = G > 0.0
        extra[pos] = dmu_x * dmu_x / G[pos]
        out[ok] = vterm + extra
        return out

    def remove(self, pos):
        self.active[pos] = False

    def add(self, pos, scratch, cov_s):
        """Account for candidate ``pos`` having joined the design."""
        j = self.j
        d2 = kernel.sqdist_to(self.C[pos], self.C)
        kn = np.exp(-d2 / self._theta)
        vs = scratch.minv
        u = kn - self.Kc[:, :j] @ scratch.z
        if self.Z is not None:
            self.Z[:, :j] -= np.outer(u / vs, scratch.z)
            self.Z[:, j] = u / vs
        self.v -= u * u / vs
        self.cov -= u * (cov_s / vs)
        self.Kc[:, j] = kn
        self.D2c[:, j] = d2
        self.active[pos] = False
        self.j = j + 1


def _select(values, ids, ok, maximize):
    """Position of the best feasible value, ties broken by lower row id."""
    if not ok.any():
        return None
    vals = values[ok]
    best = vals.max() if maximize else vals.min()
    pos = np.flatnonzero(ok)[vals == best]
    return int(pos[np.argmin(ids[pos])])


def _score(pool, state, method):
    if method is Method.NN:
        ok = pool.active.copy()
        return pool.d2x, ok, False
    if method is Method.ALC:
        red = pool.reductions(state.vx)
        return red, pool.feasible(), True
    J = pool.mspe(state)
    return J, pool.feasible() & np.isfinite(J), False


def _step(state, pool, method, diagnostics=None):
    """One greedy step; returns the StepRecord of the chosen row."""
    values, ok, maximize = _score(pool, state, method)
    while True:
        pos = _select(values, pool.ids, ok, maximize)
        if pos is None:
            raise DesignStallError(
                f"all candidates infeasible at j={state.j}", trace=list(state.indices)
            )
        row = int(pool.ids[pos])
        kvec = pool.Kc[pos, : state.j].copy()
        d2 = pool.D2c[pos, : state.j].copy()
        try:
            scratch = extend_scratch(state.inv, kvec, 1.0 + state.h.eta)
        except ConditioningError:
            if diagnostics is not None:
                diagnostics.append(("infeasible", row, state.j))
            ok[pos] = False
            pool.remove(pos)
            continue
        break
    if method is Method.MSPE:
        if state.fisher is not None and state.fisher < 0 and diagnostics is not None:
            diagnostics.append(("negative_fisher", row, state.j))
        state.fisher = update_fisher(state, row)
    cov_s = float(pool.cov[pos])
    state.extend(row, scratch=scratch, kvec=kvec, d2=d2)
    pool.add(pos, scratch, cov_s)
    value = float(values[pos]) if method is not Method.NN else float(pool.d2x[pos])
    return StepRecord(row, value, state.vx)


def greedy_step(state, D, crit, candidates):
    """Add the best of ``candidates`` to ``state`` under criterion ``crit``.

    Returns (chosen row id, state); the state is extended in place.
    """
    method = Method.parse(crit)
    if state.D is not D:
        raise InvalidInputError("state was built on a different design")
    if state.j >= state.capacity:
        state._grow(state.j + 1)
    pool = CandidatePool(state, candidates, track_z=method is Method.MSPE)
    rec = _step(state, pool, method)
    return rec.row, state


def _candidate_rows(x, D, cfg):
    close = min(cfg.close, D.N)
    ids, d2 = D.nearest(x, close)
    return ids, d2


def run_local_design(x, D, cfg, h, diagnostics=None):
    """Grow the local design at x; returns (state, step records).

    The records cover every row in design order, initial neighbours
    first (their value is the squared distance to x).
    """
    method = cfg.method
    x = np.asarray(x, dtype=float)
    n0, n = cfg.n0, min(cfg.n, D.N)
    if method is Method.MSPE and n0 < 3:
        raise InvalidInputError("MSPE needs n0 >= 3")
    ids, d2 = _candidate_rows(x, D, cfg)
    if ids.size < n0:
        raise InvalidInputError(f"design has {ids.size} rows, fewer than n0={n0}")
    state = LocalState(x, D, h, ids[:n0], capacity=n, fisher=(method is Method.MSPE and n > n0))
    records = _initial_records(state, d2[:n0])
    if n > n0:
        pool = CandidatePool(state, ids[n0:], track_z=method is Method.MSPE)
        for _ in range(n - n0):
            records.append(_step(state, pool, method, diagnostics))
    return state, records


def _initial_records(state, d2):
    # bracket at x after each of the first i rows, for tracing only
    j = state.j
    Kinv_full = None
    out = []
    for i in range(1, j + 1):
        if i == j:
            vx = state.vx
        else:
            K = kernel.corr_matrix(state.X_sub[:i], state.h, D2=state.D2[:i, :i])
            kx = state.kx[:i]
            Kinv_full = np.linalg.solve(K, kx)
            vx = float((1.0 + state.h.eta) - kx @ Kinv_full)
        out.append(StepRecord(state.indices[i - 1], float(d2[i - 1]), vx))
    return out


def local_design(x, D, cfg, h):
    """Local design at x: (GpFit at the input theta, greedy selection trace)."""
    state, records = run_local_design(x, D, cfg, h)
    return state.fit(), [r.row for r in records[cfg.n0:]]


def local_mle(fit, bounds, tol=1e-5, max_iter=50):
    """Lengthscale MLE on a local design; returns (refit, theta_hat, result)."""
    res = gp.mle_theta(fit, bounds, tol=tol, max_iter=max_iter)
    return gp.refit(fit, res.theta), res.theta, res
