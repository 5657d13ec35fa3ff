"""Global emulation: independent local designs at every prediction location.

Each stage runs a local design at every grid location with that
location's lengthscale, then (optionally) re-estimates the lengthscale
by local MLE.  Between stages the estimated lengthscales can be
smoothed over neighbouring grid locations.  Locations are processed in
static blocks by a pool of forked workers; every location is computed
the same way whatever the partition, so results do not depend on the
worker count.
"""
import multiprocessing
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from . import gp, local
from .config import StageConfig
from .errors import (ConditioningError, DesignStallError, EmulationFailure,
                     InvalidInputError, LocalGPError, NumericalError)
from .kernel import Hyper

# Fraction of failed locations above which emulation reports an error.
FAILURE_LIMIT = 0.01

STATUS_OK = "ok"

_SUBSAMPLE = 1000


def theta0_auto(D, quantile=0.1, seed=0):
    """Lower quantile of pairwise squared distances between design rows.

    Uses a uniform subsample of at most 1000 rows (all rows when N is
    at most 1000).
    """
    if not 0.0 < quantile < 1.0:
        raise InvalidInputError("quantile must lie in (0, 1)")
    if D.N < 2:
        raise InvalidInputError("need at least two design rows")
    X = D.X
    if D.N > _SUBSAMPLE:
        rng = np.random.default_rng(seed)
        X = X[np.sort(rng.choice(D.N, _SUBSAMPLE, replace=False))]
    d2 = pdist(X, "sqeuclidean")
    if not np.any(d2 > 0):
        raise InvalidInputError("all design points coincide")
    return float(np.quantile(d2, quantile))


def default_bounds(theta0):
    """Search interval [1e-3 theta0, 1e3 theta0] for the local lengthscale MLE."""
    return (1e-3 * theta0, 1e3 * theta0)


def smooth_theta(grid, theta_hats, k=12, bandwidth=None):
    """Spatially smooth lengthscales over neighbouring grid locations.

    Each output is a Gaussian-weighted mean of log theta over the k
    nearest locations (self included, plus any tied with the k-th), with
    weights exp(-d^2 / (2 b^2)).
    The bandwidth b defaults, per location, to the distance of its k-th
    neighbour.  NaN entries (failed locations) are ignored.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim == 1:
        grid = grid[:, None]
    th = np.asarray(theta_hats, dtype=float)
    if th.shape != (grid.shape[0],):
        raise InvalidInputError("one theta per grid location is required")
    if k < 1:
        raise InvalidInputError("k must be at least 1")
    k = min(int(k), grid.shape[0])
    if k == 1:
        return th.copy()
    tree = cKDTree(grid)
    dk = tree.query(grid, k=k)[0][:, -1]
    # neighbours tied with the k-th are included so the set is order free
    nbrs = tree.query_ball_point(grid, dk * (1 + 1e-9) + 1e-300)
    logt = np.log(th)
    out = np.full(th.shape, np.nan)
    for i, nb in enumerate(nbrs):
        nb = np.asarray(nb, dtype=int)
        L = logt[nb]
        ok = np.isfinite(L)
        if not ok.any():
            continue
        b = bandwidth if bandwidth is not None else (dk[i] if dk[i] > 0 else 1.0)
        d2 = ((grid[nb[ok]] - grid[i]) ** 2).sum(axis=1)
        w = np.exp(-0.5 * d2 / (b * b))
        out[i] = np.exp(w @ L[ok] / w.sum())
    return out


@dataclass
class GlobalResult:
    """Per-location predictions in grid order, plus per-stage diagnostics."""

    grid: np.ndarray
    mean: np.ndarray
    scale2: np.ndarray
    dof: np.ndarray
    variance: np.ndarray
    theta_hat: np.ndarray
    n_used: np.ndarray
    status: list
    theta_by_stage: list = field(default_factory=list)
    iters_by_stage: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)
    theta0: float = None

    def __len__(self):
        return self.mean.size

    @property
    def failures(self):
        return sum(s != STATUS_OK for s in self.status)

    @property
    def records(self):
        return [
            gp.Prediction(float(self.mean[i]), float(self.scale2[i]), int(self.dof[i]),
                          float(self.variance[i]), float(self.theta_hat[i]), int(self.n_used[i]))
            for i in range(len(self))
        ]


# Shared read-only state for forked workers.
_SHARED = {}


def _status_of(exc):
    if isinstance(exc, DesignStallError):
        return "stall"
    if isinstance(exc, ConditioningError):
        return "conditioning"
    if isinstance(exc, NumericalError):
        return "numerical"
    if isinstance(exc, InvalidInputError):
        return "input"
    return "error"


def _one_location(x, theta, cfg, D, bounds, mle, want_pred):
    """Design, optional MLE and optional prediction at one location."""
    h = Hyper(theta, cfg.eta)
    state, _ = local.run_local_design(x, D, cfg, h)
    fit = state.fit()
    iters = 0
    if mle:
        fit, theta, res = local.local_mle(fit, bounds, tol=cfg.mle_tol, max_iter=cfg.mle_max_iter)
        iters = res.iters
    pred = gp.predict(fit, x) if want_pred else None
    return theta, iters, pred


def _refit_predict(x, theta, cfg, D, reselect, design_theta):
    """Prediction at a smoothed theta, re-running selection if asked."""
    h = Hyper(design_theta if not reselect else theta, cfg.eta)
    state, _ = local.run_local_design(x, D, cfg, h)
    fit = gp.refit(state.fit(), theta)
    return gp.predict(fit, x)


def _run_block(args):
    lo, hi, thetas, mode, extra = args
    grid, D, cfg, bounds = _SHARED["grid"], _SHARED["D"], _SHARED["cfg"], _SHARED["bounds"]
    n = hi - lo
    th = np.full(n, np.nan)
    it = np.zeros(n, dtype=int)
    pred = np.full((n, 5), np.nan)
    status = [STATUS_OK] * n
    for i in range(n):
        g = lo + i
        theta = thetas[g]
        if not np.isfinite(theta):
            status[i] = "skipped"
            continue
        try:
            if mode == "refit":
                p = _refit_predict(grid[g], theta, cfg, D, cfg.refit_after_smooth, extra[g])
                t, k = theta, 0
            else:
                t, k, p = _one_location(grid[g], theta, cfg, D, bounds, cfg.mle, mode == "predict")
        except LocalGPError as exc:
            status[i] = _status_of(exc)
            continue
        except (ArithmeticError, np.linalg.LinAlgError):
            status[i] = "numerical"
            continue
        th[i], it[i] = t, k
        if p is not None:
            pred[i] = (p.mean, p.scale2, p.dof, p.variance, p.n_used)
    return lo, th, it, pred, status


def _blocks(m, workers):
    edges = np.linspace(0, m, workers + 1).round().astype(int)
    return [(int(edges[i]), int(edges[i + 1])) for i in range(workers) if edges[i + 1] > edges[i]]


def _run_pass(thetas, mode, workers, extra=None):
    m = _SHARED["grid"].shape[0]
    th = np.full(m, np.nan)
    it = np.zeros(m, dtype=int)
    pred = np.full((m, 5), np.nan)
    status = [STATUS_OK] * m
    jobs = [(lo, hi, thetas, mode, extra) for lo, hi in _blocks(m, workers)]
    if workers == 1 or len(jobs) == 1:
        outs = map(_run_block, jobs)
    else:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=len(jobs), mp_context=ctx) as pool:
            outs = list(pool.map(_run_block, jobs))
    for lo, t, k, p, s in outs:
        hi = lo + t.size
        th[lo:hi], it[lo:hi], pred[lo:hi] = t, k, p
        status[lo:hi] = s
    return th, it, pred, status


def resolve_workers(requested=None):
    """Worker count: explicit request, else LOCALGP_WORKERS, else 1."""
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("LOCALGP_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InvalidInputError(f"LOCALGP_WORKERS must be an integer, got {env!r}") from None
    return 1


def emulate(grid, D, cfg=None, seed=0):
    """Predict at every row of ``grid`` with locally designed GPs.

    Stage 1 uses theta0 everywhere; later stages start each location
    from the previous stage's estimate (smoothed when configured).  The
    final stage predicts from the fit at that location's estimate, or,
    with ``smooth_final``, from a refit at the smoothed estimate.

    Failed locations get NaN predictions and a status code.  Raises
    :class:`EmulationFailure` (carrying the result) when more than 1%
    of locations fail.
    """
    cfg = cfg or StageConfig()
    grid = np.asarray(grid, dtype=float)
    if grid.ndim == 1:
        grid = grid.reshape(-1, D.p) if D.p > 1 else grid[:, None]
    if grid.ndim != 2 or grid.shape[1] != D.p:
        raise InvalidInputError(f"grid shape {grid.shape} does not match design dimension {D.p}")
    if grid.shape[0] == 0:
        raise InvalidInputError("empty grid")
    if not np.all(np.isfinite(grid)):
        raise InvalidInputError("grid contains non-finite values")
    if cfg.n > D.N or cfg.n0 > D.N:
        raise InvalidInputError(f"design has {D.N} rows, fewer than n={cfg.n}")

    timing = {}
    t0 = time.perf_counter()
    theta0 = theta0_auto(D, cfg.theta_quantile, seed) if cfg.theta0 == "auto" else float(cfg.theta0)
    bounds = cfg.theta_bounds or default_bounds(theta0)
    theta0 = float(np.clip(theta0, *bounds))
    timing["setup"] = time.perf_counter() - t0
    workers = min(cfg.workers, grid.shape[0])

    _SHARED.update(grid=grid, D=D, cfg=cfg, bounds=bounds)
    D.tree  # build the index before forking so workers share it
    try:
        m = grid.shape[0]
        thetas = np.full(m, theta0)
        theta_by_stage, iters_by_stage = [], []
        for s in range(1, cfg.stages + 1):
            last = s == cfg.stages
            predict_now = last and not (cfg.smooth_final and cfg.smoothing and cfg.mle)
            t1 = time.perf_counter()
            th, it, pred, status = _run_pass(thetas, "predict" if predict_now else "theta", workers)
            timing[f"stage{s}"] = time.perf_counter() - t1
            theta_by_stage.append(th)
            iters_by_stage.append(it)
            if not last:
                nxt = smooth_theta(grid, th, cfg.smooth_k, cfg.smooth_bandwidth) if cfg.smoothing else th
                # failed locations restart from theta0
                thetas = np.where(np.isfinite(nxt), nxt, theta0)
        if not predict_now:
            t1 = time.perf_counter()
            sm = smooth_theta(grid, th, cfg.smooth_k, cfg.smooth_bandwidth)
            sm = np.where(np.isfinite(th), sm, np.nan)
            _, _, pred, st2 = _run_pass(sm, "refit", workers, extra=thetas)
            status = [a if a != STATUS_OK else b for a, b in zip(status, st2)]
            th = sm
            timing["final"] = time.perf_counter() - t1
    finally:
        _SHARED.clear()

    bad = np.array([st != STATUS_OK for st in status])
    pred[bad] = np.nan
    th = np.where(bad, np.nan, th)
    timing["total"] = time.perf_counter() - t0
    dof = np.where(bad, 0, np.nan_to_num(pred[:, 2])).astype(int)
    n_used = np.where(bad, 0, np.nan_to_num(pred[:, 4])).astype(int)
    res = GlobalResult(grid, pred[:, 0], pred[:, 1], dof, pred[:, 3], th, n_used, status,
                       theta_by_stage, iters_by_stage, timing, theta0)
    if res.failures > FAILURE_LIMIT * m:
        raise EmulationFailure(f"{res.failures} of {m} locations failed", result=res)
    return res
