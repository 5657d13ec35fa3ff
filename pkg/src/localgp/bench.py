"""Benchmark problems, sampling and scoring.

Two test problems:

* ``gramacy2d``: f(x1, x2) = -w(x1) w(x2) on [-2, 2]^2 with
  w(x) = exp(-(x-1)^2) + exp(-0.8 (x+1)^2) - 0.05 sin(8 (x+0.1)),
  trained on a dense 201 x 201 grid.
* ``borehole``: flow through a borehole, 8 inputs, trained on a Latin
  hypercube.  Emulation works on inputs coded to the unit cube; the raw
  scale is only used to evaluate the function.
"""
import time
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import qmc
from scipy.stats import t as student_t

from . import kernel
from .config import Method, StageConfig
from .design import DesignSet
from .emulate import emulate, theta0_auto
from .errors import EmulationFailure, InvalidInputError
from .linalg import condition_number
from .local import run_local_design

GRAMACY_DOMAIN = np.array([[-2.0, 2.0], [-2.0, 2.0]])

# r_w, r, T_u, T_l, H_u, H_l, L, K_w
BOREHOLE_DOMAIN = np.array([
    [0.05, 0.15],
    [100.0, 5000.0],
    [63070.0, 115600.0],
    [63.1, 116.0],
    [990.0, 1110.0],
    [700.0, 820.0],
    [1120.0, 1680.0],
    [9855.0, 12045.0],
])

# Nugget for the benchmark protocols; larger than the library default.
BENCH_NUGGET = 1e-4


def _w(x):
    return np.exp(-((x - 1.0) ** 2)) + np.exp(-0.8 * (x + 1.0) ** 2) - 0.05 * np.sin(8.0 * (x + 0.1))


def eval_gramacy2d(x):
    """Two-dimensional test surface; accepts one point or an (m, 2) array."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 2:
        raise InvalidInputError(f"gramacy2d takes 2 inputs, got {x.shape[-1]}")
    return -_w(x[..., 0]) * _w(x[..., 1])


def in_domain(x, domain):
    """True where rows of x lie inside the box ``domain``."""
    x = np.asarray(x, dtype=float)
    return np.all((x >= domain[:, 0]) & (x <= domain[:, 1]), axis=-1)


def eval_borehole(x):
    """Borehole flow rate on the raw input scale; one point or (m, 8)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 8:
        raise InvalidInputError(f"borehole takes 8 inputs, got {x.shape[-1]}")
    rw, r, Tu, Tl, Hu, Hl, L, Kw = np.moveaxis(x, -1, 0)
    if np.any(r <= rw):
        raise InvalidInputError("borehole needs r > r_w")
    lr = np.log(r / rw)
    return 2.0 * np.pi * Tu * (Hu - Hl) / (lr * (1.0 + 2.0 * L * Tu / (lr * rw ** 2 * Kw) + Tu / Tl))


def lhs(n, p, domain=None, seed=0):
    """Random Latin hypercube of n points in p dimensions.

    Each column has exactly one point in each of the n equal-width
    strata of its range.  ``domain`` is a (p, 2) array of [lo, hi]
    rows; the unit cube when omitted.
    """
    if n < 1:
        raise InvalidInputError("n must be at least 1")
    U = qmc.LatinHypercube(d=p, seed=np.random.default_rng(seed)).random(n)
    if domain is None:
        return U
    domain = np.asarray(domain, dtype=float)
    if domain.shape != (p, 2):
        raise InvalidInputError(f"domain must have shape ({p}, 2)")
    return qmc.scale(U, domain[:, 0], domain[:, 1])


@dataclass
class MetricsReport:
    rmse: float
    sqrt_one_minus_nse: float
    coverage95: float
    mean_sd: float
    seconds: float = float("nan")
    n: int = 0
    failures: int = 0


def score(predictions, truth, seconds=float("nan")):
    """Accuracy and uncertainty summaries of predictions against truth.

    ``predictions`` is a :class:`GlobalResult` or a list of
    :class:`Prediction`.  Rows with a failed (NaN) prediction are
    excluded and counted in ``failures``.  Coverage uses the pointwise
    Student-t interval mean +/- t_{0.975, dof} sqrt(scale2).
    """
    if hasattr(predictions, "mean") and hasattr(predictions, "scale2"):
        mean, scale2 = np.asarray(predictions.mean), np.asarray(predictions.scale2)
        dof, var = np.asarray(predictions.dof), np.asarray(predictions.variance)
    else:
        mean = np.array([p.mean for p in predictions], dtype=float)
        scale2 = np.array([p.scale2 for p in predictions], dtype=float)
        dof = np.array([p.dof for p in predictions], dtype=float)
        var = np.array([p.variance for p in predictions], dtype=float)
    truth = np.asarray(truth, dtype=float)
    if truth.shape != mean.shape or truth.size < 2:
        raise InvalidInputError("need at least two predictions matching the truth vector")
    ok = np.isfinite(mean) & np.isfinite(scale2)
    fails = int(np.sum(~ok))
    mean, scale2, dof, var, truth = mean[ok], scale2[ok], dof[ok], var[ok], truth[ok]
    if truth.size < 2:
        raise InvalidInputError("fewer than two successful predictions")
    err = mean - truth
    rmse = float(np.sqrt(np.mean(err ** 2)))
    sd = float(np.sqrt(np.mean((truth - truth.mean()) ** 2)))
    if sd == 0.0:
        raise InvalidInputError("response has zero variance, NSE undefined")
    half = student_t.ppf(0.975, dof) * np.sqrt(scale2)
    cover = float(np.mean(np.abs(err) <= half))
    return MetricsReport(rmse, rmse / sd, cover, float(np.mean(np.sqrt(var))), seconds,
                         int(truth.size), fails)


def condition_trace(x, D, cfg, theta=None):
    """Normalized condition numbers kappa(K_j) / j^2 for j = n0..n.

    The local design at x is grown at ``theta`` (default: cfg.theta0,
    or the automatic choice) and each K_j is rebuilt from its rows.
    """
    if theta is None:
        theta = theta0_auto(D, cfg.theta_quantile) if cfg.theta0 == "auto" else float(cfg.theta0)
    h = kernel.Hyper(theta, cfg.eta)
    state, _ = run_local_design(x, D, cfg, h)
    X = state.X_sub
    out = []
    for j in range(cfg.n0, state.j + 1):
        K = kernel.corr_matrix(X[:j], h)
        out.append(condition_number(K) / (j * j))
    return np.array(out)


# name -> (criterion, n, stages, mle)
METHODS = {
    "nn": (Method.NN, 50, 1, True),
    "nn.nomle": (Method.NN, 50, 1, False),
    "nnbig": (Method.NN, 200, 1, True),
    "nnbig.nomle": (Method.NN, 200, 1, False),
    "alc": (Method.ALC, 50, 1, True),
    "alc2": (Method.ALC, 50, 2, True),
    "alc.nomle": (Method.ALC, 50, 1, False),
    "mspe": (Method.MSPE, 50, 1, True),
    "mspe2": (Method.MSPE, 50, 2, True),
    "mspe.nomle": (Method.MSPE, 50, 1, False),
}

PROBLEMS = ("gramacy2d", "borehole")


@dataclass
class ProblemData:
    D: DesignSet
    grid: np.ndarray
    truth: np.ndarray
    base: StageConfig
    theta0_nomle: object


def gramacy_grid(m):
    g = np.linspace(-2.0, 2.0, m)
    x1, x2 = np.meshgrid(g, g, indexing="ij")
    return np.column_stack([x1.ravel(), x2.ravel()])


def make_problem(problem, seed=0, n_train=None, n_pred=None, test="lhs", eta=BENCH_NUGGET):
    """Training design, test locations and truth for one replicate.

    gramacy2d: 201 x 201 grid design (``n_train`` points per side
    overrides 201); test locations are an LHS of ``n_pred`` points
    (default 10000) or, with ``test="grid"``, a sqrt(n_pred)-per-side
    grid.  Greedy methods start from theta0 = 0.7, fixed-lengthscale
    variants use 1.0, and stage-2 lengthscales are smoothed.

    borehole: one LHS of n_train + n_pred points (defaults 4000 and
    500), the first n_train for training; inputs coded to the unit cube,
    theta0 automatic, no smoothing between stages.
    """
    if problem == "gramacy2d":
        side = n_train or 201
        X = gramacy_grid(side)
        n_pred = n_pred or 10000
        if test == "grid":
            m = int(round(np.sqrt(n_pred)))
            if m * m != n_pred:
                raise InvalidInputError("grid test sets need a square n_pred")
            G = gramacy_grid(m)
        elif test == "lhs":
            G = lhs(n_pred, 2, GRAMACY_DOMAIN, seed)
        else:
            raise InvalidInputError(f"unknown test design {test!r}")
        D = DesignSet(X, eval_gramacy2d(X))
        base = StageConfig(theta0=0.7, eta=eta, smooth_k=12)
        return ProblemData(D, G, eval_gramacy2d(G), base, 1.0)
    if problem == "borehole":
        n_train = n_train or 4000
        n_pred = n_pred or 500
        U = lhs(n_train + n_pred, 8, None, seed)
        raw = qmc.scale(U, BOREHOLE_DOMAIN[:, 0], BOREHOLE_DOMAIN[:, 1])
        y = eval_borehole(raw)
        D = DesignSet(U[:n_train], y[:n_train])
        base = StageConfig(theta0="auto", eta=eta, smooth_k=0)
        return ProblemData(D, U[n_train:], y[n_train:], base, "auto")
    raise InvalidInputError(f"unknown problem {problem!r}; choose from {', '.join(PROBLEMS)}")


def method_config(name, data, workers=1):
    if name not in METHODS:
        raise InvalidInputError(f"unknown method {name!r}; choose from {', '.join(METHODS)}")
    crit, n, stages, mle = METHODS[name]
    theta0 = data.base.theta0 if mle else data.theta0_nomle
    return data.base.but(method=crit, n=n, stages=stages, mle=mle, theta0=theta0, workers=workers)


@dataclass
class BenchRow:
    problem: str
    method: str
    rep: str
    seconds: float
    rmse: float
    sqrt_one_minus_nse: float
    coverage95: float
    mean_sd: float
    failures: int


def run_method(name, data, workers=1, seed=0):
    """Emulate one problem replicate with one named method."""
    cfg = method_config(name, data, workers)
    t0 = time.perf_counter()
    try:
        res = emulate(data.grid, data.D, cfg, seed=seed)
    except EmulationFailure as exc:
        res = exc.result
    secs = time.perf_counter() - t0
    return res, score(res, data.truth, secs)


def run_bench(problem, methods, reps=1, seed=0, workers=1, n_train=None, n_pred=None,
              test="lhs", eta=BENCH_NUGGET, timing=True):
    """Metrics rows, one per (rep, method), followed by per-method means.

    With ``timing=False`` seconds are reported as 0 so the output is
    reproducible byte for byte.
    """
    rows = []
    for r in range(reps):
        data = make_problem(problem, seed + r, n_train, n_pred, test, eta)
        for name in methods:
            _, m = run_method(name, data, workers, seed + r)
            rows.append(BenchRow(problem, name, str(r), m.seconds if timing else 0.0, m.rmse,
                                 m.sqrt_one_minus_nse, m.coverage95, m.mean_sd, m.failures))
    for name in methods:
        sel = [row for row in rows if row.method == name]
        rows.append(BenchRow(
            problem, name, "mean",
            float(np.mean([s.seconds for s in sel])),
            float(np.mean([s.rmse for s in sel])),
            float(np.mean([s.sqrt_one_minus_nse for s in sel])),
            float(np.mean([s.coverage95 for s in sel])),
            float(np.mean([s.mean_sd for s in sel])),
            int(sum(s.failures for s in sel)),
        ))
    return rows


def rows_as_dicts(rows):
    return [asdict(r) for r in rows]
