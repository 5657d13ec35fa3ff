"""Command-line interface.

    localgp design  --design D.csv --x 0.5,0.5       ordered local design at one x
    localgp predict --design D.csv --grid G.csv      predictions at every grid row
    localgp bench   borehole --methods alc,alc2,nn   benchmark metrics

Design files have a header row; the response is the column named ``y``
(or the last column), the others are inputs.  Grid files hold inputs
only.  Output is CSV with 17 significant digits.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""
import argparse
import csv
import io
import sys

import numpy as np

from . import bench, kernel
from .config import Method, StageConfig
from .design import DesignSet
from .emulate import emulate, resolve_workers, theta0_auto
from .errors import DesignStallError, EmulationFailure, InvalidInputError, LocalGPError
from .local import run_local_design

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


class DataError(Exception):
    """Unreadable or inconsistent input files."""


class UsageError(Exception):
    """Invalid flag values or combinations."""


def fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def write_csv(path, header, rows):
    """Write rows to ``path`` ('-' for stdout) with a header row."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    text = buf.getvalue()
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def read_table(path):
    """Header and float matrix from a CSV file; errors carry line numbers."""
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        rows = []
        for line in reader:
            if not line or all(not c.strip() for c in line):
                continue
            if len(line) != len(header):
                raise DataError(f"{path}:{reader.line_num}: expected {len(header)} fields, got {len(line)}")
            try:
                vals = [float(c) for c in line]
            except ValueError:
                raise DataError(f"{path}:{reader.line_num}: non-numeric field") from None
            if not all(np.isfinite(vals)):
                raise DataError(f"{path}:{reader.line_num}: non-finite value")
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return header, np.array(rows, dtype=float)


def read_design(path):
    header, M = read_table(path)
    if M.shape[1] < 2:
        raise DataError(f"{path}: need at least one input column and a response column")
    yi = header.index("y") if "y" in header else M.shape[1] - 1
    xi = [i for i in range(M.shape[1]) if i != yi]
    return [header[i] for i in xi], DesignSet(M[:, xi], M[:, yi])


def parse_point(text, p):
    try:
        x = np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise UsageError(f"cannot parse --x {text!r}") from None
    if x.size != p:
        raise DataError(f"--x has {x.size} coordinates, design has {p} inputs")
    if not np.all(np.isfinite(x)):
        raise UsageError("--x must be finite")
    return x


def positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def theta0_arg(s):
    if s == "auto":
        return s
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError("must be 'auto' or a positive number") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def add_design_flags(p):
    p.add_argument("--start", type=positive_int, default=6, help="initial nearest neighbours n0")
    p.add_argument("--end", type=positive_int, default=50, help="final local design size n")
    p.add_argument("--close", type=positive_int, default=1000, help="candidate set size")
    p.add_argument("--nugget", type=float, default=kernel.DEFAULT_NUGGET)
    p.add_argument("--method", choices=[m.value for m in Method], default="alc")
    p.add_argument("--theta0", type=theta0_arg, default="auto",
                   help="starting lengthscale or 'auto' (quantile of squared distances)")
    p.add_argument("--quantile", type=float, default=0.1, help="quantile used by --theta0 auto")
    p.add_argument("--seed", type=int, default=0)


def build_parser():
    ap = argparse.ArgumentParser(prog="localgp", description="Local approximate GP emulation.")
    sub = ap.add_subparsers(dest="command", required=True)

    d = sub.add_parser("design", help="trace the local design at one location")
    d.add_argument("--design", required=True, help="design CSV")
    d.add_argument("--x", required=True, help="location, comma separated (use --x=-1,0 for negatives)")
    d.add_argument("--out", default="-")
    add_design_flags(d)

    p = sub.add_parser("predict", help="predict at every row of a grid")
    p.add_argument("--design", required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--out", default="-")
    add_design_flags(p)
    p.add_argument("--stages", type=positive_int, default=2)
    p.add_argument("--no-mle", action="store_true", help="keep theta0, skip local MLE")
    p.add_argument("--smooth-k", type=int, default=12, help="neighbours for smoothing (0 or 1: off)")
    p.add_argument("--smooth-bandwidth", type=float, default=None)
    p.add_argument("--smooth-final", action="store_true", help="also smooth before final prediction")
    p.add_argument("--refit-after-smooth", action="store_true",
                   help="re-run selection at the smoothed lengthscale before predicting")
    p.add_argument("--threads", type=positive_int, default=None,
                   help="worker processes (default: LOCALGP_WORKERS or 1)")

    b = sub.add_parser("bench", help="run a benchmark protocol")
    b.add_argument("problem", choices=bench.PROBLEMS)
    b.add_argument("--methods", default="alc,alc2,nn",
                   help="comma list from: " + ",".join(bench.METHODS))
    b.add_argument("--reps", type=positive_int, default=1)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--n-train", type=positive_int, default=None,
                   help="training size (gramacy2d: grid points per side)")
    b.add_argument("--n-pred", type=positive_int, default=None)
    b.add_argument("--test", choices=["lhs", "grid"], default="lhs")
    b.add_argument("--nugget", type=float, default=bench.BENCH_NUGGET)
    b.add_argument("--threads", type=positive_int, default=None)
    b.add_argument("--no-timing", action="store_true", help="report 0 seconds (byte-stable output)")
    b.add_argument("--out", default="-")
    return ap


def stage_config(args, D, **extra):
    close = min(args.close, D.N)
    if args.end > D.N:
        raise DataError(f"--end {args.end} exceeds the {D.N} design rows")
    if not args.start <= args.end <= close:
        raise UsageError(f"need --start <= --end <= --close, got {args.start}, {args.end}, {args.close}")
    if args.nugget < 0:
        raise UsageError("--nugget must be non-negative")
    if args.method == "mspe" and args.start < 3:
        raise UsageError("--method mspe needs --start >= 3")
    try:
        return StageConfig(method=args.method, n0=args.start, n=args.end, close=close,
                           theta0=args.theta0, theta_quantile=args.quantile, eta=args.nugget, **extra)
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from None


def cmd_design(args):
    names, D = read_design(args.design)
    x = parse_point(args.x, D.p)
    cfg = stage_config(args, D)
    theta = theta0_auto(D, cfg.theta_quantile, args.seed) if cfg.theta0 == "auto" else cfg.theta0
    header = ["step", "row_id"] + names + ["criterion_value", "vx_after"]
    try:
        _, records = run_local_design(x, D, cfg, kernel.Hyper(theta, cfg.eta))
    except DesignStallError as exc:
        rows = [[i + 1, r] + list(D.X[r]) + [float("nan"), float("nan")] for i, r in enumerate(exc.trace)]
        write_csv(args.out, header, rows)
        print(f"localgp: design stalled: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    rows = [[i + 1, r.row] + list(D.X[r.row]) + [r.value, r.vx_after] for i, r in enumerate(records)]
    write_csv(args.out, header, rows)
    return EXIT_OK


def cmd_predict(args):
    names, D = read_design(args.design)
    gheader, G = read_table(args.grid)
    if G.shape[1] != D.p:
        raise DataError(f"{args.grid}: {G.shape[1]} columns, design has {D.p} inputs")
    if args.smooth_k < 0:
        raise UsageError("--smooth-k must be non-negative")
    cfg = stage_config(args, D, stages=args.stages, mle=not args.no_mle, smooth_k=args.smooth_k,
                       smooth_bandwidth=args.smooth_bandwidth, smooth_final=args.smooth_final,
                       refit_after_smooth=args.refit_after_smooth,
                       workers=resolve_workers(args.threads))
    code = EXIT_OK
    try:
        res = emulate(G, D, cfg, seed=args.seed)
    except EmulationFailure as exc:
        res = exc.result
        print(f"localgp: {exc}", file=sys.stderr)
        code = EXIT_NUMERICAL
    header = gheader + ["mean", "scale2", "dof", "variance", "theta_hat", "n_used", "status"]
    rows = [list(G[i]) + [res.mean[i], res.scale2[i], int(res.dof[i]), res.variance[i],
                          res.theta_hat[i], int(res.n_used[i]), res.status[i]]
            for i in range(len(res))]
    write_csv(args.out, header, rows)
    return code


def cmd_bench(args):
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in bench.METHODS]
    if bad or not methods:
        raise UsageError(f"unknown methods {bad}; choose from {', '.join(bench.METHODS)}")
    rows = bench.run_bench(args.problem, methods, args.reps, args.seed, resolve_workers(args.threads),
                           args.n_train, args.n_pred, args.test, args.nugget, timing=not args.no_timing)
    header = list(bench.BenchRow.__dataclass_fields__)
    write_csv(args.out, header, [list(bench.rows_as_dicts([r])[0].values()) for r in rows])
    return EXIT_OK


COMMANDS = {"design": cmd_design, "predict": cmd_predict, "bench": cmd_bench}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on usage errors
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"localgp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, InvalidInputError) as exc:
        print(f"localgp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except LocalGPError as exc:
        print(f"localgp: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
