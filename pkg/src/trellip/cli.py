"""Command-line front end: ``trellip {sample,acf,moments,fit-scl}``.

Exit codes: 0 on success, 2 on usage errors, 1 when a computation fails
(the typed error name is printed).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time

import numpy as np

from . import dgf, scl
from .exceptions import InvalidParameterError, TrellipError
from .moments import mc_moments
from .rng import DEFAULT_SEED, child_seeds, random_seed
from .sampler import TruncEllipticalSpec, acf, slice_gibbs_sample

log = logging.getLogger("trellip")

NEEDS_NU = {"t", "pe", "pvii", "slash", "cn", "kotz"}
# flags whose values may start with '-' (negative numbers in a comma list)
VALUE_FLAGS = {"--mu", "--sigma", "--lower", "--upper", "--nu", "--n-mc"}


class UsageError(Exception):
    pass


def _fmt(compact):
    return "%.6g" if compact else "%.17g"


def _parse_list(text, flag):
    """Inline comma list or path to a CSV file of numbers."""
    if text is None:
        return None
    if os.path.isfile(text):
        with open(text, newline="") as fh:
            cells = [c.strip() for row in csv.reader(fh) for c in row if c.strip()]
    else:
        cells = [c.strip() for c in text.split(",")]
    try:
        return np.array([float(c) for c in cells])
    except ValueError as exc:
        raise UsageError(f"{flag}: cannot parse {text!r} as numbers") from exc


def _infer_p(args):
    for flag, val in (("--lower", args.lower), ("--upper", args.upper), ("--mu", args.mu)):
        if val is not None:
            return val.shape[0]
    if args.sigma is not None:
        p = int(round(math.sqrt(args.sigma.shape[0])))
        if p * p == args.sigma.shape[0]:
            return p
    raise UsageError("cannot infer the dimension: give --lower, --upper, --mu or --sigma")


def _build_spec(args) -> TruncEllipticalSpec:
    for name in ("mu", "sigma", "lower", "upper", "nu"):
        setattr(args, name, _parse_list(getattr(args, name), "--" + name))
    dist = args.dist.lower()
    if dist in NEEDS_NU and args.nu is None:
        raise UsageError(f"--nu is required for --dist {args.dist}")
    p = _infer_p(args)
    for flag, val in (("--mu", args.mu), ("--lower", args.lower), ("--upper", args.upper)):
        if val is not None and val.shape[0] != p:
            raise UsageError(f"{flag} has {val.shape[0]} values, expected {p}")
    sigma = np.eye(p)
    if args.sigma is not None:
        if args.sigma.shape[0] != p * p:
            raise UsageError(f"--sigma has {args.sigma.shape[0]} values, expected {p * p} (row-major)")
        sigma = args.sigma.reshape(p, p)
        tol = 1e-12 * max(1.0, float(np.max(np.abs(sigma))))
        if np.max(np.abs(sigma - sigma.T)) > tol:
            raise UsageError("--sigma is not symmetric")
        sigma = 0.5 * (sigma + sigma.T)
    try:
        fam = dgf.from_name(dist, None if args.nu is None else tuple(args.nu), p)
    except InvalidParameterError as exc:
        raise UsageError(f"--dist/--nu: {exc}") from exc
    lower = np.full(p, -np.inf) if args.lower is None else args.lower
    upper = np.full(p, np.inf) if args.upper is None else args.upper
    mu = np.zeros(p) if args.mu is None else args.mu
    try:
        return TruncEllipticalSpec(mu, sigma, lower, upper, fam)
    except InvalidParameterError as exc:
        raise UsageError(str(exc)) from exc


def _seed(text):
    if text == "random":
        return random_seed()
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer or 'random', got {text!r}")


def _open_out(path):
    return sys.stdout if path in (None, "-") else open(path, "w", newline="")


def _write_csv(path, header, rows, fmt):
    fh = _open_out(path)
    try:
        np.savetxt(fh, rows, fmt=fmt, delimiter=",", header=",".join(header), comments="")
    finally:
        if fh is not sys.stdout:
            fh.close()


def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _write_json(path, payload):
    text = json.dumps(_clean(payload), indent=2) + "\n"
    fh = _open_out(path)
    try:
        fh.write(text)
    finally:
        if fh is not sys.stdout:
            fh.close()


def cmd_sample(args):
    spec = _build_spec(args)
    seeds = [args.seed] if args.chains == 1 else child_seeds(args.seed, args.chains)
    chains = [slice_gibbs_sample(spec, args.n, args.burn_in, args.thinning, s) for s in seeds]
    x = np.vstack([c.samples for c in chains])
    log.info("seed %d, %d rows", args.seed, x.shape[0])
    _write_csv(args.out, [f"x{i + 1}" for i in range(spec.p)], x, _fmt(args.format == "compact"))


def cmd_acf(args):
    try:
        x = np.loadtxt(args.inp, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise UsageError(f"--in: cannot read {args.inp}: {exc}") from exc
    r = acf(x, args.max_lag)
    lags = np.arange(1, args.max_lag + 1)[:, None]
    header = ["lag"] + [f"x{i + 1}" for i in range(x.shape[1])]
    _write_csv(args.out, header, np.hstack([lags, r]), _fmt(args.format == "compact"))


def cmd_moments(args):
    spec = _build_spec(args)
    est = mc_moments(spec, args.n, args.burn_in, args.thinning, args.seed, args.route,
                     args.chains, args.allow_divergent)
    _write_json(args.out, est.to_dict())


def _read_scl_csv(path, covariates, log_scale):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise UsageError(f"--data: {exc}") from exc
    need = ["x", "y", "v", "lower", "upper", "cens"] + list(covariates)
    if not rows or any(k not in rows[0] for k in need):
        raise UsageError(f"--data must have columns {','.join(need)}")

    def num(cell, empty):
        cell = (cell or "").strip()
        return empty if cell in ("", "NA", "nan", "NaN") else float(cell)

    try:
        coords = np.array([[float(r["x"]), float(r["y"])] for r in rows])
        cens = np.array([int(float(r["cens"])) for r in rows]).astype(bool)
        v = np.array([num(r["v"], np.nan) for r in rows])
        lo = np.array([num(r["lower"], -np.inf) for r in rows])
        up = np.array([num(r["upper"], np.inf) for r in rows])
        extra = np.array([[float(r[c]) for c in covariates] for r in rows]).reshape(len(rows), -1)
    except ValueError as exc:
        raise UsageError(f"--data: {exc}") from exc
    if log_scale:
        with np.errstate(divide="ignore"):
            v, lo, up = np.log(v), np.log(lo), np.log(up)
    design = np.hstack([np.ones((len(rows), 1)), extra])
    try:
        return scl.SclDataset(coords, design, lo, up, np.where(cens, np.nan, v), cens)
    except InvalidParameterError as exc:
        raise UsageError(f"--data: {exc}") from exc


def _n_mc(text):
    try:
        if ":" in text:
            lo, hi = text.split(":")
            return int(lo), int(hi)
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or START:END, got {text!r}")


def cmd_fit_scl(args):
    covs = [c for c in (args.covariates or "").split(",") if c]
    data = _read_scl_csv(args.data, covs, args.log)

    def progress(k, params):
        log.info("iter %d %s", k + 1, params.to_dict())

    fit = scl.fit_mcem(data, None, args.iters, args.n_mc, args.seed, args.burn_in,
                       args.thinning, args.mc_thinning, args.loglik_mc, progress)
    out = fit.to_dict()
    out["seed"] = args.seed
    _write_json(args.out, out)
    if args.trace:
        _write_csv(args.trace, ["iter"] + list(fit.trace_columns),
                   np.hstack([np.arange(fit.trace.shape[0])[:, None], fit.trace]), "%.17g")


def _add_dist(p):
    g = p.add_argument_group("distribution")
    g.add_argument("--dist", default="normal",
                   help="normal, t, pe, pvii, slash, cn or kotz (default: normal)")
    g.add_argument("--nu", help="family parameters: scalar for t/pe/slash, m,nu for pvii, "
                                "nu,rho for cn, r,s,N for kotz")
    g.add_argument("--mu", help="location, comma list or CSV file (default: 0)")
    g.add_argument("--sigma", help="scale matrix, row-major p*p values or CSV file (default: I)")
    g.add_argument("--lower", help="lower bounds (-inf allowed), comma list or CSV file")
    g.add_argument("--upper", help="upper bounds (inf allowed), comma list or CSV file")


def _add_chain(p, n_default, thin_default):
    p.add_argument("--n", type=int, default=n_default, help=f"kept draws (default: {n_default})")
    p.add_argument("--burn-in", type=int, default=0, help="discarded iterations (default: 0)")
    p.add_argument("--thinning", type=int, default=thin_default,
                   help=f"keep every k-th iteration (default: {thin_default})")


def _add_seed(p):
    p.add_argument("--seed", type=_seed, default=DEFAULT_SEED,
                   help=f"integer or 'random' (default: {DEFAULT_SEED})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trellip",
                                     description="Truncated elliptical sampling and moments.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="draw from a truncated elliptical distribution")
    _add_dist(p)
    _add_chain(p, 1000, 1)
    _add_seed(p)
    p.add_argument("--chains", type=int, default=1, help="independent chains, concatenated")
    p.add_argument("--out", help="output CSV (default: stdout)")
    p.add_argument("--format", choices=("full", "compact"), default="full")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("acf", help="autocorrelation of a sample CSV")
    p.add_argument("--in", dest="inp", required=True, help="CSV written by 'sample'")
    p.add_argument("--max-lag", type=int, default=50)
    p.add_argument("--out", help="output CSV (default: stdout)")
    p.add_argument("--format", choices=("full", "compact"), default="full")
    p.set_defaults(func=cmd_acf)

    p = sub.add_parser("moments", help="truncated mean and covariance by Monte Carlo")
    _add_dist(p)
    _add_chain(p, 10_000, 3)
    _add_seed(p)
    p.add_argument("--route", choices=("partitioned", "full"), default="partitioned")
    p.add_argument("--chains", type=int, default=1, help="independent chains, averaged")
    p.add_argument("--allow-divergent", action="store_true",
                   help="compute even if a moment does not exist (marked unreliable)")
    p.add_argument("--out", help="output JSON (default: stdout)")
    p.set_defaults(func=cmd_moments)

    p = sub.add_parser("fit-scl", help="MCEM fit of a censored spatial regression")
    p.add_argument("--data", required=True, help="CSV with columns x,y,v,lower,upper,cens")
    p.add_argument("--corr", choices=("exp",), default="exp")
    p.add_argument("--covariates", help="extra design columns (an intercept is always included)")
    p.add_argument("--log", action="store_true", help="model log(v) with log-transformed bounds")
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--n-mc", type=_n_mc, default=1000, help="N or START:END (linear increase)")
    p.add_argument("--burn-in", type=int, default=None,
                   help="iterations dropped before averaging (default: half)")
    p.add_argument("--thinning", type=int, default=3)
    p.add_argument("--mc-thinning", type=int, default=3, help="sampler thinning in the E-step")
    p.add_argument("--loglik-mc", type=int, default=10_000)
    _add_seed(p)
    p.add_argument("--out", help="output JSON (default: stdout)")
    p.add_argument("--trace", help="per-iteration parameter CSV")
    p.set_defaults(func=cmd_fit_scl)
    return parser


def _join_values(argv):
    """Turn ``--lower -2,-2`` into ``--lower=-2,-2`` so argparse keeps negatives."""
    out, i = [], 0
    while i < len(argv):
        tok = argv[i]
        if tok in VALUE_FLAGS and i + 1 < len(argv):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
        else:
            out.append(tok)
            i += 1
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(_join_values(argv))
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(message)s")
    start = time.perf_counter()
    try:
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"trellip: error: {exc}", file=sys.stderr)
        return 2
    except TrellipError as exc:
        print(f"trellip: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    log.info("done in %.2f s", time.perf_counter() - start)
    return 0


if __name__ == "__main__":
    sys.exit(main())
