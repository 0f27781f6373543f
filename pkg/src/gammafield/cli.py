"""Chi-squared random fields: Laguerre ranks, Riesz spectra, limit laws and Monte Carlo checks.

Exit codes: 0 success, 2 configuration error, 3 numerical error.
Numeric CSV output uses ``%.17g`` so runs with a fixed seed are byte-identical.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import sys
from typing import Iterable, List, Optional, Sequence, TextIO

import numpy as np

from . import __version__
from .domain import Ball, Rectangle, cyclic_integral, interval
from .errors import ConfigurationError, NumericalError
from .field_sim import GaussianFieldSampler, FieldSample, save_sample
from .gamma_model import laguerre_coeffs, laguerre_rank
from .harness import (build_function, ks_compare, load_config,
                      reduction_residual, variance_scaling, write_records)
from .limit_dist import (Rank1Limit, Rank2Limit, charfn_rank1, levy_asymptote, levy_density,
                         pdf_cdf, sample_rank1, sample_rank2)
from .spectral import nystrom_eigs, rank2_spectrum

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigurationError(message)


def _fmt(x) -> str:
    return "%.17g" % x


def _write_csv(out: TextIO, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    out.write(",".join(header) + "\n")
    for row in rows:
        out.write(",".join(v if isinstance(v, str) else _fmt(v) for v in row) + "\n")


def _open_out(path: Optional[str]):
    if path:
        return open(path, "w", newline="")
    return contextlib.nullcontext(sys.stdout)


def _json_arg(text: str, what: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{what} is not valid JSON: {exc}") from exc


def _domain(args):
    if args.domain == "interval":
        return interval(args.half_width)
    if args.domain == "ball":
        return Ball(args.radius, args.dim)
    if args.bounds is None:
        raise ConfigurationError("--bounds is required for a rectangle")
    return Rectangle(_json_arg(args.bounds, "--bounds"))


def _add_domain(p):
    p.add_argument("--domain", choices=("interval", "ball", "rectangle"), default="interval")
    p.add_argument("--half-width", type=float, default=1.0)
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--bounds", help='JSON list of [lo, hi] pairs')


def _add_rank1(p):
    _add_domain(p)
    p.add_argument("--alpha", type=float, default=0.25)
    p.add_argument("--r", type=int, default=2)
    p.add_argument("--n", type=int, default=512, help="operator resolution")
    p.add_argument("--c1", type=float, default=1.0, help="leading-coefficient multiplier")


def _rank1(args) -> Rank1Limit:
    spec = nystrom_eigs(_domain(args), args.alpha, args.n)
    return Rank1Limit.from_spectrum(spec, args.r, args.c1)


def _add_output(p):
    p.add_argument("--out", help="output path (default: standard output)")


def cmd_rank(args):
    F = build_function(_json_arg(args.F, "--F"), 2 * args.beta if args.r is None else args.r)
    res = laguerre_rank(F, args.beta, args.tol, args.q_max)
    print(json.dumps({"rank": res.rank, "leading_coeff": res.leading_coeff,
                      "coeffs": [float(c) for c in res.coeffs], "norm": res.norm}))


def cmd_coeffs(args):
    F = build_function(_json_arg(args.F, "--F"), 2 * args.beta if args.r is None else args.r)
    c = laguerre_coeffs(F, args.beta, args.q_max)
    with _open_out(args.out) as out:
        _write_csv(out, ["k", "coeff"], ((str(k), v) for k, v in enumerate(c)))


def cmd_simulate(args):
    cfg = load_config(args.config)
    grid = cfg.grid(args.T)
    sampler = GaussianFieldSampler(grid, cfg.model)
    seed = cfg.seed if args.seed is None else args.seed
    vals = sampler.sample(cfg.r, seed)
    sample = FieldSample(grid, vals, seed, cfg.r, "gaussian", None, cfg.model)
    bin_path, meta_path = save_sample(sample, args.out)
    print(json.dumps({"method": sampler.method, "cells": grid.n_active,
                      "data": str(bin_path), "meta": str(meta_path)}))


def cmd_eigs(args):
    spec = nystrom_eigs(_domain(args), args.alpha, args.n)
    lam = spec.eigenvalues
    with _open_out(args.out) as out:
        _write_csv(out, ["index", "eigenvalue", "cumulative_l2"],
                   ((str(i + 1), v, c) for i, (v, c) in enumerate(zip(lam, np.cumsum(lam ** 2)))))


def cmd_charfn(args):
    dist = _rank1(args)
    z = np.asarray(args.z, float)
    phi = np.atleast_1d(charfn_rank1(dist, z))
    with _open_out(args.out) as out:
        _write_csv(out, ["z", "re", "im"], ((a, b.real, b.imag) for a, b in zip(z, phi)))


def cmd_density(args):
    dist = _rank1(args)
    x = None
    if args.x_min is not None or args.x_max is not None:
        if args.x_min is None or args.x_max is None:
            raise ConfigurationError("--x-min and --x-max go together")
        x = np.linspace(args.x_min, args.x_max, args.points)
    xs, pdf, cdf = pdf_cdf(dist, x, n_points=args.points)
    with _open_out(args.out) as out:
        _write_csv(out, ["x", "pdf", "cdf"], zip(xs, pdf, cdf))


def cmd_sample_limit(args):
    if args.rank == 1:
        res = sample_rank1(_rank1(args), args.count, args.seed, args.n_trunc)
    else:
        two = rank2_spectrum(_domain(args), args.alpha, args.M, N=args.n)
        trunc = None
        if args.n_trunc is not None or args.p_max is not None:
            trunc = (args.n_trunc or two.mu.size, args.p_max or args.M)
        res = sample_rank2(Rank2Limit.from_spectrum(two, args.r), args.count, args.seed, trunc)
    for note in res.warnings:
        print(f"warning: {note}", file=sys.stderr)
    with _open_out(args.out) as out:
        _write_csv(out, ["value"], ((v,) for v in res.values))


def cmd_levy(args):
    dist = _rank1(args)
    u = np.asarray(args.u, float)
    q = np.atleast_1d(levy_density(dist, u))
    small = np.atleast_1d(levy_asymptote(dist, u, "small_u"))
    large = np.atleast_1d(levy_asymptote(dist, u, "large_u"))
    with _open_out(args.out) as out:
        _write_csv(out, ["u", "q", "small_u", "large_u"], zip(u, q, small, large))


def cmd_scaling(args):
    res = variance_scaling(load_config(args.config))
    with _open_out(args.out) as out:
        _write_csv(out, ["T", "variance"], zip(res.T, res.variances))
    print(json.dumps({"slope": res.slope, "stderr": res.stderr, "target": res.target}),
          file=sys.stderr if not args.out else sys.stdout)


def cmd_reduce(args):
    res = reduction_residual(load_config(args.config))
    with _open_out(args.out) as out:
        _write_csv(out, ["T", "ratio"], zip(res.T, res.ratios))
    if args.records:
        write_records(res.records, args.records)


def cmd_cyclic(args):
    res = cyclic_integral(_domain(args), args.alpha, args.m, seed=args.seed)
    print(json.dumps({"value": res.value, "stderr": res.stderr, "method": res.method}))


def _read_column(path: str) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", skiprows=1, usecols=0, ndmin=1)
    except (OSError, ValueError) as exc:
        raise ConfigurationError(f"cannot read samples from {path}: {exc}") from exc


def cmd_ks(args):
    res = ks_compare(_read_column(args.a), _read_column(args.b))
    print(json.dumps({"statistic": res.statistic, "pvalue": res.pvalue}))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gammafield", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, fn, helptext in (("rank", cmd_rank, "Laguerre rank of F"),
                               ("coeffs", cmd_coeffs, "Laguerre coefficients of F")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--F", required=True, help='JSON, e.g. {"name": "power", "params": {"p": 2}}')
        p.add_argument("--beta", type=float, required=True)
        p.add_argument("--r", type=int, help="degrees of freedom for r-dependent F (default 2 beta)")
        p.add_argument("--q-max", type=int, default=8)
        p.add_argument("--tol", type=float, default=1e-6)
        _add_output(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("simulate", help="Gaussian field copies on the grid over D(T)")
    p.add_argument("--config", required=True)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output stem (writes .bin and .json)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("eigs", help="eigenvalues of the Riesz-kernel operator")
    _add_domain(p)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--n", type=int, default=512)
    _add_output(p)
    p.set_defaults(func=cmd_eigs)

    p = sub.add_parser("charfn", help="rank-1 limit characteristic function")
    _add_rank1(p)
    p.add_argument("--z", type=float, nargs="+", required=True)
    _add_output(p)
    p.set_defaults(func=cmd_charfn)

    p = sub.add_parser("density", help="rank-1 limit density and CDF")
    _add_rank1(p)
    p.add_argument("--x-min", type=float)
    p.add_argument("--x-max", type=float)
    p.add_argument("--points", type=int, default=801)
    _add_output(p)
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("sample-limit", help="draws from the rank-1 or rank-2 limit")
    _add_rank1(p)
    p.add_argument("--rank", type=int, choices=(1, 2), default=1)
    p.add_argument("--count", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-trunc", type=int)
    p.add_argument("--p-max", type=int)
    p.add_argument("--M", type=int, default=64, help="inner basis size for rank 2")
    _add_output(p)
    p.set_defaults(func=cmd_sample_limit)

    p = sub.add_parser("levy", help="Levy density and its asymptotes")
    _add_rank1(p)
    p.add_argument("--u", type=float, nargs="+", required=True)
    _add_output(p)
    p.set_defaults(func=cmd_levy)

    p = sub.add_parser("cyclic", help="cyclic Riesz integral c_m")
    _add_domain(p)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_cyclic)

    for name, fn, helptext in (("scaling", cmd_scaling, "variance growth exponent"),
                               ("reduce", cmd_reduce, "reduction-principle residual ratios")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True)
        _add_output(p)
        if name == "reduce":
            p.add_argument("--records", help="per-replicate CSV")
        p.set_defaults(func=fn)

    p = sub.add_parser("ks", help="two-sample Kolmogorov-Smirnov comparison of CSV columns")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.set_defaults(func=cmd_ks)
    return parser


def run_cli(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
    except ConfigurationError as exc:
        print(f"gammafield: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"gammafield: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main() -> None:
    try:
        code = run_cli()
        sys.stdout.flush()
    except BrokenPipeError:
        # downstream closed early (e.g. piped into head)
        sys.stdout = None
        code = EXIT_OK
    sys.exit(code)
