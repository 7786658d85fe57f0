"""Command-line experiment runner.

    ldtlab {simulate,bound,verify,ulam,psi,tails} --config CFG.json [--out PREFIX]
           [--threads N] [--seed S]

Exit codes: 0 success, 1 a domination check failed, 2 configuration error,
3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import bounds as B
from . import montecarlo as MC
from . import operator as Op
from . import truncation as Tr
from .config import ExperimentConfig, load_config
from .errors import LDTLabError
from .systems import center, observable_mean, simulate_batch

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


class ConfigError(Exception):
    pass


def _fmt(v):
    return MC.format_cell(v)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def _require(cfg, *names):
    for name in names:
        if getattr(cfg, name) is None:
            raise ConfigError(f"{name}: required for this subcommand")


def _event(cfg, system, obs):
    about = observable_mean(obs, system) if cfg.event.about == "mean" else float(cfg.event.about)
    return about, cfg.event.margin


# ---------------------------------------------------------------- subcommands

def run_simulate(cfg: ExperimentConfig, threads: int = 1) -> list:
    _require(cfg, "observable", "grid")
    system = cfg.system.build()
    obs = cfg.observable.build(system)
    about, margin = _event(cfg, system, obs)
    est = MC.estimate_grid(system, obs, cfg.grid.n, cfg.grid.eps, cfg.trials, cfg.master_seed,
                           cfg.ci_level, mean=about, margin=margin, threads=threads)
    return [est[(n, float(e))] for n, e in cfg.grid.points()]


SIMULATE_COLUMNS = ("n", "eps", "hits", "trials", "p_hat", "ci_low", "ci_high", "ci_level", "master_seed")


def _simulate_rows(estimates):
    return [(e.n, e.eps, e.hits, e.trials, e.p_hat, e.ci[0], e.ci[1], e.ci_level, e.master_seed)
            for e in estimates]


def derived_constants(cfg: ExperimentConfig) -> dict:
    """Fill sup_phi / sup_psi for bounded_ldt on finite chains from the exact Poisson solve."""
    consts = dict(cfg.bound.constants)
    if cfg.bound.family == "bounded_ldt" and {"sup_phi", "sup_psi"} - consts.keys():
        _require(cfg, "observable")
        system = cfg.system.build()
        phi = center(cfg.observable.build(system), system).values
        op = Op.finite_operator(system)
        sol = Op.solve_poisson_exact(op, phi)
        consts.setdefault("sup_phi", float(np.max(np.abs(phi))))
        consts.setdefault("sup_psi", sol.sup_norm)
    return consts


def bound_function(cfg: ExperimentConfig):
    consts = derived_constants(cfg)
    spec = cfg.bound
    return lambda n, e: B.evaluate(spec.family, n, e, consts, spec.c_scale, spec.two_sided)


BOUND_COLUMNS = ("n", "eps", "raw_value", "value", "valid", "M", "addend1", "addend2")


def run_bound(cfg: ExperimentConfig) -> list:
    _require(cfg, "grid", "bound")
    fn = bound_function(cfg)
    return [fn(n, e) for n, e in cfg.grid.points()]


def _bound_rows(results):
    return [(r.n, r.eps, r.raw_value, r.value, r.valid, r.metadata.get("M"), r.metadata.get("addend1"),
             r.metadata.get("addend2")) for r in results]


def run_verify(cfg: ExperimentConfig, threads: int = 1) -> MC.DominationReport:
    _require(cfg, "observable", "grid", "bound")
    system = cfg.system.build()
    obs = cfg.observable.build(system)
    about, margin = _event(cfg, system, obs)
    grid = cfg.grid.points()
    estimates = None
    if system.is_finite:
        try:
            shifted = [e + margin for e in cfg.grid.eps]
            table = MC.exact_deviation_table(system, obs, cfg.grid.n, shifted, mean=about)
            estimates = {}
            for n, e in grid:
                ex = table[(n, float(e + margin))]
                estimates[(n, float(e))] = MC.ExactDeviation(n, float(e), ex.probability, ex.support_resolution)
        except (MC.NonLattice, MC.LatticeOverflow):
            estimates = None
    if estimates is None:
        estimates = MC.estimate_grid(system, obs, cfg.grid.n, cfg.grid.eps, cfg.trials, cfg.master_seed,
                                     cfg.ci_level, mean=about, margin=margin, threads=threads)
    return MC.domination_study(bound_function(cfg), estimates, grid)


def run_ulam(cfg: ExperimentConfig) -> Op.UlamOperator:
    return Op.markov_operator(cfg.system.build(), cfg.ulam.n_cells)


def run_psi(cfg: ExperimentConfig):
    _require(cfg, "observable")
    system = cfg.system.build()
    op = Op.markov_operator(system, cfg.ulam.n_cells)
    phi = op.discretize(cfg.observable.build(system), system)
    phi = phi - op.mean(phi)
    if cfg.poisson.method == "direct":
        sol = Op.solve_poisson_exact(op, phi, cfg.poisson.tol)
    else:
        sol = Op.solve_poisson(op, phi, cfg.poisson.tol)
    tests = cfg.mixing.test_vectors
    if tests is None:
        tests = [phi] if system.is_finite else Op.haar_vectors(op.size)
    tests = [np.asarray(t, dtype=float) - op.mean(np.asarray(t, dtype=float)) for t in tests]
    prof = Op.mixing_profile(op, tests, cfg.mixing.n_max)
    return op, phi, sol, prof


def run_tails(cfg: ExperimentConfig, threads: int = 1) -> dict:
    _require(cfg, "observable")
    system = cfg.system.build()
    obs = cfg.observable.build(system)
    out = {}
    if not system.is_finite:
        samples = simulate_batch(system, obs, 1, cfg.tails.samples, cfg.master_seed, threads=threads).birkhoff_sums
        out["fit"] = Tr.fit_exponential_tail(samples, cfg.tails.quantile_floor)
    if obs.kind == "log_distance" and obs.scale == 1.0 and obs.shift == 0.0 and not system.is_finite:
        z = obs.z
        C_mu = system.C_mu
        rows = []
        for M in cfg.tails.levels:
            clip = z < np.exp(-M) or 1 - z < np.exp(-M)
            exact, printed = Tr.tail_l2_moment(z, M, C_mu, allow_boundary=True)
            quad = Tr.tail_moment_by_quadrature(M, lambda t: Tr.log_distance_survival(z, t, C_mu))
            rows.append((M, exact, printed, quad, exact > printed, clip))
        out["moments"] = rows
        if system.kernel == "deterministic_map":
            op = Op.ulam_discretize(system, cfg.ulam.n_cells)
            pair = Tr.decompose(obs, system, cfg.tails.control_level)
            tau = op.discretize(pair.tail_part, system)
            n_max = cfg.tails.control_n_max
            out["control"] = (Tr.l2_tail_control(op, tau, n_max, centered=True),
                              Tr.l2_tail_control(op, tau, n_max, centered=False))
    return out


# ---------------------------------------------------------------- entry point

def _diagnose(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        if err["type"] == "extra_forbidden":
            lines.append(f"{loc}: unknown field {err['loc'][-1]!r}")
        else:
            lines.append(f"{loc}: {err['msg']}")
    return "\n".join(lines)


def _load(args) -> ExperimentConfig:
    try:
        cfg = load_config(args.config)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {exc.filename}") from exc
    except ValidationError as exc:
        if any(e["type"] == "json_invalid" for e in exc.errors()):
            text = Path(args.config).read_text()
            try:
                json.loads(text)
            except json.JSONDecodeError as jexc:
                raise ConfigError(f"line {jexc.lineno} column {jexc.colno}: {jexc.msg}") from exc
        raise ConfigError(_diagnose(exc)) from exc
    if args.seed is not None:
        cfg = cfg.model_copy(update={"master_seed": args.seed})
    return cfg


def _prefix(args, cfg) -> str:
    return args.out if args.out is not None else cfg.output


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ldtlab", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [("simulate", "Monte Carlo deviation estimates over the grid"),
                        ("bound", "evaluate a bound family over the grid"),
                        ("verify", "bound-vs-probability domination report"),
                        ("ulam", "export the discretized Markov operator"),
                        ("psi", "Poisson solution and mixing profile"),
                        ("tails", "tail fit, tail moments and L2 tail control")]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="experiment JSON")
        p.add_argument("--out", default=None, help="output path prefix (overrides config 'output')")
        p.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")
        p.add_argument("--seed", type=int, default=None, help="override master_seed")
    return parser


def _dispatch(args, cfg) -> int:
    prefix = _prefix(args, cfg)
    cmd = args.command
    if cmd == "simulate":
        path = write_csv(f"{prefix}_simulate.csv", SIMULATE_COLUMNS, _simulate_rows(run_simulate(cfg, args.threads)))
        print(path)
        return EXIT_OK
    if cmd == "bound":
        path = write_csv(f"{prefix}_bound.csv", BOUND_COLUMNS, _bound_rows(run_bound(cfg)))
        print(path)
        return EXIT_OK
    if cmd == "verify":
        report = run_verify(cfg, args.threads)
        path = Path(f"{prefix}_verify.csv")
        path.parent.mkdir(parents=True, exist_ok=True)
        report.to_csv(path)
        counts = " ".join(f"{k}={v}" for k, v in report.counts.items())
        print(f"{path} {counts}")
        return EXIT_OK if report.ok else EXIT_FAIL
    if cmd == "ulam":
        op = run_ulam(cfg)
        path = Path(f"{prefix}_ulam.csv")
        path.parent.mkdir(parents=True, exist_ok=True)
        op.to_csv(path)
        print(path)
        return EXIT_OK
    if cmd == "psi":
        op, phi, sol, prof = run_psi(cfg)
        qpsi = op.matrix @ sol.psi
        pointwise = np.abs(phi - (sol.psi - qpsi))
        p1 = write_csv(f"{prefix}_psi.csv", ("state", "phi", "psi", "Qpsi", "residual"),
                       [(i, phi[i], sol.psi[i], qpsi[i], pointwise[i]) for i in range(op.size)])
        fit = prof.exponential_fit
        p2 = write_csv(f"{prefix}_mixing.csv", ("n", "rate", "fit"),
                       [(k, r, fit[0] * np.exp(-fit[1] * k) if fit else None)
                        for k, r in enumerate(prof.rates, start=1)])
        print(p1)
        print(p2)
        return EXIT_OK
    if cmd == "tails":
        res = run_tails(cfg, args.threads)
        if "fit" in res:
            f = res["fit"]
            print(write_csv(f"{prefix}_tails.csv",
                            ("samples", "C1", "alpha", "t_min", "t_max", "max_abs_log_residual", "C1_regression"),
                            [(cfg.tails.samples, f.C1, f.alpha, f.fit_range[0], f.fit_range[1],
                              f.max_abs_log_residual, f.C1_regression)]))
        if "moments" in res:
            print(write_csv(f"{prefix}_tail_moments.csv",
                            ("M", "exact", "printed_upper", "quadrature", "exceeds_printed", "boundary_clipped"),
                            res["moments"]))
        if "control" in res:
            cen, unc = res["control"]
            print(write_csv(f"{prefix}_tail_control.csv", ("m", "centered", "uncentered"),
                            [(m + 1, cen.partial_sums[m], unc.partial_sums[m])
                             for m in range(cen.partial_sums.size)]))
        return EXIT_OK
    raise ConfigError(f"unknown command {cmd!r}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = _load(args)
        return _dispatch(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LDTLabError, ValueError, ArithmeticError, KeyError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
