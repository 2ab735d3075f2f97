"""Command-line entry point.

Exit codes: 0 success, 1 failed checks, 2 gate or contraction termination,
3 configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .config import ConfigError, format_config, load_config

EXIT_OK, EXIT_CHECK, EXIT_GATE, EXIT_CONFIG = 0, 1, 2, 3


# -- invariant suite -----------------------------------------------------------------------

def seed_check(cfg) -> list:
    """Fast invariant checks on the configured material; ``(name, value, tol)`` triples."""
    from . import rhs
    from .constitutive import equilibrium_residual
    from .diagnostics import jump_residuals
    from .driver import RunConfig, Stepper
    from .geometry import extend_height
    from .grid import Grid, equilibrium_state
    from .transport import lions_extend

    mat = cfg.material
    g = Grid(N=cfg.grid.N, M_tan=16, M_nrm=16, L_tan=cfg.grid.L_tan, L_nrm=cfg.grid.L_nrm,
             dt=cfg.grid.dt)
    rng = np.random.default_rng(0)
    out = [("equilibrium residual", abs(equilibrium_residual(mat)), 1e-12)]
    st = equilibrium_state(g, mat.rho_star_plus, mat.theta_star)
    eh = extend_height(g, st.h)
    out.append(("equilibrium right-hand sides", rhs.assemble(mat, g, st, eh).max_abs(), 1e-12))
    comp = rhs.compatibility_residual(mat, g, st, eh)
    out.append(("equilibrium compatibility", max(v["sup"] for v in comp.values()), 1e-12))
    jr = jump_residuals(mat, g, st, 32)
    out.append(("equilibrium jump residuals", max(v["sup"] for v in jr.values()), 1e-12))
    xs = g.tan_coords()
    eh = extend_height(g, 0.05 * np.cos(xs[0]) + 0.02 * np.sin(2 * xs[0]))
    err = 0.0
    for side in ("plus", "minus"):
        prod = np.einsum("ab...,bc...->ac...", eh.Q(side), eh.Q_inv(side))
        eye = np.eye(g.N).reshape((g.N, g.N) + (1,) * (prod.ndim - 2))
        err = max(err, float(np.max(np.abs(prod - eye))))
    out.append(("Q Q^-1 = I", err, 1e-13))
    GN, GN1, lap = rng.standard_normal((3, 32))
    Tm, Tp = rhs.traction_split(mat, GN, GN1, lap)
    back = max(np.max(np.abs(Tm - Tp - mat.sigma * lap - GN)),
               np.max(np.abs(Tm / mat.rho_star_minus - Tp / mat.rho_star_plus - GN1)))
    out.append(("traction split round trip", float(back), 1e-13))
    rho_p = mat.rho_star_plus * (1 + 0.1 * rng.random(32))
    un_p = rng.standard_normal(32)
    inv = 1 / mat.rho_star_minus - 1 / rho_p
    un_m = un_p + 0.3 * rng.standard_normal(32)
    j1 = rhs.phase_flux_from_normal_jump(un_m - un_p, inv)
    j2 = rhs.phase_flux_from_mass_balance(mat.rho_star_minus, rho_p, un_m, un_p)
    out.append(("phase flux dual formulas", float(np.max(np.abs(j1 - j2))), 1e-12))
    z = g.z_upper
    f = np.exp(-z) * np.cos(z)
    ext = lions_extend(g, np.broadcast_to(f, g.shape))[0]
    M, dz = g.M_nrm, g.dz
    # second-order one-sided slopes from each side of the interface node
    slope_lo = (3 * ext[M] - 4 * ext[M - 1] + ext[M - 2]) / (2 * dz)
    slope_hi = (-3 * ext[M] + 4 * ext[M + 1] - ext[M + 2]) / (2 * dz)
    out.append(("extension C1 match", float(abs(slope_hi - slope_lo)), 10 * dz ** 2))

    eq_cfg = RunConfig(grid=g, material=mat)
    stepper = Stepper(eq_cfg)
    st0 = equilibrium_state(g, mat.rho_star_plus, mat.theta_star)
    new, _ = stepper.advance(st0, g.dt)
    drift = max(float(np.max(np.abs(getattr(new, k) - getattr(st0, k))))
                for k in ("u_plus", "u_minus", "theta_plus", "theta_minus", "h", "rho_full"))
    out.append(("equilibrium fixed point", drift, 1e-12))
    return out


# -- subcommands ---------------------------------------------------------------------------

def _out_dir(args, default):
    d = args.out or default
    os.makedirs(d, exist_ok=True)
    return d


def cmd_check_model(args, cfg):
    from .constitutive import equilibrium_residual, thermo_consistency, validate

    rep = validate(cfg.material)
    for line in rep.lines():
        print(line)
    cons = thermo_consistency(cfg.material)
    print(f"thermodynamic consistency: {cons}")
    eq = equilibrium_residual(cfg.material)
    print(f"equilibrium residual: {eq:.3e}")
    return EXIT_OK if rep.passed and abs(eq) <= 1e-12 else EXIT_CONFIG


def cmd_simulate(args, cfg):
    from .driver import simulate

    out = _out_dir(args, "run")
    res = simulate(cfg, out_dir=out, keep_states=False)
    term = res.termination
    print(f"termination: {term.reason} at t={term.t:.6g} (step {term.step}): {term.message}")
    return EXIT_OK if term.completed else EXIT_GATE


def cmd_solve_linear(args, cfg):
    """One implicit Euler step of the linear problems from the configured initial data."""
    from .driver import initialize
    from .linear import HeatSolver, StokesData, StokesSolver

    st = initialize(cfg)
    g, mat = cfg.grid, cfg.material
    data = StokesData.zeros(g)
    sol = StokesSolver(mat, g).time_step(st.u_plus, st.u_minus, st.h, data, g.dt)
    ts = mat.theta_star
    z = np.zeros(g.shape)
    heat = HeatSolver(mat, g).time_step(st.theta_minus - ts, st.theta_plus - ts, z, z,
                                        np.zeros(g.tan_shape), g.dt)
    out = _out_dir(args, "linear")
    report = {"stokes_residual": sol.residual, "heat_residual": heat.residual,
              "heat_flux_row_residual": heat.flux_row_residual,
              "h_sup": float(np.max(np.abs(sol.H))),
              "u_plus_sup": float(np.max(np.abs(sol.u_plus)))}
    with open(os.path.join(out, "linear.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    for k, v in report.items():
        print(f"{k}: {v:.3e}")
    return EXIT_OK


def cmd_resolvent_sweep(args, cfg):
    from .linear import resolvent_sweep, write_sweep_csv

    modes = [int(m) for m in args.modes.split(",")] if args.modes else None
    recs = resolvent_sweep(cfg.material, cfg.grid, args.lambda0, args.eps_angle,
                           args.decades, args.n_mag, modes=modes)
    out = _out_dir(args, "sweep")
    write_sweep_csv(os.path.join(out, "sweep.csv"), recs)
    worst = max(r.condition for r in recs)
    print(f"{len(recs)} mode blocks, max condition number {worst:.3e}, "
          f"max residual {max(r.residual for r in recs):.3e}")
    return EXIT_OK


def cmd_diagnose(args, cfg):
    import glob

    from . import diagnostics
    from .driver import load_snapshot

    run = args.run or args.out
    if not run:
        raise ConfigError("diagnose needs --run DIR")
    snaps = sorted(glob.glob(os.path.join(run, "snapshots", "*.bin")))
    if not snaps:
        print(f"no snapshots in {run}")
        return EXIT_CHECK
    states = [load_snapshot(p, cfg.grid) for p in snaps]
    for a, b in zip(states[:-1], states[1:]):
        b.dh_dt = (b.h - a.h) / max(b.t - a.t, 1e-300)
    states[0].dh_dt = states[1].dh_dt if len(states) > 1 else np.zeros(cfg.grid.tan_shape)
    rep = diagnostics.run_report(cfg.material, cfg.grid, states, cfg.rhs_options)
    diagnostics.write_report_csv(os.path.join(run, "diagnostics.csv"), rep)
    summary = diagnostics.summarize(rep)
    with open(os.path.join(run, "diagnostics_summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    for k, v in sorted(summary.items()):
        print(f"{k}: {v:.3e}")
    return EXIT_OK


def cmd_plot(args, cfg):
    from .plots import emit_plots

    run = args.run or args.out
    if not run:
        raise ConfigError("plot needs --run DIR")
    files, messages = emit_plots(run)
    for m in messages:
        print(m)
    for f in files:
        print(f"wrote {f}")
    return EXIT_OK if files else EXIT_CHECK


COMMANDS = {"check-model": cmd_check_model, "simulate": cmd_simulate,
            "solve-linear": cmd_solve_linear, "resolvent-sweep": cmd_resolvent_sweep,
            "diagnose": cmd_diagnose, "plot": cmd_plot}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="twophase", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS), nargs="?")
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--run", help="existing run directory (diagnose, plot)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a configuration value (repeatable)")
    p.add_argument("--seed-check", action="store_true", help="run the invariant suite")
    p.add_argument("--print-config", action="store_true", help="print the resolved config")
    p.add_argument("--lambda0", type=float, default=1.0)
    p.add_argument("--eps-angle", type=float, default=0.1)
    p.add_argument("--decades", type=float, default=3.0)
    p.add_argument("--n-mag", type=int, default=7)
    p.add_argument("--modes", help="comma-separated mode indices for the sweep")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    path = args.config
    run = args.run or args.out
    if path is None and args.command in ("diagnose", "plot") and run:
        saved = os.path.join(run, "config.ini")
        path = saved if os.path.exists(saved) else None
    try:
        cfg, _ = load_config(path, args.set)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.print_config:
        print(format_config(cfg), end="")
    status = EXIT_OK
    if args.seed_check:
        for name, value, tol in seed_check(cfg):
            ok = value <= tol
            status = status if ok else EXIT_CHECK
            print(f"{'PASS' if ok else 'FAIL'} {name}: {value:.3e} (tol {tol:.1e})")
    if args.command:
        try:
            code = COMMANDS[args.command](args, cfg)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except Exception as exc:  # gate failures outside simulate
            from .driver import CompatibilityError, GateError

            if isinstance(exc, (GateError, CompatibilityError)):
                print(f"terminated: {exc}", file=sys.stderr)
                return EXIT_GATE
            raise
        status = max(status, code)
    elif not args.seed_check and not args.print_config:
        build_parser().print_help()
    return status


if __name__ == "__main__":
    sys.exit(main())
