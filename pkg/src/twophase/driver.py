"""Nonlinear time stepping by Picard iteration around the linear interface solvers.

Each step repeats: extend the height, transport the density along
characteristics, assemble the nonlinear right-hand sides at the current
iterate, and solve the linear Stokes and heat problems by implicit Euler.
The iterate is committed once the composite relative change drops below
``tol_fp``.  Gate violations and stalled iterations end a run with a
structured termination record instead of an exception.
"""
from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rhs as rhs_mod
from .constitutive import MaterialSystem, equilibrium_residual
from .geometry import ExtendedHeight, extend_height, surface_gradient
from .grid import Grid, State, equilibrium_state, interface_trace, read_binary, write_binary
from .linear import HeatSolver, StokesData, StokesSolver
from .transport import (TransportError, advect_flow, density_update, initial_density,
                        lions_extend, transport_velocity)

log = logging.getLogger(__name__)

INITIAL_KINDS = ("bump", "expression", "file")
ITERATION_MODES = ("step", "global")
COMPAT_ACTIONS = ("reject", "warn")
EXPRESSION_KEYS = ("h0", "rho0", "theta_plus", "theta_minus") + tuple(
    f"u{a}_{s}" for s in ("plus", "minus") for a in (1, 2, 3))


class GateError(RuntimeError):
    """A smallness or well-definedness gate failed; ``kind`` names it."""

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class CompatibilityError(ValueError):
    def __init__(self, failing: dict):
        names = ", ".join(f"{k} ({v:.3g})" for k, v in failing.items())
        super().__init__(f"initial data violate compatibility: {names}")
        self.failing = failing


class ContractionError(RuntimeError):
    pass


# -- configuration ---------------------------------------------------------------------

@dataclass
class RunConfig:
    grid: Grid = field(default_factory=Grid)
    material: MaterialSystem = field(default_factory=MaterialSystem)
    epsilon: float = 0.0
    initial: str = "bump"
    expressions: dict = field(default_factory=dict)
    initial_file: str = ""
    tol_fp: float = 1e-10
    max_iter: int = 50
    stall_limit: int = 3
    tol_compat: float = 1e-8
    compat_action: str = "reject"
    delta_rho: float = 1e-6
    delta_j: float = 1e-6
    eps1: float = 0.1
    gate_threshold: float = 0.5
    min_jacobian: float = 0.5
    nsub: int = 4
    output_every: int = 10
    iteration: str = "step"
    curvature: str = "printed"
    flux_denominator: str = "total"
    heat_source: str = "display"

    def __post_init__(self):
        for name in ("tol_fp", "tol_compat", "delta_rho", "delta_j", "eps1", "gate_threshold"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iter < 1 or self.stall_limit < 1 or self.nsub < 1 or self.output_every < 1:
            raise ValueError("max_iter, stall_limit, nsub and output_every must be >= 1")
        if self.initial not in INITIAL_KINDS:
            raise ValueError(f"initial must be one of {INITIAL_KINDS}")
        if self.iteration not in ITERATION_MODES:
            raise ValueError(f"iteration must be one of {ITERATION_MODES}")
        if self.compat_action not in COMPAT_ACTIONS:
            raise ValueError(f"compat_action must be one of {COMPAT_ACTIONS}")
        unknown = set(self.expressions) - set(EXPRESSION_KEYS)
        if unknown:
            raise ValueError(f"unknown initial expressions {sorted(unknown)}")
        self.rhs_options  # validates the switches

    @property
    def rhs_options(self) -> rhs_mod.RhsOptions:
        return rhs_mod.RhsOptions(self.curvature, self.flux_denominator, self.heat_source,
                                  self.delta_j)


# -- traces ------------------------------------------------------------------

@dataclass
class IterationTrace:
    """Per-step record of the Picard iteration."""

    step: int
    t: float
    changes: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    gate: float = float("nan")
    grad_integral: float = 0.0
    min_jacobian: float = float("nan")
    stokes_residual: float = 0.0
    heat_residual: float = 0.0
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.changes)

    def rows(self):
        for k, c in enumerate(self.changes):
            r = self.ratios[k - 1] if k >= 1 else float("nan")
            yield [self.step, self.t, k + 1, c, r, self.gate, self.grad_integral,
                   self.min_jacobian, self.stokes_residual, self.heat_residual]


TRACE_HEADER = ["step", "t", "iteration", "change", "ratio", "gate", "grad_integral",
                "min_jacobian", "stokes_residual", "heat_residual"]


@dataclass
class Termination:
    reason: str            # "completed" or the failing gate/contraction kind
    message: str
    t: float
    step: int

    @property
    def completed(self) -> bool:
        return self.reason == "completed"


@dataclass
class RunResult:
    config: RunConfig
    states: list
    traces: list
    termination: Termination
    out_dir: str | None = None


# -- initial data -------------------------------------------------------------------------

_SAFE = {name: getattr(np, name) for name in
         ("sin", "cos", "tan", "exp", "log", "sqrt", "tanh", "cosh", "sinh", "arctan", "abs")}
_SAFE["pi"] = np.pi


def evaluate_expression(expr: str, coords, **params):
    """Evaluate a closed-form expression in ``x1..xN`` with numpy functions only."""
    ns = dict(_SAFE)
    ns.update({f"x{a + 1}": c for a, c in enumerate(coords)})
    ns.update(params)
    code = compile(expr, "<expression>", "eval")
    for name in code.co_names:
        if name not in ns:
            raise ValueError(f"unknown name {name!r} in expression {expr!r}")
    val = eval(code, {"__builtins__": {}}, ns)
    return np.broadcast_to(np.asarray(val, dtype=float), np.shape(coords[0])).copy()


def _shifted_coords(grid: Grid, eh: ExtendedHeight, side: str):
    """Node coordinates with the normal one shifted by the extended height."""
    c = list(grid.coords(side))
    c[-1] = c[-1] + eh.H[side]
    return c


def interface_speed(material: MaterialSystem, grid: Grid, state: State, options) -> np.ndarray:
    """Interface velocity ``dh/dt`` from the kinematic law at ``state``."""
    N = grid.N
    rm, rp = material.rho_star_minus, material.rho_star_plus
    utm = [interface_trace(state.u_minus[a], "minus") for a in range(N)]
    utp = [interface_trace(state.u_plus[a], "plus") for a in range(N)]
    rho_i = interface_trace(state.rho_plus, "plus")
    gh = surface_gradient(grid, state.h)
    lin = (rm * utm[-1] - rp * utp[-1]) / (rm - rp)
    return lin + rhs_mod.kinematic_remainder(material, rho_i, utm, utp, gh)


def _bump_velocity(grid: Grid, coef):
    """Upper velocity ``coef(x') * z exp(-z)``, vanishing on the interface."""
    z = grid.z_upper
    phi = z * np.exp(-z)
    return coef[..., None] * phi


def _compat_rows(material, grid, state, eh, options):
    res = rhs_mod.compatibility_fields(material, grid, state, eh, options)
    rows = list(res["tangential_stress"]) + [res["normal_stress"]]
    return np.stack(rows)


def compatible_bump(config: RunConfig) -> State:
    """Bump ``h0 = eps cos(2 pi x1 / L)`` with an upper velocity matched to the stress conditions.

    The lower phase is at rest and the upper velocity is ``c(x') z exp(-z)``;
    both traces vanish, so the slip, divergence and heat conditions hold
    identically.  The ``N`` coefficients per interface point follow from the
    tangential and normal stress conditions, which are affine in ``c``; a few
    correction sweeps absorb any residual nonlinearity.
    """
    grid, mat = config.grid, config.material
    opts = config.rhs_options
    N = grid.N
    xs = grid.tan_coords()
    h0 = config.epsilon * np.cos(2 * np.pi * xs[0] / grid.L_tan)
    st = equilibrium_state(grid, mat.rho_star_plus, mat.theta_star)
    st.h = h0
    eh = extend_height(grid, h0)
    coef = np.zeros((N,) + grid.tan_shape)
    if config.epsilon == 0:
        return st

    def residual(c):
        trial = st.replace(u_plus=np.stack([_bump_velocity(grid, c[a]) for a in range(N)]))
        return _compat_rows(mat, grid, trial, eh, opts)

    for _ in range(3):
        r0 = residual(coef)
        J = np.empty((N, N) + grid.tan_shape)
        for m in range(N):
            e = coef.copy()
            e[m] += 1.0
            J[:, m] = residual(e) - r0
        Jm = np.moveaxis(J.reshape(N, N, -1), -1, 0)
        rhs = np.moveaxis(r0.reshape(N, -1), -1, 0)
        step = np.linalg.solve(Jm, rhs[..., None])[..., 0]
        coef = coef - np.moveaxis(step, 0, -1).reshape(coef.shape)
    st.u_plus = np.stack([_bump_velocity(grid, coef[a]) for a in range(N)])
    return st


def expression_state(config: RunConfig) -> State:
    """Hat initial fields from closed-form physical data composed with the height shift."""
    grid, mat = config.grid, config.material
    ex = config.expressions
    params = {"eps": config.epsilon, "L": grid.L_tan}
    h0 = evaluate_expression(ex.get("h0", "0"), grid.tan_coords(), **params)
    eh = extend_height(grid, h0)
    cp, cm = _shifted_coords(grid, eh, "plus"), _shifted_coords(grid, eh, "minus")
    N = grid.N

    def ev(key, coords, default):
        return evaluate_expression(ex.get(key, default), coords, **params)

    rho0 = ev("rho0", cp, repr(mat.rho_star_plus))
    st = equilibrium_state(grid, mat.rho_star_plus, mat.theta_star)
    st.h = h0
    st.rho_full = initial_density(grid, mat.rho_star_plus, rho0 - mat.rho_star_plus)
    st.u_plus = np.stack([ev(f"u{a + 1}_plus", cp, "0") for a in range(N)])
    st.u_minus = np.stack([ev(f"u{a + 1}_minus", cm, "0") for a in range(N)])
    st.theta_plus = ev("theta_plus", cp, repr(mat.theta_star))
    st.theta_minus = ev("theta_minus", cm, repr(mat.theta_star))
    return st


def load_snapshot(path: str, grid: Grid) -> State:
    """State from a binary snapshot; the lower density extension is rebuilt."""
    head, fields, h = read_binary(path)
    if (head["N"], head["M_tan"], head["M_nrm"]) != (grid.N, grid.M_tan, grid.M_nrm):
        raise ValueError(f"{path}: snapshot grid differs from the configured grid")
    N = grid.N
    return State(grid, lions_extend(grid, fields["rho"][1]),
                 np.stack([fields[f"u{a + 1}_plus"][1] for a in range(N)]),
                 np.stack([fields[f"u{a + 1}_minus"][1] for a in range(N)]),
                 fields["theta_plus"][1], fields["theta_minus"][1], fields["pi_minus"][1],
                 h, head["t"])


def check_gates(config: RunConfig, eh: ExtendedHeight, state: State):
    mat = config.material
    if abs(mat.rho_star_minus - mat.rho_star_plus) <= config.delta_rho:
        raise GateError("density_contrast", "equilibrium densities closer than delta_rho")
    if eh.gate < config.gate_threshold:
        raise GateError("transform", f"1 + dH/dx_N = {eh.gate:.3g} below {config.gate_threshold}")
    if np.any(state.rho_plus <= 0):
        raise GateError("density", "non-positive density")
    if np.any(state.theta_plus <= 0) or np.any(state.theta_minus <= 0):
        raise GateError("temperature", "non-positive temperature")


def initialize(config: RunConfig) -> State:
    """Initial state after equilibrium, compatibility and gate checks."""
    mat, grid = config.material, config.grid
    eq = equilibrium_residual(mat)
    if abs(eq) > 1e-12:
        raise ValueError(f"material violates the equilibrium condition (residual {eq:.3g})")
    if abs(mat.rho_star_minus - mat.rho_star_plus) <= config.delta_rho:
        raise GateError("density_contrast", "equilibrium densities closer than delta_rho")
    if config.initial == "bump":
        st = compatible_bump(config)
    elif config.initial == "expression":
        st = expression_state(config)
    else:
        st = load_snapshot(config.initial_file, grid)
    eh = extend_height(grid, st.h)
    check_gates(config, eh, st)
    try:
        res = rhs_mod.compatibility_residual(mat, grid, st, eh, config.rhs_options)
    except rhs_mod.PhaseFluxError as exc:
        raise GateError("phase_flux", str(exc)) from exc
    failing = {k: v["sup"] for k, v in res.items() if v["sup"] > config.tol_compat}
    if failing:
        if config.compat_action == "reject":
            raise CompatibilityError(failing)
        log.warning("initial data violate compatibility: %s", failing)
    st.dh_dt = interface_speed(mat, grid, st, config.rhs_options)
    st.t = 0.0
    return st


# -- one Picard map -----------------------------------------------------------------------

# Arguments of the fixed-point map.  The pressure is an output of the linear
# solve (no right-hand side reads it), so it is not part of the contraction norm.
_CHANGE_FIELDS = ("u_plus", "u_minus", "theta_plus", "theta_minus", "h", "rho_full")


def _reference(config: RunConfig, name: str):
    mat = config.material
    return {"theta_plus": mat.theta_star, "theta_minus": mat.theta_star,
            "rho_full": mat.rho_star_plus}.get(name, 0.0)


def composite_change(config: RunConfig, new: State, old: State) -> float:
    """``sqrt(sum ||new - old||^2) / sqrt(sum ||new - ref||^2)`` over the map arguments."""
    num = den = 0.0
    for name in _CHANGE_FIELDS:
        a, b = getattr(new, name), getattr(old, name)
        num += float(np.sum((a - b) ** 2))
        den += float(np.sum((a - _reference(config, name)) ** 2))
    if num == 0.0:
        return 0.0
    return float(np.sqrt(num / max(den, 1e-300)))


class Stepper:
    """Holds the factorised linear solvers and the transport budget of a run."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.grid = config.grid
        self.material = config.material
        self.options = config.rhs_options
        self.stokes = StokesSolver(self.material, self.grid)
        self.heat = HeatSolver(self.material, self.grid)
        self.spent = 0.0

    def _transport_field(self, state: State, eh: ExtendedHeight):
        _, v, rate = transport_velocity(self.grid, state.u_plus, eh)
        return v, rate

    def picard_map(self, base: State, prev: State, it: State, dt: float, budget: float):
        """One application of the fixed-point map.

        ``base`` is the old time level for the implicit Euler step and the
        transport, ``prev`` the old level used in the right-hand-side time
        differences (equal to ``base`` in per-step mode) and ``it`` the
        iterate at the new level.  Returns ``(new_state, info)``.
        """
        cfg, grid, mat = self.config, self.grid, self.material
        theta_star = mat.theta_star
        dhdt = interface_speed(mat, grid, it, self.options)
        eh = extend_height(grid, it.h, dhdt)
        check_gates(cfg, eh, it)
        eh_n = extend_height(grid, base.h, base.dh_dt)
        v0, r0 = self._transport_field(base, eh_n)
        v1, r1 = self._transport_field(it, eh)
        try:
            flow = advect_flow(grid, v0, v1, r0, r1, dt, cfg.nsub, budget, cfg.eps1,
                               cfg.min_jacobian)
            rho_full = density_update(grid, base.rho_full, flow)
        except TransportError as exc:
            kind = "jacobian" if "Jacobian" in str(exc) else (
                "density" if "density" in str(exc) else "transport")
            raise GateError(kind, str(exc)) from exc
        cur = it.replace(rho_full=rho_full, dh_dt=dhdt)
        try:
            bundle = rhs_mod.assemble(mat, grid, cur, eh, prev=prev, dt=dt, options=self.options)
        except rhs_mod.PhaseFluxError as exc:
            raise GateError("phase_flux", str(exc)) from exc
        g, K, G_h = rhs_mod.stokes_interface_data(mat, bundle_terms(bundle), grid.N)
        data = StokesData(bundle.F_plus, bundle.F_minus, bundle.f_minus, g, K, G_h)
        sol = self.stokes.time_step(base.u_plus, base.u_minus, base.h, data, dt)
        heat = self.heat.time_step(base.theta_minus - theta_star, base.theta_plus - theta_star,
                                   bundle.F_theta_minus, bundle.F_theta_plus, bundle.G_theta, dt)
        new = State(grid, rho_full, sol.u_plus, sol.u_minus, heat.theta_plus + theta_star,
                    heat.theta_minus + theta_star, sol.pi_minus, sol.H, base.t + dt,
                    (sol.H - base.h) / dt)
        if not all(np.all(np.isfinite(getattr(new, n))) for n in _CHANGE_FIELDS + ("pi_minus",)):
            raise GateError("nonfinite", "non-finite values in the iterate")
        info = {"gate": eh.gate, "grad_integral": flow.grad_integral,
                "min_jacobian": flow.min_jacobian, "stokes_residual": sol.residual,
                "heat_residual": heat.residual}
        return new, info

    def predict(self, state: State, dt: float) -> State:
        """Initial iterate: the old level with its density carried forward by the old velocity."""
        eh = extend_height(self.grid, state.h, state.dh_dt)
        v, r = self._transport_field(state, eh)
        try:
            flow = advect_flow(self.grid, v, v, r, r, dt, self.config.nsub, self.spent,
                               self.config.eps1, self.config.min_jacobian)
            rho = density_update(self.grid, state.rho_full, flow)
        except TransportError as exc:
            raise GateError("transport", str(exc)) from exc
        return state.replace(rho_full=rho)

    def advance(self, state: State, dt: float, step: int = 0):
        """Picard iteration for one step; returns ``(state, IterationTrace)``."""
        cfg = self.config
        trace = IterationTrace(step, state.t + dt)
        it = self.predict(state, dt)
        streak = 0
        for _ in range(cfg.max_iter):
            new, info = self.picard_map(state, state, it, dt, self.spent)
            change = composite_change(cfg, new, it)
            if trace.changes:
                prev = trace.changes[-1]
                ratio = change / prev if prev > 0 else 0.0
                trace.ratios.append(ratio)
                streak = streak + 1 if ratio >= 1 else 0
            trace.changes.append(change)
            for k, v in info.items():
                setattr(trace, k, v)
            it = new
            if change < cfg.tol_fp:
                trace.converged = True
                break
            if streak >= cfg.stall_limit:
                raise ContractionError(
                    f"contraction ratio >= 1 for {streak} consecutive iterations", trace)
        if not trace.converged:
            raise ContractionError(f"no convergence within {cfg.max_iter} iterations", trace)
        self.spent = trace.grad_integral
        return it, trace


def bundle_terms(bundle: rhs_mod.RhsBundle) -> rhs_mod.InterfaceTerms:
    return rhs_mod.InterfaceTerms(bundle.G, bundle.K, bundle.G_theta, bundle.G_h, bundle.j)


def advance(config: RunConfig, state: State, dt: float | None = None, stepper: Stepper | None = None):
    """Advance one time step by Picard iteration."""
    stepper = stepper or Stepper(config)
    return stepper.advance(state, config.grid.dt if dt is None else dt)


# -- whole runs ---------------------------------------------------------------------------

def _n_steps(grid: Grid) -> int:
    return int(round(grid.T_final / grid.dt))


def _run_steps(config: RunConfig, state: State, stepper: Stepper, states: list, traces: list):
    dt = config.grid.dt
    for n in range(1, _n_steps(config.grid) + 1):
        state, tr = stepper.advance(state, dt, n)
        states.append(state)
        traces.append(tr)
        log.debug("step %d t=%.4g iterations=%d", n, state.t, tr.iterations)
    return state


def _run_global(config: RunConfig, state0: State, stepper: Stepper, states: list, traces: list):
    """Iterate whole trajectories on ``[0, T]`` until they stop changing."""
    dt = config.grid.dt
    n = _n_steps(config.grid)
    traj = [state0] + [state0.replace(t=(k + 1) * dt) for k in range(n)]
    tr = IterationTrace(0, config.grid.T_final)
    streak = 0
    for _ in range(config.max_iter):
        new = [state0]
        budget = 0.0
        for k in range(n):
            s, info = stepper.picard_map(new[k], traj[k], traj[k + 1], dt, budget)
            budget = info["grad_integral"]
            new.append(s)
        num = sum(composite_change(config, a, b) ** 2 for a, b in zip(new[1:], traj[1:]))
        change = float(np.sqrt(num / max(n, 1)))
        if tr.changes:
            ratio = change / tr.changes[-1] if tr.changes[-1] > 0 else 0.0
            tr.ratios.append(ratio)
            streak = streak + 1 if ratio >= 1 else 0
        tr.changes.append(change)
        for key, v in info.items() if n else ():
            setattr(tr, key, v)
        traj = new
        if change < config.tol_fp:
            tr.converged = True
            break
        if streak >= config.stall_limit:
            raise ContractionError("global iteration stalled", tr)
    if not tr.converged:
        raise ContractionError(f"no convergence within {config.max_iter} sweeps", tr)
    states.extend(traj[1:])
    traces.append(tr)
    return traj[-1]


def simulate(config: RunConfig, out_dir: str | None = None, keep_states: bool = True) -> RunResult:
    """Run from ``initialize`` to ``T_final`` or to the first gate/contraction failure."""
    states, traces = [], []
    step = 0
    t = 0.0
    try:
        state = initialize(config)
        states.append(state)
        stepper = Stepper(config)
        if config.iteration == "global":
            state = _run_global(config, state, stepper, states, traces)
        else:
            state = _run_steps(config, state, stepper, states, traces)
        step, t = len(states) - 1, state.t
        term = Termination("completed", "final time reached", t, step)
    except GateError as exc:
        term = Termination(f"gate:{exc.kind}", str(exc), _last_t(states), len(states) - 1)
    except ContractionError as exc:
        if len(exc.args) > 1:
            traces.append(exc.args[1])
        term = Termination("contraction", str(exc.args[0]), _last_t(states), len(states) - 1)
    except CompatibilityError as exc:
        term = Termination("compatibility", str(exc), 0.0, 0)
    result = RunResult(config, states, traces, term, out_dir)
    if out_dir is not None:
        write_run(result, out_dir)
    if not keep_states:
        result.states = states[-1:]
    return result


def _last_t(states):
    return states[-1].t if states else 0.0


# -- run directory ------------------------------------------------------------------------

def write_trace_csv(path, traces):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        for tr in traces:
            for row in tr.rows():
                w.writerow(row)


def write_run(result: RunResult, out_dir: str):
    """Config copy, snapshots, iteration trace, diagnostics, termination and summary."""
    from . import config as config_mod
    from . import diagnostics

    os.makedirs(out_dir, exist_ok=True)
    snap_dir = os.path.join(out_dir, "snapshots")
    os.makedirs(snap_dir, exist_ok=True)
    cfg = result.config
    with open(os.path.join(out_dir, "config.ini"), "w") as fh:
        fh.write(config_mod.format_config(cfg))
    last = len(result.states) - 1
    for k, st in enumerate(result.states):
        if k % cfg.output_every == 0 or k == last:
            write_binary(os.path.join(snap_dir, f"step_{k:05d}.bin"), st)
    write_trace_csv(os.path.join(out_dir, "trace.csv"), result.traces)
    with open(os.path.join(out_dir, "termination.json"), "w") as fh:
        json.dump(asdict(result.termination), fh, indent=2, sort_keys=True)
    summary = {"termination": result.termination.reason, "t_final": result.termination.t,
               "steps": result.termination.step,
               "max_iterations": max((tr.iterations for tr in result.traces), default=0),
               "max_ratio": max((max(tr.ratios, default=0.0) for tr in result.traces),
                                default=0.0)}
    if len(result.states) >= 1:
        report = diagnostics.run_report(cfg.material, cfg.grid, result.states, cfg.rhs_options)
        diagnostics.write_report_csv(os.path.join(out_dir, "diagnostics.csv"), report)
        summary.update(diagnostics.summarize(report))
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
