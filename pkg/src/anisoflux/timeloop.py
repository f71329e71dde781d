"""Implicit-midpoint time integration with a linear time-step ramp,
factorization reuse for constant coefficients, and per-step diagnostics."""

import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import assemble_system
from .fespace import Field
from .linsolve import Factorization, SolveReport, SolverError, solve_linear, solve_picard

__all__ = [
    "Schedule",
    "TransientState",
    "RunContext",
    "ramp_schedule",
    "midpoint_step",
    "run_transient",
    "save_checkpoint",
    "load_checkpoint",
]


def ramp_schedule(dt0, dt_final, n_ramp):
    """The first `n_ramp` step sizes: affine from dt0 to dt_final.

    A single-step ramp returns [dt0] (the first step always uses dt0).
    """
    if n_ramp < 1:
        raise ValueError("the ramp needs at least one step")
    if n_ramp == 1:
        return np.array([float(dt0)])
    j = np.arange(n_ramp)
    return dt0 + (dt_final - dt0) * j / (n_ramp - 1)


@dataclass
class Schedule:
    """Linear ramp dt0 -> dt_final over n_ramp steps, then dt_final to t_max."""

    dt0: float
    dt_final: float
    n_ramp: int = 1
    t_max: float = None
    n_steps: int = None     # alternative stop rule: a fixed step count

    def __post_init__(self):
        if self.dt0 > self.dt_final:
            raise ValueError("the ramp must not decrease the step size")
        if self.t_max is None and self.n_steps is None:
            raise ValueError("schedule needs t_max or n_steps")

    @classmethod
    def fixed(cls, dt, n_steps):
        return cls(dt, dt, 1, None, n_steps)

    def steps(self):
        """Yield (step index, dt); stops at t_max (or after n_steps)."""
        ramp = ramp_schedule(self.dt0, self.dt_final, self.n_ramp)
        t = 0.0
        j = 0
        while True:
            if self.n_steps is not None and j >= self.n_steps:
                return
            dt = ramp[j] if j < len(ramp) else self.dt_final
            if self.t_max is not None and t >= self.t_max * (1.0 - 1e-12):
                return
            yield j, float(dt)
            t += dt
            j += 1


@dataclass
class TransientState:
    t: float
    step: int
    T: Field
    zeta: Field = None


@dataclass
class RunContext:
    """Everything a transient run needs besides the schedule position."""

    disc: str
    coeffs: object
    space_T: object
    space_z: object = None
    bc: dict = None
    source: object = None          # source(t) -> vectorized f(x, y), or None
    schedule: Schedule = None
    diagnostics: dict = field(default_factory=dict)  # name -> fn(state) -> float
    picard_rtol: float = 1e-8
    picard_max_iter: int = 25
    qorder: int = None
    # caches for constant-coefficient operator reuse, keyed by dt
    _op_cache: dict = field(default_factory=dict, repr=False)


def _constant_coefficients(ctx):
    return not ctx.coeffs.temperature_dependent


def midpoint_step(ctx, state, dt, source_mid=None):
    """One implicit-midpoint step: solve for the midpoint state, extrapolate.

    The midpoint system is assembled with effective step dt/2 (mass scaling
    2/dt); nonlinear coefficients are handled by a Picard loop around the
    midpoint state.  Returns (new state, SolveReport).
    """
    if dt <= 0:
        raise ValueError("time step must be positive")
    dt_eff = 0.5 * dt
    src_qp = None
    if source_mid is not None:
        tab = ctx.space_T.tabulation(ctx.qorder)
        src_qp = np.broadcast_to(
            np.asarray(source_mid(tab.xq[..., 0], tab.xq[..., 1]), dtype=float),
            tab.wdet.shape)

    if _constant_coefficients(ctx):
        cache = ctx._op_cache.get(dt)
        if cache is not None:
            system, factor = cache
            system.rebuild_rhs(T_prev=state.T, source_qp=src_qp)
            (T_mid_c, z_mid_c), report = solve_linear(system, factorization=factor)
        else:
            system = assemble_system(ctx.disc, ctx.coeffs, state.T, dt=dt_eff,
                                     bc=ctx.bc, zeta_space=ctx.space_z,
                                     T_prev=state.T, qorder=ctx.qorder)
            system.rebuild_rhs(T_prev=state.T, source_qp=src_qp)
            one_shot = ctx.schedule is not None and dt != ctx.schedule.dt_final
            solved = False
            if one_shot:
                # ramp steps use each dt once: refine on the previous
                # factorization instead of paying for a fresh one
                last = ctx._op_cache.get("last_lu")
                mat = system.matrix()
                if last is not None and last.shape == mat.shape:
                    x, res, ok = last.solve_refined(mat, system.rhs(), 1e-10)
                    if ok:
                        T_mid_c, z_mid_c = system.split(x)
                        report = SolveReport(1, float(res), 0.0, True,
                                             method="refined")
                        solved = True
            if not solved:
                factor = Factorization(system.matrix())
                ctx._op_cache["last_lu"] = factor
                if not one_shot:
                    ctx._op_cache[dt] = (system, factor)
                (T_mid_c, z_mid_c), report = solve_linear(system,
                                                          factorization=factor)
    else:
        def build(T_lag):
            return assemble_system(ctx.disc, ctx.coeffs, T_lag, dt=dt_eff,
                                   bc=ctx.bc, source=src_qp,
                                   zeta_space=ctx.space_z, T_prev=state.T,
                                   qorder=ctx.qorder)

        (T_mid, zeta_mid), report = solve_picard(
            build, state.T, rtol=ctx.picard_rtol, max_iter=ctx.picard_max_iter,
            lu_cache=ctx._op_cache.setdefault("picard_lu", {}))
        if not report.converged:
            raise SolverError(
                f"Picard iteration did not converge at step {state.step + 1} "
                f"(t={state.t:.6g}); update history: {report.history}")
        T_mid_c, z_mid_c = T_mid.coeffs, zeta_mid.coeffs if zeta_mid else None

    T_next = 2.0 * T_mid_c - state.T.coeffs
    zeta = None
    if z_mid_c is not None:
        zspace = ctx.space_z if ctx.space_z is not None else ctx.space_T
        zeta = Field(zspace, z_mid_c)
    return TransientState(state.t + dt, state.step + 1,
                          Field(ctx.space_T, T_next), zeta), report


def run_transient(ctx, T_init, writer=None, checkpoint=None, start_state=None):
    """Execute the schedule, recording diagnostics each step (including t=0).

    `writer`, when given, is called as writer(row_dict, state) after every
    record.  Aborts with the partial series attached to the exception on
    solver failure.
    """
    if start_state is not None:
        state = start_state
    else:
        T0 = T_init.copy()
        if ctx.bc:
            from .assembly import _bc_data

            dofs, vals = _bc_data(ctx.space_T, ctx.bc)
            T0.coeffs[dofs] = vals
        state = TransientState(0.0, 0, T0)
    rows = []

    def record(state, report=None):
        row = {"step": state.step, "t": state.t}
        for name, fn in ctx.diagnostics.items():
            row[name] = fn(state)
        if report is not None:
            row["_solver"] = (report.iterations, report.residual, report.seconds)
        rows.append(row)
        if writer is not None:
            writer(row, state)

    if start_state is None:
        record(state)
    for j, dt in ctx.schedule.steps():
        if j < state.step:
            continue  # resuming from a checkpoint
        source_mid = ctx.source(state.t + 0.5 * dt) if ctx.source is not None else None
        try:
            state, report = midpoint_step(ctx, state, dt, source_mid=source_mid)
        except SolverError as exc:
            exc.partial_series = rows
            raise
        record(state, report)
        if checkpoint is not None and checkpoint.get("every") \
                and state.step % checkpoint["every"] == 0:
            save_checkpoint(checkpoint["path"], state)
    return rows


def save_checkpoint(path, state):
    data = {"t": np.float64(state.t), "step": np.int64(state.step),
            "T": state.T.coeffs, "ndofs_T": np.int64(state.T.space.ndofs)}
    if state.zeta is not None:
        data["zeta"] = state.zeta.coeffs
        data["ndofs_z"] = np.int64(state.zeta.space.ndofs)
    np.savez(path, **data)


def load_checkpoint(path, space_T, space_z=None):
    with np.load(path) as data:
        if int(data["ndofs_T"]) != space_T.ndofs:
            raise ValueError("checkpoint dof count does not match the space")
        zeta = None
        if "zeta" in data and space_z is not None:
            zeta = Field(space_z, data["zeta"].copy())
        return TransientState(float(data["t"]), int(data["step"]),
                              Field(space_T, data["T"].copy()), zeta)
