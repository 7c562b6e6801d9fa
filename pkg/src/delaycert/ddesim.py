"""Fixed-step integration of the delayed system and its comparison system.

The integrator is classic fourth-order Runge-Kutta driven by the method of
steps: for delay tau > 0 the step is shrunk to divide tau exactly, so every
derivative discontinuity (at integer multiples of tau) is a mesh point and
the nominal order survives.  Delayed state lookups read the initial history
exactly for times <= 0 and a piecewise cubic Hermite interpolant of the
computed solution afterwards, which is consistent with the integrator's
order.

Negative states are never clamped in the plain integrator: positivity is a
property to verify, and its violation is diagnostic.  The comparison
integrator does require the nonnegative orthant (its right-hand side is
built from suprema over order intervals [0, state]) and rejects states that
leave it beyond roundoff.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import boxopt
from .certify import SolverConfig, _unit_grids
from .exprlang import ExprAst, ExprEvalError, parse
from .sysmodel import SystemSpec

__all__ = [
    "HistorySpec",
    "HistoryError",
    "IntegrationError",
    "Trajectory",
    "DominanceReport",
    "SweepRow",
    "SweepReport",
    "INTEGRATION_CONFIG",
    "integrate",
    "integrate_comparison",
    "check_dominance",
    "delay_sweep",
    "trajectory_to_csv",
]

# Comparison right-hand sides cost 2n box suprema per stage; a coarser,
# unrefined solver keeps integration affordable.  Accuracy dial: raise
# resolution / enable refine for sharper comparison trajectories.
INTEGRATION_CONFIG = SolverConfig(resolution=17, refine=False)

_NONNEG_TOL = 1e-12


class HistoryError(ValueError):
    """Initial history outside the nonnegative orthant or malformed."""


class IntegrationError(RuntimeError):
    """Integration failed; carries the first offending time and state."""

    def __init__(self, message: str, time: float, state=None):
        self.time = float(time)
        self.state = None if state is None else tuple(float(v) for v in state)
        super().__init__(f"{message} at t = {self.time}"
                         + (f", state = {self.state}" if state is not None else ""))


@dataclass(frozen=True)
class HistorySpec:
    """Initial condition on [-tau, 0]: a constant vector or componentwise
    expressions in the time variable t."""

    kind: str  # "constant" | "expression"
    values: Optional[tuple] = None
    exprs: Optional[tuple] = None

    @classmethod
    def constant(cls, values) -> "HistorySpec":
        values = tuple(float(v) for v in values)
        if any(not math.isfinite(v) for v in values):
            raise HistoryError("history values must be finite")
        if any(v < 0.0 for v in values):
            raise HistoryError(f"history must be nonnegative, got {values}")
        return cls(kind="constant", values=values)

    @classmethod
    def from_expressions(cls, sources: Sequence[str]) -> "HistorySpec":
        exprs = tuple(parse(src, 1, var_names=("t",)) for src in sources)
        return cls(kind="expression", exprs=exprs)

    @property
    def dim(self) -> int:
        return len(self.values) if self.kind == "constant" else len(self.exprs)

    def __call__(self, t: float) -> np.ndarray:
        if self.kind == "constant":
            return np.array(self.values)
        out = np.array([expr.eval((t,)) for expr in self.exprs])
        if (out < -_NONNEG_TOL).any():
            raise HistoryError(
                f"history evaluates to {tuple(out)} < 0 at t = {t}"
            )
        return np.maximum(out, 0.0)

    def label(self) -> str:
        if self.kind == "constant":
            return ",".join(f"{v:g}" for v in self.values)
        return ";".join(expr.to_source() for expr in self.exprs)


def coerce_history(phi, n: int) -> HistorySpec:
    """Accept a HistorySpec or a plain sequence (treated as constant)."""
    if isinstance(phi, HistorySpec):
        spec = phi
    else:
        spec = HistorySpec.constant(phi)
    if spec.dim != n:
        raise HistoryError(f"history has dimension {spec.dim}, system needs {n}")
    return spec


@dataclass(frozen=True)
class Trajectory:
    """Dense-output solution on [-tau, t_end].

    `mesh`, `states`, and `derivs` share indexing; the interpolant is the
    piecewise cubic Hermite determined by states and derivatives, so it
    reproduces `states` exactly at mesh points.
    """

    tau: float
    mesh: np.ndarray
    states: np.ndarray
    derivs: np.ndarray

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def t_end(self) -> float:
        return float(self.mesh[-1])

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1].copy()

    @property
    def final_norm(self) -> float:
        return float(np.max(np.abs(self.states[-1])))

    def at(self, t: float) -> np.ndarray:
        """Interpolated state; `t` must lie within [-tau, t_end]."""
        mesh = self.mesh
        if t < mesh[0] - 1e-12 or t > mesh[-1] + 1e-12:
            raise ValueError(f"t = {t} outside [{mesh[0]}, {mesh[-1]}]")
        idx = int(np.searchsorted(mesh, t))
        if idx < len(mesh) and mesh[idx] == t:
            return self.states[idx].copy()
        idx = min(max(idx, 1), len(mesh) - 1)
        return _hermite(
            t, mesh[idx - 1], mesh[idx],
            self.states[idx - 1], self.states[idx],
            self.derivs[idx - 1], self.derivs[idx],
        )

    def max_negativity(self) -> float:
        return float(max(0.0, -np.min(self.states)))


def _hermite(t, t0, t1, x0, x1, d0, d1) -> np.ndarray:
    h = t1 - t0
    s = (t - t0) / h
    s2 = s * s
    s3 = s2 * s
    return ((2 * s3 - 3 * s2 + 1) * x0 + (s3 - 2 * s2 + s) * h * d0
            + (-2 * s3 + 3 * s2) * x1 + (s3 - s2) * h * d1)


# ---------------------------------------------------------------------------
# Core stepper
# ---------------------------------------------------------------------------

def _plan_steps(tau: float, t_end: float, dt: float):
    """(dt_effective, list of step target times).  Multiples of tau are hit
    exactly; for tau = 0 the plan is plain stepping snapped to t_end."""
    targets = []
    if tau > 0:
        m = int(math.ceil(tau / dt - 1e-12))
        dt_eff = tau / m
        k = 0
        while k * tau < t_end - 1e-12:
            seg_start = k * tau
            seg_end = (k + 1) * tau
            if seg_end <= t_end + 1e-12:
                targets.extend(seg_start + j * dt_eff for j in range(1, m))
                targets.append(seg_end)
            else:
                j = 1
                while seg_start + j * dt_eff < t_end - 1e-12:
                    targets.append(seg_start + j * dt_eff)
                    j += 1
                targets.append(t_end)
            k += 1
    else:
        dt_eff = dt
        steps = int(math.ceil(t_end / dt - 1e-12))
        targets = [j * dt for j in range(1, steps)]
        targets.append(t_end)
    return dt_eff, targets


def _integrate_core(n: int, tau: float, phi: HistorySpec, t_end: float,
                    dt: float, rhs_factory) -> Trajectory:
    """Shared stepping loop.  `rhs_factory(lookup)` returns
    ``rhs(t, x) -> ndarray`` where `lookup(s)` is the delayed-state reader
    (exact history for s <= 0, Hermite otherwise)."""
    if t_end <= 0:
        raise ValueError("t_end must be > 0")
    if dt <= 0:
        raise ValueError("dt must be > 0")
    if tau < 0:
        raise ValueError("tau must be >= 0")
    if tau > 0 and dt > tau + 1e-12:
        raise ValueError("dt must not exceed tau when tau > 0")

    dt_eff, targets = _plan_steps(tau, t_end, dt)

    times: list = []
    states: list = []
    derivs: list = []

    if tau > 0:
        m = int(round(tau / dt_eff))
        for j in range(m):
            t = -tau + j * dt_eff
            times.append(t)
            states.append(np.asarray(phi(t), dtype=float))
            derivs.append(np.zeros(n))
    times.append(0.0)
    x0 = np.asarray(phi(0.0), dtype=float)
    states.append(x0)
    derivs.append(np.zeros(n))
    first_computed = len(times) - 1

    if phi.kind == "expression":
        # History derivatives (used only by the public interpolant on
        # [-tau, 0]) via central differences of the history itself.
        step = 1e-6 * max(1.0, tau)
        for idx in range(first_computed):
            t = times[idx]
            lo, hi = max(t - step, -tau), min(t + step, 0.0)
            if hi > lo:
                derivs[idx] = (phi(hi) - phi(lo)) / (hi - lo)

    def lookup(s: float) -> np.ndarray:
        if s <= 0.0:
            return np.asarray(phi(s), dtype=float)
        idx = bisect.bisect_left(times, s)
        if idx < len(times) and times[idx] == s:
            return states[idx]
        # Clamp against last-ulp drift of s = t - tau at segment boundaries.
        idx = min(max(idx, 1), len(times) - 1)
        return _hermite(
            s, times[idx - 1], times[idx],
            states[idx - 1], states[idx],
            derivs[idx - 1], derivs[idx],
        )

    rhs = rhs_factory(lookup)

    def rhs_checked(t: float, x: np.ndarray) -> np.ndarray:
        try:
            return rhs(t, x)
        except ExprEvalError as err:
            raise IntegrationError(f"field evaluation failed ({err})",
                                   t, x) from err

    derivs[first_computed] = rhs_checked(0.0, x0)

    t = 0.0
    x = x0
    for target in targets:
        h = target - t
        k1 = derivs[-1]
        k2 = rhs_checked(t + 0.5 * h, x + 0.5 * h * k1)
        k3 = rhs_checked(t + 0.5 * h, x + 0.5 * h * k2)
        k4 = rhs_checked(t + h, x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = target
        if not np.isfinite(x).all():
            raise IntegrationError("non-finite state (blow-up)", t, x)
        times.append(t)
        states.append(x)
        derivs.append(rhs_checked(t, x))

    return Trajectory(
        tau=float(tau),
        mesh=np.array(times),
        states=np.array(states),
        derivs=np.array(derivs),
    )


def integrate(sys: SystemSpec, tau: float, phi, t_end: float,
              dt: float) -> Trajectory:
    """Integrate ``dx/dt = f(x(t)) + g(x(t - tau))`` from history `phi`
    (a `HistorySpec` or a constant vector)."""
    spec = coerce_history(phi, sys.n)
    f_roots = tuple(ast.root for ast in sys.f)
    g_roots = tuple(ast.root for ast in sys.g)

    def rhs_factory(lookup):
        if tau > 0:
            def rhs(t, x):
                xt = tuple(map(float, x))
                yt = tuple(map(float, lookup(t - tau)))
                return np.array([fr.eval(xt) + gr.eval(yt)
                                 for fr, gr in zip(f_roots, g_roots)])
        else:
            def rhs(t, x):
                xt = tuple(map(float, x))
                return np.array([fr.eval(xt) + gr.eval(xt)
                                 for fr, gr in zip(f_roots, g_roots)])
        return rhs

    return _integrate_core(sys.n, tau, spec, t_end, dt, rhs_factory)


def _comparison_rhs(sys: SystemSpec, config: SolverConfig) -> Callable:
    """rhs(now, delayed) for the comparison system: per component, the grid
    supremum of f_i over the face of [0, now] pinned at i plus the grid
    supremum of g_i over [0, delayed]."""
    if config.refine:
        def rhs(now: np.ndarray, delayed: np.ndarray) -> np.ndarray:
            out = np.empty(sys.n)
            for i in range(sys.n):
                out[i] = (boxopt.sup_face(sys.f[i], now, i + 1,
                                          config.resolution, True).value
                          + boxopt.sup_box(sys.g[i], delayed,
                                           config.resolution, True).value)
            return out
        return rhs

    box_unit, face_units = _unit_grids(sys.n, config.resolution)

    def rhs(now: np.ndarray, delayed: np.ndarray) -> np.ndarray:
        out = np.empty(sys.n)
        for i in range(sys.n):
            face_vals = sys.f[i].eval_many(now * face_units[i])
            box_vals = sys.g[i].eval_many(delayed * box_unit)
            out[i] = face_vals.max() + box_vals.max()
        if not np.isfinite(out).all():
            raise ExprEvalError("non-finite comparison right-hand side")
        return out

    return rhs


def integrate_comparison(sys: SystemSpec, tau: float, phi, t_end: float,
                         dt: float,
                         config: SolverConfig = INTEGRATION_CONFIG) -> Trajectory:
    """Integrate the order-preserving comparison system whose right-hand
    side takes suprema of f and g over order intervals bounded by the
    current and the delayed state respectively."""
    spec = coerce_history(phi, sys.n)
    comparison = _comparison_rhs(sys, config)

    def rhs_factory(lookup):
        def clamp(x: np.ndarray, t: float) -> np.ndarray:
            if (x < -1e-9).any():
                raise IntegrationError(
                    "comparison state left the nonnegative orthant", t, x
                )
            return np.maximum(x, 0.0)

        if tau > 0:
            def rhs(t, x):
                return comparison(clamp(x, t), clamp(lookup(t - tau), t))
        else:
            def rhs(t, x):
                now = clamp(x, t)
                return comparison(now, now)
        return rhs

    return _integrate_core(sys.n, tau, spec, t_end, dt, rhs_factory)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DominanceReport:
    """Largest pointwise excess of the plain trajectory over the comparison
    trajectory on the shared mesh; passes when within tolerance."""

    tau: float
    history: str
    t_end: float
    dt: float
    max_excess: float
    threshold: float
    passed: bool
    t_at_max: float


def check_dominance(sys: SystemSpec, tau: float, phi, t_end: float, dt: float,
                    config: SolverConfig = INTEGRATION_CONFIG) -> DominanceReport:
    """Integrate both systems from the same history on the same mesh and
    compare them componentwise."""
    spec = coerce_history(phi, sys.n)
    plain = integrate(sys, tau, spec, t_end, dt)
    comp = integrate_comparison(sys, tau, spec, t_end, dt, config)
    diff = plain.states - comp.states
    flat = int(np.argmax(diff))
    row = flat // sys.n
    max_excess = float(diff.reshape(-1)[flat])
    bound = float(np.max(np.abs(comp.states)))
    threshold = 1e-6 * (1.0 + bound)
    return DominanceReport(
        tau=float(tau),
        history=spec.label(),
        t_end=float(t_end),
        dt=float(dt),
        max_excess=max_excess,
        threshold=threshold,
        passed=max_excess <= threshold,
        t_at_max=float(plain.mesh[row]),
    )


@dataclass(frozen=True)
class SweepRow:
    tau: float
    history: str
    final_norm: float
    max_negativity: float
    converged: bool
    error: str = ""


@dataclass(frozen=True)
class SweepReport:
    taus: tuple
    histories: tuple
    t_end: float
    dt: float
    conv_tol: float
    rows: tuple

    @property
    def all_converged(self) -> bool:
        return all(row.converged for row in self.rows)

    @property
    def max_negativity(self) -> float:
        finite = [row.max_negativity for row in self.rows if not row.error]
        return max(finite) if finite else math.nan


def delay_sweep(sys: SystemSpec, taus: Sequence[float], phis: Sequence,
                t_end: float = 50.0, dt: float = 0.01,
                conv_tol: float = 1e-3) -> SweepReport:
    """One integration per (tau, history) cell; failures are recorded in
    the row and the sweep continues."""
    if not taus or not phis:
        raise ValueError("taus and phis must be nonempty")
    specs = [coerce_history(phi, sys.n) for phi in phis]
    rows = []
    for tau in taus:
        for spec in specs:
            try:
                traj = integrate(sys, tau, spec, t_end, dt)
            except (IntegrationError, ExprEvalError, HistoryError,
                    ValueError) as err:
                rows.append(SweepRow(
                    tau=float(tau), history=spec.label(),
                    final_norm=math.nan, max_negativity=math.nan,
                    converged=False, error=str(err),
                ))
                continue
            final_norm = traj.final_norm
            rows.append(SweepRow(
                tau=float(tau), history=spec.label(),
                final_norm=final_norm,
                max_negativity=traj.max_negativity(),
                converged=final_norm < conv_tol,
            ))
    return SweepReport(
        taus=tuple(float(t) for t in taus),
        histories=tuple(spec.label() for spec in specs),
        t_end=float(t_end),
        dt=float(dt),
        conv_tol=float(conv_tol),
        rows=tuple(rows),
    )


def trajectory_to_csv(traj: Trajectory, stream) -> None:
    """Write ``t,x1,...,xn`` rows at full double precision."""
    header = "t," + ",".join(f"x{k}" for k in range(1, traj.n + 1))
    stream.write(header + "\n")
    for t, state in zip(traj.mesh, traj.states):
        row = ",".join(f"{v:.17g}" for v in (t, *state))
        stream.write(row + "\n")
