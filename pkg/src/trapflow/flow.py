"""Trajectory integration, variational flow and escape-time classification.

Integration is adaptive Dormand-Prince (scipy's RK45, an embedded order-5
pair with PI step control and quartic dense output).  Momentum
renormalization keeps ray-class integrations representable: whenever the
momentum norm leaves [renorm_low, renorm_high] the momenta are rescaled to
unit norm and the accumulated log factor is recorded per sample; its time
average estimates the frequency growth rate.  For a degree-0 rescaled field
renormalization is exact (trajectories of ray classes are preserved,
including their time parametrization); for a raw field of momentum degree
k != 0 it reparametrizes time, which is recorded in the trajectory metadata.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dfield
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from . import expr as ex
from .expr import Expr

__all__ = [
    "FlowError", "FlowOptions", "RegionSpec", "EventRecord", "Trajectory",
    "integrate", "tangent_flow", "TangentResult", "escape_time",
    "EscapeOutcome", "write_csv",
]

EVENT_TIME_TOL = 1e-9


class FlowError(Exception):
    def __init__(self, message, t=None, state=None):
        self.t = t
        self.state = state
        if t is not None:
            message = f"{message} (t = {t:.6g})"
        super().__init__(message)


@dataclass(frozen=True)
class RegionSpec:
    """A phase-space region {expr op level}, op in {"<", ">"}."""

    name: str
    expr: Expr
    op: str = "<"
    level: float = 0.0

    def inside(self, value: float) -> bool:
        return value < self.level if self.op == "<" else value > self.level


@dataclass(frozen=True)
class EventRecord:
    kind: str
    time: float
    state: np.ndarray


@dataclass
class FlowOptions:
    rtol: float = 1e-9
    atol: float = 1e-12
    max_steps: int = 1_000_000
    max_step: float = np.inf
    renormalize: bool = False
    renorm_low: float = 1e-3
    renorm_high: float = 1e3
    events: tuple[RegionSpec, ...] = ()

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass
class Trajectory:
    """Sampled flow with renormalization bookkeeping and event records.

    Stored momenta at sample k equal the physical ones times exp(-lognorm[k]).
    """

    times: np.ndarray
    states: np.ndarray
    lognorm: np.ndarray
    events: list = dfield(default_factory=list)
    reparametrized: bool = False
    _segments: list = dfield(default_factory=list)  # (t0, t1, OdeSolution, L)

    def at(self, t: float) -> tuple[np.ndarray, float]:
        """Dense state and lognorm at time t (within the integrated span)."""
        for t0, t1, sol, L in self._segments:
            if min(t0, t1) - 1e-12 <= t <= max(t0, t1) + 1e-12:
                return np.asarray(sol(t)), L
        raise FlowError("time outside integrated span", t=t)

    @property
    def end_state(self) -> np.ndarray:
        return self.states[-1]

    def conservation_residual(self, model) -> float:
        """Max relative drift of p along the samples, renormalization undone.

        With L the accumulated log factor and m the fiber degree of p, the
        stored value p(z_k) is compared against exp(-m L_k) p(z_0); the
        residual is normalized by 1 + |exp(-m L_k) p(z_0)|, which reduces to
        the plain |p(t) - p(0)| <= tol (1 + |p(0)|) budget when no
        renormalization occurred.
        """
        p0 = model.p_value(self.states[0])
        worst = 0.0
        for z, L in zip(self.states, self.lognorm):
            target = math.exp(-model.m * (L - self.lognorm[0])) * p0
            r = abs(model.p_value(z) - target) / (1.0 + abs(target))
            worst = max(worst, r)
        return worst


def _momentum_slice(chart):
    return slice(chart.n, 2 * chart.n)


def _make_region_events(regions, chart, params, start_values):
    fns = []
    for idx, spec in enumerate(regions):
        def fn(t, z, spec=spec):
            return ex.evaluate(spec.expr, chart.env(z, params)) - spec.level
        fn.terminal = True
        # crossing toward the inside of the region
        fn.direction = -1.0 if spec.op == "<" else 1.0
        fns.append(fn)
    return fns


def integrate(field, start, tspan, opts: Optional[FlowOptions] = None,
              sample_times: Optional[Sequence[float]] = None) -> Trajectory:
    """Integrate the field from `start` over tspan = (t0, t1).

    Region events in opts.events terminate the run and are recorded with
    their crossing time refined to EVENT_TIME_TOL by bisection on the dense
    output.  Raises FlowError on NaN states, step failure or step budget
    exhaustion.
    """
    opts = opts or FlowOptions()
    chart, params = field.chart, field.params
    t0, t1 = float(tspan[0]), float(tspan[1])
    z = np.array(start, dtype=float)
    if not np.all(np.isfinite(field(z))):
        raise FlowError("field not finite at start", t=t0, state=z)
    if opts.renormalize and getattr(field, "momentum_degree", None) not in (0, None):
        reparametrized = True
    else:
        reparametrized = False

    msl = _momentum_slice(chart)
    L = 0.0
    t = t0
    seg = []
    times = [t0]
    states = [z.copy()]
    lognorms = [L]
    events = []
    steps_used = 0

    def rhs(tt, zz):
        if not np.all(np.isfinite(zz)):
            raise FlowError("NaN/Inf state during integration", t=tt, state=zz)
        return field(zz)

    region_events = list(_make_region_events(opts.events, chart, params, None))
    # check whether we already start inside a region
    for spec in opts.events:
        v = ex.evaluate(spec.expr, chart.env(z, params))
        if spec.inside(v):
            events.append(EventRecord(spec.name, t0, z.copy()))
            return Trajectory(np.array(times), np.array(states), np.array(lognorms),
                              events, reparametrized, seg)

    norm_events = []
    if opts.renormalize:
        def norm_hi(tt, zz):
            return np.log(np.linalg.norm(zz[msl])) - np.log(opts.renorm_high)
        def norm_lo(tt, zz):
            return np.log(np.linalg.norm(zz[msl])) - np.log(opts.renorm_low)
        norm_hi.terminal = True
        norm_lo.terminal = True
        norm_events = [norm_hi, norm_lo]

    while (t1 - t) * np.sign(t1 - t0 or 1.0) > 1e-14:
        sol = solve_ivp(rhs, (t, t1), z, method="RK45", rtol=opts.rtol,
                        atol=opts.atol, max_step=opts.max_step,
                        dense_output=True, events=region_events + norm_events)
        if sol.status == -1:
            raise FlowError("integration step failed: " + sol.message,
                            t=sol.t[-1], state=sol.y[:, -1])
        steps_used += len(sol.t)
        if steps_used > opts.max_steps:
            raise FlowError("max step budget exceeded", t=sol.t[-1])
        seg.append((sol.t[0], sol.t[-1], sol.sol, L))
        if sample_times is None:
            times.extend(sol.t[1:])
            states.extend(sol.y[:, 1:].T.copy())
            lognorms.extend([L] * (len(sol.t) - 1))
        t = sol.t[-1]
        z = sol.y[:, -1].copy()
        if sol.status == 1:
            hit = [i for i, te in enumerate(sol.t_events) if len(te)]
            k = hit[0]
            if k < len(region_events):
                spec = opts.events[k]
                te = _bisect_event(sol.sol, sol.t[0], sol.t_events[k][0],
                                   lambda zz: ex.evaluate(spec.expr, chart.env(zz, params)) - spec.level)
                ze = np.asarray(sol.sol(te))
                events.append(EventRecord(spec.name, te, ze))
                if sample_times is None:
                    times[-1], states[-1], lognorms[-1] = te, ze, L
                break
            # momentum renormalization
            c = np.linalg.norm(z[msl])
            z[msl] /= c
            L += np.log(c)
            continue
        break

    if sample_times is not None:
        times, states, lognorms = [], [], []
        for ts in sample_times:
            zz, ll = _dense_eval(seg, ts)
            times.append(ts)
            states.append(zz)
            lognorms.append(ll)
    return Trajectory(np.array(times), np.array(states, dtype=float),
                      np.array(lognorms), events, reparametrized, seg)


def _dense_eval(segments, t):
    for t0, t1, sol, L in segments:
        if min(t0, t1) - 1e-12 <= t <= max(t0, t1) + 1e-12:
            return np.asarray(sol(t)), L
    raise FlowError("sample time outside integrated span", t=t)


def _bisect_event(sol, ta, tb, g):
    """Refine a sign change of g(sol(t)) on [ta, tb] to EVENT_TIME_TOL."""
    ga = g(np.asarray(sol(ta)))
    if ga == 0.0:
        return ta
    lo, hi = ta, tb
    glo = ga
    # scipy reports the event time; widen a hair to guarantee a bracket
    ghi = g(np.asarray(sol(hi)))
    if glo * ghi > 0:
        return tb
    while abs(hi - lo) > EVENT_TIME_TOL:
        mid = 0.5 * (lo + hi)
        gm = g(np.asarray(sol(mid)))
        if gm == 0.0:
            return mid
        if glo * gm < 0:
            hi = mid
        else:
            lo, glo = mid, gm
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Variational (tangent) flow


@dataclass
class TangentResult:
    monodromy: np.ndarray            # dim x k matrix of transported vectors
    base: Trajectory
    rdiag_logs: np.ndarray           # (windows, k) QR log|R_ii| history
    window_times: np.ndarray
    exponents: np.ndarray            # Benettin estimates sum(logs)/T


def tangent_flow(field, start, tspan, opts: Optional[FlowOptions] = None,
                 basis: Optional[np.ndarray] = None,
                 reorth_interval: Optional[float] = None,
                 project: Optional[Callable] = None) -> TangentResult:
    """Integrate the variational equations along the base trajectory.

    basis columns are the transported tangent vectors (defaults to the
    identity, i.e. the full monodromy).  With reorth_interval set, columns
    are QR-reorthonormalized at that spacing and log|R_ii| accumulated,
    giving finite-time Lyapunov-type exponents; `project(V, z)` is applied
    before each QR and may be used to keep the columns inside an invariant
    subbundle.  Without it a single sweep returns the plain monodromy.
    """
    opts = opts or FlowOptions()
    chart = field.chart
    dim = chart.dim
    z0 = np.array(start, dtype=float)
    V = np.eye(dim) if basis is None else np.array(basis, dtype=float).reshape(dim, -1)
    k = V.shape[1]
    t0, t1 = float(tspan[0]), float(tspan[1])

    def rhs(tt, y):
        z = y[:dim]
        Vf = y[dim:].reshape(dim, k)
        F, J = field.value_and_jacobian(z)
        return np.concatenate([F, (J @ Vf).ravel()])

    if reorth_interval is None:
        windows = [t1]
    else:
        windows = list(np.arange(t0, t1, reorth_interval * np.sign(t1 - t0)))[1:]
        if not windows or abs(windows[-1] - t1) > 1e-12:
            windows.append(t1)
    t = t0
    z = z0
    logs = []
    wtimes = []
    base_times = [t0]
    base_states = [z0.copy()]
    total_logs = np.zeros(k)
    for tw in windows:
        if abs(tw - t) < 1e-13:
            continue
        sol = solve_ivp(rhs, (t, tw), np.concatenate([z, V.ravel()]),
                        method="RK45", rtol=opts.rtol, atol=opts.atol,
                        max_step=opts.max_step)
        if sol.status != 0:
            raise FlowError("tangent flow failed: " + sol.message, t=sol.t[-1])
        y = sol.y[:, -1]
        z = y[:dim].copy()
        V = y[dim:].reshape(dim, k).copy()
        base_times.extend(sol.t[1:])
        base_states.extend(sol.y[:dim, 1:].T.copy())
        t = tw
        if reorth_interval is not None:
            if project is not None:
                V = project(V, z)
            Q, R = np.linalg.qr(V)
            d = np.abs(np.diag(R))
            d = np.where(d == 0, np.finfo(float).tiny, d)
            logs.append(np.log(d))
            total_logs += np.log(d)
            wtimes.append(tw)
            V = Q
    T = abs(t1 - t0)
    exponents = total_logs / T if (reorth_interval is not None and T > 0) else np.zeros(k)
    base = Trajectory(np.array(base_times), np.array(base_states),
                      np.zeros(len(base_times)))
    return TangentResult(V, base, np.array(logs) if logs else np.zeros((0, k)),
                         np.array(wtimes), exponents)


# ---------------------------------------------------------------------------
# Escape-time classification


@dataclass
class EscapeOutcome:
    reached: bool
    region: Optional[str]
    time: Optional[float]
    horizon: float
    trajectory: Trajectory

    @property
    def trapped(self) -> bool:
        return not self.reached


def escape_time(field, start, regions: Sequence[RegionSpec], t_max: float,
                opts: Optional[FlowOptions] = None) -> EscapeOutcome:
    """First hit of any control region, or trapped up to t_max."""
    opts = opts or FlowOptions()
    run = FlowOptions(rtol=opts.rtol, atol=opts.atol, max_steps=opts.max_steps,
                      max_step=opts.max_step, renormalize=opts.renormalize,
                      renorm_low=opts.renorm_low, renorm_high=opts.renorm_high,
                      events=tuple(regions))
    traj = integrate(field, start, (0.0, t_max), run)
    for evr in traj.events:
        return EscapeOutcome(True, evr.kind, evr.time, t_max, traj)
    return EscapeOutcome(False, None, None, t_max, traj)


# ---------------------------------------------------------------------------
# Export


def write_csv(traj: Trajectory, chart, path) -> None:
    """CSV export: header t,<coords...>,lognorm with 17 significant digits."""
    with open(path, "w") as fh:
        fh.write("t," + ",".join(chart.coords) + ",lognorm\n")
        for t, z, L in zip(traj.times, traj.states, traj.lognorm):
            row = [f"{t:.17g}"] + [f"{v:.17g}" for v in z] + [f"{L:.17g}"]
            fh.write(",".join(row) + "\n")
