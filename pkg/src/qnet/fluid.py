"""Fluid counterpart of the discarding network: piecewise-constant rates
and an event-driven piecewise-linear integrator.

Within a region of state space -- a fixed pattern of empty / interior /
at-threshold / above-threshold queues along with which arrival clocks and
service gates are active -- every admission, service and departure rate is
constant, so trajectories are piecewise linear and can be integrated
exactly from boundary event to boundary event.

Boundary states are resolved deterministically:

* a queue sitting exactly at the threshold pins there ("sliding") with the
  flow's admission rate chosen as the largest value in [0, alpha_f] that
  keeps the binding queue's derivative nonpositive; if even zero admission
  cannot hold it, the queue escapes upward and the flow admits nothing;
* an empty queue whose input is below its fair share departs at exactly
  its input rate and stays empty, with the surplus capacity redistributed
  among the station's other queues (iterative water-filling).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .network import NetworkSpec

__all__ = [
    "FluidState",
    "RateVector",
    "Regime",
    "FluidTrajectory",
    "FluidRateError",
    "ZenoError",
    "solve_rates",
    "integrate",
    "departure_rates_at",
]

# queue status codes
EMPTY, INTERIOR, AT_THRESHOLD, ABOVE = "empty", "interior", "at_threshold", "above_threshold"

_RATE_EPS = 1e-9      # rates smaller than this are treated as zero drift
_ROOT_TOL = 1e-13     # target residual for sliding admission roots
_FILL_TOL = 1e-14     # convergence of the service-allocation fixed point


class FluidRateError(RuntimeError):
    """The rate fixed point (water-filling or sliding admits) did not settle."""


class ZenoError(RuntimeError):
    """Breakpoints accumulated in a vanishing time span."""


@dataclass
class FluidState:
    q: np.ndarray          # per-class fluid queue contents, >= 0
    u: np.ndarray          # per-flow residual until arrivals activate
    v: np.ndarray          # per-class residual initial service gate
    hbar: float            # common discarding threshold, > 0

    @classmethod
    def initial(cls, spec: NetworkSpec, q, hbar: float, u=None, v=None) -> "FluidState":
        q = np.asarray(q, dtype=float).copy()
        if q.shape != (spec.num_classes,):
            raise ValueError("q must have one entry per class")
        u = np.zeros(spec.num_flows) if u is None else np.asarray(u, dtype=float).copy()
        v = np.zeros(spec.num_classes) if v is None else np.asarray(v, dtype=float).copy()
        if np.any(q < 0) or np.any(u < 0) or np.any(v < 0):
            raise ValueError("fluid coordinates must be nonnegative")
        return cls(q=q, u=u, v=v, hbar=float(hbar))

    def copy(self) -> "FluidState":
        return FluidState(self.q.copy(), self.u.copy(), self.v.copy(), self.hbar)


@dataclass
class Regime:
    """Bookkeeping of which piecewise dynamics apply at a state."""

    queue_status: tuple
    arrival_active: tuple   # per flow: t has passed the residual u
    service_active: tuple   # per class: the initial service gate has opened

    @classmethod
    def of(cls, state: FluidState, spec: NetworkSpec) -> "Regime":
        atol = 1e-10 * max(1.0, state.hbar)
        status = []
        for qk in state.q:
            if qk <= atol:
                status.append(EMPTY)
            elif qk >= state.hbar + atol:
                status.append(ABOVE)
            elif qk >= state.hbar - atol:
                status.append(AT_THRESHOLD)
            else:
                status.append(INTERIOR)
        return cls(
            queue_status=tuple(status),
            arrival_active=tuple(bool(x <= atol) for x in state.u),
            service_active=tuple(bool(x <= atol) for x in state.v),
        )


@dataclass
class RateVector:
    admit: np.ndarray     # per flow, in [0, alpha_f]
    depart: np.ndarray    # per class
    busy: np.ndarray      # per class, server time fraction in [0, 1]
    idle: np.ndarray      # per station, 1 - sum of busy fractions
    arrival: np.ndarray   # per class inflow: routed departures + admissions

    @property
    def q_dot(self) -> np.ndarray:
        d = self.arrival - self.depart
        d[np.abs(d) < _RATE_EPS] = 0.0
        return d


# ---------------------------------------------------------------------------
# service allocation (weighted water-filling across each station)


class _Ctx:
    """Per-spec arrays used by the rate solver."""

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        K = spec.num_classes
        self.K = K
        self.F = spec.num_flows
        self.alpha = spec.arrival_rates
        self.mu = spec.service_rates
        self.w = spec.class_weights()
        self.parent = np.full(K, -1, dtype=int)
        nxt = spec.next_class
        for k in range(K):
            if nxt[k] >= 0:
                self.parent[nxt[k]] = k
        self.ingress_flow = np.full(K, -1, dtype=int)
        for f in range(self.F):
            self.ingress_flow[spec.flow_classes(f)[0]] = f
        self.stations = [
            [k for k in spec.station_classes(i) if k not in spec.idle_slots]
            for i in range(spec.num_stations)
        ]
        self.flow_classes = [spec.flow_classes(f) for f in range(self.F)]


def _fill_station(ctx, members, backlogged, gate_open, inflow, depart, busy):
    """Water-fill one station's capacity; writes depart/busy rows in place.

    A class with a pending residual service has a job occupying the
    station's single non-preemptive server, so that server works on it at
    full rate (emitting no departures) and every other class at the
    station is blocked until the residual is gone.  Otherwise backlogged
    queues share capacity so their departure rates stay in weight
    proportion, and an empty queue whose input is below its share is
    served at exactly its input.
    """
    w, mu = ctx.w, ctx.mu
    gated = [k for k in members if not gate_open[k]]
    if gated:
        busy[gated[0]] = 1.0
        return
    open_ = [k for k in members if backlogged[k] or inflow[k] > 0.0]
    cap = 1.0
    limited = set()
    share = 0.0
    while True:
        rest = [k for k in open_ if k not in limited]
        if not rest:
            share = 0.0
            break
        denom = sum(w[k] / mu[k] for k in rest)
        used = sum(inflow[k] / mu[k] for k in limited)
        share = max(0.0, (cap - used) / denom)
        movers = [
            k for k in rest
            if not backlogged[k] and inflow[k] < w[k] * share - 1e-15
        ]
        if not movers:
            break
        limited.update(movers)
    for k in open_:
        if k in limited:
            depart[k] = inflow[k]
        else:
            depart[k] = w[k] * share
        busy[k] = depart[k] / mu[k]


def _propagate_inflow(ctx, admit, depart):
    inflow = np.zeros(ctx.K)
    for k in range(ctx.K):
        f = ctx.ingress_flow[k]
        if f >= 0:
            inflow[k] += admit[f]
        p = ctx.parent[k]
        if p >= 0:
            inflow[k] += depart[p]
    return inflow

def _allocate(ctx, admit, backlogged, gate_open):
    """Fixed point of (inflow propagation, per-station water-filling).

    Returns (depart, busy, inflow).  Raises FluidRateError if the
    iteration fails to settle; for loop-free routing it terminates in a
    handful of rounds because upstream rates finalize hop by hop.
    """
    depart = np.zeros(ctx.K)
    max_rounds = 4 * ctx.K + 16
    for _ in range(max_rounds):
        inflow = _propagate_inflow(ctx, admit, depart)
        new_depart = np.zeros(ctx.K)
        busy = np.zeros(ctx.K)
        for members in ctx.stations:
            if members:
                _fill_station(ctx, members, backlogged, gate_open, inflow, new_depart, busy)
        delta = float(np.max(np.abs(new_depart - depart))) if ctx.K else 0.0
        depart = new_depart
        if delta <= _FILL_TOL:
            inflow = _propagate_inflow(ctx, admit, depart)
            return depart, busy, inflow
    raise FluidRateError("service water-filling did not converge")


# ---------------------------------------------------------------------------
# sliding admission rates


def _pinned_residual(ctx, admit, backlogged, gate_open, pinned):
    """max over pinned classes of (inflow - depart): must be <= 0 to hold
    every pinned queue at its threshold."""
    depart, _busy, inflow = _allocate(ctx, admit, backlogged, gate_open)
    return max(inflow[k] - depart[k] for k in pinned)


def _solve_admit_root(ctx, admit, f, alpha_f, backlogged, gate_open, pinned):
    """Largest a in [0, alpha_f] keeping the pinned residual <= 0.

    The residual is piecewise linear in a but may be flat at zero over a
    range (a pinned queue fed from a backlogged upstream queue does not
    see the admission rate at all), so the search is a feasibility
    bisection for the boundary of {a: g(a) <= 0}, with a secant step
    whenever the lower bracket is strictly negative.
    """
    def g(a):
        trial = admit.copy()
        trial[f] = a
        return _pinned_residual(ctx, trial, backlogged, gate_open, pinned)

    g_hi = g(alpha_f)
    if g_hi <= _ROOT_TOL:
        return alpha_f
    g_lo = g(0.0)
    if g_lo > _ROOT_TOL:
        return 0.0  # not pinnable: the queue escapes upward, admit nothing
    lo, hi = 0.0, alpha_f
    while hi - lo > 1e-15 * max(1.0, alpha_f):
        if g_lo < -_ROOT_TOL and g_hi > g_lo:
            mid = lo - g_lo * (hi - lo) / (g_hi - g_lo)
            if not (lo < mid < hi):
                mid = 0.5 * (lo + hi)
        else:
            mid = 0.5 * (lo + hi)
        g_mid = g(mid)
        if g_mid <= _ROOT_TOL:
            lo, g_lo = mid, g_mid
        else:
            hi, g_hi = mid, g_mid
    return lo


def solve_rates(state: FluidState, spec: NetworkSpec) -> RateVector:
    """Instantaneous rate vector of the fluid model at ``state``.

    Admission: a flow admits at its full arrival rate while every one of
    its queues is strictly below the threshold (and its arrival clock is
    active), admits nothing while any queue is strictly above, and on the
    threshold boundary receives the deterministic sliding rate described
    in the module docstring.  Service follows weighted water-filling with
    work conservation per station.
    """
    ctx = _Ctx(spec)
    hbar = state.hbar
    atol = 1e-10 * max(1.0, hbar)
    q, u, v = state.q, state.u, state.v

    backlogged = (q > atol) | (v > atol)
    gate_open = v <= atol
    for members in ctx.stations:
        if sum(1 for k in members if not gate_open[k]) > 1:
            raise ValueError(
                "at most one class per station may carry a residual service"
            )
    above = q >= hbar + atol
    at_thr = (~above) & (q >= hbar - atol)

    admit = np.zeros(ctx.F)
    sliding = []
    for f in range(ctx.F):
        if u[f] > atol:
            continue  # arrival clock not yet active
        ks = ctx.flow_classes[f]
        if any(above[k] for k in ks):
            continue
        admit[f] = ctx.alpha[f]
        pinned = [k for k in ks if at_thr[k]]
        if pinned:
            sliding.append((f, pinned))

    if sliding:
        for _pass in range(2 * len(sliding) + 6):
            moved = 0.0
            for f, pinned in sliding:
                new = _solve_admit_root(
                    ctx, admit, f, ctx.alpha[f], backlogged, gate_open, pinned
                )
                moved = max(moved, abs(new - admit[f]))
                admit[f] = new
            if moved <= 1e-12:
                break
        else:
            raise FluidRateError("sliding admission rates did not stabilize")

    depart, busy, inflow = _allocate(ctx, admit, backlogged, gate_open)
    idle = np.ones(spec.num_stations)
    for i, members in enumerate(ctx.stations):
        idle[i] -= sum(busy[k] for k in members)
    idle[np.abs(idle) < 1e-12] = 0.0
    if np.any(idle < 0):
        raise FluidRateError("station busy fractions exceed capacity")
    return RateVector(admit=admit, depart=depart, busy=busy, idle=idle, arrival=inflow)


def departure_rates_at(state: FluidState, spec: NetworkSpec):
    """Per-class departure rates and per-flow rates at the egress classes."""
    rv = solve_rates(state, spec)
    flow_rates = np.array([rv.depart[spec.egress_class(f)] for f in range(spec.num_flows)])
    return rv.depart, flow_rates


# ---------------------------------------------------------------------------
# trajectory integration


@dataclass
class FluidTrajectory:
    """Piecewise-linear fluid path with its breakpoints.

    Row i of the rate arrays holds the constant rates on the segment
    starting at ``times[i]``; the final row repeats the rates at the last
    recorded state.  ``absorbed_at`` is the first breakpoint at which the
    state was stationary with no pending clock or gate events (the
    trajectory then stays there for all later times).
    """

    hbar: float
    times: np.ndarray
    q: np.ndarray
    u: np.ndarray
    v: np.ndarray
    admit: np.ndarray
    depart: np.ndarray
    busy: np.ndarray
    idle: np.ndarray
    cum_arrival: np.ndarray
    cum_depart: np.ndarray
    cum_admit: np.ndarray
    absorbed_at: Optional[float] = None
    pinned: list = field(default_factory=list)  # per segment: class ids held at hbar

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def _segment(self, t: float) -> int:
        i = int(np.searchsorted(self.times, t, side="right") - 1)
        return min(max(i, 0), len(self.times) - 2) if len(self.times) > 1 else 0

    def state_at(self, t: float) -> FluidState:
        if not 0.0 <= t <= self.horizon + 1e-12:
            raise ValueError("t outside the integrated horizon")
        if len(self.times) == 1 or t >= self.horizon:
            i = len(self.times) - 1
            return FluidState(self.q[i].copy(), self.u[i].copy(), self.v[i].copy(), self.hbar)
        i = self._segment(t)
        dt = t - self.times[i]
        span = self.times[i + 1] - self.times[i]
        frac = 0.0 if span == 0 else dt / span
        q = self.q[i] + frac * (self.q[i + 1] - self.q[i])
        u = self.u[i] + frac * (self.u[i + 1] - self.u[i])
        v = self.v[i] + frac * (self.v[i + 1] - self.v[i])
        return FluidState(q, u, v, self.hbar)

    def q_at(self, t: float) -> np.ndarray:
        return self.state_at(t).q


def integrate(
    state0: FluidState,
    spec: NetworkSpec,
    horizon: float,
    *,
    max_breakpoints: int = 20000,
    zeno_window: int = 64,
) -> FluidTrajectory:
    """Integrate the fluid model from ``state0`` for ``horizon`` time units.

    Within a regime the rates are constant, so the state is advanced
    linearly to the earliest boundary event: a queue reaching 0 or the
    threshold (from either side), an arrival clock running out, or a
    service gate opening.  Rates are re-solved at every breakpoint.  Once
    the state is stationary with no pending events it is absorbing and the
    trajectory is extended to the horizon in one segment.
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    hbar = state0.hbar
    atol = 1e-10 * max(1.0, hbar)
    snap = 1e-9 * max(1.0, hbar)

    q = state0.q.astype(float).copy()
    u = state0.u.astype(float).copy()
    v = state0.v.astype(float).copy()
    K, F = len(q), len(u)

    times = [0.0]
    qs, us, vs = [q.copy()], [u.copy()], [v.copy()]
    admits, departs, busys, idles = [], [], [], []
    cum_a = [np.zeros(K)]
    cum_d = [np.zeros(K)]
    cum_l = [np.zeros(F)]
    pinned_per_seg = []
    absorbed_at = None

    t = 0.0
    while True:
        state = FluidState(q, u, v, hbar)
        rv = solve_rates(state, spec)
        qdot = rv.arrival - rv.depart
        qdot[np.abs(qdot) < _RATE_EPS] = 0.0

        candidates = []
        for k in range(K):
            if qdot[k] < 0 and q[k] > atol:
                candidates.append(q[k] / -qdot[k])
                if q[k] > hbar + atol:
                    candidates.append((q[k] - hbar) / -qdot[k])
            elif qdot[k] > 0 and q[k] < hbar - atol:
                candidates.append((hbar - q[k]) / qdot[k])
        for f in range(F):
            if u[f] > atol:
                candidates.append(u[f])
        for k in range(K):
            if v[k] > atol and rv.busy[k] > _RATE_EPS:
                candidates.append(v[k] / rv.busy[k])

        stationary = (
            not np.any(qdot != 0.0)
            and not np.any(u > atol)
            and not np.any(v > atol)
        )
        remaining = horizon - t
        if stationary and absorbed_at is None:
            absorbed_at = t
        dt = min(candidates) if candidates else np.inf
        dt = min(dt, remaining)

        pinned_now = [
            k for k in range(K)
            if abs(q[k] - hbar) <= atol and qdot[k] == 0.0
        ]

        if remaining <= 0 or (stationary and remaining < np.inf):
            # final segment: hold the state to the horizon
            if remaining > 0:
                times.append(horizon)
                qs.append(q.copy()); us.append(u.copy()); vs.append(v.copy())
                admits.append(rv.admit); departs.append(rv.depart)
                busys.append(rv.busy); idles.append(rv.idle)
                cum_a.append(cum_a[-1] + rv.arrival * remaining)
                cum_d.append(cum_d[-1] + rv.depart * remaining)
                cum_l.append(cum_l[-1] + rv.admit * remaining)
                pinned_per_seg.append(pinned_now)
            admits.append(rv.admit); departs.append(rv.depart)
            busys.append(rv.busy); idles.append(rv.idle)
            break

        # advance one segment
        q = q + qdot * dt
        u = np.maximum(u - dt, 0.0)
        v = np.maximum(v - rv.busy * dt, 0.0)
        # snap coordinates that landed on a boundary
        q[np.abs(q) < snap] = 0.0
        q[np.abs(q - hbar) < snap] = hbar
        u[u < snap] = 0.0
        v[v < snap] = 0.0
        t = t + dt

        times.append(t)
        qs.append(q.copy()); us.append(u.copy()); vs.append(v.copy())
        admits.append(rv.admit); departs.append(rv.depart)
        busys.append(rv.busy); idles.append(rv.idle)
        cum_a.append(cum_a[-1] + rv.arrival * dt)
        cum_d.append(cum_d[-1] + rv.depart * dt)
        cum_l.append(cum_l[-1] + rv.admit * dt)
        pinned_per_seg.append(pinned_now)

        if len(times) > max_breakpoints:
            raise ZenoError(f"more than {max_breakpoints} breakpoints before t={t:.6g}")
        if len(times) > zeno_window:
            span = times[-1] - times[-zeno_window]
            if span < 1e-12 * max(1.0, horizon):
                raise ZenoError(
                    f"{zeno_window} breakpoints within {span:.3e} time units at t={t:.6g}"
                )

    return FluidTrajectory(
        hbar=hbar,
        times=np.array(times),
        q=np.array(qs),
        u=np.array(us),
        v=np.array(vs),
        admit=np.array(admits),
        depart=np.array(departs),
        busy=np.array(busys),
        idle=np.array(idles),
        cum_arrival=np.array(cum_a),
        cum_depart=np.array(cum_d),
        cum_admit=np.array(cum_l),
        absorbed_at=absorbed_at,
        pinned=pinned_per_seg,
    )
