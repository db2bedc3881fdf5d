"""Event-driven simulation of the stochastic network with ingress discarding.

One replication is a single-threaded loop over an event calendar holding
pending flow arrivals and service completions.  Simultaneous events fire
in a fixed order (completions before arrivals, then by class/flow id), so
a replication is a deterministic function of (spec, n, seed, horizon).

Discarding: an exogenous flow-f arrival is admitted iff every discarding
flag along the flow's route is off as of the instant just before the
arrival, so the arrival that pushes a queue to the threshold is itself
admitted and only later arrivals are dropped.  Flags switch on when a
queue reaches n*h and off when it drains to n*h - gap.

Scheduling: weighted round robin over a fixed per-station visit cycle
(w_f visits per cycle per flow), skipping empty queues, non-preemptive,
head of line only.  The cycle cursor persists across idle periods.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .distributions import make_streams
from .network import NetworkSpec

__all__ = [
    "SimTrace",
    "ScaledPath",
    "Simulation",
    "SimulationError",
    "EventBudgetExceeded",
    "InvariantViolation",
    "EmptyWindowError",
    "run",
    "scaled_trajectory",
]


class SimulationError(RuntimeError):
    pass


class EventBudgetExceeded(SimulationError):
    pass


class InvariantViolation(SimulationError):
    pass


class EmptyWindowError(SimulationError):
    pass


@dataclass
class SimTrace:
    """Counters and windowed rate estimates from one replication."""

    n: float
    seed: int
    horizon: float
    warmup_frac: float
    exogenous: np.ndarray       # E, per flow
    admitted: np.ndarray        # thinned arrivals, per flow
    arrivals: np.ndarray        # A, per class
    departures: np.ndarray      # D, per class
    busy_time: np.ndarray       # T, per class
    idle_time: np.ndarray       # I, per station
    q_final: np.ndarray
    flags_final: np.ndarray
    flow_depart_rates: np.ndarray   # egress departures over the window
    flow_admit_rates: np.ndarray
    window: tuple
    event_count: int
    sample_times: Optional[np.ndarray] = None
    sample_q: Optional[np.ndarray] = None
    sample_d: Optional[np.ndarray] = None
    sample_admitted: Optional[np.ndarray] = None


@dataclass
class ScaledPath:
    """Fluid-scale view of a sampled queue path: t -> Q(n t) / n."""

    times: np.ndarray
    q: np.ndarray

    def at(self, t: float) -> np.ndarray:
        i = int(np.searchsorted(self.times, t, side="right") - 1)
        i = min(max(i, 0), len(self.times) - 1)
        return self.q[i]


# event kinds: completions fire before arrivals at equal times
_COMPLETION, _ARRIVAL = 0, 1


class Simulation:
    """One seeded replication.  State is exposed for white-box tests."""

    def __init__(self, spec: NetworkSpec, n: float, seed: int, *, initial_queues=None):
        if n <= 0:
            raise ValueError("threshold scale n must be positive")
        self.spec = spec
        self.n = float(n)
        self.seed = int(seed)
        self.nh = float(n) * spec.threshold_base
        self.low = self.nh - spec.hysteresis_gap

        K, F, d = spec.num_classes, spec.num_flows, spec.num_stations
        self.arr_streams, self.svc_streams = make_streams(spec, seed)
        self.flow_classes = [list(spec.flow_classes(f)) for f in range(F)]
        self.ingress = [ks[0] for ks in self.flow_classes]
        self.egress = [ks[-1] for ks in self.flow_classes]
        self.next_class = [int(x) for x in spec.next_class]
        self.station_of = list(spec.station_of)
        self.cycles = [list(spec.visit_cycle(i)) for i in range(d)]
        self.station_members = [list(spec.station_classes(i)) for i in range(d)]

        self.t = 0.0
        self.q = [0] * K
        self.flags = [0] * K
        self.e = [0] * F
        self.lam = [0] * F
        self.a = [0] * K
        self.d = [0] * K
        self.busy = [0.0] * K           # cumulative busy time T
        self.busy_class = [-1] * d      # class in service, -1 if idle
        self.service_start = [0.0] * d
        self.cursor = [0] * d
        self.event_count = 0
        self.heap = []

        if initial_queues is not None:
            init = [int(x) for x in initial_queues]
            if len(init) != K or any(x < 0 for x in init):
                raise ValueError("initial_queues must be nonnegative, one per class")
            self.q = init
            for k in range(K):
                if self.q[k] >= self.nh:
                    self.flags[k] = 1
        self.q0 = list(self.q)

        for f in range(F):
            heapq.heappush(self.heap, (self.arr_streams[f].draw(), _ARRIVAL, f))
        for i in range(d):
            self._start_service(i, 0.0)

        # previous values for monotonicity checks
        self._prev_busy = list(self.busy)
        self._prev_idle = [0.0] * d

    # -- state views -------------------------------------------------------

    def residual_arrivals(self) -> np.ndarray:
        """U: per-flow time until the next exogenous arrival."""
        u = np.zeros(self.spec.num_flows)
        for t_ev, kind, idx in self.heap:
            if kind == _ARRIVAL:
                u[idx] = max(t_ev - self.t, 0.0)
        return u

    def residual_services(self) -> np.ndarray:
        """V: per-class remaining service time, 0 for classes not in service."""
        v = np.zeros(self.spec.num_classes)
        in_service = set(self.busy_class) - {-1}
        for t_ev, kind, idx in self.heap:
            if kind == _COMPLETION and idx in in_service:
                v[idx] = max(t_ev - self.t, 0.0)
        return v

    # -- engine internals ------------------------------------------------

    def _start_service(self, i: int, t: float) -> None:
        cyc = self.cycles[i]
        if not cyc:
            return
        q = self.q
        cur = self.cursor[i]
        L = len(cyc)
        for _ in range(L):
            c = cyc[cur]
            cur += 1
            if cur == L:
                cur = 0
            if q[c] > 0:
                self.cursor[i] = cur
                self.busy_class[i] = c
                self.service_start[i] = t
                heapq.heappush(self.heap, (t + self.svc_streams[c].draw(), _COMPLETION, c))
                return
        self.busy_class[i] = -1  # idle; cursor stays where it was

    def _on_arrival(self, f: int, t: float) -> None:
        self.e[f] += 1
        heapq.heappush(self.heap, (t + self.arr_streams[f].draw(), _ARRIVAL, f))
        flags = self.flags
        for k in self.flow_classes[f]:
            if flags[k]:
                return  # discarded: some queue of the flow is above threshold
        k0 = self.ingress[f]
        self.q[k0] += 1
        self.a[k0] += 1
        self.lam[f] += 1
        if self.q[k0] >= self.nh:
            flags[k0] = 1
        i = self.station_of[k0]
        if self.busy_class[i] < 0:
            if __debug__ and sum(self.q[c] for c in self.station_members[i]) != 1:
                raise InvariantViolation(f"station {i} idle while backlogged")
            self._start_service(i, t)

    def _on_completion(self, k: int, t: float) -> None:
        i = self.station_of[k]
        self.busy[k] += t - self.service_start[i]
        self.d[k] += 1
        self.q[k] -= 1
        if self.q[k] >= self.nh:
            self.flags[k] = 1
        elif self.q[k] <= self.low:
            self.flags[k] = 0
        l = self.next_class[k]
        if l >= 0:
            self.q[l] += 1
            self.a[l] += 1
            if self.q[l] >= self.nh:
                self.flags[l] = 1
            j = self.station_of[l]
            if self.busy_class[j] < 0:
                self._start_service(j, t)
        self.busy_class[i] = -1
        self._start_service(i, t)

    # -- invariant checking ------------------------------------------------

    def check_invariants(self, t: float) -> None:
        """Verify the flow/queue/idle-time identities at time t.

        Checks the arrival decomposition A = P^T D + Lambda, the queue
        balance Q = Q(0) + A - D with Q >= 0, monotone busy and idle
        times, the thinning bound, work conservation (no station idle
        while backlogged) and flag/threshold consistency.
        """
        spec = self.spec
        K = spec.num_classes
        q = np.array(self.q)
        a = np.array(self.a)
        d = np.array(self.d)
        lam_k = np.zeros(K, dtype=int)
        for f in range(spec.num_flows):
            lam_k[self.ingress[f]] = self.lam[f]
        routed = spec.routing_matrix.T.astype(int) @ d + lam_k
        if not np.array_equal(a, routed):
            raise InvariantViolation("A != P^T D + Lambda")
        if not np.array_equal(q, np.array(self.q0) + a - d):
            raise InvariantViolation("Q != Q(0) + A - D")
        if np.any(q < 0):
            raise InvariantViolation("negative queue length")
        busy = list(self.busy)
        for i in range(spec.num_stations):
            c = self.busy_class[i]
            if c >= 0:
                busy[c] += t - self.service_start[i]
        busy = np.array(busy)
        if np.any(busy < np.array(self._prev_busy) - 1e-9):
            raise InvariantViolation("busy time decreased")
        idle = t - spec.constituency.astype(float) @ busy
        if np.any(idle < -1e-9):
            raise InvariantViolation("negative idle time")
        if np.any(idle < np.array(self._prev_idle) - 1e-9):
            raise InvariantViolation("idle time decreased")
        for f in range(spec.num_flows):
            if self.lam[f] > self.e[f]:
                raise InvariantViolation("admitted more than arrived")
            # one interarrival is always drawn ahead of the pending event
            if self.e[f] != self.arr_streams[f].count - 1:
                raise InvariantViolation("arrival count disagrees with its stream")
        # departures are the composition of the service counting process
        # with the cumulative busy time: every departure is one drawn
        # service, with at most one draw in progress per station
        in_service = set(self.busy_class) - {-1}
        for k in range(K):
            expect = self.svc_streams[k].count - (1 if k in in_service else 0)
            if self.d[k] != expect:
                raise InvariantViolation("departure count disagrees with its stream")
        for i in range(spec.num_stations):
            if self.busy_class[i] < 0 and any(self.q[c] > 0 for c in self.station_members[i]):
                raise InvariantViolation(f"station {i} idle while backlogged")
        for k in range(K):
            if self.q[k] >= self.nh and not self.flags[k]:
                raise InvariantViolation(f"flag {k} off at/above threshold")
            if self.q[k] < self.low and self.flags[k]:
                raise InvariantViolation(f"flag {k} on below the lower threshold")
        self._prev_busy = [float(x) for x in busy]
        self._prev_idle = [float(x) for x in idle]

    # -- main loop -----------------------------------------------------------

    def run(
        self,
        horizon: float,
        *,
        warmup_frac: float = 0.2,
        sample_times=None,
        invariant_checks: str = "sparse",
        event_budget: Optional[int] = None,
    ) -> SimTrace:
        if horizon <= 0 or not 0.0 <= warmup_frac < 1.0:
            raise EmptyWindowError("empty measurement window")
        if getattr(self, "_ran", False):
            raise SimulationError("a Simulation is single-use; build a new one")
        self._ran = True
        check_every = {"off": 0, "sparse": 1000, "every": 1}[invariant_checks]
        t_warm = warmup_frac * horizon
        warm_d = None
        warm_lam = None

        stimes = None
        si = 0
        s_q = s_d = s_lam = None
        if sample_times is not None:
            stimes = np.asarray(sample_times, dtype=float)
            if np.any(stimes < 0) or np.any(stimes > horizon):
                raise SimulationError("sample times outside the horizon")
            s_q = np.empty((len(stimes), self.spec.num_classes), dtype=np.int64)
            s_d = np.empty_like(s_q)
            s_lam = np.empty((len(stimes), self.spec.num_flows), dtype=np.int64)

        heap = self.heap
        events = 0
        while heap:
            t_ev = heap[0][0]
            if t_ev > horizon:
                break
            if stimes is not None:
                while si < len(stimes) and stimes[si] < t_ev:
                    s_q[si] = self.q
                    s_d[si] = self.d
                    s_lam[si] = self.lam
                    si += 1
            if warm_d is None and t_ev > t_warm:
                warm_d = list(self.d)
                warm_lam = list(self.lam)
            t_ev, kind, idx = heapq.heappop(heap)
            self.t = t_ev
            if kind == _ARRIVAL:
                self._on_arrival(idx, t_ev)
            else:
                self._on_completion(idx, t_ev)
            events += 1
            if event_budget is not None and events > event_budget:
                raise EventBudgetExceeded(
                    f"exceeded event budget {event_budget} at t={t_ev:.6g}"
                )
            if check_every and events % check_every == 0:
                self.check_invariants(t_ev)

        self.t = horizon
        self.event_count = events
        if stimes is not None:
            while si < len(stimes):
                s_q[si] = self.q
                s_d[si] = self.d
                s_lam[si] = self.lam
                si += 1
        if warm_d is None:
            warm_d = list(self.d)
            warm_lam = list(self.lam)

        # truncate in-progress services at the horizon for T and I
        busy = list(self.busy)
        for i in range(self.spec.num_stations):
            c = self.busy_class[i]
            if c >= 0:
                busy[c] += horizon - self.service_start[i]
        busy = np.array(busy)
        idle = horizon - self.spec.constituency.astype(float) @ busy

        span = horizon - t_warm
        dep_rates = np.array(
            [(self.d[self.egress[f]] - warm_d[self.egress[f]]) / span
             for f in range(self.spec.num_flows)]
        )
        adm_rates = np.array(
            [(self.lam[f] - warm_lam[f]) / span for f in range(self.spec.num_flows)]
        )
        return SimTrace(
            n=self.n,
            seed=self.seed,
            horizon=horizon,
            warmup_frac=warmup_frac,
            exogenous=np.array(self.e),
            admitted=np.array(self.lam),
            arrivals=np.array(self.a),
            departures=np.array(self.d),
            busy_time=busy,
            idle_time=idle,
            q_final=np.array(self.q),
            flags_final=np.array(self.flags),
            flow_depart_rates=dep_rates,
            flow_admit_rates=adm_rates,
            window=(t_warm, horizon),
            event_count=events,
            sample_times=stimes,
            sample_q=s_q,
            sample_d=s_d,
            sample_admitted=s_lam,
        )


def run(
    spec: NetworkSpec,
    n: float,
    seed: int,
    horizon: float,
    *,
    warmup_frac: float = 0.2,
    initial_queues=None,
    sample_times=None,
    invariant_checks: str = "sparse",
    event_budget: Optional[int] = None,
) -> SimTrace:
    """Simulate one replication to ``horizon`` and return its trace."""
    sim = Simulation(spec, n, seed, initial_queues=initial_queues)
    return sim.run(
        horizon,
        warmup_frac=warmup_frac,
        sample_times=sample_times,
        invariant_checks=invariant_checks,
        event_budget=event_budget,
    )


def scaled_trajectory(trace: SimTrace, n: float) -> ScaledPath:
    """Fluid-scale path t -> Q(n t)/n from a trace sampled on a grid."""
    if trace.sample_times is None:
        raise SimulationError("trace was not sampled; rerun with sample_times")
    if trace.sample_times[-1] > trace.horizon + 1e-9:
        raise SimulationError("insufficient horizon for the requested scaled window")
    return ScaledPath(times=trace.sample_times / n, q=trace.sample_q / n)
