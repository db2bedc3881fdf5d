"""Static description of a multiclass flow network with ingress discarding.

Indexing is zero-based throughout: flows 0..F-1, stations 0..d-1, classes
0..K-1.  A class is one (flow, hop) pair; by convention the ingress class
of flow f is class f.  Classes may be numbered explicitly to match an
external diagram, in which case unused class slots (queues no flow feeds)
are allowed if declared; they stay empty forever and carry no traffic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .distributions import DistributionSpec


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    num_flows: int
    num_stations: int
    num_classes: int
    flow_paths: tuple            # per flow: tuple of distinct station ids
    class_of: dict               # (flow, hop) -> class id
    station_of: tuple            # per class: station id
    weights: tuple               # per flow: positive Fraction
    arrival_dist: tuple          # per flow: DistributionSpec
    service_dist: tuple          # per class: DistributionSpec
    threshold_base: float        # h > 0, before scaling by n
    hysteresis_gap: float = 0.0  # lower threshold is n*h - gap
    idle_slots: frozenset = frozenset()  # class ids fed by no flow
    # derived structure, stored so validation can inspect it
    routing_matrix: np.ndarray = field(default=None, repr=False)
    constituency: np.ndarray = field(default=None, repr=False)

    # -- derived views -------------------------------------------------
    def flow_classes(self, f: int) -> tuple:
        """Class ids of flow f in hop order (ingress first)."""
        path = self.flow_paths[f]
        return tuple(self.class_of[(f, hop)] for hop in range(len(path)))

    def flow_of_class(self, k: int) -> int:
        return int(self._class_flow[k])

    @property
    def _class_flow(self) -> np.ndarray:
        ff = np.full(self.num_classes, -1, dtype=int)
        for (f, _hop), k in self.class_of.items():
            ff[k] = f
        return ff

    @property
    def next_class(self) -> np.ndarray:
        """next_class[k] = class after k on its flow's route, -1 at egress."""
        nxt = np.full(self.num_classes, -1, dtype=int)
        for f in range(self.num_flows):
            ks = self.flow_classes(f)
            for a, b in zip(ks, ks[1:]):
                nxt[a] = b
        return nxt

    def egress_class(self, f: int) -> int:
        return self.flow_classes(f)[-1]

    def station_classes(self, i: int) -> tuple:
        return tuple(k for k in range(self.num_classes) if self.station_of[k] == i)

    def visit_cycle(self, i: int) -> tuple:
        """Round-robin visit order at station i: each fed class appears
        w_f * L times per cycle, L the common weight denominator, reduced
        by the gcd of the visit counts."""
        ks = [k for k in self.station_classes(i) if k not in self.idle_slots]
        if not ks:
            return ()
        ws = [self.weights[self.flow_of_class(k)] for k in ks]
        denom = math.lcm(*(w.denominator for w in ws))
        counts = [int(w * denom) for w in ws]
        g = math.gcd(*counts)
        counts = [c // g for c in counts]
        cycle = []
        for k, c in zip(ks, counts):
            cycle.extend([k] * c)
        return tuple(cycle)

    @property
    def arrival_rates(self) -> np.ndarray:
        return np.array([d.rate for d in self.arrival_dist])

    @property
    def service_rates(self) -> np.ndarray:
        return np.array([d.rate for d in self.service_dist])

    @property
    def service_means(self) -> np.ndarray:
        return np.array([d.mean for d in self.service_dist])

    def class_weights(self) -> np.ndarray:
        """Per-class scheduler weight w_{ff(k)} as floats (0 for idle slots)."""
        w = np.zeros(self.num_classes)
        for (f, _hop), k in self.class_of.items():
            w[k] = float(self.weights[f])
        return w


def _derive_matrices(num_stations, num_classes, class_of, station_of, flow_paths):
    P = np.zeros((num_classes, num_classes), dtype=np.int8)
    for f, path in enumerate(flow_paths):
        for hop in range(len(path) - 1):
            P[class_of[(f, hop)], class_of[(f, hop + 1)]] = 1
    C = np.zeros((num_stations, num_classes), dtype=np.int8)
    for k, s in enumerate(station_of):
        C[s, k] = 1
    return P, C


def build_network(
    flow_paths: Sequence[Sequence[int]],
    *,
    arrival: Sequence[DistributionSpec],
    service: Sequence[Sequence[DistributionSpec]],
    weights: Optional[Sequence] = None,
    threshold_base: float = 1.0,
    hysteresis_gap: float = 0.0,
    num_stations: Optional[int] = None,
    class_ids: Optional[dict] = None,
    idle_slots: Optional[dict] = None,
    idle_service: Optional[DistributionSpec] = None,
) -> NetworkSpec:
    """Assemble a NetworkSpec, deriving class numbering and structure.

    Default numbering assigns the ingress class of flow f the id f and the
    remaining classes sequential ids in (flow, hop) order.  ``class_ids``
    maps (flow, hop) -> class id to impose an explicit numbering instead;
    ``idle_slots`` (class id -> station id) then declares slots that exist
    in the numbering but are fed by no flow.
    """
    flow_paths = tuple(tuple(int(s) for s in p) for p in flow_paths)
    F = len(flow_paths)
    if num_stations is None:
        num_stations = 1 + max((s for p in flow_paths for s in p), default=-1)
    if weights is None:
        weights = [Fraction(1)] * F
    weights = tuple(Fraction(w) for w in weights)
    arrival = tuple(arrival)
    n_hops = sum(len(p) for p in flow_paths)

    idle_slots = dict(idle_slots or {})
    if class_ids is None:
        class_of = {}
        nxt = F
        for f, path in enumerate(flow_paths):
            class_of[(f, 0)] = f
            for hop in range(1, len(path)):
                class_of[(f, hop)] = nxt
                nxt += 1
        K = n_hops + len(idle_slots)
    else:
        class_of = {tuple(key): int(v) for key, v in class_ids.items()}
        K = n_hops + len(idle_slots)

    station_of = [None] * K
    for (f, hop), k in class_of.items():
        station_of[k] = flow_paths[f][hop]
    for k, s in idle_slots.items():
        station_of[k] = int(s)
    station_of = tuple(-1 if s is None else s for s in station_of)

    svc = [None] * K
    for f, per_hop in enumerate(service):
        if len(per_hop) != len(flow_paths[f]):
            raise ValueError(f"flow {f}: need one service distribution per hop")
        for hop, d in enumerate(per_hop):
            svc[class_of[(f, hop)]] = d
    for k in idle_slots:
        svc[k] = idle_service or DistributionSpec.exponential(1.0)
    service_dist = tuple(
        d if d is not None else DistributionSpec.exponential(1.0) for d in svc
    )

    P, C = _derive_matrices(num_stations, K, class_of, station_of, flow_paths)
    return NetworkSpec(
        num_flows=F,
        num_stations=num_stations,
        num_classes=K,
        flow_paths=flow_paths,
        class_of=class_of,
        station_of=station_of,
        weights=weights,
        arrival_dist=arrival,
        service_dist=service_dist,
        threshold_base=float(threshold_base),
        hysteresis_gap=float(hysteresis_gap),
        idle_slots=frozenset(idle_slots),
        routing_matrix=P,
        constituency=C,
    )


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self):
        if self.ok and not self.warnings:
            return "valid"
        lines = [f"violation: {v}" for v in self.violations]
        lines += [f"warning: {w}" for w in self.warnings]
        return "\n".join(lines)


def validate(spec: NetworkSpec) -> ValidationReport:
    """Structural validation; the report lists every violated invariant."""
    rep = ValidationReport()
    bad = rep.violations

    if spec.num_flows <= 0:
        bad.append("network has no flows")
    if spec.threshold_base <= 0:
        bad.append("threshold_base must be positive")
    if spec.hysteresis_gap < 0:
        bad.append("hysteresis_gap must be nonnegative")

    for f, path in enumerate(spec.flow_paths):
        if not path:
            bad.append(f"flow {f}: empty path")
        if len(set(path)) != len(path):
            bad.append(f"flow {f}: path revisits a station")
        for s in path:
            if not 0 <= s < spec.num_stations:
                bad.append(f"flow {f}: station {s} out of range")

    for f, w in enumerate(spec.weights):
        if w <= 0:
            bad.append(f"flow {f}: weight must be positive")
    for f, d in enumerate(spec.arrival_dist):
        if not (d.rate > 0):
            bad.append(f"flow {f}: arrival rate must be positive")
        if not d.unbounded_support:
            rep.warnings.append(
                f"flow {f}: arrival times have bounded support; long-run "
                "rate guarantees assume unbounded, spread-out interarrivals"
            )
    for k, d in enumerate(spec.service_dist):
        if not (d.rate > 0):
            bad.append(f"class {k}: service rate must be positive")

    # class map: each (flow, hop) maps to exactly one class, ids distinct,
    # ingress class of flow f is f, every id in range is a flow class or a
    # declared idle slot
    seen = {}
    for (f, hop), k in spec.class_of.items():
        if not 0 <= k < spec.num_classes:
            bad.append(f"class id {k} out of range")
            continue
        if k in seen:
            bad.append(f"class id {k} assigned to two (flow, hop) pairs")
        seen[k] = (f, hop)
        if hop == 0 and k != f:
            bad.append(f"flow {f}: ingress class is {k}, expected {f}")
    for f, path in enumerate(spec.flow_paths):
        for hop in range(len(path)):
            if (f, hop) not in spec.class_of:
                bad.append(f"flow {f} hop {hop}: no class assigned")
    for k in range(spec.num_classes):
        if k not in seen and k not in spec.idle_slots:
            bad.append(f"class id {k} is neither a flow class nor a declared idle slot")
        if k in seen and k in spec.idle_slots:
            bad.append(f"class id {k} declared idle but fed by flow {seen[k][0]}")
        if spec.station_of[k] is None or not 0 <= spec.station_of[k] < spec.num_stations:
            bad.append(f"class {k}: no station assigned")
    for (f, hop), k in spec.class_of.items():
        if 0 <= k < spec.num_classes and spec.station_of[k] != spec.flow_paths[f][hop]:
            bad.append(f"class {k}: station_of disagrees with flow {f}'s path")

    # routing matrix: binary, at most one successor per class, nilpotent
    P = spec.routing_matrix
    if P.shape != (spec.num_classes, spec.num_classes):
        bad.append("routing matrix has wrong shape")
    else:
        if np.any((P != 0) & (P != 1)):
            bad.append("routing matrix is not binary")
        if np.any(P.sum(axis=1) > 1):
            bad.append("routing matrix row has more than one successor")
        Pk = np.eye(spec.num_classes, dtype=np.int64)
        for _ in range(spec.num_classes):
            Pk = Pk @ P
        if np.any(Pk != 0):
            bad.append("routing matrix is not nilpotent (routing cycle)")

    C = spec.constituency
    if C.shape != (spec.num_stations, spec.num_classes):
        bad.append("constituency matrix has wrong shape")
    elif np.any(C.sum(axis=0) != 1):
        bad.append("each class must be served at exactly one station")

    return rep


def offered_load(spec: NetworkSpec) -> np.ndarray:
    """Per-station utilization ignoring discarding: sum over the station's
    fed classes of (flow arrival rate) * (mean service time)."""
    load = np.zeros(spec.num_stations)
    for (f, _hop), k in spec.class_of.items():
        load[spec.station_of[k]] += spec.arrival_dist[f].rate * spec.service_dist[k].mean
    return load


# ---------------------------------------------------------------------------
# bundled fixtures


@dataclass(frozen=True)
class SwitchIndices:
    """Queue indices of the 2x2-switch fixture (zero-based; the network
    diagram numbers the same queues 1..8, two per station)."""

    flow1_ingress: int = 0   # diagram queue 1, station 0
    flow2_ingress: int = 1   # diagram queue 2, station 0 (first bottleneck)
    flow3_ingress: int = 2   # diagram queue 3, station 1
    idle_a: int = 3          # diagram queue 4, station 1 (unfed slot)
    flow1_egress: int = 4    # diagram queue 5, station 2
    idle_b: int = 5          # diagram queue 6, station 2 (unfed slot)
    flow2_egress: int = 6    # diagram queue 7, station 3 (second bottleneck)
    flow3_egress: int = 7    # diagram queue 8, station 3


SWITCH = SwitchIndices()


def switch_example_spec(threshold_base: float = 1.0) -> NetworkSpec:
    """Three flows over four stations, wired like a 2-input 2-output switch.

    Flows 0 and 1 enter at station 0; flow 2 enters at station 1.  Flow 1
    shares station 0 with flow 0 and station 3 with flow 2, so its two
    queues (indices 1 and 6) are the bottleneck pair.  All service is
    exponential at rate 1, every arrival process is pareto_paper(0.6), and
    the three weights are equal.  Class ids follow the switch diagram: two
    queue slots per station, which leaves slots 3 and 5 unfed.
    """
    pareto = DistributionSpec.pareto_paper(0.6)
    exp1 = DistributionSpec.exponential(1.0)
    return build_network(
        flow_paths=[(0, 2), (0, 3), (1, 3)],
        arrival=[pareto, pareto, pareto],
        service=[[exp1, exp1]] * 3,
        weights=[1, 1, 1],
        threshold_base=threshold_base,
        num_stations=4,
        class_ids={
            (0, 0): SWITCH.flow1_ingress,
            (1, 0): SWITCH.flow2_ingress,
            (2, 0): SWITCH.flow3_ingress,
            (0, 1): SWITCH.flow1_egress,
            (1, 1): SWITCH.flow2_egress,
            (2, 1): SWITCH.flow3_egress,
        },
        idle_slots={SWITCH.idle_a: 1, SWITCH.idle_b: 2},
        idle_service=exp1,
    )


def tandem_spec(
    lam: float,
    mu1: float,
    mu2: float,
    *,
    threshold_base: float = 1.0,
    arrival_kind: str = "exponential",
) -> NetworkSpec:
    """Single flow through two stations in series."""
    if arrival_kind == "exponential":
        arr = DistributionSpec.exponential(lam)
    elif arrival_kind == "pareto_paper":
        arr = DistributionSpec.pareto_paper(lam)
    else:
        arr = DistributionSpec.deterministic(1.0 / lam)
    return build_network(
        flow_paths=[(0, 1)],
        arrival=[arr],
        service=[[DistributionSpec.exponential(mu1), DistributionSpec.exponential(mu2)]],
        threshold_base=threshold_base,
    )
