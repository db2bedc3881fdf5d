"""Candidate equilibrium sets of the fluid model and numerical checks of
the two absorption conditions:

* linear-time absorption: every fluid trajectory reaches the scaled set
  within a time bounded by a constant times its initial L1 distance;
* rate agreement: while the state is inside the scaled set, the per-flow
  departure rates equal the target vector R.

A set is described in unit-threshold coordinates as a finite union of
product pieces: intervals over an explicit subset of queue coordinates,
optionally with a convex polygon over one designated pair.  Coordinates a
piece does not mention are unconstrained, which makes projections of a
set (hitting times measured on a few phase-portrait coordinates only)
expressible with the same machinery.  Residual arrival clocks and service
gates must be zero on a full set, so they contribute their own magnitude
to the distance; projections drop that requirement.

The scaled set at threshold hbar contains x iff x/hbar is in the unit
set, giving the exact scale law dist(x, hbar*S) = hbar * dist(x/hbar, S).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .fluid import FluidState, FluidTrajectory, departure_rates_at, integrate
from .network import SWITCH, NetworkSpec

__all__ = [
    "Piece",
    "EquilibriumSet",
    "SamplePoint",
    "SamplePlan",
    "C1Report",
    "C2Report",
    "distance",
    "switch_equilibrium_set",
    "switch_tilde_set",
    "tandem_point_set",
    "tandem_tilde_set",
    "tandem_wedge_set",
    "verify_C1",
    "verify_C2",
    "grid_plan",
]

_L1 = "l1"
_NORMS = ("l1", "l2", "linf")


def _interval_dist(x: float, lo: float, hi: float) -> float:
    if x < lo:
        return lo - x
    if x > hi:
        return x - hi
    return 0.0


def _combine(devs, norm: str) -> float:
    """Fold per-factor deviations of a product set into one distance."""
    if norm == "l1":
        return float(sum(devs))
    if norm == "l2":
        return float(np.sqrt(sum(d * d for d in devs)))
    return float(max(devs, default=0.0))


def _segment_dist(x: np.ndarray, p: np.ndarray, r: np.ndarray, norm: str) -> float:
    """Distance from point x to the segment p + t*(r - p), t in [0, 1].

    The objective is piecewise linear in t for l1/linf (kinks where a
    coordinate deviation or their order changes sign) and smooth for l2,
    so the exact minimizer is among a handful of candidate t values.
    """
    d = r - p
    a = x - p
    cands = [0.0, 1.0]
    if norm == "l2":
        dd = float(d @ d)
        if dd > 0.0:
            cands.append(float(a @ d) / dd)
    else:
        for c in range(2):
            if d[c] != 0.0:
                cands.append(a[c] / d[c])
        # linf: the active coordinate can switch where |a0-t*d0| = |a1-t*d1|
        for s in (1.0, -1.0):
            denom = d[0] - s * d[1]
            if denom != 0.0:
                cands.append((a[0] - s * a[1]) / denom)
    best = np.inf
    for t in cands:
        t = min(max(t, 0.0), 1.0)
        dev0, dev1 = abs(a[0] - t * d[0]), abs(a[1] - t * d[1])
        best = min(best, _combine((dev0, dev1), norm))
    return best


def _polygon_dist(x: np.ndarray, verts: np.ndarray, norm: str) -> float:
    """Distance from x to a convex polygon given by CCW vertices."""
    m = len(verts)
    inside = True
    for i in range(m):
        p, r = verts[i], verts[(i + 1) % m]
        cross = (r[0] - p[0]) * (x[1] - p[1]) - (r[1] - p[1]) * (x[0] - p[0])
        if cross < 0.0:
            inside = False
            break
    if inside:
        return 0.0
    return min(_segment_dist(x, verts[i], verts[(i + 1) % m], norm) for i in range(m))


@dataclass(frozen=True)
class Piece:
    """One product piece in unit-threshold queue coordinates.

    ``bounds`` maps class index -> (lo, hi); indices not mentioned (and
    not covered by the polygon pair) are unconstrained.
    """

    bounds: tuple                            # ((coord, lo, hi), ...)
    poly_coords: Optional[tuple] = None      # pair of class indices
    poly_vertices: Optional[tuple] = None    # CCW vertices over that pair

    def q_distance(self, q_unit: np.ndarray, norm: str = _L1) -> float:
        devs = [_interval_dist(q_unit[k], lo, hi) for k, lo, hi in self.bounds]
        if self.poly_coords is not None:
            i, j = self.poly_coords
            devs.append(
                _polygon_dist(
                    np.array([q_unit[i], q_unit[j]]),
                    np.asarray(self.poly_vertices),
                    norm,
                )
            )
        return _combine(devs, norm)

    def restrict(self, coords) -> "Piece":
        keep = set(coords)
        bounds = tuple(b for b in self.bounds if b[0] in keep)
        if self.poly_coords is not None and not set(self.poly_coords) <= keep:
            raise ValueError("cannot project away part of a polygon pair")
        return replace(self, bounds=bounds)

    def sample_q(self, num_classes: int, rng: np.random.Generator) -> np.ndarray:
        """One generic point of the piece (unconstrained coordinates 0)."""
        q = np.zeros(num_classes)
        for k, lo, hi in self.bounds:
            q[k] = lo + rng.random() * (hi - lo)
        if self.poly_coords is not None:
            verts = np.asarray(self.poly_vertices, dtype=float)
            lo = verts.min(axis=0)
            hi = verts.max(axis=0)
            for _ in range(1000):
                p = lo + rng.random(2) * (hi - lo)
                if _polygon_dist(p, verts, _L1) == 0.0:
                    break
            else:
                p = verts.mean(axis=0)
            i, j = self.poly_coords
            q[i], q[j] = p
        return q

    def centroid_q(self, num_classes: int) -> np.ndarray:
        q = np.zeros(num_classes)
        for k, lo, hi in self.bounds:
            q[k] = 0.5 * (lo + hi)
        if self.poly_coords is not None:
            verts = np.asarray(self.poly_vertices, dtype=float)
            i, j = self.poly_coords
            q[i], q[j] = verts.mean(axis=0)
        return q


def _box_bounds(values: dict) -> tuple:
    return tuple((k, lo, hi) for k, (lo, hi) in sorted(values.items()))


@dataclass(frozen=True)
class EquilibriumSet:
    """Finite union of pieces; closed and bounded on its constrained
    coordinates.  ``constrain_residuals``: membership requires all
    residual clocks and gates to be zero (true for full sets, dropped for
    phase-portrait projections)."""

    num_classes: int
    num_flows: int
    pieces: tuple
    constrain_residuals: bool = True

    def q_distance(self, q_unit: np.ndarray, norm: str = _L1) -> float:
        return min(p.q_distance(q_unit, norm) for p in self.pieces)

    def contains(self, state: FluidState, hbar: float, tol: float = 1e-9) -> bool:
        return distance(state, self, hbar) <= tol

    def projected(self, coords) -> "EquilibriumSet":
        """Projection onto a coordinate subset: hitting times measured on
        those phase-portrait coordinates only."""
        return EquilibriumSet(
            num_classes=self.num_classes,
            num_flows=self.num_flows,
            pieces=tuple(p.restrict(coords) for p in self.pieces),
            constrain_residuals=False,
        )


def distance(state: FluidState, eqset: EquilibriumSet, hbar: float, norm: str = _L1) -> float:
    """Exact distance from ``state`` to the set scaled by ``hbar``.

    L1 is the default (the norm all absorption-time bounds are stated
    in); l2 and linf are available behind the parameter.
    """
    if norm not in _NORMS:
        raise ValueError(f"unknown norm {norm!r}")
    if hbar <= 0:
        raise ValueError("hbar must be positive")
    dq = hbar * eqset.q_distance(state.q / hbar, norm)
    if not eqset.constrain_residuals:
        return dq
    devs = [dq]
    devs.extend(abs(float(x)) for x in state.u)
    devs.extend(abs(float(x)) for x in state.v)
    return _combine(devs, norm)


# ---------------------------------------------------------------------------
# bundled set constructions


def _band_vertices(a: float) -> tuple:
    # {(x, y): x in [0,1], y in [1 - a x, 1 + a (1 - x)]} as a CCW polygon
    return ((0.0, 1.0), (1.0, 1.0 - a), (1.0, 1.0), (0.0, 1.0 + a))


def switch_equilibrium_set(a: float) -> EquilibriumSet:
    """Enlarged absorbing set of the switch fixture (unit coordinates).

    Queues 1 and 8 of the diagram sit at the threshold, queues 3..6 are
    empty, and the bottleneck pair (queues 2 and 7) lies in the union of a
    diagonal band of half-width a and the right edge segment:

        (q2, q7) in {(x, y): x in [0,1], y in [1 - a*x, 1 + a*(1-x)]}
                   union {1} x [0, 1].
    """
    if not 0.0 < a < 1.0:
        raise ValueError("a must lie strictly between 0 and 1")
    fixed = {
        SWITCH.flow1_ingress: (1.0, 1.0),
        SWITCH.flow3_egress: (1.0, 1.0),
        SWITCH.flow3_ingress: (0.0, 0.0),
        SWITCH.idle_a: (0.0, 0.0),
        SWITCH.flow1_egress: (0.0, 0.0),
        SWITCH.idle_b: (0.0, 0.0),
    }
    band = Piece(
        bounds=_box_bounds(fixed),
        poly_coords=(SWITCH.flow2_ingress, SWITCH.flow2_egress),
        poly_vertices=_band_vertices(a),
    )
    edge = Piece(
        bounds=_box_bounds(
            fixed
            | {
                SWITCH.flow2_ingress: (1.0, 1.0),
                SWITCH.flow2_egress: (0.0, 1.0),
            }
        )
    )
    return EquilibriumSet(num_classes=8, num_flows=3, pieces=(band, edge))


def switch_tilde_set() -> EquilibriumSet:
    """Minimal absorbing set of the switch fixture: the two segments
    [0,1] x {1} and {1} x [0,1] over the bottleneck pair."""
    fixed = {
        SWITCH.flow1_ingress: (1.0, 1.0),
        SWITCH.flow3_egress: (1.0, 1.0),
        SWITCH.flow3_ingress: (0.0, 0.0),
        SWITCH.idle_a: (0.0, 0.0),
        SWITCH.flow1_egress: (0.0, 0.0),
        SWITCH.idle_b: (0.0, 0.0),
    }
    top = Piece(
        bounds=_box_bounds(
            fixed
            | {
                SWITCH.flow2_ingress: (0.0, 1.0),
                SWITCH.flow2_egress: (1.0, 1.0),
            }
        )
    )
    right = Piece(
        bounds=_box_bounds(
            fixed
            | {
                SWITCH.flow2_ingress: (1.0, 1.0),
                SWITCH.flow2_egress: (0.0, 1.0),
            }
        )
    )
    return EquilibriumSet(num_classes=8, num_flows=3, pieces=(top, right))


def tandem_point_set() -> EquilibriumSet:
    """Absorbing point (0, 1) of the two-station tandem with distinct
    service rates (unit coordinates)."""
    return EquilibriumSet(
        num_classes=2,
        num_flows=1,
        pieces=(Piece(bounds=((0, 0.0, 0.0), (1, 1.0, 1.0))),),
    )


def tandem_tilde_set() -> EquilibriumSet:
    """Minimal absorbing set of the equal-rate tandem: the two segments
    {1} x [0,1] and [0,1] x {1}."""
    return EquilibriumSet(
        num_classes=2,
        num_flows=1,
        pieces=(
            Piece(bounds=((0, 1.0, 1.0), (1, 0.0, 1.0))),
            Piece(bounds=((0, 0.0, 1.0), (1, 1.0, 1.0))),
        ),
    )


def tandem_wedge_set(a: float) -> EquilibriumSet:
    """Enlarged absorbing set for the equal-rate tandem: the same band
    geometry as the switch set, over (q1, q2)."""
    if not 0.0 < a < 1.0:
        raise ValueError("a must lie strictly between 0 and 1")
    band = Piece(bounds=(), poly_coords=(0, 1), poly_vertices=_band_vertices(a))
    edge = Piece(bounds=((0, 1.0, 1.0), (1, 0.0, 1.0)))
    return EquilibriumSet(num_classes=2, num_flows=1, pieces=(band, edge))


# ---------------------------------------------------------------------------
# condition (C1): linear-time absorption


@dataclass
class SamplePoint:
    q: np.ndarray
    u: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    label: str = ""


@dataclass
class SamplePlan:
    points: list
    time_budget: float
    hit_tol: Optional[float] = None  # defaults to 1e-6 * hbar


def grid_plan(
    spec: NetworkSpec,
    base_q: np.ndarray,
    free_coords: Sequence[int],
    lo: float,
    hi: float,
    per_dim: int,
    time_budget: float,
    *,
    boundary_eps: Sequence[float] = (),
    hbar: float = 1.0,
    label: str = "",
) -> SamplePlan:
    """Stratified grid over selected queue coordinates plus boundary-biased
    points just above/below the threshold on each free coordinate."""
    axes = [np.linspace(lo, hi, per_dim) for _ in free_coords]
    points = []
    for combo in np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(free_coords)):
        q = np.asarray(base_q, dtype=float).copy()
        for c, val in zip(free_coords, combo):
            q[c] = val
        points.append(SamplePoint(q=q, label=label or "grid"))
    for eps in boundary_eps:
        for c in free_coords:
            for sign in (+1.0, -1.0):
                q = np.asarray(base_q, dtype=float).copy()
                q[c] = max(0.0, hbar + sign * eps)
                points.append(SamplePoint(q=q, label=f"boundary:{c}"))
    return SamplePlan(points=points, time_budget=time_budget)


@dataclass
class C1Report:
    hbar: float
    labels: list
    initial_distances: np.ndarray
    hit_times: np.ndarray              # nan where the budget ran out
    ratios: np.ndarray                 # nan where distance <= tol or no hit
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def max_ratio(self) -> float:
        """Empirical absorption-time constant: the largest observed
        hitting-time/distance ratio over the samples.  No extrapolation
        beyond the samples is implied."""
        finite = self.ratios[np.isfinite(self.ratios)]
        return float(finite.max()) if len(finite) else 0.0

    @property
    def argmax_sample(self) -> Optional[int]:
        finite = np.where(np.isfinite(self.ratios))[0]
        if not len(finite):
            return None
        return int(finite[np.argmax(self.ratios[finite])])

    def max_ratio_for(self, label: str) -> float:
        sel = [
            r for l, r in zip(self.labels, self.ratios)
            if l == label and np.isfinite(r)
        ]
        return float(max(sel)) if sel else 0.0

    def to_dict(self) -> dict:
        def clean(xs):
            return [float(x) if np.isfinite(x) else None for x in xs]

        return {
            "hbar": self.hbar,
            "labels": list(self.labels),
            "initial_distances": clean(self.initial_distances),
            "hit_times": clean(self.hit_times),
            "ratios": clean(self.ratios),
            "max_ratio": self.max_ratio,
            "violations": list(self.violations),
            "ok": self.ok,
        }


def _first_hit(
    traj: FluidTrajectory, eqset: EquilibriumSet, hbar: float, tol: float
) -> Optional[float]:
    """Earliest trajectory time with distance to the scaled set <= tol.

    Along a linear segment the distance to each convex piece is convex, so
    the sub-tolerance region per piece is an interval whose left endpoint
    a ternary search plus bisection finds.
    """
    def dist_at(i, frac, piece):
        q = traj.q[i] + frac * (traj.q[i + 1] - traj.q[i])
        d = piece.q_distance(q / hbar) * hbar
        if eqset.constrain_residuals:
            u = traj.u[i] + frac * (traj.u[i + 1] - traj.u[i])
            v = traj.v[i] + frac * (traj.v[i + 1] - traj.v[i])
            d += float(np.sum(u)) + float(np.sum(v))
        return d

    state0 = FluidState(traj.q[0], traj.u[0], traj.v[0], hbar)
    if distance(state0, eqset, hbar) <= tol:
        return float(traj.times[0])
    for i in range(len(traj.times) - 1):
        t0, t1 = traj.times[i], traj.times[i + 1]
        if t1 <= t0:
            continue
        best = np.inf
        for piece in eqset.pieces:
            a, b = 0.0, 1.0
            for _ in range(80):
                m1 = a + (b - a) / 3.0
                m2 = b - (b - a) / 3.0
                if dist_at(i, m1, piece) <= dist_at(i, m2, piece):
                    b = m2
                else:
                    a = m1
            arg = 0.5 * (a + b)
            if dist_at(i, arg, piece) > tol:
                continue
            lo_f, hi_f = 0.0, arg
            if dist_at(i, 0.0, piece) <= tol:
                hi_f = 0.0
            for _ in range(80):
                mid = 0.5 * (lo_f + hi_f)
                if dist_at(i, mid, piece) <= tol:
                    hi_f = mid
                else:
                    lo_f = mid
            best = min(best, float(t0 + hi_f * (t1 - t0)))
        if best < np.inf:
            return best
    return None


def verify_C1(
    spec: NetworkSpec,
    eqset: EquilibriumSet,
    hbar: float,
    plan: SamplePlan,
) -> C1Report:
    """Integrate from every sampled start and record hit-time/distance.

    A sample whose trajectory has not reached the scaled set within the
    plan's time budget is reported as a violation (a possible failure of
    linear-time absorption, or an insufficient budget; the report does not
    guess which).  Passing a projected set measures hitting on the
    projection's phase-portrait coordinates only.
    """
    tol = plan.hit_tol if plan.hit_tol is not None else 1e-6 * hbar
    labels, d0s, hits, ratios = [], [], [], []
    violations = []
    for idx, pt in enumerate(plan.points):
        state = FluidState.initial(spec, pt.q, hbar, u=pt.u, v=pt.v)
        d0 = distance(state, eqset, hbar)
        hit = _first_hit(
            integrate(state, spec, plan.time_budget), eqset, hbar, tol
        )
        labels.append(pt.label)
        d0s.append(d0)
        if hit is None:
            hits.append(np.nan)
            ratios.append(np.nan)
            violations.append(
                f"sample {idx} ({pt.label or 'unlabeled'}): no absorption within "
                f"budget {plan.time_budget} (initial distance {d0:.6g})"
            )
            continue
        hits.append(hit)
        ratios.append(hit / d0 if d0 > tol else np.nan)
    return C1Report(
        hbar=hbar,
        labels=labels,
        initial_distances=np.array(d0s),
        hit_times=np.array(hits),
        ratios=np.array(ratios),
        violations=violations,
    )


# ---------------------------------------------------------------------------
# condition (C2): rates inside the set


@dataclass
class C2Report:
    hbar: float
    target: np.ndarray
    flow_rates: np.ndarray       # (samples, flows)
    max_deviation: float

    @property
    def ok(self) -> bool:
        return bool(self.max_deviation <= 1e-9)

    def to_dict(self) -> dict:
        return {
            "hbar": self.hbar,
            "target": self.target.tolist(),
            "flow_rates": self.flow_rates.tolist(),
            "max_deviation": self.max_deviation,
            "ok": self.ok,
        }


def member_states(
    eqset: EquilibriumSet, hbar: float, spec: NetworkSpec, *, per_piece: int = 12, seed: int = 0
) -> list:
    """Generic member states of the scaled set (residuals zero): random
    points of each piece plus its centroid."""
    rng = np.random.default_rng(seed)
    states = []
    for piece in eqset.pieces:
        qs = [piece.sample_q(eqset.num_classes, rng) for _ in range(per_piece)]
        qs.append(piece.centroid_q(eqset.num_classes))
        for q in qs:
            states.append(FluidState.initial(spec, q * hbar, hbar))
    return states


def verify_C2(
    spec: NetworkSpec,
    eqset: EquilibriumSet,
    hbar: float,
    target_rates,
    *,
    per_piece: int = 12,
    seed: int = 0,
) -> C2Report:
    """Sample member states and compare fluid departure rates with R."""
    if hbar <= 0:
        raise ValueError("hbar must be positive")
    R = np.asarray(target_rates, dtype=float)
    states = member_states(eqset, hbar, spec, per_piece=per_piece, seed=seed)
    rates = []
    for st in states:
        _, flow = departure_rates_at(st, spec)
        rates.append(flow)
    rates = np.array(rates)
    max_dev = float(np.max(np.abs(rates - R))) if len(rates) else 0.0
    return C2Report(hbar=hbar, target=R, flow_rates=rates, max_deviation=max_dev)
