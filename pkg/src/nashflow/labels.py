"""Earliest-arrival labels and their companions.

Per commodity, the label of a node maps a particle to the earliest time that
particle can reach the node given the evolving queues.  This module computes
labels from a loaded flow (Bellman iteration in function space), classifies
arcs as active/resetting for a particle, reconstructs waiting times from the
labels of an equilibrium, differentiates the foreign flow (the other
commodities' traffic as one commodity samples it), and extends labels from
scratch for given per-particle routing strategies by an exact time-frontier
sweep.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .netmodel import INF, Instance, transit_distances
from .loading import QueueProfile
from .timefn import (ZERO, PwlFunction, StepFunction, ValueNotAttained,
                     breakpoint_budget, compose, integrate, min_compose,
                     min_preimage)


class CyclicZeroTransit(RuntimeError):
    """Label iteration failed to stabilize (zero-transit cycle)."""


class ZeroTransitArc(ValueError):
    """Label extension requires strictly positive transit times."""


class BreakpointBudgetExceeded(RuntimeError):
    """The label extension exceeded the configured breakpoint budget."""


class ThetaOutsideRange(ValueError):
    """A queried time is not reached by some commodity's labels."""

    def __init__(self, commodity, theta):
        super().__init__(f"labels of commodity {commodity} never reach {theta}")
        self.commodity = commodity


@dataclass
class LabelSet:
    """Earliest-arrival labels of one commodity, per reachable node."""

    commodity: str
    labels: dict[str, PwlFunction]
    phi_max: Fraction | None = None

    def label(self, node: str) -> PwlFunction:
        return self.labels[node]


def earliest_arrival(instance: Instance, profile: QueueProfile, commodity_id: str,
                     phi_max=None) -> LabelSet:
    """Labels from loaded exit times: the source label is phi/r + a, every
    other label the pointwise minimum of exit-time compositions over the
    incoming arcs."""
    c = instance.commodity(commodity_id)
    source_label = PwlFunction.line(Fraction(1, 1) / c.rate, ZERO, c.inflow_start)
    labels: dict[str, PwlFunction] = {c.origin: source_label}
    in_arcs = {v: instance.in_arcs(v) for v in instance.nodes}
    rounds = 0
    changed = True
    while changed:
        changed = False
        rounds += 1
        if rounds > len(instance.nodes) + 1:
            raise CyclicZeroTransit("label iteration did not stabilize")
        for v in instance.nodes:
            if v == c.origin:
                continue
            candidates = []
            for a in in_arcs[v]:
                lu = labels.get(a.tail)
                if lu is not None:
                    candidates.append(compose(profile.exit_time[a.id], lu))
            if labels.get(v) is not None:
                candidates.append(labels[v])
            if not candidates:
                continue
            new, _ = min_compose(candidates)
            if new != labels.get(v):
                labels[v] = new
                changed = True
    return LabelSet(commodity_id, labels,
                    None if phi_max is None else Fraction(phi_max))


def arc_status(instance: Instance, labelset: LabelSet, profile: QueueProfile,
               phi) -> tuple[set, set]:
    """Active and resetting arc ids for one particle of one commodity."""
    phi = Fraction(phi)
    active, resetting = set(), set()
    for a in instance.arcs:
        lu = labelset.labels.get(a.tail)
        lv = labelset.labels.get(a.head)
        if lu is None:
            continue
        entry = lu(phi)
        wait = profile.waiting[a.id](entry)
        if wait > 0:
            resetting.add(a.id)
        if lv is not None and lv(phi) == entry + a.transit + wait:
            active.add(a.id)
    return active, resetting


def waiting_from_labels(instance: Instance, labels_all: dict, arc_id: str,
                        theta) -> Fraction:
    """Waiting time reconstructed from equilibrium labels alone: the largest
    label gap over all commodities whose first particle reaches the tail at
    ``theta``."""
    theta = Fraction(theta)
    arc = instance.arc(arc_id)
    q = ZERO
    for j, ls in labels_all.items():
        lu = ls.labels.get(arc.tail)
        lv = ls.labels.get(arc.head)
        if lu is None or lv is None:
            continue
        try:
            phi_j = min_preimage(lu, theta)
        except ValueNotAttained:
            raise ThetaOutsideRange(j, theta) from None
        gap = lv(phi_j) - lu(phi_j) - arc.transit
        if gap > q:
            q = gap
    return q


@dataclass
class ForeignFlowEntry:
    """Cumulative foreign flow y and its derivative for one (commodity, arc)."""

    cumulative: PwlFunction
    rate: StepFunction


def foreign_rate_at(instance: Instance, labels_all: dict, strategies: dict,
                    j: str, arc_id: str, phi) -> Fraction:
    """Derivative of the foreign flow of commodity j on one arc at particle
    ``phi``: other commodities' strategy rates sampled at the particles that
    reach the tail at the same moment, rescaled by the label slopes."""
    phi = Fraction(phi)
    arc = instance.arc(arc_id)
    lu_j = labels_all[j].labels[arc.tail]
    own_slope = lu_j.slope_right(phi)
    if own_slope == 0:
        return ZERO
    theta = lu_j(phi)
    total = ZERO
    for i, ls in labels_all.items():
        if i == j:
            continue
        lu_i = ls.labels.get(arc.tail)
        if lu_i is None:
            continue
        phi_i = min_preimage(lu_i, theta)  # ValueNotAttained propagates
        x_i = strategies.get((i, arc_id), StepFunction.zero())(phi_i)
        if x_i == 0:
            continue
        slope_i = lu_i.slope_right(phi_i)
        if slope_i == 0:
            raise ValueError(
                f"commodity {i} sends flow into {arc_id} on a label flat "
                f"(particle {phi_i}); rates are undefined there")
        total += x_i * own_slope / slope_i
    return total


def foreign_flow(instance: Instance, labels_all: dict, strategies: dict,
                 j: str, arc_id: str) -> ForeignFlowEntry:
    """Foreign flow of commodity j on an arc as exact functions of its
    particles."""
    arc = instance.arc(arc_id)
    lu_j = labels_all[j].labels[arc.tail]
    cuts = set(lu_j.breakpoints)
    for i, ls in labels_all.items():
        if i == j:
            continue
        lu_i = ls.labels.get(arc.tail)
        if lu_i is None:
            continue
        marks = set(lu_i.breakpoints)
        marks |= set(strategies.get((i, arc_id), StepFunction.zero()).breakpoints)
        for beta in marks:
            try:
                cuts.add(min_preimage(lu_j, lu_i(beta)))
            except ValueNotAttained:
                continue  # beyond this commodity's particle domain
    mesh = sorted(cuts)
    probes = [mesh[0] - 1] + [(a + b) / 2 for a, b in zip(mesh, mesh[1:])] + [mesh[-1] + 1]
    values = [foreign_rate_at(instance, labels_all, strategies, j, arc_id, m)
              for m in probes]
    rate = StepFunction(mesh, values[1:], values[0])
    anchor = ZERO
    for i, ls in labels_all.items():
        if i == j:
            continue
        lu_i = ls.labels.get(arc.tail)
        if lu_i is None:
            continue
        x_i = strategies.get((i, arc_id), StepFunction.zero())
        phi_i0 = min_preimage(lu_i, lu_j(ZERO))
        anchor += integrate(x_i, ZERO)(phi_i0)
    cumulative = integrate(rate, ZERO).add_constant(anchor)
    return ForeignFlowEntry(cumulative, rate)


# --------------------------------------------------------------------------
# label extension for given strategies (time-frontier sweep)
# --------------------------------------------------------------------------


@dataclass
class _Track:
    """One label function under construction.

    ``pts`` are the committed anchors; from the last anchor to the frontier
    the function runs with ``slope``.  Left of the first anchor it runs with
    the commodity's tail slope 1/r.
    """

    tail_slope: Fraction
    pts: list
    frontier_phi: Fraction
    frontier_val: Fraction
    slope: Fraction | None = None
    is_source: bool = False

    def value_at(self, phi: Fraction) -> Fraction:
        assert phi <= self.frontier_phi, "sampled beyond the frontier"
        pts = self.pts
        if phi <= pts[0][0]:
            return pts[0][1] + self.tail_slope * (phi - pts[0][0])
        for k in range(len(pts) - 1, -1, -1):
            if pts[k][0] <= phi:
                if k == len(pts) - 1:
                    return pts[k][1] + self.slope * (phi - pts[k][0])
                x0, y0 = pts[k]
                x1, y1 = pts[k + 1]
                return y0 + (y1 - y0) * (phi - x0) / (x1 - x0)
        raise AssertionError

    def slope_right_at(self, phi: Fraction) -> Fraction:
        pts = self.pts
        if phi < pts[0][0]:
            return self.tail_slope
        for k in range(len(pts) - 1, -1, -1):
            if pts[k][0] <= phi:
                if k == len(pts) - 1:
                    return self.slope
                x0, y0 = pts[k]
                x1, y1 = pts[k + 1]
                return (y1 - y0) / (x1 - x0)
        raise AssertionError

    def next_anchor_after(self, phi: Fraction) -> Fraction | None:
        for x, _ in self.pts:
            if x > phi:
                return x
        return None

    def commit_slope(self, new_slope: Fraction):
        if self.slope is None:
            self.slope = new_slope
            return
        if new_slope != self.slope:
            if self.pts[-1][0] != self.frontier_phi:
                self.pts.append((self.frontier_phi, self.frontier_val))
            self.slope = new_slope

    def advance(self, dphi: Fraction, dval: Fraction):
        self.frontier_phi += dphi
        self.frontier_val += dval

    def finish(self) -> PwlFunction:
        pts = list(self.pts)
        if pts[-1][0] != self.frontier_phi:
            pts.append((self.frontier_phi, self.frontier_val))
        return PwlFunction([p[0] for p in pts], [p[1] for p in pts],
                           self.tail_slope, self.slope if self.slope is not None
                           else self.tail_slope)


@dataclass
class _Queue:
    """Waiting time of one arc as a function of entry time, grown forward."""

    pts: list = field(default_factory=lambda: [(ZERO, ZERO)])
    slope: Fraction = ZERO
    value: Fraction = ZERO  # at the live edge
    edge: Fraction = ZERO   # live-edge time

    def value_at(self, theta: Fraction) -> Fraction:
        assert theta <= self.edge
        pts = self.pts
        if theta <= pts[0][0]:
            return pts[0][1]
        for k in range(len(pts) - 1, -1, -1):
            if pts[k][0] <= theta:
                if k == len(pts) - 1:
                    return pts[k][1] + self.slope * (theta - pts[k][0])
                x0, y0 = pts[k]
                x1, y1 = pts[k + 1]
                return y0 + (y1 - y0) * (theta - x0) / (x1 - x0)
        raise AssertionError

    def slope_right_at(self, theta: Fraction) -> Fraction:
        pts = self.pts
        if theta < pts[0][0]:
            return ZERO
        for k in range(len(pts) - 1, -1, -1):
            if pts[k][0] <= theta:
                if k == len(pts) - 1:
                    return self.slope
                x0, y0 = pts[k]
                x1, y1 = pts[k + 1]
                return (y1 - y0) / (x1 - x0)
        raise AssertionError

    def next_point_after(self, theta: Fraction) -> Fraction | None:
        for x, _ in self.pts:
            if x > theta:
                return x
        return None

    def commit_slope(self, new_slope: Fraction):
        if new_slope != self.slope:
            if self.pts[-1][0] != self.edge:
                self.pts.append((self.edge, self.value))
            self.slope = new_slope

    def advance(self, dt: Fraction):
        self.edge += dt
        self.value += self.slope * dt


@dataclass
class _Candidate:
    arc_id: str
    tail: str
    pending: bool
    value: Fraction | None = None
    slope: Fraction | None = None
    entry_time: Fraction | None = None
    entry_slope: Fraction | None = None  # slope of the tail label at the sample


def extend_labels(instance: Instance, strategies: dict, horizon,
                  return_queues: bool = False):
    """Construct labels for all commodities from per-particle routing rates.

    ``strategies`` maps (commodity id, arc id) to a StepFunction over
    particles (zero outside [0, horizon]).  All transit times must be
    strictly positive; the sweep then always reaches data that is at least
    one transit time old, so labels, virtual inflows and queues grow together
    in one pass.  Returns {commodity id: LabelSet} covering [0, horizon];
    with ``return_queues`` also the per-arc waiting functions the sweep
    maintained (mass balance of the sampled strategy rates).

    For strategies that keep flow on active arcs these waits coincide with
    the label-gap reconstruction; for arbitrary strategies flow entering
    inactive arcs queues up here without widening any label gap, so the two
    notions can differ (the labels then satisfy the slope conditions with
    respect to the returned waits, not the reconstructed ones).
    """
    horizon = Fraction(horizon)
    for a in instance.arcs:
        if a.transit <= 0:
            raise ZeroTransitArc(a.id)
    for (j, e), f in strategies.items():
        if not f.is_nonnegative():
            raise ValueError(f"negative strategy rate for ({j}, {e})")
        if f.initial != 0 or (f.breakpoints and f.breakpoints[0] < 0):
            raise ValueError(f"strategy for ({j}, {e}) must vanish below 0")

    budget = breakpoint_budget()
    comms = list(instance.commodities)
    reach: dict[str, set] = {}
    tracks: dict[tuple[str, str], _Track] = {}
    for c in comms:
        dist = transit_distances(instance, c.origin)
        reach[c.id] = {v for v in instance.nodes if dist[v] is not INF}
        for v in reach[c.id]:
            phi0 = -c.rate * (c.inflow_start + dist[v])
            tracks[(c.id, v)] = _Track(
                tail_slope=Fraction(1, 1) / c.rate,
                pts=[(phi0, ZERO)], frontier_phi=phi0, frontier_val=ZERO,
                slope=Fraction(1, 1) / c.rate if v == c.origin else None,
                is_source=(v == c.origin))
    queues = {a.id: _Queue() for a in instance.arcs}
    in_arcs = {v: instance.in_arcs(v) for v in instance.nodes}
    out_arcs = {v: instance.out_arcs(v) for v in instance.nodes}
    theta0 = ZERO

    def candidates_for(j: str, v: str) -> list[_Candidate]:
        track_v = tracks[(j, v)]
        result = []
        for a in in_arcs[v]:
            if a.tail not in reach[j]:
                continue
            track_u = tracks[(j, a.tail)]
            if track_v.frontier_phi >= track_u.frontier_phi:
                # at or beyond the tail's frontier the entry time is the
                # current moment or later, so the candidate trails the label
                # by at least the transit time; recheck within one transit
                result.append(_Candidate(a.id, a.tail, pending=True))
                continue
            entry = track_u.value_at(track_v.frontier_phi)
            queue = queues[a.id]
            value = entry + a.transit + queue.value_at(entry)
            entry_slope = track_u.slope_right_at(track_v.frontier_phi)
            slope = entry_slope * (1 + queue.slope_right_at(entry))
            result.append(_Candidate(a.id, a.tail, False, value, slope,
                                     entry, entry_slope))
        return result

    def winner_slope(j: str, v: str):
        cands = candidates_for(j, v)
        live = [c for c in cands if not c.pending]
        tied = [c for c in live if c.value == theta0]
        if not tied:
            raise AssertionError(
                f"label invariant broken at ({j}, {v}): no candidate attains "
                f"the frontier time {theta0}")
        assert all(c.value >= theta0 for c in live)
        return min(c.slope for c in tied), cands

    def mass_on(j: str, v: str, lo: Fraction, hi: Fraction) -> bool:
        """Positive strategy rate of commodity j out of v anywhere on (lo, hi)."""
        for a in out_arcs[v]:
            f = strategies.get((j, a.id))
            if f is None:
                continue
            if f(lo) > 0 or any(f(b) > 0 for b in f.breakpoints if lo < b < hi):
                return True
        return False

    def process_flat(j: str, v: str):
        """Advance a frontier across a flat stretch without moving time."""
        track_v = tracks[(j, v)]
        while True:
            slope, cands = winner_slope(j, v)
            if slope != 0:
                track_v.commit_slope(slope)
                return
            tied = [c for c in cands if not c.pending and c.value == theta0
                    and c.slope == 0]
            next_phi = None
            for c in tied:
                track_u = tracks[(j, c.tail)]
                nb = track_u.next_anchor_after(track_v.frontier_phi)
                if nb is None or nb > track_u.frontier_phi:
                    nb = track_u.frontier_phi
                stops = [nb]
                qnext = queues[c.arc_id].next_point_after(c.entry_time)
                if qnext is not None and c.entry_slope > 0:
                    stops.append(track_v.frontier_phi
                                 + (qnext - c.entry_time) / c.entry_slope)
                stop = min(stops)
                if stop > track_v.frontier_phi and (next_phi is None or stop < next_phi):
                    next_phi = stop
            if next_phi is None or next_phi <= track_v.frontier_phi:
                raise AssertionError(f"flat stretch at ({j}, {v}) cannot advance")
            if mass_on(j, v, track_v.frontier_phi, next_phi):
                raise ValueError(
                    f"strategy sends positive mass of commodity {j} through a "
                    f"label flat at node {v}; the induced inflow is impulsive")
            track_v.commit_slope(ZERO)
            track_v.advance(next_phi - track_v.frontier_phi, ZERO)

    iterations = 0
    while True:
        iterations += 1
        total_pts = sum(len(t.pts) for t in tracks.values()) \
            + sum(len(q.pts) for q in queues.values())
        if total_pts > budget or iterations > budget:
            raise BreakpointBudgetExceeded(f"budget {budget} exceeded")

        # label slopes at the frontier (sources are fixed lines)
        cand_map: dict[tuple[str, str], list[_Candidate]] = {}
        for c in comms:
            for v in reach[c.id]:
                if v == c.origin:
                    continue
                slope, cands = winner_slope(c.id, v)
                if slope == 0:
                    process_flat(c.id, v)
                    slope, cands = winner_slope(c.id, v)
                tracks[(c.id, v)].commit_slope(slope)
                cand_map[(c.id, v)] = cands

        if all(t.frontier_phi >= horizon for t in tracks.values()):
            break

        # virtual inflow rates and queue slopes
        for a in instance.arcs:
            rate = ZERO
            for c in comms:
                if a.tail not in reach[c.id]:
                    continue
                f = strategies.get((c.id, a.id))
                if f is None:
                    continue
                track_u = tracks[(c.id, a.tail)]
                x = f(track_u.frontier_phi)
                if x != 0:
                    rate += x / track_u.slope
            q = queues[a.id]
            growth = rate / a.capacity - 1
            q.commit_slope(growth if q.value > 0 else max(growth, ZERO))

        # next event
        delta = None

        def note(d):
            nonlocal delta
            if d is not None and d > 0 and (delta is None or d < delta):
                delta = d

        for (j, v), cands in cand_map.items():
            track_v = tracks[(j, v)]
            m_v = track_v.slope
            for c in cands:
                if c.pending:
                    note(instance.arc(c.arc_id).transit)
                    continue
                if c.value > theta0:
                    denom = 1 - c.slope / m_v
                    if denom > 0:
                        note((c.value - theta0) / denom)
                track_u = tracks[(j, c.tail)]
                nb = track_u.next_anchor_after(track_v.frontier_phi)
                if nb is not None:
                    note((nb - track_v.frontier_phi) * m_v)
                if c.entry_slope and c.entry_slope > 0:
                    qnext = queues[c.arc_id].next_point_after(c.entry_time)
                    if qnext is not None:
                        note((qnext - c.entry_time) * m_v / c.entry_slope)
                # frontier of v catching up with the data of u
                if track_u.slope is not None and m_v < track_u.slope:
                    gap = track_u.frontier_phi - track_v.frontier_phi
                    note(gap / (1 / m_v - 1 / track_u.slope))
        for c in comms:
            for v in reach[c.id]:
                track = tracks[(c.id, v)]
                for a in out_arcs[v]:
                    f = strategies.get((c.id, a.id))
                    if f is None:
                        continue
                    for b in f.breakpoints:
                        if b > track.frontier_phi:
                            note((b - track.frontier_phi) * track.slope)
                            break
        for a in instance.arcs:
            q = queues[a.id]
            if q.value > 0 and q.slope < 0:
                note(q.value / (-q.slope))
        if delta is None:
            # no structural events ahead: jump straight to the horizon
            delta = max((horizon - t.frontier_phi) * t.slope
                        for t in tracks.values() if t.frontier_phi < horizon)
            if delta <= 0:
                break

        # advance
        theta0 += delta
        for track in tracks.values():
            track.advance(delta / track.slope, delta)
        for q in queues.values():
            q.advance(delta)

    out: dict[str, LabelSet] = {}
    for c in comms:
        labels = {v: tracks[(c.id, v)].finish() for v in reach[c.id]}
        out[c.id] = LabelSet(c.id, labels, horizon)
    if not return_queues:
        return out
    waits = {}
    for a in instance.arcs:
        q = queues[a.id]
        pts = list(q.pts)
        if pts[-1][0] != q.edge:
            pts.append((q.edge, q.value))
        waits[a.id] = PwlFunction([p[0] for p in pts], [p[1] for p in pts],
                                  ZERO, q.slope)
    return out, waits
