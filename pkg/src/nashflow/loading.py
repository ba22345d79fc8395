"""Network loading for the deterministic queueing model.

Given per-commodity arc inflow rates, derives total and per-commodity
outflows, queue volumes, waiting times and exit times by an exact
event-driven sweep (events are rate breakpoints shifted by the transit time
and queue depletion instants, which are linear solves).  Also provides the
feasibility checker that certifies the flow dynamics piece by piece.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction

from .netmodel import Instance
from .timefn import (ONE, ZERO, PwlFunction, StepFunction, breakpoint_budget,
                     compose, differentiate, integrate, min_preimage)


class NegativeInflow(ValueError):
    """Inflow rates must be non-negative."""


class UnboundedBreakpoints(RuntimeError):
    """The configured breakpoint budget was exceeded."""


class BeyondHorizon(ValueError):
    """Evaluation past the horizon the profile was computed for."""


@dataclass
class QueueProfile:
    """Per-arc queue volume z (over time), waiting time q and exit time T."""

    volume: dict[str, PwlFunction]
    waiting: dict[str, PwlFunction]
    exit_time: dict[str, PwlFunction]
    horizon: Fraction | None = None

    def _guard(self, theta):
        if self.horizon is not None and Fraction(theta) > self.horizon:
            raise BeyondHorizon(f"{theta} exceeds computed horizon {self.horizon}")


def queue_size(profile: QueueProfile, arc_id: str, theta) -> Fraction:
    profile._guard(theta)
    return profile.volume[arc_id](theta)


def waiting_time(profile: QueueProfile, arc_id: str, theta) -> Fraction:
    profile._guard(theta)
    return profile.waiting[arc_id](theta)


def exit_time(profile: QueueProfile, arc_id: str, theta) -> Fraction:
    profile._guard(theta)
    return profile.exit_time[arc_id](theta)


@dataclass
class FlowOverTime:
    """Per-commodity arc in-/outflow rates plus their totals."""

    inflow: dict[tuple[str, str], StepFunction]       # (commodity, arc) -> rate
    outflow: dict[tuple[str, str], StepFunction]
    total_inflow: dict[str, StepFunction] = field(default_factory=dict)
    total_outflow: dict[str, StepFunction] = field(default_factory=dict)

    def fill_totals(self, instance: Instance):
        for a in instance.arcs:
            self.total_inflow[a.id] = StepFunction.sum_of(
                self.inflow.get((c.id, a.id), StepFunction.zero())
                for c in instance.commodities)
            self.total_outflow[a.id] = StepFunction.sum_of(
                self.outflow.get((c.id, a.id), StepFunction.zero())
                for c in instance.commodities)
        return self

    def cumulative_inflow(self, commodity_id, arc_id) -> PwlFunction:
        return integrate(self.inflow[(commodity_id, arc_id)], _anchor(self.inflow[(commodity_id, arc_id)]))

    def cumulative_outflow(self, commodity_id, arc_id) -> PwlFunction:
        return integrate(self.outflow[(commodity_id, arc_id)], _anchor(self.outflow[(commodity_id, arc_id)]))


def _anchor(f: StepFunction) -> Fraction:
    """Anchor point for cumulative flows: at or before both 0 and any flow."""
    if f.breakpoints:
        return min(ZERO, f.breakpoints[0])
    return ZERO


def load_network(instance: Instance, inflows: dict, horizon=None):
    """Load given inflow rates through the network.

    ``inflows`` maps (commodity id, arc id) to a StepFunction of time; missing
    pairs mean zero inflow.  Rates must be non-negative with finite support
    (zero before their first breakpoint and, when ``horizon`` is given, zero
    from the horizon on).  Returns (FlowOverTime, QueueProfile); all outputs
    are exact piecewise functions.
    """
    budget = breakpoint_budget()
    total_bps = 0
    for (j, e), f in inflows.items():
        if not f.is_nonnegative():
            raise NegativeInflow(f"inflow of commodity {j} into arc {e}")
        if f.initial != 0:
            raise NegativeInflow(
                f"inflow of commodity {j} into arc {e} must vanish before its "
                f"first breakpoint")
        if horizon is not None and not f.vanishes_beyond(horizon):
            raise ValueError(f"inflow of commodity {j} into {e} is nonzero beyond "
                             f"the horizon {horizon}")
        total_bps += len(f.breakpoints)
        if total_bps > budget:
            raise UnboundedBreakpoints(f"more than {budget} inflow breakpoints")

    flow = FlowOverTime(inflow={}, outflow={})
    for c in instance.commodities:
        for a in instance.arcs:
            flow.inflow[(c.id, a.id)] = inflows.get((c.id, a.id),
                                                    StepFunction.zero())
    profile = QueueProfile(volume={}, waiting={}, exit_time={})
    for arc in instance.arcs:
        per_commodity = {c.id: flow.inflow[(c.id, arc.id)]
                         for c in instance.commodities}
        total_in = StepFunction.sum_of(per_commodity.values())
        total_out, z = _load_arc(total_in, arc.transit, arc.capacity)
        q = z.shift(-arc.transit).scale(1 / arc.capacity)
        T = q + PwlFunction.line(ONE, ZERO, arc.transit)
        for j, f_j in per_commodity.items():
            flow.outflow[(j, arc.id)] = _split_outflow(f_j, total_in, total_out, T)
        flow.total_inflow[arc.id] = total_in
        flow.total_outflow[arc.id] = total_out
        profile.volume[arc.id] = z
        profile.waiting[arc.id] = q
        profile.exit_time[arc.id] = T
    if horizon is not None:
        drain = sum((a.transit for a in instance.arcs), ZERO)
        volume = sum((_total_volume(flow.total_inflow[a.id]) for a in instance.arcs), ZERO)
        nu_min = min((a.capacity for a in instance.arcs), default=ONE)
        profile.horizon = Fraction(horizon) + drain + volume / nu_min
    return flow, profile


def _total_volume(f: StepFunction) -> Fraction:
    total = ZERO
    for lo, hi, v in f.pieces():
        if v != 0 and lo is not None and hi is not None:
            total += v * (hi - lo)
    return total


def _load_arc(total_in: StepFunction, transit: Fraction, capacity: Fraction):
    """Total outflow and queue volume for one arc under queue dynamics.

    The queue volume grows at arrival rate minus capacity while positive;
    at zero it grows only when arrivals exceed capacity.  Outflow is the
    capacity while a queue stands, otherwise min(arrival rate, capacity).
    """
    g = total_in.shift(transit)  # arrival rate at the queue
    if not g.breakpoints:
        zero = PwlFunction.constant(ZERO)
        return StepFunction.zero(), zero
    start = g.breakpoints[0]
    z_bps = [start]
    z_vals = [ZERO]
    out_pieces = []  # (time, outflow value)
    t = start
    z = ZERO
    pieces = [(lo, hi, v) for lo, hi, v in g.pieces() if lo is not None]
    final_slope = ZERO
    final_out = ZERO
    for lo, hi, rate in pieces:
        t = lo
        while True:
            if z > 0:
                slope = rate - capacity
                out = capacity
            else:
                slope = max(rate - capacity, ZERO)
                out = min(rate, capacity)
            out_pieces.append((t, out))
            if z > 0 and slope < 0:
                deplete = t + z / (-slope)
                if hi is None or deplete < hi:
                    z_bps.append(deplete)
                    z_vals.append(ZERO)
                    t, z = deplete, ZERO
                    continue
            if hi is None:
                final_slope = slope
                final_out = out
                break
            z = z + slope * (hi - t)
            if z_bps[-1] != hi:
                z_bps.append(hi)
                z_vals.append(z)
            t = hi
            break
    volume = PwlFunction(z_bps, z_vals, ZERO, final_slope)
    outflow = StepFunction.from_pieces(_dedupe(out_pieces), ZERO)
    assert outflow.final == final_out
    return outflow, volume


def _dedupe(pieces):
    """Keep the last value recorded at any repeated time."""
    out = []
    for t, v in pieces:
        if out and out[-1][0] == t:
            out[-1] = (t, v)
        else:
            out.append((t, v))
    return out


def _split_outflow(inflow_j: StepFunction, total_in: StepFunction,
                   total_out: StepFunction, T: PwlFunction) -> StepFunction:
    """Per-commodity outflow: the commodity's share of the total outflow,
    taken at the FIFO entry time of the particles currently leaving."""
    if not inflow_j.breakpoints and inflow_j.initial == 0:
        return StepFunction.zero()
    cut = set(total_out.breakpoints)
    for b in set(T.breakpoints) | set(total_in.breakpoints) | set(inflow_j.breakpoints):
        cut.add(T(b))
    cuts = sorted(cut)
    if not cuts:
        return StepFunction.zero()
    samples = [(lo, (lo + hi) / 2) for lo, hi in zip(cuts, cuts[1:])]
    samples.append((cuts[-1], cuts[-1] + 1))
    vals = []
    for lo, m in samples:
        out_total = total_out(m)
        if out_total == 0:
            vals.append(ZERO)
            continue
        entry = min_preimage(T, m)
        den = total_in(entry)
        if den == 0:
            vals.append(ZERO)
        else:
            vals.append(out_total * inflow_j(entry) / den)
    return StepFunction(cuts, vals, ZERO)


@dataclass
class FeasibilityReport:
    ok: bool
    violations: list
    checks: dict

    def to_json(self) -> dict:
        return {"ok": self.ok,
                "violations": [v.record() for v in self.violations],
                "checks": self.checks}


@dataclass(frozen=True)
class FlowViolation:
    code: str
    subject: str
    where: str = ""

    def __str__(self):
        return f"{self.code}({self.subject}){' at ' + self.where if self.where else ''}"

    def record(self) -> dict:
        return {"code": self.code, "subject": self.subject, "where": self.where}


def derive_profile(instance: Instance, flow: FlowOverTime) -> QueueProfile:
    """Queue profile implied by a flow's totals (definitional, no dynamics)."""
    profile = QueueProfile(volume={}, waiting={}, exit_time={})
    for a in instance.arcs:
        f_in = flow.total_inflow[a.id]
        f_out = flow.total_outflow[a.id]
        anchor = min(_anchor(f_in), _anchor(f_out))
        F_in = integrate(f_in, anchor)
        F_out = integrate(f_out, anchor)
        z = F_in.shift(a.transit) - F_out
        q = z.shift(-a.transit).scale(1 / a.capacity)
        profile.volume[a.id] = z
        profile.waiting[a.id] = q
        profile.exit_time[a.id] = q + PwlFunction.line(ONE, ZERO, a.transit)
    return profile


def check_feasibility(instance: Instance, flow: FlowOverTime,
                      profile: QueueProfile | None = None) -> FeasibilityReport:
    """Certify the flow dynamics exactly on every piece.

    Checks node conservation per commodity, the total-outflow law, FIFO
    proportionality of per-commodity outflows, the queue-dynamics properties
    (non-negative queues, monotone exit times, the waiting-time derivative
    case formula, frozen exit times on no-inflow stretches) and the
    cumulative identity F_in(theta) = F_out(T(theta)) both in total and per
    commodity.  Arc conservation is implied by the per-commodity identity
    and reported, not independently required.
    """
    if profile is None:
        profile = derive_profile(instance, flow)
    violations: list[FlowViolation] = []
    for a in instance.arcs:
        violations += _check_arc(instance, flow, profile, a)
    violations += _check_conservation(instance, flow)
    checks = {
        "arcs": len(instance.arcs),
        "commodities": len(instance.commodities),
        "arc_conservation": "implied by per-commodity cumulative identity",
    }
    return FeasibilityReport(ok=not violations, violations=violations, checks=checks)


def _refine_with_zeros(points: list[Fraction], fn: PwlFunction) -> list[Fraction]:
    """Add the zero crossings of ``fn`` falling strictly inside the mesh."""
    extra = []
    for lo, hi in zip(points, points[1:]):
        va, vb = fn(lo), fn(hi)
        if va != 0 and vb != 0 and (va > 0) != (vb > 0):
            extra.append(lo + (hi - lo) * (-va) / (vb - va))
    return sorted(set(points) | set(extra))


def _check_arc(instance: Instance, flow: FlowOverTime, profile: QueueProfile, arc):
    violations = []
    e = arc.id
    f_in = flow.total_inflow[e]
    f_out = flow.total_outflow[e]
    z = profile.volume[e]
    q = profile.waiting[e]
    T = profile.exit_time[e]
    anchor = min(_anchor(f_in), _anchor(f_out))
    F_in = integrate(f_in, anchor)
    F_out = integrate(f_out, anchor)

    # profile consistency with the definitional queue quantities
    if z != F_in.shift(arc.transit) - F_out:
        violations.append(FlowViolation("QueueMismatch", e))
        return violations
    if q != z.shift(-arc.transit).scale(1 / arc.capacity):
        violations.append(FlowViolation("WaitingMismatch", e))
    if T != q + PwlFunction.line(ONE, ZERO, arc.transit):
        violations.append(FlowViolation("ExitTimeMismatch", e))

    # queue never negative
    if any(v < 0 for v in z.values) or z.initial_slope > 0 or z.final_slope < 0:
        theta = next((b for b, v in zip(z.breakpoints, z.values) if v < 0), z.breakpoints[0])
        violations.append(FlowViolation("QueueNegative", e, str(theta)))

    # total outflow law on every piece
    g = f_in.shift(arc.transit)
    mesh = sorted(set(z.breakpoints) | set(g.breakpoints) | set(f_out.breakpoints))
    if mesh:
        mesh = _refine_with_zeros(mesh, z)
        probes = [(None, mesh[0] - 1)] + \
            [((lo, hi), (lo + hi) / 2) for lo, hi in zip(mesh, mesh[1:])] + \
            [(None, mesh[-1] + 1)]
        for cell, m in probes:
            expected = arc.capacity if z(m) > 0 else min(g(m), arc.capacity)
            if f_out(m) != expected:
                violations.append(FlowViolation("OutflowLawViolated", e,
                                                str(cell) if cell else str(m)))
                break
    elif f_out.initial != 0 or f_out.values:
        violations.append(FlowViolation("OutflowLawViolated", e, "no inflow"))

    # exit times monotone
    if not T.is_nondecreasing():
        violations.append(FlowViolation("ExitTimeDecreasing", e))
        return violations

    # cumulative identity in total and per commodity (exact, via composition)
    if compose(F_out, T) != F_in:
        violations.append(FlowViolation("CumulativeIdentityViolated", e))
    for c in instance.commodities:
        fj_in = flow.inflow.get((c.id, e), StepFunction.zero())
        fj_out = flow.outflow.get((c.id, e), StepFunction.zero())
        Fj_in = integrate(fj_in, anchor)
        Fj_out = integrate(fj_out, anchor)
        if compose(Fj_out, T) != Fj_in:
            violations.append(FlowViolation("CommodityCumulativeViolated",
                                            f"{c.id},{e}"))
        expected = _split_outflow(fj_in, f_in, f_out, T)
        if expected != fj_out:
            violations.append(FlowViolation("FifoViolated", f"{c.id},{e}"))

    # waiting-time derivative case formula, checked per piece
    dq = differentiate(q)
    mesh = sorted(set(q.breakpoints) | set(f_in.breakpoints))
    mesh = _refine_with_zeros(mesh, q)
    probes = [mesh[0] - 1] + [(lo + hi) / 2 for lo, hi in zip(mesh, mesh[1:])] + [mesh[-1] + 1]
    for m in probes:
        ratio = f_in(m) / arc.capacity - 1
        expected = ratio if q(m) > 0 else max(ratio, ZERO)
        if dq(m) != expected:
            violations.append(FlowViolation("WaitingDerivativeViolated", e, str(m)))
            break

    # positive waiting keeps the queue positive throughout the waiting window
    for b in q.breakpoints:
        for theta in (b, b + Fraction(1, 2)):
            w = q(theta)
            if w <= 0:
                continue
            lo = theta + arc.transit
            hi = lo + w
            inside = [z(lo)] + [z(x) for x in z.breakpoints if lo < x < hi]
            if min(inside) <= 0:
                violations.append(FlowViolation("QueuePositivityViolated", e, str(theta)))
                break

    # frozen exit times across zero-inflow stretches with a standing queue
    dT = differentiate(T)
    mesh = sorted(set(T.breakpoints) | set(f_in.breakpoints) | set(z.breakpoints))
    if mesh:
        mesh = _refine_with_zeros(mesh, z)
        for lo, hi in zip(mesh, mesh[1:]):
            m = (lo + hi) / 2
            if f_in(m) == 0 and z(m + arc.transit) > 0 and dT(m) != 0:
                violations.append(FlowViolation("ExitTimeNotFrozen", e, str(m)))
                break
    return violations


def _check_conservation(instance: Instance, flow: FlowOverTime):
    violations = []
    for c in instance.commodities:
        for v in instance.nodes:
            if v == c.destination:
                continue
            net = StepFunction.sum_of(
                [flow.inflow.get((c.id, a.id), StepFunction.zero())
                 for a in instance.out_arcs(v)]) - StepFunction.sum_of(
                [flow.outflow.get((c.id, a.id), StepFunction.zero())
                 for a in instance.in_arcs(v)])
            if v == c.origin:
                if c.inflow_end is None:
                    expected = StepFunction((c.inflow_start,), (c.rate,), ZERO)
                else:
                    expected = StepFunction((c.inflow_start, c.inflow_end),
                                            (c.rate, ZERO), ZERO)
            else:
                expected = StepFunction.zero()
            if net != expected:
                where = _first_difference(net, expected)
                violations.append(FlowViolation("ConservationViolated",
                                                f"{v},{c.id}", where))
    return violations


def _first_difference(a: StepFunction, b: StepFunction) -> str:
    for x in sorted(set(a.breakpoints) | set(b.breakpoints)):
        if a(x) != b(x):
            return str(x)
    return "initial"


def flow_to_json(instance: Instance, flow: FlowOverTime) -> dict:
    doc = {"inflows": [], "outflows": []}
    for (j, e), f in sorted(flow.inflow.items()):
        if f.values or f.initial != 0:
            doc["inflows"].append({"commodity": j, "arc": e, "rate": f.to_json()})
    for (j, e), f in sorted(flow.outflow.items()):
        if f.values or f.initial != 0:
            doc["outflows"].append({"commodity": j, "arc": e, "rate": f.to_json()})
    return doc


def inflows_from_json(doc: dict) -> dict:
    """Read a flow-rate file: {"inflows": [{commodity, arc, rate}, ...]}."""
    inflows = {}
    for item in doc.get("inflows", []):
        key = (str(item["commodity"]), str(item["arc"]))
        inflows[key] = StepFunction.from_json(item["rate"])
    return inflows


def flow_from_json(instance: Instance, doc: dict) -> FlowOverTime:
    """Read a full flow file (inflows plus outflows) and fill totals."""
    flow = FlowOverTime(inflow={}, outflow={})
    for item in doc.get("inflows", []):
        flow.inflow[(str(item["commodity"]), str(item["arc"]))] = \
            StepFunction.from_json(item["rate"])
    for item in doc.get("outflows", []):
        flow.outflow[(str(item["commodity"]), str(item["arc"]))] = \
            StepFunction.from_json(item["rate"])
    for c in instance.commodities:
        for a in instance.arcs:
            flow.inflow.setdefault((c.id, a.id), StepFunction.zero())
            flow.outflow.setdefault((c.id, a.id), StepFunction.zero())
    return flow.fill_totals(instance)


def load_flow_file(instance: Instance, path) -> FlowOverTime:
    with open(path, "r", encoding="utf-8") as fh:
        return flow_from_json(instance, json.load(fh))
