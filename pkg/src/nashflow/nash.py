"""Phase-wise construction and verification of dynamic equilibria.

Constructors grow the equilibrium particle by particle: at each step the
active and resetting arcs follow from the current labels, a thin flow gives
the label slopes, and the phase extends until an inactive arc becomes active,
a queue on a resetting arc depletes, the inflow interval ends, or the
particle horizon is reached.  The flow over time is then read off each phase
(rate = flow part / label slope on the image window).

The verifier is independent of construction: it recomputes earliest-arrival
labels from the flow and checks that the cumulative inflow at the tail
arrival time equals the cumulative outflow at the head arrival time, per
commodity and arc.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .labels import LabelSet, earliest_arrival
from .loading import (FeasibilityReport, FlowOverTime, QueueProfile, _anchor,
                      _dedupe, check_feasibility, derive_profile)
from .netmodel import (COMMON_DESTINATION, COMMON_ORIGIN, INF, Arc, Commodity,
                       Instance, extend_with_super_sink, transit_distances,
                       validate_instance)
from .thinflow import (MultiSourceThinFlow, NewArcInactive, ThinFlow,
                       decompose, solve_thinflow_multisource,
                       solve_thinflow_single, verify_multicommodity_thinflow)
from .timefn import (ONE, ZERO, PwlFunction, StepFunction, compose,
                     differentiate, integrate)


class PhaseBudgetExceeded(RuntimeError):
    """The construction hit the phase cap before the horizon."""


class NotFeasible(RuntimeError):
    """Equilibrium verification is gated on flow feasibility."""


@dataclass
class Phase:
    phi_start: Fraction
    phi_end: Fraction
    thin: object  # ThinFlow or MultiSourceThinFlow
    flows: dict = field(default_factory=dict)  # commodity -> {arc: flow part}

    def to_json(self) -> dict:
        from .rationals import format_rational
        return {
            "interval": [format_rational(self.phi_start), format_rational(self.phi_end)],
            "thinflow": self.thin.to_json(),
            "decomposition": {j: {e: format_rational(x) for e, x in sorted(fl.items())}
                              for j, fl in sorted(self.flows.items())},
        }


@dataclass
class NashFlowOverTime:
    instance: Instance              # effective instance (truncated intervals)
    phases: list
    node_labels: dict[str, PwlFunction]  # construction labels over particles
    flow: FlowOverTime
    horizon: Fraction
    extended_instance: Instance | None = None
    sink_arc_map: dict | None = None
    sigma: Fraction | None = None

    def to_json(self) -> dict:
        from .loading import flow_to_json
        return {
            "phases": [p.to_json() for p in self.phases],
            "labels": {v: f.to_json() for v, f in sorted(self.node_labels.items())},
            "flow": flow_to_json(self.instance, self.flow),
        }


def _label_state(instance: Instance, nodes, labels: dict):
    """Active/resetting arcs implied by current label values (gap test)."""
    active, resetting = set(), set()
    for a in instance.arcs:
        if a.tail not in nodes or a.head not in nodes:
            continue
        gap = labels[a.head] - labels[a.tail] - a.transit
        if gap >= 0:
            active.add(a.id)
        if gap > 0:
            resetting.add(a.id)
    return active, resetting


def _phase_alpha(instance: Instance, nodes, labels: dict, slopes: dict,
                 remaining: Fraction) -> Fraction:
    """Largest step before an arc activates or a standing queue depletes."""
    alpha = remaining
    for a in instance.arcs:
        if a.tail not in nodes or a.head not in nodes:
            continue
        gap = labels[a.head] - labels[a.tail] - a.transit
        rate = slopes[a.head] - slopes[a.tail]
        if gap < 0 and rate > 0:
            alpha = min(alpha, -gap / rate)
        elif gap > 0 and rate < 0:
            alpha = min(alpha, gap / -rate)
    return alpha


def construct_nash_single(instance: Instance, horizon=None,
                          max_phases: int = 500) -> NashFlowOverTime:
    """Equilibrium for a single commodity, phase by phase."""
    instance = _require_valid(instance)
    if len(instance.commodities) != 1:
        raise ValueError("construct_nash_single needs exactly one commodity")
    c = instance.commodities[0]
    volume = c.particle_volume
    horizon = Fraction(horizon) if horizon is not None else volume
    if horizon is None:
        raise ValueError("an unbounded inflow interval needs an explicit horizon")
    dist = transit_distances(instance, c.origin)
    nodes = {v for v in instance.nodes if dist[v] is not INF}
    labels = {v: c.inflow_start + dist[v] for v in nodes}
    label_pts = {v: [(ZERO, labels[v])] for v in nodes}
    phases: list[Phase] = []
    phi = ZERO
    while phi < horizon:
        if len(phases) >= max_phases:
            raise PhaseBudgetExceeded(f"{max_phases} phases before particle {horizon}")
        active, resetting = _label_state(instance, nodes, labels)
        value = ONE if (volume is None or phi < volume) else ZERO
        thin = solve_thinflow_single(instance, active, resetting, c.origin,
                                     c.destination, c.rate, value)
        slopes = thin.label_slopes
        remaining = horizon - phi
        if value == ONE and volume is not None and phi < volume:
            remaining = min(remaining, volume - phi)
        alpha = _phase_alpha(instance, nodes, labels, slopes, remaining)
        assert alpha > 0
        phases.append(Phase(phi, phi + alpha, thin, {c.id: dict(thin.flow)}))
        for v in nodes:
            labels[v] += slopes[v] * alpha
            label_pts[v].append((phi + alpha, labels[v]))
        phi += alpha
    node_labels = _finish_labels(label_pts, 1 / c.rate)
    flow = _reconstruct_flow(instance, phases, node_labels)
    effective = _truncate_instance(instance, {c.id: min(horizon, volume)
                                              if volume is not None else horizon})
    return NashFlowOverTime(effective, phases, node_labels, flow, horizon)


def construct_common_destination(instance: Instance, horizon,
                                 max_phases: int = 500) -> NashFlowOverTime:
    """Multi-commodity equilibrium when all commodities share a destination.

    Runs the phase loop with multi-source thin flows; each phase's flow is
    split into commodities by grouping the path decomposition through a
    virtual super source.  Also yields the inflow distribution (per-particle
    source fractions), recoverable from each phase's supplies.
    """
    instance = _require_valid(instance)
    if instance.mode != COMMON_DESTINATION:
        raise ValueError("instance is not in common-destination mode")
    for c in instance.commodities:
        if c.inflow_start != 0 or c.inflow_end is not None:
            raise ValueError("common-destination construction assumes inflow "
                             "intervals [0, infinity)")
    if len({c.origin for c in instance.commodities}) != len(instance.commodities):
        raise ValueError("sources must be distinct nodes")
    horizon = Fraction(horizon)
    sink = instance.commodities[0].destination
    sources = {c.id: (c.origin, c.rate) for c in instance.commodities}
    dists = {c.id: transit_distances(instance, c.origin) for c in instance.commodities}
    nodes = {v for v in instance.nodes
             if any(d[v] is not INF for d in dists.values())}
    labels = {v: min(d[v] for d in dists.values() if d[v] is not INF) for v in nodes}
    label_pts = {v: [(ZERO, labels[v])] for v in nodes}
    virtual, group = _virtual_super_source(instance, sources)
    phases: list[Phase] = []
    phi = ZERO
    while phi < horizon:
        if len(phases) >= max_phases:
            raise PhaseBudgetExceeded(f"{max_phases} phases before particle {horizon}")
        active, resetting = _label_state(instance, nodes, labels)
        thin = solve_thinflow_multisource(instance, active, resetting, sources, sink)
        slopes = thin.label_slopes
        alpha = _phase_alpha(instance, nodes, labels, slopes, horizon - phi)
        assert alpha > 0
        flows = _group_by_source(virtual, group, thin)
        phases.append(Phase(phi, phi + alpha, thin, flows))
        for v in nodes:
            labels[v] += slopes[v] * alpha
            label_pts[v].append((phi + alpha, labels[v]))
        phi += alpha
    total_rate = sum((c.rate for c in instance.commodities), ZERO)
    node_labels = _finish_labels(label_pts, 1 / total_rate)
    flow = _reconstruct_flow(instance, phases, node_labels)
    ends = {c.id: node_labels[c.origin](horizon) for c in instance.commodities}
    effective = _truncate_instance(instance, None, time_ends=ends)
    return NashFlowOverTime(effective, phases, node_labels, flow, horizon)


def construct_common_origin(instance: Instance, horizon=None,
                            max_phases: int = 500) -> NashFlowOverTime:
    """Multi-commodity equilibrium when all commodities share an origin.

    Reduces to a single commodity on the super-sink extension, then splits
    each phase's thin flow into commodities by grouping paths through the
    added sink arcs (their flow shares are r_j / r in every phase and the
    added arcs stay active; both are asserted).
    """
    instance = _require_valid(instance)
    if instance.mode != COMMON_ORIGIN:
        raise ValueError("instance is not in common-origin mode")
    extended, arc_map = extend_with_super_sink(instance)
    single = construct_nash_single(extended, horizon, max_phases)
    total_rate = extended.commodities[0].rate
    shares = {c.id: c.rate / total_rate for c in instance.commodities}
    phases: list[Phase] = []
    for p in single.phases:
        for j, e in arc_map.items():
            gap_start = _gap_at(extended, single.node_labels, e, p.phi_start)
            gap_end = _gap_at(extended, single.node_labels, e, p.phi_end)
            if e not in p.thin.active or gap_start < 0 or gap_end < 0:
                raise NewArcInactive(j)
        expected = {j: shares[j] * p.thin.value for j in arc_map}
        if p.thin.value == 0:
            flows = {j: {} for j in arc_map}
        else:
            flows = decompose(extended, p.thin, arc_map, expected)
        phases.append(Phase(p.phi_start, p.phi_end, p.thin, flows))
    node_labels = {v: f for v, f in single.node_labels.items()
                   if v in instance.nodes}
    flow = _reconstruct_flow(instance, phases, node_labels)
    merged = extended.commodities[0]
    injected = min(single.horizon, merged.particle_volume) \
        if merged.particle_volume is not None else single.horizon
    volumes = {c.id: injected * shares[c.id] for c in instance.commodities}
    effective = _truncate_instance(instance, volumes)
    nu_min = min(a.capacity for a in instance.arcs)
    sigma = min(nu_min, total_rate)
    return NashFlowOverTime(effective, phases, node_labels, flow, single.horizon,
                            extended_instance=extended, sink_arc_map=arc_map,
                            sigma=sigma)


def _gap_at(instance: Instance, node_labels: dict, arc_id: str, phi) -> Fraction:
    a = instance.arc(arc_id)
    return node_labels[a.head](phi) - node_labels[a.tail](phi) - a.transit


def _require_valid(instance: Instance) -> Instance:
    if instance.validated:
        return instance
    result = validate_instance(instance)
    if isinstance(result, list):
        raise ValueError("invalid instance: " + "; ".join(map(str, result)))
    return result


def _virtual_super_source(instance: Instance, sources: dict):
    """Instance extended by a virtual super source, for path grouping only."""
    origin = "__source__"
    while origin in instance.nodes:
        origin += "_"
    arcs = list(instance.arcs)
    group = {}
    for j, (s_j, _) in sorted(sources.items()):
        arc_id = f"__from_source_{j}__"
        arcs.append(Arc(arc_id, origin, s_j, ZERO, ONE))
        group[j] = arc_id
    virtual = Instance(instance.nodes + (origin,), tuple(arcs), (), instance.mode)
    return virtual, group


def _group_by_source(virtual: Instance, group: dict, thin: MultiSourceThinFlow):
    flow = dict(thin.flow)
    active = set(thin.active)
    for j, e in group.items():
        flow[e] = thin.supplies[j]
        active.add(e)
    helper = ThinFlow(flow, {}, frozenset(active), thin.resetting, ONE, ONE)
    return decompose(virtual, helper, group)


def _finish_labels(label_pts: dict, tail_slope: Fraction) -> dict:
    out = {}
    for v, pts in label_pts.items():
        bps = [p[0] for p in pts]
        vals = [p[1] for p in pts]
        final = (vals[-1] - vals[-2]) / (bps[-1] - bps[-2]) if len(bps) > 1 else tail_slope
        out[v] = PwlFunction(bps, vals, tail_slope, final)
    return out


def _reconstruct_flow(instance: Instance, phases: list, node_labels: dict
                      ) -> FlowOverTime:
    """Rates from phase flows: on the image window of a phase at a node, the
    rate is the flow part divided by the label slope there (no rates on
    empty windows)."""
    in_pieces: dict[tuple[str, str], list] = {}
    out_pieces: dict[tuple[str, str], list] = {}
    ends_in: dict[tuple[str, str], Fraction] = {}
    ends_out: dict[tuple[str, str], Fraction] = {}
    for p in phases:
        for j, flows in p.flows.items():
            for a in instance.arcs:
                x = flows.get(a.id, ZERO)
                if a.tail not in node_labels or a.head not in node_labels:
                    # unreachable endpoints never carry flow
                    assert x == 0, (j, a.id)
                    continue
                for node, book, ends in ((a.tail, in_pieces, ends_in),
                                         (a.head, out_pieces, ends_out)):
                    lab = node_labels[node]
                    t0 = lab(p.phi_start)
                    t1 = lab(p.phi_end)
                    if t1 == t0:
                        if x != 0:
                            raise AssertionError(
                                f"flow {x} of {j} through a frozen label at {node}")
                        continue
                    slope = (t1 - t0) / (p.phi_end - p.phi_start)
                    key = (j, a.id)
                    book.setdefault(key, []).append((t0, x / slope))
                    ends[key] = max(ends.get(key, t0), t1)
    flow = FlowOverTime(inflow={}, outflow={})
    for c in instance.commodities:
        for a in instance.arcs:
            key = (c.id, a.id)
            for book, ends, target in ((in_pieces, ends_in, flow.inflow),
                                       (out_pieces, ends_out, flow.outflow)):
                pieces = book.get(key)
                if not pieces:
                    target[key] = StepFunction.zero()
                    continue
                pieces = _dedupe(pieces + [(ends[key], ZERO)])
                target[key] = StepFunction.from_pieces(pieces, ZERO)
    return flow.fill_totals(instance)


def _truncate_instance(instance: Instance, volumes: dict | None,
                       time_ends: dict | None = None) -> Instance:
    """Instance whose inflow intervals carry exactly the constructed mass."""
    commodities = []
    for c in instance.commodities:
        if time_ends is not None:
            end = time_ends[c.id]
        else:
            end = c.inflow_start + volumes[c.id] / c.rate
        if end <= c.inflow_start:
            continue  # commodity injected nothing within the horizon
        commodities.append(Commodity(c.id, c.origin, c.destination, c.rate,
                                     c.inflow_start, end))
    result = validate_instance(Instance(instance.nodes, instance.arcs,
                                        tuple(commodities), instance.mode))
    if isinstance(result, list):
        raise AssertionError(f"truncated instance invalid: {result}")
    return result


# --------------------------------------------------------------------------
# verification
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NashViolation:
    code: str
    commodity: str
    subject: str
    particle: Fraction | None = None
    gap: Fraction | None = None

    def __str__(self):
        tail = ""
        if self.particle is not None:
            tail = f" at particle {self.particle}"
        if self.gap is not None:
            tail += f" (gap {self.gap})"
        return f"{self.code}({self.commodity},{self.subject}){tail}"

    def record(self) -> dict:
        from .rationals import format_optional_rational
        return {"code": self.code, "commodity": self.commodity,
                "subject": self.subject,
                "particle": format_optional_rational(self.particle),
                "gap": format_optional_rational(self.gap)}


@dataclass
class NashReport:
    ok: bool
    feasibility: FeasibilityReport
    violations: list
    labels: dict[str, LabelSet] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"ok": self.ok,
                "feasibility": self.feasibility.to_json(),
                "violations": [v.record() for v in self.violations]}


def verify_nash(instance: Instance, flow: FlowOverTime,
                profile: QueueProfile | None = None,
                require_feasible: bool = True) -> NashReport:
    """Certify the equilibrium conditions of a feasible flow.

    Recomputes earliest-arrival labels per commodity and checks, exactly and
    for every particle, that the cumulative inflow at the tail arrival time
    equals the cumulative outflow at the head arrival time; also checks that
    the underlying static flow of each commodity has value phi on its
    particle domain.
    """
    feas = check_feasibility(instance, flow, profile)
    if not feas.ok and require_feasible:
        return NashReport(False, feas, [NashViolation("NotFeasible", "*", "*")])
    if profile is None:
        profile = derive_profile(instance, flow)
    violations: list[NashViolation] = []
    labels_all: dict[str, LabelSet] = {}
    for c in instance.commodities:
        ls = earliest_arrival(instance, profile, c.id, c.particle_volume)
        labels_all[c.id] = ls
        for a in instance.arcs:
            lu = ls.labels.get(a.tail)
            lv = ls.labels.get(a.head)
            if lu is None:
                continue
            f_in = flow.inflow.get((c.id, a.id), StepFunction.zero())
            f_out = flow.outflow.get((c.id, a.id), StepFunction.zero())
            anchor = min(_anchor(f_in), _anchor(f_out))
            F_in = integrate(f_in, anchor)
            F_out = integrate(f_out, anchor)
            lhs = compose(F_in, lu)
            if lv is None:
                if any(v != 0 for v in lhs.values) or lhs.final_slope != 0:
                    violations.append(NashViolation("NashViolated", c.id, a.id))
                continue
            rhs = compose(F_out, lv)
            if lhs != rhs:
                phi, gap = _first_pwl_difference(lhs, rhs)
                violations.append(NashViolation("NashViolated", c.id, a.id, phi, gap))
        violations += _check_underlying_static_flow(instance, c, ls, flow)
    ok = feas.ok and not violations
    return NashReport(ok, feas, violations, labels_all)


def _first_pwl_difference(a: PwlFunction, b: PwlFunction):
    mesh = sorted(set(a.breakpoints) | set(b.breakpoints))
    probes = [mesh[0] - 1] + mesh + \
        [(x + y) / 2 for x, y in zip(mesh, mesh[1:])] + [mesh[-1] + 1]
    for x in sorted(probes):
        if a(x) != b(x):
            return x, a(x) - b(x)
    return None, None


def _check_underlying_static_flow(instance, commodity, labelset, flow):
    """The arc vector F_in(label at tail) must be a value-phi flow on K_j."""
    violations = []
    volume = commodity.particle_volume
    if volume is None:
        return violations
    per_arc = {}
    for a in instance.arcs:
        lu = labelset.labels.get(a.tail)
        if lu is None:
            continue
        f_in = flow.inflow.get((commodity.id, a.id), StepFunction.zero())
        per_arc[a.id] = compose(integrate(f_in, _anchor(f_in)), lu)
    for v in instance.nodes:
        if v == commodity.destination or v not in labelset.labels:
            continue
        terms = [per_arc[a.id] for a in instance.out_arcs(v) if a.id in per_arc]
        neg = [per_arc[a.id] for a in instance.in_arcs(v) if a.id in per_arc]
        if not terms and not neg:
            continue
        net = PwlFunction.constant(ZERO)
        for t in terms:
            net = net + t
        for t in neg:
            net = net - t
        expected = PwlFunction.line(ONE) if v == commodity.origin \
            else PwlFunction.constant(ZERO)
        diff = net - expected
        if not diff.is_zero_on(ZERO, volume):
            violations.append(NashViolation("UnderlyingFlowViolated",
                                            commodity.id, v))
    return violations


def check_derivatives_thinflow(instance: Instance, flow: FlowOverTime,
                               profile: QueueProfile | None = None):
    """Re-derive per-particle strategies and label slopes from the flow and
    verify the thin-flow conditions (the construction round trip)."""
    if profile is None:
        profile = derive_profile(instance, flow)
    labels_all = {}
    strategies = {}
    horizon = ZERO
    for c in instance.commodities:
        ls = earliest_arrival(instance, profile, c.id, c.particle_volume)
        labels_all[c.id] = ls
        if c.particle_volume is not None:
            horizon = max(horizon, c.particle_volume)
        for a in instance.arcs:
            lu = ls.labels.get(a.tail)
            if lu is None:
                continue
            f_in = flow.inflow.get((c.id, a.id), StepFunction.zero())
            cumulative = compose(integrate(f_in, _anchor(f_in)), lu)
            strategies[(c.id, a.id)] = differentiate(cumulative)
    return verify_multicommodity_thinflow(instance, strategies, labels_all, horizon)
