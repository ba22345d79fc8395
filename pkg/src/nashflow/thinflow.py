"""Thin flows with resetting: exact solvers and verifiers.

A thin flow assigns a static flow x' on the active arcs and a label slope l'
to every node so that slopes propagate by the per-arc stress rule: a
resetting arc imposes (x'+y')/capacity, any other active arc the maximum of
that and the tail's slope; node slopes are the minimum over incoming active
arcs and arcs carrying flow must attain it.

The solvers enumerate per-arc states (no equation / label-setting /
capacity-setting), solve the induced rational linear system and keep the
first assignment whose solution passes the independent condition evaluator.
This doubles as a brute-force oracle at small sizes; there is no polynomial
algorithm here by design.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction

from .netmodel import Instance
from .timefn import ONE, ZERO, StepFunction, differentiate, min_preimage
from .labels import foreign_rate_at, waiting_from_labels

SIZE_LIMIT = 25


class NoSinkPath(ValueError):
    """The sink is unreachable within the active arcs."""


class Cyclic(ValueError):
    """The active arc set must be acyclic."""


class SizeLimitExceeded(RuntimeError):
    """The exact solver only handles small active sets."""


class UnreachableNode(ValueError):
    """Some referenced node is unreachable from every source."""


class NewArcInactive(RuntimeError):
    """A grouping arc of the decomposition carries no membership."""

    def __init__(self, commodity):
        super().__init__(f"grouping arc of commodity {commodity} is inactive")
        self.commodity = commodity


def stress(capacity, label_slope, flow, foreign=ZERO, resetting=False) -> Fraction:
    """Per-arc stress: (x'+y')/capacity, floored by the tail slope unless the
    arc is resetting."""
    load = (Fraction(flow) + Fraction(foreign)) / Fraction(capacity)
    if resetting:
        return load
    return max(Fraction(label_slope), load)


@dataclass
class ThinFlow:
    flow: dict[str, Fraction]            # arc id -> x'
    label_slopes: dict[str, Fraction]    # node -> l'
    active: frozenset
    resetting: frozenset
    rate: Fraction
    value: Fraction = ONE

    def to_json(self) -> dict:
        from .rationals import format_rational
        return {
            "flow": {e: format_rational(x) for e, x in sorted(self.flow.items())},
            "label_slopes": {v: format_rational(l)
                             for v, l in sorted(self.label_slopes.items())},
            "active": sorted(self.active),
            "resetting": sorted(self.resetting),
            "rate": format_rational(self.rate),
            "value": format_rational(self.value),
        }


@dataclass
class MultiSourceThinFlow:
    supplies: dict[str, Fraction]        # commodity -> x'_j
    flow: dict[str, Fraction]
    label_slopes: dict[str, Fraction]
    active: frozenset
    resetting: frozenset

    def to_json(self) -> dict:
        from .rationals import format_rational
        return {
            "supplies": {j: format_rational(x) for j, x in sorted(self.supplies.items())},
            "flow": {e: format_rational(x) for e, x in sorted(self.flow.items())},
            "label_slopes": {v: format_rational(l)
                             for v, l in sorted(self.label_slopes.items())},
            "active": sorted(self.active),
            "resetting": sorted(self.resetting),
        }


def _reachable(instance: Instance, roots, arc_ids) -> set:
    adj: dict[str, list[str]] = {}
    for e in arc_ids:
        a = instance.arc(e)
        adj.setdefault(a.tail, []).append(a.head)
    seen = set(roots)
    stack = list(roots)
    while stack:
        u = stack.pop()
        for w in adj.get(u, ()):
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return seen


def _is_acyclic(instance: Instance, arc_ids) -> bool:
    adj: dict[str, list[str]] = {}
    for e in arc_ids:
        a = instance.arc(e)
        adj.setdefault(a.tail, []).append(a.head)
    color: dict[str, int] = {}

    def dfs(u):
        color[u] = 1
        for w in adj.get(u, ()):
            c = color.get(w, 0)
            if c == 1 or (c == 0 and dfs(w)):
                return True
        color[u] = 2
        return False

    return not any(color.get(u, 0) == 0 and dfs(u) for u in list(adj))


def _solve_linear(rows, variables):
    """Gauss elimination over the rationals.

    ``rows`` are (coefficient dict, rhs) pairs.  Returns the unique solution
    as a dict, None when inconsistent, or "under" when underdetermined.
    """
    index = {v: k for k, v in enumerate(variables)}
    n = len(variables)
    matrix = []
    for coeffs, rhs in rows:
        vec = [ZERO] * n
        for var, cf in coeffs.items():
            vec[index[var]] += Fraction(cf)
        matrix.append((vec, Fraction(rhs)))
    pivots = {}
    row_at = 0
    for col in range(n):
        pivot = None
        for r in range(row_at, len(matrix)):
            if matrix[r][0][col] != 0:
                pivot = r
                break
        if pivot is None:
            continue
        matrix[row_at], matrix[pivot] = matrix[pivot], matrix[row_at]
        vec, rhs = matrix[row_at]
        inv = 1 / vec[col]
        vec = [c * inv for c in vec]
        rhs *= inv
        matrix[row_at] = (vec, rhs)
        for r in range(len(matrix)):
            if r != row_at and matrix[r][0][col] != 0:
                f = matrix[r][0][col]
                matrix[r] = ([a - f * b for a, b in zip(matrix[r][0], vec)],
                             matrix[r][1] - f * rhs)
        pivots[col] = row_at
        row_at += 1
    for vec, rhs in matrix[row_at:]:
        if rhs != 0:
            return None
    if len(pivots) < n:
        return "under"
    solution = {}
    for col, r in pivots.items():
        solution[variables[col]] = matrix[r][1]
    return solution


def _conditions_single(instance, active, resetting, source, sink, rate, value,
                       flow, slopes, nodes):
    """Violations of the defining conditions; independent of solver algebra."""
    violations = []
    if slopes.get(source) != 1 / Fraction(rate):
        violations.append(("SourceSlope", source))
    for e, x in flow.items():
        if x < 0:
            violations.append(("NegativeFlow", e))
        if x > 0 and e not in active:
            violations.append(("SupportViolated", e))
    for v in nodes:
        net = sum((flow.get(a.id, ZERO) for a in instance.out_arcs(v)), ZERO) \
            - sum((flow.get(a.id, ZERO) for a in instance.in_arcs(v)), ZERO)
        expected = value if v == source else (-value if v == sink else ZERO)
        if net != expected:
            violations.append(("ConservationViolated", v))
    for v in nodes:
        if v == source:
            continue
        rhos = []
        for a in instance.in_arcs(v):
            if a.id not in active or a.tail not in nodes:
                continue
            rhos.append((a.id, stress(a.capacity, slopes[a.tail],
                                      flow.get(a.id, ZERO), ZERO,
                                      a.id in resetting)))
        if not rhos:
            violations.append(("NoActiveIncoming", v))
            continue
        best = min(r for _, r in rhos)
        if slopes[v] != best:
            violations.append(("MinViolated", v))
        for e, r in rhos:
            if flow.get(e, ZERO) > 0 and r != slopes[v]:
                violations.append(("TightnessViolated", e))
    return violations


def solve_thinflow_single(instance: Instance, active, resetting, source, sink,
                          rate, value=ONE) -> ThinFlow:
    """Unique-label thin flow for one source and sink.

    The label slopes are unique; among flow parts the first consistent
    assignment in a fixed enumeration order is returned, so outputs are
    deterministic.
    """
    active = frozenset(active)
    resetting = frozenset(resetting)
    rate = Fraction(rate)
    value = Fraction(value)
    if not resetting <= active:
        raise ValueError("resetting arcs must be active")
    if not _is_acyclic(instance, active):
        raise Cyclic("active arcs contain a cycle")
    nodes = _reachable(instance, [source], active)
    if sink not in nodes:
        raise NoSinkPath(f"{sink} unreachable from {source} in the active arcs")
    usable = [e for e in sorted(active) if instance.arc(e).tail in nodes]
    if len(usable) > SIZE_LIMIT:
        raise SizeLimitExceeded(f"{len(usable)} active arcs exceed {SIZE_LIMIT}")

    if value == 0:
        slopes = _propagate_zero_flow(instance, usable, resetting, source, rate, nodes)
        return ThinFlow({e: ZERO for e in usable}, slopes, active, resetting,
                        rate, value)

    base_rows = [({source: ONE}, 1 / rate)]
    for v in nodes:
        coeffs = {}
        for a in instance.out_arcs(v):
            if a.id in usable:
                coeffs[("x", a.id)] = coeffs.get(("x", a.id), ZERO) + 1
        for a in instance.in_arcs(v):
            if a.id in usable:
                coeffs[("x", a.id)] = coeffs.get(("x", a.id), ZERO) - 1
        rhs = value if v == source else (-value if v == sink else ZERO)
        base_rows.append((coeffs, rhs))

    for flow, slopes in _enumerate_assignments(instance, usable, resetting,
                                               nodes, base_rows):
        if not _conditions_single(instance, active, resetting, source, sink,
                                  rate, value, flow, slopes, nodes):
            return ThinFlow(flow, slopes, active, resetting, rate, value)
    raise RuntimeError("no thin flow found; the configuration is inconsistent")


def _propagate_zero_flow(instance, usable, resetting, source, rate, nodes):
    """Label slopes for the zero-value thin flow (direct propagation)."""
    order = _topological(instance, usable, nodes)
    slopes = {source: 1 / Fraction(rate)}
    for v in order:
        if v == source:
            continue
        rhos = [ZERO if a.id in resetting else slopes[a.tail]
                for a in instance.in_arcs(v)
                if a.id in usable and a.tail in slopes]
        slopes[v] = min(rhos) if rhos else ZERO
    return slopes


def _topological(instance, arc_ids, nodes) -> list:
    adj: dict[str, list[str]] = {}
    indeg = {v: 0 for v in nodes}
    for e in arc_ids:
        a = instance.arc(e)
        if a.tail in nodes and a.head in nodes:
            adj.setdefault(a.tail, []).append(a.head)
            indeg[a.head] += 1
    queue = sorted(v for v in nodes if indeg[v] == 0)
    order = []
    while queue:
        u = queue.pop(0)
        order.append(u)
        for w in sorted(adj.get(u, ())):
            indeg[w] -= 1
            if indeg[w] == 0:
                queue.append(w)
    return order


def _enumerate_assignments(instance, usable, resetting, nodes, base_rows):
    """Yield (flow, slopes) solutions of per-arc state assignments.

    States: "Z" forces x=0 with no equation, "L" asserts the tail's slope is
    attained (only meaningful off the resetting set), "C" asserts the
    capacity ratio is attained.
    """
    state_options = []
    for e in usable:
        if e in resetting:
            state_options.append(("Z", "C"))
        else:
            state_options.append(("Z", "L", "C"))
    for states in itertools.product(*state_options):
        rows = list(base_rows)
        variables = [v for v in sorted(nodes)]
        for e, st in zip(usable, states):
            arc = instance.arc(e)
            if st == "Z":
                continue
            variables.append(("x", e))
            if st == "L":
                rows.append(({arc.head: ONE, arc.tail: -ONE}, ZERO))
            else:
                rows.append(({("x", e): ONE, arc.head: -arc.capacity}, ZERO))
        # Z arcs keep coefficient entries in conservation rows; zero them out
        zset = {e for e, st in zip(usable, states) if st == "Z"}
        fixed_rows = []
        for coeffs, rhs in rows:
            fixed = {var: cf for var, cf in coeffs.items()
                     if not (isinstance(var, tuple) and var[0] == "x" and var[1] in zset)}
            fixed_rows.append((fixed, rhs))
        solution = _solve_linear(fixed_rows, variables)
        if solution is None or solution == "under":
            continue
        flow = {e: solution.get(("x", e), ZERO) for e in usable}
        slopes = {v: solution[v] for v in sorted(nodes)}
        yield flow, slopes


def _conditions_multisource(instance, active, resetting, sources, sink,
                            supplies, flow, slopes, nodes):
    violations = []
    total = sum(supplies.values(), ZERO)
    if total != 1:
        violations.append(("SupplySum", str(total)))
    for j, (s_j, r_j) in sources.items():
        if supplies[j] < 0:
            violations.append(("NegativeSupply", j))
        if slopes.get(s_j) != supplies[j] / r_j:
            violations.append(("SourceSlope", j))
    source_nodes = {s for s, _ in sources.values()}
    for e, x in flow.items():
        if x < 0:
            violations.append(("NegativeFlow", e))
        if x > 0 and e not in active:
            violations.append(("SupportViolated", e))
    for v in nodes:
        net = sum((flow.get(a.id, ZERO) for a in instance.out_arcs(v)), ZERO) \
            - sum((flow.get(a.id, ZERO) for a in instance.in_arcs(v)), ZERO)
        expected = sum((supplies[j] for j, (s, _) in sources.items() if s == v), ZERO)
        if v == sink:
            expected -= 1
        if net != expected:
            violations.append(("ConservationViolated", v))
    for v in nodes:
        rhos = []
        for a in instance.in_arcs(v):
            if a.id not in active or a.tail not in nodes:
                continue
            rhos.append((a.id, stress(a.capacity, slopes[a.tail],
                                      flow.get(a.id, ZERO), ZERO,
                                      a.id in resetting)))
        if v in source_nodes:
            if rhos and slopes[v] > min(r for _, r in rhos):
                violations.append(("SourceMinViolated", v))
        else:
            if not rhos:
                violations.append(("NoActiveIncoming", v))
                continue
            if slopes[v] != min(r for _, r in rhos):
                violations.append(("MinViolated", v))
        for e, r in rhos:
            if flow.get(e, ZERO) > 0 and r != slopes[v]:
                violations.append(("TightnessViolated", e))
    return violations


def solve_thinflow_multisource(instance: Instance, active, resetting,
                               sources: dict, sink) -> MultiSourceThinFlow:
    """Thin flow with per-source supplies summing to one.

    ``sources`` maps commodity id to (source node, rate).  Source label
    slopes are supply/rate and never exceed the incoming stress; all other
    nodes take the minimum incoming stress, attained wherever flow runs.
    """
    active = frozenset(active)
    resetting = frozenset(resetting)
    if not resetting <= active:
        raise ValueError("resetting arcs must be active")
    if not _is_acyclic(instance, active):
        raise Cyclic("active arcs contain a cycle")
    source_nodes = {s for s, _ in sources.values()}
    if len(source_nodes) != len(sources):
        raise ValueError("sources must be distinct nodes")
    nodes = _reachable(instance, source_nodes, active)
    if sink not in nodes:
        raise NoSinkPath(f"{sink} unreachable from the sources")
    usable = [e for e in sorted(active) if instance.arc(e).tail in nodes]
    for e in active:
        a = instance.arc(e)
        if a.tail not in nodes or a.head not in nodes:
            raise UnreachableNode(e)
    if len(usable) > SIZE_LIMIT:
        raise SizeLimitExceeded(f"{len(usable)} active arcs exceed {SIZE_LIMIT}")

    base_rows = [({("s", j): ONE for j in sources}, ONE)]
    for j, (s_j, r_j) in sources.items():
        base_rows.append(({("s", j): ONE, s_j: -Fraction(r_j)}, ZERO))
    for v in nodes:
        coeffs = {}
        for a in instance.out_arcs(v):
            if a.id in usable:
                coeffs[("x", a.id)] = coeffs.get(("x", a.id), ZERO) + 1
        for a in instance.in_arcs(v):
            if a.id in usable:
                coeffs[("x", a.id)] = coeffs.get(("x", a.id), ZERO) - 1
        for j, (s_j, _) in sources.items():
            if s_j == v:
                coeffs[("s", j)] = coeffs.get(("s", j), ZERO) - 1
        rhs = -ONE if v == sink else ZERO
        base_rows.append((coeffs, rhs))

    state_options = []
    for e in usable:
        state_options.append(("Z", "C") if e in resetting else ("Z", "L", "C"))
    for states in itertools.product(*state_options):
        rows = list(base_rows)
        variables = [v for v in sorted(nodes)] + [("s", j) for j in sorted(sources)]
        for e, st in zip(usable, states):
            arc = instance.arc(e)
            if st == "Z":
                continue
            variables.append(("x", e))
            if st == "L":
                rows.append(({arc.head: ONE, arc.tail: -ONE}, ZERO))
            else:
                rows.append(({("x", e): ONE, arc.head: -arc.capacity}, ZERO))
        zset = {e for e, st in zip(usable, states) if st == "Z"}
        fixed_rows = []
        for coeffs, rhs in rows:
            fixed = {var: cf for var, cf in coeffs.items()
                     if not (isinstance(var, tuple) and var[0] == "x" and var[1] in zset)}
            fixed_rows.append((fixed, rhs))
        solution = _solve_linear(fixed_rows, variables)
        if solution is None or solution == "under":
            continue
        flow = {e: solution.get(("x", e), ZERO) for e in usable}
        slopes = {v: solution[v] for v in sorted(nodes)}
        supplies = {j: solution[("s", j)] for j in sources}
        if not _conditions_multisource(instance, active, resetting, sources,
                                       sink, supplies, flow, slopes, nodes):
            return MultiSourceThinFlow(supplies, flow, slopes, active, resetting)
    raise RuntimeError("no multi-source thin flow found")


def check_thinflow(instance, thin: ThinFlow, source, sink) -> list:
    """Public re-check of a single-commodity thin flow's conditions."""
    nodes = _reachable(instance, [source], thin.active)
    return _conditions_single(instance, thin.active, thin.resetting, source,
                              sink, thin.rate, thin.value, thin.flow,
                              thin.label_slopes, nodes)


def check_multisource_thinflow(instance, thin: MultiSourceThinFlow,
                               sources: dict, sink) -> list:
    nodes = _reachable(instance, {s for s, _ in sources.values()}, thin.active)
    return _conditions_multisource(instance, thin.active, thin.resetting,
                                   sources, sink, thin.supplies, thin.flow,
                                   thin.label_slopes, nodes)


# --------------------------------------------------------------------------
# static flow decomposition grouped by designated arcs
# --------------------------------------------------------------------------


def decompose(instance: Instance, thin: ThinFlow, group_arcs: dict,
              expected_shares: dict | None = None) -> dict:
    """Split a thin flow into per-commodity static flows by path grouping.

    ``group_arcs`` maps commodity id to its designated arc; every
    source-sink path in the (acyclic) support uses exactly one of them.
    Returns {commodity: {arc id: flow}} restricted to non-group arcs.
    Raises NewArcInactive(j) when a designated arc is inactive, and checks
    the expected per-commodity share when given.
    """
    for j, e in group_arcs.items():
        if e not in thin.active:
            raise NewArcInactive(j)
    if expected_shares:
        for j, share in expected_shares.items():
            got = thin.flow.get(group_arcs[j], ZERO)
            if got != share:
                raise AssertionError(
                    f"share of commodity {j} is {got}, expected {share}")
    residual = {e: x for e, x in thin.flow.items() if x > 0}
    group_of = {e: j for j, e in group_arcs.items()}
    out: dict[str, dict[str, Fraction]] = {j: {} for j in group_arcs}
    tails = {}
    for e in residual:
        a = instance.arc(e)
        tails.setdefault(a.tail, []).append(e)
    for lst in tails.values():
        lst.sort()

    def first_path():
        # start from a node with positive out-throughput and no residual in-flow
        starts = set(tails)
        for e in residual:
            starts.discard(instance.arc(e).head)
        if not starts:
            return None
        u = sorted(starts)[0]
        path = []
        while u in tails:
            e = next((x for x in tails[u] if residual.get(x, ZERO) > 0), None)
            if e is None:
                break
            path.append(e)
            u = instance.arc(e).head
        return path or None

    while residual:
        path = first_path()
        if not path:
            break
        delta = min(residual[e] for e in path)
        members = [e for e in path if e in group_of]
        if len(members) != 1:
            raise AssertionError(f"path {path} uses {len(members)} grouping arcs")
        j = group_of[members[0]]
        for e in path:
            if e not in group_of:
                out[j][e] = out[j].get(e, ZERO) + delta
            residual[e] -= delta
            if residual[e] == 0:
                del residual[e]
                tails[instance.arc(e).tail].remove(e)
                if not tails[instance.arc(e).tail]:
                    del tails[instance.arc(e).tail]
    if residual:
        raise AssertionError(f"decomposition left residual flow on {sorted(residual)}")
    return out


# --------------------------------------------------------------------------
# multi-commodity thin flow verification
# --------------------------------------------------------------------------


@dataclass
class ThinFlowReport:
    ok: bool
    violations: list
    pieces: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"ok": self.ok,
                "violations": [v.record() for v in self.violations],
                "pieces": {j: len(p) for j, p in self.pieces.items()}}


@dataclass(frozen=True)
class ThinFlowViolation:
    code: str
    commodity: str
    subject: str
    piece: tuple

    def __str__(self):
        lo, hi = self.piece
        return f"{self.code}({self.commodity},{self.subject}) on [{lo},{hi})"

    def record(self) -> dict:
        from .rationals import format_rational
        return {"code": self.code, "commodity": self.commodity,
                "subject": self.subject,
                "piece": [format_rational(self.piece[0]),
                          format_rational(self.piece[1])]}


def verify_multicommodity_thinflow(instance: Instance, strategies: dict,
                                   labels_all: dict, horizon,
                                   require_tightness: bool = True) -> ThinFlowReport:
    """Check the per-particle slope conditions of all commodities on [0, H].

    On every piece of a partition fine enough that activity and resetting
    statuses are constant, the source slope must be 1/r, every other node's
    slope the minimum stress over its active incoming arcs (with foreign
    rates sampled from the other commodities), arcs carrying flow must attain
    that minimum, and flow is confined to active arcs.  With
    ``require_tightness=False`` only the first two conditions are checked;
    extended labels satisfy those for arbitrary strategies.
    """
    horizon = Fraction(horizon)
    violations = []
    pieces_per_commodity = {}
    for c in instance.commodities:
        j = c.id
        ls = labels_all[j]
        cells = _partition(instance, labels_all, strategies, j, horizon)
        pieces_per_commodity[j] = cells
        lslope = {v: differentiate(f) for v, f in ls.labels.items()}
        for lo, hi in cells:
            m = (lo + hi) / 2
            piece = (lo, hi)
            in_k = c.particle_volume is None or m < c.particle_volume
            if lslope[c.origin](m) != 1 / c.rate:
                violations.append(ThinFlowViolation("TF1Violated", j, c.origin, piece))
            status = {}
            for a in instance.arcs:
                lu = ls.labels.get(a.tail)
                lv = ls.labels.get(a.head)
                if lu is None:
                    continue
                theta = lu(m)
                q = waiting_from_labels(instance, labels_all, a.id, theta)
                active = lv is not None and lv(m) == theta + a.transit + q
                status[a.id] = (active, q > 0)
                x = strategies.get((j, a.id), StepFunction.zero())(m)
                if require_tightness and x > 0 and not active:
                    violations.append(ThinFlowViolation("SupportViolated", j, a.id, piece))
            for v in instance.nodes:
                if v == c.origin or v not in ls.labels:
                    continue
                rhos = []
                for a in instance.in_arcs(v):
                    st = status.get(a.id)
                    if not st or not st[0]:
                        continue
                    x = strategies.get((j, a.id), StepFunction.zero())(m)
                    y = foreign_rate_at(instance, labels_all, strategies, j, a.id, m)
                    rho = stress(a.capacity, lslope[a.tail](m), x, y, st[1])
                    rhos.append((a.id, x, rho))
                if not rhos:
                    violations.append(ThinFlowViolation("TF2Violated", j, v, piece))
                    continue
                best = min(r for _, _, r in rhos)
                if lslope[v](m) != best:
                    violations.append(ThinFlowViolation("TF2Violated", j, v, piece))
                if require_tightness:
                    for e, x, rho in rhos:
                        if x > 0 and rho != lslope[v](m):
                            violations.append(ThinFlowViolation("TF3Violated", j, e, piece))
            # the strategy must be a static flow of value 1 on K_j, 0 outside
            for v in instance.nodes:
                net = sum((strategies.get((j, a.id), StepFunction.zero())(m)
                           for a in instance.out_arcs(v)), ZERO) \
                    - sum((strategies.get((j, a.id), StepFunction.zero())(m)
                           for a in instance.in_arcs(v)), ZERO)
                expected = ZERO
                if v == c.origin:
                    expected = ONE if in_k else ZERO
                elif v == c.destination:
                    expected = -ONE if in_k else ZERO
                if net != expected:
                    violations.append(ThinFlowViolation("StaticFlowViolated", j, v, piece))
                    break
    return ThinFlowReport(ok=not violations, violations=violations,
                          pieces=pieces_per_commodity)


def _partition(instance, labels_all, strategies, j, horizon):
    """Cells of [0, horizon] on which every checked quantity is linear."""
    ls = labels_all[j]
    cuts = {ZERO, horizon}
    for f in ls.labels.values():
        cuts |= {b for b in f.breakpoints if 0 < b < horizon}
    for (jj, e), f in strategies.items():
        if jj == j:
            cuts |= {b for b in f.breakpoints if 0 < b < horizon}
    for a in instance.arcs:
        lu_j = ls.labels.get(a.tail)
        if lu_j is None:
            continue
        for i, ols in labels_all.items():
            if i == j:
                continue
            lu_i = ols.labels.get(a.tail)
            if lu_i is None:
                continue
            marks = set(lu_i.breakpoints)
            lv_i = ols.labels.get(a.head)
            if lv_i is not None:
                marks |= set(lv_i.breakpoints)
            marks |= set(strategies.get((i, a.id), StepFunction.zero()).breakpoints)
            for beta in marks:
                phi = _preimage_or_none(lu_j, lu_i(beta))
                if phi is not None and 0 < phi < horizon:
                    cuts.add(phi)
    cells = sorted(cuts)
    # refine by sign changes of the per-arc gap curves against each other,
    # zero, and the commodity's own gap (activity / resetting switches)
    for _ in range(3):
        extra = set()
        for a in instance.arcs:
            lu_j = ls.labels.get(a.tail)
            if lu_j is None:
                continue
            curves = [_gap_curve(instance, labels_all, i, a, lu_j)
                      for i in labels_all]
            curves = [c for c in curves if c is not None]
            curves.append(lambda phi: ZERO)
            for x0, x1 in zip(cells, cells[1:]):
                for p in range(len(curves)):
                    for r in range(p + 1, len(curves)):
                        va = curves[p](x0) - curves[r](x0)
                        vb = curves[p](x1) - curves[r](x1)
                        if va != 0 and vb != 0 and (va > 0) != (vb > 0):
                            extra.add(x0 + (x1 - x0) * (-va) / (vb - va))
        if not extra - set(cells):
            break
        cells = sorted(set(cells) | extra)
    return list(zip(cells, cells[1:]))


def _gap_curve(instance, labels_all, i, arc, lu_j):
    """Commodity i's label gap on ``arc`` as a function of commodity j's
    particle (sampled through the shared tail arrival time)."""
    ols = labels_all[i]
    lu_i = ols.labels.get(arc.tail)
    lv_i = ols.labels.get(arc.head)
    if lu_i is None or lv_i is None:
        return None

    def curve(phi):
        from .timefn import ValueNotAttained
        theta = lu_j(phi)
        try:
            phi_i = min_preimage(lu_i, theta)
        except ValueNotAttained:
            return ZERO
        return lv_i(phi_i) - theta - arc.transit

    return curve


def _preimage_or_none(f, value):
    from .timefn import ValueNotAttained
    try:
        return min_preimage(f, value)
    except ValueNotAttained:
        return None
