from fractions import Fraction

import pytest

from nashflow.netmodel import (COMMON_ORIGIN, Arc, Commodity, Instance,
                               validate_instance)
from nashflow.loading import check_feasibility, derive_profile, load_network
from nashflow.labels import earliest_arrival, waiting_from_labels
from nashflow.nash import (PhaseBudgetExceeded, check_derivatives_thinflow,
                           construct_common_destination,
                           construct_common_origin, construct_nash_single,
                           verify_nash)
from nashflow.timefn import StepFunction

from corpus import corpus, single_arc_canonical

F = Fraction


class TestConstructSingleArc:
    def setup_method(self):
        self.result = construct_nash_single(single_arc_canonical(), horizon=4)

    def test_first_phase_grows_queue(self):
        p = self.result.phases[0]
        assert p.phi_start == 0 and p.phi_end == 2
        assert p.thin.label_slopes["t"] == 1
        assert p.thin.flow["e"] == 1

    def test_arrival_label(self):
        lt = self.result.node_labels["t"]
        for phi in (F(0), F(1), F(2)):
            assert lt(phi) == phi + 1
        assert lt(2) == 3  # final arrival of the last particle

    def test_drain_phases_after_inflow_stops(self):
        # the queue drains while the sink label stays frozen, then normal pace
        lt = self.result.node_labels["t"]
        assert lt(3) == 3 and lt(4) == 3

    def test_flow_matches_loader_closed_form(self):
        flow = self.result.flow
        assert flow.inflow[("1", "e")] == StepFunction([0, 1], [2, 0], 0)
        assert flow.outflow[("1", "e")] == StepFunction([1, 3], [1, 0], 0)

    def test_verified(self):
        report = verify_nash(self.result.instance, self.result.flow)
        assert report.ok, [str(v) for v in report.violations]


class TestConstructVariants:
    def test_low_rate_single_phase(self):
        inst = validate_instance(Instance(
            ("s", "v", "t"),
            (Arc("a", "s", "v", F(1), F(2)), Arc("b", "v", "t", F(2), F(2))),
            (Commodity("1", "s", "t", F(1), F(0), F(1)),)))
        result = construct_nash_single(inst)
        assert len(result.phases) == 1
        thin = result.phases[0].thin
        assert all(s == 1 for s in thin.label_slopes.values())
        # no queues anywhere
        profile = derive_profile(result.instance, result.flow)
        for e in ("a", "b"):
            assert profile.volume[e].values == (F(0),)

    def test_parallel_activation_event(self):
        inst = validate_instance(Instance(
            ("s", "t"),
            (Arc("e1", "s", "t", F(1), F(1)), Arc("e2", "s", "t", F(2), F(2))),
            (Commodity("1", "s", "t", F(3), F(0), F(2)),)))
        result = construct_nash_single(inst, horizon=6)
        first, second = result.phases[0], result.phases[1]
        assert first.thin.active == frozenset({"e1"})
        assert first.phi_end == F(3, 2)  # the label gap of e2 closes here
        assert "e2" in second.thin.active
        assert second.thin.label_slopes["t"] == F(1, 3)
        assert verify_nash(result.instance, result.flow).ok

    def test_phase_budget(self):
        with pytest.raises(PhaseBudgetExceeded):
            construct_nash_single(single_arc_canonical(), horizon=4, max_phases=1)


class TestCommonDestination:
    def test_symmetric_sources(self):
        from corpus import corpus
        inst = next(i for n, i, _ in corpus() if n == "evac_symmetric")
        result = construct_common_destination(inst, horizon=2)
        p = result.phases[0]
        assert p.thin.supplies == {"1": F(1, 2), "2": F(1, 2)}
        assert p.thin.label_slopes["t"] == F(1, 2)
        # inflow distribution: each source takes half of every particle
        assert result.node_labels["s1"](2) == 1
        report = verify_nash(result.instance, result.flow)
        assert report.ok, [str(v) for v in report.violations]

    def test_far_source_activates_late(self):
        from corpus import corpus
        inst = next(i for n, i, _ in corpus() if n == "evac_far_near")
        result = construct_common_destination(inst, horizon=6)
        assert result.phases[0].thin.supplies["2"] == 0
        assert result.phases[-1].thin.supplies["2"] > 0
        # source-arrival identity: cumulative source inflow = label * rate
        for c in result.instance.commodities:
            lab = result.node_labels[c.origin]
            mass = sum((fl.get(a.id, F(0))
                        for p in result.phases
                        for a in inst.out_arcs(c.origin)
                        for fl in [p.flows[c.id]]), F(0))
        report = verify_nash(result.instance, result.flow)
        assert report.ok, [str(v) for v in report.violations]

    def test_source_inflow_identity_per_phase(self):
        # cumulative source inflow equals the source label times the rate,
        # exactly at phase ends
        from corpus import corpus
        inst = next(i for n, i, _ in corpus() if n == "evac_far_near")
        result = construct_common_destination(inst, horizon=6)
        acc = {c.id: F(0) for c in inst.commodities}
        for p in result.phases:
            width = p.phi_end - p.phi_start
            for c in inst.commodities:
                acc[c.id] += p.thin.supplies[c.id] * width
                lab = result.node_labels[c.origin](p.phi_end)
                assert acc[c.id] == lab * c.rate
        # supplies always sum to one
        for p in result.phases:
            assert sum(p.thin.supplies.values()) == 1


class TestCommonOrigin:
    def test_two_sinks_disjoint_paths(self):
        from corpus import corpus
        inst = next(i for n, i, _ in corpus() if n == "origin_two_sinks")
        result = construct_common_origin(inst, horizon=2)
        for p in result.phases:
            assert p.flows["1"].get("a", F(0)) == p.thin.value * F(1, 2)
            assert p.flows["2"].get("b", F(0)) == p.thin.value * F(1, 2)
            assert "b" not in p.flows["1"] and "a" not in p.flows["2"]
        report = verify_nash(result.instance, result.flow)
        assert report.ok, [str(v) for v in report.violations]

    def test_single_sink_reduces_to_single_commodity(self):
        inst = validate_instance(Instance(
            ("s", "t1"),
            (Arc("a", "s", "t1", F(1), F(1)),),
            (Commodity("1", "s", "t1", F(2), F(0), F(1)),),
            COMMON_ORIGIN))
        result = construct_common_origin(inst, horizon=2)
        plain = construct_nash_single(validate_instance(Instance(
            ("s", "t1"), (Arc("a", "s", "t1", F(1), F(1)),),
            (Commodity("1", "s", "t1", F(2), F(0), F(1)),))), horizon=2)
        assert result.flow.inflow[("1", "a")] == plain.flow.inflow[("1", "a")]

    def test_label_slope_bound_on_original_nodes(self):
        from corpus import corpus
        for name in ("origin_two_sinks", "origin_asymmetric"):
            inst = next(i for n, i, _ in corpus() if n == name)
            result = construct_common_origin(inst, horizon=2)
            bound = 1 / result.sigma
            for p in result.phases:
                for v in inst.nodes:
                    assert p.thin.label_slopes[v] <= bound, (name, v)

    def test_sink_arc_shares(self):
        from corpus import corpus
        inst = next(i for n, i, _ in corpus() if n == "origin_asymmetric")
        result = construct_common_origin(inst, horizon=2)
        r = sum(c.rate for c in inst.commodities)
        for p in result.phases:
            for c in inst.commodities:
                e = result.sink_arc_map[c.id]
                assert p.thin.flow.get(e, F(0)) == p.thin.value * c.rate / r


class TestVerifyNashNegative:
    def test_delayed_inflow_fails_the_gate(self):
        inst = validate_instance(Instance(
            ("s", "t"), (Arc("e", "s", "t", F(1), F(1)),),
            (Commodity("1", "s", "t", F(1), F(0), F(1)),)))
        from nashflow.loading import FlowOverTime
        flow = FlowOverTime(
            inflow={("1", "e"): StepFunction([F(1, 2), F(3, 2)], [1, 0], 0)},
            outflow={("1", "e"): StepFunction([F(3, 2), F(5, 2)], [1, 0], 0)},
        ).fill_totals(inst)
        report = verify_nash(inst, flow)
        assert not report.ok
        assert not report.feasibility.ok  # conservation breaks at the source

    def test_flow_forced_on_long_path(self):
        inst = validate_instance(Instance(
            ("s", "t"),
            (Arc("fast", "s", "t", F(1), F(5)), Arc("slow", "s", "t", F(3), F(5))),
            (Commodity("1", "s", "t", F(1), F(0), F(1)),)))
        inflows = {("1", "slow"): StepFunction([0, 1], [1, 0], 0)}
        flow, profile = load_network(inst, inflows)
        assert check_feasibility(inst, flow, profile).ok
        report = verify_nash(inst, flow, profile)
        assert not report.ok
        assert any(v.code == "NashViolated" and v.subject == "slow"
                   for v in report.violations)


class TestCorpusConstructVerify:
    """Every constructor output passes feasibility, the equilibrium check and
    the derivative thin-flow round trip with zero violations."""

    @pytest.mark.parametrize("name,instance,horizon",
                             [(n, i, h) for n, i, h in corpus()])
    def test_construct_then_verify(self, name, instance, horizon):
        result = _construct_by_mode(instance, horizon)
        profile = derive_profile(result.instance, result.flow)
        feas = check_feasibility(result.instance, result.flow, profile)
        assert feas.ok, (name, list(map(str, feas.violations)))
        report = verify_nash(result.instance, result.flow, profile)
        assert report.ok, (name, list(map(str, report.violations)))
        thin_report = check_derivatives_thinflow(result.instance, result.flow,
                                                 profile)
        assert thin_report.ok, (name, list(map(str, thin_report.violations)))

    @pytest.mark.parametrize("name,instance,horizon",
                             [(n, i, h) for n, i, h in corpus()])
    def test_waiting_reconstruction(self, name, instance, horizon):
        # label-gap waiting times agree with the loaded queues everywhere
        result = _construct_by_mode(instance, horizon)
        flow, profile = load_network(result.instance,
                                     {k: f for k, f in result.flow.inflow.items()})
        labels = {c.id: earliest_arrival(result.instance, profile, c.id)
                  for c in result.instance.commodities}
        for a in result.instance.arcs:
            q = profile.waiting[a.id]
            probes = list(q.breakpoints)
            probes += [(x + y) / 2 for x, y in zip(q.breakpoints, q.breakpoints[1:])]
            for theta in probes:
                assert waiting_from_labels(result.instance, labels, a.id,
                                           theta) == q(theta), (name, a.id, theta)


def _construct_by_mode(instance, horizon):
    if instance.mode == "commonOrigin":
        return construct_common_origin(instance, horizon)
    if instance.mode == "commonDestination":
        return construct_common_destination(instance, horizon)
    return construct_nash_single(instance, horizon)
