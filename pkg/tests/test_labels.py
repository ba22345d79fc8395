from fractions import Fraction

import pytest

from nashflow.netmodel import Arc, Commodity, Instance, validate_instance
from nashflow.loading import load_network
from nashflow.labels import (ZeroTransitArc, arc_status, earliest_arrival,
                             extend_labels, foreign_flow, foreign_rate_at,
                             waiting_from_labels)
from nashflow.timefn import PwlFunction, StepFunction

F = Fraction


def single_arc(rate=2, interval=(0, 1)):
    return validate_instance(Instance(
        nodes=("s", "t"),
        arcs=(Arc("e", "s", "t", F(1), F(1)),),
        commodities=(Commodity("1", "s", "t", F(rate), F(interval[0]),
                               F(interval[1])),),
    ))


def loaded_single_arc():
    instance = single_arc()
    inflows = {("1", "e"): StepFunction([0, 1], [2, 0], 0)}
    flow, profile = load_network(instance, inflows)
    return instance, flow, profile


def parallel_arcs():
    return validate_instance(Instance(
        nodes=("s", "t"),
        arcs=(Arc("fast", "s", "t", F(1), F(1)), Arc("slow", "s", "t", F(2), F(5))),
        commodities=(Commodity("1", "s", "t", F(2), F(0), F(2)),),
    ))


class TestEarliestArrival:
    def test_empty_network_is_shifted_distance(self):
        instance = validate_instance(Instance(
            nodes=("s", "v", "t"),
            arcs=(Arc("a", "s", "v", F(1), F(1)), Arc("b", "v", "t", F(2), F(1)),
                  Arc("c", "s", "t", F(4), F(1))),
            commodities=(Commodity("1", "s", "t", F(2), F(3), F(4)),),
        ))
        flow, profile = load_network(instance, {})
        ls = earliest_arrival(instance, profile, "1")
        for phi in (F(0), F(1), F(7, 2)):
            assert ls.labels["s"](phi) == phi / 2 + 3
            assert ls.labels["v"](phi) == phi / 2 + 3 + 1
            assert ls.labels["t"](phi) == phi / 2 + 3 + 3

    def test_single_arc_label(self):
        instance, flow, profile = loaded_single_arc()
        ls = earliest_arrival(instance, profile, "1")
        for phi in (F(0), F(1, 2), F(1), F(2)):
            assert ls.labels["t"](phi) == phi + 1
        # queue drains: the label is flat at 3 until phi = 4, then phi/2 + 1
        assert ls.labels["t"](3) == 3
        assert ls.labels["t"](4) == 3
        assert ls.labels["t"](6) == 4

    def test_slower_parallel_arc_never_attains(self):
        instance = parallel_arcs()
        inflows = {("1", "fast"): StepFunction([0, 2], [2, 0], 0)}
        flow, profile = load_network(instance, inflows)
        ls = earliest_arrival(instance, profile, "1")
        # the slow arc candidate phi/2 + 2 exceeds phi + 1 until phi = 2
        assert ls.labels["t"](1) == 2
        active, _ = arc_status(instance, ls, profile, F(1))
        assert active == {"fast"}

    def test_unreachable_node_has_no_label(self):
        instance = validate_instance(Instance(
            nodes=("s", "t", "w"),
            arcs=(Arc("e", "s", "t", F(1), F(1)), Arc("f", "w", "t", F(1), F(1))),
            commodities=(Commodity("1", "s", "t", F(1), F(0), F(1)),),
        ))
        flow, profile = load_network(instance, {})
        ls = earliest_arrival(instance, profile, "1")
        assert "w" not in ls.labels


class TestArcStatus:
    def test_empty_network_shortest_paths_active(self):
        instance = validate_instance(Instance(
            nodes=("s", "v", "t"),
            arcs=(Arc("a", "s", "v", F(1), F(1)), Arc("b", "v", "t", F(2), F(1)),
                  Arc("c", "s", "t", F(4), F(1))),
            commodities=(Commodity("1", "s", "t", F(2), F(0), F(1)),),
        ))
        flow, profile = load_network(instance, {})
        ls = earliest_arrival(instance, profile, "1")
        active, resetting = arc_status(instance, ls, profile, F(0))
        assert active == {"a", "b"} and resetting == set()

    def test_single_arc_active_and_resetting(self):
        instance, flow, profile = loaded_single_arc()
        ls = earliest_arrival(instance, profile, "1")
        active, resetting = arc_status(instance, ls, profile, F(1, 2))
        # the particle enters at 1/4 where the queue already stands
        assert profile.waiting["e"](F(1, 4)) == F(1, 4)
        assert active == {"e"} and resetting == {"e"}

    def test_resetting_but_not_active(self):
        instance = parallel_arcs()
        inflows = {("1", "fast"): StepFunction([0, 2], [2, 0], 0)}
        flow, profile = load_network(instance, inflows)
        ls = earliest_arrival(instance, profile, "1")
        active, resetting = arc_status(instance, ls, profile, F(3))
        assert "fast" in resetting and "fast" not in active
        assert active == {"slow"}


class TestWaitingFromLabels:
    def test_empty_network_zero(self):
        instance = single_arc()
        flow, profile = load_network(instance, {})
        ls = earliest_arrival(instance, profile, "1")
        for theta in (F(0), F(1), F(5)):
            assert waiting_from_labels(instance, {"1": ls}, "e", theta) == 0

    def test_matches_loader_on_equilibrium(self):
        instance, flow, profile = loaded_single_arc()
        ls = earliest_arrival(instance, profile, "1")
        q = profile.waiting["e"]
        for theta in list(q.breakpoints) + [F(1, 3), F(1, 2), F(3, 2)]:
            assert waiting_from_labels(instance, {"1": ls}, "e", theta) == q(theta)


def shared_arc_instance():
    return validate_instance(Instance(
        nodes=("s", "t"),
        arcs=(Arc("e", "s", "t", F(1), F(1)),),
        commodities=(Commodity("1", "s", "t", F(1), F(0), F(1)),
                     Commodity("2", "s", "t", F(1), F(0), F(1))),
    ))


def shared_arc_strategies():
    one = StepFunction([0, 1], [1, 0], 0)
    return {("1", "e"): one, ("2", "e"): one}


class TestExtendLabels:
    def test_positive_transit_required(self):
        inst = validate_instance(Instance(
            nodes=("s", "t"),
            arcs=(Arc("e", "s", "t", F(0), F(1)),),
            commodities=(Commodity("1", "s", "t", F(1), F(0), F(1)),),
        ))
        with pytest.raises(ZeroTransitArc):
            extend_labels(inst, {}, 1)

    def test_single_commodity_single_arc(self):
        instance = single_arc()
        strategies = {("1", "e"): StepFunction([0, 2], [1, 0], 0)}
        out = extend_labels(instance, strategies, 2)
        lt = out["1"].labels["t"]
        for phi in (F(0), F(1, 2), F(1), F(3, 2), F(2)):
            assert lt(phi) == phi + 1
        # cross-check against the loaded-flow labels on the whole range
        inflows = {("1", "e"): StepFunction([0, 1], [2, 0], 0)}
        flow, profile = load_network(instance, inflows)
        ref = earliest_arrival(instance, profile, "1").labels["t"]
        for phi in (F(0), F(1), F(2)):
            assert lt(phi) == ref(phi)

    def test_zero_strategies_give_transit_labels(self):
        instance = single_arc()
        out = extend_labels(instance, {}, 3)
        for phi in (F(0), F(1), F(3)):
            assert out["1"].labels["s"](phi) == phi / 2
            assert out["1"].labels["t"](phi) == phi / 2 + 1

    def test_two_commodities_sharing_one_arc(self):
        instance = shared_arc_instance()
        out = extend_labels(instance, shared_arc_strategies(), 1)
        for j in ("1", "2"):
            lt = out[j].labels["t"]
            for phi in (F(0), F(1, 4), F(1, 2), F(1)):
                assert lt(phi) == 2 * phi + 1, (j, phi)

    def test_shared_arc_against_loader(self):
        # reconstruct rates from the extension and reload: labels must agree
        instance = shared_arc_instance()
        out = extend_labels(instance, shared_arc_strategies(), 1)
        inflows = {("1", "e"): StepFunction([0, 1], [1, 0], 0),
                   ("2", "e"): StepFunction([0, 1], [1, 0], 0)}
        flow, profile = load_network(instance, inflows)
        for j in ("1", "2"):
            ref = earliest_arrival(instance, profile, j).labels["t"]
            got = out[j].labels["t"]
            for phi in (F(0), F(1, 3), F(1, 2), F(1)):
                assert got(phi) == ref(phi)


class TestForeignFlow:
    def test_single_commodity_no_foreign_flow(self):
        instance, flow, profile = loaded_single_arc()
        ls = earliest_arrival(instance, profile, "1")
        entry = foreign_flow(instance, {"1": ls},
                             {("1", "e"): StepFunction([0, 2], [1, 0], 0)},
                             "1", "e")
        assert entry.rate == StepFunction.zero()
        assert entry.cumulative(5) == 0

    def test_identical_commodities_rate_one(self):
        instance = shared_arc_instance()
        labels = extend_labels(instance, shared_arc_strategies(), 1)
        for j in ("1", "2"):
            for phi in (F(0), F(1, 3), F(2, 3)):
                assert foreign_rate_at(instance, labels, shared_arc_strategies(),
                                       j, "e", phi) == 1
        entry = foreign_flow(instance, labels, shared_arc_strategies(), "1", "e")
        assert entry.rate(F(1, 2)) == 1
        assert entry.cumulative(F(1, 2)) == F(1, 2)

    def test_cumulative_matches_sampled_foreign_inflow(self):
        # y equals the other commodities' cumulative arc inflow sampled at
        # this commodity's tail arrival times, at every breakpoint
        instance = shared_arc_instance()
        one = StepFunction([0, 1], [1, 0], 0)
        flow, profile = load_network(instance, {("1", "e"): one, ("2", "e"): one})
        labels = {c.id: earliest_arrival(instance, profile, c.id)
                  for c in instance.commodities}
        strategies = shared_arc_strategies()
        for j, other in (("1", "2"), ("2", "1")):
            entry = foreign_flow(instance, labels, strategies, j, "e")
            F_other = flow.cumulative_inflow(other, "e")
            lu = labels[j].labels["s"]
            probes = set(entry.cumulative.breakpoints) | {F(0), F(1, 2), F(1)}
            for phi in probes:
                assert entry.cumulative(phi) == F_other(lu(phi)), (j, phi)

    def test_zero_slope_segment_gives_zero(self):
        # when the sampling commodity's own tail label is flat, its foreign
        # rate vanishes regardless of the other commodities' strategies
        from nashflow.labels import LabelSet
        instance = shared_arc_instance()
        flat = PwlFunction([0, 1, 2], [0, 1, 1], 1, 1)  # flat on [1, 2]
        line = PwlFunction.line(1)
        labels = {"1": LabelSet("1", {"s": flat, "t": flat.add_constant(2)}),
                  "2": LabelSet("2", {"s": line, "t": line.add_constant(2)})}
        strategies = {("2", "e"): StepFunction([0, 5], [1, 0], 0)}
        assert foreign_rate_at(instance, labels, strategies, "1", "e",
                               F(3, 2)) == 0
        # on a rising stretch the same strategies do contribute
        assert foreign_rate_at(instance, labels, strategies, "1", "e",
                               F(1, 2)) == 1
