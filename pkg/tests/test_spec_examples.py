"""Remaining documented behaviors not covered by the module test files."""

import random
from fractions import Fraction

from nashflow.netmodel import (Arc, Commodity, Instance,
                               extend_with_super_sink, validate_instance)
from nashflow.loading import load_network
from nashflow.labels import earliest_arrival, waiting_from_labels
from nashflow.nash import (check_derivatives_thinflow,
                           construct_common_destination,
                           construct_nash_single)
from nashflow.loading import FlowOverTime
from nashflow.timefn import StepFunction

F = Fraction


def test_super_sink_capacities_below_originals_on_random_instances():
    rng = random.Random(5150)
    built = 0
    while built < 40:
        n_sink = rng.randint(1, 4)
        sinks = [f"t{i}" for i in range(n_sink)]
        nodes = ["s"] + sinks
        pairs = [("s", t) for t in sinks]
        for _ in range(rng.randint(0, 2)):
            a, b = rng.sample(sinks, 2) if n_sink > 1 else ("s", sinks[0])
            pairs.append((a, b))
        arcs = tuple(Arc(f"e{i}", a, b,
                         F(rng.randint(0, 4), rng.choice([1, 2])),
                         F(rng.randint(1, 6), rng.choice([1, 2, 3])))
                     for i, (a, b) in enumerate(pairs) if a != b)
        comms = tuple(Commodity(f"c{i}", "s", t,
                                F(rng.randint(1, 4), rng.choice([1, 2])),
                                F(0), F(1))
                      for i, t in enumerate(sinks))
        inst = validate_instance(Instance(tuple(nodes), arcs, comms,
                                          "commonOrigin"))
        if isinstance(inst, list):
            continue
        built += 1
        extended, arc_map = extend_with_super_sink(inst)
        new_ids = set(arc_map.values())
        nu_min = min(a.capacity for a in inst.arcs)
        total = sum(c.rate for c in inst.commodities)
        sigma = min(nu_min, total)
        new_caps = [a.capacity for a in extended.arcs if a.id in new_ids]
        assert max(new_caps) < nu_min
        assert sum(new_caps) == sigma / 2


def test_shared_arc_waiting_reconstruction_matches_loader():
    instance = validate_instance(Instance(
        ("s", "t"),
        (Arc("e", "s", "t", F(1), F(1)),),
        (Commodity("1", "s", "t", F(1), F(0), F(1)),
         Commodity("2", "s", "t", F(1), F(0), F(1))),
    ))
    one = StepFunction([0, 1], [1, 0], 0)
    flow, profile = load_network(instance, {("1", "e"): one, ("2", "e"): one})
    labels = {c.id: earliest_arrival(instance, profile, c.id)
              for c in instance.commodities}
    q = profile.waiting["e"]
    probes = list(q.breakpoints)
    probes += [(a + b) / 2 for a, b in zip(q.breakpoints, q.breakpoints[1:])]
    for theta in probes:
        assert waiting_from_labels(instance, labels, "e", theta) == q(theta)


def test_single_source_common_destination_reduces_to_single_commodity():
    common = validate_instance(Instance(
        ("s", "t"),
        (Arc("e", "s", "t", F(1), F(1)),),
        (Commodity("1", "s", "t", F(2), F(0), None),),
        "commonDestination",
    ))
    multi = construct_common_destination(common, horizon=2)
    plain_instance = validate_instance(Instance(
        ("s", "t"), (Arc("e", "s", "t", F(1), F(1)),),
        (Commodity("1", "s", "t", F(2), F(0), F(1)),)))
    plain = construct_nash_single(plain_instance, horizon=2)
    assert multi.flow.inflow[("1", "e")] == plain.flow.inflow[("1", "e")]
    assert multi.flow.outflow[("1", "e")] == plain.flow.outflow[("1", "e")]
    assert multi.node_labels["t"](2) == plain.node_labels["t"](2)


def test_zero_commodity_instance_certifies_vacuously():
    instance = validate_instance(Instance(
        ("s", "t"), (Arc("e", "s", "t", F(1), F(1)),), ()))
    flow = FlowOverTime(inflow={}, outflow={}).fill_totals(instance)
    report = check_derivatives_thinflow(instance, flow)
    assert report.ok and not report.violations
