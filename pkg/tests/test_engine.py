from collections import Counter
from dataclasses import replace

import numpy as np
import pytest

from hbcp.core import ConfigError
from hbcp.engine import (
    EnergyModel, InfeasibleGeometry, Scenario, SchedulingError, Simulator, TopologyPreset,
    build_scenario, link_table, ring_spacing, run, stream,
)
from hbcp.metrics import bfs_sector_oracle, conservation
from hbcp.protocol import ProtocolParams
from hbcp.radio import Position, RadioParams
from hbcp.trace import traces_digest

from harness import matrix_scenario, quiet_protocol

TESTBED = TopologyPreset("random_uniform", n=30, area=24.0, require_coverage=True)


@pytest.fixture(scope="module")
def testbed():
    scenario = build_scenario(TESTBED, 2011, collections=3)
    return scenario, run(scenario)


def test_same_seed_same_trace_hash(testbed):
    scenario, result = testbed
    assert traces_digest(run(scenario).traces) == traces_digest(result.traces)
    other = replace(scenario, seed=scenario.seed + 1)
    assert traces_digest(run(other).traces) != traces_digest(result.traces)


def test_two_node_collection():
    result = run(matrix_scenario([[0, -60], [-60, 0]]))
    trace = result.traces[0]
    assert len(trace.where("TxStart", "discovery")) == 2
    assert len(trace.where("TxStart", "data")) == 1
    assert result.report.delivery_rate == 1.0


def test_time_is_monotone(testbed):
    for trace in testbed[1].traces:
        times = [r["t"] for r in trace]
        assert times == sorted(times)


def test_energy_equals_bytes_sent_and_overheard():
    scenario = build_scenario(TopologyPreset("uniform_sectors"), 5)
    result = run(scenario)
    table = link_table(scenario)
    floor = scenario.radio.gray_floor
    spent = np.zeros(scenario.size)
    for r in result.traces[0].where("TxStart"):
        spent[r["node"]] += 1e-4 * r["bytes"]
        for rx in table.audible_from(r["node"], floor):
            spent[rx] += 1.1e-4 * r["bytes"]
    got = 100.0 - np.array([s.energy_percent for s in result.states])
    assert np.allclose(got, spent, atol=1e-9)
    assert spent.min() > 0


def test_energy_persists_across_collections_and_zero_cost_isolates(testbed):
    scenario, result = testbed
    ends = [[r["energy"] for r in t.where("Timer", "collection_end")] for t in result.traces]
    assert all(a > b for a, b in zip(ends[0], ends[2]))
    free = run(replace(scenario, energy=EnergyModel(0.0, 0.0)))
    assert all(s.energy_percent == 100.0 for s in free.states)


def test_streams_are_independent():
    a = stream(7, "backoff", 0).random(5)
    stream(7, "offsets", 0).random(1000)
    assert np.array_equal(a, stream(7, "backoff", 0).random(5))
    assert not np.array_equal(a, stream(7, "backoff", 1).random(5))
    assert not np.array_equal(a, stream(7, "offsets", 0).random(5))


def test_scheduling_in_the_past_raises():
    sim = Simulator()
    sim.at(10, "Timer", 0, lambda: sim.at(5, "Timer", 0, lambda: None))
    with pytest.raises(SchedulingError):
        sim.run()


def test_same_time_events_run_in_insertion_order():
    sim = Simulator()
    seen = []
    for i in range(5):
        sim.at(3, "Timer", i, seen.append, i)
    sim.run()
    assert seen == [0, 1, 2, 3, 4]


@pytest.mark.parametrize("preset, expected", [
    (TopologyPreset("bottleneck"), {1: 1, 2: 1, 3: 23}),
    (TopologyPreset("uniform_sectors"), {1: 10, 2: 10, 3: 10}),
])
def test_sector_presets(preset, expected):
    for seed in (1, 2, 3):
        scenario = build_scenario(preset, seed)
        quiet = replace(scenario.radio, shadowing_sigma=0.0, symmetry_sigma=0.0)
        sectors = bfs_sector_oracle(link_table(replace(scenario, radio=quiet)), -87, -82, 10)
        counts = Counter(s for node, s in sectors.items() if node != 0)
        assert dict(counts) == expected


def test_random_uniform_reproducible_and_covered():
    a = build_scenario(TESTBED, 99)
    assert a.positions == build_scenario(TESTBED, 99).positions
    assert a.positions != build_scenario(TESTBED, 100).positions
    assert a.positions[0] == Position(12.0, 12.0) and len(a.positions) == 31
    assert len(bfs_sector_oracle(link_table(a), -87, -82, 10)) == 31


def test_infeasible_geometry_is_reported():
    with pytest.raises(InfeasibleGeometry):
        ring_spacing(RadioParams(path_loss_exponent=4.0), -82.0, 0.0)
    with pytest.raises(InfeasibleGeometry):
        build_scenario(TopologyPreset("bottleneck"), 1, radio=RadioParams(path_loss_exponent=4.0))


@pytest.mark.parametrize("preset, field", [
    (TopologyPreset("ring"), "topology.kind"),
    (TopologyPreset("random_uniform", n=0, area=5), "topology.n"),
    (TopologyPreset("sectors", counts=(3, 0)), "topology.counts"),
])
def test_preset_errors_name_the_field(preset, field):
    with pytest.raises(ConfigError, match=field):
        preset.validate()


def test_scenario_errors_name_the_field():
    base = matrix_scenario([[0, -60], [-60, 0]])
    with pytest.raises(ConfigError, match="scenario.collections"):
        replace(base, collections=0).validate()
    with pytest.raises(ConfigError, match="scenario.rssi"):
        replace(base, rssi=((0.0,),)).validate()
    with pytest.raises(ConfigError, match="topology"):
        Scenario((Position(0, 0),)).validate()


def test_conservation_over_preset_runs(testbed):
    for trace in testbed[1].traces:
        c = conservation(trace)
        assert c.holds and c.generated == trace.meta["nodes"] - 1
