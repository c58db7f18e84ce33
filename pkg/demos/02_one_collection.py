# One collection, end to end
#
# Build the bottleneck topology (one relay in sector 1, one in sector 2, 23 leaves
# in sector 3), run a single collection and follow it through the event trace.

from collections import Counter

from hbcp import metrics
from hbcp.engine import TopologyPreset, build_scenario, link_table, run

scenario = build_scenario(TopologyPreset("bottleneck"), seed=2012, name="bottleneck")
result = run(scenario)
trace = result.traces[0]

# Discovery: who joined which sector, and how.
joins = trace.where("Timer", "join")
print("sectors:", dict(sorted(Counter(j["sector"] for j in joins).items())))
print("joined via:", dict(Counter(j["via"] for j in joins)))

# The simulated sectors agree with a breadth-first walk over the link table
# (exactly so in the collision-free regime; here the channel is lossy).
oracle = metrics.bfs_sector_oracle(link_table(scenario), -87, -82, 10)
agree = sum(1 for j in joins if oracle.get(j["node"]) == j["sector"])
print(f"{agree}/{len(joins)} sector choices match the oracle")

# Collection: the wave schedule never lets sectors that differ mod 3 overlap.
print("schedule violations:", len(metrics.schedule_violations(trace, 3, limit=100)))
first = min(trace.where("TxStart", "data"), key=lambda r: r["t"])
print("first data frame from sector", first["sector"], "at", first["t"] / 1e6, "s")

# Aggregation: packets actually sent against one packet per payload per hop.
tree = metrics.collection_tree(trace)
print("data packets:", metrics.data_packets(trace),
      "| without aggregation:", metrics.expected_packets_without_aggregation(tree),
      "| lower bound:", metrics.min_aggregated_packets(tree, 3))

# Every generated payload has exactly one fate.
print(metrics.conservation(trace))
print("delivery:", result.report.delivery_rate)
print(result.report.sector_csv())
