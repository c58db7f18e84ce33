# Does sector scheduling help?
#
# A small version of the shipped sweep: both sectorized topologies, with and
# without the wave schedule, over a range of collection times. The HRS and no-HRS
# runs of a cell share their seed, so they see the same topology and channel draws.

import time
from dataclasses import replace

from hbcp.cli import load_config, run_sweep, sweep_rows

cfg = load_config("testbed2_sweep", plan=True)
cfg = replace(cfg, sweep=replace(cfg.sweep, replications=10))
start = time.perf_counter()
cells = run_sweep(cfg)
print(f"{len(cells)} cells in {time.perf_counter() - start:.1f} s")

for row in sweep_rows(cells):
    print(f"{row['topology']:>10}  hrs {row['hrs']:<3} {row['collection_time_ms']:>5} ms  "
          f"delivery {row['mean_delivery']:.3f}")

# Delivery ties between the modes are common: a payload is lost mostly when a
# discovery broadcast is, which strikes both modes alike. The cost of running
# without the schedule shows up in retransmissions instead.
by_mode = {}
for topology, hrs, ct, _, _, delivery, transmissions, _, _ in cells:
    by_mode.setdefault((topology, hrs), []).append(transmissions)
for (topology, hrs), tx in sorted(by_mode.items()):
    print(f"{topology:>10}  hrs {'on' if hrs else 'off':<3} mean data transmissions {sum(tx) / len(tx):.1f}")
