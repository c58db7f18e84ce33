# Links and frames
#
# A walk through the two lowest layers: the binary frame format and the static
# link model that decides who hears whom.

import numpy as np

from hbcp import core
from hbcp.protocol import ProtocolParams
from hbcp.radio import Position, RadioParams, build_link_table, reception_probability

# The sink opens a collection with a discovery frame carrying the network parameters.
params = ProtocolParams()
frame = core.make_frame(0, params.discovery_frame())
raw = core.encode_frame(frame)
print("discovery frame:", len(raw), "bytes:", raw.hex(" "))
print("decodes back to:", core.decode_frame(raw).body)

# Data frames carry up to three payloads, each starting with its 2-byte origin id.
body = core.DataFrame(2, tuple(core.make_payload(o, bytes(22)) for o in (4, 9, 17)))
data = core.encode_frame(core.make_frame(9, body))
print("data frame with three payloads:", len(data), "bytes, origins", core.decode_frame(data).body.origins)

# Corrupting a byte never crashes the decoder; it raises a specific error.
bad = bytearray(data)
bad[7] ^= 0x40
try:
    core.decode_frame(bytes(bad))
except core.FrameError as exc:
    print("corrupted length field ->", type(exc).__name__)

# Reception probability: a plateau above the drop threshold, a linear gray area
# below it, nothing under the floor.
radio = RadioParams()
for rssi in (-70, -82, -87, -89, -91, -93, -95):
    print(f"  {rssi:>4} dBm -> PRR {reception_probability(rssi, radio, params.gamma_ga):.3f}")

# Distances at which a link turns good (>= -82 dBm) or gray (>= -87 dBm).
print(f"good-link reach {radio.distance_for(params.gamma_q, 0.0):.2f} m, "
      f"drop threshold at {radio.distance_for(params.gamma_ga, 0.0):.2f} m")

# A seeded link table over random positions; the two directions of a link differ
# by at most the symmetry bound.
rng = np.random.default_rng(7)
positions = [Position(*rng.uniform(0, 20, 2)) for _ in range(12)]
table = build_link_table(positions, radio, 0.0, 7)
print("worst asymmetry over the table:", table.max_asymmetry(), "dB")
print("node 0 hears", (table.rssi[:, 0] >= params.gamma_ga).sum() - 1, "of 11 others at or above -87 dBm")
