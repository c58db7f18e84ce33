"""Discrete-event simulator for a sectored, on-demand WSN data-collection protocol."""

from .core import (
    BROADCAST, ConfigError, DataFrame, DiscoveryFrame, Frame, FrameError, HbcpHeader, SINK_ID,
    decode_frame, encode_frame, make_frame, make_payload,
)
from .engine import (
    EnergyModel, InfeasibleGeometry, RunResult, Scenario, Simulator, TopologyPreset,
    build_scenario, generate_topology, run,
)
from .mac import MacLayer, MacParams, TxRequest
from .metrics import (
    CollectionReport, bfs_sector_oracle, conservation, schedule_oracle, summarize,
)
from .protocol import NodeState, Phase, ProtocolParams
from .radio import LinkTable, Position, RadioParams, build_link_table, reception_probability
from .trace import EventTrace

__version__ = "0.1.0"
