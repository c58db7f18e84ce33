"""Evaluation quantities computed from event traces, and the independent oracles
(breadth-first sectors, schedule congruence, parent-selection replay, payload
conservation) the simulator is checked against."""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

from .core import SINK_ID
from .radio import LinkTable
from .trace import EventTrace


class EmptyTrace(ValueError):
    pass


# ---------------------------------------------------------------------------
# breadth-first sector oracle

def bfs_sector_assignment(table: LinkTable, gamma_ga: float, gamma_q: float, max_hops: int = 255,
                          energies: Optional[Sequence[float]] = None,
                          gamma_e: float = 15.0) -> dict[int, tuple[int, str]]:
    """Level-by-level sector assignment: node -> (sector, how).

    ``how`` is "first" (good link to the previous level), "second" (good link to a
    node of its own tentative level, which pushes it one level down) or "backup"
    (only gray-range links; keeps the tentative level and relays no discovery).
    Only non-backup nodes below ``max_hops`` announce themselves to the next level.
    """
    n = table.size
    energies = energies if energies is not None else [100.0] * n

    def heard(y: int, x: int) -> bool:
        return table(y, x) >= gamma_ga

    def good(y: int, x: int) -> bool:
        rssi = table(y, x)
        if energies[y] < gamma_e and rssi >= gamma_q:
            rssi = gamma_q
        return rssi >= gamma_q

    result: dict[int, tuple[int, str]] = {SINK_ID: (0, "sink")}
    announcers: dict[int, list[int]] = defaultdict(list)
    announcers[0] = [SINK_ID]
    level = 0
    while announcers.get(level) and level < max_hops:
        senders = announcers[level]
        tentative = [x for x in range(n) if x not in result and any(heard(y, x) for y in senders)]
        t = level + 1
        waiting = []
        for x in tentative:
            if any(good(y, x) for y in senders):
                result[x] = (t, "first")
                if t < max_hops:
                    announcers[t].append(x)
            else:
                waiting.append(x)
        # nodes of the tentative level listen to that level's announcements
        same_level = list(announcers.get(t, []))
        for x in waiting:
            if any(good(y, x) for y in same_level if y != x):
                result[x] = (t + 1, "second")
                if t + 1 < max_hops:
                    announcers[t + 1].append(x)
            else:
                result[x] = (t, "backup")
        level += 1
    return result


def bfs_sector_oracle(table: LinkTable, gamma_ga: float, gamma_q: float,
                      max_hops: int = 255) -> dict[int, int]:
    """Node -> sector for every reachable node (sink included as 0)."""
    return {k: v[0] for k, v in bfs_sector_assignment(table, gamma_ga, gamma_q, max_hops).items()}


# ---------------------------------------------------------------------------
# schedule congruence

def data_intervals(trace: EventTrace) -> list[tuple[int, int, int, int]]:
    """(start, end, sector, node) of every data transmission."""
    return [(r["t"], r["end"], r["sector"], r["node"])
            for r in trace.records if r["kind"] == "TxStart" and r.get("what") == "data"]


def schedule_violations(trace: EventTrace, reuse: int, limit: int = 1) -> list[tuple]:
    """Pairs of overlapping data transmissions whose sectors differ mod ``reuse``."""
    spans = sorted(data_intervals(trace))
    bad = []
    active: list[tuple[int, int, int, int]] = []
    for span in spans:
        start = span[0]
        active = [a for a in active if a[1] > start]
        for a in active:
            if (a[2] - span[2]) % reuse != 0:
                bad.append((a, span))
                if len(bad) >= limit:
                    return bad
        active.append(span)
    return bad


def schedule_oracle(trace: EventTrace, reuse: int) -> bool:
    return not schedule_violations(trace, reuse)


# ---------------------------------------------------------------------------
# parent-selection replay

@dataclass(frozen=True)
class Reception:
    t: int  # us
    src: int
    hop: int
    rssi: float
    energy: int
    coordination_time: int  # ms
    discovery_time: int  # ms
    drop_threshold: float
    quality_threshold: float


@dataclass(frozen=True)
class ParentChoice:
    parent: Optional[int]
    backup_parent: Optional[int]
    sector: Optional[int]
    via: Optional[str]
    first_deadline: Optional[int]
    current_quality: float = -math.inf


def replay_parent_selection(receptions: Sequence[Reception], gamma_e: float,
                            drift: float = 1.0) -> ParentChoice:
    """Standalone parent selection over a node's raw discovery receptions."""
    def span(ms: float) -> int:
        return int(round(ms * 1000.0 * drift))

    first = next((r for r in receptions if r.rssi >= r.drop_threshold), None)
    if first is None:
        return ParentChoice(None, None, None, None, None)
    tentative = first.hop + 1
    deadline = first.t + span(first.discovery_time - first.coordination_time)
    parent = backup = None
    best = -math.inf
    for r in receptions:
        if r.t < first.t or r.t >= deadline or r.rssi < r.drop_threshold or r.hop + 1 != tentative:
            continue
        q = r.quality_threshold if (r.energy < gamma_e and r.rssi >= r.quality_threshold) else r.rssi
        if q >= best:
            best = q
            backup = r.src
            if q >= r.quality_threshold:
                parent = r.src
    if parent is not None:
        return ParentChoice(parent, backup, tentative, "first", deadline, best)
    second_end = deadline + span(first.discovery_time)
    for r in receptions:
        if r.t < deadline or r.t >= second_end or r.rssi < r.drop_threshold or r.hop != tentative:
            continue
        q = r.quality_threshold if (r.energy < gamma_e and r.rssi >= r.quality_threshold) else r.rssi
        if q >= r.quality_threshold and q >= best:
            best = q
            parent = r.src
    if parent is not None:
        return ParentChoice(parent, backup, tentative + 1, "second", deadline, best)
    return ParentChoice(backup, backup, tentative, "backup", deadline, best)


def receptions_from_trace(trace: EventTrace) -> dict[int, list[Reception]]:
    out: dict[int, list[Reception]] = defaultdict(list)
    for r in trace.records:
        if r["kind"] == "Upcall" and r.get("what") == "discovery":
            out[r["node"]].append(Reception(r["t"], r["src"], r["hop"], r["rssi"], r["energy"],
                                            r["ct"], r["dt"], r["ga"], r["q"]))
    return out


def replay_mismatches(trace: EventTrace, limit: int = 1) -> list[str]:
    """Compare every node's recorded join against the standalone replay."""
    gamma_e = trace.meta["gamma_e"]
    drift = trace.meta.get("drift")
    joins = {r["node"]: r for r in trace.records if r.get("what") == "join"}
    windows = {r["node"]: r for r in trace.records if r.get("what") == "first_window"}
    bad = []
    for node, recs in sorted(receptions_from_trace(trace).items()):
        if node == SINK_ID:
            continue
        choice = replay_parent_selection(recs, gamma_e, drift[node] if drift else 1.0)
        got = joins.get(node)
        if choice.parent is None:
            if got is not None:
                bad.append(f"node {node}: joined without a qualifying reception")
        elif got is None:
            bad.append(f"node {node}: replay expects parent {choice.parent}, node never joined")
        elif (got["parent"], got["backup"], got["sector"], got["via"]) != (
                choice.parent, choice.backup_parent, choice.sector, choice.via):
            bad.append(f"node {node}: sim ({got['parent']}, {got['backup']}, {got['sector']}, "
                       f"{got['via']}) vs replay ({choice.parent}, {choice.backup_parent}, "
                       f"{choice.sector}, {choice.via})")
        elif windows[node]["deadline"] != choice.first_deadline:
            bad.append(f"node {node}: deadline {windows[node]['deadline']} vs {choice.first_deadline}")
        if len(bad) >= limit:
            break
    return bad


# ---------------------------------------------------------------------------
# conservation

@dataclass(frozen=True)
class Conservation:
    generated: int
    delivered: int
    dropped_by_retry: int
    dropped_by_overflow: int
    stranded: int
    uncovered: int
    unaccounted: int
    duplicates: int

    @property
    def holds(self) -> bool:
        total = (self.delivered + self.dropped_by_retry + self.dropped_by_overflow
                 + self.stranded + self.uncovered)
        return self.unaccounted == 0 and self.generated == total


def conservation(trace: EventTrace) -> Conservation:
    """Give each origin one fate: delivered > stranded > overflow > retry, or uncovered."""
    n = trace.meta["nodes"]
    delivered, stranded, overflow, retry, generated = set(), set(), set(), set(), set()
    covered = set()
    duplicates = 0
    for r in trace.records:
        what = r.get("what")
        if what == "sink_delivery":
            if r["duplicate"]:
                duplicates += 1
            delivered.add(r["origin"])
        elif what == "generate":
            generated.add(r["origin"])
        elif what == "drop_overflow":
            overflow.add(r["origin"])
        elif what == "drop_retry":
            retry.update(r["origins"])
        elif what == "collection_end":
            stranded.update(r["stranded"])
            if r["covered"]:
                covered.add(r["node"])
    counts = Counter()
    unaccounted = 0
    for node in range(1, n):
        if node not in covered:
            if node in generated:
                unaccounted += 1
            counts["uncovered"] += 1
            continue
        if node not in generated:
            unaccounted += 1
        elif node in delivered:
            counts["delivered"] += 1
        elif node in stranded:
            counts["stranded"] += 1
        elif node in overflow:
            counts["overflow"] += 1
        elif node in retry:
            counts["retry"] += 1
        else:
            unaccounted += 1
    return Conservation(n - 1, counts["delivered"], counts["retry"], counts["overflow"],
                        counts["stranded"], counts["uncovered"], unaccounted, duplicates)


# ---------------------------------------------------------------------------
# trees and aggregation baselines

def subtree_sizes(parents: dict[int, Optional[int]]) -> dict[int, int]:
    """Covered node -> number of covered nodes whose path to the sink passes through it."""
    sizes = Counter()
    for node in parents:
        seen = set()
        v = node
        while v is not None and v != SINK_ID and v not in seen:
            seen.add(v)
            sizes[v] += 1
            v = parents.get(v)
    return dict(sizes)


def expected_packets_without_aggregation(parents: dict[int, Optional[int]]) -> int:
    return sum(subtree_sizes(parents).values())


def min_aggregated_packets(parents: dict[int, Optional[int]], max_payloads: int) -> int:
    return sum(math.ceil(s / max_payloads) for s in subtree_sizes(parents).values())


def collection_tree(trace: EventTrace) -> dict[int, Optional[int]]:
    return {r["node"]: r["parent"] for r in trace.records
            if r.get("what") == "collection_end" and r["covered"]}


def data_packets(trace: EventTrace) -> int:
    """Data frames handed to the MAC (first attempts)."""
    return sum(1 for r in trace.records
               if r["kind"] == "TxStart" and r.get("what") == "data" and r["attempt"] == 1)


def data_transmissions(trace: EventTrace) -> int:
    return sum(1 for r in trace.records if r["kind"] == "TxStart" and r.get("what") == "data")


# ---------------------------------------------------------------------------
# reports

@dataclass
class NodeReport:
    sector: Optional[int]
    parent: Optional[int]
    end_to_end_delivered: float
    packets_sent: int
    acks_received: int
    ack_attempts: int
    rssi_of_parent: Optional[float]
    sector_stability: float
    parent_stability: float


@dataclass
class SectorReport:
    node_count: int
    packets_sent_per_collection: float
    expected_packets_without_aggregation: float
    end_to_end_rate: float
    ack_rate: float


@dataclass
class CollectionReport:
    collections: int
    nodes: dict[int, NodeReport]
    sectors: dict[int, SectorReport]
    delivery_rate: float
    expected_packets_without_aggregation: float
    total_packets_sent: float
    total_transmissions: float
    sector_stability: float
    parent_stability: float
    duplicates: int
    conservation: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["nodes"] = {str(k): v for k, v in d["nodes"].items()}
        d["sectors"] = {str(k): v for k, v in d["sectors"].items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def sector_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sector", "nodes", "packets_sent_per_collection",
                    "expected_packets_without_aggregation", "end_to_end_rate", "ack_rate"])
        for s in sorted(self.sectors):
            r = self.sectors[s]
            w.writerow([s, r.node_count, f"{r.packets_sent_per_collection:.4f}",
                        f"{r.expected_packets_without_aggregation:.4f}",
                        f"{r.end_to_end_rate:.4f}", f"{r.ack_rate:.4f}"])
        return buf.getvalue()


def _modal(values: list):
    if not values:
        return None, 0.0
    counts = Counter(values)
    # ties go to the smallest value so reports are order independent
    value, hits = min(counts.items(), key=lambda kv: (-kv[1], kv[0] is None, kv[0] or 0))
    return value, hits / len(values)


def summarize(traces: Iterable[EventTrace]) -> CollectionReport:
    traces = list(traces)
    if not traces:
        raise EmptyTrace("at least one trace is required")
    n = traces[0].meta["nodes"]
    per_sector_rows: dict[int, list[int]] = defaultdict(list)
    sectors_seen: dict[int, list] = defaultdict(list)
    parents_seen: dict[int, list] = defaultdict(list)
    rssi_seen: dict[int, list] = defaultdict(list)
    delivered_count = Counter()
    sent = Counter()
    attempts = Counter()
    acks = Counter()
    expected, packets, transmissions, dupes = [], [], [], 0
    sector_expected = defaultdict(float)
    cons = []

    for tr in traces:
        tree = collection_tree(tr)
        sizes = subtree_sizes(tree)
        expected.append(sum(sizes.values()))
        packets.append(data_packets(tr))
        transmissions.append(data_transmissions(tr))
        c = conservation(tr)
        dupes += c.duplicates
        cons.append(dict(asdict(c), holds=c.holds))
        delivered = set()
        for r in tr.records:
            what = r.get("what")
            if r["kind"] == "TxStart" and what == "data":
                attempts[r["node"]] += 1
                if r["attempt"] == 1:
                    sent[r["node"]] += 1
            elif r["kind"] == "TxEnd" and what == "ack" and r["delivered"]:
                acks[r["dst"]] += 1
            elif what == "sink_delivery":
                delivered.add(r["origin"])
            elif what == "collection_end":
                node = r["node"]
                sectors_seen[node].append(r["sector"])
                parents_seen[node].append(r["parent"])
                if r["covered"]:
                    rssi_seen[node].append(r["parent_rssi"])
                    sector_expected[r["sector"]] += sizes.get(node, 0)
        for node in delivered:
            delivered_count[node] += 1

    k = len(traces)
    nodes: dict[int, NodeReport] = {}
    for node in range(1, n):
        sector, s_stab = _modal(sectors_seen[node])
        parent, p_stab = _modal(parents_seen[node])
        rssis = [v for v in rssi_seen[node] if v is not None]
        nodes[node] = NodeReport(
            sector=sector, parent=parent, end_to_end_delivered=delivered_count[node] / k,
            packets_sent=sent[node], acks_received=acks[node], ack_attempts=attempts[node],
            rssi_of_parent=round(sum(rssis) / len(rssis), 4) if rssis else None,
            sector_stability=s_stab, parent_stability=p_stab)

    by_sector: dict[int, list[int]] = defaultdict(list)
    for node, rep in nodes.items():
        by_sector[rep.sector if rep.sector is not None else -1].append(node)
    sectors = {}
    for s, members in sorted(by_sector.items()):
        att = sum(attempts[m] for m in members)
        sectors[s] = SectorReport(
            node_count=len(members),
            packets_sent_per_collection=sum(sent[m] for m in members) / k,
            expected_packets_without_aggregation=sector_expected.get(s, 0.0) / k,
            end_to_end_rate=sum(nodes[m].end_to_end_delivered for m in members) / len(members),
            ack_rate=(sum(acks[m] for m in members) / att) if att else 1.0)

    total_delivered = sum(delivered_count[m] for m in range(1, n))
    return CollectionReport(
        collections=k, nodes=nodes, sectors=sectors,
        delivery_rate=total_delivered / ((n - 1) * k),
        expected_packets_without_aggregation=sum(expected) / k,
        total_packets_sent=sum(packets) / k, total_transmissions=sum(transmissions) / k,
        sector_stability=sum(r.sector_stability for r in nodes.values()) / len(nodes),
        parent_stability=sum(r.parent_stability for r in nodes.values()) / len(nodes),
        duplicates=dupes, conservation=cons)
