"""Command-line front end: scenario configuration, shipped presets, sweeps and
oracle checks.

    hbcp run CONFIG [--trace] [--out DIR]
    hbcp sweep PLAN [--jobs N] [--out DIR]
    hbcp oracle CONFIG [--trace-file FILE]

CONFIG is an INI file (``key = value`` under sections) or the equivalent JSON
object; a bare preset name such as ``testbed1`` loads the shipped file.
Exit codes: 0 success, 1 oracle failure, 2 configuration or input error,
3 infeasible geometry.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import os
import sys
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .core import ConfigError
from .engine import (
    EnergyModel, InfeasibleGeometry, Scenario, TopologyPreset, build_scenario, link_table, run,
)
from .mac import MacParams
from .metrics import (
    bfs_sector_oracle, conservation, replay_mismatches, schedule_violations, summarize,
)
from .protocol import ProtocolParams
from .radio import RadioParams
from .trace import TraceParseError, parse_traces, traces_digest, write_traces

PRESET_DIR = Path(__file__).with_name("presets")

# config key -> (dataclass field, converter)
PARAM_KEYS = {
    "protocol": (ProtocolParams, {
        "max_hops": ("max_hops", "int"),
        "discovery_time_ms": ("discovery_time", "int"),
        "collection_time_ms": ("collection_time", "int"),
        "gamma_ga_dbm": ("gamma_ga", "float"),
        "gamma_q_dbm": ("gamma_q", "float"),
        "tx_power_dbm": ("tx_power", "float"),
        "gamma_v_db": ("gamma_v", "float"),
        "gamma_e_percent": ("gamma_e", "float"),
        "sector_reuse_distance": ("sector_reuse_distance", "int"),
        "forward_window_fraction": ("forward_window_fraction", "float"),
        "max_payloads_per_packet": ("max_payloads_per_packet", "int"),
        "hrs_enabled": ("hrs_enabled", "bool"),
        "payload_bytes": ("payload_bytes", "int"),
        "queue_capacity": ("queue_capacity", "int"),
        "clock_drift_ppm": ("clock_drift_ppm", "float"),
        "discovery_guard_ms": ("discovery_guard", "int"),
    }),
    "radio": (RadioParams, {
        "pl0_db": ("pl0", "float"),
        "path_loss_exponent": ("path_loss_exponent", "float"),
        "shadowing_sigma_db": ("shadowing_sigma", "float"),
        "symmetry_sigma_db": ("symmetry_sigma", "float"),
        "asymmetry_bound_db": ("asymmetry_bound", "float"),
        "prr_plateau": ("prr_plateau", "float"),
        "gray_floor_dbm": ("gray_floor", "float"),
        "capture_margin_db": ("capture_margin", "float"),
        "ideal_channel": ("ideal_channel", "bool"),
    }),
    "mac": (MacParams, {
        "initial_backoff_window_ms": ("initial_backoff_window", "float"),
        "congestion_backoff_window_ms": ("congestion_backoff_window", "float"),
        "max_retransmissions": ("max_retransmissions", "int"),
        "ack_timeout_ms": ("ack_timeout", "float"),
        "ack_duration_ms": ("ack_duration", "float"),
        "byte_airtime_us": ("byte_airtime", "float"),
        "ideal_acks": ("ideal_acks", "bool"),
    }),
    "energy": (EnergyModel, {
        "tx_cost": ("tx_cost", "float"),
        "rx_cost": ("rx_cost", "float"),
        "initial_percent": ("initial", "float"),
    }),
}
REQUIRED_PROTOCOL_KEYS = ("max_hops", "discovery_time_ms", "collection_time_ms",
                          "gamma_ga_dbm", "gamma_q_dbm", "tx_power_dbm")
SCENARIO_KEYS = {"name": "str", "seed": "int", "collections": "int"}
TOPOLOGY_KEYS = {"kind": "str", "counts": "intlist", "n": "int", "area_m": "float",
                 "require_coverage": "bool"}
SWEEP_KEYS = {"topologies": "strlist", "hrs": "boollist", "collection_time_ms": "intlist",
              "seeds": "intlist", "replications": "int"}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _convert(value, kind: str, path: str):
    try:
        if kind.endswith("list"):
            if isinstance(value, str):
                items = [v.strip() for v in value.split(",") if v.strip()]
            elif isinstance(value, (list, tuple)):
                items = list(value)
            else:
                raise ValueError
            return [_convert(v, kind[:-4], path) for v in items]
        if kind == "bool":
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in _TRUE:
                return True
            if text in _FALSE:
                return False
            raise ValueError
        if kind == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            return int(str(value).strip()) if isinstance(value, str) else int(value)
        if kind == "float":
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        return str(value).strip()
    except (TypeError, ValueError):
        raise ConfigError(path, f"cannot read {value!r} as {kind}") from None


@dataclass(frozen=True)
class SweepAxes:
    topologies: tuple[str, ...]
    hrs: tuple[bool, ...]
    collection_times: tuple[int, ...]
    seeds: tuple[int, ...]
    replications: int


@dataclass(frozen=True)
class Config:
    name: str
    seed: int
    collections: int
    topology: Optional[TopologyPreset]
    protocol: ProtocolParams
    radio: RadioParams
    mac: MacParams
    energy: EnergyModel
    topologies: dict = field(default_factory=dict)
    sweep: Optional[SweepAxes] = None

    def scenario(self, seed: Optional[int] = None, topology: Optional[TopologyPreset] = None,
                 **protocol_overrides) -> Scenario:
        preset = topology or self.topology
        if preset is None:
            raise ConfigError("topology", "section is required")
        protocol = replace(self.protocol, **protocol_overrides) if protocol_overrides else self.protocol
        return build_scenario(preset, self.seed if seed is None else seed, self.radio, self.mac,
                              protocol, self.collections, self.energy, self.name)

    def to_dict(self) -> dict:
        out = {"scenario": {"name": self.name, "seed": self.seed, "collections": self.collections}}
        for section, (_, keys) in PARAM_KEYS.items():
            obj = getattr(self, section)
            out[section] = {key: getattr(obj, attr) for key, (attr, _) in keys.items()}
        if self.topology is not None:
            out["topology"] = _topology_dict(self.topology)
        for name, preset in sorted(self.topologies.items()):
            out[f"topology.{name}"] = _topology_dict(preset)
        if self.sweep is not None:
            s = self.sweep
            out["sweep"] = {"topologies": list(s.topologies), "hrs": list(s.hrs),
                            "collection_time_ms": list(s.collection_times), "seeds": list(s.seeds),
                            "replications": s.replications}
        return out


def _topology_dict(p: TopologyPreset) -> dict:
    return {"kind": p.kind, "counts": list(p.resolved_counts()), "n": p.n, "area_m": p.area,
            "require_coverage": p.require_coverage}


def read_raw(path: str) -> dict:
    """Sections of an INI or JSON config as plain dicts."""
    p = Path(path)
    if not p.exists() and not p.suffix:
        for candidate in (PRESET_DIR / f"{path}.ini", PRESET_DIR / f"{path}.json"):
            if candidate.exists():
                p = candidate
                break
    if not p.exists():
        raise ConfigError("config", f"file not found: {path}")
    text = p.read_text(encoding="utf-8")
    if p.suffix == ".json" or text.lstrip().startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
        if not isinstance(raw, dict) or not all(isinstance(v, dict) for v in raw.values()):
            raise ConfigError("config", "top level must map section names to objects")
        return raw
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(p))
    except configparser.Error as exc:
        raise ConfigError("config", str(exc).splitlines()[0]) from None
    return {s: dict(parser.items(s)) for s in parser.sections()}


def _section(raw: dict, name: str, allowed: dict) -> dict:
    sec = raw.get(name, {})
    for key in sec:
        if key not in allowed:
            raise ConfigError(f"{name}.{key}", "unknown key")
    return {key: _convert(sec[key], allowed[key], f"{name}.{key}") for key in sec}


def _topology(raw_sec: dict, path: str) -> TopologyPreset:
    sec = _section({path: raw_sec}, path, TOPOLOGY_KEYS)
    if "kind" not in sec:
        raise ConfigError(f"{path}.kind", "missing required key")
    preset = TopologyPreset(sec["kind"], tuple(sec.get("counts", ())), sec.get("n", 0),
                            sec.get("area_m", 0.0), sec.get("require_coverage", False))
    preset.validate(path)
    return preset


def parse_config(raw: dict, plan: bool = False) -> Config:
    known = {"scenario", "topology", "sweep", *PARAM_KEYS}
    for name in raw:
        if name not in known and not name.startswith("topology."):
            raise ConfigError(name, "unknown section")
    if "protocol" not in raw:
        raise ConfigError("protocol", "section is required")
    for key in REQUIRED_PROTOCOL_KEYS:
        if key not in raw["protocol"]:
            raise ConfigError(f"protocol.{key}", "missing required key")

    params = {}
    for section, (cls, keys) in PARAM_KEYS.items():
        values = _section(raw, section, {k: kind for k, (_, kind) in keys.items()})
        params[section] = cls(**{keys[k][0]: v for k, v in values.items()})
    scen = _section(raw, "scenario", SCENARIO_KEYS)
    topology = _topology(raw["topology"], "topology") if "topology" in raw else None
    named = {name.split(".", 1)[1]: _topology(sec, name)
             for name, sec in raw.items() if name.startswith("topology.")}

    sweep = None
    if plan or "sweep" in raw:
        s = _section(raw, "sweep", SWEEP_KEYS)
        for key in ("topologies", "hrs", "collection_time_ms"):
            if key not in s:
                raise ConfigError(f"sweep.{key}", "missing required key")
            if not s[key]:
                raise ConfigError(f"sweep.{key}", "axis must not be empty")
        for t in s["topologies"]:
            if t not in named:
                raise ConfigError(f"sweep.topologies", f"no [topology.{t}] section")
        seeds = s.get("seeds", [scen.get("seed", 1)])
        if not seeds:
            raise ConfigError("sweep.seeds", "axis must not be empty")
        reps = s.get("replications", 1)
        if reps < 1:
            raise ConfigError("sweep.replications", "must be >= 1")
        sweep = SweepAxes(tuple(s["topologies"]), tuple(s["hrs"]), tuple(s["collection_time_ms"]),
                          tuple(seeds), reps)

    cfg = Config(scen.get("name", "scenario"), scen.get("seed", 1), scen.get("collections", 1),
                 topology, params["protocol"], params["radio"], params["mac"], params["energy"],
                 named, sweep)
    if cfg.collections < 1:
        raise ConfigError("scenario.collections", "must be >= 1")
    if not 0 <= cfg.seed < 2 ** 64:
        raise ConfigError("scenario.seed", "must be a 64-bit unsigned integer")
    cfg.protocol.validate()
    cfg.radio.validate(cfg.protocol.gamma_ga)
    cfg.mac.validate()
    cfg.energy.validate()
    if sweep is not None:
        for ct in sweep.collection_times:
            replace(cfg.protocol, collection_time=ct).validate()
    return cfg


def load_config(path: str, plan: bool = False) -> Config:
    return parse_config(read_raw(path), plan)


def output_dir(arg: Optional[str], name: str) -> Path:
    out = Path(arg or os.environ.get("HBCP_OUTPUT_DIR") or Path("hbcp-output") / name)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo(cfg: Config, out: Path) -> None:
    (out / "effective_config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# run

def cmd_run(args) -> int:
    cfg = load_config(args.config)
    out = output_dir(args.out, cfg.name)
    _echo(cfg, out)
    result = run(cfg.scenario())
    report = result.report
    doc = report.to_dict()
    doc["trace_sha256"] = traces_digest(result.traces)
    (out / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    (out / "sectors.csv").write_text(report.sector_csv())
    if args.trace:
        write_traces(result.traces, out / "trace.ndjson")
    print(f"{cfg.name}: {report.collections} collections, delivery {report.delivery_rate:.4f}, "
          f"{report.total_packets_sent:.2f} data packets per collection "
          f"(no aggregation: {report.expected_packets_without_aggregation:.2f})")
    print(f"trace sha256 {doc['trace_sha256']}")
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# sweep

def cell_seed(base: int, topology: str, collection_time: int, replication: int) -> int:
    """Seed shared by the HRS and no-HRS runs of one cell (common random numbers)."""
    ss = np.random.SeedSequence([base, zlib.crc32(topology.encode()), collection_time, replication])
    hi, lo = ss.generate_state(2, np.uint32)
    return (int(hi) << 32) | int(lo)


def _sweep_cell(task):
    cfg, topology, hrs, ct, base, rep = task
    seed = cell_seed(base, topology, ct, rep)
    scenario = cfg.scenario(seed, cfg.topologies[topology], hrs_enabled=hrs, collection_time=ct)
    result = run(scenario, report=False)
    report = summarize(result.traces)
    holds = all(conservation(t).holds for t in result.traces)
    return (topology, hrs, ct, base, rep, report.delivery_rate, report.total_transmissions,
            traces_digest(result.traces), holds)


def sweep_tasks(cfg: Config) -> list:
    s = cfg.sweep
    return [(cfg, t, h, ct, base, rep) for t in s.topologies for h in s.hrs
            for ct in s.collection_times for base in s.seeds for rep in range(s.replications)]


def run_sweep(cfg: Config, jobs: int = 1) -> list:
    tasks = sweep_tasks(cfg)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_sweep_cell, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        cells = [_sweep_cell(t) for t in tasks]
    return sorted(cells, key=lambda c: (c[0], not c[1], c[2], c[3], c[4]))


def sweep_rows(cells: list) -> list[dict]:
    groups: dict = {}
    for topology, hrs, ct, _, _, delivery, *_ in cells:
        groups.setdefault((topology, hrs, ct), []).append(delivery)
    return [{"topology": t, "hrs": "on" if h else "off", "collection_time_ms": ct,
             "mean_delivery": sum(v) / len(v), "replications": len(v)}
            for (t, h, ct), v in sorted(groups.items(), key=lambda kv: (kv[0][0], not kv[0][1], kv[0][2]))]


def sweep_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["topology", "hrs", "collection_time_ms", "mean_delivery", "replications"])
    for r in rows:
        w.writerow([r["topology"], r["hrs"], r["collection_time_ms"], f"{r['mean_delivery']:.6f}",
                    r["replications"]])
    return buf.getvalue()


def cells_csv(cells: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["topology", "hrs", "collection_time_ms", "base_seed", "replication", "delivery",
                "transmissions", "trace_sha256", "conservation"])
    for t, h, ct, base, rep, d, tx, digest, holds in cells:
        w.writerow([t, "on" if h else "off", ct, base, rep, f"{d:.6f}", f"{tx:.2f}", digest,
                    "ok" if holds else "broken"])
    return buf.getvalue()


GNUPLOT = """\
# end-to-end delivery against collection time, one line per topology and mode
set datafile separator ","
set key bottom right
set xlabel "collection time (ms)"
set ylabel "mean end-to-end delivery"
set yrange [0:1.05]
set terminal pngcairo size 800,500
set output "sweep.png"
plot {plots}
"""


def gnuplot_script(rows: list[dict]) -> str:
    series = sorted({(r["topology"], r["hrs"]) for r in rows})
    plots = ", \\\n     ".join(
        f"\"sweep.csv\" using ((stringcolumn(1) eq \"{t}\" && stringcolumn(2) eq \"{h}\") ? $3 : 1/0):4 "
        f"with linespoints title \"{t} HRS {h}\"" for t, h in series)
    return GNUPLOT.format(plots=plots)


def cmd_sweep(args) -> int:
    cfg = load_config(args.plan, plan=True)
    if args.jobs < 1:
        raise ConfigError("--jobs", "must be >= 1")
    out = output_dir(args.out, cfg.name)
    _echo(cfg, out)
    cells = run_sweep(cfg, args.jobs)
    rows = sweep_rows(cells)
    (out / "sweep.csv").write_text(sweep_csv(rows))
    (out / "cells.csv").write_text(cells_csv(cells))
    (out / "sweep.gp").write_text(gnuplot_script(rows))
    for r in rows:
        print(f"{r['topology']:>12} hrs={r['hrs']:<3} {r['collection_time_ms']:>5} ms  "
              f"{r['mean_delivery']:.4f}  (n={r['replications']})")
    print(f"wrote {out}")
    broken = [c for c in cells if not c[-1]]
    return 1 if broken else 0


# ---------------------------------------------------------------------------
# oracle

def trace_checks(traces, hrs: Optional[bool] = None, reuse: Optional[int] = None) -> list[tuple[str, Optional[str]]]:
    """(check name, first counterexample or None) over a list of traces."""
    results = []
    first = {"conservation": None, "parent_replay": None, "schedule": None}
    for tr in traces:
        c = conservation(tr)
        if not c.holds and first["conservation"] is None:
            first["conservation"] = f"collection {tr.meta.get('collection')}: {c}"
        mism = replay_mismatches(tr)
        if mism and first["parent_replay"] is None:
            first["parent_replay"] = f"collection {tr.meta.get('collection')}: {mism[0]}"
        use_hrs = tr.meta.get("hrs") if hrs is None else hrs
        if use_hrs:
            bad = schedule_violations(tr, reuse or tr.meta.get("reuse", 3))
            if bad and first["schedule"] is None:
                a, b = bad[0]
                first["schedule"] = (f"collection {tr.meta.get('collection')}: node {a[3]} sector {a[2]} "
                                     f"[{a[0]}, {a[1]}) overlaps node {b[3]} sector {b[2]} [{b[0]}, {b[1]})")
    for name in ("conservation", "parent_replay", "schedule"):
        results.append((name, first[name]))
    return results


def sector_check(cfg: Config) -> Optional[str]:
    """Simulated sectors against the breadth-first oracle in the collision-free regime."""
    topology = cfg.topology
    if topology is None:
        raise ConfigError("topology", "section is required")
    radio = replace(cfg.radio, ideal_channel=True)
    protocol = replace(cfg.protocol, clock_drift_ppm=0.0, discovery_time=60000)
    scenario = build_scenario(topology, cfg.seed, radio, cfg.mac, protocol, 1, cfg.energy, cfg.name)
    tr = run(scenario, report=False).traces[0]
    expected = bfs_sector_oracle(link_table(scenario), protocol.gamma_ga, protocol.gamma_q,
                                 protocol.max_hops)
    got = {r["node"]: r["sector"] for r in tr.records if r.get("what") == "collection_end" and r["covered"]}
    got[0] = 0
    for node in sorted(set(expected) | set(got)):
        if expected.get(node) != got.get(node):
            return f"node {node}: simulated sector {got.get(node)}, oracle {expected.get(node)}"
    return None


def cmd_oracle(args) -> int:
    if args.trace_file:
        try:
            text = Path(args.trace_file).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError("--trace-file", str(exc)) from None
        traces = parse_traces(text)
        checks = trace_checks(traces)
    else:
        cfg = load_config(args.config)
        result = run(cfg.scenario(), report=False)
        checks = [("bfs_sectors", sector_check(cfg))] + trace_checks(result.traces)
    failed = False
    for name, problem in checks:
        if problem is None:
            print(f"PASS {name}")
        else:
            failed = True
            print(f"FAIL {name}: {problem}")
    return 1 if failed else 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hbcp", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run one scenario and write its report")
    p.add_argument("config")
    p.add_argument("--trace", action="store_true", help="also write trace.ndjson")
    p.add_argument("--out", help="output directory (default $HBCP_OUTPUT_DIR or hbcp-output/NAME)")
    p.set_defaults(fn=cmd_run)
    p = sub.add_parser("sweep", help="run a sweep plan and write sweep.csv")
    p.add_argument("plan")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_sweep)
    p = sub.add_parser("oracle", help="check a scenario or a trace file against the oracles")
    p.add_argument("config", nargs="?")
    p.add_argument("--trace-file", help="check an existing NDJSON trace instead of simulating")
    p.set_defaults(fn=cmd_oracle)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "oracle" and not args.config and not args.trace_file:
        parser.error("oracle needs a config or --trace-file")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TraceParseError as exc:
        print(f"trace error: {exc}", file=sys.stderr)
        return 2
    except InfeasibleGeometry as exc:
        print(f"infeasible geometry: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
