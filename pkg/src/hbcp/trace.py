"""Event traces: an ordered list of flat records plus run metadata, with a
newline-delimited JSON form used for golden hashes and offline oracle replays."""

from __future__ import annotations

import hashlib
import json
from typing import Iterable, Iterator


class TraceParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


_KINDS = {"TxStart", "TxEnd", "Timer", "Upcall"}


class EventTrace:
    """Records of one collection. Each record has ``t`` (us), ``node``, ``kind`` and
    free-form details; ``meta`` describes the network the records came from."""

    def __init__(self, meta: dict, records: list[dict] | None = None):
        self.meta = dict(meta)
        self.records: list[dict] = records if records is not None else []

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[dict]:
        return iter(self.records)

    def where(self, kind: str | None = None, what: str | None = None) -> list[dict]:
        return [r for r in self.records
                if (kind is None or r["kind"] == kind) and (what is None or r.get("what") == what)]

    def lines(self) -> Iterable[str]:
        yield _dump({"meta": self.meta})
        for r in self.records:
            yield _dump(r)

    def to_ndjson(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def digest(self) -> str:
        h = hashlib.sha256()
        for line in self.lines():
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()

    @classmethod
    def from_ndjson(cls, text: str) -> "EventTrace":
        traces = parse_traces(text)
        if len(traces) != 1:
            raise TraceParseError(1, f"expected one trace, found {len(traces)}")
        return traces[0]


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def traces_digest(traces: Iterable[EventTrace]) -> str:
    h = hashlib.sha256()
    for tr in traces:
        h.update(tr.digest().encode())
    return h.hexdigest()


def write_traces(traces: Iterable[EventTrace], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tr in traces:
            for line in tr.lines():
                fh.write(line)
                fh.write("\n")


def parse_traces(text: str) -> list[EventTrace]:
    """Split concatenated NDJSON traces; each starts with a ``meta`` line."""
    traces: list[EventTrace] = []
    last_t = None
    for n, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceParseError(n, f"invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise TraceParseError(n, "record is not an object")
        if "meta" in obj:
            if not isinstance(obj["meta"], dict):
                raise TraceParseError(n, "meta is not an object")
            traces.append(EventTrace(obj["meta"]))
            last_t = None
            continue
        if not traces:
            raise TraceParseError(n, "record before any meta line")
        for key in ("t", "node", "kind"):
            if key not in obj:
                raise TraceParseError(n, f"missing field {key!r}")
        if obj["kind"] not in _KINDS:
            raise TraceParseError(n, f"unknown kind {obj['kind']!r}")
        if not isinstance(obj["t"], int) or (last_t is not None and obj["t"] < last_t):
            raise TraceParseError(n, "time is not a non-decreasing integer")
        last_t = obj["t"]
        traces[-1].records.append(obj)
    if not traces:
        raise TraceParseError(1, "empty trace")
    return traces
