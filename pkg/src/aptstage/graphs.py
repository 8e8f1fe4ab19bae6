"""Windowed provenance-graph construction with early fusion of network alerts.

Telemetry is segmented into contiguous 300 s half-open windows aligned to the
earliest record; each window becomes one immutable graph. Host events map to
typed edges between entity nodes; every alert becomes a first-class node wired
to the responsible process via a triggered_by edge.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

from .errors import GraphConsistencyError, ValidationError
from .telemetry.records import (
    WINDOW_SECONDS,
    EntityKind,
    EventKind,
    HostEvent,
    NetworkAlert,
)


class NodeKind(str, Enum):
    PROCESS = "process"
    FILE = "file"
    SOCKET = "socket"
    USER = "user"
    HOST = "host"
    IP = "ip"
    ALERT = "alert"


class Relation(str, Enum):
    READ = "read"
    WRITE = "write"
    SPAWN = "spawn"
    EXEC = "exec"
    CONNECT = "connect"
    SEND = "send"
    RECV = "recv"
    REGISTRY_WRITE = "registry_write"
    TRIGGERED_BY = "triggered_by"
    SELF_LOOP = "self_loop"


NUM_RELATIONS = len(Relation)

_KIND_ORDER = {k: i for i, k in enumerate(NodeKind)}
_RELATION_ORDER = {r: i for i, r in enumerate(Relation)}

# when one key is sighted under several entity kinds (payload.exe as written
# file, then as running process) the node takes the highest-precedence kind
_KIND_PRECEDENCE = {
    NodeKind.PROCESS: 0,
    NodeKind.FILE: 1,
    NodeKind.SOCKET: 2,
    NodeKind.USER: 3,
    NodeKind.HOST: 4,
    NodeKind.IP: 5,
    NodeKind.ALERT: 6,
}

_EVENT_RELATION = {
    EventKind.PROCESS_CREATE: Relation.SPAWN,
    EventKind.FILE_CREATE: Relation.WRITE,
    EventKind.FILE_WRITE: Relation.WRITE,
    EventKind.FILE_READ: Relation.READ,
    EventKind.FILE_EXEC: Relation.EXEC,
    EventKind.NET_CONNECT: Relation.CONNECT,
    EventKind.NET_SEND: Relation.SEND,
    EventKind.NET_RECV: Relation.RECV,
    EventKind.REGISTRY_WRITE: Relation.REGISTRY_WRITE,
}

_NET_KINDS = {EventKind.NET_CONNECT, EventKind.NET_SEND, EventKind.NET_RECV}


@dataclass(frozen=True)
class Node:
    kind: NodeKind
    key: str
    attrs: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Edge:
    relation: Relation
    src: int
    dst: int
    timestamp: float
    bytes: int | None = None
    count: int = 1


@dataclass(frozen=True)
class ProvenanceGraph:
    window_index: int
    window_start: float
    nodes: tuple
    edges: tuple

    def validate(self) -> None:
        n = len(self.nodes)
        keys = [nd.key for nd in self.nodes]
        if len(set(keys)) != n:
            raise GraphConsistencyError("duplicate node keys")
        hi = self.window_start + WINDOW_SECONDS
        for e in self.edges:
            if not (0 <= e.src < n and 0 <= e.dst < n):
                raise GraphConsistencyError(
                    f"edge endpoint out of range: {e.src}->{e.dst} with {n} nodes"
                )
            if e.count < 1:
                raise GraphConsistencyError("edge count must be >= 1")
            if not (self.window_start <= e.timestamp < hi):
                raise GraphConsistencyError(
                    f"edge timestamp {e.timestamp} outside [{self.window_start}, {hi})"
                )
            if e.relation is Relation.TRIGGERED_BY and self.nodes[e.src].kind is not NodeKind.ALERT:
                raise GraphConsistencyError("triggered_by edge must originate at an alert node")

    def to_json_dict(self) -> dict:
        return {
            "window_index": self.window_index,
            "window_start": self.window_start,
            "nodes": [
                {"kind": nd.kind.value, "key": nd.key, "attrs": nd.attrs}
                for nd in self.nodes
            ],
            "edges": [
                {
                    "relation": e.relation.value,
                    "src": e.src,
                    "dst": e.dst,
                    "timestamp": e.timestamp,
                    "bytes": e.bytes,
                    "count": e.count,
                }
                for e in self.edges
            ],
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "ProvenanceGraph":
        nodes = tuple(
            Node(kind=NodeKind(nd["kind"]), key=nd["key"], attrs=dict(nd.get("attrs", {})))
            for nd in doc["nodes"]
        )
        edges = tuple(
            Edge(
                relation=Relation(e["relation"]),
                src=int(e["src"]),
                dst=int(e["dst"]),
                timestamp=float(e["timestamp"]),
                bytes=None if e.get("bytes") is None else int(e["bytes"]),
                count=int(e.get("count", 1)),
            )
            for e in doc["edges"]
        )
        g = ProvenanceGraph(
            window_index=int(doc["window_index"]),
            window_start=float(doc["window_start"]),
            nodes=nodes,
            edges=edges,
        )
        g.validate()
        return g

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":"))


def window_events(events, alerts, window_len: float = WINDOW_SECONDS):
    """Partition both streams into contiguous half-open windows aligned to the
    earliest timestamp. Empty interior windows are retained so window indices
    stay time-aligned for the sequence model."""
    stamps = [e.timestamp for e in events] + [a.timestamp for a in alerts]
    if not stamps:
        return []
    t0 = min(stamps)
    n = int(math.floor((max(stamps) - t0) / window_len)) + 1
    out = [([], []) for _ in range(n)]
    for ev in events:
        idx = min(n - 1, int(math.floor((ev.timestamp - t0) / window_len)))
        out[idx][0].append(ev)
    for al in alerts:
        idx = min(n - 1, int(math.floor((al.timestamp - t0) / window_len)))
        out[idx][1].append(al)
    return [WindowSlice(i, t0 + i * window_len, evs, als) for i, (evs, als) in enumerate(out)]


@dataclass(frozen=True)
class WindowSlice:
    index: int
    start: float
    events: list
    alerts: list


class _NodeDraft:
    __slots__ = ("kind", "key", "first_ts", "commands", "users", "extra")

    def __init__(self, kind: NodeKind, key: str, ts: float):
        self.kind = kind
        self.key = key
        self.first_ts = ts
        self.commands: set = set()
        self.users: set = set()
        self.extra: dict = {}

    def merge_kind(self, kind: NodeKind) -> None:
        if _KIND_PRECEDENCE[kind] < _KIND_PRECEDENCE[self.kind]:
            self.kind = kind

    def attrs(self) -> dict:
        a = dict(self.extra)
        a["first_ts"] = self.first_ts
        if self.commands:
            a["commands"] = sorted(self.commands)
        if self.users:
            a["users"] = sorted(self.users)
        return a


def external_endpoint(alert: NetworkAlert, host_keys) -> tuple:
    """(ip, port, outbound) for the endpoint not belonging to a monitored host."""
    if alert.dst_ip in host_keys and alert.src_ip not in host_keys:
        return alert.src_ip, alert.src_port, False
    return alert.dst_ip, alert.dst_port, True


def build_graph(window: WindowSlice) -> ProvenanceGraph:
    """Construct the fused provenance graph for one window. Pure and
    deterministic: canonical node order is (kind, key), canonical edge order
    is (src, relation, dst) after node indexing."""
    lo, hi = window.start, window.start + WINDOW_SECONDS
    for ev in window.events:
        if not (lo <= ev.timestamp < hi):
            raise ValidationError(f"event at t={ev.timestamp} outside window [{lo}, {hi})")
    for al in window.alerts:
        if not (lo <= al.timestamp < hi):
            raise ValidationError(f"alert at t={al.timestamp} outside window [{lo}, {hi})")

    drafts: dict = {}

    def touch(kind: NodeKind, key: str, ts: float) -> _NodeDraft:
        d = drafts.get(key)
        if d is None:
            d = _NodeDraft(kind, key, ts)
            drafts[key] = d
        else:
            d.merge_kind(kind)
            d.first_ts = min(d.first_ts, ts)
        return d

    # (src_key, relation, dst_key) -> [count, bytes_or_None, earliest_ts]
    agg: dict = {}
    # raw net sightings for alert attribution: (proc_key, remote_key, ts)
    net_sightings: list = []

    for ev in window.events:
        touch(NodeKind.HOST, ev.host_id, ev.timestamp)
        subj = touch(NodeKind(ev.subject.kind.value), ev.subject.key, ev.timestamp)
        obj = touch(NodeKind(ev.object.kind.value), ev.object.key, ev.timestamp)
        if ev.user is not None:
            subj.users.add(ev.user)
        if ev.command is not None:
            cmd_holder = obj if ev.event_kind is EventKind.PROCESS_CREATE else subj
            cmd_holder.commands.add(ev.command)
        rel = _EVENT_RELATION[ev.event_kind]
        if rel is Relation.SPAWN and ev.subject.key == ev.object.key:
            rel = Relation.EXEC  # standalone start without a distinct parent
        k = (ev.subject.key, rel, ev.object.key)
        slot = agg.get(k)
        if slot is None:
            agg[k] = [1, ev.bytes, ev.timestamp]
        else:
            slot[0] += 1
            if ev.bytes is not None:
                slot[1] = ev.bytes if slot[1] is None else slot[1] + ev.bytes
            slot[2] = min(slot[2], ev.timestamp)
        if ev.event_kind in _NET_KINDS:
            net_sightings.append((ev.subject.key, ev.object.key, ev.timestamp))

    host_keys = {k for k, d in drafts.items() if d.kind is NodeKind.HOST}

    # early fusion: alert node + external ip node + triggered_by attribution
    fusion_edges: list = []  # (alert_key, target_key, ts)
    for ordinal, al in enumerate(window.alerts):
        ext_ip, ext_port, outbound = external_endpoint(al, host_keys)
        akey = f"alert:{ordinal}:{al.signature}"
        ad = touch(NodeKind.ALERT, akey, al.timestamp)
        ad.extra.update(
            signature=al.signature,
            severity=al.severity,
            protocol=al.protocol.value,
            category=al.category,
            src_ip=al.src_ip,
            src_port=al.src_port,
            dst_ip=al.dst_ip,
            dst_port=al.dst_port,
            external_ip=ext_ip,
            external_port=ext_port,
            outbound=outbound,
        )
        touch(NodeKind.IP, ext_ip, al.timestamp)

        port_key = f"{ext_ip}:{ext_port}"
        exact = [s for s in net_sightings
                 if s[1] == port_key and s[2] <= al.timestamp]
        loose = [s for s in net_sightings
                 if (s[1] == ext_ip or s[1].startswith(ext_ip + ":")) and s[2] <= al.timestamp]
        pool = exact or loose
        if pool:
            best_ts = max(s[2] for s in pool)
            target = min(s[0] for s in pool if s[2] == best_ts)
        elif host_keys:
            target = al.src_ip if al.src_ip in host_keys else min(host_keys)
        else:
            target = ext_ip
        fusion_edges.append((akey, target, al.timestamp))

    order = sorted(drafts.values(), key=lambda d: (_KIND_ORDER[d.kind], d.key))
    index = {d.key: i for i, d in enumerate(order)}
    nodes = tuple(Node(kind=d.kind, key=d.key, attrs=d.attrs()) for d in order)

    edges = [
        Edge(relation=rel, src=index[sk], dst=index[dk],
             timestamp=ts, bytes=b, count=c)
        for (sk, rel, dk), (c, b, ts) in agg.items()
    ]
    edges.extend(
        Edge(relation=Relation.TRIGGERED_BY, src=index[ak], dst=index[tk], timestamp=ts)
        for ak, tk, ts in fusion_edges
    )
    edges.extend(
        Edge(relation=Relation.SELF_LOOP, src=i, dst=i, timestamp=d.first_ts)
        for i, d in enumerate(order)
    )
    edges.sort(key=lambda e: (e.src, _RELATION_ORDER[e.relation], e.dst))

    g = ProvenanceGraph(
        window_index=window.index,
        window_start=window.start,
        nodes=nodes,
        edges=tuple(edges),
    )
    g.validate()
    return g


def build_graph_sequence(events, alerts, window_len: float = WINDOW_SECONDS):
    return [build_graph(w) for w in window_events(events, alerts, window_len)]


def dump_graphs_jsonl(graphs, fh) -> None:
    for g in graphs:
        fh.write(g.to_json())
        fh.write("\n")


def load_graphs_jsonl(fh):
    graphs = []
    for line in fh:
        line = line.strip()
        if line:
            graphs.append(ProvenanceGraph.from_json_dict(json.loads(line)))
    return graphs
