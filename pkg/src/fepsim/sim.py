"""Deterministic discrete-event MANET engine with the FEP sleep overlay.

One Simulation executes one scenario: random-waypoint motion on a rectangular
arena, a disc radio with per-node FIFO transmit queues, CBR sessions over
source-routed on-demand multipath routing and, under protocol "fep", the
sleep overlay in which tired forwarders ask their uplink neighbors for naps
decided by the SL-REQ controller.

All randomness comes from per-purpose streams derived from the scenario seed
(topology, mobility and traffic streams never see protocol events), so a
(config, seed) pair fully determines the run, its event log and its report,
and paired baseline/fep runs share identical mobility and traffic streams.
"""

from __future__ import annotations

import heapq
import math
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Any

from .config import ScenarioConfig, SessionSpec
from .eventlog import EventLog, StreamHash
from .metrics import MetricsReport, finalize
from .neighbors import EnergyAccount, NeighborLedger, ServiceTracker
from .routing import Route, RouteCache, rank_candidate_paths
from .sleep import EdgeSleepBoard, SleepBudget
from .slreq import (
    FuzzyGrade,
    HopSessionView,
    PhRecord,
    enable_flags,
    evaluate_trace,
)

BROADCAST = None


class SimulationError(Exception):
    """A run-level invariant was violated; indicates an engine bug."""


# ---------------------------------------------------------------- packets


@dataclass
class DataPacket:
    session: int
    src: int
    dst: int
    pkt_idx: int
    total: int
    emit_ms: float
    route: tuple[int, ...] = ()
    idx: int = 0
    alts: tuple[tuple[int, tuple[int, ...]], ...] = ()  # (grade value, hops)
    returning: bool = False
    ret_path: tuple[int, ...] = ()
    ret_idx: int = 0
    ret_reason: str = ""
    ret_edge: tuple[int, int] | None = None
    ret_dead: int | None = None
    ret_chain: str | None = None
    ret_until: float = 0.0
    returns: int = 0

    @property
    def pkt_id(self) -> str:
        return f"{self.session}:{self.pkt_idx}"


@dataclass
class Rreq:
    src: int
    bid: int
    dst: int
    path: tuple[int, ...]
    cause: str
    chain: str | None


@dataclass
class Rrep:
    req_src: int
    req_dst: int
    bid: int
    routes: tuple[Route, ...]
    path: tuple[int, ...]
    idx: int
    bytes_b: int
    cause: str
    chain: str | None


@dataclass
class Notify:
    session: int
    edge: tuple[int, int]
    reason: str
    dead: int | None
    until_ms: float
    path: tuple[int, ...]
    idx: int
    chain: str | None


@dataclass
class SleepRequest:
    requester: int
    addressees: tuple[int, ...]
    payloads: dict[int, dict[str, float]]
    taus: tuple[float, ...]
    shot: int


@dataclass
class SleepReply:
    granter: int
    requester: int
    granted: bool
    duration_ms: float | None
    shot: int
    chain: str | None


@dataclass
class QueuedTx:
    kind: str
    pkt: Any
    dest: int | None
    bytes_b: int
    arrived_from: int | None = None
    queued_ms: float = 0.0


# ------------------------------------------------------------- node state


@dataclass
class Collector:
    paths: list[tuple[int, ...]]
    cause: str
    chain: str | None


@dataclass
class Pending:
    bid: int
    attempts: int
    cause: str
    chain: str | None
    buffered: list[DataPacket] = field(default_factory=list)


@dataclass
class SessView:
    fwd: int = 0
    total: int = 0
    next_hop: int = -1
    route: tuple[int, ...] = ()
    alts: tuple[tuple[int, tuple[int, ...]], ...] = ()
    last_seen_ms: float = float("-inf")


class Node:
    def __init__(self, node_id: int, x: float, y: float, range_m: float,
                 cfg: ScenarioConfig, mobility_rng: random.Random):
        self.id = node_id
        self.x = x
        self.y = y
        self.range_m = range_m
        self.rng = mobility_rng
        self.speed = 0.0
        self.wp_x = x
        self.wp_y = y
        self._draw_leg(cfg)
        self.energy = EnergyAccount(cfg.capacity_j)
        self.alive = True
        self.ledger = NeighborLedger(cfg.rate_window_ms)
        self.tracker = ServiceTracker(cfg.ewma_alpha)
        self.budget = SleepBudget(cfg.sleep_budget)
        self.edge_sleeps = EdgeSleepBoard()
        self.notified: dict[tuple[int, tuple[int, int]], float] = {}
        self.recent_breaks: dict[tuple[int, int], tuple[float, str]] = {}
        self.queue: deque[QueuedTx] = deque()
        self.in_service: QueuedTx | None = None
        self.service_token = 0
        self.cache = RouteCache()
        self.pending: dict[int, Pending] = {}
        self.backoff: dict[int, tuple[float, int]] = {}  # dst -> (until, fails)
        self.seen_rreq: set[tuple[int, int]] = set()
        self.collectors: dict[tuple[int, int], Collector] = {}
        self.views: dict[int, SessView] = {}
        self.bid_counter = 0
        self.below_energy_mark = False
        self.prev_ol = False
        self.shots = 0
        self.shot_grants: dict[int, float] = {}
        self.relayed_data = 0
        self.origin_data = 0

    def _draw_leg(self, cfg: ScenarioConfig) -> None:
        self.wp_x = self.rng.uniform(0.0, cfg.arena_w_m)
        self.wp_y = self.rng.uniform(0.0, cfg.arena_h_m)
        self.speed = self.rng.uniform(cfg.speed_min_mps, cfg.speed_max_mps)


@dataclass
class SessionRec:
    idx: int
    spec: SessionSpec
    sent: int = 0
    delivered: int = 0
    dropped: int = 0
    delay_sum_ms: float = 0.0


@dataclass
class RunResult:
    report: MetricsReport
    log: EventLog
    config: ScenarioConfig


# -------------------------------------------------------------- the engine


class Simulation:
    def __init__(self, cfg: ScenarioConfig):
        cfg.validate()
        self.cfg = cfg
        self.fep = cfg.protocol == "fep"
        self.now = 0.0
        self.end_ms = cfg.sim_time_s * 1000.0
        self._seq = 0
        self._heap: list[tuple[float, int, str, Any]] = []
        self._chain_n = 0
        self.log = EventLog(enabled=cfg.collect_log)
        self.mobility_hash = StreamHash()
        self.traffic_hash = StreamHash()
        self._grant_durations: set[float] = set()

        self.nodes = [self._make_node(i) for i in range(cfg.node_count)]
        self.sessions = [
            SessionRec(i, spec) for i, spec in enumerate(self._make_sessions())
        ]

        self.counters: dict[str, Any] = {
            "sent": 0, "delivered": 0, "dropped": 0,
            "data_tx": 0, "control_tx": 0,
            "rreq_tx": 0, "rrep_tx": 0, "notify_tx": 0,
            "sleep_request_tx": 0, "sleep_grant_tx": 0, "sleep_deny_tx": 0,
            "sleep_shots": 0, "grants": 0, "denies": 0,
            "link_breaks": 0, "repair_messages": 0,
            "discoveries": 0, "switches": 0, "switch_exhausted": 0,
            "deaths": 0, "total_delay_ms": 0.0, "max_partitions": 0,
            "drops_by_reason": {},
        }

        self.log.add({"t": 0.0, "seq": self._next_seq(), "kind": "run_start",
                      "protocol": cfg.protocol, "seed": cfg.seed,
                      "nodes": cfg.node_count,
                      "variant": {"ph": cfg.variant.ph, "ccs": cfg.variant.ccs,
                                  "slpr_orientation": cfg.variant.slpr_orientation}})

        self._schedule(cfg.tick_ms, "tick", None)
        self._schedule(0.0, "partition", None)
        if self.fep and cfg.sleep_budget > 0:
            self._schedule(cfg.sleep_check_period_ms, "sleep_sweep", None)
        for rec in self.sessions:
            self._schedule(rec.spec.start_ms, "emit", (rec.idx, 0))

    # -------------------------------------------------- construction

    def _make_node(self, i: int) -> Node:
        cfg = self.cfg
        topo = random.Random(f"{cfg.seed}/topology/{i}")
        if cfg.positions is not None:
            x, y = cfg.positions[i]
        else:
            x = topo.uniform(0.0, cfg.arena_w_m)
            y = topo.uniform(0.0, cfg.arena_h_m)
        range_m = topo.uniform(cfg.range_min_m, cfg.range_max_m)
        return Node(i, x, y, range_m, cfg, random.Random(f"{cfg.seed}/mobility/{i}"))

    def _make_sessions(self) -> list[SessionSpec]:
        cfg = self.cfg
        if cfg.explicit_sessions is not None:
            return list(cfg.explicit_sessions)
        rng = random.Random(f"{cfg.seed}/traffic")
        specs = []
        for _ in range(cfg.sessions):
            src = rng.randrange(cfg.node_count)
            dst = rng.randrange(cfg.node_count - 1)
            if dst >= src:
                dst += 1
            start = rng.uniform(cfg.session_start_min_ms, cfg.session_start_max_ms)
            specs.append(SessionSpec(src, dst, cfg.session_rate_pps,
                                     cfg.packets_per_session, start))
        return specs

    # -------------------------------------------------- event plumbing

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def _schedule(self, time_ms: float, kind: str, payload: Any) -> None:
        heapq.heappush(self._heap, (time_ms, self._next_seq(), kind, payload))

    def _new_chain(self, prefix: str) -> str:
        self._chain_n += 1
        return f"{prefix}{self._chain_n}"

    def _emit_log(self, kind: str, **fields: Any) -> None:
        rec = {"t": self.now, "seq": self._next_seq(), "kind": kind}
        rec.update(fields)
        self.log.add(rec)

    def run(self) -> RunResult:
        heap = self._heap
        while heap and heap[0][0] <= self.end_ms:
            t, _, kind, payload = heapq.heappop(heap)
            if t < self.now:
                raise SimulationError("event time moved backwards")
            self.now = t
            self._dispatch(kind, payload)
        self.now = self.end_ms
        return self._finalize()

    def _dispatch(self, kind: str, payload: Any) -> None:
        if kind == "tx_done":
            self._on_tx_done(*payload)
        elif kind == "deliver":
            self._on_deliver(*payload)
        elif kind == "emit":
            self._on_emit(*payload)
        elif kind == "tick":
            self._on_tick()
        elif kind == "reply_deadline":
            self._on_reply_deadline(*payload)
        elif kind == "disc_timeout":
            self._on_disc_timeout(*payload)
        elif kind == "partition":
            self._on_partition()
        elif kind == "sleep_sweep":
            self._on_sleep_sweep()
        elif kind == "sleep_try":
            self._maybe_request_sleep(self.nodes[payload])
        elif kind == "sleep_expire":
            self._on_sleep_expire(*payload)
        else:  # pragma: no cover - defensive
            raise SimulationError(f"unknown event kind {kind!r}")

    # -------------------------------------------------- radio and energy

    def _in_range(self, a: Node, b: Node) -> bool:
        dx = a.x - b.x
        dy = a.y - b.y
        reach = min(a.range_m, b.range_m)
        return dx * dx + dy * dy <= reach * reach

    def link_up(self, a: Node, b: Node) -> bool:
        """Bidirectional link predicate: both alive and mutually in range."""
        return a.alive and b.alive and self._in_range(a, b)

    def _tx_cost_j(self, bytes_b: int) -> float:
        return self.cfg.data_tx_mj * 1e-3 * (bytes_b / self.cfg.data_b)

    def _rx_cost_j(self, bytes_b: int) -> float:
        return self.cfg.data_rx_mj * 1e-3 * (bytes_b / self.cfg.data_b)

    @property
    def _data_bytes(self) -> int:
        return self.cfg.data_b + (self.cfg.fep_meta_b if self.fep else 0)

    def _debit(self, node: Node, amount_j: float) -> None:
        if not node.alive:
            return
        died = node.energy.debit(amount_j)
        if died:
            self._kill(node)
        elif (self.fep and not node.below_energy_mark
              and node.energy.residual_ratio < 0.4):
            node.below_energy_mark = True
            self._schedule(self.now, "sleep_try", node.id)

    def _kill(self, node: Node) -> None:
        node.alive = False
        self.counters["deaths"] += 1
        self._emit_log("death", node=node.id)
        entries = list(node.queue)
        if node.in_service is not None:
            entries.append(node.in_service)
        node.queue.clear()
        node.in_service = None
        node.service_token += 1
        for entry in entries:
            if entry.kind == "data":
                self._drop_data(entry.pkt, "node_died")
        for pending in node.pending.values():
            for pkt in pending.buffered:
                self._drop_data(pkt, "node_died")
        node.pending.clear()
        node.collectors.clear()

    # -------------------------------------------------- transmit pipeline

    def _send(self, node: Node, kind: str, pkt: Any, dest: int | None,
              bytes_b: int, arrived_from: int | None = None) -> None:
        if not node.alive:
            return
        node.queue.append(QueuedTx(kind, pkt, dest, bytes_b, arrived_from, self.now))
        self._kick(node)

    def _kick(self, node: Node) -> None:
        if node.alive and node.in_service is None and node.queue:
            node.in_service = node.queue.popleft()
            node.service_token += 1
            self._schedule(self.now + 1000.0 / self.cfg.service_rate_pps,
                           "tx_done", (node.id, node.service_token))

    def _on_tx_done(self, node_id: int, token: int) -> None:
        node = self.nodes[node_id]
        if token != node.service_token or node.in_service is None:
            return
        entry = node.in_service
        node.in_service = None
        # The debit may empty the battery; the frame still leaves the radio.
        self._debit(node, self._tx_cost_j(entry.bytes_b))
        self._count_tx(entry)
        if self.log.enabled:
            self._log_tx(node, entry)
        if entry.kind == "data":
            pkt: DataPacket = entry.pkt
            node.tracker.on_service(self.now - entry.queued_ms)
            self._check_overload_trigger(node)
            if not pkt.returning:
                if entry.arrived_from is not None:
                    node.ledger.record_forwarded(entry.arrived_from)
                    node.relayed_data += 1
                else:
                    node.origin_data += 1
                view = node.views.get(pkt.session)
                if view is None:
                    view = SessView()
                    node.views[pkt.session] = view
                view.fwd += 1
                view.total = pkt.total
                view.next_hop = entry.dest if entry.dest is not None else -1
                view.route = pkt.route
                view.alts = pkt.alts
                view.last_seen_ms = self.now
        self._schedule(self.now + self.cfg.propagation_ms, "deliver",
                       (node_id, entry))
        self._kick(node)

    def _count_tx(self, entry: QueuedTx) -> None:
        c = self.counters
        if entry.kind == "data":
            c["data_tx"] += 1
            return
        c["control_tx"] += 1
        key = f"{entry.kind}_tx"
        if key in c:
            c[key] += 1
        cause = getattr(entry.pkt, "cause", None) or getattr(entry.pkt, "reason", None)
        if cause == "link_break" and entry.kind in ("rreq", "rrep", "notify"):
            c["repair_messages"] += 1

    def _log_tx(self, node: Node, entry: QueuedTx) -> None:
        rec: dict[str, Any] = {
            "node": node.id, "pkt": entry.kind, "bytes": entry.bytes_b,
            "to": "bcast" if entry.dest is None else entry.dest,
        }
        pkt = entry.pkt
        if entry.kind == "data":
            rec["session"] = pkt.session
            rec["pkt_id"] = pkt.pkt_id
            rec["returning"] = pkt.returning
            rec["wait_ms"] = self.now - entry.queued_ms
            if entry.arrived_from is not None:
                rec["arrived_from"] = entry.arrived_from
        else:
            cause = getattr(pkt, "cause", None) or getattr(pkt, "reason", None)
            chain = getattr(pkt, "chain", None)
            if cause:
                rec["cause"] = cause
            if chain:
                rec["chain"] = chain
        self._emit_log("tx", **rec)

    def _on_deliver(self, sender_id: int, entry: QueuedTx) -> None:
        sender = self.nodes[sender_id]
        if entry.dest is None:
            for node in self.nodes:
                if node.id == sender_id or not node.alive:
                    continue
                if not self._in_range(sender, node):
                    continue
                self._receive(node, entry, sender_id)
        else:
            node = self.nodes[entry.dest]
            if node.alive and self._in_range(sender, node):
                self._receive(node, entry, sender_id)
            elif entry.kind == "data":
                # out of range or dead at the delivery instant: radio loss
                self._drop_data(entry.pkt, "radio_loss")
            elif self.log.enabled:
                self._emit_log("drop", pkt=entry.kind, reason="radio_loss")

    def _receive(self, node: Node, entry: QueuedTx, frm: int) -> None:
        self._debit(node, self._rx_cost_j(entry.bytes_b))
        if self.log.enabled:
            rec: dict[str, Any] = {"node": node.id, "pkt": entry.kind,
                                   "bytes": entry.bytes_b, "frm": frm}
            if entry.kind == "data":
                pkt: DataPacket = entry.pkt
                rec["session"] = pkt.session
                rec["pkt_id"] = pkt.pkt_id
                rec["for_forwarding"] = (not pkt.returning) and node.id != pkt.dst
            self._emit_log("rx", **rec)
        if not node.alive:
            # the reception itself emptied the battery; payload is lost
            if entry.kind == "data":
                self._drop_data(entry.pkt, "receiver_died")
            return
        kind = entry.kind
        if kind == "data":
            self._on_data(node, entry.pkt, frm)
        elif kind == "rreq":
            self._on_rreq(node, entry.pkt)
        elif kind == "rrep":
            self._on_rrep(node, entry.pkt)
        elif kind == "notify":
            self._on_notify(node, entry.pkt)
        elif kind == "sleep_request":
            self._on_sleep_request(node, entry.pkt)
        else:
            self._on_sleep_reply(node, entry.pkt)

    # -------------------------------------------------- traffic

    def _on_emit(self, session_idx: int, k: int) -> None:
        rec = self.sessions[session_idx]
        spec = rec.spec
        self.traffic_hash.update(self.now, session_idx, k)
        rec.sent += 1
        self.counters["sent"] += 1
        if self.log.enabled:
            self._emit_log("emit", node=spec.src, session=session_idx,
                           pkt_id=f"{session_idx}:{k}")
        pkt = DataPacket(session=session_idx, src=spec.src, dst=spec.dst,
                         pkt_idx=k, total=spec.total, emit_ms=self.now)
        src = self.nodes[spec.src]
        if not src.alive:
            self._drop_data(pkt, "source_dead")
        else:
            self._source_dispatch(src, pkt, cause="traffic", chain=None)
        if k + 1 < spec.total:
            self._schedule(spec.start_ms + (k + 1) * 1000.0 / spec.rate_pps,
                           "emit", (session_idx, k + 1))

    def _drop_data(self, pkt: DataPacket, reason: str) -> None:
        rec = self.sessions[pkt.session]
        rec.dropped += 1
        self.counters["dropped"] += 1
        reasons = self.counters["drops_by_reason"]
        reasons[reason] = reasons.get(reason, 0) + 1
        if self.log.enabled:
            self._emit_log("drop", pkt="data", session=pkt.session,
                           pkt_id=pkt.pkt_id, reason=reason)

    # -------------------------------------------------- source behavior

    def _source_dispatch(self, src: Node, pkt: DataPacket, cause: str,
                         chain: str | None) -> None:
        dst = pkt.dst
        # always ride the best currently usable cached route; a suspended
        # best route becomes eligible again the moment its hold lapses
        route = src.cache.switch(dst, self.now)
        if route is None:
            if self._in_backoff(src, dst):
                self._drop_data(pkt, "no_route")
                return
            pending = self._ensure_discovery(src, dst, cause, chain)
            pending.buffered.append(pkt)
            return
        entry = src.cache.entries[dst]
        pkt.route = route.hops
        pkt.idx = 0
        pkt.alts = tuple(
            (int(r.grade), r.hops)
            for i, r in enumerate(entry.routes) if i != entry.active
        )
        pkt.returning = False
        pkt.ret_path = ()
        self._forward(src, pkt, arrived_from=None)

    def _in_backoff(self, src: Node, dst: int) -> bool:
        entry = src.backoff.get(dst)
        return entry is not None and self.now < entry[0]

    def _ensure_discovery(self, src: Node, dst: int, cause: str,
                          chain: str | None) -> Pending:
        pending = src.pending.get(dst)
        if pending is not None:
            return pending
        src.bid_counter += 1
        pending = Pending(bid=src.bid_counter, attempts=1, cause=cause, chain=chain)
        src.pending[dst] = pending
        self._flood_rreq(src, dst, pending)
        return pending

    def _flood_rreq(self, src: Node, dst: int, pending: Pending) -> None:
        self.counters["discoveries"] += 1
        self._emit_log("originate", node=src.id, dst=dst, bid=pending.bid,
                       cause=pending.cause, chain=pending.chain,
                       attempt=pending.attempts)
        rreq = Rreq(src.id, pending.bid, dst, (src.id,), pending.cause, pending.chain)
        src.seen_rreq.add((src.id, pending.bid))
        self._send(src, "rreq", rreq, BROADCAST, self.cfg.rreq_base_b)
        self._schedule(self.now + self.cfg.discovery_timeout_ms, "disc_timeout",
                       (src.id, dst, pending.bid))

    def _on_disc_timeout(self, src_id: int, dst: int, bid: int) -> None:
        src = self.nodes[src_id]
        if not src.alive:
            return
        pending = src.pending.get(dst)
        if pending is None or pending.bid != bid:
            return
        if pending.attempts < self.cfg.discovery_retries:
            pending.attempts += 1
            src.bid_counter += 1
            pending.bid = src.bid_counter
            self._flood_rreq(src, dst, pending)
            return
        del src.pending[dst]
        # binary exponential backoff between failed discovery bursts
        fails = src.backoff.get(dst, (0.0, 0))[1] + 1
        hold = min(1000.0 * 2 ** (fails - 1), 16000.0)
        src.backoff[dst] = (self.now + hold, fails)
        for pkt in pending.buffered:
            self._drop_data(pkt, "no_route")

    # -------------------------------------------------- discovery handlers

    def _on_rreq(self, node: Node, rreq: Rreq) -> None:
        key = (rreq.src, rreq.bid)
        if key in node.seen_rreq or node.id in rreq.path:
            return
        if node.id == rreq.dst:
            if len(rreq.path) > self.cfg.max_hops:
                return
            coll = node.collectors.get(key)
            if coll is None:
                coll = Collector([], rreq.cause, rreq.chain)
                node.collectors[key] = coll
                self._schedule(self.now + self.cfg.reply_window_ms,
                               "reply_deadline", (node.id, rreq.src, rreq.bid))
            coll.paths.append(rreq.path + (node.id,))
            return
        if len(rreq.path) >= self.cfg.max_hops:
            return
        node.seen_rreq.add(key)
        fwd = Rreq(rreq.src, rreq.bid, rreq.dst, rreq.path + (node.id,),
                   rreq.cause, rreq.chain)
        bytes_b = self.cfg.rreq_base_b + self.cfg.rreq_per_hop_b * (len(fwd.path) - 1)
        self._send(node, "rreq", fwd, BROADCAST, bytes_b)

    def _on_reply_deadline(self, dst_id: int, src: int, bid: int) -> None:
        node = self.nodes[dst_id]
        coll = node.collectors.pop((src, bid), None)
        node.seen_rreq.add((src, bid))
        if coll is None or not node.alive:
            return
        limit = 3 if self.fep else 1
        paths = rank_candidate_paths(coll.paths, limit)
        if not paths:
            return
        routes = tuple(Route.from_hops(p, self.cfg.max_hops) for p in paths)
        self._emit_log("route_reply", node=dst_id, src=src, bid=bid,
                       routes=[list(r.hops) for r in routes])
        bytes_b = self.cfg.rrep_base_b + self.cfg.rrep_per_hop_b * sum(
            r.hop_count for r in routes)
        rrep = Rrep(src, dst_id, bid, routes, tuple(reversed(paths[0])), 0,
                    bytes_b, coll.cause, coll.chain)
        self._unicast_step(node, "rrep", rrep, bytes_b)

    def _unicast_step(self, node: Node, kind: str, pkt: Any, bytes_b: int) -> bool:
        """Advance a source-routed control packet one hop; False if the next
        hop is unreachable (the packet is then simply lost)."""
        path: tuple[int, ...] = pkt.path
        nxt = self.nodes[path[pkt.idx + 1]]
        if not (nxt.alive and self._in_range(node, nxt)):
            if self.log.enabled:
                self._emit_log("drop", pkt=kind, reason="control_path_broken")
            return False
        pkt.idx += 1
        self._send(node, kind, pkt, nxt.id, bytes_b)
        return True

    def _on_rrep(self, node: Node, rrep: Rrep) -> None:
        if rrep.path[rrep.idx] != node.id:
            return
        if node.id == rrep.req_src:
            pending = node.pending.pop(rrep.req_dst, None)
            if pending is None:
                return
            node.backoff.pop(rrep.req_dst, None)
            node.cache.install(rrep.req_dst, rrep.routes)
            self._emit_log("route_install", node=node.id, dst=rrep.req_dst,
                           routes=[list(r.hops) for r in rrep.routes],
                           cause=rrep.cause, chain=rrep.chain)
            for pkt in pending.buffered:
                if node.alive:
                    self._source_dispatch(node, pkt, cause="traffic", chain=None)
            return
        self._unicast_step(node, "rrep", rrep, rrep.bytes_b)

    # -------------------------------------------------- data plane

    def _on_data(self, node: Node, pkt: DataPacket, frm: int) -> None:
        if pkt.returning:
            self._on_returning_data(node, pkt)
            return
        if pkt.idx >= len(pkt.route) or pkt.route[pkt.idx] != node.id:
            return
        if node.id == pkt.dst:
            rec = self.sessions[pkt.session]
            rec.delivered += 1
            delay = self.now - pkt.emit_ms
            rec.delay_sum_ms += delay
            self.counters["delivered"] += 1
            self.counters["total_delay_ms"] += delay
            if self.log.enabled:
                self._emit_log("deliver", node=node.id, session=pkt.session,
                               pkt_id=pkt.pkt_id, delay_ms=delay)
            return
        node.ledger.record_arrival(frm, self.now)
        node.tracker.on_arrival(self.now)
        self._check_overload_trigger(node)
        self._forward(node, pkt, arrived_from=frm)

    def _forward(self, node: Node, pkt: DataPacket, arrived_from: int | None) -> None:
        next_hop = pkt.route[pkt.idx + 1]
        if self.fep:
            sleep = node.edge_sleeps.active(next_hop, self.now)
            if sleep is not None:
                self._notify_for_session(node, pkt.session, pkt.route,
                                         reason="sleep_redirect",
                                         edge=(node.id, next_hop), dead=None,
                                         chain=sleep.chain, until=sleep.until_ms)
                self._return_packet(node, pkt, "sleep_redirect",
                                    (node.id, next_hop), None, sleep.chain,
                                    sleep.until_ms)
                return
        nxt = self.nodes[next_hop]
        if not (nxt.alive and self._in_range(node, nxt)):
            self._break_block(node, pkt, next_hop, dead=not nxt.alive)
            return
        pkt.idx += 1
        self._send(node, "data", pkt, next_hop, self._data_bytes,
                   arrived_from=arrived_from)

    def _break_block(self, node: Node, pkt: DataPacket, next_hop: int,
                     dead: bool) -> None:
        edge = (node.id, next_hop)
        episode = node.recent_breaks.get(edge)
        if episode is None or episode[0] <= self.now:
            chain = self._new_chain("break")
            until = self.now + self.cfg.edge_blacklist_ms
            node.recent_breaks[edge] = (until, chain)
            self.counters["link_breaks"] += 1
            self._emit_log("link_break", node=node.id, edge=list(edge),
                           dead=dead, session=pkt.session, chain=chain)
        else:
            until, chain = episode
        self._notify_for_session(node, pkt.session, pkt.route,
                                 reason="link_break", edge=edge,
                                 dead=next_hop if dead else None,
                                 chain=chain, until=until)
        self._return_packet(node, pkt, "link_break", edge,
                            next_hop if dead else None, chain, until)

    def _notify_for_session(self, node: Node, session: int,
                            route: tuple[int, ...], reason: str,
                            edge: tuple[int, int], dead: int | None,
                            chain: str | None, until: float) -> None:
        key = (session, edge)
        if node.notified.get(key, float("-inf")) >= until:
            return
        node.notified[key] = until
        src = route[0]
        if src == node.id:
            self._source_handle_failure(node, session, reason, edge, dead,
                                        chain, until)
            return
        pos = route.index(node.id)
        notify = Notify(session, edge, reason, dead, until,
                        tuple(reversed(route[:pos + 1])), 0, chain)
        self._unicast_step(node, "notify", notify, self.cfg.notify_b)

    def _on_notify(self, node: Node, notify: Notify) -> None:
        if notify.path[notify.idx] != node.id:
            return
        if node.id == notify.path[-1]:
            self._source_handle_failure(node, notify.session, notify.reason,
                                        notify.edge, notify.dead, notify.chain,
                                        notify.until_ms)
            return
        self._unicast_step(node, "notify", notify, self.cfg.notify_b)

    def _source_handle_failure(self, src: Node, session: int, reason: str,
                               edge: tuple[int, int], dead: int | None,
                               chain: str | None, until: float) -> None:
        if reason == "link_break":
            src.cache.quarantine_edge(edge, self.now, self.cfg.edge_blacklist_ms)
        else:
            src.cache.suspend_edge(edge, until)
        if dead is not None:
            src.cache.mark_dead(dead)
        dst = self.sessions[session].spec.dst
        entry = src.cache.entries.get(dst)
        if entry is None:
            return
        if src.cache.usable(entry.active_route(), self.now):
            return
        new = src.cache.switch(dst, self.now)
        if new is not None:
            self.counters["switches"] += 1
            self._emit_log("switch", node=src.id, session=session,
                           reason=reason, to=list(new.hops),
                           had_alternative=True, chain=chain)
        else:
            self.counters["switch_exhausted"] += 1
            self._emit_log("switch", node=src.id, session=session,
                           reason=reason, to=None, had_alternative=False,
                           chain=chain)
            if not self._in_backoff(src, dst):
                self._ensure_discovery(src, dst, reason, chain)

    def _return_packet(self, node: Node, pkt: DataPacket, reason: str,
                       edge: tuple[int, int], dead: int | None,
                       chain: str | None, until: float) -> None:
        if node.id == pkt.route[0]:
            self._source_handle_failure(node, pkt.session, reason, edge, dead,
                                        chain, until)
            if node.alive:
                self._source_dispatch(node, pkt, cause=reason, chain=chain)
            return
        pkt.returns += 1
        if pkt.returns > self.cfg.max_packet_returns:
            self._drop_data(pkt, "too_many_returns")
            return
        pos = pkt.route.index(node.id)
        pkt.returning = True
        pkt.ret_path = tuple(reversed(pkt.route[:pos + 1]))
        pkt.ret_idx = 0
        pkt.ret_reason = reason
        pkt.ret_edge = edge
        pkt.ret_dead = dead
        pkt.ret_chain = chain
        pkt.ret_until = until
        self._relay_return(node, pkt)

    def _relay_return(self, node: Node, pkt: DataPacket) -> None:
        next_hop = pkt.ret_path[pkt.ret_idx + 1]
        if self.fep and node.edge_sleeps.active(next_hop, self.now) is not None:
            self._drop_data(pkt, "return_blocked")
            return
        nxt = self.nodes[next_hop]
        if not (nxt.alive and self._in_range(node, nxt)):
            self._drop_data(pkt, "return_path_broken")
            return
        pkt.ret_idx += 1
        self._send(node, "data", pkt, next_hop, self._data_bytes)

    def _on_returning_data(self, node: Node, pkt: DataPacket) -> None:
        if pkt.ret_path[pkt.ret_idx] != node.id:
            return
        if node.id == pkt.route[0]:
            reason, edge = pkt.ret_reason, pkt.ret_edge
            dead, chain, until = pkt.ret_dead, pkt.ret_chain, pkt.ret_until
            pkt.returning = False
            pkt.ret_path = ()
            self._source_handle_failure(node, pkt.session, reason, edge, dead,
                                        chain, until)
            if node.alive:
                self._source_dispatch(node, pkt, cause=reason, chain=chain)
            return
        self._relay_return(node, pkt)

    # -------------------------------------------------- sleep overlay

    def _check_overload_trigger(self, node: Node) -> None:
        if not self.fep or not node.alive:
            return
        _, ol = enable_flags(node.energy.residual_j, node.energy.capacity_j,
                             node.tracker.ts_ms, node.tracker.tr_ms)
        if ol and not node.prev_ol:
            self._schedule(self.now, "sleep_try", node.id)
        node.prev_ol = bool(ol)

    def _on_sleep_sweep(self) -> None:
        for node in self.nodes:
            if node.alive:
                self._maybe_request_sleep(node)
        self._schedule(self.now + self.cfg.sleep_check_period_ms,
                       "sleep_sweep", None)

    def _maybe_request_sleep(self, node: Node) -> None:
        if not (self.fep and node.alive) or self.cfg.sleep_budget == 0:
            return
        e, ol = enable_flags(node.energy.residual_j, node.energy.capacity_j,
                             node.tracker.ts_ms, node.tracker.tr_ms)
        if not (e or ol):
            return
        if not node.budget.can_shoot(self.now, self.cfg.cooldown_ms):
            return
        uplinks = node.ledger.uplink_set(self.now)
        if not uplinks:
            return
        taus = tuple(node.ledger.rate(u, self.now) for u in uplinks)
        payloads: dict[int, dict[str, float]] = {}
        for u, tau in zip(uplinks, taus):
            rec = node.ledger.ph_record(u)
            payloads[u] = {"sent": rec.sent, "forwarded": rec.forwarded,
                           "sleep_requests": rec.sleep_requests, "tau": tau}
        node.budget.record_shot(self.now)
        node.shots += 1
        self.counters["sleep_shots"] += 1
        for u in uplinks:
            node.ledger.record_sleep_shot(u)
        req = SleepRequest(node.id, tuple(uplinks), payloads, taus, node.shots)
        self._emit_log("sleep_shot", node=node.id, addressees=list(uplinks),
                       shot=node.shots, slp=node.budget.used, e=e, ol=ol,
                       residual_j=node.energy.residual_j,
                       capacity_j=node.energy.capacity_j,
                       ts_ms=node.tracker.ts_ms, tr_ms=node.tracker.tr_ms,
                       payloads={str(u): p for u, p in payloads.items()},
                       taus=list(taus))
        self._send(node, "sleep_request", req, BROADCAST, self.cfg.sleep_msg_b)

    def _live_views(self, node: Node, towards: int) -> list[tuple[int, SessView]]:
        """Sessions this node is actively forwarding into the given next hop."""
        out = []
        for session in sorted(node.views):
            view = node.views[session]
            if view.next_hop != towards:
                continue
            if self.now - view.last_seen_ms > self.cfg.session_view_window_ms:
                continue
            if view.total - view.fwd <= 0:
                continue
            out.append((session, view))
        return out

    def _on_sleep_request(self, node: Node, req: SleepRequest) -> None:
        if node.id not in req.addressees:
            return
        payload = req.payloads[node.id]
        rec = PhRecord(int(payload["sent"]), int(payload["forwarded"]),
                       int(payload["sleep_requests"]))
        live = self._live_views(node, req.requester)
        views = []
        for _, view in live:
            alt_grades = tuple(
                FuzzyGrade(g) for g, hops in view.alts
                if req.requester not in hops
                and all(self.nodes[h].alive for h in hops)
            )
            views.append(HopSessionView(view.fwd, max(view.total - view.fwd, 0),
                                        alt_grades))
        trace = evaluate_trace(rec, views, payload["tau"], req.taus,
                               self.cfg.nap_limit_ms, self.cfg.variant)
        if not trace.cl_bounds.degenerate and not (
                trace.cl_bounds.low <= 1.0 <= trace.cl_bounds.high):
            raise SimulationError("rate bounds must straddle the mean")
        granted = trace.decision.granted
        chain = self._new_chain("grant") if granted else None
        self._emit_log(
            "slreq_eval", node=node.id, requester=req.requester, shot=req.shot,
            inputs={"sent": rec.sent, "forwarded": rec.forwarded,
                    "sleep_requests": rec.sleep_requests, "tau": payload["tau"],
                    "uplink_taus": list(req.taus),
                    "views": [[v.forwarded, v.remaining,
                               [int(g) for g in v.alt_grades]] for v in views]},
            outputs={"cl": trace.cl, "cl_low": trace.cl_bounds.low,
                     "cl_high": trace.cl_bounds.high, "ph": trace.ph,
                     "ccs": trace.ccs, "cl_grade": int(trace.cl_grade),
                     "ph_grade": int(trace.ph_grade),
                     "ccs_grade": int(trace.ccs_grade),
                     "temp": int(trace.temp), "slpr": int(trace.slpr)},
            granted=granted, duration_ms=trace.decision.duration_ms, chain=chain)
        if granted:
            duration = trace.decision.duration_ms
            self.counters["grants"] += 1
            self._grant_durations.add(duration)
            sleep = node.edge_sleeps.grant(node.id, req.requester, self.now,
                                           duration, chain)
            self._emit_log("edge_sleep", node=node.id, sleeper=req.requester,
                           until=sleep.until_ms, chain=chain)
            self._schedule(sleep.until_ms, "sleep_expire",
                           (node.id, req.requester, sleep.until_ms))
            reply = SleepReply(node.id, req.requester, True, duration,
                               req.shot, chain)
            self._send(node, "sleep_grant", reply, req.requester,
                       self.cfg.sleep_msg_b)
            self._apply_grant_redirects(node, req.requester, sleep.until_ms, chain)
        else:
            self.counters["denies"] += 1
            reply = SleepReply(node.id, req.requester, False, None, req.shot, None)
            self._send(node, "sleep_deny", reply, req.requester,
                       self.cfg.sleep_msg_b)

    def _apply_grant_redirects(self, granter: Node, sleeper: int,
                               until: float, chain: str) -> None:
        edge = (granter.id, sleeper)
        for session, view in self._live_views(granter, sleeper):
            self._notify_for_session(granter, session, view.route,
                                     reason="sleep_redirect", edge=edge,
                                     dead=None, chain=chain, until=until)
        # pull queued (and in-service) data headed for the sleeper and send
        # it back; control packets keep flowing
        pulled: list[DataPacket] = []
        kept: deque[QueuedTx] = deque()
        for entry in granter.queue:
            if (entry.kind == "data" and entry.dest == sleeper
                    and not entry.pkt.returning):
                pulled.append(entry.pkt)
            else:
                kept.append(entry)
        granter.queue = kept
        current = granter.in_service
        if (current is not None and current.kind == "data"
                and current.dest == sleeper and not current.pkt.returning):
            granter.in_service = None
            granter.service_token += 1  # cancels the scheduled completion
            pulled.append(current.pkt)
            self._kick(granter)
        for pkt in pulled:
            self._return_packet(granter, pkt, "sleep_redirect", edge, None,
                                chain, until)

    def _on_sleep_reply(self, node: Node, reply: SleepReply) -> None:
        if reply.requester != node.id:
            return
        if reply.granted and reply.duration_ms is not None:
            best = node.shot_grants.get(reply.shot, 0.0)
            node.shot_grants[reply.shot] = max(best, reply.duration_ms)

    def _on_sleep_expire(self, granter_id: int, sleeper: int, until: float) -> None:
        node = self.nodes[granter_id]
        if node.edge_sleeps.expire(sleeper, until):
            self._emit_log("sleep_expire", node=granter_id, sleeper=sleeper)

    # -------------------------------------------------- mobility and sampling

    def _on_tick(self) -> None:
        dt_s = self.cfg.tick_ms / 1000.0
        for node in self.nodes:
            self._move(node, dt_s)
            self.mobility_hash.update(self.now, node.id, node.x, node.y)
        alive_ids = [n.id for n in self.nodes if n.alive]
        if self.log.enabled:
            self._emit_log("idle", alive=alive_ids)
        cost = self.cfg.idle_mj_per_tick * 1e-3
        for node_id in alive_ids:
            self._debit(self.nodes[node_id], cost)
        nxt = self.now + self.cfg.tick_ms
        if nxt <= self.end_ms:
            self._schedule(nxt, "tick", None)

    def _move(self, node: Node, dt_s: float) -> None:
        # Motion is independent of energy state so paired runs share one
        # kinematic trace; a dead node still rides along, radios off.
        remaining = dt_s
        while remaining > 1e-12:
            if node.speed <= 0.0:
                return
            dx = node.wp_x - node.x
            dy = node.wp_y - node.y
            dist = math.hypot(dx, dy)
            step = node.speed * remaining
            if step < dist:
                node.x += dx / dist * step
                node.y += dy / dist * step
                return
            node.x = node.wp_x
            node.y = node.wp_y
            if node.speed > 0.0:
                remaining -= dist / node.speed
            node._draw_leg(self.cfg)

    def _on_partition(self) -> None:
        count = self._component_count()
        self.counters["max_partitions"] = max(self.counters["max_partitions"], count)
        self._emit_log("partition", components=count)
        nxt = self.now + self.cfg.partition_sample_s * 1000.0
        if nxt <= self.end_ms:
            self._schedule(nxt, "partition", None)

    def _component_count(self) -> int:
        alive = [n for n in self.nodes if n.alive]
        if not alive:
            return 0
        parent = {n.id: n.id for n in alive}

        def find(k: int) -> int:
            root = k
            while parent[root] != root:
                root = parent[root]
            while parent[k] != root:
                parent[k], k = root, parent[k]
            return root

        for i, a in enumerate(alive):
            for b in alive[i + 1:]:
                if self._in_range(a, b):
                    ra, rb = find(a.id), find(b.id)
                    if ra != rb:
                        parent[rb] = ra
        return len({find(n.id) for n in alive})

    # -------------------------------------------------- finalize

    def _finalize(self) -> RunResult:
        self._audit()
        c = dict(self.counters)
        c["total_energy_j"] = sum(n.energy.consumed_j for n in self.nodes)
        c["mobility_hash"] = self.mobility_hash.hexdigest()
        c["traffic_hash"] = self.traffic_hash.hexdigest()
        limit = self.cfg.nap_limit_ms
        per_node = {}
        for n in self.nodes:
            per_node[n.id] = {
                "consumed_j": n.energy.consumed_j,
                "residual_ratio": n.energy.residual_ratio,
                "alive": n.alive,
                "shots": n.shots,
                "grants_received": len(n.shot_grants),
                "lost_sleep_ms": self._lost_sleep_ms(n, limit),
                "relayed_data": n.relayed_data,
                "origin_data": n.origin_data,
            }
        c["per_node"] = per_node
        c["grant_durations"] = sorted(self._grant_durations)
        self._emit_log("run_end", mobility_hash=c["mobility_hash"],
                       traffic_hash=c["traffic_hash"])
        report = finalize(c, protocol=self.cfg.protocol, seed=self.cfg.seed,
                          node_count=self.cfg.node_count,
                          sim_time_s=self.cfg.sim_time_s,
                          session_count=len(self.sessions))
        return RunResult(report, self.log, self.cfg)

    @staticmethod
    def _lost_sleep_ms(node: Node, limit_ms: float) -> float:
        """Sleep lost to short naps, counted once per installment using the
        best grant the installment earned."""
        lost = 0.0
        for shot in range(1, node.shots + 1):
            best = node.shot_grants.get(shot)
            if best is not None and best < limit_ms:
                lost += limit_ms - best
        return lost

    def _audit(self) -> None:
        cfg = self.cfg
        limit = cfg.nap_limit_ms
        short = limit * (FuzzyGrade.A3.mid / FuzzyGrade.A4.mid)
        for d in self._grant_durations:
            if d not in (limit, short):
                raise SimulationError(f"impossible grant duration {d!r}")
        bound = cfg.sleep_budget * limit * (2.0 / 7.0) + 1e-9
        for node in self.nodes:
            if node.shots != node.budget.used or node.shots > cfg.sleep_budget:
                raise SimulationError(f"budget accounting broken at node {node.id}")
            if self._lost_sleep_ms(node, limit) > bound:
                raise SimulationError(f"lost-sleep bound exceeded at node {node.id}")
        # every emitted packet is delivered, dropped, or locatable in flight
        in_flight = {rec.idx: rec.sent - rec.delivered - rec.dropped
                     for rec in self.sessions}
        located = {rec.idx: 0 for rec in self.sessions}

        def note(pkt: DataPacket) -> None:
            located[pkt.session] += 1

        for node in self.nodes:
            for entry in node.queue:
                if entry.kind == "data":
                    note(entry.pkt)
            if node.in_service is not None and node.in_service.kind == "data":
                note(node.in_service.pkt)
            for pending in node.pending.values():
                for pkt in pending.buffered:
                    note(pkt)
        for _, _, kind, payload in self._heap:
            if kind == "deliver" and payload[1].kind == "data":
                note(payload[1].pkt)
        if in_flight != located:
            raise SimulationError(
                f"session accounting mismatch: {in_flight} != {located}")


def run_scenario(cfg: ScenarioConfig) -> RunResult:
    """Execute one scenario to completion."""
    return Simulation(cfg).run()
