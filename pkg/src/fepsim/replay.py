"""Recompute run metrics straight from an event log.

This deliberately ignores the engine's accumulators: energy is re-summed from
the logged transmissions, receptions and idle ticks at their configured
costs, and every headline quotient is re-derived from raw log records, so a
finished report can be cross-checked against its own log.
"""

from __future__ import annotations

from typing import Any, Iterable

from .config import ScenarioConfig


def replay_energy(records: Iterable[dict[str, Any]],
                  cfg: ScenarioConfig) -> dict[int, float]:
    """Per-node consumed energy implied by the log, joules.

    Debits are applied in log order with the same arithmetic the engine
    uses, so the totals match bit for bit.
    """
    tx_unit = cfg.data_tx_mj * 1e-3
    rx_unit = cfg.data_rx_mj * 1e-3
    idle = cfg.idle_mj_per_tick * 1e-3
    consumed: dict[int, float] = {}
    for rec in records:
        kind = rec["kind"]
        if kind == "tx":
            node = rec["node"]
            consumed[node] = consumed.get(node, 0.0) + tx_unit * (rec["bytes"] / cfg.data_b)
        elif kind == "rx":
            node = rec["node"]
            consumed[node] = consumed.get(node, 0.0) + rx_unit * (rec["bytes"] / cfg.data_b)
        elif kind == "idle":
            for node in rec["alive"]:
                consumed[node] = consumed.get(node, 0.0) + idle
    capacity = cfg.capacity_j
    return {n: min(capacity, v) for n, v in consumed.items()}


def recompute_metrics(records: Iterable[dict[str, Any]],
                      cfg: ScenarioConfig,
                      session_count: int) -> dict[str, Any]:
    """The seven headline metrics plus supporting counters, from the log."""
    records = list(records)
    sent = sum(1 for r in records if r["kind"] == "emit")
    delivered = 0
    delay_sum = 0.0
    for r in records:
        if r["kind"] == "deliver":
            delivered += 1
            delay_sum += r["delay_ms"]
    tx_records = [r for r in records if r["kind"] == "tx"]
    data_tx = sum(1 for r in tx_records if r["pkt"] == "data")
    control_tx = len(tx_records) - data_tx
    link_breaks = sum(1 for r in records if r["kind"] == "link_break")
    repair = sum(
        1 for r in tx_records
        if r["pkt"] in ("rreq", "rrep", "notify") and r.get("cause") == "link_break"
    )
    partitions = [r["components"] for r in records if r["kind"] == "partition"]
    energy = replay_energy(records, cfg)
    total_energy = 0.0
    for node in sorted(energy):
        total_energy += energy[node]
    nodes = cfg.node_count
    out: dict[str, Any] = {
        "sent": sent,
        "delivered": delivered,
        "data_tx": data_tx,
        "control_tx": control_tx,
        "link_breaks": link_breaks,
        "repair_messages": repair,
        "total_energy_j": total_energy,
        "per_node_energy_j": total_energy / nodes,
        "per_node_message_overhead": (data_tx + control_tx) / nodes,
        "per_node_control_overhead": control_tx / nodes,
        "delivery_ratio_pct": delivered * 100.0 / sent if sent > 0 else None,
        "max_partitions": max(partitions) if partitions else 0,
        "rreq_tx": sum(1 for r in tx_records if r["pkt"] == "rreq"),
    }
    if session_count > 0:
        out["delay_per_session_ms"] = delay_sum / session_count
        out["link_breaks_per_session"] = link_breaks / session_count
        out["repair_cost_per_node_per_session"] = repair / (session_count * nodes)
    else:
        out["delay_per_session_ms"] = None
        out["link_breaks_per_session"] = None
        out["repair_cost_per_node_per_session"] = None
    return out
