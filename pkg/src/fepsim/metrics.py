"""Run metrics: the seven headline quotients plus raw counters, CSV/JSON
output and multi-seed aggregation with paired baseline/overlay deltas."""

from __future__ import annotations

import csv
import json
import statistics
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence


@dataclass
class MetricsReport:
    protocol: str
    seed: int
    node_count: int
    sim_time_s: float
    delivery_ratio_pct: float | None
    per_node_energy_j: float
    per_node_message_overhead: float
    per_node_control_overhead: float
    delay_per_session_ms: float | None
    link_breaks_per_session: float | None
    repair_cost_per_node_per_session: float | None
    max_partitions: int
    raw: dict[str, Any] = field(default_factory=dict)


METRIC_FIELDS = (
    "delivery_ratio_pct",
    "per_node_energy_j",
    "per_node_message_overhead",
    "per_node_control_overhead",
    "delay_per_session_ms",
    "link_breaks_per_session",
    "repair_cost_per_node_per_session",
    "max_partitions",
)

# Lower is better for every headline metric except delivery ratio.
HIGHER_IS_BETTER = {"delivery_ratio_pct"}

_RAW_CSV_KEYS = (
    "sent", "delivered", "dropped", "data_tx", "control_tx",
    "rreq_tx", "rrep_tx", "notify_tx", "sleep_request_tx",
    "sleep_grant_tx", "sleep_deny_tx", "sleep_shots", "grants", "denies",
    "link_breaks", "repair_messages", "discoveries", "switches",
    "deaths", "total_energy_j", "total_delay_ms",
    "mobility_hash", "traffic_hash",
)

CSV_COLUMNS = (
    "protocol", "seed", "nodes", "sim_time_s",
) + METRIC_FIELDS + _RAW_CSV_KEYS


def finalize(counters: Mapping[str, Any], *, protocol: str, seed: int,
             node_count: int, sim_time_s: float, session_count: int) -> MetricsReport:
    """Apply the quotient definitions to a finished run's counters.

    Quotients whose denominator is zero (no sessions, nothing sent) are
    reported as absent (None), never as NaN or zero.
    """
    sent = counters["sent"]
    delivered = counters["delivered"]
    delivery = delivered * 100.0 / sent if sent > 0 else None
    per_node_energy = counters["total_energy_j"] / node_count
    messages = counters["data_tx"] + counters["control_tx"]
    per_node_messages = messages / node_count
    per_node_control = counters["control_tx"] / node_count
    if session_count > 0:
        delay = counters["total_delay_ms"] / session_count
        breaks = counters["link_breaks"] / session_count
        repair = counters["repair_messages"] / (session_count * node_count)
    else:
        delay = breaks = repair = None
    return MetricsReport(
        protocol=protocol,
        seed=seed,
        node_count=node_count,
        sim_time_s=sim_time_s,
        delivery_ratio_pct=delivery,
        per_node_energy_j=per_node_energy,
        per_node_message_overhead=per_node_messages,
        per_node_control_overhead=per_node_control,
        delay_per_session_ms=delay,
        link_breaks_per_session=breaks,
        repair_cost_per_node_per_session=repair,
        max_partitions=counters["max_partitions"],
        raw=dict(counters),
    )


def improvement_pct(x: float, y: float) -> float:
    """Unsigned improvement of one value over another: |x - y| * 100 / max."""
    top = max(x, y)
    if top == 0:
        return 0.0
    return abs(x - y) * 100.0 / top


def aggregate(reports: Sequence[MetricsReport]) -> dict[str, Any]:
    """Order statistics (median/mean/min/max) per metric over a set of runs."""
    if not reports:
        raise ValueError("aggregate needs at least one report")
    summary: dict[str, Any] = {"runs": len(reports)}
    for name in METRIC_FIELDS:
        values = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        if not values:
            summary[name] = None
            continue
        summary[name] = {
            "median": statistics.median(values),
            "mean": statistics.fmean(values),
            "min": min(values),
            "max": max(values),
        }
    return summary


def paired_summary(baseline: Sequence[MetricsReport],
                   variant: Sequence[MetricsReport]) -> dict[str, Any]:
    """Per-seed paired deltas between two protocol variants.

    Both report lists must cover exactly the same seeds.  For each metric the
    summary carries the per-pair values, deltas (variant - baseline) and the
    unsigned improvement percentages, plus their medians.
    """
    base_by_seed = {r.seed: r for r in baseline}
    var_by_seed = {r.seed: r for r in variant}
    if set(base_by_seed) != set(var_by_seed):
        raise ValueError("paired mode requires matching seed sets")
    if len(base_by_seed) != len(baseline) or len(var_by_seed) != len(variant):
        raise ValueError("duplicate seeds in paired reports")
    seeds = sorted(base_by_seed)
    out: dict[str, Any] = {"seeds": seeds, "metrics": {}}
    for name in METRIC_FIELDS:
        pairs = []
        for seed in seeds:
            b = getattr(base_by_seed[seed], name)
            v = getattr(var_by_seed[seed], name)
            if b is None or v is None:
                continue
            pairs.append({
                "seed": seed,
                "baseline": b,
                "variant": v,
                "delta": v - b,
                "improvement_pct": improvement_pct(b, v),
            })
        if not pairs:
            out["metrics"][name] = None
            continue
        out["metrics"][name] = {
            "pairs": pairs,
            "median_baseline": statistics.median(p["baseline"] for p in pairs),
            "median_variant": statistics.median(p["variant"] for p in pairs),
            "median_delta": statistics.median(p["delta"] for p in pairs),
            "median_improvement_pct": statistics.median(
                p["improvement_pct"] for p in pairs
            ),
        }
    return out


def report_row(report: MetricsReport) -> list[Any]:
    row: list[Any] = [report.protocol, report.seed, report.node_count, report.sim_time_s]
    for name in METRIC_FIELDS:
        value = getattr(report, name)
        row.append("" if value is None else value)
    for key in _RAW_CSV_KEYS:
        row.append(report.raw.get(key, ""))
    return row


def write_csv(reports: Sequence[MetricsReport], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for report in reports:
            writer.writerow(report_row(report))


def report_to_dict(report: MetricsReport) -> dict[str, Any]:
    out = {
        "protocol": report.protocol,
        "seed": report.seed,
        "nodes": report.node_count,
        "sim_time_s": report.sim_time_s,
        "metrics": {name: getattr(report, name) for name in METRIC_FIELDS},
        "raw": report.raw,
    }
    return out


def write_json(payload: Any, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
