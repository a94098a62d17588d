"""Scenario configuration: defaults, validation and the key-value file format.

Scenario files are flat INI-style sections; every knob has a default so a
file only needs the keys it overrides.  The same dataclass is built
programmatically by tests and the CLI.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from typing import Sequence

from .slreq import FormulaVariant

PROTOCOLS = ("baseline", "fep")


class ConfigError(Exception):
    """Rejected scenario configuration; message names the offending key."""


@dataclass(frozen=True)
class SessionSpec:
    src: int
    dst: int
    rate_pps: float
    total: int
    start_ms: float


@dataclass
class ScenarioConfig:
    # arena and motion
    arena_w_m: float = 600.0
    arena_h_m: float = 600.0
    node_count: int = 60
    speed_min_mps: float = 5.0
    speed_max_mps: float = 15.0
    range_min_m: float = 100.0
    range_max_m: float = 100.0
    positions: list[tuple[float, float]] | None = None
    sim_time_s: float = 200.0
    tick_ms: float = 100.0
    partition_sample_s: float = 10.0
    seed: int = 0
    protocol: str = "fep"

    # traffic (generated unless explicit_sessions is given)
    sessions: int = 20
    packets_per_session: int = 200
    session_rate_pps: float = 4.0
    session_start_min_ms: float = 5000.0
    session_start_max_ms: float = 50000.0
    explicit_sessions: list[SessionSpec] | None = None

    # energy
    capacity_j: float = 25.0
    data_tx_mj: float = 5.0
    data_rx_mj: float = 3.0
    idle_mj_per_tick: float = 0.1

    # radio and queueing
    service_rate_pps: float = 200.0
    propagation_ms: float = 1.0

    # routing
    max_hops: int = 16
    reply_window_ms: float = 30.0
    discovery_timeout_ms: float = 300.0
    discovery_retries: int = 3
    edge_blacklist_ms: float = 3000.0
    max_packet_returns: int = 8

    # sleep overlay
    nap_limit_ms: float = 50.0
    sleep_budget: int = 10
    sleep_cooldown_ms: float | None = None  # defaults to nap_limit_ms
    sleep_check_period_ms: float = 1000.0

    # estimators
    rate_window_ms: float = 5000.0
    ewma_alpha: float = 0.2
    session_view_window_ms: float = 2000.0

    # wire sizes, bytes
    rreq_base_b: int = 64
    rreq_per_hop_b: int = 8
    rrep_base_b: int = 64
    rrep_per_hop_b: int = 8
    notify_b: int = 64
    sleep_msg_b: int = 32
    data_b: int = 512
    fep_meta_b: int = 24

    # formula variants
    variant: FormulaVariant = field(default_factory=FormulaVariant)

    # output
    collect_log: bool = False

    @property
    def cooldown_ms(self) -> float:
        return self.nap_limit_ms if self.sleep_cooldown_ms is None else self.sleep_cooldown_ms

    def validate(self) -> None:
        def positive(name: str, value) -> None:
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value!r}")

        positive("arena_w_m", self.arena_w_m)
        positive("arena_h_m", self.arena_h_m)
        if self.node_count < 2:
            raise ConfigError(f"node_count must be at least 2, got {self.node_count}")
        if self.speed_min_mps < 0 or self.speed_max_mps < self.speed_min_mps:
            raise ConfigError("speed range must satisfy 0 <= min <= max")
        positive("range_min_m", self.range_min_m)
        if self.range_max_m < self.range_min_m:
            raise ConfigError("range_max_m must be >= range_min_m")
        positive("sim_time_s", self.sim_time_s)
        positive("tick_ms", self.tick_ms)
        positive("partition_sample_s", self.partition_sample_s)
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        if self.positions is not None and len(self.positions) != self.node_count:
            raise ConfigError(
                f"positions lists {len(self.positions)} nodes, node_count is {self.node_count}"
            )
        if self.positions is not None:
            for i, (x, y) in enumerate(self.positions):
                if not (0 <= x <= self.arena_w_m and 0 <= y <= self.arena_h_m):
                    raise ConfigError(f"position of node {i} lies outside the arena")
        if self.sessions < 0:
            raise ConfigError("sessions must be nonnegative")
        if self.explicit_sessions is None and self.sessions > 0:
            positive("packets_per_session", self.packets_per_session)
            positive("session_rate_pps", self.session_rate_pps)
            if not 0 <= self.session_start_min_ms <= self.session_start_max_ms:
                raise ConfigError("session start window must satisfy 0 <= min <= max")
        if self.explicit_sessions is not None:
            for i, s in enumerate(self.explicit_sessions):
                if not (0 <= s.src < self.node_count and 0 <= s.dst < self.node_count):
                    raise ConfigError(f"session {i}: node ids out of range")
                if s.src == s.dst:
                    raise ConfigError(f"session {i}: src equals dst")
                if s.total <= 0 or s.rate_pps <= 0 or s.start_ms < 0:
                    raise ConfigError(f"session {i}: bad rate/total/start")
        positive("capacity_j", self.capacity_j)
        for name in ("data_tx_mj", "data_rx_mj"):
            positive(name, getattr(self, name))
        if self.idle_mj_per_tick < 0:
            raise ConfigError("idle_mj_per_tick must be nonnegative")
        positive("service_rate_pps", self.service_rate_pps)
        if self.propagation_ms < 0:
            raise ConfigError("propagation_ms must be nonnegative")
        positive("max_hops", self.max_hops)
        positive("reply_window_ms", self.reply_window_ms)
        positive("discovery_timeout_ms", self.discovery_timeout_ms)
        if self.discovery_retries < 1:
            raise ConfigError("discovery_retries must be at least 1")
        if self.edge_blacklist_ms < 0:
            raise ConfigError("edge_blacklist_ms must be nonnegative")
        if self.max_packet_returns < 1:
            raise ConfigError("max_packet_returns must be at least 1")
        positive("nap_limit_ms", self.nap_limit_ms)
        if self.sleep_budget < 0:
            raise ConfigError("sleep_budget must be nonnegative")
        if self.sleep_cooldown_ms is not None and self.sleep_cooldown_ms < 0:
            raise ConfigError("sleep_cooldown_ms must be nonnegative")
        positive("sleep_check_period_ms", self.sleep_check_period_ms)
        positive("rate_window_ms", self.rate_window_ms)
        if not 0.0 < self.ewma_alpha <= 1.0:
            raise ConfigError("ewma_alpha must be in (0, 1]")
        positive("session_view_window_ms", self.session_view_window_ms)
        for name in ("rreq_base_b", "rreq_per_hop_b", "rrep_base_b", "rrep_per_hop_b",
                     "notify_b", "sleep_msg_b", "data_b", "fep_meta_b"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        positive("data_b", self.data_b)
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")

    def with_overrides(self, **kwargs) -> "ScenarioConfig":
        return replace(self, **kwargs)


# file-key -> (attribute, parser); grouped per section.
def _floatpair(raw: str) -> tuple[float, float]:
    parts = raw.split()
    if len(parts) != 2:
        raise ValueError("expected two numbers")
    return float(parts[0]), float(parts[1])


def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


_SCHEMA: dict[tuple[str, str], tuple[str, object]] = {
    ("scenario", "nodes"): ("node_count", int),
    ("scenario", "arena_m"): ("_arena", _floatpair),
    ("scenario", "speed_mps"): ("_speed", _floatpair),
    ("scenario", "range_m"): ("_range", _floatpair),
    ("scenario", "sim_time_s"): ("sim_time_s", float),
    ("scenario", "tick_ms"): ("tick_ms", float),
    ("scenario", "partition_sample_s"): ("partition_sample_s", float),
    ("scenario", "seed"): ("seed", int),
    ("scenario", "protocol"): ("protocol", str),
    ("scenario", "collect_log"): ("collect_log", _bool),
    ("traffic", "sessions"): ("sessions", int),
    ("traffic", "packets_per_session"): ("packets_per_session", int),
    ("traffic", "rate_pps"): ("session_rate_pps", float),
    ("traffic", "start_window_ms"): ("_start_window", _floatpair),
    ("energy", "capacity_j"): ("capacity_j", float),
    ("energy", "data_tx_mj"): ("data_tx_mj", float),
    ("energy", "data_rx_mj"): ("data_rx_mj", float),
    ("energy", "idle_mj_per_tick"): ("idle_mj_per_tick", float),
    ("radio", "service_rate_pps"): ("service_rate_pps", float),
    ("radio", "propagation_ms"): ("propagation_ms", float),
    ("routing", "max_hops"): ("max_hops", int),
    ("routing", "reply_window_ms"): ("reply_window_ms", float),
    ("routing", "discovery_timeout_ms"): ("discovery_timeout_ms", float),
    ("routing", "discovery_retries"): ("discovery_retries", int),
    ("routing", "edge_blacklist_ms"): ("edge_blacklist_ms", float),
    ("routing", "max_packet_returns"): ("max_packet_returns", int),
    ("sleep", "nap_limit_ms"): ("nap_limit_ms", float),
    ("sleep", "budget"): ("sleep_budget", int),
    ("sleep", "cooldown_ms"): ("sleep_cooldown_ms", float),
    ("sleep", "check_period_ms"): ("sleep_check_period_ms", float),
    ("estimators", "rate_window_ms"): ("rate_window_ms", float),
    ("estimators", "ewma_alpha"): ("ewma_alpha", float),
    ("estimators", "session_view_window_ms"): ("session_view_window_ms", float),
    ("variants", "ph"): ("_variant_ph", str),
    ("variants", "ccs"): ("_variant_ccs", str),
    ("variants", "slpr_orientation"): ("_variant_slpr", str),
    ("sizes", "rreq_b"): ("rreq_base_b", int),
    ("sizes", "rreq_per_hop_b"): ("rreq_per_hop_b", int),
    ("sizes", "rrep_b"): ("rrep_base_b", int),
    ("sizes", "rrep_per_hop_b"): ("rrep_per_hop_b", int),
    ("sizes", "notify_b"): ("notify_b", int),
    ("sizes", "sleep_msg_b"): ("sleep_msg_b", int),
    ("sizes", "data_b"): ("data_b", int),
    ("sizes", "fep_meta_b"): ("fep_meta_b", int),
}


def _key_line(text: str, key: str) -> int | None:
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith(key) and stripped[len(key):].lstrip()[:1] in ("=", ":"):
            return lineno
    return None


def load_config(path: str) -> ScenarioConfig:
    """Parse a scenario file into a validated ScenarioConfig.

    Raises ConfigError with a line-numbered diagnostic for anything the
    parser or the validator rejects.
    """
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text, source=path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    cfg = ScenarioConfig()
    variant_kwargs: dict[str, str] = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            if section == "positions" or (section == "traffic" and key == "explicit"):
                continue  # handled separately below
            spec = _SCHEMA.get((section, key))
            if spec is None:
                line = _key_line(text, key)
                where = f"{path}:{line}" if line else path
                raise ConfigError(f"{where}: unknown key [{section}] {key}")
            attr, parse = spec
            try:
                value = parse(raw)
            except ValueError as exc:
                line = _key_line(text, key)
                where = f"{path}:{line}" if line else path
                raise ConfigError(f"{where}: bad value for [{section}] {key}: {exc}") from exc
            if attr == "_arena":
                cfg.arena_w_m, cfg.arena_h_m = value
            elif attr == "_speed":
                cfg.speed_min_mps, cfg.speed_max_mps = value
            elif attr == "_range":
                cfg.range_min_m, cfg.range_max_m = value
            elif attr == "_start_window":
                cfg.session_start_min_ms, cfg.session_start_max_ms = value
            elif attr == "_variant_ph":
                variant_kwargs["ph"] = value
            elif attr == "_variant_ccs":
                variant_kwargs["ccs"] = value
            elif attr == "_variant_slpr":
                variant_kwargs["slpr_orientation"] = value
            else:
                setattr(cfg, attr, value)

    if variant_kwargs:
        try:
            cfg.variant = FormulaVariant(
                ph=variant_kwargs.get("ph", cfg.variant.ph),
                ccs=variant_kwargs.get("ccs", cfg.variant.ccs),
                slpr_orientation=variant_kwargs.get(
                    "slpr_orientation", cfg.variant.slpr_orientation
                ),
            )
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc

    if parser.has_section("positions"):
        positions: dict[int, tuple[float, float]] = {}
        for key, raw in parser.items("positions"):
            line = _key_line(text, key)
            where = f"{path}:{line}" if line else path
            try:
                node = int(key)
                x, y = _floatpair(raw)
            except ValueError as exc:
                raise ConfigError(f"{where}: bad position entry: {exc}") from exc
            positions[node] = (x, y)
        expected = set(range(cfg.node_count))
        if set(positions) != expected:
            raise ConfigError(
                f"{path}: [positions] must list every node 0..{cfg.node_count - 1} exactly once"
            )
        cfg.positions = [positions[i] for i in range(cfg.node_count)]

    if parser.has_option("traffic", "explicit"):
        raw = parser.get("traffic", "explicit")
        specs: list[SessionSpec] = []
        for piece in raw.splitlines():
            piece = piece.strip()
            if not piece:
                continue
            parts = piece.split()
            if len(parts) != 5:
                raise ConfigError(
                    f"{path}: explicit session {piece!r} needs: src dst rate_pps total start_ms"
                )
            try:
                specs.append(
                    SessionSpec(int(parts[0]), int(parts[1]), float(parts[2]),
                                int(parts[3]), float(parts[4]))
                )
            except ValueError as exc:
                raise ConfigError(f"{path}: bad explicit session {piece!r}: {exc}") from exc
        cfg.explicit_sessions = specs
        cfg.sessions = len(specs)

    try:
        cfg.validate()
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return cfg
