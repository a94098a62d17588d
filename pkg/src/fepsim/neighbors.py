"""Per-node bookkeeping that feeds the sleep controller.

Each node keeps, per uplink neighbor, how many packets that neighbor handed
over for forwarding, how many of those went onward, how often it has been
asked for sleep, and a sliding window of arrival timestamps for rate
estimation.  Node-wide, it also smooths inter-arrival and inter-service gaps
and runs the battery account.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .slreq import PhRecord


class LedgerFault(Exception):
    """Internal consistency breach in the forwarding counters."""


@dataclass
class PeerStats:
    sent_to_me: int = 0
    forwarded: int = 0
    sleep_requests: int = 0
    arrivals: deque = field(default_factory=deque)


class NeighborLedger:
    """Per-uplink counters and arrival windows for one node."""

    def __init__(self, window_ms: float = 5000.0):
        if window_ms <= 0:
            raise ValueError("rate window must be positive")
        self.window_ms = window_ms
        self.peers: dict[int, PeerStats] = {}

    def _peer(self, neighbor: int) -> PeerStats:
        stats = self.peers.get(neighbor)
        if stats is None:
            stats = PeerStats()
            self.peers[neighbor] = stats
        return stats

    def record_arrival(self, neighbor: int, now_ms: float) -> None:
        stats = self._peer(neighbor)
        stats.sent_to_me += 1
        stats.arrivals.append(now_ms)
        self._prune(stats, now_ms)

    def record_forwarded(self, neighbor: int) -> None:
        stats = self._peer(neighbor)
        if stats.forwarded + 1 > stats.sent_to_me:
            raise LedgerFault(
                f"forward without matching arrival for neighbor {neighbor}"
            )
        stats.forwarded += 1

    def record_sleep_shot(self, neighbor: int) -> None:
        self._peer(neighbor).sleep_requests += 1

    def _prune(self, stats: PeerStats, now_ms: float) -> None:
        # Closed window: an arrival exactly window_ms old still counts.
        cutoff = now_ms - self.window_ms
        arrivals = stats.arrivals
        while arrivals and arrivals[0] < cutoff:
            arrivals.popleft()

    def rate(self, neighbor: int, now_ms: float) -> float:
        """Arrival rate from one neighbor over the window, packets/second."""
        stats = self.peers.get(neighbor)
        if stats is None:
            return 0.0
        self._prune(stats, now_ms)
        return len(stats.arrivals) / (self.window_ms / 1000.0)

    def uplink_set(self, now_ms: float) -> list[int]:
        """Neighbors with at least one arrival inside the window, sorted."""
        uplinks = []
        for neighbor, stats in self.peers.items():
            self._prune(stats, now_ms)
            if stats.arrivals:
                uplinks.append(neighbor)
        uplinks.sort()
        return uplinks

    def ph_record(self, neighbor: int) -> PhRecord:
        stats = self._peer(neighbor)
        return PhRecord(stats.sent_to_me, stats.forwarded, stats.sleep_requests)


class ServiceTracker:
    """Exponentially weighted service time (ts) and inter-arrival gap (tr).

    ``ts_ms`` smooths the time a packet spends getting served, queue wait
    plus its transmission slot; ``tr_ms`` smooths the gaps between arrivals.
    ts exceeding tr means the backlog is growing, which is exactly the
    overload test ts/tr > 1.  The first sample of each kind seeds its mean
    directly; later samples blend with weight ``alpha``.  tr stays 0 until
    two arrivals occurred.
    """

    def __init__(self, alpha: float = 0.2):
        if not 0.0 < alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")
        self.alpha = alpha
        self.ts_ms = 0.0
        self.tr_ms = 0.0
        self._last_arrival: float | None = None

    def on_arrival(self, now_ms: float) -> None:
        if self._last_arrival is not None:
            gap = now_ms - self._last_arrival
            if self.tr_ms == 0.0:
                self.tr_ms = gap
            else:
                self.tr_ms = (1.0 - self.alpha) * self.tr_ms + self.alpha * gap
        self._last_arrival = now_ms

    def on_service(self, sojourn_ms: float) -> None:
        if self.ts_ms == 0.0:
            self.ts_ms = sojourn_ms
        else:
            self.ts_ms = (1.0 - self.alpha) * self.ts_ms + self.alpha * sojourn_ms


@dataclass
class EnergyAccount:
    """Battery with saturating consumption; the node dies at empty."""

    capacity_j: float
    consumed_j: float = 0.0

    def __post_init__(self) -> None:
        if self.capacity_j <= 0:
            raise ValueError("capacity must be positive")
        if not 0.0 <= self.consumed_j <= self.capacity_j:
            raise ValueError("consumed must lie within [0, capacity]")

    @property
    def residual_j(self) -> float:
        return self.capacity_j - self.consumed_j

    @property
    def residual_ratio(self) -> float:
        return self.residual_j / self.capacity_j

    @property
    def dead(self) -> bool:
        return self.consumed_j >= self.capacity_j

    def debit(self, amount_j: float) -> bool:
        """Consume energy, saturating at capacity.

        Returns True exactly when this debit empties the battery.
        """
        if amount_j < 0:
            raise ValueError("cannot debit a negative amount")
        if self.dead:
            return False
        self.consumed_j = min(self.capacity_j, self.consumed_j + amount_j)
        return self.dead
