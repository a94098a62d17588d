"""Source-routed multipath state: ranked route triples and zero-cost switching.

Discoveries flood route requests; the destination collects candidate paths
for a short window and replies once with up to three ranked router sequences.
The source caches them and, when the active route hits a broken link or a
sleep-suspended edge, activates the next usable alternative without a new
discovery.  Suspended edges cover both sleep grants (until the nap ends) and
recently broken links (a short quarantine against switch thrash).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .slreq import FuzzyGrade, fuzzify_unit


def route_grade(hop_count: int, max_hops: int) -> FuzzyGrade:
    """Performance grade of a route: short routes grade high."""
    if hop_count <= 0 or max_hops <= 0:
        raise ValueError("hop counts must be positive")
    return fuzzify_unit(max(0.0, 1.0 - hop_count / max_hops))


@dataclass(frozen=True)
class Route:
    hops: tuple[int, ...]
    grade: FuzzyGrade

    @property
    def hop_count(self) -> int:
        return len(self.hops) - 1

    @property
    def edges(self) -> tuple[tuple[int, int], ...]:
        return tuple(zip(self.hops, self.hops[1:]))

    @classmethod
    def from_hops(cls, hops: Sequence[int], max_hops: int) -> "Route":
        hops = tuple(hops)
        if len(hops) < 2:
            raise ValueError("a route needs at least two nodes")
        if len(set(hops)) != len(hops):
            raise ValueError("route must not repeat nodes")
        return cls(hops, route_grade(len(hops) - 1, max_hops))


def rank_candidate_paths(
    paths: Iterable[Sequence[int]], limit: int = 3
) -> list[tuple[int, ...]]:
    """Order collected candidate paths: best first by hop count (ties broken
    by the node-id sequence), then prefer paths node-disjoint from the best
    when filling the remaining slots."""
    unique = sorted({tuple(p) for p in paths}, key=lambda p: (len(p), p))
    if not unique:
        return []
    best = unique[0]
    best_mid = set(best[1:-1])
    disjoint = [p for p in unique[1:] if not (set(p[1:-1]) & best_mid)]
    overlapping = [p for p in unique[1:] if set(p[1:-1]) & best_mid]
    chosen = [best]
    for path in disjoint + overlapping:
        if len(chosen) >= limit:
            break
        chosen.append(path)
    return chosen


@dataclass
class CacheEntry:
    routes: list[Route]
    active: int = 0

    def active_route(self) -> Route:
        return self.routes[self.active]


class RouteCache:
    """Per-source cache of ranked routes plus edge suspensions and observed
    deaths used to judge which alternatives are still usable."""

    def __init__(self) -> None:
        self.entries: dict[int, CacheEntry] = {}
        self.suspended: dict[tuple[int, int], float] = {}
        self.edge_fails: dict[tuple[int, int], int] = {}
        self.dead: set[int] = set()

    def install(self, destination: int, routes: Sequence[Route]) -> None:
        if not routes:
            raise ValueError("cannot install an empty route set")
        self.entries[destination] = CacheEntry(list(routes))

    def drop(self, destination: int) -> None:
        self.entries.pop(destination, None)

    def suspend_edge(self, edge: tuple[int, int], until_ms: float) -> None:
        current = self.suspended.get(edge, float("-inf"))
        if until_ms > current:
            self.suspended[edge] = until_ms

    def quarantine_edge(self, edge: tuple[int, int], now_ms: float,
                        base_ms: float, cap_ms: float = 16000.0) -> None:
        """Blacklist a freshly broken edge, doubling the hold per repeat
        failure so a dead edge is not re-probed every few packets."""
        fails = self.edge_fails.get(edge, 0) + 1
        self.edge_fails[edge] = fails
        hold = min(base_ms * 2 ** (fails - 1), cap_ms)
        self.suspend_edge(edge, now_ms + hold)

    def mark_dead(self, node: int) -> None:
        self.dead.add(node)

    def _prune(self, now_ms: float) -> None:
        expired = [e for e, until in self.suspended.items() if until <= now_ms]
        for e in expired:
            del self.suspended[e]

    def usable(self, route: Route, now_ms: float) -> bool:
        self._prune(now_ms)
        if any(h in self.dead for h in route.hops):
            return False
        return not any(e in self.suspended for e in route.edges)

    def active_route(self, destination: int, now_ms: float) -> Route | None:
        """The currently active route, or None if it is missing or unusable."""
        entry = self.entries.get(destination)
        if entry is None:
            return None
        route = entry.active_route()
        return route if self.usable(route, now_ms) else None

    def switch(self, destination: int, now_ms: float) -> Route | None:
        """Activate the best usable cached route, emitting no discovery.

        Returns the newly active route, or None when every alternative is
        dead or suspended (the caller then falls back to a discovery).
        """
        entry = self.entries.get(destination)
        if entry is None:
            return None
        for index, route in enumerate(entry.routes):
            if self.usable(route, now_ms):
                entry.active = index
                return route
        return None
