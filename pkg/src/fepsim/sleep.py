"""Sleep-overlay state: the per-lifetime nap budget and per-edge suspensions.

A node spends one budget installment per request shot no matter how many
uplinks the shot addresses.  Granting uplinks suspend only their own edge to
the sleeper; the sleeper keeps forwarding for everyone else.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass
class SleepBudget:
    """Installment counter for sleep-request shots, capped per lifetime."""

    cap: int
    used: int = 0
    last_shot_ms: float = float("-inf")

    def can_shoot(self, now_ms: float, cooldown_ms: float) -> bool:
        return self.used < self.cap and now_ms - self.last_shot_ms >= cooldown_ms

    def record_shot(self, now_ms: float) -> None:
        if self.used >= self.cap:
            raise RuntimeError("sleep budget exhausted")
        self.used += 1
        self.last_shot_ms = now_ms


@dataclass
class EdgeSleep:
    """An active suspension of the (granter -> sleeper) edge."""

    granter: int
    sleeper: int
    start_ms: float
    until_ms: float
    chain: str


class EdgeSleepBoard:
    """Granter-side registry of edges it has put to sleep."""

    def __init__(self) -> None:
        self.sleeps: dict[int, EdgeSleep] = {}

    def grant(self, granter: int, sleeper: int, now_ms: float,
              duration_ms: float, chain: str) -> EdgeSleep:
        sleep = EdgeSleep(granter, sleeper, now_ms, now_ms + duration_ms, chain)
        self.sleeps[sleeper] = sleep
        return sleep

    def active(self, sleeper: int, now_ms: float) -> EdgeSleep | None:
        sleep = self.sleeps.get(sleeper)
        if sleep is not None and now_ms < sleep.until_ms:
            return sleep
        return None

    def expire(self, sleeper: int, until_ms: float) -> bool:
        """Drop the record matching this expiry; stale timers are ignored."""
        sleep = self.sleeps.get(sleeper)
        if sleep is not None and sleep.until_ms == until_ms:
            del self.sleeps[sleeper]
            return True
        return False
