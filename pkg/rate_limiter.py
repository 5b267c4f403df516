#!/usr/bin/env python3
"""
Filename: rate_limiter.py
Description: Token-bucket admission control for the registry service

Each scope (client identity, optionally paired with the requested
capability) gets a bucket that starts full at ``capacity`` tokens and
refills continuously at ``refill_rate`` tokens per second. A request
costs one token; an empty bucket rejects without blocking.
"""

import threading
import time
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

from config import (
    RATE_LIMIT_CAPACITY,
    RATE_LIMIT_IDLE_PRUNE_SECONDS,
    RATE_LIMIT_PER_CAPABILITY,
    RATE_LIMIT_REFILL_RATE,
)
from logging_config import setup_service_logger

logger = setup_service_logger(enable_console=False)


@dataclass(frozen=True)
class RateDecision:
    allowed: bool
    remaining: float
    retry_after: float = 0.0

    def __bool__(self) -> bool:
        return self.allowed


class TokenBucket:
    """
    Non-blocking token bucket.

    :param capacity: burst size in tokens
    :param refill_rate: tokens added per second
    :param clock: monotonic time source, injectable for tests
    """

    def __init__(
        self,
        capacity: int = RATE_LIMIT_CAPACITY,
        refill_rate: float = RATE_LIMIT_REFILL_RATE,
        clock: Callable[[], float] = time.monotonic,
    ):
        if capacity <= 0 or refill_rate <= 0:
            raise ValueError("capacity and refill_rate must be > 0")
        self.capacity = int(capacity)
        self.refill_rate = float(refill_rate)
        self.clock = clock
        self.tokens = float(self.capacity)
        self.last_refill = clock()
        self._lock = threading.Lock()

    def _refill(self, now: float) -> None:
        elapsed = max(0.0, now - self.last_refill)
        self.tokens = min(float(self.capacity), self.tokens + elapsed * self.refill_rate)
        self.last_refill = now

    def level(self) -> float:
        with self._lock:
            self._refill(self.clock())
            return self.tokens

    def try_acquire(self, cost: float = 1.0) -> RateDecision:
        with self._lock:
            self._refill(self.clock())
            if self.tokens >= cost:
                self.tokens -= cost
                return RateDecision(True, self.tokens)
            wait = (cost - self.tokens) / self.refill_rate
            return RateDecision(False, self.tokens, wait)


class RateLimiter:
    """Bucket per scope, created on first use and pruned once idle and full."""

    def __init__(
        self,
        capacity: int = RATE_LIMIT_CAPACITY,
        refill_rate: float = RATE_LIMIT_REFILL_RATE,
        per_capability: bool = RATE_LIMIT_PER_CAPABILITY,
        clock: Callable[[], float] = time.monotonic,
        idle_prune_seconds: float = RATE_LIMIT_IDLE_PRUNE_SECONDS,
    ):
        self.capacity = capacity
        self.refill_rate = refill_rate
        self.per_capability = per_capability
        self.clock = clock
        self.idle_prune_seconds = idle_prune_seconds
        self._buckets: Dict[Tuple[str, str], TokenBucket] = {}
        self._lock = threading.Lock()
        self._last_prune = clock()

    def _scope(self, client: str, capability: Optional[str]) -> Tuple[str, str]:
        return (client, capability or "") if self.per_capability else (client, "")

    def bucket(self, client: str, capability: Optional[str] = None) -> TokenBucket:
        scope = self._scope(client, capability)
        with self._lock:
            self._maybe_prune()
            bucket = self._buckets.get(scope)
            if bucket is None:
                bucket = TokenBucket(self.capacity, self.refill_rate, self.clock)
                self._buckets[scope] = bucket
            return bucket

    def _maybe_prune(self) -> None:
        now = self.clock()
        if now - self._last_prune < self.idle_prune_seconds:
            return
        self._last_prune = now
        # A bucket idle long enough to be full again carries no state
        stale = [
            scope for scope, b in self._buckets.items()
            if now - b.last_refill >= self.idle_prune_seconds and b.level() >= b.capacity
        ]
        for scope in stale:
            del self._buckets[scope]
        if stale:
            logger.debug(f"[RateLimit] Pruned {len(stale)} idle buckets")

    def rate_limit_check(self, client: str, capability: Optional[str] = None) -> RateDecision:
        """Consume one token for ``(client, capability)``; reject when empty."""
        decision = self.bucket(client, capability).try_acquire()
        if not decision:
            logger.warning(
                f"[RateLimit] Rejected {client} ({capability or '-'}); retry in {decision.retry_after:.2f}s"
            )
        return decision

    def __len__(self) -> int:
        return len(self._buckets)
