"""Fluid egress link with max-min fair sharing and layer-wise pacing.

A flow that has sent everything its prefill has produced so far is capped at
the production rate ``size / T_prefill``; a flow that is behind competes for
the fair share with no cap.  Rates are piecewise constant between epochs, and
an epoch ends when a flow finishes or a lagging flow catches up with its
producer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

EPS = 1e-9


@dataclass
class Flow:
    key: object
    size_bits: float
    start: float
    prefill_s: float  # 0 means the data is available immediately
    sent: float = 0.0
    rate: float = 0.0

    @property
    def prefill_end(self) -> float:
        return self.start + self.prefill_s

    def eligible(self, now: float) -> float:
        if self.prefill_s <= 0 or now >= self.prefill_end:
            return self.size_bits
        return self.size_bits * max(now - self.start, 0.0) / self.prefill_s

    @property
    def production_rate(self) -> float:
        return self.size_bits / self.prefill_s if self.prefill_s > 0 else math.inf

    def remaining(self) -> float:
        return self.size_bits - self.sent


@dataclass
class Epoch:
    start: float
    end: float
    total_rate_bps: float


def max_min_fair(capacity: float, caps: list[float]) -> list[float]:
    """Water-filling allocation of ``capacity`` under per-flow ``caps``."""
    n = len(caps)
    rates = [0.0] * n
    left = capacity
    order = sorted(range(n), key=lambda i: caps[i])
    for k, i in enumerate(order):
        share = left / (n - k)
        r = min(caps[i], share)
        rates[i] = r
        left -= r
    return rates


class EgressLink:
    def __init__(self, capacity_gbps: float, record_epochs: bool = False):
        if capacity_gbps < 0:
            raise ValueError("link capacity must be >= 0")
        self.capacity_gbps = float(capacity_gbps)
        self.capacity_bps = self.capacity_gbps * 1e9
        self.flows: dict[object, Flow] = {}
        self.now = 0.0
        self.bits_sent = 0.0
        self.max_rate_bps = 0.0
        self.record_epochs = record_epochs
        self.epochs: list[Epoch] = []

    # -- rate computation -------------------------------------------------
    def _caught_up(self, f: Flow) -> bool:
        return f.sent >= f.eligible(self.now) - EPS * max(f.size_bits, 1.0)

    def _reallocate(self) -> None:
        flows = list(self.flows.values())
        caps = []
        for f in flows:
            if f.prefill_s > 0 and self.now < f.prefill_end and self._caught_up(f):
                caps.append(f.production_rate)
            else:
                caps.append(math.inf)
        for f, r in zip(flows, max_min_fair(self.capacity_bps, caps)):
            f.rate = r

    def total_rate(self) -> float:
        return sum(f.rate for f in self.flows.values())

    def set_capacity(self, gbps: float) -> None:
        self.capacity_gbps = float(gbps)
        self.capacity_bps = self.capacity_gbps * 1e9
        self._reallocate()

    # -- time evolution ---------------------------------------------------
    def advance(self, now: float) -> list[object]:
        """Integrate flows up to ``now``; return keys of flows that finished."""
        if now < self.now - 1e-12:
            raise ValueError("link time must be monotone")
        dt = max(now - self.now, 0.0)
        if dt > 0:
            total = self.total_rate()
            if self.record_epochs and total > 0:
                self.epochs.append(Epoch(self.now, now, total))
            self.max_rate_bps = max(self.max_rate_bps, total)
            for f in self.flows.values():
                moved = min(f.rate * dt, f.remaining())
                f.sent += moved
                self.bits_sent += moved
        self.now = max(now, self.now)
        done = []
        for key, f in list(self.flows.items()):
            if f.remaining() <= EPS * max(f.size_bits, 1.0):
                self.bits_sent += f.remaining()
                f.sent = f.size_bits
                done.append(key)
                del self.flows[key]
            else:
                # snap a flow that has just caught up onto its producer curve
                elig = f.eligible(self.now)
                if f.sent > elig:
                    self.bits_sent -= f.sent - elig
                    f.sent = elig
        self._reallocate()
        return done

    def add_flow(self, key, size_bits: float, prefill_s: float = 0.0) -> list[object]:
        """Start a flow at the link clock; returns flows finished on the spot (zero-size)."""
        if key in self.flows:
            raise KeyError(f"flow {key!r} already active")
        self.flows[key] = Flow(key, float(size_bits), self.now, float(prefill_s))
        return self.advance(self.now)

    def next_event_time(self) -> float:
        """Earliest completion or catch-up under the current rates."""
        best = math.inf
        for f in self.flows.values():
            if f.rate > 0:
                best = min(best, self.now + f.remaining() / f.rate)
            if f.prefill_s > 0 and self.now < f.prefill_end:
                if not self._caught_up(f):
                    closing = f.rate - f.production_rate
                    if closing > 0:
                        gap = f.eligible(self.now) - f.sent
                        best = min(best, self.now + gap / closing)
        return best

    # -- observation --------------------------------------------------------
    def transfer_progress(self, now: float | None = None) -> dict[object, float]:
        """Bits delivered per active flow at ``now`` (default: the link clock)."""
        if now is not None and now > self.now:
            dt = now - self.now
            return {k: min(f.sent + f.rate * dt, f.size_bits) for k, f in self.flows.items()}
        return {k: f.sent for k, f in self.flows.items()}

    def utilization(self) -> float:
        if self.capacity_bps <= 0:
            return 0.0
        return self.total_rate() / self.capacity_bps


def transfer_progress(link: EgressLink, now: float) -> dict[object, float]:
    return link.transfer_progress(now)


@dataclass
class UtilizationWindow:
    """Sliding-window egress utilization from cumulative bit samples."""

    window_s: float
    samples: list[tuple[float, float]] = field(default_factory=list)

    def record(self, now: float, cumulative_bits: float) -> None:
        self.samples.append((now, cumulative_bits))
        cutoff = now - self.window_s
        # keep one sample at or before the cutoff as the window's left edge
        while len(self.samples) > 2 and self.samples[1][0] <= cutoff:
            self.samples.pop(0)

    def utilization(self, capacity_bps: float) -> float:
        if len(self.samples) < 2 or capacity_bps <= 0:
            return 0.0
        (t0, b0), (t1, b1) = self.samples[0], self.samples[-1]
        if t1 <= t0:
            return 0.0
        return (b1 - b0) / (capacity_bps * (t1 - t0))
