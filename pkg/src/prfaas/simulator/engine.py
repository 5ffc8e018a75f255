"""Discrete-event simulation of the PrfaaS / PD-P -> PD-D pipeline."""

from __future__ import annotations

import csv
import heapq
import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ..cache_pool import MatchInfo
from ..exceptions import ConfigError
from ..profiles import interpolate_kv_size, interpolate_prefill_latency, mib_to_gbit
from ..scheduler import (
    ABUNDANT,
    PD_P,
    PRFAAS,
    CongestionState,
    DecisionLog,
    RoutingContext,
    bandwidth_mode,
    long_term_realloc,
    route,
    short_term_update,
)
from ..throughput import DeploymentConfig
from ..workload import EmpiricalLengths, WorkloadSpec
from .link import EgressLink, UtilizationWindow

TIMESERIES_HEADER = ("time", "queue_prfaas", "queue_pdp", "queue_pdd", "egress_util")

ARRIVAL, PREFILL_DONE, LINK, DECODE_DONE, MONITOR, REALLOC = range(6)


@dataclass
class SimOptions:
    warmup_frac: float = 0.1
    monitor_interval_s: float = 1.0
    util_window_s: float = 10.0
    adaptive_threshold: bool = False
    util_threshold: float = 0.85
    queue_factor: float = 2.0
    update_cooldown_s: float = 30.0
    realloc: bool = False
    realloc_period_s: float = 300.0
    bandwidth_mode: str | None = None  # None: derive from measured utilization
    scarce_utilization: float = 0.5
    block_size: int = 256
    record_requests: bool = True
    record_epochs: bool = False


@dataclass
class Request:
    id: int
    arrival_time: float
    l_total: int
    output_len: int
    prefix_pd: int = 0
    prefix_prfaas: int = 0
    target: str | None = None
    uncached_len: int | None = None
    routed: float | None = None
    prefill_start: float | None = None
    prefill_end: float | None = None
    transfer_end: float | None = None
    decode_start: float | None = None
    decode_end: float | None = None

    @property
    def ready_time(self) -> float | None:
        if self.prefill_end is None:
            return None
        if self.target == PRFAAS:
            if self.transfer_end is None:
                return None
            return max(self.prefill_end, self.transfer_end)
        return self.prefill_end

    @property
    def ttft(self) -> float | None:
        r = self.ready_time
        return None if r is None else r - self.arrival_time


@dataclass
class SimMetrics:
    duration: float
    warmup: float
    offered_rate: float
    arrivals: int = 0
    completed: int = 0
    achieved_throughput: float = 0.0
    prefill_throughput: float = 0.0
    ttft_mean: float = math.nan
    ttft_p50: float = math.nan
    ttft_p90: float = math.nan
    ttft_p99: float = math.nan
    egress_mean_gbps: float = 0.0
    egress_mean_util: float = 0.0
    egress_peak_util: float = 0.0
    max_link_rate_gbps: float = 0.0
    link_capacity_gbps: float = 0.0
    congestion_events: int = 0
    threshold_final: float = math.nan
    queue_slopes: dict = field(default_factory=dict)
    timeseries: list = field(default_factory=list)
    threshold_updates: list = field(default_factory=list)
    reallocations: list = field(default_factory=list)
    conservation_ok: bool = True
    requests: list = field(default_factory=list)

    def to_dict(self, include_timeseries: bool = False) -> dict[str, Any]:
        d = {
            "duration": self.duration,
            "warmup": self.warmup,
            "offered_rate": self.offered_rate,
            "arrivals": self.arrivals,
            "completed": self.completed,
            "achieved_throughput": self.achieved_throughput,
            "prefill_throughput": self.prefill_throughput,
            "ttft": {"mean": self.ttft_mean, "p50": self.ttft_p50, "p90": self.ttft_p90, "p99": self.ttft_p99},
            "egress": {
                "mean_gbps": self.egress_mean_gbps,
                "mean_util": self.egress_mean_util,
                "peak_util": self.egress_peak_util,
                "max_rate_gbps": self.max_link_rate_gbps,
                "capacity_gbps": self.link_capacity_gbps,
            },
            "congestion_events": self.congestion_events,
            "threshold_final": self.threshold_final,
            "queue_slopes": self.queue_slopes,
            "threshold_updates": self.threshold_updates,
            "reallocations": self.reallocations,
            "conservation_ok": self.conservation_ok,
        }
        if include_timeseries:
            d["timeseries"] = self.timeseries
        return _clean(d)

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def write_timeseries(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TIMESERIES_HEADER)
            for row in self.timeseries:
                w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])


def _clean(x):
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, float) and (math.isnan(x) or math.isinf(x)):
        return None
    return x


class _PrefillPool:
    def __init__(self, name: str, n: int, profile):
        self.name = name
        self.n = n
        self.profile = profile
        self.busy = 0
        self.queue: deque[Request] = deque()


class Simulation:
    """One run; use :func:`run` unless stepping manually."""

    def __init__(
        self,
        config: DeploymentConfig,
        workload: WorkloadSpec,
        duration: float,
        seed: int = 0,
        options: SimOptions | None = None,
        decision_log: DecisionLog | None = None,
    ):
        self.options = opt = options or SimOptions()
        if duration < 0:
            raise ConfigError("duration must be >= 0")
        prof = config.pd.profile
        if prof.decode_token_rate is None or prof.max_batch_size is None:
            raise ConfigError(f"PD profile {prof.name!r} needs decode_token_rate and max_batch_size")
        if config.n_prfaas == 0 and config.pd.prefill_instances == 0:
            raise ConfigError("no prefill capacity")
        if config.pd.decode_instances == 0:
            raise ConfigError("no decode capacity")
        if workload.arrival_rate <= 0 and duration > 0:
            raise ConfigError("arrival rate must be > 0")
        self.config = config
        self.workload = workload
        self.duration = float(duration)
        self.warmup = opt.warmup_frac * self.duration
        self.rng = np.random.default_rng(seed)
        self.log = decision_log or DecisionLog()

        self.t = float(config.threshold)
        self.prfaas = _PrefillPool(PRFAAS, config.n_prfaas, config.prfaas.profile if config.prfaas else None)
        self.pdp = _PrefillPool(PD_P, config.pd.prefill_instances, prof)
        self.n_d = config.pd.decode_instances
        self.bs_max = int(prof.max_batch_size)
        self.per_request_rate = prof.decode_token_rate / self.bs_max
        self.decoding = 0
        self.decode_queue: deque[Request] = deque()

        self.link = EgressLink(config.egress_gbps, record_epochs=opt.record_epochs)
        self.window = UtilizationWindow(opt.util_window_s)
        self.window.record(0.0, 0.0)
        self._link_version = 0
        self._update_cache: dict = {}
        self._next_update = 0.0

        self.heap: list = []
        self._seq = 0
        self.now = 0.0
        self.requests: dict[int, Request] = {}
        self._arrival_buf: list = []
        self._next_id = 0
        self._last_arrival = 0.0
        self._recent_lengths: list[int] = []

        self.n_arrived = 0
        self.n_completed = 0
        self.n_waiting_transfer = 0
        self.conservation_ok = True
        self.timeseries: list[tuple] = []
        self._cum_bits: list[float] = []
        self._util_samples: list[tuple[float, float]] = []
        self.threshold_updates: list[dict] = []
        self.reallocations: list[dict] = []
        self.congestion_events = 0

    # -- event plumbing ---------------------------------------------------
    def _push(self, time: float, kind: int, payload=None) -> None:
        self._seq += 1
        heapq.heappush(self.heap, (time, self._seq, kind, payload))

    def _draw_arrivals(self, n: int = 4096) -> None:
        gaps = self.rng.exponential(1.0 / self.workload.arrival_rate, size=n)
        if self.workload.process == "uniform":
            gaps = np.full(n, 1.0 / self.workload.arrival_rate)
        lengths = np.rint(self.workload.length_dist.sample(self.rng, n)).astype(int)
        times = self._last_arrival + np.cumsum(gaps)
        self._last_arrival = float(times[-1])
        self._arrival_buf.extend(zip(times.tolist(), lengths.tolist()))
        self._arrival_buf.reverse()  # pop() from the end yields the earliest

    def _schedule_next_arrival(self) -> None:
        if not self._arrival_buf:
            self._draw_arrivals()
        t, length = self._arrival_buf.pop()
        if t <= self.duration:
            self._push(t, ARRIVAL, max(int(length), 1))

    # -- link ---------------------------------------------------------------
    def _link_sync(self) -> None:
        for key in self.link.advance(self.now):
            self._flow_done(key)

    def _link_reschedule(self) -> None:
        self._link_version += 1
        t = self.link.next_event_time()
        if math.isfinite(t):
            self._push(max(t, self.now), LINK, self._link_version)

    def _flow_done(self, key) -> None:
        kind, rid = key
        if kind != "kv":
            return
        req = self.requests[rid]
        req.transfer_end = self.now
        if req.prefill_end is not None:
            self.n_waiting_transfer -= 1
            self._ready(req)

    # -- routing and prefill -------------------------------------------------
    def _current_config(self) -> DeploymentConfig:
        cfg = self.config.with_split(self.pdp.n, self.n_d).with_threshold(self.t)
        return cfg.with_egress(self.link.capacity_gbps)

    def _on_arrival(self, l_total: int) -> None:
        rid = self._next_id
        self._next_id += 1
        req = Request(rid, self.now, l_total, self.workload.output_len)
        self.requests[rid] = req
        self.n_arrived += 1
        self._recent_lengths.append(l_total)
        self._schedule_next_arrival()

        opt = self.options
        if opt.bandwidth_mode is not None:
            mode = opt.bandwidth_mode
        elif self.prfaas.n > 0:
            mode = bandwidth_mode(self.window.utilization(self.link.capacity_bps), opt.scarce_utilization)
        else:
            mode = ABUNDANT
        ctx = RoutingContext(
            l_total,
            MatchInfo("pd", req.prefix_pd, True),
            MatchInfo("prfaas", req.prefix_prfaas, True),
            self.t,
            mode,
            block_size=opt.block_size,
        )
        dec = route(ctx)
        if dec.target == PRFAAS and self.prfaas.n == 0:
            dec = type(dec)(PD_P, l_total - req.prefix_pd)
        req.target, req.uncached_len, req.routed = dec.target, dec.uncached_len, self.now
        if dec.cache_transfer is not None and dec.cache_transfer.tokens > 0 and self.prfaas.n > 0:
            bits = mib_to_gbit(interpolate_kv_size(self.prfaas.profile, dec.cache_transfer.tokens, extrapolate=True)) * 1e9
            self._link_sync()
            for key in self.link.add_flow(("cache", rid), bits):
                self._flow_done(key)
            self._link_reschedule()
        pool = self.prfaas if dec.target == PRFAAS else self.pdp
        pool.queue.append(req)
        self._dispatch(pool)

    def _dispatch(self, pool: _PrefillPool) -> None:
        while pool.queue and pool.busy < pool.n:
            req = pool.queue.popleft()
            pool.busy += 1
            req.prefill_start = self.now
            if req.uncached_len <= 0:
                service = 0.0
            else:
                service = max(float(interpolate_prefill_latency(pool.profile, req.uncached_len, extrapolate=True)), 0.0)
            if pool is self.prfaas:
                bits = mib_to_gbit(interpolate_kv_size(pool.profile, max(req.uncached_len, 1), extrapolate=True)) * 1e9
                self._link_sync()
                for key in self.link.add_flow(("kv", req.id), bits, service):
                    self._flow_done(key)
                self._link_reschedule()
            self._push(self.now + service, PREFILL_DONE, (pool.name, req.id))

    def _on_prefill_done(self, pool_name: str, rid: int) -> None:
        pool = self.prfaas if pool_name == PRFAAS else self.pdp
        pool.busy -= 1
        req = self.requests[rid]
        req.prefill_end = self.now
        if req.target == PRFAAS and req.transfer_end is None:
            self.n_waiting_transfer += 1
        else:
            self._ready(req)
        self._dispatch(pool)

    # -- decode -------------------------------------------------------------
    def _ready(self, req: Request) -> None:
        self.decode_queue.append(req)
        self._dispatch_decode()

    def _dispatch_decode(self) -> None:
        while self.decode_queue and self.decoding < self.n_d * self.bs_max:
            req = self.decode_queue.popleft()
            self.decoding += 1
            req.decode_start = self.now
            self._push(self.now + req.output_len / self.per_request_rate, DECODE_DONE, req.id)

    def _on_decode_done(self, rid: int) -> None:
        req = self.requests[rid]
        req.decode_end = self.now
        self.decoding -= 1
        self.n_completed += 1
        self._dispatch_decode()

    # -- monitoring and control -------------------------------------------------
    def _on_monitor(self) -> None:
        self._link_sync()
        self._link_reschedule()
        self.window.record(self.now, self.link.bits_sent)
        util = self.window.utilization(self.link.capacity_bps)
        self.timeseries.append((self.now, len(self.prfaas.queue), len(self.pdp.queue), len(self.decode_queue), util))
        self._cum_bits.append(self.link.bits_sent)
        self._util_samples.append((self.now, util))
        queued = len(self.prfaas.queue) + len(self.pdp.queue) + len(self.decode_queue)
        in_flight = self.prfaas.busy + self.pdp.busy + self.n_waiting_transfer + self.decoding
        if self.n_arrived != self.n_completed + queued + in_flight:
            self.conservation_ok = False

        opt = self.options
        if opt.adaptive_threshold and self.prfaas.n > 0 and self.now >= self._next_update:
            state = CongestionState.for_cluster(util, len(self.prfaas.queue), self.prfaas.n, opt.util_threshold, opt.queue_factor)
            if state.triggered:
                self.congestion_events += 1
                cfg = self._current_config()
                key = (cfg.pd.prefill_instances, cfg.pd.decode_instances, cfg.egress_gbps)
                if key not in self._update_cache:
                    self._update_cache[key] = short_term_update(state, cfg)
                t_new = self._update_cache[key]
                rec = {
                    "time": self.now,
                    "old_t": self.t,
                    "new_t": t_new,
                    "utilization": util,
                    "queue_depth": state.queue_depth,
                    "trigger": "utilization" if state.util_triggered else "queue",
                }
                self.threshold_updates.append(rec)
                self.log.write("threshold_update", **rec)
                self.t = t_new
                self._next_update = self.now + opt.update_cooldown_s
        t_next = self.now + opt.monitor_interval_s
        if t_next <= self.duration + 1e-9:
            self._push(t_next, MONITOR)

    def _on_realloc(self) -> None:
        lengths = self._recent_lengths
        self._recent_lengths = []
        observed = None
        if len(lengths) >= 100 and len(set(lengths)) > 1:
            observed = EmpiricalLengths(lengths, self.config.length_dist.lower, self.config.length_dist.upper)
        plan = long_term_realloc(self._current_config(), observed)
        rec = {"time": self.now, **plan.to_dict()}
        self.reallocations.append(rec)
        self.log.write("reallocation", **rec)
        if not plan.is_noop:
            self.pdp.n = plan.new_np
            self.n_d = plan.new_nd
        if self.prfaas.n > 0:
            self.t = float(plan.new_t)
        self._dispatch(self.pdp)
        self._dispatch_decode()
        t_next = self.now + self.options.realloc_period_s
        if t_next <= self.duration:
            self._push(t_next, REALLOC)

    # -- main loop --------------------------------------------------------------
    def run(self) -> SimMetrics:
        if self.duration > 0:
            self._schedule_next_arrival()
            self._push(self.options.monitor_interval_s, MONITOR)
            if self.options.realloc:
                self._push(self.options.realloc_period_s, REALLOC)
        while self.heap and self.heap[0][0] <= self.duration:
            time, _, kind, payload = heapq.heappop(self.heap)
            self.now = time
            if kind == ARRIVAL:
                self._on_arrival(payload)
            elif kind == PREFILL_DONE:
                self._on_prefill_done(*payload)
            elif kind == LINK:
                if payload == self._link_version:
                    self._link_sync()
                    self._link_reschedule()
            elif kind == DECODE_DONE:
                self._on_decode_done(payload)
            elif kind == MONITOR:
                self._on_monitor()
            elif kind == REALLOC:
                self._on_realloc()
        self.now = self.duration
        self._link_sync()
        return self._metrics()

    def _metrics(self) -> SimMetrics:
        m = SimMetrics(self.duration, self.warmup, self.workload.arrival_rate, link_capacity_gbps=self.link.capacity_gbps)
        m.threshold_final = self.t
        m.congestion_events = self.congestion_events
        m.threshold_updates = self.threshold_updates
        m.reallocations = self.reallocations
        m.timeseries = self.timeseries
        m.conservation_ok = self.conservation_ok
        m.max_link_rate_gbps = self.link.max_rate_bps / 1e9
        if self.options.record_requests:
            m.requests = list(self.requests.values())
        span = self.duration - self.warmup
        if span <= 0:
            return m
        lo = self.warmup
        reqs = self.requests.values()
        m.arrivals = sum(1 for r in reqs if r.arrival_time >= lo)
        m.completed = sum(1 for r in reqs if r.decode_end is not None and r.decode_end >= lo)
        m.achieved_throughput = m.completed / span
        m.prefill_throughput = sum(1 for r in reqs if r.ready_time is not None and r.ready_time >= lo) / span
        ttft = np.array([r.ttft for r in reqs if r.arrival_time >= lo and r.ttft is not None])
        if ttft.size:
            m.ttft_mean = float(ttft.mean())
            m.ttft_p50, m.ttft_p90, m.ttft_p99 = (float(v) for v in np.quantile(ttft, [0.5, 0.9, 0.99]))

        times = np.array([row[0] for row in self.timeseries])
        post = times >= lo
        if post.any():
            bits = np.array(self._cum_bits)
            i0 = int(np.argmax(post))
            t0, b0 = times[i0], bits[i0]
            if self.duration > t0:
                m.egress_mean_gbps = float((self.link.bits_sent - b0) / (self.duration - t0) / 1e9)
            if self.link.capacity_gbps > 0:
                m.egress_mean_util = m.egress_mean_gbps / self.link.capacity_gbps
            m.egress_peak_util = float(max(u for t, u in self._util_samples if t >= lo))
            if post.sum() >= 2:
                ts = np.array(self.timeseries)[post]
                slopes = {}
                for j, name in enumerate(TIMESERIES_HEADER[1:4], start=1):
                    slopes[name] = float(np.polyfit(ts[:, 0], ts[:, j], 1)[0])
                slopes["queue_prefill_total"] = slopes["queue_prfaas"] + slopes["queue_pdp"]
                m.queue_slopes = slopes
        return m


def run(
    config: DeploymentConfig,
    workload: WorkloadSpec,
    duration: float,
    seed: int = 0,
    options: SimOptions | None = None,
    decision_log: DecisionLog | None = None,
) -> SimMetrics:
    """Simulate ``duration`` seconds; deterministic for a given ``seed``."""
    return Simulation(config, workload, duration, seed, options, decision_log).run()


def congestion_signal(link: EgressLink, window: UtilizationWindow, queue_depth: int = 0, n_instances: int = 1, util_threshold: float = 0.85) -> CongestionState:
    """Sliding-window utilization plus PrfaaS queue depth as a scheduler input."""
    if window.window_s <= 0:
        raise ValueError("window must be > 0")
    return CongestionState.for_cluster(window.utilization(link.capacity_bps), queue_depth, n_instances, util_threshold)
