"""Dual-timescale scheduling: per-request routing, congestion-triggered
threshold updates, and periodic prefill/decode role reallocation."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import IO, Any, Iterable

from .cache_pool import MatchInfo
from .exceptions import PrfaasError
from .optimizer import SearchSpace, default_splits, optimize, threshold_crossing
from .throughput import DeploymentConfig
from .workload import LengthDistribution

PD_P = "pd_p"
PRFAAS = "prfaas"
SCARCE = "scarce"
ABUNDANT = "abundant"

SCARCE_UTILIZATION = 0.5
DEFAULT_UTIL_THRESHOLD = 0.85
DEFAULT_REALLOC_PERIOD_S = 300.0


@dataclass(frozen=True)
class RoutingContext:
    l_total: int
    match_pd: MatchInfo
    match_prfaas: MatchInfo
    t: float
    bandwidth_mode: str = ABUNDANT
    kv_bytes_per_block: float = 0.0
    block_size: int = 256

    def __post_init__(self):
        if self.bandwidth_mode not in (SCARCE, ABUNDANT):
            raise ValueError(f"unknown bandwidth mode {self.bandwidth_mode!r}")
        if self.l_pd > self.l_total or self.l_prfaas > self.l_total:
            raise ValueError("matched prefix longer than the request")

    @property
    def l_pd(self) -> int:
        return self.match_pd.usable_len

    @property
    def l_prfaas(self) -> int:
        return self.match_prfaas.usable_len


@dataclass(frozen=True)
class CacheTransfer:
    from_cluster: str
    to_cluster: str
    bytes: float
    tokens: int


@dataclass(frozen=True)
class RoutingDecision:
    target: str
    uncached_len: int
    cache_transfer: CacheTransfer | None = None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def route(ctx: RoutingContext) -> RoutingDecision:
    """Pick the prefill cluster for one request.

    Scarce bandwidth: each cluster's own cache is considered separately and
    cache never moves.  Abundant bandwidth: the longest cache anywhere is
    used, and shipped to the compute cluster if it lives elsewhere.  Ties at
    the threshold stay local.
    """
    if ctx.bandwidth_mode == SCARCE:
        if ctx.l_total - ctx.l_pd <= ctx.t:
            return RoutingDecision(PD_P, ctx.l_total - ctx.l_pd)
        return RoutingDecision(PRFAAS, ctx.l_total - ctx.l_prfaas)

    l_prefix = max(ctx.l_pd, ctx.l_prfaas)
    target = PD_P if ctx.l_total - l_prefix <= ctx.t else PRFAAS
    local = ctx.l_pd if target == PD_P else ctx.l_prfaas
    transfer = None
    if l_prefix > local:
        owner = PRFAAS if target == PD_P else PD_P
        blocks = l_prefix // ctx.block_size if ctx.block_size else 0
        transfer = CacheTransfer(owner, target, blocks * ctx.kv_bytes_per_block, l_prefix)
    return RoutingDecision(target, ctx.l_total - l_prefix, transfer)


def bandwidth_mode(utilization: float, cutoff: float = SCARCE_UTILIZATION) -> str:
    return SCARCE if utilization >= cutoff else ABUNDANT


@dataclass
class CongestionState:
    egress_utilization: float
    queue_depth: int
    util_threshold: float = DEFAULT_UTIL_THRESHOLD
    queue_threshold: int = 8

    @classmethod
    def for_cluster(cls, utilization: float, queue_depth: int, n_instances: int, util_threshold: float = DEFAULT_UTIL_THRESHOLD, queue_factor: float = 2.0):
        return cls(utilization, queue_depth, util_threshold, max(1, math.ceil(queue_factor * n_instances)))

    @property
    def util_triggered(self) -> bool:
        return self.egress_utilization >= self.util_threshold

    @property
    def queue_triggered(self) -> bool:
        return self.queue_depth >= self.queue_threshold

    @property
    def triggered(self) -> bool:
        return self.util_triggered or self.queue_triggered


def short_term_update(
    state: CongestionState | None,
    config: DeploymentConfig,
    dist: LengthDistribution | None = None,
    t_grid: Iterable[float] | None = None,
    force: bool = False,
) -> float:
    """New routing threshold after a congestion trigger.

    Re-runs the threshold sweep at the config's current egress bandwidth and
    returns the producer crossing.  Without a trigger, or when the sweep has
    no crossing, the current threshold is kept.
    """
    if not force and (state is None or not state.triggered):
        return config.threshold
    if dist is not None:
        config = config.with_distribution(dist)
    try:
        t_new = threshold_crossing(config, t_grid)
    except PrfaasError:
        return config.threshold
    return config.threshold if t_new is None else float(t_new)


@dataclass(frozen=True)
class ReallocationPlan:
    old_np: int
    old_nd: int
    new_np: int
    new_nd: int
    new_t: float
    trigger: str

    @property
    def is_noop(self) -> bool:
        return (self.new_np, self.new_nd) == (self.old_np, self.old_nd)

    @property
    def converted(self) -> int:
        return abs(self.new_np - self.old_np)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["is_noop"] = self.is_noop
        return d


def long_term_realloc(
    config: DeploymentConfig,
    observed: LengthDistribution | None = None,
    t_grid: Iterable[float] | None = None,
    periodic: bool = True,
) -> ReallocationPlan:
    """Re-solve the split and threshold for the observed traffic.

    The PD total is held fixed; the plan is the optimizer's argmax on the
    observed length distribution.  ``trigger`` names the side that gains
    nodes, or ``periodic`` when the split is unchanged.
    """
    cfg = config if observed is None else config.with_distribution(observed)
    space = SearchSpace(
        cfg,
        t_grid=None if t_grid is None else list(t_grid),
        splits=default_splits(cfg.pd.total, allow_zero_prefill=cfg.n_prfaas > 0),
    )
    opt = optimize(space)
    old_np, old_nd = config.pd.prefill_instances, config.pd.decode_instances
    if opt.np_star > old_np:
        trigger = "prefill_bound"
    elif opt.np_star < old_np:
        trigger = "decode_bound"
    else:
        trigger = "periodic" if periodic else "none"
    return ReallocationPlan(old_np, old_nd, opt.np_star, opt.nd_star, opt.t_star, trigger)


class DecisionLog:
    """Newline-delimited JSON audit log of scheduler decisions."""

    def __init__(self, stream: IO[str] | None = None):
        self.stream = stream
        self.records: list[dict[str, Any]] = []

    def write(self, kind: str, time: float, **fields) -> None:
        rec = {"kind": kind, "time": time, **fields}
        self.records.append(rec)
        if self.stream is not None:
            self.stream.write(json.dumps(rec, sort_keys=True) + "\n")

    def dumps(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)
