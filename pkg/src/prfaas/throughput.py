"""Steady-state throughput model of the PrfaaS / PD-P -> PD-D pipeline.

Requests longer than the routing threshold ``t`` are prefilled on the remote
PrfaaS cluster and their KVCache shipped over the egress link; the rest are
prefilled locally on PD-P.  Both producers feed the PD-D decode pool.  Each
stage is summarised by a representative length (the conditional mean on its
side of ``t``), and the sustainable request rate is the slowest stage after
accounting for the fraction of traffic it sees.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from .exceptions import ConfigError, DegenerateSplitError, InfeasibleConfigError
from .profiles import (
    HardwareModelProfile,
    instances_from_gpus,
    interpolate_kv_size,
    interpolate_prefill_latency,
    mib_to_gbit,
)
from .workload import EmpiricalLengths, LengthDistribution, SplitStats, split_stats

TTFT_QUADRATURE_POINTS = 4096


@dataclass
class PrfaasCluster:
    profile: HardwareModelProfile
    instances: int | None = None
    gpus: int | None = None
    egress_gbps: float = 100.0

    def __post_init__(self):
        if self.instances is None and self.gpus is None:
            raise ConfigError("PrfaaS cluster needs either instances or gpus")
        if (self.instances or 0) < 0 or (self.gpus or 0) < 0:
            raise ConfigError("instance counts must be non-negative")
        if self.egress_gbps < 0:
            raise ConfigError("egress bandwidth must be non-negative")

    @property
    def n_instances(self) -> int:
        if self.instances is not None:
            return int(self.instances)
        return instances_from_gpus(self.gpus, self.profile.parallelism)


@dataclass
class PDCluster:
    profile: HardwareModelProfile
    prefill_instances: int
    decode_instances: int

    def __post_init__(self):
        if self.prefill_instances < 0 or self.decode_instances < 0:
            raise ConfigError("instance counts must be non-negative")

    @property
    def total(self) -> int:
        return self.prefill_instances + self.decode_instances


@dataclass
class DeploymentConfig:
    """One PrfaaS cluster (optional) paired with one local PD cluster."""

    pd: PDCluster
    length_dist: LengthDistribution
    threshold: float
    prfaas: PrfaasCluster | None = None
    output_len: int = 1024
    name: str = "deployment"

    @property
    def n_prfaas(self) -> int:
        return self.prfaas.n_instances if self.prfaas is not None else 0

    @property
    def egress_gbps(self) -> float:
        return self.prfaas.egress_gbps if self.prfaas is not None else 0.0

    def with_split(self, n_p: int, n_d: int) -> "DeploymentConfig":
        pd = dataclasses.replace(self.pd, prefill_instances=n_p, decode_instances=n_d)
        return dataclasses.replace(self, pd=pd)

    def with_threshold(self, t: float) -> "DeploymentConfig":
        return dataclasses.replace(self, threshold=float(t))

    def with_egress(self, gbps: float) -> "DeploymentConfig":
        if self.prfaas is None:
            return self
        return dataclasses.replace(self, prfaas=dataclasses.replace(self.prfaas, egress_gbps=gbps))

    def with_distribution(self, dist: LengthDistribution) -> "DeploymentConfig":
        return dataclasses.replace(self, length_dist=dist)


@dataclass
class ThroughputReport:
    theta_prfaas: float
    theta_pdp: float
    theta_pdd: float
    lambda_max: float
    bottleneck: str
    split: SplitStats
    egress_load: float
    n_prfaas: int = 0
    n_p: int = 0
    n_d: int = 0
    egress_gbps: float = 0.0
    ttft_mean: float = math.nan
    ttft_p90: float = math.nan
    prfaas_compute: float = math.inf
    prfaas_bandwidth: float = math.inf

    @property
    def prfaas_side(self) -> float:
        """Theta_prfaas / p, the system rate the PrfaaS path can absorb."""
        return _per_share(self.theta_prfaas, self.split.p)

    @property
    def pdp_side(self) -> float:
        return _per_share(self.theta_pdp, 1.0 - self.split.p)

    @property
    def producer_capacity(self) -> float:
        return min(self.prfaas_side, self.pdp_side)

    def to_dict(self) -> dict[str, Any]:
        d = {
            "threshold": self.split.t,
            "p": self.split.p,
            "l_long": _json_num(self.split.l_long),
            "l_short": _json_num(self.split.l_short),
            "n_prfaas": self.n_prfaas,
            "n_p": self.n_p,
            "n_d": self.n_d,
            "egress_gbps": self.egress_gbps,
            "theta_prfaas": _json_num(self.theta_prfaas),
            "theta_pdp": _json_num(self.theta_pdp),
            "theta_pdd": _json_num(self.theta_pdd),
            "lambda_max": self.lambda_max,
            "bottleneck": self.bottleneck,
            "egress_load": self.egress_load,
            "ttft_mean": _json_num(self.ttft_mean),
            "ttft_p90": _json_num(self.ttft_p90),
        }
        return d

    CSV_HEADER = (
        "threshold,p,n_prfaas,n_p,n_d,theta_prfaas,theta_pdp,theta_pdd,"
        "lambda_max,bottleneck,egress_load,ttft_mean,ttft_p90"
    )

    def csv_row(self) -> str:
        d = self.to_dict()
        keys = self.CSV_HEADER.split(",")
        return ",".join("" if d[k] is None else str(d[k]) for k in keys)


def _json_num(x: float):
    if x is None or (isinstance(x, float) and (math.isnan(x) or math.isinf(x))):
        return None
    return x


def _per_share(theta: float, share: float) -> float:
    # a stage that receives no traffic imposes no limit
    if share <= 0:
        return math.inf
    return theta / share


def _prfaas_terms(config: DeploymentConfig, split: SplitStats) -> tuple[float, float]:
    if split.p <= 0:
        return math.inf, math.inf
    n = config.n_prfaas
    if config.prfaas is None or n == 0:
        return 0.0, 0.0
    prof = config.prfaas.profile
    compute = n / interpolate_prefill_latency(prof, split.l_long, extrapolate=True)
    kv_gbit = mib_to_gbit(interpolate_kv_size(prof, split.l_long, extrapolate=True))
    bandwidth = config.prfaas.egress_gbps / kv_gbit
    return compute, bandwidth


def theta_prfaas(config: DeploymentConfig, split: SplitStats | None = None) -> float:
    """PrfaaS throughput: the slower of prefill compute and egress transfer.

    Returns ``inf`` when no requests are routed to PrfaaS.
    """
    split = split_stats(config.length_dist, config.threshold) if split is None else split
    return min(_prfaas_terms(config, split))


def theta_pdp(config: DeploymentConfig, split: SplitStats | None = None) -> float:
    split = split_stats(config.length_dist, config.threshold) if split is None else split
    if split.p >= 1:
        return math.inf
    n_p = config.pd.prefill_instances
    if n_p == 0:
        return 0.0
    return n_p / interpolate_prefill_latency(config.pd.profile, split.l_short, extrapolate=True)


def theta_pdd(config: DeploymentConfig) -> float:
    rate = config.pd.profile.decode_token_rate
    if rate is None:
        raise ConfigError(f"PD profile {config.pd.profile.name!r} has no decode_token_rate")
    return config.pd.decode_instances * rate / config.output_len


def evaluate(config: DeploymentConfig, split: SplitStats | None = None, with_ttft: bool = True) -> ThroughputReport:
    """Stage throughputs, the end-to-end limit, and egress load for ``config``."""
    if config.n_prfaas == 0 and config.pd.prefill_instances == 0:
        raise InfeasibleConfigError("no prefill capacity: both PrfaaS and PD-P are empty")
    split = split_stats(config.length_dist, config.threshold) if split is None else split
    compute, bandwidth = _prfaas_terms(config, split)
    th_prfaas = min(compute, bandwidth)
    th_pdp = theta_pdp(config, split)
    th_pdd = theta_pdd(config)

    candidates = [
        (_per_share(th_prfaas, split.p), "prfaas"),
        (_per_share(th_pdp, 1.0 - split.p), "pd_prefill"),
        (th_pdd, "pd_decode"),
    ]
    lam, stage = min(candidates, key=lambda c: c[0])
    if stage == "prfaas":
        stage = "prfaas_bandwidth" if bandwidth < compute else "prfaas_compute"

    egress = 0.0
    if split.p > 0 and config.prfaas is not None and config.n_prfaas > 0:
        kv_gbit = mib_to_gbit(interpolate_kv_size(config.prfaas.profile, split.l_long, extrapolate=True))
        egress = lam * split.p * kv_gbit
        # guard against rounding past the link capacity when bandwidth binds
        egress = min(egress, config.prfaas.egress_gbps)

    report = ThroughputReport(
        theta_prfaas=th_prfaas,
        theta_pdp=th_pdp,
        theta_pdd=th_pdd,
        lambda_max=lam,
        bottleneck=stage,
        split=split,
        egress_load=egress,
        n_prfaas=config.n_prfaas,
        n_p=config.pd.prefill_instances,
        n_d=config.pd.decode_instances,
        egress_gbps=config.egress_gbps,
        prfaas_compute=compute,
        prfaas_bandwidth=bandwidth,
    )
    if with_ttft:
        stats = ttft_stats(config)
        report.ttft_mean, report.ttft_p90 = stats.mean, stats.p90
    return report


def lambda_max(config: DeploymentConfig) -> ThroughputReport:
    return evaluate(config)


@dataclass(frozen=True)
class TtftStats:
    mean: float
    p90: float


def _quadrature_lengths(dist: LengthDistribution, m: int) -> np.ndarray:
    if isinstance(dist, EmpiricalLengths):
        return dist.samples
    cache = dist.__dict__.setdefault("_quad_cache", {})
    if m not in cache:
        u = (np.arange(m) + 0.5) / m
        cache[m] = np.asarray(dist.quantile(u), dtype=float)
    return cache[m]


def request_ttft(config: DeploymentConfig, lengths) -> np.ndarray:
    """Queue-free TTFT of each request routed by length alone."""
    lengths = np.asarray(lengths, dtype=float)
    out = np.empty_like(lengths)
    local = lengths <= config.threshold
    if np.any(local):
        out[local] = interpolate_prefill_latency(config.pd.profile, lengths[local], extrapolate=True)
    remote = ~local
    if np.any(remote):
        if config.prfaas is None or config.n_prfaas == 0:
            out[remote] = math.inf
        else:
            prof = config.prfaas.profile
            compute = interpolate_prefill_latency(prof, lengths[remote], extrapolate=True)
            kv_gbit = mib_to_gbit(interpolate_kv_size(prof, lengths[remote], extrapolate=True))
            link = kv_gbit / config.prfaas.egress_gbps if config.prfaas.egress_gbps > 0 else math.inf
            # layer-wise pipelining overlaps transfer with compute
            out[remote] = np.maximum(compute, link)
    return out


def ttft_stats(config: DeploymentConfig, n_points: int = TTFT_QUADRATURE_POINTS) -> TtftStats:
    """Mean and P90 TTFT over the full length distribution, without queueing."""
    if n_points < 512:
        raise ValueError("use at least 512 quadrature points")
    lengths = _quadrature_lengths(config.length_dist, n_points)
    ttft = request_ttft(config, lengths)
    return TtftStats(float(np.mean(ttft)), float(np.quantile(ttft, 0.9)))


@dataclass(frozen=True)
class BalanceResiduals:
    producer_balance: float
    pipeline_balance: float


def balance_residuals(config: DeploymentConfig) -> BalanceResiduals:
    """Distance from the two optimality conditions, in requests/second.

    ``producer_balance`` compares the system rate each producer path can
    absorb; ``pipeline_balance`` compares total producer output to decode.
    """
    split = split_stats(config.length_dist, config.threshold)
    if split.degenerate:
        raise DegenerateSplitError(f"threshold {config.threshold} routes everything one way (p={split.p})")
    th_prfaas = theta_prfaas(config, split)
    th_pdp = theta_pdp(config, split)
    return BalanceResiduals(
        producer_balance=th_prfaas / split.p - th_pdp / (1.0 - split.p),
        pipeline_balance=(th_prfaas + th_pdp) - theta_pdd(config),
    )
