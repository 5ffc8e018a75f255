"""Request length distributions and the routing-split statistics derived from them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy.special import ndtr, ndtri

from .exceptions import ConfigError, DegenerateDistributionError


class TruncatedLogNormal:
    """Log-normal length distribution conditioned on ``lower <= L <= upper``."""

    kind = "truncated_lognormal"

    def __init__(self, mu: float, sigma: float, lower: float, upper: float):
        if not sigma > 0:
            raise DegenerateDistributionError(f"sigma must be > 0, got {sigma}")
        if not 0 < lower < upper:
            raise DegenerateDistributionError(f"need 0 < lower < upper, got [{lower}, {upper}]")
        self.mu = float(mu)
        self.sigma = float(sigma)
        self.lower = float(lower)
        self.upper = float(upper)
        self._a = ndtr(self._z(self.lower))
        self._b = ndtr(self._z(self.upper))
        self._mass = self._b - self._a
        if self._mass <= 0:
            raise DegenerateDistributionError("no probability mass inside the truncation bounds")

    def _z(self, x, shift=0.0):
        return (np.log(x) - self.mu - shift) / self.sigma

    def _clip(self, x):
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def cdf(self, x):
        return (ndtr(self._z(self._clip(x))) - self._a) / self._mass

    def partial_mean(self, lo, hi) -> float:
        """E[L * 1{lo < L <= hi}]."""
        s2 = self.sigma**2
        lo, hi = self._clip(lo), self._clip(hi)
        scale = math.exp(self.mu + s2 / 2)
        return float(scale * (ndtr(self._z(hi, s2)) - ndtr(self._z(lo, s2))) / self._mass)

    def mean(self) -> float:
        return self.partial_mean(self.lower, self.upper)

    def quantile(self, q):
        q = np.asarray(q, dtype=float)
        x = np.exp(self.mu + self.sigma * ndtri(self._a + q * self._mass))
        x = np.clip(x, self.lower, self.upper)
        return float(x) if x.ndim == 0 else x

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        # rejection sampling keeps the draw identical to conditioning
        out = np.empty(0)
        while out.size < n:
            need = n - out.size
            draw = rng.lognormal(self.mu, self.sigma, size=int(need / self._mass) + 16)
            out = np.concatenate([out, draw[(draw >= self.lower) & (draw <= self.upper)]])
        return out[:n]

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "mu": self.mu, "sigma": self.sigma, "lower": self.lower, "upper": self.upper}

    def __eq__(self, other):
        return isinstance(other, TruncatedLogNormal) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return f"TruncatedLogNormal(mu={self.mu}, sigma={self.sigma}, lower={self.lower:g}, upper={self.upper:g})"


class EmpiricalLengths:
    """Length distribution backed by an observed trace of uncached lengths."""

    kind = "empirical"

    def __init__(self, samples, lower: float | None = None, upper: float | None = None, source: str | None = None):
        x = np.sort(np.asarray(samples, dtype=float).ravel())
        if x.size == 0:
            raise DegenerateDistributionError("empirical distribution needs at least one sample")
        self.lower = float(x[0] if lower is None else lower)
        self.upper = float(x[-1] if upper is None else upper)
        if not self.lower < self.upper:
            raise DegenerateDistributionError("need lower < upper")
        if x[0] < self.lower or x[-1] > self.upper:
            raise DegenerateDistributionError("samples fall outside [lower, upper]")
        self.samples = x
        self.source = source
        self._csum = np.concatenate([[0.0], np.cumsum(x)])

    @classmethod
    def from_file(cls, path: str | Path, lower=None, upper=None) -> "EmpiricalLengths":
        lines = Path(path).read_text().split()
        return cls([int(v) for v in lines], lower, upper, source=str(path))

    def _count_le(self, x):
        return np.searchsorted(self.samples, x, side="right")

    def cdf(self, x):
        return self._count_le(np.asarray(x, dtype=float)) / self.samples.size

    def partial_mean(self, lo, hi) -> float:
        i, j = self._count_le(lo), self._count_le(hi)
        return float((self._csum[j] - self._csum[i]) / self.samples.size)

    def mean(self) -> float:
        return float(self.samples.mean())

    def quantile(self, q):
        # nearest-rank
        q = np.asarray(q, dtype=float)
        n = self.samples.size
        rank = np.clip(np.ceil(q * n).astype(int), 1, n)
        x = self.samples[rank - 1]
        return float(x) if x.ndim == 0 else x

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.choice(self.samples, size=n, replace=True)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"kind": self.kind, "lower": self.lower, "upper": self.upper}
        if self.source:
            d["trace"] = self.source
        else:
            d["samples"] = [int(v) if float(v).is_integer() else float(v) for v in self.samples]
        return d

    def __eq__(self, other):
        return (
            isinstance(other, EmpiricalLengths)
            and (self.lower, self.upper) == (other.lower, other.upper)
            and np.array_equal(self.samples, other.samples)
        )

    def __repr__(self):
        return f"EmpiricalLengths(n={self.samples.size}, lower={self.lower:g}, upper={self.upper:g})"


LengthDistribution = TruncatedLogNormal | EmpiricalLengths


def distribution_from_dict(d: dict[str, Any], base_dir: Path | None = None) -> LengthDistribution:
    kind = d.get("kind", "truncated_lognormal")
    if kind == "truncated_lognormal":
        return TruncatedLogNormal(d["mu"], d["sigma"], d["lower"], d["upper"])
    if kind == "empirical":
        if "trace" in d:
            path = Path(d["trace"])
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            dist = EmpiricalLengths.from_file(path, d.get("lower"), d.get("upper"))
            dist.source = d["trace"]
            return dist
        return EmpiricalLengths(d["samples"], d.get("lower"), d.get("upper"))
    raise ConfigError(f"unknown length distribution kind {kind!r}")


@dataclass(frozen=True)
class SplitStats:
    """Routing split at threshold ``t``; undefined conditional means are NaN."""

    t: float
    p: float
    l_long: float
    l_short: float

    @property
    def degenerate(self) -> bool:
        return self.p <= 0.0 or self.p >= 1.0


def mean_length(dist: LengthDistribution) -> float:
    return dist.mean()


def split_stats(dist: LengthDistribution, t: float) -> SplitStats:
    """p = P(L > t) with the conditional means on either side of ``t``.

    Thresholds outside the support are allowed and give a degenerate split.
    """
    below = float(dist.cdf(t))
    p = min(max(1.0 - below, 0.0), 1.0)
    long_mass = dist.partial_mean(t, np.inf)
    short_mass = dist.partial_mean(-np.inf, t)
    l_long = long_mass / p if p > 0 else math.nan
    l_short = short_mass / (1.0 - p) if p < 1 else math.nan
    return SplitStats(float(t), p, l_long, l_short)


def quantile(dist: LengthDistribution, q):
    qa = np.asarray(q, dtype=float)
    if np.any((qa <= 0) | (qa >= 1)):
        raise ValueError("quantile level must lie in (0, 1)")
    return dist.quantile(q)


@dataclass
class WorkloadSpec:
    length_dist: LengthDistribution
    output_len: int = 1024
    arrival_rate: float = 1.0
    process: str = "poisson"
    seed: int = 0

    def __post_init__(self):
        if self.arrival_rate < 0:
            raise ConfigError("arrival rate must be >= 0")
        if self.output_len < 1:
            raise ConfigError("output_len must be >= 1")
        if self.process not in ("poisson", "uniform"):
            raise ConfigError(f"unknown arrival process {self.process!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "length_dist": self.length_dist.to_dict(),
            "output_len": self.output_len,
            "arrival": {"rate": self.arrival_rate, "process": self.process},
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any], base_dir: Path | None = None) -> "WorkloadSpec":
        arrival = d.get("arrival", {})
        rate = arrival.get("rate")
        return cls(
            length_dist=distribution_from_dict(d["length_dist"], base_dir),
            output_len=int(d.get("output_len", 1024)),
            arrival_rate=1.0 if rate is None else float(rate),
            process=arrival.get("process", "poisson"),
            seed=int(d.get("seed", 0)),
        )


@dataclass
class ArrivalRecord:
    id: int
    arrival_time: float
    l_total: int
    output_len: int
    prefix_pd: int = 0
    prefix_prfaas: int = 0
    extra: dict = field(default_factory=dict)


def sample_trace(spec: WorkloadSpec, n: int, rng: np.random.Generator | None = None) -> list[ArrivalRecord]:
    """Draw ``n`` arrivals; deterministic for a given ``spec.seed``."""
    if n <= 0:
        return []
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    lengths = np.rint(spec.length_dist.sample(rng, n)).astype(int)
    if spec.arrival_rate == 0:
        raise ConfigError("cannot place arrivals at rate 0")
    if spec.process == "poisson":
        times = np.cumsum(rng.exponential(1.0 / spec.arrival_rate, size=n))
    else:
        times = np.arange(1, n + 1) / spec.arrival_rate
    return [
        ArrivalRecord(i, float(times[i]), int(lengths[i]), spec.output_len)
        for i in range(n)
    ]
