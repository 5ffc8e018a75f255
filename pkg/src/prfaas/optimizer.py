"""Grid search over the routing threshold and the PD prefill/decode split."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import InfeasibleSpaceError, PrfaasError
from .throughput import DeploymentConfig, ThroughputReport, evaluate
from .workload import LengthDistribution, SplitStats, split_stats

DEFAULT_T_POINTS = 200
REL_TIE = 1e-12

THRESHOLD_SWEEP_HEADER = ("t", "p", "theta_prfaas_over_p", "theta_pdp_over_1mp", "theta_pdd", "lambda_max")
ALLOCATION_SWEEP_HEADER = ("np", "nd", "theta_producer", "theta_pdd", "lambda_max")


def default_t_grid(dist: LengthDistribution, n_points: int = DEFAULT_T_POINTS) -> np.ndarray:
    """Log-spaced thresholds across the support plus the 1..99th percentiles."""
    logs = np.geomspace(dist.lower, dist.upper, n_points)
    pct = np.asarray(dist.quantile(np.arange(1, 100) / 100.0), dtype=float)
    return np.unique(np.round(np.concatenate([logs, pct]), 6))


def default_splits(total: int, allow_zero_prefill: bool = True) -> list[tuple[int, int]]:
    lo = 0 if allow_zero_prefill else 1
    return [(total - nd, nd) for nd in range(1, total + 1) if total - nd >= lo]


@dataclass
class SearchSpace:
    """Template deployment plus the grid of thresholds and integer splits.

    ``splits`` defaults to every (N_p, N_d) with the template's PD total;
    ``t_grid`` defaults to :func:`default_t_grid`.  Without a PrfaaS cluster
    the threshold is irrelevant and collapses to the distribution's upper
    bound (everything stays local).
    """

    template: DeploymentConfig
    t_grid: Sequence[float] | None = None
    splits: Sequence[tuple[int, int]] | None = None
    refine: bool = True

    def __post_init__(self):
        dist = self.template.length_dist
        if self.template.n_prfaas == 0:
            self.t_grid = [float(dist.upper)]
        elif self.t_grid is None:
            self.t_grid = default_t_grid(dist)
        self.t_grid = [float(t) for t in self.t_grid]
        if self.splits is None:
            self.splits = default_splits(self.template.pd.total, allow_zero_prefill=self.template.n_prfaas > 0)
        self.splits = [(int(a), int(b)) for a, b in self.splits]
        if not self.t_grid or not self.splits:
            raise InfeasibleSpaceError("search space is empty")

    @property
    def threshold_used(self) -> bool:
        return self.template.n_prfaas > 0


@dataclass
class Optimum:
    t_star: float
    np_star: int
    nd_star: int
    report: ThroughputReport
    threshold_used: bool = True
    frontier: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "t_star": self.t_star if self.threshold_used else None,
            "np_star": self.np_star,
            "nd_star": self.nd_star,
            "lambda_max": self.report.lambda_max,
            "report": self.report.to_dict(),
        }


def _better(cand: tuple[float, int, float], best: tuple[float, int, float] | None) -> bool:
    """Order on (lambda, n_d, t): higher lambda, then more decode, then lower t."""
    if best is None:
        return True
    lam, nd, t = cand
    blam, bnd, bt = best
    tol = REL_TIE * max(abs(lam), abs(blam), 1.0)
    if lam > blam + tol:
        return True
    if lam < blam - tol:
        return False
    if nd != bnd:
        return nd > bnd
    return t < bt


def _producer_gap(config: DeploymentConfig, split: SplitStats) -> float:
    r = evaluate(config, split, with_ttft=False)
    return r.prfaas_side - r.pdp_side


def refine_crossing(config: DeploymentConfig, lo: float, hi: float, tol: float = 1.0) -> float | None:
    """Bisect for the threshold where both producer paths absorb the same rate.

    The PrfaaS side grows with ``t`` and the PD-P side shrinks, so the gap is
    monotone.  Returns ``None`` if the curves do not cross inside [lo, hi].
    """
    dist = config.length_dist

    def gap(t):
        return _producer_gap(config.with_threshold(t), split_stats(dist, t))

    g_lo, g_hi = gap(lo), gap(hi)
    if not (g_lo <= 0 <= g_hi):
        return None
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if gap(mid) <= 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def optimize(space: SearchSpace) -> Optimum:
    """Exhaustive search over (t, N_p/N_d) maximising the end-to-end rate."""
    template = space.template
    dist = template.length_dist
    splits_at = {t: split_stats(dist, t) for t in space.t_grid}
    frontier: list[dict] = []
    best_key = None
    best = None

    def consider(cfg, st, n_p, n_d, t):
        nonlocal best_key, best
        try:
            r = evaluate(cfg, st, with_ttft=False)
        except PrfaasError:
            return None
        frontier.append({"t": t, "np": n_p, "nd": n_d, "lambda_max": r.lambda_max})
        key = (r.lambda_max, n_d, t)
        if _better(key, best_key):
            best_key, best = key, (t, n_p, n_d)
        return r

    for n_p, n_d in space.splits:
        base = template.with_split(n_p, n_d)
        per_t = []
        for t in space.t_grid:
            r = consider(base.with_threshold(t), splits_at[t], n_p, n_d, t)
            if r is not None:
                per_t.append((t, r.lambda_max))
        if space.refine and space.threshold_used and len(per_t) > 1:
            # localise the producer crossing between the grid neighbours of this split's best t
            lams = [lam for _, lam in per_t]
            i = int(np.argmax(lams))
            lo = per_t[max(i - 1, 0)][0]
            hi = per_t[min(i + 1, len(per_t) - 1)][0]
            tc = refine_crossing(base, lo, hi)
            if tc is not None:
                consider(base.with_threshold(tc), split_stats(dist, tc), n_p, n_d, tc)

    if best is None:
        raise InfeasibleSpaceError("no grid point produced a valid deployment")
    t, n_p, n_d = best
    report = evaluate(template.with_split(n_p, n_d).with_threshold(t))
    return Optimum(t, n_p, n_d, report, space.threshold_used, frontier)


def sweep_threshold(config: DeploymentConfig, t_grid: Iterable[float] | None = None) -> list[dict]:
    """Figure-style rows over thresholds at the config's fixed split."""
    t_grid = default_t_grid(config.length_dist) if t_grid is None else t_grid
    rows = []
    for t in t_grid:
        t = float(t)
        r = evaluate(config.with_threshold(t), with_ttft=False)
        rows.append(
            {
                "t": t,
                "p": r.split.p,
                "theta_prfaas_over_p": r.prfaas_side,
                "theta_pdp_over_1mp": r.pdp_side,
                "theta_pdd": r.theta_pdd,
                "lambda_max": r.lambda_max,
            }
        )
    return rows


def threshold_crossing(config: DeploymentConfig, t_grid: Iterable[float] | None = None, tol: float = 1.0) -> float | None:
    """Threshold where the two producer curves meet, refined past the grid."""
    rows = sweep_threshold(config, t_grid)
    for a, b in zip(rows, rows[1:]):
        ga = a["theta_prfaas_over_p"] - a["theta_pdp_over_1mp"]
        gb = b["theta_prfaas_over_p"] - b["theta_pdp_over_1mp"]
        if ga <= 0 <= gb:
            return refine_crossing(config, a["t"], b["t"], tol)
    return None


def sweep_allocation(config: DeploymentConfig, nd_range: Iterable[int] | None = None) -> list[dict]:
    """Rows over integer decode counts at fixed threshold and PD total."""
    total = config.pd.total
    nd_range = range(1, total + 1) if nd_range is None else nd_range
    rows = []
    for n_d in nd_range:
        n_p = total - n_d
        if n_p < 0:
            continue
        try:
            r = evaluate(config.with_split(n_p, n_d), with_ttft=False)
        except PrfaasError:
            continue
        rows.append(
            {
                "np": n_p,
                "nd": n_d,
                "theta_producer": r.producer_capacity,
                "theta_pdd": r.theta_pdd,
                "lambda_max": r.lambda_max,
            }
        )
    return rows


def write_rows_csv(path: str | Path, header: Sequence[str], rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row[k]) for k in header])


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        return repr(v)
    return str(v)
