import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prfaas.exceptions import InfeasibleSpaceError
from prfaas.optimizer import (
    ALLOCATION_SWEEP_HEADER,
    THRESHOLD_SWEEP_HEADER,
    SearchSpace,
    _better,
    default_splits,
    default_t_grid,
    optimize,
    refine_crossing,
    sweep_allocation,
    sweep_threshold,
    threshold_crossing,
    write_rows_csv,
)
from prfaas.throughput import evaluate


def brute_force(template, t_grid, splits):
    best = None
    for n_p, n_d in splits:
        for t in t_grid:
            cfg = template.with_split(n_p, n_d).with_threshold(t)
            try:
                lam = evaluate(cfg, with_ttft=False).lambda_max
            except ValueError:
                continue
            key = (lam, n_d, -t)
            if best is None or key > best[0]:
                best = (key, (t, n_p, n_d))
    return best[1]


def test_matches_brute_force(prfaas_pd):
    grid = list(np.geomspace(1000, 100_000, 40))
    splits = default_splits(8)
    opt = optimize(SearchSpace(prfaas_pd, t_grid=grid, splits=splits, refine=False))
    assert (opt.t_star, opt.np_star, opt.nd_star) == brute_force(prfaas_pd, grid, splits)


def test_case_study_optimum(prfaas_pd):
    opt = optimize(SearchSpace(prfaas_pd))
    assert (opt.np_star, opt.nd_star) == (3, 5)
    assert abs(opt.t_star - 19_400) < 500
    assert opt.report.lambda_max == pytest.approx(3.1977, abs=1e-3)
    assert not math.isnan(opt.report.ttft_mean)
    assert opt.to_dict()["np_star"] == 3


def test_homogeneous_optimum(homogeneous):
    space = SearchSpace(homogeneous)
    assert not space.threshold_used and space.t_grid == [homogeneous.length_dist.upper]
    opt = optimize(space)
    assert (opt.np_star, opt.nd_star) == (9, 3)
    assert opt.to_dict()["t_star"] is None


def test_refinement_never_worse(prfaas_pd):
    grid = list(np.geomspace(1000, 100_000, 30))
    a = optimize(SearchSpace(prfaas_pd, t_grid=grid, refine=False))
    b = optimize(SearchSpace(prfaas_pd, t_grid=grid, refine=True))
    assert b.report.lambda_max >= a.report.lambda_max - 1e-12


def test_infeasible_space(homogeneous):
    with pytest.raises(InfeasibleSpaceError):
        SearchSpace(homogeneous.with_split(0, 1))
    with pytest.raises(InfeasibleSpaceError):
        SearchSpace(homogeneous, splits=[])


def test_default_grid_and_splits(dist):
    g = default_t_grid(dist)
    assert g[0] == pytest.approx(dist.lower) and g[-1] == pytest.approx(dist.upper)
    assert np.all(np.diff(g) > 0)
    assert default_splits(3) == [(2, 1), (1, 2), (0, 3)]
    assert default_splits(3, allow_zero_prefill=False) == [(2, 1), (1, 2)]


def test_tie_break_order():
    assert _better((2.0, 3, 100.0), (1.0, 5, 10.0))
    assert _better((2.0, 5, 100.0), (2.0, 3, 10.0))
    assert _better((2.0, 3, 10.0), (2.0, 3, 100.0))
    assert not _better((2.0, 3, 100.0), (2.0, 3, 10.0))


def test_threshold_crossing_balances_producers(prfaas_pd):
    tc = threshold_crossing(prfaas_pd)
    r = evaluate(prfaas_pd.with_threshold(tc), with_ttft=False)
    assert r.prfaas_side == pytest.approx(r.pdp_side, rel=1e-3)
    assert refine_crossing(prfaas_pd, 100_000, 120_000) is None


@settings(max_examples=12, deadline=None)
@given(st.floats(min_value=0.5, max_value=50.0), st.floats(min_value=0.5, max_value=50.0))
def test_crossing_moves_right_as_bandwidth_shrinks(b1, b2):
    from prfaas.calibration import case_study_distribution
    from prfaas.profiles import load_profile
    from prfaas.throughput import DeploymentConfig, PDCluster, PrfaasCluster

    lo, hi = min(b1, b2), max(b1, b2)
    cfg = DeploymentConfig(
        PDCluster(load_profile("internal-1t-h20-calibrated"), 3, 5),
        case_study_distribution(),
        19_400,
        PrfaasCluster(load_profile("internal-1t-h200"), gpus=32, egress_gbps=hi),
    )
    grid = np.geomspace(1000, 131072, 60)
    t_hi = threshold_crossing(cfg, grid)
    t_lo = threshold_crossing(cfg.with_egress(lo), grid)
    assert t_lo >= t_hi - 2.0


@settings(max_examples=10, deadline=None)
@given(st.integers(min_value=8, max_value=96))
def test_optimum_monotone_in_prfaas_gpus(gpus):
    from prfaas.calibration import case_study_distribution
    from prfaas.profiles import load_profile
    from prfaas.throughput import DeploymentConfig, PDCluster, PrfaasCluster

    def solve(g):
        cfg = DeploymentConfig(
            PDCluster(load_profile("internal-1t-h20-calibrated"), 3, 5),
            case_study_distribution(),
            19_400,
            PrfaasCluster(load_profile("internal-1t-h200"), gpus=g),
        )
        return optimize(SearchSpace(cfg, t_grid=np.geomspace(1000, 131072, 40))).report.lambda_max

    assert solve(gpus + 8) >= solve(gpus) - 1e-9


def test_sweeps_and_csv(prfaas_pd, tmp_path):
    rows = sweep_threshold(prfaas_pd, [1000, 19_400, 200_000])
    assert set(rows[0]) == set(THRESHOLD_SWEEP_HEADER)
    assert math.isinf(rows[-1]["theta_prfaas_over_p"])
    alloc = sweep_allocation(prfaas_pd)
    assert [r["nd"] for r in alloc] == list(range(1, 9))
    best = max(alloc, key=lambda r: r["lambda_max"])
    assert (best["np"], best["nd"]) == (3, 5)
    path = tmp_path / "s.csv"
    write_rows_csv(path, THRESHOLD_SWEEP_HEADER, rows)
    with open(path) as fh:
        got = list(csv.reader(fh))
    assert tuple(got[0]) == THRESHOLD_SWEEP_HEADER
    assert "inf" in got[-1]
    write_rows_csv(tmp_path / "a.csv", ALLOCATION_SWEEP_HEADER, alloc)
