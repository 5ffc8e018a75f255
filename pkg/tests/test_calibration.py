import pytest

from prfaas.calibration import (
    HOMOGENEOUS_MEAN_TTFT,
    PRFAAS_PD_MEAN_TTFT,
    decode_rate_columns,
    decode_rate_spread,
    derive_h20_profile,
)
from prfaas.profiles import load_profile


def test_decode_columns_agree():
    rates = decode_rate_columns()
    assert set(rates) == {"prfaas_pd", "homogeneous", "naive"}
    assert decode_rate_spread() < 0.005


@pytest.fixture(scope="module")
def derivation():
    return derive_h20_profile()


def test_derivation_reproduces_fixture(derivation):
    fixture = load_profile("internal-1t-h20-calibrated")
    assert derivation.profile.to_dict()["points"] == fixture.to_dict()["points"]
    assert derivation.profile.decode_token_rate == pytest.approx(fixture.decode_token_rate)


def test_derivation_matches_targets(derivation, dist):
    from prfaas.throughput import DeploymentConfig, PDCluster, PrfaasCluster, ttft_stats

    prof = derivation.profile
    homog = DeploymentConfig(PDCluster(prof, 9, 3), dist, dist.upper)
    assert ttft_stats(homog).mean == pytest.approx(HOMOGENEOUS_MEAN_TTFT, abs=1e-3)
    mixed = DeploymentConfig(PDCluster(prof, 3, 5), dist, 19_400,
                             PrfaasCluster(load_profile("internal-1t-h200"), instances=4, egress_gbps=100.0))
    assert ttft_stats(mixed).mean == pytest.approx(PRFAAS_PD_MEAN_TTFT, abs=1e-3)


def test_knots_increasing(derivation):
    lens = [s for s, _ in derivation.knots]
    lats = [x for _, x in derivation.knots]
    assert lens == sorted(lens)
    assert lats == sorted(lats)
