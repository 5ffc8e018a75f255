import pytest

from prfaas.calibration import case_study_distribution
from prfaas.profiles import load_profile
from prfaas.throughput import DeploymentConfig, PDCluster, PrfaasCluster


@pytest.fixture(scope="session")
def h200():
    return load_profile("internal-1t-h200")


@pytest.fixture(scope="session")
def h20():
    return load_profile("internal-1t-h20-calibrated")


@pytest.fixture(scope="session")
def dist():
    return case_study_distribution()


@pytest.fixture
def prfaas_pd(h200, h20, dist):
    return DeploymentConfig(
        pd=PDCluster(h20, 3, 5),
        length_dist=dist,
        threshold=19_400,
        prfaas=PrfaasCluster(h200, gpus=32, egress_gbps=100.0),
        name="prfaas-pd",
    )


@pytest.fixture
def homogeneous(h20, dist):
    return DeploymentConfig(pd=PDCluster(h20, 9, 3), length_dist=dist, threshold=dist.upper, name="homogeneous")


@pytest.fixture
def naive(h200, h20, dist):
    return DeploymentConfig(
        pd=PDCluster(h20, 0, 8),
        length_dist=dist,
        threshold=0,
        prfaas=PrfaasCluster(h200, gpus=32, egress_gbps=100.0),
        name="naive",
    )


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS):
        terminalreporter.write_line(line)
