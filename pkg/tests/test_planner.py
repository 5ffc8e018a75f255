import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from prfaas.exceptions import PrfaasError
from prfaas.planner import PrfaasPlanner


@pytest.fixture(scope="module")
def fitted():
    return PrfaasPlanner().fit()


def test_params_roundtrip():
    p = PrfaasPlanner(egress_gbps=20.0, pd_total=6)
    params = p.get_params()
    assert params["egress_gbps"] == 20.0 and params["pd_total"] == 6
    q = clone(p)
    assert q.get_params() == params and q is not p
    q.set_params(pd_total=4)
    assert q.pd_total == 4


def test_not_fitted():
    with pytest.raises(NotFittedError):
        PrfaasPlanner().predict([1000])


def test_fit_default(fitted):
    assert (fitted.n_p_, fitted.n_d_) == (3, 5)
    assert fitted.t_ == pytest.approx(19_637.9, abs=1.0)
    assert fitted.lambda_max_ == pytest.approx(3.1977, abs=1e-3)
    assert fitted.score() == fitted.lambda_max_


def test_predict_and_transform(fitted):
    X = np.array([1024, fitted.t_, fitted.t_ + 1, 100_000])
    assert fitted.predict(X).tolist() == ["pd_p", "pd_p", "prfaas", "prfaas"]
    ttft = fitted.transform(X)
    assert ttft.shape == (4, 1)
    assert np.all(ttft > 0)
    assert fitted.transform([[32_768]])[0, 0] == pytest.approx(1.84)


def test_fit_on_samples(dist):
    X = dist.sample(np.random.default_rng(0), 20_000)
    p = PrfaasPlanner().fit(X)
    assert (p.n_p_, p.n_d_) == (3, 5)
    assert p.t_ == pytest.approx(19_637.9, rel=0.02)


def test_pd_only():
    p = PrfaasPlanner(prfaas_gpus=0, pd_total=12).fit()
    assert p.t_ == float("inf")
    assert set(p.predict([1000, 120_000])) == {"pd_p"}


def test_bad_input():
    with pytest.raises((ValueError, PrfaasError)):
        PrfaasPlanner(pd_total=0).fit()
    with pytest.raises(ValueError):
        PrfaasPlanner().fit([[1, 2], [3, 4]])
    with pytest.raises(ValueError):
        PrfaasPlanner().fit([-5, 10])
