"""Estimator-style front end for capacity planning.

``fit`` solves for the routing threshold and the PD split, either on the
configured length distribution or on observed request lengths; ``predict``
routes lengths; ``transform`` returns their queue-free TTFT.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_count, check_lengths, check_positive
from .calibration import CASE_STUDY_DIST
from .optimizer import SearchSpace, default_t_grid, optimize
from .profiles import load_profile
from .scheduler import PD_P, PRFAAS
from .throughput import DeploymentConfig, PDCluster, PrfaasCluster, request_ttft
from .workload import EmpiricalLengths, distribution_from_dict


class PrfaasPlanner(BaseEstimator):
    """Choose (t, N_p, N_d) maximising the sustainable request rate.

    Parameters
    ----------
    pd_profile, prfaas_profile : str
        Profile names or JSON paths.  ``prfaas_gpus=0`` plans a PD-only
        deployment.
    pd_total : int
        Instances in the PD cluster, split between prefill and decode.
    length_dist : dict or None
        Distribution used when ``fit`` gets no data; defaults to the
        case-study truncated log-normal.
    """

    def __init__(
        self,
        pd_profile="internal-1t-h20-calibrated",
        prfaas_profile="internal-1t-h200",
        prfaas_gpus=32,
        egress_gbps=100.0,
        pd_total=8,
        output_len=1024,
        length_dist=None,
        n_t_points=200,
        refine=True,
    ):
        self.pd_profile = pd_profile
        self.prfaas_profile = prfaas_profile
        self.prfaas_gpus = prfaas_gpus
        self.egress_gbps = egress_gbps
        self.pd_total = pd_total
        self.output_len = output_len
        self.length_dist = length_dist
        self.n_t_points = n_t_points
        self.refine = refine

    def _template(self, dist) -> DeploymentConfig:
        check_count(self.pd_total, "pd_total", 1)
        check_count(self.prfaas_gpus, "prfaas_gpus")
        check_positive(self.egress_gbps, "egress_gbps", allow_zero=True)
        check_count(self.output_len, "output_len", 1)
        pd = load_profile(self.pd_profile)
        prfaas = None
        if self.prfaas_gpus > 0:
            prfaas = PrfaasCluster(load_profile(self.prfaas_profile), gpus=self.prfaas_gpus, egress_gbps=self.egress_gbps)
        return DeploymentConfig(
            pd=PDCluster(pd, 0, self.pd_total),
            length_dist=dist,
            threshold=dist.upper,
            prfaas=prfaas,
            output_len=self.output_len,
        )

    def fit(self, X=None, y=None):
        if X is None:
            dist = distribution_from_dict(self.length_dist or {"kind": "truncated_lognormal", **CASE_STUDY_DIST})
        else:
            dist = EmpiricalLengths(check_lengths(X))
        template = self._template(dist)
        space = SearchSpace(template, t_grid=default_t_grid(dist, self.n_t_points), refine=self.refine)
        opt = optimize(space)
        self.optimum_ = opt
        self.t_ = opt.t_star if space.threshold_used else float("inf")
        self.n_p_ = opt.np_star
        self.n_d_ = opt.nd_star
        self.report_ = opt.report
        self.lambda_max_ = opt.report.lambda_max
        self.config_ = template.with_split(opt.np_star, opt.nd_star).with_threshold(opt.t_star)
        self.distribution_ = dist
        return self

    def predict(self, X) -> np.ndarray:
        """Route each length: ``'prfaas'`` above the threshold, else ``'pd_p'``."""
        check_is_fitted(self, "t_")
        lengths = check_lengths(X)
        return np.where(lengths > self.t_, PRFAAS, PD_P)

    def transform(self, X) -> np.ndarray:
        """Queue-free TTFT in seconds, one column."""
        check_is_fitted(self, "config_")
        lengths = check_lengths(X)
        return request_ttft(self.config_, lengths).reshape(-1, 1)

    def score(self, X=None, y=None) -> float:
        check_is_fitted(self, "lambda_max_")
        return float(self.lambda_max_)
