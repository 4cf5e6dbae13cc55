"""scikit-learn style front end: ``DSDM3().fit(X).labels_``."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from ._validation import check_counts, check_positive_int, check_seed
from .inference import coclustering, salso_search
from .model import Hyperparams, KPrior
from .sampler import PosteriorDraws, SamplerConfig, make_rng, run_chain

__all__ = ["DSDM3", "build_k_prior", "fit_chains"]


def build_k_prior(kind: str, K_m: int, pi_lambda: float = 0.5, k_prior_params=()) -> KPrior:
    """K prior from a short name. ``ztb`` uses ``pi_lambda``; the others read
    ``k_prior_params`` (poisson: rate, geometric: p, bnb: a, b, r)."""
    if kind == "ztb":
        return KPrior.zero_truncated_binomial(K_m, pi_lambda)
    return KPrior(kind, K_m, tuple(k_prior_params))


def fit_chains(data, hyper, config: SamplerConfig, chains: int = 1) -> list[PosteriorDraws]:
    """Independent chains on split seeds. One chain uses ``config.seed`` directly."""
    if chains == 1:
        return [run_chain(data, hyper, config)]
    streams = np.random.SeedSequence(config.seed).spawn(chains)
    return [run_chain(data, hyper, config, rng=make_rng(s)) for s in streams]


class DSDM3(ClusterMixin, BaseEstimator):
    """Zero-inflated Dirichlet-multinomial mixture with an unknown number of
    components, fit by MCMC. The point partition minimizes the VI lower bound
    over the posterior co-clustering matrix.

    Attributes after ``fit``: ``labels_`` (1-based), ``n_clusters_``,
    ``draws_``, ``coclustering_``, ``kplus_posterior_``, ``hyperparams_``.
    """

    def __init__(
        self,
        K_m=10,
        theta=0.1,
        pi_lambda=0.5,
        alpha_gamma=1.0,
        beta_gamma=1.0,
        s=200.0,
        sigma2=10.0,
        sigma2_mh=1.0,
        k_prior="ztb",
        k_prior_params=(),
        zero_inflation="zidm",
        n_iter=15000,
        burn_in=5000,
        thin=1,
        record_xi=False,
        chains=1,
        salso_runs=16,
        random_state=0,
    ):
        self.K_m = K_m
        self.theta = theta
        self.pi_lambda = pi_lambda
        self.alpha_gamma = alpha_gamma
        self.beta_gamma = beta_gamma
        self.s = s
        self.sigma2 = sigma2
        self.sigma2_mh = sigma2_mh
        self.k_prior = k_prior
        self.k_prior_params = k_prior_params
        self.zero_inflation = zero_inflation
        self.n_iter = n_iter
        self.burn_in = burn_in
        self.thin = thin
        self.record_xi = record_xi
        self.chains = chains
        self.salso_runs = salso_runs
        self.random_state = random_state

    def _hyperparams(self, data) -> Hyperparams:
        K_m = check_positive_int("K_m", self.K_m)
        return Hyperparams.from_data(
            data,
            s=self.s,
            K_m=K_m,
            theta=self.theta,
            pi_lambda=self.pi_lambda,
            alpha_gamma=self.alpha_gamma,
            beta_gamma=self.beta_gamma,
            sigma2=self.sigma2,
            sigma2_mh=self.sigma2_mh,
            k_prior=build_k_prior(self.k_prior, K_m, self.pi_lambda, self.k_prior_params),
            zero_inflation=self.zero_inflation,
        )

    def fit(self, X, y=None):
        data = check_counts(X)
        hyper = self._hyperparams(data)
        seed = check_seed(self.random_state)
        config = SamplerConfig(
            n_iter=check_positive_int("n_iter", self.n_iter),
            burn_in=check_positive_int("burn_in", self.burn_in, minimum=0),
            thin=check_positive_int("thin", self.thin),
            seed=seed,
            record_xi=bool(self.record_xi),
        )
        parts = fit_chains(data, hyper, config, check_positive_int("chains", self.chains))
        draws = PosteriorDraws.concatenate(parts)
        if len(draws) == 0:
            raise RuntimeError("no draws retained; lower burn_in or thin")
        P = coclustering(draws)
        best = salso_search(
            P, runs=check_positive_int("salso_runs", self.salso_runs), seed=seed,
            max_blocks=int(draws.K_plus.max()) + 1,
        )
        self.hyperparams_ = hyper
        self.draws_ = draws
        self.coclustering_ = P
        self.labels_ = best.partition
        self.n_clusters_ = int(best.partition.max())
        self.vi_bound_ = best.objective
        self.kplus_posterior_ = draws.kplus_frequencies()
        self.n_features_in_ = data.n_taxa
        return self
