import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import comb

from dsdm3.model import (
    AllZeroTaxonWarning,
    CountMatrix,
    Hyperparams,
    KPrior,
    cluster_relative_abundance,
    log_dm_marginal,
    log_gamma_conditional_ratio,
    log_k_prior,
    log_multinomial_coefficient,
    log_prior_xi,
    prior_mean_from_data,
)
from dsdm3.sampler import ChainState, joint_log_density


def compositions(n, J):
    for cuts in itertools.combinations(range(n + J - 1), J - 1):
        parts, prev = [], -1
        for c in cuts:
            parts.append(c - prev - 1)
            prev = c
        parts.append(n + J - 1 - prev - 1)
        yield np.array(parts)


def polya_urn_logpmf(z, a):
    """Sequential urn draws in a fixed order, times the number of orders."""
    z = list(int(v) for v in z)
    a = list(a)
    A = sum(a)
    seen = [0] * len(a)
    logp, t = 0.0, 0
    for j, zj in enumerate(z):
        for _ in range(zj):
            logp += math.log(a[j] + seen[j]) - math.log(A + t)
            seen[j] += 1
            t += 1
    n = sum(z)
    ways = math.lgamma(n + 1) - sum(math.lgamma(v + 1) for v in z)
    return logp + ways


class TestCountMatrix:
    def test_negative_cell_named(self):
        with pytest.raises(ValueError, match="row 1, column 0"):
            CountMatrix(np.array([[1, 2], [-1, 3]]))

    def test_non_integer_rejected(self):
        with pytest.raises(ValueError, match="integers"):
            CountMatrix(np.array([[1.5, 2], [1, 3]]))

    def test_needs_two_taxa(self):
        with pytest.raises(ValueError):
            CountMatrix(np.array([[1], [2]]))

    def test_depth_zero_row_allowed(self):
        d = CountMatrix(np.array([[0, 0], [3, 1]]))
        assert d.depths.tolist() == [0, 4]
        np.testing.assert_allclose(d.mean_relative_abundance(), [0.75, 0.25])

    def test_default_ids(self):
        d = CountMatrix(np.ones((2, 3), dtype=int))
        assert d.sample_ids == ("S1", "S2") and d.taxon_ids == ("T1", "T2", "T3")


class TestDirichletMultinomial:
    def test_uniform_case(self):
        # unit concentrations make every composition of n equally likely
        assert log_dm_marginal([1, 1], [1, 1], [0.0, 0.0]) == pytest.approx(math.log(1 / 3), abs=1e-12)
        assert log_dm_marginal([1, 0], [1, 1], [0.0, 0.0]) == pytest.approx(math.log(1 / 2), abs=1e-12)

    @pytest.mark.parametrize("J", [2, 3])
    @pytest.mark.parametrize("n", [0, 1, 2, 3, 4])
    def test_normalizes_over_all_compositions(self, J, n, rng):
        for _ in range(5):
            xi = rng.normal(0, 1.5, J)
            total = sum(math.exp(log_dm_marginal(z, np.ones(J), xi)) for z in compositions(n, J))
            assert abs(total - 1.0) < 1e-10

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_normalizes_over_at_risk_support(self, n, rng):
        gamma = np.array([1, 0, 1])
        xi = rng.normal(0, 1, 3)
        total = 0.0
        for z in compositions(n, 3):
            if z[1] == 0:
                total += math.exp(log_dm_marginal(z, gamma, xi))
        assert abs(total - 1.0) < 1e-10

    @given(
        z=st.lists(st.integers(0, 30), min_size=2, max_size=6),
        seed=st.integers(0, 2**32 - 1),
    )
    def test_matches_polya_urn(self, z, seed):
        xi = np.random.default_rng(seed).normal(0, 1, len(z))
        got = log_dm_marginal(z, np.ones(len(z)), xi)
        assert got == pytest.approx(polya_urn_logpmf(z, np.exp(xi)), abs=1e-9)

    @given(
        z=st.lists(st.integers(0, 50), min_size=2, max_size=8),
        seed=st.integers(0, 2**32 - 1),
    )
    def test_permutation_invariant(self, z, seed):
        r = np.random.default_rng(seed)
        xi = r.normal(0, 1, len(z))
        g = np.where(np.array(z) > 0, 1, r.integers(0, 2, len(z)))
        if sum(z) > 0 or g.any():
            perm = r.permutation(len(z))
            a = log_dm_marginal(z, g, xi)
            b = log_dm_marginal(np.array(z)[perm], g[perm], xi[perm])
            assert a == pytest.approx(b, abs=1e-9)

    def test_structural_zero_conflict(self):
        with pytest.raises(ValueError, match="structural zero"):
            log_dm_marginal([2, 1], [1, 0], [0.0, 0.0])

    def test_no_at_risk_taxa(self):
        with pytest.raises(ValueError):
            log_dm_marginal([1, 0], [0, 0], [0.0, 0.0])
        # a depth-0 row is fine even with nothing at risk
        assert log_dm_marginal([0, 0], [0, 0], [0.0, 0.0]) == 0.0

    def test_coefficient(self):
        assert log_multinomial_coefficient([2, 1]) == pytest.approx(math.log(3))
        with_c = log_dm_marginal([2, 1], [1, 1], [0.3, -0.2])
        without = log_dm_marginal([2, 1], [1, 1], [0.3, -0.2], include_coefficient=False)
        assert with_c - without == pytest.approx(math.log(3))


class TestKPrior:
    def test_ztb_top_mass(self):
        p = KPrior.zero_truncated_binomial(10, 0.5)
        assert log_k_prior(10, p) == pytest.approx(math.log(1 / 1023), abs=1e-12)
        assert log_k_prior(1, p) == pytest.approx(math.log(10 / 1023), abs=1e-12)

    def test_ztb_matches_binomial(self):
        p = KPrior.zero_truncated_binomial(7, 0.3)
        raw = np.array([comb(7, k) * 0.3**k * 0.7 ** (7 - k) for k in range(1, 8)])
        np.testing.assert_allclose(np.exp(p.log_pmf()), raw / raw.sum(), atol=1e-13)

    def test_poisson(self):
        p = KPrior.truncated_poisson(5, 2.0)
        raw = np.array([2.0**k / math.factorial(k) for k in range(1, 6)])
        np.testing.assert_allclose(np.exp(p.log_pmf()), raw / raw.sum(), atol=1e-13)

    def test_geometric(self):
        p = KPrior.geometric(6, 0.4)
        raw = np.array([0.4 * 0.6 ** (k - 1) for k in range(1, 7)])
        np.testing.assert_allclose(np.exp(p.log_pmf()), raw / raw.sum(), atol=1e-13)

    def test_bnb(self):
        a, b, r = 4.0, 3.0, 1.0
        p = KPrior.beta_negative_binomial(8, a, b, r)

        def pmf(m):  # K - 1 = m
            return (
                math.gamma(r + m) / (math.gamma(r) * math.factorial(m))
                * math.gamma(a + r) * math.gamma(b + m) / math.gamma(a + r + b + m)
                * math.gamma(a + b) / (math.gamma(a) * math.gamma(b))
            )

        raw = np.array([pmf(k - 1) for k in range(1, 9)])
        np.testing.assert_allclose(np.exp(p.log_pmf()), raw / raw.sum(), atol=1e-12)

    @pytest.mark.parametrize("kind,params", [("ztb", (0,)), ("poisson", (-1,)), ("geometric", (2,)), ("bnb", (1, 1))])
    def test_invalid(self, kind, params):
        with pytest.raises(ValueError):
            KPrior(kind, 5, params)

    def test_out_of_support(self):
        with pytest.raises(ValueError):
            log_k_prior(11, KPrior.zero_truncated_binomial(10, 0.5))


class TestHyperparams:
    def test_defaults(self):
        h = Hyperparams(mu=np.zeros(3))
        assert (h.K_m, h.theta, h.pi_lambda, h.alpha_gamma, h.beta_gamma) == (10, 0.1, 0.5, 1.0, 1.0)
        assert (h.s, h.sigma2, h.sigma2_mh) == (200.0, 10.0, 1.0)
        assert h.k_prior == KPrior.zero_truncated_binomial(10, 0.5)

    @pytest.mark.parametrize("field,value", [("theta", 0), ("sigma2", -1), ("pi_lambda", 1.0), ("K_m", 0)])
    def test_invalid(self, field, value):
        with pytest.raises(ValueError):
            Hyperparams(mu=np.zeros(3), **{field: value})

    def test_k_prior_truncation_must_match(self):
        with pytest.raises(ValueError):
            Hyperparams(mu=np.zeros(3), K_m=5, k_prior=KPrior.geometric(6, 0.5))

    def test_prior_mean(self):
        d = CountMatrix(np.array([[3, 1], [1, 1]]))
        np.testing.assert_allclose(prior_mean_from_data(d, 200), np.log(200 * np.array([0.625, 0.375])))

    def test_all_zero_taxon_warns(self):
        d = CountMatrix(np.array([[3, 0, 1], [1, 0, 1]]))
        with pytest.warns(AllZeroTaxonWarning):
            mu = prior_mean_from_data(d, 200)
        assert mu[1] == pytest.approx(math.log(200 * 0.5 / 6))


def test_relative_abundance_sums_to_one():
    ra = cluster_relative_abundance(np.array([800.0, 799.0, -5.0]))
    assert np.isfinite(ra).all() and ra.sum() == pytest.approx(1.0)


def test_log_prior_xi():
    assert log_prior_xi([1.0], [0.0], 1.0) == pytest.approx(-0.5 * math.log(2 * math.pi) - 0.5)


class TestGammaConditional:
    """Log-odds of at-risk indicators against a ratio of joint densities."""

    def _setup(self, seed):
        r = np.random.default_rng(seed)
        N, J, K = 5, 4, 2
        counts = r.integers(0, 4, (N, J)) * (r.random((N, J)) < 0.6)
        counts[:, 0] += 1
        data = CountMatrix(counts)
        gamma = np.where(counts > 0, 1, r.integers(0, 2, (N, J))).astype(np.uint8)
        xi = r.normal(0, 1, (3, J))
        c = np.array([0, 1, 0, 1, 1])
        state = ChainState(c=c, gamma=gamma, xi=xi, psi=np.array([1.0, 2.0, 0.5]), K=K, K_plus=K)
        hyper = Hyperparams(mu=np.zeros(J), K_m=3, alpha_gamma=1.3, beta_gamma=0.7)
        return data, state, hyper

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_joint_ratio(self, seed):
        data, state, hyper = self._setup(seed)
        zeros = np.argwhere(data.counts == 0)
        for i, j in zeros:
            s1, s0 = state.copy(), state.copy()
            s1.gamma[i, j], s0.gamma[i, j] = 1, 0
            oracle = joint_log_density(s1, data, hyper) - joint_log_density(s0, data, hyper)
            got = log_gamma_conditional_ratio(i, j, state, data, hyper)
            assert abs(got - oracle) < 1e-10

    def test_positive_count_rejected(self):
        data, state, hyper = self._setup(0)
        with pytest.raises(ValueError):
            log_gamma_conditional_ratio(0, 0, state, data, hyper)
