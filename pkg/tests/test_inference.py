import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.metrics import adjusted_rand_score

from dsdm3.inference import (
    adjusted_rand_index,
    canonicalize,
    coclustering,
    diversity,
    posterior_cluster_abundances,
    salso_search,
    vi_lower_bound,
)
from dsdm3.sampler import PosteriorDraws


def set_partitions(n):
    """Every partition of range(n) as a restricted growth string."""
    def grow(prefix, m):
        if len(prefix) == n:
            yield list(prefix)
            return
        for b in range(m + 2):
            yield from grow(prefix + [b], max(m, b))
    if n == 0:
        yield []
        return
    yield from grow([0], 0)


def vi_bound_loop(p, P):
    """Element-wise transcription of the bound, log base 2."""
    N = len(p)
    tot = 0.0
    for i in range(N):
        size = sum(1 for k in range(N) if p[k] == p[i])
        row = sum(P[i][k] for k in range(N))
        same = sum(P[i][k] for k in range(N) if p[k] == p[i])
        tot += math.log2(size) + math.log2(row) - 2 * math.log2(same)
    return tot / N


def random_psm(rng, N, M=None):
    M = M or int(rng.integers(1, 40))
    labels = np.empty((M, N), dtype=int)
    centers = rng.integers(0, rng.integers(1, N + 1), N)
    for m in range(M):
        noise = rng.random(N) < rng.uniform(0, 0.6)
        labels[m] = np.where(noise, rng.integers(0, N, N), centers)
    return coclustering(labels)


class TestCanonicalize:
    def test_first_appearance(self):
        assert canonicalize([5, 5, 2, 9, 2]).tolist() == [1, 1, 2, 3, 2]

    @given(st.lists(st.integers(-3, 3), min_size=1, max_size=20))
    def test_idempotent_and_same_partition(self, labels):
        c = canonicalize(labels)
        assert canonicalize(c).tolist() == c.tolist()
        assert adjusted_rand_index(labels, c) == 1.0


class TestCoclustering:
    def test_values(self):
        P = coclustering(np.array([[0, 0, 1], [0, 1, 1]]))
        np.testing.assert_allclose(P, [[1, 0.5, 0], [0.5, 1, 0.5], [0, 0.5, 1]])

    def test_empty(self):
        with pytest.raises(ValueError):
            coclustering(np.empty((0, 3), dtype=int))

    @given(st.integers(0, 2**31))
    def test_properties(self, seed):
        P = random_psm(np.random.default_rng(seed), 6)
        np.testing.assert_allclose(P, P.T)
        np.testing.assert_allclose(np.diag(P), 1.0)
        assert P.min() >= 0 and P.max() <= 1
        assert np.linalg.eigvalsh(P).min() > -1e-9


class TestVIBound:
    @pytest.mark.parametrize("seed", range(20))
    def test_matches_loop(self, seed):
        rng = np.random.default_rng(seed)
        N = int(rng.integers(2, 9))
        P = random_psm(rng, N)
        p = rng.integers(0, 3, N)
        assert vi_lower_bound(p, P) == pytest.approx(vi_bound_loop(p, P), abs=1e-12)

    def test_zero_at_degenerate_posterior(self):
        p = np.array([1, 1, 2, 2, 3])
        P = coclustering(p[None, :])
        assert vi_lower_bound(p, P) == pytest.approx(0.0, abs=1e-12)

    def test_constant_does_not_move_argmin(self):
        rng = np.random.default_rng(0)
        P = random_psm(rng, 5)
        parts = list(set_partitions(5))
        a = [vi_lower_bound(p, P) for p in parts]
        b = [vi_lower_bound(p, P, include_constant=False) for p in parts]
        assert int(np.argmin(a)) == int(np.argmin(b))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            vi_lower_bound([1, 2], np.eye(3))


def test_bell_numbers():
    assert [sum(1 for _ in set_partitions(n)) for n in range(1, 7)] == [1, 2, 5, 15, 52, 203]


class TestSalso:
    def test_single_draw_recovers_it(self):
        draw = np.array([[2, 2, 0, 1, 1, 0, 2]])
        best = salso_search(coclustering(draw), runs=4)
        assert adjusted_rand_index(best.partition, draw[0]) == 1.0

    def test_deterministic(self):
        P = random_psm(np.random.default_rng(1), 30, M=50)
        a = salso_search(P, runs=8, seed=3)
        b = salso_search(P, runs=8, seed=3)
        assert a.partition.tolist() == b.partition.tolist() and a.objective == b.objective

    def test_traces_monotone(self):
        P = random_psm(np.random.default_rng(2), 25, M=50)
        _, traces = salso_search(P, runs=6, return_traces=True)
        for t in traces:
            assert np.all(np.diff(t) <= 1e-12)

    def test_escapes_singleton_local_optimum(self):
        # no single-item move improves on singletons here; the optimum merges three items
        P = np.array([[1.0, 0.4, 0.2, 0.4], [0.4, 1.0, 0.2, 0.4],
                      [0.2, 0.2, 1.0, 0.4], [0.4, 0.4, 0.4, 1.0]])
        best = salso_search(P, runs=16, seed=15)
        assert best.partition.tolist() == [1, 1, 2, 1]

    def test_max_blocks(self):
        P = np.eye(6)
        best = salso_search(P, runs=4, max_blocks=2)
        assert best.partition.max() <= 2

    def test_objective_reported(self):
        P = random_psm(np.random.default_rng(4), 10)
        best = salso_search(P, runs=4)
        assert best.objective == pytest.approx(vi_lower_bound(best.partition, P))
        assert best.partition.tolist() == canonicalize(best.partition).tolist()


class TestARI:
    def test_unit_cases(self):
        assert adjusted_rand_index([1, 1, 2, 2], [3, 3, 7, 7]) == 1.0
        assert adjusted_rand_index([1, 1, 2, 2], [1, 2, 1, 2]) == pytest.approx(-0.5, abs=1e-12)
        assert adjusted_rand_index([1, 1, 1, 1], [1, 2, 3, 4]) == pytest.approx(0.0, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            adjusted_rand_index([1, 2], [1, 2, 3])

    @given(
        st.lists(st.integers(0, 4), min_size=2, max_size=40).flatmap(
            lambda a: st.tuples(st.just(a), st.lists(st.integers(0, 4), min_size=len(a), max_size=len(a)))
        )
    )
    def test_matches_sklearn(self, pair):
        a, b = pair
        assert adjusted_rand_index(a, b) == pytest.approx(adjusted_rand_score(a, b), abs=1e-12)

    @given(st.lists(st.integers(0, 5), min_size=2, max_size=30), st.integers(0, 2**31))
    def test_symmetric_and_label_invariant(self, a, seed):
        rng = np.random.default_rng(seed)
        b = rng.integers(0, 3, len(a))
        perm = rng.permutation(10)
        assert adjusted_rand_index(a, b) == pytest.approx(adjusted_rand_index(b, a), abs=1e-12)
        assert adjusted_rand_index(a, b) == pytest.approx(adjusted_rand_index(perm[np.array(a)], b), abs=1e-12)


class TestDiversity:
    def test_values(self):
        assert diversity([5, 5, 0]) == (2, pytest.approx(math.log(2)))
        assert diversity([7, 0, 0]) == (1, 0.0)

    def test_empty_sample(self):
        rich, sh = diversity([0, 0])
        assert rich == 0 and math.isnan(sh)

    @given(st.lists(st.integers(0, 1000), min_size=2, max_size=30))
    def test_bounds(self, z):
        rich, sh = diversity(z)
        if sum(z) > 0:
            assert 0 <= sh <= math.log(rich) + 1e-12


def _draws_with_xi(c, xi, weights):
    M = len(c)
    return PosteriorDraws(
        iteration=np.arange(M), c=np.array(c), K=np.full(M, 2), K_plus=np.full(M, 2),
        weights=np.array(weights, dtype=float), log_density=np.zeros(M), xi=np.array(xi, dtype=float),
    )


class TestAbundances:
    def test_label_switching_is_matched(self):
        xa, xb = [0.0, math.log(3)], [math.log(3), 0.0]
        draws = _draws_with_xi(
            c=[[0, 0, 1, 1], [1, 1, 0, 0]],
            xi=[[xa, xb], [xb, xa]],
            weights=[[0.5, 0.5], [0.5, 0.5]],
        )
        res = posterior_cluster_abundances(draws, [1, 1, 2, 2], taxon_ids=["a", "b"])
        np.testing.assert_allclose(res[0].mean, [0.25, 0.75])
        np.testing.assert_allclose(res[1].mean, [0.75, 0.25])
        assert res[0].names == ("a", "b") and res[0].size == 2

    def test_groups(self):
        draws = _draws_with_xi(c=[[0, 1]], xi=[[[0.0, 0.0, 0.0], [0.0, 0.0, math.log(2)]]],
                               weights=[[0.5, 0.5]])
        res = posterior_cluster_abundances(draws, [1, 2], taxon_ids=["x", "y", "z"],
                                           groups={"x": "g1", "y": "g1", "z": "g2"})
        np.testing.assert_allclose(res[1].mean, [0.5, 0.5])
        assert res[1].names == ("g1", "g2")

    def test_needs_xi(self):
        d = _draws_with_xi([[0, 1]], [[[0.0, 0.0], [0.0, 0.0]]], [[0.5, 0.5]])
        d.xi = None
        with pytest.raises(ValueError, match="record_xi"):
            posterior_cluster_abundances(d, [1, 2])
