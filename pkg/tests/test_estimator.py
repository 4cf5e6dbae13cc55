import numpy as np
import pytest
from sklearn.base import clone

from dsdm3.estimator import DSDM3, build_k_prior
from dsdm3.model import KPrior
from dsdm3.simgen import generate_scenario, scenario


@pytest.fixture(scope="module")
def data():
    return generate_scenario(scenario(1, seed=2, N_per_cluster=(8, 8), J_noise=12, J_signal=4))


def test_params_round_trip():
    est = DSDM3(theta=1.0, n_iter=50)
    params = est.get_params()
    assert params["theta"] == 1.0 and params["K_m"] == 10 and params["n_iter"] == 50
    c = clone(est)
    assert c.get_params() == params
    c.set_params(theta=0.01)
    assert c.theta == 0.01


def test_fit_predict(data):
    X, _ = data
    est = DSDM3(n_iter=40, burn_in=10, random_state=1)
    labels = est.fit_predict(X.counts)
    assert labels.shape == (16,) and labels.min() == 1
    assert est.n_clusters_ == labels.max()
    assert sum(est.kplus_posterior_.values()) == pytest.approx(1.0)
    assert est.coclustering_.shape == (16, 16)
    again = DSDM3(n_iter=40, burn_in=10, random_state=1).fit(X)
    np.testing.assert_array_equal(again.draws_.c, est.draws_.c)


def test_chains_pooled(data):
    X, _ = data
    est = DSDM3(n_iter=20, burn_in=5, chains=3).fit(X)
    assert len(est.draws_) == 45


def test_dataframe_input(data):
    pd = pytest.importorskip("pandas")
    X, _ = data
    df = pd.DataFrame(X.counts, columns=X.taxon_ids, index=X.sample_ids)
    est = DSDM3(n_iter=10, burn_in=0).fit(df)
    assert est.n_features_in_ == X.n_taxa


@pytest.mark.parametrize("bad", [dict(n_iter=0), dict(burn_in=100, n_iter=50), dict(random_state=-1),
                                 dict(theta=0.0), dict(k_prior="nope"), dict(chains=0)])
def test_invalid(bad, data):
    X, _ = data
    with pytest.raises(ValueError):
        DSDM3(**{"n_iter": 20, "burn_in": 0, **bad}).fit(X)


def test_rejects_negative_and_text():
    with pytest.raises(ValueError):
        DSDM3(n_iter=5, burn_in=0).fit(np.array([[1, -1], [2, 3]]))
    with pytest.raises(ValueError):
        DSDM3(n_iter=5, burn_in=0).fit(np.array([["a", "b"], ["c", "d"]]))


def test_build_k_prior():
    assert build_k_prior("ztb", 5, 0.3) == KPrior.zero_truncated_binomial(5, 0.3)
    assert build_k_prior("poisson", 5, k_prior_params=(2.0,)) == KPrior.truncated_poisson(5, 2.0)
