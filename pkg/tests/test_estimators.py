import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from risvcom.channel import LinkGeometry, sample_channels
from risvcom.estimation import aggregate_rows, cascaded_channel, simulate_training_rx
from risvcom.estimators import AdaptiveChannelEstimator, BroadbandAllocator, NarrowbandBeamformer
from risvcom.ofdm import make_scenario
from conftest import crandn


def _data(est, seed=0, noise=0.0):
    cs = sample_channels(est.N_t, 3, est.M, LinkGeometry(), 5.0, np.random.default_rng(seed))
    sched = est.make_schedule()
    Y = simulate_training_rx(cs, sched, noise, np.random.default_rng(seed + 1))
    return cs, sched, Y


def test_channel_estimator_params_and_clone():
    est = AdaptiveChannelEstimator(M=8, n_blocks=4, random_state=3)
    assert est.get_params()["n_blocks"] == 4
    c = clone(est).set_params(n_blocks=2)
    assert c.n_blocks == 2 and est.n_blocks == 4
    assert "n_blocks=4" in repr(est)


def test_channel_estimator_fit_predict_score():
    est = AdaptiveChannelEstimator(M=8, n_blocks=4, N_t=2, random_state=3)
    cs, sched, Y = _data(est)
    truth = aggregate_rows(cascaded_channel(cs.H, cs.G), sched.grouping)
    with pytest.raises(NotFittedError):
        est.predict(Y)
    assert est.fit(Y) is est
    np.testing.assert_allclose(est.predict(Y), truth, rtol=1e-9, atol=1e-25)
    assert est.score(Y, truth) > -1e-18
    assert est.N_r_ == 3
    est.fit(np.stack([Y, Y]))
    assert est.los_.t_count == 2


def test_channel_estimator_validation():
    est = AdaptiveChannelEstimator(M=8, n_blocks=9)
    with pytest.raises(ValueError):
        est.fit(np.zeros((2, 4, 9)))
    est = AdaptiveChannelEstimator(M=8, n_blocks=4, N_t=2).fit(np.ones((3, 2, 4)))
    with pytest.raises(ValueError):
        est.predict(np.ones((3, 2, 5)))
    with pytest.raises(ValueError):
        est.predict(np.full((3, 2, 4), np.nan))
    with pytest.raises(ValueError):
        AdaptiveChannelEstimator(M=8.0).fit(np.ones((3, 4, 16)))
    with pytest.raises(ValueError):
        AdaptiveChannelEstimator(pilot_power=-1.0).fit(np.ones((3, 4, 16)))


def test_beamformer_estimator(rng):
    H = crandn(rng, 5, 6)
    bf = NarrowbandBeamformer(N_t=2, N_r=3, noise=0.1, P_t=1.0, random_state=0).fit(H)
    assert bf.theta_.shape == (5,)
    assert bf.score(H) == pytest.approx(bf.rate_)
    assert clone(bf).get_params() == bf.get_params()
    other = crandn(rng, 5, 6)
    assert bf.predict(other) > 0
    with pytest.raises(ValueError):
        bf.predict(crandn(rng, 4, 6))
    with pytest.raises(ValueError):
        NarrowbandBeamformer(N_t=2, N_r=2).fit(H)
    with pytest.raises(ValueError):
        NarrowbandBeamformer(N_t=2, N_r=3, noise=0.0).fit(H)


def test_allocator_estimator():
    scen = make_scenario(K=2, N=6, N_t=2, N_r=2, M=4, C_min=1e6, rng=0)
    al = BroadbandAllocator(rounds=2, random_state=0).fit(scen)
    assert al.predict(scen).shape == (2, 6)
    assert al.score(scen) == pytest.approx(al.total_)
    assert al.per_vue_.sum() == pytest.approx(al.total_)
    with pytest.raises(ValueError):
        al.predict(make_scenario(K=2, N=4, M=4, rng=0))
    with pytest.raises(ValueError):
        BroadbandAllocator().fit("not a scenario")
    with pytest.raises(NotFittedError):
        BroadbandAllocator().predict(scen)
