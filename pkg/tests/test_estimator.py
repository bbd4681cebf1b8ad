"""Estimator-contract tests for the sklearn wrappers."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from badgesteer import inference as inf
from badgesteer.estimator import NaiveRateModel, SteeringModel
from badgesteer.model import ActionTrajectory, zip_sample

TINY = dict(n_days=14, day0_index=7, latent_dim=3, flow_layers=1,
            enc_hidden=(8,), dec_hidden=(6,), max_epochs=2, patience=5, seed=0)


@pytest.fixture(scope="module")
def data():
    rng = np.random.default_rng(50)
    counts = zip_sample(rng, np.full((40, 14), 0.5), np.full((40, 14), 2.0))
    return [ActionTrajectory(f"u{i:03d}", counts[i], weekday_of_day0=int(rng.integers(0, 7)),
                             day0_index=7) for i in range(40)]


def test_defaults_match_reference_config():
    est = SteeringModel()
    cfg = est._config()
    assert cfg == inf.InferenceConfig()
    assert est.model == 2


def test_get_set_params_and_clone():
    est = SteeringModel(model=0, latent_dim=5, seed=3)
    p = est.get_params()
    assert p["model"] == 0 and p["latent_dim"] == 5
    est2 = clone(est)
    assert est2.get_params() == p
    est2.set_params(lr=0.01)
    assert est2.lr == 0.01 and est.lr == 0.001


def test_fit_predict_score(data):
    est = SteeringModel(model=2, **TINY).fit(data)
    assert hasattr(est, "params_")
    assert est.best_epoch_ >= 0
    assert not est.diverged_
    assert len(est.history_) <= 2

    labels = est.predict(data)
    assert labels.shape == (40,)
    assert set(labels) <= {"non-steerer", "strong-steerer", "other"}
    s = est.predict_strength(data)
    assert s.shape == (40, 2)
    assert np.all((s > 0) & (s < 1))
    assert np.isfinite(est.score(data))

    dev = est.steering_deviation()
    assert dev.n_days == 14
    assert np.all(dev.beta1[:8] >= 0) and np.all(dev.beta1[8:] <= 0)


def test_fit_is_deterministic(data):
    a = SteeringModel(model=0, **TINY).fit(data)
    b = SteeringModel(model=0, **TINY).fit(data)
    for k in a.params_:
        np.testing.assert_array_equal(a.params_[k], b.params_[k])
    np.testing.assert_array_equal(a.predict_strength(data), b.predict_strength(data))


def test_unfitted_raises():
    with pytest.raises(NotFittedError):
        SteeringModel().predict([])
    with pytest.raises(NotFittedError):
        NaiveRateModel().score([])


def test_clone_drops_fitted_state(data):
    est = SteeringModel(model=0, **TINY).fit(data)
    fresh = clone(est)
    assert not hasattr(fresh, "params_")


def test_raw_matrix_input(data):
    counts = np.stack([t.counts for t in data])
    est = SteeringModel(model=0, **TINY).fit(counts)
    assert est.n_features_in_ == 14
    labels = est.predict(counts)
    assert labels.shape == (40,)

    with pytest.raises(ValueError, match="weekdays"):
        est.fit(data, weekdays=np.zeros(40, dtype=int))


def test_naive_rate_model_matches_functions(data):
    est = NaiveRateModel(day0_index=7).fit(data)
    rates = inf.naive_baseline(data)
    np.testing.assert_array_equal(est.rates_.alpha, rates.alpha)
    np.testing.assert_array_equal(est.rates_.lam, rates.lam)
    want_ll, _ = inf.score_day_rates(rates, data)
    assert est.score(data) == want_ll
    pred = est.predict(data)
    assert pred.shape == (40, 14)
    np.testing.assert_array_equal(pred[0], rates.expected_counts)
