"""Scikit-learn style wrappers around the variational trainer.

SteeringModel is the full amortized-VI fit (any of the three variants);
NaiveRateModel is the pooled per-day baseline.  Both follow the usual
estimator contract: constructor args are stored verbatim, fitted state lives
in trailing-underscore attributes, get_params/set_params/clone work.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import inference as inf
from .model import ActionTrajectory
from .validation import unpack_dataset


class SteeringModel(BaseEstimator):
    """Latent-variable count model with badge-anchored steering.

    model selects the variant: 0 steering off, 1 always on, 2 per-user
    strengths read from the posterior.  X is a list of ActionTrajectory or a
    raw (n_users, n_days) count matrix (then day0_index and weekdays come
    from the constructor arguments / the `weekdays` keyword).
    """

    def __init__(self, model=2, n_days=70, day0_index=35, latent_dim=20,
                 flow_layers=12, enc_hidden=(128, 128), dec_hidden=(64, 64),
                 lr=0.001, batch_size=128, max_epochs=500, patience=20,
                 n_mc_train=1, n_mc_val=8, n_mc_eval=64, seed=0, n_jobs=1):
        self.model = model
        self.n_days = n_days
        self.day0_index = day0_index
        self.latent_dim = latent_dim
        self.flow_layers = flow_layers
        self.enc_hidden = enc_hidden
        self.dec_hidden = dec_hidden
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.n_mc_train = n_mc_train
        self.n_mc_val = n_mc_val
        self.n_mc_eval = n_mc_eval
        self.seed = seed
        self.n_jobs = n_jobs

    def _config(self):
        return inf.InferenceConfig(
            n_days=self.n_days, day0_index=self.day0_index,
            latent_dim=self.latent_dim, flow_layers=self.flow_layers,
            enc_hidden=self.enc_hidden, dec_hidden=self.dec_hidden, lr=self.lr,
            batch_size=self.batch_size, max_epochs=self.max_epochs,
            patience=self.patience, n_mc_train=self.n_mc_train,
            n_mc_val=self.n_mc_val, n_mc_eval=self.n_mc_eval, seed=self.seed,
        )

    def _as_trajectories(self, X, weekdays=None):
        counts, wd, ids, day0 = unpack_dataset(X, weekdays)
        day0 = self.day0_index if day0 is None else day0
        return [ActionTrajectory(ids[i], counts[i], weekday_of_day0=int(wd[i]),
                                 day0_index=day0) for i in range(len(ids))]

    def fit(self, X, y=None, weekdays=None, val_set=None):
        """Train on X; y is ignored (present for pipeline compatibility)."""
        data = self._as_trajectories(X, weekdays)
        config = self._config()
        result = inf.train(data, self.model, config, val_set=val_set)
        self.config_ = config
        self.result_ = result
        self.params_ = result.params
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.diverged_ = result.diverged
        self.n_features_in_ = config.n_days
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("fit this model before calling predict/score")

    def report(self, X, weekdays=None):
        self._check_fitted()
        data = self._as_trajectories(X, weekdays)
        return inf.evaluate(data, self.params_, self.model, self.config_,
                            seed=self.seed, n_jobs=self.n_jobs)

    def predict(self, X, weekdays=None):
        """Posterior label per user (non-steerer / strong-steerer / other)."""
        return np.asarray(self.report(X, weekdays).labels, dtype=object)

    def predict_strength(self, X, weekdays=None):
        """(n_users, 2) posterior means of the steering strengths."""
        return self.report(X, weekdays).strengths

    def score(self, X, y=None, weekdays=None):
        """Mean per-user ELBO (higher is better)."""
        return self.report(X, weekdays).elbo_per_user

    def steering_deviation(self):
        """The learned deviation curves as a SteeringDeviation."""
        self._check_fitted()
        return inf.realize_beta(self.params_, self.config_.day0_index)


class NaiveRateModel(BaseEstimator):
    """Pooled per-day ZIP rates, no latent structure; the reference floor."""

    def __init__(self, day0_index=35):
        self.day0_index = day0_index

    def _as_trajectories(self, X, weekdays=None):
        counts, wd, ids, day0 = unpack_dataset(X, weekdays)
        day0 = self.day0_index if day0 is None else day0
        return [ActionTrajectory(ids[i], counts[i], weekday_of_day0=int(wd[i]),
                                 day0_index=day0) for i in range(len(ids))]

    def fit(self, X, y=None, weekdays=None):
        data = self._as_trajectories(X, weekdays)
        self.rates_ = inf.naive_baseline(data)
        self.n_features_in_ = len(self.rates_.alpha)
        return self

    def predict(self, X, weekdays=None):
        """Expected counts per user-day under the pooled rates."""
        if not hasattr(self, "rates_"):
            raise NotFittedError("fit this model before calling predict/score")
        data = self._as_trajectories(X, weekdays)
        return np.tile(self.rates_.expected_counts, (len(data), 1))

    def score(self, X, y=None, weekdays=None):
        """Mean per-user log-likelihood under the pooled rates."""
        if not hasattr(self, "rates_"):
            raise NotFittedError("fit this model before calling predict/score")
        data = self._as_trajectories(X, weekdays)
        ll, _ = inf.score_day_rates(self.rates_, data)
        return ll
