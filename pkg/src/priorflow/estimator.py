"""scikit-learn style front end for the conditional flow."""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, DensityMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import flow
from .control import ControlSpec, controlled_sample, extension_offset, parse_weights
from .priors import DiagonalGaussian
from .synthlab import LatentDataset


def _check_labels(y, n):
    y = np.asarray(y, dtype=object).ravel()
    if y.shape != (n,):
        raise ValueError(f"y has {y.shape[0]} labels for {n} samples")
    return np.array([str(v) for v in y], dtype=object)


class PriorFlow(BaseEstimator, TransformerMixin, DensityMixin):
    """Affine-coupling flow mapping each attribute's latent distribution to a diagonal Gaussian.

    ``fit(X, y)`` learns the shared invertible map and one prior per label in
    ``y``. ``transform`` maps latent points to prior space, ``inverse_transform``
    maps back, ``score_samples`` gives log-densities and ``sample`` draws
    controlled latent points.

    Parameters
    ----------
    n_layers, hidden_width, hidden_layers, activation, scale_clamp
        Architecture of the coupling stack and its subnets.
    epochs, batch_size, learning_rate, clip_norm
        Adam training schedule; batches hold equal counts per attribute.
    prior_mode : {"learned", "fixed"}
        Whether prior means/stds are trained jointly with the flow. Either way
        they start at each attribute's empirical mean and std.
    random_state : int
        Seed for initialisation and batching.
    """

    def __init__(self, n_layers=6, hidden_width=64, hidden_layers=2, activation="tanh",
                 scale_clamp=2.0, epochs=100, batch_size=256, learning_rate=1e-3,
                 prior_mode="learned", clip_norm=10.0, random_state=0):
        self.n_layers = n_layers
        self.hidden_width = hidden_width
        self.hidden_layers = hidden_layers
        self.activation = activation
        self.scale_clamp = scale_clamp
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.prior_mode = prior_mode
        self.clip_norm = clip_norm
        self.random_state = random_state

    def _train_config(self):
        return flow.TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.learning_rate,
            seed=self.random_state, prior_mode=self.prior_mode, clip_norm=self.clip_norm,
        )

    def fit(self, X, y):
        X = check_array(X, ensure_min_samples=2, ensure_min_features=2)
        y = _check_labels(y, X.shape[0])
        data = LatentDataset(X, y)
        cfg = self._train_config()
        model = flow.build_flow(
            X.shape[1], data.attributes, n_layers=self.n_layers,
            hidden=(self.hidden_width,) * self.hidden_layers, activation=self.activation,
            scale_clamp=self.scale_clamp, seed=self.random_state,
        )
        for a in data.attributes:
            xa = X[y == a]
            std = xa.std(axis=0) if len(xa) > 1 else np.ones(X.shape[1])
            model.priors[a] = DiagonalGaussian(xa.mean(axis=0), np.where(std > 0, std, 1.0))
        self.flow_, self.loss_curve_ = flow.train(model, data, cfg)
        self._set_fitted_attrs()
        return self

    def _set_fitted_attrs(self):
        self.classes_ = np.array(self.flow_.attributes, dtype=object)
        self.n_features_in_ = self.flow_.dim

    @classmethod
    def from_model(cls, model: flow.FlowModel, **params):
        """Wrap an already trained :class:`FlowModel`."""
        est = cls(**params)
        est.flow_ = model
        est.loss_curve_ = []
        est._set_fitted_attrs()
        return est

    def _validate(self, X):
        check_is_fitted(self, "flow_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, model expects {self.n_features_in_}")
        return X

    def transform(self, X):
        X = self._validate(X)
        return flow.flow_forward(self.flow_, X)[0]

    def inverse_transform(self, Z):
        Z = self._validate(Z)
        return flow.flow_inverse(self.flow_, Z)

    def log_prob_table(self, X):
        """``log p(x | a)`` for every attribute, columns ordered as ``classes_``."""
        return flow.log_prob_all(self.flow_, self._validate(X))

    def score_samples(self, X, y=None):
        """Conditional log-density ``log p(x|y)``; marginal under uniform ``p(a)`` if ``y`` is None."""
        table = self.log_prob_table(X)
        if y is None:
            return logsumexp(table, axis=1) - np.log(table.shape[1])
        if isinstance(y, str):
            y = [y] * table.shape[0]
        y = _check_labels(y, table.shape[0])
        idx = flow._label_index(self.flow_, y)
        return table[np.arange(len(idx)), idx]

    def score(self, X, y=None):
        return float(np.mean(self.score_samples(X, y)))

    def predict_log_proba(self, X):
        table = self.log_prob_table(X)
        return table - logsumexp(table, axis=1, keepdims=True)

    def predict_proba(self, X):
        return np.exp(self.predict_log_proba(X))

    def predict(self, X):
        return self.classes_[np.argmax(self.log_prob_table(X), axis=1)]

    def control_spec(self, weights, lam=1.0, offset=0.0, away_from=None) -> ControlSpec:
        """Build a :class:`ControlSpec` from ``"a=0.7,b=0.3"``, a dict, or a single attribute.

        A non-zero scalar ``offset`` moves the centre that far away from
        ``away_from`` (default: the lowest-weighted term) toward the
        highest-weighted term.
        """
        check_is_fitted(self, "flow_")
        if isinstance(weights, str):
            terms = parse_weights(weights)
        elif isinstance(weights, dict):
            terms = list(weights.items())
        else:
            terms = list(weights)
        for a, _ in terms:
            self.flow_.prior(a)
        center = None
        if np.ndim(offset) > 0:
            center = np.asarray(offset, dtype=float)
        elif offset:
            lead = max(terms, key=lambda t: t[1])[0]
            if away_from is None:
                if len(terms) < 2:
                    raise ValueError("a scalar offset on a single attribute needs away_from")
                away_from = min(terms, key=lambda t: t[1])[0]
            center = extension_offset(self.flow_, lead, away_from, float(offset))
        return ControlSpec(tuple(terms), lam, center)

    def sample(self, n_samples=1, weights=None, lam=1.0, offset=0.0, away_from=None,
               random_state=None):
        """Controlled latent samples; ``weights=None`` mixes attributes uniformly."""
        check_is_fitted(self, "flow_")
        if weights is None:
            k = len(self.classes_)
            weights = [(a, 1.0 / k) for a in self.classes_]
        spec = self.control_spec(weights, lam, offset, away_from)
        rng = np.random.default_rng(random_state)
        return controlled_sample(self.flow_, spec, n_samples, rng)

    def save(self, path):
        check_is_fitted(self, "flow_")
        flow.save_model(self.flow_, path, estimator=self.get_params())

    @classmethod
    def load(cls, path):
        model, meta = flow.load_model(path, with_meta=True)
        return cls.from_model(model, **meta.get("estimator", {}))
