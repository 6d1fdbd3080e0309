"""scikit-learn compatible classifier around :class:`ArrhythmiNet`."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigError
from .ingest.dataset import CLASS_NAMES
from .models import build
from .nn.optim import OptimizerConfig
from .serialization import deserialize, serialize
from .training import TrainConfig, train
from .wavelet import normalize


class ArrhythmiNetClassifier(ClassifierMixin, BaseEstimator):
    """Five-class beat classifier.

    ``X`` is ``(n, 360)`` beats. ``y`` holds class indices 0..4 or the class
    names in ``CLASS_NAMES``; predictions come back in the same form.
    With ``normalize_beats`` each beat is z-scored before the network sees it.
    """

    def __init__(self, variant="v1", epochs=30, batches_per_epoch=500, batch_size=48,
                 optimizer="adam", learning_rate=1e-3, seed=0, normalize_beats=False):
        self.variant = variant
        self.epochs = epochs
        self.batches_per_epoch = batches_per_epoch
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.seed = seed
        self.normalize_beats = normalize_beats

    def _prepare(self, X):
        X = np.asarray(X, dtype=np.float32)
        if X.ndim == 3:
            X = X[:, 0, :]
        return normalize(X).astype(np.float32) if self.normalize_beats else X

    def _encode(self, y):
        y = np.asarray(y)
        if y.dtype.kind in "US" or y.dtype == object:
            lookup = {name: i for i, name in enumerate(CLASS_NAMES)}
            unknown = sorted(set(y.tolist()) - set(lookup))
            if unknown:
                raise ConfigError(f"unknown class labels {unknown}; expected {CLASS_NAMES}")
            self.classes_ = np.array(CLASS_NAMES)
            return np.array([lookup[v] for v in y])
        self.classes_ = np.arange(len(CLASS_NAMES))
        return y.astype(np.int64)

    def fit(self, X, y):
        codes = self._encode(y)
        config = TrainConfig(
            epochs=self.epochs,
            batches_per_epoch=self.batches_per_epoch,
            batch_size=self.batch_size,
            optimizer=OptimizerConfig(name=self.optimizer, learning_rate=self.learning_rate),
            seed=self.seed,
            variant=self.variant,
        )
        self.spec_, self.model_ = build(self.variant, seed=self.seed)
        _, self.history_ = train(self.model_, self._prepare(X), codes, config)
        self.n_features_in_ = self.spec_.input_length
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict_proba(self._prepare(X))

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]

    def save(self, path):
        check_is_fitted(self, "model_")
        return serialize(self.model_, path)

    @classmethod
    def load(cls, path, **params):
        """Wrap a saved model file; predictions are class indices."""
        model = deserialize(path)
        est = cls(variant=model.spec.variant, **params)
        est.model_, est.spec_ = model, model.spec
        est.classes_ = np.arange(len(CLASS_NAMES))
        est.n_features_in_ = model.spec.input_length
        return est
