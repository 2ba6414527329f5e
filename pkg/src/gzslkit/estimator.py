"""Scikit-learn flavored front end.

GzslClassifier wraps the full pipeline (adversarial generator, embedding
nets, synthetic balancing, final softmax) behind fit/predict.  The class
descriptor table rides along as a fit parameter since it is per-problem
side information, not a hyperparameter.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .data import FeatureDataset, SemanticTable, make_dataset
from .errors import StateError
from .trainer import (
    TrainConfig, classifier_inputs, evaluate, fit_final_classifier, train,
)
from .validation import as_float_matrix, as_label_vector


class GzslClassifier(BaseEstimator, ClassifierMixin):
    """Generalized zero-shot classifier over precomputed feature vectors.

    fit() sees features for seen classes only; descriptors for every class
    (seen and unseen) arrive via the ``semantic`` fit parameter.  predict()
    then scores over the full label set 1..S+U.
    """

    def __init__(self, mode="ce_full", batch_size=256, epochs=50, d_h=2048,
                 d_z=512, d_noise=None, hidden=4096, tau_e=0.1, tau_s=0.1,
                 margin_delta=1.0, n_syn_per_unseen=100, d_steps_per_g_step=1,
                 lr=1e-4, beta1=0.5, beta2=0.999, seed=0, sampler="random",
                 P=1, K=50, nonsaturating=False):
        self.mode = mode
        self.batch_size = batch_size
        self.epochs = epochs
        self.d_h = d_h
        self.d_z = d_z
        self.d_noise = d_noise
        self.hidden = hidden
        self.tau_e = tau_e
        self.tau_s = tau_s
        self.margin_delta = margin_delta
        self.n_syn_per_unseen = n_syn_per_unseen
        self.d_steps_per_g_step = d_steps_per_g_step
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.seed = seed
        self.sampler = sampler
        self.P = P
        self.K = K
        self.nonsaturating = nonsaturating

    def _config(self) -> TrainConfig:
        return TrainConfig(**self.get_params()).validate()

    def fit(self, X, y, semantic: SemanticTable):
        """Train on seen-class features X, labels y (ids 1..S) and the full
        descriptor table."""
        cfg = self._config()
        X = as_float_matrix(X, "X")
        y = as_label_vector(y, "y", n_rows=X.shape[0])
        ds = make_dataset(semantic, X, y)
        self.bundle_, self.log_ = train(ds, cfg)
        self.classifier_ = fit_final_classifier(self.bundle_, ds, cfg)
        self.semantic_ = semantic
        self.classes_ = np.arange(1, semantic.n_classes + 1, dtype=np.int64)
        self.n_features_in_ = X.shape[1]
        return self

    def _require_fitted(self):
        if not hasattr(self, "classifier_"):
            raise StateError("estimator is not fitted; call fit first")

    def _inputs(self, X) -> np.ndarray:
        X = as_float_matrix(X, "X", n_cols=self.n_features_in_)
        return classifier_inputs(self.bundle_, X, self.classifier_.space)

    def predict(self, X) -> np.ndarray:
        self._require_fitted()
        return self.classifier_.predict(self._inputs(X))

    def predict_proba(self, X) -> np.ndarray:
        self._require_fitted()
        return self.classifier_.predict_proba(self._inputs(X))

    def decision_function(self, X) -> np.ndarray:
        self._require_fitted()
        return self.classifier_.scores(self._inputs(X))

    def transform(self, X) -> np.ndarray:
        """Map features into the learned embedding space."""
        self._require_fitted()
        X = as_float_matrix(X, "X", n_cols=self.n_features_in_)
        return self.bundle_.embedder.net.forward(X)

    def evaluate_gzsl(self, dataset: FeatureDataset):
        """Score a dataset with test partitions; returns an EvalReport."""
        self._require_fitted()
        return evaluate(self.classifier_, self.bundle_, dataset, self._config())
