"""scikit-learn compatible wrapper around :func:`openkws.training.train`."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .data import LabeledDataset
from .sampling import SamplerConfig
from .training import KWSModel, TrainConfig, default_sampler, evaluate, train
from .validation import check_features, check_open_set_labels, check_training_data


class OpenSetKWSClassifier(ClassifierMixin, BaseEstimator):
    """Open-set keyword classifier.

    Labels are integers ``0..C`` where ``0`` means "not a keyword". With the
    default ``loss="auc"`` the network is trained with the multi-class AUC
    loss and ``predict`` rejects a sample (returns 0) when its best keyword
    score is below a threshold calibrated on the validation data.

    Parameters
    ----------
    loss : {"auc", "cross_entropy", "hinge", "apfc"}
    delta : float
        Margin of the AUC/hinge losses; also offsets the threshold.
    hinge_variant : {"linear", "squared"}
    hidden_dims : tuple of int
    output_activation : {"softmax", "sigmoid", "identity"} or None
        None picks the per-loss default.
    sampler : {"random", "fixed_proportion", "apfc_ordered"} or None
    batch_size, keywords_per_batch, nonkeywords_per_batch : int
    epochs, lr, lr_decayed, lr_decay_epoch, weight_decay :
        Optimizer schedule; see :class:`~openkws.training.TrainConfig`.
    selection_metric : {"macro_f1", "closed_acc"}
    random_state : int
        Seeds network init, sampling and head init.

    Attributes
    ----------
    model_ : KWSModel
    threshold_ : float or None
    history_ : list of dict
        Per-epoch training log.
    best_epoch_ : int
    classes_ : ndarray of shape (C + 1,)
    n_features_in_ : int
    """

    def __init__(self, loss="auc", delta=0.3, hinge_variant="linear", hidden_dims=(64, 64),
                 output_activation=None, sampler=None, batch_size=128, keywords_per_batch=32,
                 nonkeywords_per_batch=64, epochs=60, lr=1e-3, lr_decayed=1e-4,
                 lr_decay_epoch=30, weight_decay=None, selection_metric="macro_f1",
                 random_state=0):
        self.loss = loss
        self.delta = delta
        self.hinge_variant = hinge_variant
        self.hidden_dims = hidden_dims
        self.output_activation = output_activation
        self.sampler = sampler
        self.batch_size = batch_size
        self.keywords_per_batch = keywords_per_batch
        self.nonkeywords_per_batch = nonkeywords_per_batch
        self.epochs = epochs
        self.lr = lr
        self.lr_decayed = lr_decayed
        self.lr_decay_epoch = lr_decay_epoch
        self.weight_decay = weight_decay
        self.selection_metric = selection_metric
        self.random_state = random_state

    def train_config(self):
        kind = self.sampler or default_sampler(self.loss).kind
        sampler = SamplerConfig(kind=kind, batch_size=self.batch_size,
                                keywords_per_batch=self.keywords_per_batch,
                                nonkeywords_per_batch=self.nonkeywords_per_batch)
        return TrainConfig(
            loss=self.loss, epochs=self.epochs, lr=self.lr, lr_decayed=self.lr_decayed,
            lr_decay_epoch=self.lr_decay_epoch, weight_decay=self.weight_decay,
            delta=self.delta, hinge_variant=self.hinge_variant, sampler=sampler,
            selection_metric=self.selection_metric, hidden_dims=tuple(self.hidden_dims),
            output_activation=self.output_activation, seed=int(self.random_state))

    def fit(self, X, y, X_val=None, y_val=None):
        """Train on ``(X, y)``; select epochs and calibrate on ``(X_val, y_val)``.

        Without validation data the training data is used for both.
        """
        X, y = check_training_data(X, y)
        train_set = LabeledDataset(X, y, split="train")
        if X_val is None:
            val_set = LabeledDataset(X, y, split="validation")
        else:
            X_val = check_features(X_val, X.shape[1])
            y_val = check_open_set_labels(y_val, int(y.max()))
            val_set = LabeledDataset(X_val, y_val, split="validation")
        result = train(train_set, val_set, self.train_config())
        self._set_model(result.model)
        self.history_ = result.log
        self.best_epoch_ = result.best_epoch
        self.skipped_batches_ = result.skipped_batches
        return self

    def _set_model(self, model):
        self.model_ = model
        self.threshold_ = model.threshold
        self.classes_ = np.arange(model.n_keywords + 1)
        self.n_features_in_ = model.network.input_dim

    def decision_function(self, X):
        """``(N, C)`` keyword confidence scores."""
        check_is_fitted(self, "model_")
        return self.model_.keyword_scores(check_features(X, self.n_features_in_))

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict(check_features(X, self.n_features_in_))

    def calibrate(self, X, y):
        """Recompute the rejection threshold on new validation data."""
        check_is_fitted(self, "model_")
        dataset = LabeledDataset(check_features(X, self.n_features_in_),
                                 check_open_set_labels(y, self.model_.n_keywords), split="validation")
        self.threshold_ = self.model_.calibrate(dataset)
        return self

    def evaluate(self, X, y, unseen_mask=None):
        """Full :class:`~openkws.metrics.MetricReport` on a labelled test set."""
        check_is_fitted(self, "model_")
        dataset = LabeledDataset(check_features(X, self.n_features_in_),
                                 check_open_set_labels(y, self.model_.n_keywords),
                                 unseen_mask, split="test")
        return evaluate(self.model_, dataset)

    def save(self, path):
        check_is_fitted(self, "model_")
        self.model_.save(path)

    @classmethod
    def load(cls, path):
        """Rebuild a fitted estimator from a checkpoint (training log is not stored)."""
        model = KWSModel.load(path)
        est = cls(loss=model.loss, delta=model.delta, hidden_dims=model.network.hidden_dims,
                  output_activation=model.network.output_activation)
        est._set_model(model)
        return est
