"""Input checks shared by the estimator and the CLI."""

import numpy as np
from sklearn.utils.validation import check_array, check_X_y


def check_features(X, n_features=None):
    """Return ``X`` as a finite float64 2-D array, optionally of fixed width."""
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"X has {X.shape[1]} features, expected {n_features}")
    return X


def check_open_set_labels(y, n_keywords=None):
    """Labels must be integers in ``0..C``; 0 is the non-keyword class."""
    y = np.asarray(y)
    if y.ndim != 1:
        y = y.ravel()
    if y.size and not np.all(np.equal(np.mod(y, 1), 0)):
        raise ValueError("labels must be integers")
    y = y.astype(np.int64)
    if y.size and y.min() < 0:
        raise ValueError("labels must be >= 0")
    if n_keywords is not None and y.size and y.max() > n_keywords:
        raise ValueError(f"label {y.max()} exceeds keyword count {n_keywords}")
    return y


def check_training_data(X, y):
    X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
    y = check_open_set_labels(y)
    if not np.any(y != 0):
        raise ValueError("training data has no keyword samples")
    return X, y
