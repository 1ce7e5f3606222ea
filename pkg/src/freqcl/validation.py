"""Input checks shared by the estimators."""

import numpy as np
from sklearn.utils.validation import check_array

from .errors import ShapeError


def check_images(X, dtype=np.float64, even=True):
    """Return ``X`` as a finite ``(N, C, H, W)`` float array.

    A single ``(C, H, W)`` image is promoted to a batch of one.
    """
    X = check_array(X, allow_nd=True, dtype=dtype, ensure_all_finite=True, ensure_min_samples=1)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4:
        raise ShapeError(f"expected images shaped (N, C, H, W), got {X.shape}")
    if even and (X.shape[2] % 2 or X.shape[3] % 2):
        raise ShapeError(f"image height and width must be even, got {X.shape[2]}x{X.shape[3]}")
    return X


def check_labels(y, n_samples, n_classes=None):
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != n_samples:
        raise ShapeError(f"expected {n_samples} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("labels must be integer class ids")
    y = y.astype(np.int64)
    if y.size and y.min() < 0:
        raise ValueError("labels must be non-negative")
    if n_classes is not None and y.size and y.max() >= n_classes:
        raise ValueError(f"label {y.max()} outside the {n_classes} declared classes")
    return y
