"""Target losses without the nudging weight.

The inference and learning code multiplies by ``beta`` itself, so
``LeastSquares().value(s, y)`` is ``|s - y|^2 / 2`` and the nudged loss is
``beta * value``. Targets are dense (one-hot for classification).
"""

import numpy as np


def softmax(s):
    z = s - np.max(s, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def logsumexp(s):
    m = np.max(s, axis=-1, keepdims=True)
    return (m + np.log(np.sum(np.exp(s - m), axis=-1, keepdims=True)))[..., 0]


class LeastSquares:
    name = "ls"

    def value(self, s, y):
        r = np.asarray(s) - y
        return 0.5 * np.sum(r * r, axis=-1)

    def grad(self, s, y):
        return np.asarray(s) - y

    def __repr__(self):
        return "LeastSquares()"


class CrossEntropy:
    """Softmax cross-entropy; the softmax is part of the loss, never a layer."""

    name = "ce"

    def value(self, s, y):
        s = np.asarray(s, dtype=np.float64)
        return logsumexp(s) - np.sum(y * s, axis=-1)

    def grad(self, s, y):
        return softmax(np.asarray(s, dtype=np.float64)) - y

    def __repr__(self):
        return "CrossEntropy()"


def make_loss(name):
    if name in ("ls", "least_squares", "least-squares"):
        return LeastSquares()
    if name in ("ce", "cross_entropy", "cross-entropy"):
        return CrossEntropy()
    raise ValueError(f"unknown loss {name!r}")


def one_hot(labels, n_classes):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros(labels.shape + (n_classes,))
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out
