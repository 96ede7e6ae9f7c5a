"""Gradient estimates from dyadic states, reference gradients, optimizers, training."""

from dataclasses import dataclass, field
import logging

import numpy as np

from .errors import AbortedDiverged, DivergedState
from .inference import InferenceReport, run_inference
from .losses import one_hot
from .model import forward

log = logging.getLogger(__name__)


def weight_gradient(state, cfg, params=None):
    """Descent direction ``-(1/beta) delta_{k+1} sbar_k^T`` for every weight ``W_k``.

    ``state`` is a :class:`DyadicState` or an :class:`InferenceReport`. For a
    batch of states the per-sample outer products are averaged. ``params`` is
    only needed in augmented-bias mode, where ``sbar_k`` gets a trailing 1.
    """
    if isinstance(state, InferenceReport):
        if state.diverged:
            raise DivergedState("cannot estimate a gradient from diverged inference")
        state = state.state
    grads = []
    for k in range(state.depth):
        d = state.delta(k + 1)
        s = state.mean(k)
        if params is not None:
            s = params.layer_input(k, s)
        if d.ndim == 1:
            g = np.outer(d, s)
        else:
            g = d.T @ s / d.shape[0]
        grads.append(-g / cfg.beta)
    return grads


def backprop_oracle(params, x, y, loss):
    """Reverse-mode gradient of the mean unweighted loss over the batch."""
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    X = x if batched else x[None, :]
    Y = np.asarray(y, dtype=np.float64)
    Y = Y if Y.ndim == 2 else Y[None, :]
    n = X.shape[0]

    inputs, pre = [X], []
    s = X
    for i, spec in enumerate(params.layers):
        a = params.propagate(i, s)
        pre.append(a)
        s = spec.activation(a)
        inputs.append(s)

    grads = [None] * params.depth
    err = loss.grad(inputs[-1], Y) / n
    for i in range(params.depth - 1, -1, -1):
        err = err * params.layers[i].activation.derivative(pre[i])
        grads[i] = err.T @ params.layer_input(i, inputs[i])
        if i > 0:
            err = params.feedback(i, err)
    return grads


def mean_loss(params, x, y, loss):
    out = forward(params, x)[-1]
    return float(np.mean(loss.value(out, y)))


def finite_difference_oracle(params, x, y, loss, h=1e-5):
    """Central differences of the mean unweighted loss, one weight entry at a time."""
    if not h > 0:
        raise ValueError("step size must be positive")
    work = params.copy()
    grads = []
    for W in work.weights:
        G = np.zeros_like(W)
        for idx in np.ndindex(W.shape):
            orig = W[idx]
            W[idx] = orig + h
            up = mean_loss(work, x, y, loss)
            W[idx] = orig - h
            down = mean_loss(work, x, y, loss)
            W[idx] = orig
            G[idx] = (up - down) / (2.0 * h)
        grads.append(G)
    return grads


class Adam:
    """Adam with bias correction; moments are created on the first step."""

    def __init__(self, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params, grads):
        if self.m is None:
            self.m = [np.zeros_like(W) for W in params.weights]
            self.v = [np.zeros_like(W) for W in params.weights]
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for W, g, m, v in zip(params.weights, grads, self.m, self.v):
            if g.shape != W.shape:
                raise ValueError(f"gradient shape {g.shape} does not match weight shape {W.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            W -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return params


class SGDMomentum:
    """Heavy-ball SGD; weight decay is added to the gradient before the momentum buffer."""

    def __init__(self, lr=0.01, momentum=0.9, weight_decay=0.0):
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buf = None
        self.t = 0

    def step(self, params, grads):
        if self.buf is None:
            self.buf = [np.zeros_like(W) for W in params.weights]
        self.t += 1
        for W, g, b in zip(params.weights, grads, self.buf):
            if g.shape != W.shape:
                raise ValueError(f"gradient shape {g.shape} does not match weight shape {W.shape}")
            b *= self.momentum
            b += g + self.weight_decay * W
            W -= self.lr * b
        return params


def make_optimizer(kind, lr, momentum=0.9, weight_decay=0.0):
    if kind == "adam":
        return Adam(lr=lr)
    if kind in ("sgd", "sgd_momentum"):
        return SGDMomentum(lr=lr, momentum=momentum, weight_decay=weight_decay)
    raise ValueError(f"unknown optimizer {kind!r}")


def optimizer_step(opt, params, grads):
    return opt.step(params, grads)


def accuracy(params, inputs, labels):
    out = forward(params, inputs)[-1]
    return float(np.mean(np.argmax(out, axis=-1) == labels))


@dataclass
class History:
    """Per-batch rows and per-epoch summaries of a training run."""

    batches: list = field(default_factory=list)
    epochs: list = field(default_factory=list)

    @property
    def diverged(self):
        return any(rec["diverged"] for rec in self.batches)


def train(dataset, params, cfg, loss, opt, epochs, batch_size, seed, test=None,
          grad_angle_every=0, lipschitz_every_epoch=False, on_batch=None):
    """Train ``params`` in place with dyadic-state gradient estimates.

    Inference runs per sample (batched rows never interact) and the minibatch
    gradient is the mean of the per-sample estimates. A batch whose inference
    diverges is skipped; if every batch of an epoch diverges,
    :class:`AbortedDiverged` is raised carrying the history so far.

    Every batch row holds the mean unweighted loss over the full training set
    after the update, so runs with ``lr = 0`` log a constant loss.
    """
    from .analysis import grad_angle, grad_l2_diff, lipschitz_estimate

    inputs = np.asarray(dataset.inputs, dtype=np.float64)
    labels = np.asarray(dataset.labels)
    if len(inputs) == 0:
        raise ValueError("empty dataset")
    n_classes = params.layers[-1].out_dim
    targets = one_hot(labels, n_classes)
    rng = np.random.default_rng(seed)
    history = History()

    for epoch in range(epochs):
        order = rng.permutation(len(inputs))
        n_batches = (len(inputs) + batch_size - 1) // batch_size
        n_diverged = 0
        for b in range(n_batches):
            idx = order[b * batch_size:(b + 1) * batch_size]
            X, Y = inputs[idx], targets[idx]
            report = run_inference(params, X, Y, cfg, loss)
            row = {"epoch": epoch, "batch": b, "diverged": report.diverged,
                   "angles": None, "l2diff": None, "test_acc": np.nan, "lipschitz": np.nan}
            if report.diverged:
                n_diverged += 1
            else:
                grads = weight_gradient(report, cfg, params)
                if grad_angle_every and b % grad_angle_every == 0:
                    bp = backprop_oracle(params, X, Y, loss)
                    row["angles"] = grad_angle(grads, bp)
                    row["l2diff"] = grad_l2_diff(grads, bp)
                opt.step(params, grads)
            row["train_loss"] = mean_loss(params, inputs, targets, loss)
            last = b == n_batches - 1
            if last:
                if test is not None:
                    row["test_acc"] = accuracy(params, test.inputs, test.labels)
                if lipschitz_every_epoch:
                    row["lipschitz"] = lipschitz_estimate(params)
            history.batches.append(row)
            if on_batch is not None:
                on_batch(row)

        summary = {
            "epoch": epoch,
            "train_loss": history.batches[-1]["train_loss"],
            "train_acc": accuracy(params, inputs, labels),
            "test_acc": history.batches[-1]["test_acc"],
            "lipschitz": history.batches[-1]["lipschitz"],
            "diverged_batches": n_diverged,
        }
        history.epochs.append(summary)
        log.info("epoch %d: loss %.4f train acc %.4f test acc %.4f diverged batches %d",
                 epoch, summary["train_loss"], summary["train_acc"], summary["test_acc"], n_diverged)
        if n_diverged == n_batches:
            raise AbortedDiverged(f"inference diverged on every batch of epoch {epoch}", history)
    return history
