"""Network architecture, activations and their convex potentials.

A layer ``k`` computes ``s_k = f_k(W_{k-1} s_{k-1})``. Every activation here is
the gradient of the convex conjugate of a resting potential ``G``, so the
inference code can use ``f`` (forward map), ``G`` and ``grad G = f^{-1}``
interchangeably. All state arrays may be a single vector or a batch with one
sample per row.
"""

from dataclasses import dataclass

import numpy as np

from .linalg import as_matrix, spectral_norm

CHECKPOINT_MAGIC = "DUALPROP v1"


@dataclass(frozen=True)
class Activation:
    """Element-wise activation ``f`` together with its potential ``G``.

    ``identity``, ``relu`` and ``hard-sigmoid`` are projections onto a convex
    set ``C`` (the real line, the non-negative orthant, the unit box), with
    ``G(s) = |s|^2 / 2 + indicator_C(s)``. ``leaky-relu`` is invertible and
    its potential is a piecewise quadratic instead.
    """

    kind: str
    slope: float = 0.01

    KINDS = ("identity", "relu", "leaky-relu", "hard-sigmoid")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown activation kind {self.kind!r}")
        if self.kind == "leaky-relu" and not 0.0 < self.slope <= 1.0:
            raise ValueError("leaky-relu slope must lie in (0, 1]")

    @classmethod
    def from_tag(cls, tag):
        if tag.startswith("leaky-relu"):
            _, _, slope = tag.partition(":")
            return cls("leaky-relu", float(slope) if slope else 0.01)
        return cls(tag)

    @property
    def tag(self):
        if self.kind == "leaky-relu":
            return f"leaky-relu:{self.slope!r}"
        return self.kind

    @property
    def is_projection(self):
        """True when ``f`` is the Euclidean projection onto its feasible set."""
        return self.kind != "leaky-relu"

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "identity":
            return x.copy()
        if self.kind == "relu":
            return np.maximum(x, 0.0)
        if self.kind == "hard-sigmoid":
            return np.clip(x, 0.0, 1.0)
        return np.where(x >= 0.0, x, self.slope * x)

    def project(self, x):
        if not self.is_projection:
            raise ValueError(f"{self.kind} is not a projection onto a convex set")
        return self(x)

    def derivative(self, x):
        """Derivative of ``f`` at pre-activation ``x`` (0 at the kinks of relu)."""
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "identity":
            return np.ones_like(x)
        if self.kind == "relu":
            return (x > 0.0).astype(np.float64)
        if self.kind == "hard-sigmoid":
            return ((x > 0.0) & (x < 1.0)).astype(np.float64)
        return np.where(x > 0.0, 1.0, self.slope)

    def feasible(self, s, tol=0.0):
        s = np.asarray(s, dtype=np.float64)
        if self.kind == "relu":
            return bool(np.all(s >= -tol))
        if self.kind == "hard-sigmoid":
            return bool(np.all((s >= -tol) & (s <= 1.0 + tol)))
        return True

    def potential(self, s):
        """``G(s)`` summed over the last axis; ``inf`` outside the feasible set."""
        s = np.asarray(s, dtype=np.float64)
        if self.kind == "leaky-relu":
            vals = np.where(s >= 0.0, 0.5 * s * s, 0.5 * s * s / self.slope)
            return vals.sum(axis=-1)
        val = 0.5 * np.sum(s * s, axis=-1)
        if not self.feasible(s):
            return np.full(np.shape(val), np.inf) if np.ndim(val) else np.inf
        return val

    def potential_grad(self, s):
        """``grad G(s) = f^{-1}(s)`` on the feasible set."""
        s = np.asarray(s, dtype=np.float64)
        if self.kind == "leaky-relu":
            return np.where(s >= 0.0, s, s / self.slope)
        return s.copy()

    def conjugate(self, a):
        """``G*(a)``, the convex conjugate, summed over the last axis."""
        fa = self(a)
        return np.sum(a * fa, axis=-1) - self.potential(fa)


IDENTITY = Activation("identity")
RELU = Activation("relu")


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: Activation = IDENTITY

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("layer dimensions must be >= 1")


def mlp_specs(widths, activation="relu"):
    """Layer specs for an MLP; hidden layers use ``activation``, the output is linear."""
    if len(widths) < 2:
        raise ValueError("need at least input and output widths")
    act = activation if isinstance(activation, Activation) else Activation.from_tag(activation)
    specs = []
    for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        last = i == len(widths) - 2
        specs.append(LayerSpec(int(n_in), int(n_out), IDENTITY if last else act))
    return specs


@dataclass
class NetworkParams:
    """Layer specs plus weights ``W_0 ... W_{L-1}``.

    With ``bias_mode="augmented"`` every layer input gets a constant 1 feature,
    so ``W_k`` has one extra column that acts as a bias.
    """

    layers: list
    weights: list
    bias_mode: str = "off"

    def __post_init__(self):
        if self.bias_mode not in ("off", "augmented"):
            raise ValueError(f"unknown bias mode {self.bias_mode!r}")
        if len(self.layers) != len(self.weights) or not self.layers:
            raise ValueError("need one weight matrix per layer")
        self.weights = [as_matrix(W) for W in self.weights]
        extra = 1 if self.bias_mode == "augmented" else 0
        for k, (spec, W) in enumerate(zip(self.layers, self.weights)):
            if W.shape != (spec.out_dim, spec.in_dim + extra):
                raise ValueError(f"weight {k} has shape {W.shape}, expected {(spec.out_dim, spec.in_dim + extra)}")
            if k > 0 and self.layers[k - 1].out_dim != spec.in_dim:
                raise ValueError(f"layer {k} input width does not match layer {k - 1} output width")

    @property
    def depth(self):
        return len(self.layers)

    @property
    def widths(self):
        return [self.layers[0].in_dim] + [spec.out_dim for spec in self.layers]

    def activation(self, k):
        """Activation ``f_k`` of layer ``k`` (1-based, as in the update equations)."""
        return self.layers[k - 1].activation

    def copy(self):
        return NetworkParams(list(self.layers), [W.copy() for W in self.weights], self.bias_mode)

    def layer_input(self, i, s):
        """Input that ``W_i`` multiplies: ``s``, or ``[s, 1]`` in augmented mode."""
        if self.bias_mode == "off":
            return s
        ones = np.ones(np.shape(s)[:-1] + (1,))
        return np.concatenate([s, ones], axis=-1)

    def propagate(self, i, s):
        """``W_i s`` for a vector or a batch of row vectors."""
        s = np.asarray(s, dtype=np.float64)
        W = self.weights[i]
        if s.shape[-1] != self.layers[i].in_dim:
            raise ValueError(f"dimension mismatch: weight {i} expects width {self.layers[i].in_dim}, got {s.shape[-1]}")
        if self.bias_mode == "off":
            return s @ W.T
        return s @ W[:, :-1].T + W[:, -1]

    def feedback(self, i, d):
        """``W_i^T d`` restricted to the non-bias inputs."""
        W = self.weights[i]
        if self.bias_mode == "augmented":
            W = W[:, :-1]
        return np.asarray(d, dtype=np.float64) @ W

    def product(self):
        """Accumulated weight matrix ``W_{L-1} ... W_0`` (bias columns dropped)."""
        mats = [W[:, :-1] if self.bias_mode == "augmented" else W for W in self.weights]
        P = mats[0]
        for W in mats[1:]:
            P = W @ P
        return P


def forward(params, x):
    """Plain forward pass. Returns ``[s_1, ..., s_L]``."""
    s = np.asarray(x, dtype=np.float64)
    if s.shape[-1] != params.layers[0].in_dim:
        raise ValueError(f"dimension mismatch: network expects input width {params.layers[0].in_dim}, got {s.shape[-1]}")
    states = []
    for i, spec in enumerate(params.layers):
        s = spec.activation(params.propagate(i, s))
        states.append(s)
    return states


def activation_apply(kind, x):
    return kind(x)


def init_weights(specs, seed, bias_mode="off"):
    """Glorot-uniform weights, bit-identical for a given seed. Bias columns start at 0."""
    if not specs:
        raise ValueError("need at least one layer")
    rng = np.random.default_rng(seed)
    weights = []
    for spec in specs:
        bound = np.sqrt(6.0 / (spec.in_dim + spec.out_dim))
        W = rng.uniform(-bound, bound, size=(spec.out_dim, spec.in_dim))
        if bias_mode == "augmented":
            W = np.hstack([W, np.zeros((spec.out_dim, 1))])
        weights.append(W)
    return NetworkParams(list(specs), weights, bias_mode)


def lipschitz_bound(params, iters=100, seed=0):
    return spectral_norm(params.product(), iters=iters, seed=seed)


def save_checkpoint(params, path):
    """Write the text header followed by the little-endian float64 weight payload.

    Layout::

        DUALPROP v1
        <layer count>
        <in> <out> <activation tag>      (one line per layer)
        bias <off|augmented>
        <row-major weights, W_0 first>
    """
    lines = [CHECKPOINT_MAGIC, str(params.depth)]
    lines += [f"{spec.in_dim} {spec.out_dim} {spec.activation.tag}" for spec in params.layers]
    lines.append(f"bias {params.bias_mode}")
    header = ("\n".join(lines) + "\n").encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        for W in params.weights:
            fh.write(np.ascontiguousarray(W, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()

    pos = 0

    def next_line():
        nonlocal pos
        end = raw.index(b"\n", pos)
        line = raw[pos:end].decode("ascii")
        pos = end + 1
        return line

    try:
        if next_line() != CHECKPOINT_MAGIC:
            raise ValueError("not a DUALPROP v1 checkpoint")
        depth = int(next_line())
        layers = []
        for _ in range(depth):
            n_in, n_out, tag = next_line().split()
            layers.append(LayerSpec(int(n_in), int(n_out), Activation.from_tag(tag)))
        key, mode = next_line().split()
    except ValueError as exc:
        raise ValueError(f"malformed checkpoint header: {exc}") from exc
    if key != "bias":
        raise ValueError("malformed checkpoint header: missing bias line")
    extra = 1 if mode == "augmented" else 0
    weights = []
    for spec in layers:
        count = spec.out_dim * (spec.in_dim + extra)
        nbytes = 8 * count
        if pos + nbytes > len(raw):
            raise ValueError("checkpoint payload is truncated")
        W = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(spec.out_dim, spec.in_dim + extra)
        weights.append(W.astype(np.float64))
        pos += nbytes
    if pos != len(raw):
        raise ValueError("checkpoint has trailing bytes")
    return NetworkParams(layers, weights, mode)
