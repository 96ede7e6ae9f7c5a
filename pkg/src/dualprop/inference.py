"""Dyadic-state inference: DP, the adjoint variant DP^T and the damped LPOM solver.

Every hidden unit keeps two compartments ``s_k^+`` and ``s_k^-``. Upstream
layers see the weighted mean ``alpha s^+ + (1 - alpha) s^-``; downstream
layers see the difference ``s^+ - s^-``. Layers are numbered ``0..L`` with
layer 0 the (clamped) input and ``W_{k-1}`` feeding layer ``k``, so
``params.weights[k - 1]`` is ``W_{k-1}``.

States are numpy arrays holding either a single sample or a batch with one
sample per row; samples never interact, so a batch run is the same as running
each sample on its own.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NoConvergence, OutputSubproblemNonconvex, UnsupportedActivation
from .linalg import gram_norm
from .losses import CrossEntropy, LeastSquares, softmax

SCHEMES = ("dp", "dpt", "dp-stabilized")

CE_TOL = 1e-10
CE_MAX_STEPS = 500


@dataclass(frozen=True)
class Schedule:
    """Order of layer visits.

    ``sweep``: one input-to-output pass, the output update, one output-to-input
    pass. ``sweeps`` repeats that ``n`` times. ``forward`` does ``n``
    input-to-output passes, each layer reading its neighbours' latest values.
    """

    kind: str = "sweep"
    n: int = 1

    def __post_init__(self):
        if self.kind not in ("sweep", "sweeps", "forward"):
            raise ValueError(f"unknown schedule {self.kind!r}")
        if self.n < 1:
            raise ValueError("schedule needs at least one pass")

    @classmethod
    def parse(cls, text):
        text = text.strip()
        if text in ("sweep", "single_sweep"):
            return cls("sweep", 1)
        kind, _, n = text.partition(":")
        if kind in ("sweeps", "repeated_sweeps"):
            return cls("sweeps", int(n))
        if kind in ("forward", "forward_passes"):
            return cls("forward", int(n))
        raise ValueError(f"cannot parse schedule {text!r}")

    def __str__(self):
        return "sweep" if self.kind == "sweep" else f"{self.kind}:{self.n}"


@dataclass
class NudgeConfig:
    """Knobs for one inference run.

    ``alpha`` is a float or a per-layer list ``[alpha_1, ..., alpha_L]``.
    ``damping`` is ``"auto"`` (``||W_k^T W_k||`` from ``damping_steps`` power
    iterations) or an explicit non-negative number; it is only used by the
    ``dp-stabilized`` scheme.
    """

    alpha: object = 0.5
    beta: float = 0.5
    scheme: str = "dpt"
    schedule: Schedule = field(default_factory=Schedule)
    damping: object = "auto"
    damping_steps: int = 5
    divergence_threshold: float = 1e6

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if isinstance(self.schedule, str):
            self.schedule = Schedule.parse(self.schedule)
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        alphas = self.alpha if isinstance(self.alpha, (list, tuple)) else [self.alpha]
        if any(not 0.0 <= a <= 1.0 for a in alphas):
            raise ValueError("alpha must lie in [0, 1]")
        if self.damping_steps < 1:
            raise ValueError("damping_steps must be >= 1")
        if self.damping != "auto" and float(self.damping) < 0:
            raise ValueError("explicit damping must be non-negative")

    def alpha_at(self, k):
        if isinstance(self.alpha, (list, tuple)):
            return float(self.alpha[k - 1])
        return float(self.alpha)

    def alphas(self, depth):
        if isinstance(self.alpha, (list, tuple)):
            if len(self.alpha) != depth:
                raise ValueError(f"per-layer alpha needs {depth} entries, got {len(self.alpha)}")
            return [float(a) for a in self.alpha]
        return [float(self.alpha)] * depth

    def validate(self, depth, loss):
        self.alphas(depth)
        if self.scheme in ("dp", "dp-stabilized") and isinstance(loss, LeastSquares):
            if (1.0 - self.alpha_at(depth)) * self.beta >= 1.0:
                raise OutputSubproblemNonconvex(
                    f"(1 - alpha) * beta = {(1.0 - self.alpha_at(depth)) * self.beta} >= 1 leaves the output subproblem without curvature")
        if self.scheme == "dp-stabilized":
            levels = set(self.alphas(depth))
            if len(levels) != 1 or levels.pop() not in (0.0, 0.5, 1.0):
                raise ValueError("dp-stabilized needs one global alpha in {0, 1/2, 1}")


@dataclass
class DyadicState:
    """Paired compartments per layer; index 0 holds the input in both lists."""

    plus: list
    minus: list
    alphas: list

    @classmethod
    def from_states(cls, x, states, alphas):
        x = np.asarray(x, dtype=np.float64)
        plus = [x] + [np.array(s, dtype=np.float64) for s in states]
        minus = [x] + [np.array(s, dtype=np.float64) for s in states]
        return cls(plus, minus, [1.0] + list(alphas))

    @property
    def depth(self):
        return len(self.plus) - 1

    def mean(self, k, alpha=None):
        a = self.alphas[k] if alpha is None else alpha
        if k == 0:
            return self.plus[0]
        return a * self.plus[k] + (1.0 - a) * self.minus[k]

    def delta(self, k):
        return self.plus[k] - self.minus[k]

    def copy(self):
        return DyadicState([p.copy() for p in self.plus], [m.copy() for m in self.minus], list(self.alphas))


@dataclass
class InferenceReport:
    state: DyadicState
    iterations: int
    residual: float
    diverged: bool
    max_state_norm: float = 0.0


def _bottom_up(k, state, params):
    return params.propagate(k - 1, state.mean(k - 1))


def _feedback(k, state, params):
    return params.feedback(k, state.delta(k + 1))


def dp_hidden_update(k, state, params, cfg):
    """Original DP rule: feedback ``alpha`` on ``s^+`` and ``-(1 - alpha)`` on ``s^-``."""
    if not 1 <= k <= params.depth - 1:
        raise ValueError(f"hidden layer index {k} outside 1..{params.depth - 1}")
    a = _bottom_up(k, state, params)
    d = _feedback(k, state, params)
    alpha = state.alphas[k]
    f = params.activation(k)
    return f(a + alpha * d), f(a - (1.0 - alpha) * d)


def dpt_hidden_update(k, state, params, cfg):
    """Adjoint rule: same as DP with the feedback weights ``alpha`` and ``1 - alpha`` swapped."""
    if not 1 <= k <= params.depth - 1:
        raise ValueError(f"hidden layer index {k} outside 1..{params.depth - 1}")
    a = _bottom_up(k, state, params)
    d = _feedback(k, state, params)
    alpha = state.alphas[k]
    f = params.activation(k)
    return f(a + (1.0 - alpha) * d), f(a - alpha * d)


def _output_alpha(cfg):
    return float(cfg.alpha[-1]) if isinstance(cfg.alpha, (list, tuple)) else float(cfg.alpha)


def _ce_nudged(a, y, weight):
    """Solve ``argmin_s weight * CE(s, y) + |s|^2 / 2 - s.a`` for either sign of ``weight``.

    The stationarity condition is ``s = a - weight * (softmax(s) - y)``. The
    softmax Jacobian has eigenvalues in ``[0, 1/2]``, which gives the step
    sizes below: a damped step for positive weights, a plain step otherwise.
    """
    if weight * -0.5 >= 1.0:
        raise OutputSubproblemNonconvex(f"negative nudge {-weight} leaves the cross-entropy output subproblem nonconvex")
    eta = 1.0 / (1.0 + 0.25 * weight) if weight > 0 else 1.0
    s = np.array(a, dtype=np.float64)
    for _ in range(CE_MAX_STEPS):
        target = a - weight * (softmax(s) - y)
        step = eta * (target - s)
        s = s + step
        if np.max(np.abs(step)) <= CE_TOL:
            return s
    raise NoConvergence("cross-entropy output subproblem did not converge")


def dp_output_update(a_L, y, cfg, loss, alpha=None):
    """Closed-form (least squares) or iterative (cross-entropy) DP output states."""
    if alpha is None:
        alpha = _output_alpha(cfg)
    beta = cfg.beta
    abar = 1.0 - alpha
    a_L = np.asarray(a_L, dtype=np.float64)
    if isinstance(loss, LeastSquares):
        if abar * beta >= 1.0:
            raise OutputSubproblemNonconvex(f"curvature 1 - (1 - alpha) beta = {1.0 - abar * beta} <= 0")
        s_plus = (a_L + alpha * beta * y) / (1.0 + alpha * beta)
        s_minus = (a_L - abar * beta * y) / (1.0 - abar * beta)
        return s_plus, s_minus
    if isinstance(loss, CrossEntropy):
        return _ce_nudged(a_L, y, alpha * beta), _ce_nudged(a_L, y, -abar * beta)
    raise TypeError(f"unsupported loss {loss!r}")


def dpt_output_update(a_L, y, cfg, loss, alpha=None):
    """``s^+ = a - (1 - alpha) g`` and ``s^- = a + alpha g`` with ``g = beta * loss'(a)``."""
    if alpha is None:
        alpha = _output_alpha(cfg)
    a_L = np.asarray(a_L, dtype=np.float64)
    g = cfg.beta * loss.grad(a_L, y)
    return a_L - (1.0 - alpha) * g, a_L + alpha * g


def stabilized_step(bottom_up, s, s_next, W_next_apply, W_next_back, f, f_next, damping):
    """One damped LPOM step for a single layer.

    ``Pi_C((bottom_up + W^T (s_next - f_next(W s)) + L s) / (1 + L))`` where
    ``W_next_apply(s) = W s`` and ``W_next_back(d) = W^T d``.
    """
    if not f.is_projection:
        raise UnsupportedActivation(f"damped update needs a projection activation, got {f.kind}")
    err = s_next - f_next(W_next_apply(s))
    return f.project((bottom_up + W_next_back(err) + damping * s) / (1.0 + damping))


def stabilized_update(k, chain, params, cfg, damping):
    """Damped update of layer ``k`` in a single-chain (LPOM-style) state list ``chain``."""
    if not 1 <= k <= params.depth - 1:
        raise ValueError(f"hidden layer index {k} outside 1..{params.depth - 1}")
    return stabilized_step(
        params.propagate(k - 1, chain[k - 1]),
        chain[k],
        chain[k + 1],
        lambda s: params.propagate(k, s),
        lambda d: params.feedback(k, d),
        params.activation(k),
        params.activation(k + 1),
        damping,
    )


def damping_values(params, cfg):
    """Damping ``L_k`` for every hidden layer ``k`` (index 0 unused)."""
    out = [0.0]
    for k in range(1, params.depth):
        if cfg.damping == "auto":
            W = params.weights[k]
            if params.bias_mode == "augmented":
                W = W[:, :-1]
            out.append(gram_norm(W, iters=cfg.damping_steps, seed=k))
        else:
            out.append(float(cfg.damping))
    return out


def _row_norms(a):
    a = np.asarray(a)
    if a.ndim == 1:
        return np.array([np.linalg.norm(a)])
    return np.linalg.norm(a, axis=-1)


class _Tracker:
    def __init__(self, threshold):
        self.threshold = threshold
        self.residual = 0.0
        self.max_norm = 0.0
        self.diverged = False
        self.nonfinite = False

    def record(self, old, new):
        with np.errstate(invalid="ignore", over="ignore"):
            for o, n in zip(old, new):
                if not np.all(np.isfinite(n)):
                    self.nonfinite = True
                    self.diverged = True
                    self.residual = np.inf
                    return
                self.residual = max(self.residual, float(np.max(_row_norms(n - o))))
                norm = float(np.max(_row_norms(n)))
                self.max_norm = max(self.max_norm, norm)
                if norm > self.threshold:
                    self.diverged = True


def _visit_order(depth, schedule):
    hidden = list(range(1, depth))
    if schedule.kind == "forward":
        one = hidden + [depth]
    else:
        one = hidden + [depth] + hidden[::-1]
    return one, (1 if schedule.kind == "sweep" else schedule.n)


def run_inference(params, x, y, cfg, loss):
    """Infer dyadic states for input ``x`` and target ``y``.

    States start from ``delta = 0`` (the free forward pass). The returned
    report flags divergence when any per-sample state norm exceeds
    ``cfg.divergence_threshold`` or a non-finite value shows up.
    """
    depth = params.depth
    cfg.validate(depth, loss)
    if params.layers[-1].activation.kind != "identity":
        raise ValueError("the output layer must be linear; absorb its activation into the loss")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    alphas = cfg.alphas(depth)
    zeros = [np.zeros(x.shape[:-1] + (w,)) for w in params.widths[1:]]
    state = DyadicState.from_states(x, zeros, alphas)

    if cfg.scheme == "dp-stabilized" and alphas[0] in (0.0, 1.0):
        return _run_stabilized(params, x, y, cfg, loss, state)

    hidden = dpt_hidden_update if cfg.scheme == "dpt" else dp_hidden_update
    output = dpt_output_update if cfg.scheme == "dpt" else dp_output_update
    order, passes = _visit_order(depth, cfg.schedule)
    tracker = None
    diverged = False
    done = 0
    for _ in range(passes):
        tracker = _Tracker(cfg.divergence_threshold)
        for k in order:
            old = (state.plus[k], state.minus[k])
            if k == depth:
                new = output(_bottom_up(k, state, params), y, cfg, loss, alpha=alphas[-1])
            else:
                new = hidden(k, state, params, cfg)
            state.plus[k], state.minus[k] = new
            tracker.record(old, new)
            if tracker.nonfinite:
                break
        done += 1
        diverged = diverged or tracker.diverged
        if tracker.nonfinite:
            break
    return InferenceReport(state, done, tracker.residual, diverged, tracker.max_norm)


def _run_stabilized(params, x, y, cfg, loss, state):
    """Damped single-chain inference for ``alpha`` in ``{0, 1}``.

    With ``alpha = 1`` the ``s^-`` compartments maximise in closed form to
    ``f_k(W_{k-1} s_{k-1}^+)`` and only ``s^+`` is iterated (LPOM); ``alpha = 0``
    is the mirror image with ``s^-`` iterated against a negatively nudged
    output.
    """
    from .model import forward

    depth = params.depth
    alpha = state.alphas[-1]
    chain = [x] + forward(params, x)
    damping = damping_values(params, cfg)
    order, passes = _visit_order(depth, cfg.schedule)
    tracker = None
    diverged = False
    done = 0
    for _ in range(passes):
        tracker = _Tracker(cfg.divergence_threshold)
        for k in order:
            old = chain[k]
            if k == depth:
                plus, minus = dp_output_update(params.propagate(depth - 1, chain[depth - 1]), y, cfg, loss, alpha=alpha)
                new = plus if alpha == 1.0 else minus
            else:
                new = stabilized_update(k, chain, params, cfg, damping[k])
            chain[k] = new
            tracker.record((old,), (new,))
            if tracker.nonfinite:
                break
        done += 1
        diverged = diverged or tracker.diverged
        if tracker.nonfinite:
            break

    for k in range(1, depth + 1):
        free = params.activation(k)(params.propagate(k - 1, chain[k - 1]))
        if alpha == 1.0:
            state.plus[k], state.minus[k] = chain[k], free
        else:
            state.plus[k], state.minus[k] = free, chain[k]
    return InferenceReport(state, done, tracker.residual, diverged, tracker.max_norm)


def dp_potential_value(params, state, cfg, loss, y):
    """Value of the DP network potential for the given dyadic state.

    ``alpha l(s_L^+) + (1 - alpha) l(s_L^-) + (1/beta) sum_k [E_k(s_k^+, sbar_{k-1}) - E_k(s_k^-, sbar_{k-1})]``
    with ``E_k(s, t) = G_k(s) - s.W_{k-1} t`` and ``l`` the unweighted loss, so
    the nudging strength enters only through ``1/beta``. The output layer uses
    ``G_L(s) = |s|^2 / 2``.
    """
    depth = params.depth
    alpha = state.alphas[depth]
    total = alpha * loss.value(state.plus[depth], y) + (1.0 - alpha) * loss.value(state.minus[depth], y)
    contrast = 0.0
    for k in range(1, depth + 1):
        f = params.activation(k)
        a = _bottom_up(k, state, params)
        sp, sm = state.plus[k], state.minus[k]
        if not (f.feasible(sp, tol=1e-12) and f.feasible(sm, tol=1e-12)):
            raise ValueError(f"state of layer {k} is infeasible for {f.kind}")
        # feasibility was checked with a tolerance, so evaluate the smooth part
        gp = 0.5 * np.sum(sp * sp, axis=-1) if f.is_projection else f.potential(sp)
        gm = 0.5 * np.sum(sm * sm, axis=-1) if f.is_projection else f.potential(sm)
        contrast = contrast + (gp - np.sum(sp * a, axis=-1)) - (gm - np.sum(sm * a, axis=-1))
    return total + contrast / cfg.beta
