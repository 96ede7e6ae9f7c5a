"""Executable checks for the relaxation theory behind dual propagation.

Everything here is an exact oracle on quadratic problems: subproblems are
solved with dense linear solves, curvature conditions are checked through
eigenvalues of symmetric matrices.
"""

from dataclasses import asdict, dataclass, field
import json

import numpy as np

from .errors import IndefiniteSubproblem, SingularMatrix
from .linalg import spectral_norm

CURVATURE_MARGIN = 1e-10


# -- gradient comparison ---------------------------------------------------

def grad_angle(g1, g2):
    """Per-layer angle in degrees between two gradient lists; ``nan`` if a layer has zero norm."""
    out = []
    for a, b in zip(g1, g2, strict=True):
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0.0 or nb == 0.0:
            out.append(float("nan"))
            continue
        cos = np.clip(np.sum(a * b) / (na * nb), -1.0, 1.0)
        out.append(float(np.degrees(np.arccos(cos))))
    return out


def cosine_similarity(g1, g2):
    return [float(np.sum(a * b) / (np.linalg.norm(a) * np.linalg.norm(b))) for a, b in zip(g1, g2, strict=True)]


def grad_l2_diff(g1, g2):
    out = []
    for a, b in zip(g1, g2, strict=True):
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
        out.append(float(np.linalg.norm(a - b)))
    return out


def lipschitz_estimate(params, iters=100, seed=0):
    """Spectral norm of ``W_{L-1} ... W_0``; an upper bound on the network's Lipschitz constant for 1-Lipschitz activations."""
    return spectral_norm(params.product(), iters=iters, seed=seed)


# -- quadratic relaxations ---------------------------------------------------

def min_eigenvalue(A):
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    return float(np.linalg.eigvalsh(0.5 * (A + A.T))[0])


def _require_pd(A, what):
    lam = min_eigenvalue(A)
    if lam <= CURVATURE_MARGIN:
        raise IndefiniteSubproblem(f"{what} is not positive definite (smallest eigenvalue {lam:.3g})")


def _solve(A, b):
    try:
        return np.linalg.solve(np.atleast_2d(A), b)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrix(str(exc)) from exc


@dataclass
class QuadraticRelaxationInstance:
    """``l(s) = s.H_l s / 2 + b_l.s + c_l`` and ``E(s) = s.H_E s / 2 + b_E.s``."""

    H_l: np.ndarray
    b_l: np.ndarray
    H_E: np.ndarray
    b_E: np.ndarray
    c_l: float = 0.0

    def __post_init__(self):
        self.H_l = np.atleast_2d(np.asarray(self.H_l, dtype=np.float64))
        self.H_E = np.atleast_2d(np.asarray(self.H_E, dtype=np.float64))
        self.b_l = np.atleast_1d(np.asarray(self.b_l, dtype=np.float64))
        self.b_E = np.atleast_1d(np.asarray(self.b_E, dtype=np.float64))

    @property
    def dim(self):
        return self.b_l.shape[0]

    def loss(self, s):
        return float(0.5 * s @ self.H_l @ s + self.b_l @ s + self.c_l)

    def energy(self, s):
        return float(0.5 * s @ self.H_E @ s + self.b_E @ s)

    def nudged_minimizer(self, weight, beta):
        """``argmin_s weight * l(s) + E(s) / beta`` (weight may be negative)."""
        A = weight * self.H_l + self.H_E / beta
        _require_pd(A, f"curvature of weight*l + E/beta at weight={weight}, beta={beta}")
        return _solve(A, -(weight * self.b_l + self.b_E / beta))


def random_quadratic_instance(rng, dim):
    """Instance with ``H_E >= I`` and ``0 <= H_l <= I`` so every ``beta < 1`` is admissible.

    The loss is ``(s - t).H_l (s - t) / 2`` for a random target ``t``, so it is
    non-negative like any training loss.
    """
    A = rng.standard_normal((dim, dim))
    H_E = A @ A.T / dim + np.eye(dim)
    B = rng.standard_normal((dim, dim))
    H_l = B @ B.T
    H_l /= max(np.linalg.eigvalsh(H_l)[-1], 1e-12)
    t = rng.standard_normal(dim)
    return QuadraticRelaxationInstance(H_l, -H_l @ t, H_E, rng.standard_normal(dim), 0.5 * t @ H_l @ t)


def arovr_states(inst, alpha, beta):
    s_plus = inst.nudged_minimizer(alpha, beta)
    s_minus = inst.nudged_minimizer(-(1.0 - alpha), beta)
    return s_plus, s_minus


def arovr_objective(inst, alpha, beta):
    """``alpha l(s+) + (1-alpha) l(s-) + (E(s+) - E(s-)) / beta`` at the inner optima."""
    sp, sm = arovr_states(inst, alpha, beta)
    return alpha * inst.loss(sp) + (1.0 - alpha) * inst.loss(sm) + (inst.energy(sp) - inst.energy(sm)) / beta


def sprovr_states(inst, alpha, beta):
    """Stationary point of ``l(alpha s+ + (1-alpha) s-) + (E(s+) - E(s-)) / beta``.

    Adding and differencing the two stationarity conditions decouples them:
    the mean solves ``((2 alpha - 1) H_l + H_E / beta) sbar = -((2 alpha - 1) b_l + b_E / beta)``
    and the difference is ``-beta H_E^{-1} grad l(sbar)``.
    """
    c = 2.0 * alpha - 1.0
    K = c * inst.H_l + inst.H_E / beta
    if abs(np.linalg.det(K)) < CURVATURE_MARGIN:
        raise SingularMatrix("(2 alpha - 1) H_l + H_E / beta is singular")
    sbar = _solve(K, -(c * inst.b_l + inst.b_E / beta))
    delta = -beta * _solve(inst.H_E, inst.H_l @ sbar + inst.b_l)
    return sbar + (1.0 - alpha) * delta, sbar - alpha * delta


def sprovr_objective(inst, alpha, beta):
    sp, sm = sprovr_states(inst, alpha, beta)
    sbar = alpha * sp + (1.0 - alpha) * sm
    return inst.loss(sbar) + (inst.energy(sp) - inst.energy(sm)) / beta


@dataclass
class PropositionReport:
    name: str
    n_instances: int = 0
    samples: list = field(default_factory=list)
    checks: int = 0
    violations: int = 0
    max_violation: float = 0.0
    details: dict = field(default_factory=dict)

    def note(self, lhs, rhs, tol):
        gap = lhs - rhs
        self.checks += 1
        self.max_violation = max(self.max_violation, max(gap, 0.0))
        if gap > tol * max(1.0, abs(lhs), abs(rhs)):
            self.violations += 1

    @property
    def passed(self):
        return self.violations == 0

    def to_dict(self):
        d = asdict(self)
        d["passed"] = self.passed
        return d


def check_prop1(instances, alphas, betas, tol=1e-9):
    """Check the monotonicity claims for the adversarial relaxation.

    Three things are checked per instance:

    * the lemma chain ``l(s_{a'}) <= l(s_a) <= l(s_{-(1-a')}) <= l(s_{-(1-a)})``
      for every ``a <= a'`` (``details["lemma_violations"]``);
    * ``beta J(a, beta) <= beta' J(a, beta')`` for ``beta <= beta'`` (the
      main ``violations`` counter);
    * the direction in which ``J(a, beta)`` moves as ``a`` grows. It is
      recorded, not asserted: ``details["alpha_direction"]`` is
      ``"non-increasing"``, ``"non-decreasing"``, ``"constant"`` or
      ``"inconsistent"`` across all instances.
    """
    alphas = sorted(alphas)
    betas = sorted(betas)
    rep = PropositionReport("prop1", n_instances=len(instances))
    lemma = PropositionReport("lemma")
    ups = downs = 0
    for i, inst in enumerate(instances):
        J = {}
        for a in alphas:
            for b in betas:
                J[a, b] = arovr_objective(inst, a, b)
                rep.samples.append({"instance_id": i, "alpha": a, "beta": b, "J": J[a, b]})
        for b in betas:
            for ia, a in enumerate(alphas):
                for a2 in alphas[ia:]:
                    vals = [inst.loss(inst.nudged_minimizer(w, b)) for w in (a2, a, -(1.0 - a2), -(1.0 - a))]
                    for lo, hi in zip(vals[:-1], vals[1:]):
                        lemma.note(lo, hi, tol)
            for a, a2 in zip(alphas[:-1], alphas[1:]):
                diff = J[a2, b] - J[a, b]
                scale = tol * max(1.0, abs(J[a, b]))
                if diff > scale:
                    ups += 1
                elif diff < -scale:
                    downs += 1
        for a in alphas:
            for ib, b in enumerate(betas):
                for b2 in betas[ib + 1:]:
                    rep.note(b * J[a, b], b2 * J[a, b2], tol)
    if ups and downs:
        direction = "inconsistent"
    elif downs:
        direction = "non-increasing"
    elif ups:
        direction = "non-decreasing"
    else:
        direction = "constant"
    rep.details = {
        "lemma_checks": lemma.checks,
        "lemma_violations": lemma.violations,
        "lemma_max_violation": lemma.max_violation,
        "alpha_direction": direction,
        "alpha_consistent": direction != "inconsistent",
    }
    return rep


def check_prop2(instances, pairs, tol=1e-9):
    """Check ``J(a, beta) <= J(a', beta')`` for pairs with ``(1-a) beta = (1-a') beta'`` and ``beta' <= beta``."""
    rep = PropositionReport("prop2", n_instances=len(instances))
    for a, b, a2, b2 in pairs:
        if abs((1.0 - a) * b - (1.0 - a2) * b2) > 1e-12 or b2 > b:
            raise ValueError(f"pair {(a, b, a2, b2)} does not keep (1-alpha) beta fixed with beta' <= beta")
    for i, inst in enumerate(instances):
        for a, b, a2, b2 in pairs:
            lhs = arovr_objective(inst, a, b)
            rhs = arovr_objective(inst, a2, b2)
            rep.samples.append({"instance_id": i, "alpha": a, "beta": b, "J": lhs,
                                "alpha_prime": a2, "beta_prime": b2, "J_prime": rhs})
            rep.note(lhs, rhs, tol)
    return rep


def constant_step_pairs(betas, step):
    """``(alpha, beta, alpha', beta')`` with ``(1-alpha) beta = (1-alpha') beta' = step`` for consecutive betas."""
    betas = sorted(b for b in betas if b >= step)
    pairs = []
    for hi in betas:
        for lo in betas:
            if lo < hi:
                pairs.append((1.0 - step / hi, hi, 1.0 - step / lo, lo))
    return pairs


# -- trilevel fixed-point analysis -----------------------------------------

@dataclass
class TrilevelInstance:
    """Quadratic models ``l``, ``F`` (output level), ``G`` (hidden level), coupling ``W`` and input ``x``."""

    H_l: np.ndarray
    b_l: np.ndarray
    H_F: np.ndarray
    b_F: np.ndarray
    H_G: np.ndarray
    b_G: np.ndarray
    W: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        for name in ("H_l", "H_F", "H_G", "W"):
            setattr(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=np.float64)))
        for name in ("b_l", "b_F", "b_G", "x"):
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=np.float64)))


def scalar_trilevel(h_l=1.0, h_F=1.0, h_G=1.0, W=1.0, b_l=0.0, b_F=0.0, b_G=0.0, x=1.0):
    return TrilevelInstance([[h_l]], [b_l], [[h_F]], [b_F], [[h_G]], [b_G], [[W]], [x])


def random_trilevel_instance(rng, m, n, w_scale=1.0):
    """Random instance with ``H_F >= I`` and ``0 <= H_l <= I``; ``W`` is ``m x n``."""
    def spd(d, shift):
        A = rng.standard_normal((d, d))
        return A @ A.T / d + shift * np.eye(d)

    B = rng.standard_normal((m, m))
    H_l = B @ B.T
    H_l /= max(np.linalg.eigvalsh(H_l)[-1], 1e-12)
    return TrilevelInstance(H_l, rng.standard_normal(m), spd(m, 1.0), rng.standard_normal(m),
                            spd(n, 1.0), rng.standard_normal(n),
                            w_scale * rng.standard_normal((m, n)), rng.standard_normal(n))


def arovr_delta_closed_form(inst, alpha, beta=1.0):
    """``M`` and ``v`` with ``y+ - y- = M W zbar + v`` for the adversarial relaxation.

    The loss curvature used is ``beta * H_l`` (and offset ``beta * b_l``).
    ``M = -(H_F + alpha H)^{-1} H (H_F - (1-alpha) H)^{-1}``. The offset
    collects the ``b_l`` terms, ``alpha P^{-1} + (1-alpha) N^{-1} = P^{-1} H_F N^{-1}``
    with ``P = H_F + alpha H`` and ``N = H_F - (1-alpha) H``.
    """
    H, b = beta * inst.H_l, beta * inst.b_l
    abar = 1.0 - alpha
    P = inst.H_F + alpha * H
    Ninv = np.linalg.inv(_checked(inst.H_F - abar * H))
    M = -_solve(P, H @ Ninv)
    Mp = _solve(P, inst.H_F @ Ninv)
    v = -M @ inst.b_F - Mp @ b
    return M, v


def sprovr_delta_closed_form(inst, alpha, beta=1.0):
    """``M`` and ``v`` for the saddle-point relaxation; ``M = -H_F^{-1} H ((2alpha-1) H + H_F)^{-1}``."""
    H, b = beta * inst.H_l, beta * inst.b_l
    c = 2.0 * alpha - 1.0
    K = _checked(c * H + inst.H_F)
    Kinv = np.linalg.inv(K)
    M = -_solve(inst.H_F, H @ Kinv)
    v = -_solve(inst.H_F, H @ Kinv @ (-c * b - inst.b_F) + b)
    return M, v


def _checked(A):
    if abs(np.linalg.det(A)) < CURVATURE_MARGIN:
        raise SingularMatrix("matrix is singular")
    return A


def trilevel_fixed_point_check(inst, alpha, alpha_hidden, iters=1000, beta=1.0, relaxation="arovr"):
    """Iterate the hidden-layer dyadic updates of the trilevel model.

    ``z+ = H_G^{-1}(x - b_G + a' W^T d)``, ``z- = H_G^{-1}(x - b_G - (1-a') W^T d)``
    with ``d = M W zbar + v`` and ``zbar = a' z+ + (1-a') z-``, starting from
    the free state. The map on ``zbar`` is affine with linear part
    ``(2a' - 1) H_G^{-1} W^T M W``; its spectral radius is returned as
    ``spectral_factor``. ``diverged`` means the step length grew over the run
    (or went non-finite).
    """
    closed = arovr_delta_closed_form if relaxation == "arovr" else sprovr_delta_closed_form
    M, v = closed(inst, alpha, beta)
    H_G = _checked(inst.H_G)
    base = _solve(H_G, inst.x - inst.b_G)
    ap = alpha_hidden
    T = (2.0 * ap - 1.0) * _solve(H_G, inst.W.T @ M @ inst.W)
    factor = float(np.max(np.abs(np.linalg.eigvals(T))))

    zbar = base.copy()
    residuals = []
    diverged = False
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(iters):
            d = M @ inst.W @ zbar + v
            z_plus = base + ap * _solve(H_G, inst.W.T @ d)
            z_minus = base - (1.0 - ap) * _solve(H_G, inst.W.T @ d)
            new = ap * z_plus + (1.0 - ap) * z_minus
            r = float(np.linalg.norm(new - zbar))
            zbar = new
            residuals.append(r)
            if not np.isfinite(r) or r > 1e150:
                diverged = True
                break
    if not diverged and len(residuals) > 1:
        diverged = residuals[-1] > residuals[0]
    return {
        "fixed_point_residual": residuals[-1] if len(residuals) > 1 else residuals[0],
        "first_residual": residuals[0],
        "spectral_factor": factor,
        "diverged": diverged,
        "iterations": len(residuals),
        "zbar": zbar,
    }


# -- Bregman gap -----------------------------------------------------------

@dataclass(frozen=True)
class QuadraticPotential:
    """``G(s) = s.Q s / 2`` for a symmetric positive semidefinite ``Q``."""

    Q: np.ndarray

    def potential(self, s):
        return 0.5 * s @ self.Q @ s

    def potential_grad(self, s):
        return self.Q @ s


def _smooth_potential(G, s):
    # for the projection family only the quadratic part matters on C
    if getattr(G, "is_projection", False):
        return 0.5 * float(np.sum(s * s))
    return float(G.potential(s))


def bregman_divergence(G, a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return _smooth_potential(G, a) - _smooth_potential(G, b) - float((a - b) @ G.potential_grad(b))


def bregman_gap(G, s_plus, s_minus, alpha):
    """``D_G(s+ || sbar) - D_G(s- || sbar)`` with ``sbar = alpha s+ + (1-alpha) s-``.

    This is exactly ``G(s+) - G(s-) - (s+ - s-).grad G(sbar)``, the gap
    between the DP and DP^T layer potentials.
    """
    s_plus = np.atleast_1d(np.asarray(s_plus, dtype=np.float64))
    s_minus = np.atleast_1d(np.asarray(s_minus, dtype=np.float64))
    sbar = alpha * s_plus + (1.0 - alpha) * s_minus
    return bregman_divergence(G, s_plus, sbar) - bregman_divergence(G, s_minus, sbar)


def report_json(reports, path=None):
    """Serialise proposition reports; every sample carries instance_id, alpha, beta, J."""
    payload = [r.to_dict() if isinstance(r, PropositionReport) else r for r in reports]
    text = json.dumps(payload, indent=2, default=_json_default)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")
