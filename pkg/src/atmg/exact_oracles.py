"""Closed-form values, visitation measures, gradients and best responses.

Everything here is a direct linear-algebra computation on the tabular game,
so it serves as ground truth for the sampled estimators and the learners.
"""

from __future__ import annotations

import math
import string
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import NumericalError
from .policy import PolicyProfile, project_policy

RESIDUAL_TOL = 1e-8
VI_TOL = 1e-10


# ---------------------------------------------------------------------------
# induced quantities


def joint_team_policy(team) -> np.ndarray:
    """Product policy ``X[s, a] = prod_i x_i[s, a_i]`` over row-major joint actions."""
    X = np.asarray(team[0], dtype=np.float64)
    S = X.shape[0]
    for x in team[1:]:
        X = (X[:, :, None] * np.asarray(x)[:, None, :]).reshape(S, -1)
    return X


def adversary_reward(spec, team) -> np.ndarray:
    """``r(x)[s, b]``: expected reward of each adversary action under the team policy."""
    return np.einsum("sa,sab->sb", joint_team_policy(team), spec.reward)


def adversary_kernel(spec, team) -> np.ndarray:
    """``P_x[s, b, s']``: transition kernel seen by the adversary."""
    return np.einsum("sa,sabt->sbt", joint_team_policy(team), spec.transition)


def _solve(M, rhs, what):
    sol = np.linalg.solve(M, rhs)
    res = np.max(np.abs(M @ sol - rhs)) if sol.size else 0.0
    if not np.isfinite(res) or res > RESIDUAL_TOL:
        raise NumericalError(f"{what}: linear solve residual {res:.3g}")
    return sol


def _state_kernel(spec, X, y):
    return np.einsum("sa,sb,sabt->st", X, y, spec.transition)


def _policy_values(spec, X, y, R):
    """Values of the reward tensor ``R[s, a, b]`` and the matching Q-table."""
    g = spec.discount
    P = _state_kernel(spec, X, y)
    r_xy = np.einsum("sa,sb,sab->s", X, y, R)
    V = _solve(np.eye(spec.num_states) - g * P, r_xy, "Bellman system")
    Q = R + g * spec.transition @ V
    return V, Q, P


def _state_visitation(spec, P):
    g = spec.discount
    return _solve((np.eye(spec.num_states) - g * P).T, spec.initial_dist, "visitation system")


@dataclass(frozen=True)
class ValueResult:
    values: np.ndarray
    v_rho: float


def exact_value(spec, profile: PolicyProfile) -> ValueResult:
    X = joint_team_policy(profile.team)
    V, _, _ = _policy_values(spec, X, profile.adversary, spec.reward)
    return ValueResult(V, float(spec.initial_dist @ V))


def exact_visitation(spec, profile: PolicyProfile):
    """Return ``(d, lam)``: state visitation and adversary state-action visitation.

    Both are unnormalized and sum to ``1 / (1 - gamma)``.
    """
    X = joint_team_policy(profile.team)
    d = _state_visitation(spec, _state_kernel(spec, X, profile.adversary))
    return d, d[:, None] * profile.adversary


def regularized_value(spec, profile: PolicyProfile, nu) -> float:
    """``r(x)^T lam - (nu / 2) ||lam||^2``."""
    _, lam = exact_visitation(spec, profile)
    r_x = adversary_reward(spec, profile.team)
    return float(np.sum(r_x * lam) - 0.5 * nu * np.sum(lam * lam))


# ---------------------------------------------------------------------------
# gradients


def _regularized_reward(spec, profile, nu):
    if nu == 0:
        return spec.reward
    _, lam = exact_visitation(spec, profile)
    return spec.reward - nu * lam[:, None, :]


def _team_contraction(spec, team, Qy, i):
    """Contract ``Qy[s, a]`` against every team policy except player ``i``."""
    n = spec.n_team
    letters = string.ascii_letters[: n]
    full = Qy.reshape((spec.num_states, *spec.team_action_sizes))
    operands = [full]
    subs = ["Z" + letters]
    for j in range(n):
        if j != i:
            operands.append(team[j])
            subs.append("Z" + letters[j])
    expr = ",".join(subs) + "->Z" + letters[i]
    return np.einsum(expr, *operands)


def policy_gradients(spec, profile: PolicyProfile, R):
    """Gradients of the value of reward tensor ``R`` w.r.t. every policy.

    ``R`` is held fixed. Returns ``(team_grads, adversary_grad)`` where the
    team entry ``i`` has shape ``(S, A_i)`` and the adversary entry ``(S, B)``.
    """
    X = joint_team_policy(profile.team)
    y = profile.adversary
    _, Q, P = _policy_values(spec, X, y, R)
    d = _state_visitation(spec, P)
    Qy = np.einsum("sab,sb->sa", Q, y)
    team = [d[:, None] * _team_contraction(spec, profile.team, Qy, i) for i in range(spec.n_team)]
    adv = d[:, None] * np.einsum("sa,sab->sb", X, Q)
    return team, adv


def exact_team_gradients(spec, profile: PolicyProfile, nu=0.0) -> list:
    """Gradients of the (regularized, if ``nu > 0``) adversary value w.r.t. each ``x_i``."""
    if nu == 0:
        team, _ = policy_gradients(spec, profile, spec.reward)
        return team
    _, lam = exact_visitation(spec, profile)
    team, _ = policy_gradients(spec, profile, spec.reward - nu * lam[:, None, :])
    # The frozen penalty enters weighted by sum_a X(s, a), which is 1 on the
    # simplex but not along off-simplex coordinate perturbations; remove its
    # derivative so the result is the partial derivative of the value itself.
    sq = nu * np.sum(lam * lam, axis=1)
    masses = [x.sum(axis=1) for x in profile.team]
    for i in range(spec.n_team):
        others = np.prod([m for j, m in enumerate(masses) if j != i], axis=0) if spec.n_team > 1 else 1.0
        team[i] = team[i] + (sq * others)[:, None]
    return team


def exact_team_gradient(spec, profile: PolicyProfile, i, nu=0.0) -> np.ndarray:
    return exact_team_gradients(spec, profile, nu)[i]


def exact_adversary_gradient(spec, profile: PolicyProfile, nu=0.0) -> np.ndarray:
    """Gradient of ``r(x)^T lam - (nu/2)||lam||^2`` w.r.t. ``y``.

    Differentiating the quadratic term gives the plain policy gradient for the
    utility ``r(x) - nu * lam`` with ``lam`` frozen at the current profile.
    """
    _, adv = policy_gradients(spec, profile, _regularized_reward(spec, profile, nu))
    return adv


# ---------------------------------------------------------------------------
# finite-horizon (truncated) quantities


def _state_marginals(spec, profile, H):
    P = _state_kernel(spec, joint_team_policy(profile.team), profile.adversary)
    p = np.empty((H, spec.num_states))
    cur = spec.initial_dist.copy()
    for h in range(H):
        p[h] = cur
        cur = cur @ P
    return p


def truncated_visitation(spec, profile: PolicyProfile, H) -> np.ndarray:
    """``lam_H[s, b] = sum_{h<H} gamma^h Pr(s_h = s, b_h = b)``."""
    if H <= 0:
        return np.zeros((spec.num_states, spec.adversary_action_size))
    p = _state_marginals(spec, profile, H)
    w = spec.discount ** np.arange(H)
    return (w @ p)[:, None] * profile.adversary


def truncated_adversary_gradient(spec, profile: PolicyProfile, u, H) -> np.ndarray:
    """Gradient w.r.t. ``y`` of ``u^T lam_H(y)`` with ``u[s, b]`` held fixed.

    Equals ``sum_{h<H} gamma^h p_h(s) Q_{H-h}(s, b)`` where ``Q_k`` is the
    k-step utility-to-go of taking ``b`` in ``s``.
    """
    S, B = spec.num_states, spec.adversary_action_size
    grad = np.zeros((S, B))
    if H <= 0:
        return grad
    g = spec.discount
    y = profile.adversary
    Px = adversary_kernel(spec, profile.team)
    p = _state_marginals(spec, profile, H)
    V = np.zeros(S)
    Qk = []
    for _ in range(H):
        Q = u + g * Px @ V
        Qk.append(Q)
        V = np.sum(y * Q, axis=1)
    for h in range(H):
        grad += g**h * p[h][:, None] * Qk[H - h - 1]
    return grad


# ---------------------------------------------------------------------------
# best responses and Nash gap


@dataclass(frozen=True)
class BestResponse:
    value: float
    values: np.ndarray
    policy: np.ndarray  # deterministic, one-hot rows


def _induced_mdp(spec, profile, side):
    """Reward ``(S, m)`` and kernel ``(S, m, S)`` faced by one agent."""
    if side == "adversary":
        return adversary_reward(spec, profile.team), adversary_kernel(spec, profile.team)
    i = int(side)
    y = profile.adversary
    r_y = np.einsum("sab,sb->sa", spec.reward, y)
    P_y = np.einsum("sabt,sb->sat", spec.transition, y)
    R = _team_contraction(spec, profile.team, r_y, i)
    S = spec.num_states
    P = np.stack(
        [_team_contraction(spec, profile.team, P_y[:, :, t], i) for t in range(S)], axis=-1
    )
    return R, P


def solve_mdp(R, P, gamma, maximize=True, initial_dist=None):
    """Value iteration to residual ``VI_TOL``, then exact evaluation of the greedy policy.

    A few rounds of policy improvement follow so the returned deterministic
    policy is optimal, not merely near-optimal.
    """
    sign = 1.0 if maximize else -1.0
    Rs = sign * R
    S, m = R.shape
    V = np.zeros(S)
    if gamma > 0:
        for _ in range(100_000):
            V_new = np.max(Rs + gamma * P @ V, axis=1)
            if np.max(np.abs(V_new - V)) <= VI_TOL:
                V = V_new
                break
            V = V_new
    act = np.argmax(Rs + gamma * P @ V, axis=1)
    for _ in range(100):
        Pa = P[np.arange(S), act]
        V = _solve(np.eye(S) - gamma * Pa, Rs[np.arange(S), act], "best-response evaluation")
        Qs = Rs + gamma * P @ V
        better = Qs.max(axis=1) > Qs[np.arange(S), act] + 1e-12
        if not better.any():
            break
        act = np.where(better, np.argmax(Qs, axis=1), act)
    pol = np.zeros((S, m))
    pol[np.arange(S), act] = 1.0
    V = sign * V
    value = float(initial_dist @ V) if initial_dist is not None else float("nan")
    return BestResponse(value, V, pol)


def best_response_value(spec, profile: PolicyProfile, side="adversary") -> BestResponse:
    """Optimal unilateral deviation for ``side`` ("adversary" or a team index).

    The adversary maximizes the reward; a team player minimizes it with the
    other team members and the adversary held fixed.
    """
    R, P = _induced_mdp(spec, profile, side)
    return solve_mdp(R, P, spec.discount, maximize=(side == "adversary"), initial_dist=spec.initial_dist)


@dataclass(frozen=True)
class Evaluation:
    nash_gap: float
    team_gains: tuple
    adversary_gain: float
    value: float


def deviation_gains(spec, profile: PolicyProfile) -> Evaluation:
    v = exact_value(spec, profile).v_rho
    team = tuple(
        max(0.0, v - best_response_value(spec, profile, i).value) for i in range(spec.n_team)
    )
    adv = max(0.0, best_response_value(spec, profile, "adversary").value - v)
    return Evaluation(max((*team, adv)), team, adv, v)


def nash_gap(spec, profile: PolicyProfile) -> float:
    return deviation_gains(spec, profile).nash_gap


# ---------------------------------------------------------------------------
# regularized max-function


@dataclass(frozen=True)
class PhiNuResult:
    value: float
    team_grads: list
    adversary: np.ndarray
    residual: float
    iterations: int
    converged: bool


def _grad_map_norm(y, g, zeta):
    return float(np.linalg.norm(y - project_policy(y + g, zeta)))


def maximize_regularized(spec, team, nu, tol=1e-8, zeta=0.0, max_iter=20_000, y0=None):
    """Maximize the regularized value over the (truncated) adversary policies.

    SLSQP on the simplex-constrained ``y`` gets close; projected gradient
    ascent with backtracking then polishes until the unit-step gradient
    mapping ``||y - Proj(y + grad)||`` drops below ``tol``. Every stationary
    point is global here because the objective is strongly concave in the
    visitation measure and ``y -> lam`` is one-to-one.

    Returns ``(y, value, residual, iterations, converged)``.
    """
    S, B = spec.num_states, spec.adversary_action_size
    team = tuple(team)
    X = joint_team_policy(team)
    r_x = adversary_reward(spec, team)

    def value_and_grad(yy):
        _, _, P = _policy_values(spec, X, yy, spec.reward)
        d = _state_visitation(spec, P)
        lam = d[:, None] * yy
        _, Qr, _ = _policy_values(spec, X, yy, spec.reward - nu * lam[:, None, :])
        grad = d[:, None] * np.einsum("sa,sab->sb", X, Qr)
        return float(np.sum(r_x * lam) - 0.5 * nu * np.sum(lam * lam)), grad

    y = np.full((S, B), 1.0 / B) if y0 is None else project_policy(y0, zeta)
    if B > 1:
        A_eq = np.kron(np.eye(S), np.ones((1, B)))

        def neg(v):
            f, g = value_and_grad(v.reshape(S, B))
            return -f, -g.ravel()

        sol = optimize.minimize(
            neg,
            y.ravel(),
            jac=True,
            method="SLSQP",
            bounds=[(zeta, 1.0)] * (S * B),
            constraints=[{"type": "eq", "fun": lambda v: A_eq @ v - 1.0, "jac": lambda v: A_eq}],
            options={"ftol": 1e-15, "maxiter": 500},
        )
        if np.all(np.isfinite(sol.x)):
            cand = project_policy(sol.x.reshape(S, B), zeta)
            if value_and_grad(cand)[0] >= value_and_grad(y)[0]:
                y = cand

    f, g = value_and_grad(y)
    res = _grad_map_norm(y, g, zeta)
    step = 1.0
    it = 0
    while res >= tol and it < max_iter:
        it += 1
        while True:
            y_new = project_policy(y + step * g, zeta)
            diff = y_new - y
            f_new, g_new = value_and_grad(y_new)
            if f_new >= f + np.sum(g * diff) - np.sum(diff * diff) / (2 * step) - 1e-15 or step < 1e-12:
                break
            step *= 0.5
        y, f, g = y_new, f_new, g_new
        step = min(step * 2.0, 1e6)
        res = _grad_map_norm(y, g, zeta)
    return y, f, res, it, res < tol


def exact_phi_nu(spec, team, nu, tol=1e-8, zeta=0.0, max_iter=20_000, y0=None) -> PhiNuResult:
    """``Phi^nu(x) = max_y V^nu(x, y)``, its gradient in ``x`` and the maximizer.

    The gradient is the partial gradient of the regularized value at the
    maximizer, which is valid because the maximizing visitation measure is
    unique for ``nu > 0``.
    """
    if nu <= 0:
        raise ValueError("nu must be > 0 for a unique maximizer")
    if tol <= 0:
        raise ValueError("tol must be > 0")
    y, f, res, it, ok = maximize_regularized(spec, team, nu, tol, zeta, max_iter, y0)
    profile = PolicyProfile(tuple(team), y)
    grads = exact_team_gradients(spec, profile, nu)
    return PhiNuResult(f, grads, y, res, it, ok)


def exact_phi_nu_gradient(spec, team, nu, tol=1e-8, zeta=0.0, max_iter=20_000):
    """Tuple form ``(Phi^nu(x), grad_x Phi^nu(x), y*)``; raises if the inner loop stalls."""
    out = exact_phi_nu(spec, team, nu, tol, zeta, max_iter)
    if not out.converged:
        raise NumericalError(
            f"inner maximization hit {out.iterations} iterations with residual {out.residual:.3g}"
        )
    return out.value, out.team_grads, out.adversary


# ---------------------------------------------------------------------------
# constants


@dataclass(frozen=True)
class PaperConstants:
    L: float  # value Lipschitz
    ell: float  # value smoothness
    L_lam: float
    ell_lam: float
    L_lam_inv: float
    L_nu: float
    ell_nu: float
    L_r: float
    L_star: float
    ell_half: float
    D_m: float  # upper bound of the mismatch coefficient
    theta: float  # inexactness of the unregularized team gradient

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def paper_constants(spec, nu=0.0) -> PaperConstants:
    if nu < 0:
        raise ValueError("nu must be >= 0")
    g = spec.discount
    S = spec.num_states
    n = spec.n_team
    sig = spec.num_params
    rho_min = float(spec.initial_dist.min())
    L = math.sqrt(sig) / (1 - g) ** 2
    ell = 2 * g * sig / (1 - g) ** 3
    L_lam = math.sqrt(S) * sig / (1 - g) ** 2
    ell_lam = 2 * math.sqrt(S) * sig**1.5 / (1 - g) ** 3
    L_lam_inv = 2.0 / (rho_min * (1 - g))
    L_nu = L + nu * L_lam / (2 * (1 - g))
    ell_nu = ell + nu * ell_lam / (2 * (1 - g)) + nu * L_lam**2 / 2
    L_r = math.sqrt(S) * sig
    if nu > 0:
        L_star = 2 * n**0.25 * math.sqrt(S) * sig**0.75 / (nu * (1 - g) ** 1.5)
        ell_half = 30 * n**0.25 * S**1.25 * sig**2 / (nu * rho_min * (1 - g) ** 6.5)
    else:
        L_star = ell_half = math.inf
    D_m = 1.0 / ((1 - g) * rho_min)
    theta = nu * L_lam / (1 - g)
    return PaperConstants(L, ell, L_lam, ell_lam, L_lam_inv, L_nu, ell_nu, L_r, L_star, ell_half, D_m, theta)


def linearized_deviation(grad, policy, zeta=0.0, maximize=True) -> float:
    """``max_{p in truncated set} <grad, p - policy>`` (sign flipped for minimizers).

    The maximum over a product of truncated simplices puts ``1 - (m-1) zeta``
    on the best action of each state and ``zeta`` elsewhere.
    """
    g = np.asarray(grad) if maximize else -np.asarray(grad)
    m = g.shape[1]
    best = (1 - m * zeta) * g.max(axis=1) + zeta * g.sum(axis=1)
    return float(np.sum(best - np.sum(g * policy, axis=1)))


def gradient_domination_bound(deviation, D_m, gamma, zeta, num_states, num_actions, L) -> float:
    """Upper bound on a best-response gain given its linearized deviation."""
    return D_m * deviation / (1 - gamma) + 2 * D_m * zeta * num_states * num_actions * L / (1 - gamma)


def policy_distance_bound(consts: PaperConstants, B, zeta_y, eps_y, nu, gamma) -> float:
    """Expected distance of a near-optimal inner policy to the truncated maximizer."""
    return consts.L_lam_inv * (
        math.sqrt(8 * consts.L_lam * B * zeta_y / ((1 - gamma) * nu)) + math.sqrt(2 * eps_y / nu)
    )
