"""Reference computations that share no code with the package.

Values come from fixed-point iteration instead of a linear solve, best
responses from enumerating deterministic policies, and the regularized inner
maximum from a convex program over visitation measures.
"""

import itertools

import numpy as np


def joint_team(team):
    X = team[0]
    for x in team[1:]:
        X = (X[:, :, None] * x[:, None, :]).reshape(X.shape[0], -1)
    return X


def value_by_iteration(spec, team, y, tol=1e-14, max_iter=100_000):
    """``V_rho`` by repeated Bellman backups."""
    X = joint_team(team)
    r = np.einsum("sa,sb,sab->s", X, y, spec.reward)
    P = np.einsum("sa,sb,sabt->st", X, y, spec.transition)
    V = np.zeros(spec.num_states)
    for _ in range(max_iter):
        V_new = r + spec.discount * P @ V
        if np.max(np.abs(V_new - V)) < tol:
            return float(spec.initial_dist @ V_new)
        V = V_new
    raise RuntimeError("value iteration did not converge")


def visitation_by_iteration(spec, team, y, tol=1e-14, max_iter=100_000):
    """Adversary visitation ``sum_h gamma^h P(s_h = s, b_h = b)`` by forward propagation."""
    X = joint_team(team)
    P = np.einsum("sa,sb,sabt->st", X, y, spec.transition)
    mu = spec.initial_dist.copy()
    lam = np.zeros_like(y)
    w = 1.0
    for _ in range(max_iter):
        step = w * mu[:, None] * y
        lam += step
        if step.sum() < tol:
            return lam
        mu = mu @ P
        w *= spec.discount
    raise RuntimeError("visitation did not converge")


def deterministic_policies(S, m):
    for choice in itertools.product(range(m), repeat=S):
        p = np.zeros((S, m))
        p[np.arange(S), choice] = 1.0
        yield p


def brute_force_gap(spec, team, y):
    """Nash gap by enumerating every deterministic unilateral deviation."""
    base = value_by_iteration(spec, team, y)
    best_adv = max(value_by_iteration(spec, team, yd) for yd in deterministic_policies(spec.num_states, spec.adversary_action_size))
    gains = [best_adv - base]
    for i, a in enumerate(spec.team_action_sizes):
        best = min(
            value_by_iteration(spec, tuple(xd if j == i else x for j, x in enumerate(team)), y)
            for xd in deterministic_policies(spec.num_states, a)
        )
        gains.append(base - best)
    return max(0.0, max(gains))


def lambda_qp(spec, team, nu):
    """``max_lam r(x)^T lam - (nu/2)||lam||^2`` over the flow polytope, solved with cvxpy."""
    import cvxpy as cp

    X = joint_team(team)
    S, B = spec.num_states, spec.adversary_action_size
    r = np.einsum("sa,sab->sb", X, spec.reward)
    Px = np.einsum("sa,sabt->sbt", X, spec.transition)
    lam = cp.Variable((S, B), nonneg=True)
    cons = [
        cp.sum(lam[t, :]) == spec.initial_dist[t] + spec.discount * cp.sum(cp.multiply(Px[:, :, t], lam))
        for t in range(S)
    ]
    prob = cp.Problem(cp.Maximize(cp.sum(cp.multiply(r, lam)) - nu / 2 * cp.sum_squares(lam)), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    return float(prob.value), np.asarray(lam.value)


def simplex_projection_qp(v, zeta):
    import cvxpy as cp

    m = v.size
    z = cp.Variable(m)
    prob = cp.Problem(cp.Minimize(cp.sum_squares(z - v)), [cp.sum(z) == 1, z >= zeta])
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    return np.asarray(z.value)


def central_difference(fun, z, h=1e-5):
    z = np.array(z, dtype=float)
    g = np.zeros_like(z)
    for idx in np.ndindex(z.shape):
        zp, zm = z.copy(), z.copy()
        zp[idx] += h
        zm[idx] -= h
        g[idx] = (fun(zp) - fun(zm)) / (2 * h)
    return g


def random_small_game(rng, max_states=4, max_team=2, max_actions=3, max_adv=3, gammas=(0.5, 0.9)):
    from atmg.game_model import generate_random

    S = int(rng.integers(1, max_states + 1))
    n = int(rng.integers(1, max_team + 1))
    A = [int(a) for a in rng.integers(1, max_actions + 1, size=n)]
    B = int(rng.integers(1, max_adv + 1))
    gamma = float(rng.choice(gammas))
    return generate_random(int(rng.integers(2**31)), S, A, B, gamma)
