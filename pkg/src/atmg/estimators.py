"""Bandit-feedback estimators and an empirical bound-checking harness.

Team players use batch REINFORCE with geometric horizons. The adversary uses
fixed-horizon trajectories to estimate its discounted visitation measure and
the gradient of ``u^T lam_H(y)`` for a utility ``u``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import exact_oracles as eo
from .errors import NumericalError, PolicyError
from .policy import PolicyProfile
from .sampler import TrajectoryBatch, observed_reward, sample_batch


@dataclass(frozen=True)
class GradientEstimate:
    estimate: np.ndarray
    batch_size: int
    protocol: str  # "geometric-horizon" | "fixed-horizon"
    std_error: np.ndarray  # per-coordinate standard error of the batch mean
    sample_second_moment: float  # mean of ||per-sample estimate||^2


def _summarize(samples, protocol) -> GradientEstimate:
    K = samples.shape[0]
    mean = samples.mean(axis=0)
    if not np.all(np.isfinite(mean)):
        raise NumericalError(f"non-finite {protocol} gradient estimate")
    se = samples.std(axis=0, ddof=1) / math.sqrt(K) if K > 1 else np.full(mean.shape, np.inf)
    sq = float(np.mean(np.sum(samples.reshape(K, -1) ** 2, axis=1)))
    return GradientEstimate(mean, K, protocol, se, sq)


# ---------------------------------------------------------------------------
# team side


def reinforce_samples(states, own_actions, own_rewards, lengths, x_i, n_team, causal=True) -> np.ndarray:
    """Per-trajectory REINFORCE estimates from one team player's own observations.

    ``own_rewards`` are the player's observed rewards ``-r / n``; they are
    rescaled by ``-n`` so the estimate targets the gradient of the adversary's
    value. The causal form pairs each reward with the scores up to its step,
    ``sum_h r_h sum_{h'<=h} e_{s_h', a_h'} / x_i(a_h' | s_h')``, and is unbiased
    for the partial derivatives of the value. ``causal=False`` gives
    ``(sum_h r_h)(sum_h score_h)``, whose mean differs by a per-state constant
    row (the direct-parameterization score has mean ``1``, not ``0``).
    """
    x_i = np.asarray(x_i)
    if x_i.min() <= 0.0:
        raise PolicyError("REINFORCE needs every policy entry > 0 (zeta-truncated feasibility violated)")
    K, Hmax = states.shape
    S, m = x_i.shape
    mask = np.arange(Hmax)[None, :] < lengths[:, None]
    r = np.where(mask, -n_team * own_rewards, 0.0)
    if causal:
        weight = np.cumsum(r[:, ::-1], axis=1)[:, ::-1]  # reward from step h' onward
    else:
        weight = np.broadcast_to(r.sum(axis=1, keepdims=True), r.shape)
    w = np.where(mask, weight / x_i[states, own_actions], 0.0)
    idx = (np.arange(K)[:, None] * S + states) * m + own_actions
    return np.bincount(idx.ravel(), weights=w.ravel(), minlength=K * S * m).reshape(K, S, m)


def reinforce_from_batch(batch: TrajectoryBatch, x_i, i, n_team) -> GradientEstimate:
    own_rewards = observed_reward(batch.rewards, i, n_team)
    samples = reinforce_samples(
        batch.states, batch.team_actions[:, :, i], own_rewards, batch.lengths, x_i, n_team
    )
    return _summarize(samples, "geometric-horizon")


def reinforce_team(spec, profile: PolicyProfile, i, M, seed, t=0, workers=1) -> GradientEstimate:
    """Batch REINFORCE estimate of ``grad_{x_i} V_rho`` from ``M`` geometric-horizon rollouts."""
    if np.asarray(profile.team[i]).min() <= 0.0:
        raise PolicyError(f"team[{i}] has a zero entry; REINFORCE scores would be infinite")
    batch = sample_batch(spec, profile, M, seed, t=t, H=None, workers=workers)
    return reinforce_from_batch(batch, profile.team[i], i, spec.n_team)


# ---------------------------------------------------------------------------
# adversary side


def visitation_samples(batch: TrajectoryBatch, gamma, S, B) -> np.ndarray:
    """Per-trajectory ``sum_{h<H} gamma^h e_{s_h, b_h}``, shape ``(K, S, B)``."""
    K, Hmax = batch.states.shape
    w = np.where(batch.mask, gamma ** np.arange(Hmax)[None, :], 0.0)
    idx = (np.arange(K)[:, None] * S + batch.states) * B + batch.adversary_actions
    return np.bincount(idx.ravel(), weights=w.ravel(), minlength=K * S * B).reshape(K, S, B)


def visitation_estimate(trajectory, gamma, S, B) -> np.ndarray:
    lam = np.zeros((S, B))
    for h, (s, _, b, _) in enumerate(trajectory.steps()):
        lam[s, b] += gamma**h
    return lam


def visitation_batch(batch: TrajectoryBatch, gamma, S, B) -> np.ndarray:
    return visitation_samples(batch, gamma, S, B).mean(axis=0)


def adversary_gradient_samples(batch: TrajectoryBatch, y, u, gamma) -> np.ndarray:
    """Per-trajectory ``sum_h gamma^h u(s_h, b_h) sum_{h'<=h} e_{s_h', b_h'} / y(b_h'|s_h')``."""
    y = np.asarray(y)
    if y.min() <= 0.0:
        raise PolicyError("adversary gradient estimate needs every policy entry > 0")
    K, Hmax = batch.states.shape
    S, B = y.shape
    s, b = batch.states, batch.adversary_actions
    disc = np.where(batch.mask, gamma ** np.arange(Hmax)[None, :] * np.asarray(u)[s, b], 0.0)
    tail = np.cumsum(disc[:, ::-1], axis=1)[:, ::-1]  # sum_{h >= h'} gamma^h u_h
    w = np.where(batch.mask, tail / y[s, b], 0.0)
    idx = (np.arange(K)[:, None] * S + s) * B + b
    return np.bincount(idx.ravel(), weights=w.ravel(), minlength=K * S * B).reshape(K, S, B)


def adversary_gradient_estimate(spec, x, y, u, K, H, seed, t=0, workers=1) -> GradientEstimate:
    """Batch estimate of ``[grad_y lam_H(y; x)]^T u`` from ``K`` rollouts of length ``H``."""
    if np.asarray(y).min() <= 0.0:
        raise PolicyError("adversary policy has a zero entry")
    profile = PolicyProfile(tuple(x), y)
    batch = sample_batch(spec, profile, K, seed, t=t, H=H, workers=workers)
    return _summarize(adversary_gradient_samples(batch, y, u, spec.discount), "fixed-horizon")


class RewardVectorProvider:
    """Supplies ``r(x)[s, b]`` to the adversary.

    ``mode="oracle"`` reads it off the game. ``mode="empirical"`` keeps running
    means of rewards observed at each ``(s, b)``; unvisited pairs report 0.5.
    """

    def __init__(self, spec, mode="oracle"):
        if mode not in ("oracle", "empirical"):
            raise ValueError(f"unknown reward mode {mode!r}")
        self.spec = spec
        self.mode = mode
        shape = (spec.num_states, spec.adversary_action_size)
        self.sums = np.zeros(shape)
        self.counts = np.zeros(shape)

    def update(self, batch: TrajectoryBatch) -> None:
        if self.mode != "empirical":
            return
        S, B = self.sums.shape
        m = batch.mask
        idx = batch.states[m] * B + batch.adversary_actions[m]
        self.sums += np.bincount(idx, weights=batch.rewards[m], minlength=S * B).reshape(S, B)
        self.counts += np.bincount(idx, minlength=S * B).reshape(S, B)

    def current(self, team=None) -> np.ndarray:
        if self.mode == "oracle":
            return eo.adversary_reward(self.spec, team)
        out = np.full(self.sums.shape, 0.5)
        seen = self.counts > 0
        out[seen] = self.sums[seen] / self.counts[seen]
        return out


def reward_vector_mode(spec, mode="oracle") -> RewardVectorProvider:
    return RewardVectorProvider(spec, mode)


# ---------------------------------------------------------------------------
# bounds and diagnostics


@dataclass(frozen=True)
class DiagnosticsBounds:
    C1: float
    C2: float
    C3: float
    visitation_bias: float
    gradient_bias: float
    reinforce_variance: float
    visitation_variance: float
    gradient_variance: float
    gradient_error: float


def diagnostics_bounds(gamma, zeta, H, nu, K, S, B, team_actions) -> DiagnosticsBounds:
    """Closed-form bias and variance bounds for the estimators.

    ``team_actions`` is the action count of the team player whose REINFORCE
    variance is bounded; ``zeta`` is the truncation level of the policy used.
    """
    q = 1.0 - gamma
    C1 = 57.0 / (q**6 * zeta**2)
    C2 = 126.0 * H**2 / (q**6 * zeta**2)
    C3 = math.sqrt(S * B) * 6.0 * H / (q**3 * zeta)
    vis_bias = gamma**H / q
    grad_bias = ((H + 1) / (q * zeta) + (nu * H + nu + 1) / (q**2 * zeta) + nu / (q**3 * zeta)) * gamma**H
    rf_var = 24.0 * team_actions**2 / (zeta * q)
    vis_var = 1.0 / (K * q**2)
    grad_var = 3.0 / (K * q**4 * zeta**2) + 6.0 * nu / (K * q**5 * zeta**2) + 9.0 * nu**2 / (K * q**6 * zeta**2)
    grad_err = C1 / K + C2 * gamma ** (2 * H)
    return DiagnosticsBounds(C1, C2, C3, vis_bias, grad_bias, rf_var, vis_var, grad_var, grad_err)


def regularized_utility(spec, team, lam_hat, nu, provider=None) -> np.ndarray:
    r_x = eo.adversary_reward(spec, team) if provider is None else provider.current(team)
    return r_x - nu * lam_hat


@dataclass(frozen=True)
class DiagnosticRow:
    quantity: str
    empirical: float
    bound: float

    @property
    def passed(self) -> bool:
        return bool(self.empirical <= self.bound)


def run_diagnostics(spec, profile: PolicyProfile, seed, K=1000, H=30, nu=0.05, M=2000, reps=20):
    """Empirical bias/variance figures next to their closed-form bounds.

    ``profile`` must be strictly inside the simplex; its smallest entries set
    the truncation level used in the bounds. Returns a list of
    :class:`DiagnosticRow`.
    """
    S, B = spec.num_states, spec.adversary_action_size
    g = spec.discount
    zeta_y = float(profile.adversary.min())
    x, y = profile.team, profile.adversary
    rows = []
    _, lam = eo.exact_visitation(spec, profile)
    lam_H = eo.truncated_visitation(spec, profile, H)
    bounds = diagnostics_bounds(g, zeta_y, H, nu, K, S, B, 1)
    rows.append(DiagnosticRow("visitation_bias", float(np.linalg.norm(lam_H - lam)), bounds.visitation_bias))

    # the utility batch and the gradient batch are independent, so
    # E[g_hat] = [grad lam_H]^T (r(x) - nu lam_H) exactly
    mean_grad = eo.truncated_adversary_gradient(spec, profile, eo.adversary_reward(spec, x) - nu * lam_H, H)
    true_grad = eo.exact_adversary_gradient(spec, profile, nu)
    rows.append(DiagnosticRow("gradient_bias", float(np.linalg.norm(mean_grad - true_grad)), bounds.gradient_bias))

    vis_err, grad_var, grad_err = [], [], []
    for r in range(reps):
        lam_batch = sample_batch(spec, profile, K, seed, t=2 * r, H=H)
        lam_hat = visitation_batch(lam_batch, g, S, B)
        vis_err.append(np.sum((lam_hat - lam_H) ** 2))
        u = regularized_utility(spec, x, lam_hat, nu)
        gb = sample_batch(spec, profile, K, seed, t=2 * r + 1, H=H)
        g_hat = adversary_gradient_samples(gb, y, u, g).mean(axis=0)
        grad_var.append(np.sum((g_hat - mean_grad) ** 2))
        grad_err.append(np.sum((g_hat - true_grad) ** 2))
    rows.append(DiagnosticRow("visitation_variance", float(np.mean(vis_err)), bounds.visitation_variance))
    rows.append(DiagnosticRow("gradient_variance", float(np.mean(grad_var)), bounds.gradient_variance))
    rows.append(DiagnosticRow("gradient_error", float(np.mean(grad_err)), bounds.gradient_error))

    batch = sample_batch(spec, profile, M, seed, t=2 * reps, H=None)
    for i in range(spec.n_team):
        zeta_i = float(np.min(x[i]))
        est = reinforce_from_batch(batch, x[i], i, spec.n_team)
        samples_sq = _reinforce_variance(batch, x[i], i, spec.n_team, eo.exact_team_gradient(spec, profile, i))
        rb = diagnostics_bounds(g, zeta_i, H, nu, K, S, B, spec.team_action_sizes[i])
        rows.append(DiagnosticRow(f"reinforce_variance[{i}]", samples_sq, rb.reinforce_variance))
        z = np.abs(est.estimate - eo.exact_team_gradient(spec, profile, i)) / est.std_error
        rows.append(DiagnosticRow(f"reinforce_max_abs_z[{i}]", float(np.max(z)), 4.0))
    return rows


def _reinforce_variance(batch, x_i, i, n_team, target) -> float:
    """Per-sample ``E||g_j - grad||^2`` for the player's own-reward estimator.

    The bound concerns the estimator built from the player's observed reward
    ``-r / n``, which is the ``-1/n`` multiple of the rescaled one used for
    updates, so the rescaled spread is divided by ``n^2``.
    """
    samples = reinforce_samples(
        batch.states,
        batch.team_actions[:, :, i],
        observed_reward(batch.rewards, i, n_team),
        batch.lengths,
        x_i,
        n_team,
    )
    return float(np.mean(np.sum((samples - target) ** 2, axis=(1, 2)))) / n_team**2


def write_diagnostics_csv(rows, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "empirical", "bound", "pass"])
        for r in rows:
            w.writerow([r.quantity, repr(r.empirical), repr(r.bound), "pass" if r.passed else "fail"])


def read_diagnostics_csv(path) -> list:
    with Path(path).open(newline="") as fh:
        return [
            DiagnosticRow(row["quantity"], float(row["empirical"]), float(row["bound"]))
            for row in csv.DictReader(fh)
        ]
