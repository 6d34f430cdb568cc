"""Direct policy parameterization and projections onto truncated simplices.

A policy for an agent with ``m`` actions is an ``(S, m)`` array whose rows are
probability vectors. The zeta-truncated simplex keeps every entry >= zeta,
which bounds the score function ``1 / x(a|s)`` used by the estimators.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import PolicyError

ROW_TOL = 1e-10


@dataclass(frozen=True)
class PolicyProfile:
    """Team policies ``x = (x_1, ..., x_n)`` and adversary policy ``y``."""

    team: tuple
    adversary: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "team", tuple(np.asarray(x, dtype=np.float64) for x in self.team))
        object.__setattr__(self, "adversary", np.asarray(self.adversary, dtype=np.float64))

    def with_team(self, i, x_i) -> "PolicyProfile":
        team = list(self.team)
        team[i] = x_i
        return PolicyProfile(tuple(team), self.adversary)

    def with_adversary(self, y) -> "PolicyProfile":
        return PolicyProfile(self.team, y)

    def agents(self) -> list:
        return [*self.team, self.adversary]


def _check_zeta(zeta, m):
    if not (0.0 <= zeta <= 1.0 / (2 * m)):
        raise ValueError(f"truncation zeta={zeta} outside [0, 1/(2m)] for m={m}")


def project_truncated_simplex(v, zeta=0.0):
    """Euclidean projection of ``v`` onto ``{p : sum p = 1, p >= zeta}``.

    Shift by ``zeta``, project onto the simplex of mass ``1 - m*zeta`` with the
    sort-and-threshold rule, shift back. ``zeta = 0`` gives the plain simplex.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("expected a non-empty vector")
    return project_policy(v[None, :], zeta)[0]


def project_policy(p, zeta=0.0):
    """Row-wise :func:`project_truncated_simplex` of an ``(S, m)`` array."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError(f"expected an (S, m) array, got shape {p.shape}")
    m = p.shape[1]
    _check_zeta(zeta, m)
    if not np.all(np.isfinite(p)):
        raise PolicyError("cannot project non-finite entries")
    mass = 1.0 - m * zeta
    w = p - zeta
    u = -np.sort(-w, axis=1)
    css = np.cumsum(u, axis=1) - mass
    k = np.arange(1, m + 1)
    # largest k with u_k > (css_k / k); always true for k = 1
    cond = u * k > css
    rho = m - np.argmax(cond[:, ::-1], axis=1)
    tau = css[np.arange(p.shape[0]), rho - 1] / rho
    return np.maximum(w - tau[:, None], 0.0) + zeta


def nearest_truncated(p, zeta):
    """Feasible point of the zeta-truncated simplex near the distribution ``p``.

    Uses the mixture ``(1 - m*zeta) p + zeta``, whose distance to ``p`` is
    at most ``2*zeta*m``.
    """
    p = np.asarray(p, dtype=np.float64)
    m = p.shape[-1]
    _check_zeta(zeta, m)
    return (1.0 - m * zeta) * p + zeta


def check_policy(p, num_states=None, num_actions=None, zeta=0.0, name="policy"):
    """Validate an ``(S, m)`` policy array and return it as float64."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2:
        raise PolicyError(f"{name}: expected 2-D (S, m) array, got shape {p.shape}")
    if num_states is not None and p.shape[0] != num_states:
        raise PolicyError(f"{name}: expected {num_states} states, got {p.shape[0]}")
    if num_actions is not None and p.shape[1] != num_actions:
        raise PolicyError(f"{name}: expected {num_actions} actions, got {p.shape[1]}")
    if not np.all(np.isfinite(p)):
        raise PolicyError(f"{name}: non-finite entries")
    if p.min() < zeta - ROW_TOL:
        s, a = np.unravel_index(np.argmin(p), p.shape)
        raise PolicyError(f"{name}[{s}][{a}] = {p[s, a]:.3g} is below the floor {zeta}")
    err = np.abs(p.sum(axis=1) - 1.0)
    if err.max() > ROW_TOL:
        s = int(np.argmax(err))
        raise PolicyError(f"{name}[{s}]: row sums to {p[s].sum():.17g}")
    return p


def check_profile(spec, profile: PolicyProfile, zeta_x=0.0, zeta_y=0.0) -> PolicyProfile:
    if len(profile.team) != spec.n_team:
        raise PolicyError(f"expected {spec.n_team} team policies, got {len(profile.team)}")
    for i, (x, a) in enumerate(zip(profile.team, spec.team_action_sizes)):
        check_policy(x, spec.num_states, a, zeta_x, name=f"team[{i}]")
    check_policy(profile.adversary, spec.num_states, spec.adversary_action_size, zeta_y, name="adversary")
    return profile


def uniform_policy(num_states, m):
    return np.full((num_states, m), 1.0 / m)


def uniform_profile(spec) -> PolicyProfile:
    S = spec.num_states
    return PolicyProfile(
        tuple(uniform_policy(S, a) for a in spec.team_action_sizes),
        uniform_policy(S, spec.adversary_action_size),
    )


def random_policy(rng, num_states, m, zeta=0.0):
    """Dirichlet(1) rows mixed toward uniform so that every entry is >= zeta."""
    p = rng.dirichlet(np.ones(m), size=num_states)
    return nearest_truncated(p, zeta) if zeta > 0 else p


def random_profile(spec, rng, zeta=0.0) -> PolicyProfile:
    S = spec.num_states
    team = tuple(random_policy(rng, S, a, zeta) for a in spec.team_action_sizes)
    return PolicyProfile(team, random_policy(rng, S, spec.adversary_action_size, zeta))


def profile_to_list(profile: PolicyProfile) -> list:
    """Nested lists ``[agent][state][action]``; the adversary is the last agent."""
    return [np.asarray(p).tolist() for p in profile.agents()]


def profile_from_list(doc, spec=None) -> PolicyProfile:
    if not isinstance(doc, list) or len(doc) < 2:
        raise PolicyError("profile must be a list of at least two agents (team..., adversary)")
    profile = PolicyProfile(tuple(np.asarray(p, dtype=np.float64) for p in doc[:-1]), np.asarray(doc[-1]))
    if spec is not None:
        check_profile(spec, profile)
    return profile


def write_profile(profile: PolicyProfile, path) -> None:
    Path(path).write_text(json.dumps(profile_to_list(profile)) + "\n")


def read_profile(path, spec=None) -> PolicyProfile:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise PolicyError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return profile_from_list(doc, spec)
