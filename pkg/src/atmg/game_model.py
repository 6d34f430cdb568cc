"""Tabular adversarial team Markov games.

A game has ``n`` team players who share one cost and a single adversary who
collects the reward ``r[s, a, b]``. ``a`` is the row-major index of the joint
team action ``(a_1, ..., a_n)``. Each team player observes ``-r / n``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GameParseError, GameValidationError

ROW_TOL = 1e-12
MAX_JOINT_ACTIONS = 10_000

_REQUIRED_FIELDS = (
    "num_states",
    "team_action_sizes",
    "adversary_action_size",
    "discount",
    "initial_dist",
    "reward",
    "transition",
)


@dataclass(frozen=True, eq=False)
class GameSpec:
    """Immutable dense description of an adversarial team Markov game."""

    num_states: int
    team_action_sizes: tuple[int, ...]
    adversary_action_size: int
    reward: np.ndarray  # (S, A, B)
    transition: np.ndarray  # (S, A, B, S)
    discount: float
    initial_dist: np.ndarray  # (S,)

    def __post_init__(self):
        object.__setattr__(self, "team_action_sizes", tuple(int(a) for a in self.team_action_sizes))
        for name in ("reward", "transition", "initial_dist"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def n_team(self) -> int:
        return len(self.team_action_sizes)

    @property
    def joint_size(self) -> int:
        return int(np.prod(self.team_action_sizes))

    @property
    def num_params(self) -> int:
        """Total number of per-state action probabilities, sum_i A_i + B."""
        return int(sum(self.team_action_sizes) + self.adversary_action_size)

    def __eq__(self, other):
        if not isinstance(other, GameSpec):
            return NotImplemented
        return (
            self.num_states == other.num_states
            and self.team_action_sizes == other.team_action_sizes
            and self.adversary_action_size == other.adversary_action_size
            and self.discount == other.discount
            and np.array_equal(self.initial_dist, other.initial_dist)
            and np.array_equal(self.reward, other.reward)
            and np.array_equal(self.transition, other.transition)
        )

    __hash__ = None


def flatten_joint(actions, sizes) -> int:
    """Row-major index of the joint team action ``actions``."""
    return int(np.ravel_multi_index(tuple(int(a) for a in actions), tuple(sizes)))


def unflatten_joint(index: int, sizes) -> tuple[int, ...]:
    return tuple(int(a) for a in np.unravel_index(int(index), tuple(sizes)))


def validate(spec: GameSpec) -> list[str]:
    """Return a list of human-readable invariant violations (empty when valid)."""
    out = []
    S, B = spec.num_states, spec.adversary_action_size
    sizes = spec.team_action_sizes
    if S < 1:
        out.append(f"num_states: must be >= 1, got {S}")
    if len(sizes) < 1:
        out.append("team_action_sizes: need at least one team player")
    for i, a in enumerate(sizes):
        if a < 1:
            out.append(f"team_action_sizes[{i}]: must be >= 1, got {a}")
    if B < 1:
        out.append(f"adversary_action_size: must be >= 1, got {B}")
    if out:
        return out
    A = spec.joint_size
    g = spec.discount
    if not (math.isfinite(g) and 0.0 <= g < 1.0):
        out.append(f"discount: discount must be < 1 and >= 0, got {g!r}")

    rho = spec.initial_dist
    if rho.shape != (S,):
        out.append(f"initial_dist: expected shape ({S},), got {rho.shape}")
    else:
        if abs(rho.sum() - 1.0) > ROW_TOL:
            out.append(f"initial_dist: sums to {rho.sum():.17g}, off by {abs(rho.sum() - 1.0):.3g}")
        if not np.all(rho > 0):
            s = int(np.argmin(rho))
            out.append(f"initial_dist[{s}]: initial distribution not full-support (value {rho[s]:.3g})")

    r = spec.reward
    if r.shape != (S, A, B):
        out.append(f"reward: expected shape {(S, A, B)}, got {r.shape}")
    else:
        bad = np.argwhere(~((r >= 0.0) & (r <= 1.0)))
        for s, a, b in bad[:20]:
            out.append(f"reward[{s}][{a}][{b}]: value {r[s, a, b]!r} outside [0, 1]")

    P = spec.transition
    if P.shape != (S, A, B, S):
        out.append(f"transition: expected shape {(S, A, B, S)}, got {P.shape}")
    else:
        neg = np.argwhere(~(P >= 0.0).all(axis=-1))
        for s, a, b in neg[:20]:
            out.append(f"transition[{s}][{a}][{b}]: negative entry, min {P[s, a, b].min():.3g}")
        err = np.abs(P.sum(axis=-1) - 1.0)
        for s, a, b in np.argwhere(~(err <= ROW_TOL))[:20]:
            out.append(
                f"transition[{s}][{a}][{b}]: row sums to {P[s, a, b].sum():.17g}, off by {err[s, a, b]:.3g}"
            )
    return out


def check_game(spec: GameSpec) -> GameSpec:
    """Raise :class:`GameValidationError` unless ``spec`` is a valid game."""
    if not isinstance(spec, GameSpec):
        raise TypeError(f"expected GameSpec, got {type(spec).__name__}")
    problems = validate(spec)
    if problems:
        raise GameValidationError(problems)
    return spec


def generate_random(seed, S, team_action_sizes, B, gamma, sparsity=1.0) -> GameSpec:
    """Draw a random game; identical arguments give bit-identical games.

    Rewards are i.i.d. uniform on [0, 1]. Each transition row puts exponential
    weights on a random support of ``max(1, round(sparsity * S))`` states.
    """
    sizes = tuple(int(a) for a in team_action_sizes)
    if S < 1 or B < 1 or not sizes or min(sizes) < 1:
        raise ValueError("all sizes must be >= 1")
    if not (0.0 <= gamma < 1.0):
        raise ValueError(f"discount must be < 1 and >= 0, got {gamma}")
    if not (0.0 < sparsity <= 1.0):
        raise ValueError(f"sparsity must lie in (0, 1], got {sparsity}")
    A = int(np.prod(sizes))
    if A > MAX_JOINT_ACTIONS:
        raise ValueError(f"joint team action space {A} exceeds {MAX_JOINT_ACTIONS}")
    rng = np.random.default_rng(seed)
    reward = rng.random((S, A, B))
    weights = rng.exponential(size=(S, A, B, S))
    k = max(1, int(round(sparsity * S)))
    if k < S:
        keys = rng.random((S, A, B, S))
        cut = np.sort(keys, axis=-1)[..., k - 1 : k]
        weights = np.where(keys <= cut, weights, 0.0)
    # exponential draws are > 0 almost surely; guard the measure-zero case
    weights[weights.sum(axis=-1) == 0.0, 0] = 1.0
    transition = weights / weights.sum(axis=-1, keepdims=True)
    rho = rng.exponential(size=S) + 0.1
    rho /= rho.sum()
    return GameSpec(S, sizes, B, reward, transition, gamma, rho)


def make_matching_pennies(gamma) -> GameSpec:
    """One-state matching pennies: the adversary earns 1 when actions match."""
    if not (0.0 <= gamma < 1.0):
        raise ValueError(f"discount must be < 1 and >= 0, got {gamma}")
    reward = np.eye(2)[None]
    transition = np.ones((1, 2, 2, 1))
    return GameSpec(1, (2,), 2, reward, transition, gamma, np.ones(1))


def game_to_dict(spec: GameSpec) -> dict:
    return {
        "num_states": spec.num_states,
        "team_action_sizes": list(spec.team_action_sizes),
        "adversary_action_size": spec.adversary_action_size,
        "discount": spec.discount,
        "initial_dist": spec.initial_dist.tolist(),
        "reward": spec.reward.tolist(),
        "transition": spec.transition.tolist(),
    }


def game_from_dict(doc: dict, source="<dict>") -> GameSpec:
    if not isinstance(doc, dict):
        raise GameParseError(f"{source}: top level must be a JSON object")
    for name in _REQUIRED_FIELDS:
        if name not in doc:
            raise GameParseError(f"{source}: missing field {name!r}", field=name)
    try:
        spec = GameSpec(
            num_states=int(doc["num_states"]),
            team_action_sizes=tuple(int(a) for a in doc["team_action_sizes"]),
            adversary_action_size=int(doc["adversary_action_size"]),
            reward=np.asarray(doc["reward"], dtype=np.float64),
            transition=np.asarray(doc["transition"], dtype=np.float64),
            discount=float(doc["discount"]),
            initial_dist=np.asarray(doc["initial_dist"], dtype=np.float64),
        )
    except (TypeError, ValueError) as exc:
        raise GameParseError(f"{source}: malformed field value ({exc})") from exc
    return check_game(spec)


def write_game(spec: GameSpec, path) -> None:
    # json writes floats with repr, which round-trips float64 exactly
    Path(path).write_text(json.dumps(game_to_dict(spec)) + "\n")


def read_game(path) -> GameSpec:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GameParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return game_from_dict(doc, source=str(path))
