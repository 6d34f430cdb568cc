"""Trajectory simulation with coordinate-keyed random streams.

Trajectory ``j`` of batch ``t`` under master seed ``m`` draws every random
number it needs from its own Philox stream keyed by ``(m, t, j)``: first the
horizon (geometric protocol only), then the initial-state uniform, then one
row of ``n + 2`` uniforms per step (team actions, adversary action, next
state). The batch is then simulated in lockstep with inverse-CDF lookups, so
splitting a batch across workers cannot change any trajectory.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class SeedSpec:
    master: int
    t: int = 0
    j: int = 0


def stream(master, t=0, j=0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(master), int(t), int(j)])))


def _as_seed(seed) -> SeedSpec:
    if isinstance(seed, SeedSpec):
        return seed
    if isinstance(seed, (tuple, list)):
        return SeedSpec(*seed)
    return SeedSpec(int(seed))


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray  # (H,)
    team_actions: np.ndarray  # (H, n) per-player action indices
    joint_actions: np.ndarray  # (H,)
    adversary_actions: np.ndarray  # (H,)
    rewards: np.ndarray  # (H,)

    @property
    def horizon(self) -> int:
        return int(self.states.shape[0])

    def steps(self):
        for h in range(self.horizon):
            yield (
                int(self.states[h]),
                int(self.joint_actions[h]),
                int(self.adversary_actions[h]),
                float(self.rewards[h]),
            )


@dataclass(frozen=True)
class TrajectoryBatch:
    """``K`` trajectories padded to a common length; ``mask`` marks real steps."""

    states: np.ndarray  # (K, Hmax)
    team_actions: np.ndarray  # (K, Hmax, n)
    joint_actions: np.ndarray
    adversary_actions: np.ndarray
    rewards: np.ndarray  # 0 on padding
    lengths: np.ndarray  # (K,)

    @property
    def size(self) -> int:
        return int(self.lengths.shape[0])

    @property
    def mask(self) -> np.ndarray:
        return np.arange(self.states.shape[1])[None, :] < self.lengths[:, None]

    def trajectory(self, j) -> Trajectory:
        L = int(self.lengths[j])
        return Trajectory(
            self.states[j, :L].copy(),
            self.team_actions[j, :L].copy(),
            self.joint_actions[j, :L].copy(),
            self.adversary_actions[j, :L].copy(),
            self.rewards[j, :L].copy(),
        )


def sample_geometric_horizon(gamma, seed) -> int:
    """Horizon ``H >= 1`` with ``P(H = h) = gamma^(h-1) (1 - gamma)``."""
    if not (0.0 <= gamma < 1.0):
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    sd = _as_seed(seed)
    return int(stream(sd.master, sd.t, sd.j).geometric(1.0 - gamma))


def _draw(master, t, js, H, gamma, n):
    """Per-trajectory randomness for coordinates ``js``."""
    lengths = np.empty(len(js), dtype=np.int64)
    u0 = np.empty(len(js))
    rows = []
    for k, j in enumerate(js):
        g = stream(master, t, j)
        L = int(g.geometric(1.0 - gamma)) if H is None else int(H)
        lengths[k] = L
        u0[k] = g.random()
        rows.append(g.random((L, n + 2)))
    return lengths, u0, rows


def _inverse_cdf(cdf_rows, u):
    m = cdf_rows.shape[-1]
    return np.minimum(np.sum(u[:, None] >= cdf_rows, axis=1), m - 1)


def sample_batch(spec, profile, K, master, t=0, H=None, workers=1, j_start=0) -> TrajectoryBatch:
    """Simulate ``K`` trajectories at coordinates ``(master, t, j_start + k)``.

    ``H=None`` draws each horizon from Geom(1 - gamma) on {1, 2, ...};
    otherwise every trajectory has exactly ``H`` steps.
    """
    if H is not None and H < 0:
        raise ValueError("H must be >= 0")
    n = spec.n_team
    js = list(range(j_start, j_start + K))
    if workers > 1 and K > 1:
        chunks = [js[c::workers] for c in range(workers)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: _draw(master, t, c, H, spec.discount, n), chunks))
        order = np.argsort(np.concatenate([np.asarray(c) for c in chunks]), kind="stable")
        lengths = np.concatenate([p[0] for p in parts])[order]
        u0 = np.concatenate([p[1] for p in parts])[order]
        flat = [r for p in parts for r in p[2]]
        rows = [flat[o] for o in order]
    else:
        lengths, u0, rows = _draw(master, t, js, H, spec.discount, n)

    Hmax = int(lengths.max()) if K else 0
    U = np.zeros((K, Hmax, n + 2))
    for k, r in enumerate(rows):
        U[k, : r.shape[0]] = r

    cdf_rho = np.cumsum(spec.initial_dist)
    cdf_x = [np.cumsum(x, axis=1) for x in profile.team]
    cdf_y = np.cumsum(profile.adversary, axis=1)
    cdf_P = np.cumsum(spec.transition, axis=-1)
    sizes = spec.team_action_sizes

    states = np.zeros((K, Hmax), dtype=np.int64)
    team_actions = np.zeros((K, Hmax, n), dtype=np.int64)
    joint = np.zeros((K, Hmax), dtype=np.int64)
    adv = np.zeros((K, Hmax), dtype=np.int64)
    rewards = np.zeros((K, Hmax))
    s = np.minimum(np.searchsorted(cdf_rho, u0, side="right"), spec.num_states - 1)
    for h in range(Hmax):
        states[:, h] = s
        for i in range(n):
            team_actions[:, h, i] = _inverse_cdf(cdf_x[i][s], U[:, h, i])
        a = np.ravel_multi_index(tuple(team_actions[:, h, i] for i in range(n)), sizes)
        b = _inverse_cdf(cdf_y[s], U[:, h, n])
        joint[:, h] = a
        adv[:, h] = b
        rewards[:, h] = spec.reward[s, a, b]
        s = _inverse_cdf(cdf_P[s, a, b], U[:, h, n + 1])
    mask = np.arange(Hmax)[None, :] < lengths[:, None]
    rewards[~mask] = 0.0
    return TrajectoryBatch(states, team_actions, joint, adv, rewards, lengths)


def sample_trajectory(spec, profile, H, seed) -> Trajectory:
    """One trajectory of exactly ``H`` steps; ``seed`` is an int or :class:`SeedSpec`."""
    sd = _as_seed(seed)
    return sample_batch(spec, profile, 1, sd.master, sd.t, H=H, j_start=sd.j).trajectory(0)


def observed_reward(reward, agent, n_team):
    """Reward seen by ``agent``: the adversary sees ``r``, each team player ``-r / n``."""
    if agent == "adversary":
        return reward
    if not (0 <= int(agent) < n_team):
        raise ValueError(f"team index {agent} out of range for n={n_team}")
    return -np.asarray(reward) / n_team if np.ndim(reward) else -reward / n_team


def write_trajectories_jsonl(batch: TrajectoryBatch, path) -> None:
    with Path(path).open("w") as fh:
        for j in range(batch.size):
            for h in range(int(batch.lengths[j])):
                rec = {
                    "trajectory": j,
                    "h": h,
                    "state": int(batch.states[j, h]),
                    "team_actions": batch.team_actions[j, h].tolist(),
                    "joint_action": int(batch.joint_actions[j, h]),
                    "adversary_action": int(batch.adversary_actions[j, h]),
                    "reward": float(batch.rewards[j, h]),
                }
                fh.write(json.dumps(rec) + "\n")


def read_trajectories_jsonl(path) -> list:
    """Trajectories from a JSON-lines dump, in file order."""
    trajs = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        trajs.setdefault(rec["trajectory"], []).append(rec)
    out = []
    for j in sorted(trajs):
        recs = sorted(trajs[j], key=lambda r: r["h"])
        out.append(
            Trajectory(
                np.array([r["state"] for r in recs], dtype=np.int64),
                np.array([r["team_actions"] for r in recs], dtype=np.int64).reshape(len(recs), -1),
                np.array([r["joint_action"] for r in recs], dtype=np.int64),
                np.array([r["adversary_action"] for r in recs], dtype=np.int64),
                np.array([r["reward"] for r in recs]),
            )
        )
    return out
