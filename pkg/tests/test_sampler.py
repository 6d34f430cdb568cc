import numpy as np
import pytest

from atmg.game_model import GameSpec, generate_random
from atmg.policy import random_profile, uniform_profile
from atmg.sampler import (
    SeedSpec,
    observed_reward,
    read_trajectories_jsonl,
    sample_batch,
    sample_geometric_horizon,
    sample_trajectory,
    stream,
    write_trajectories_jsonl,
)


def test_zero_horizon_is_empty(small_game):
    traj = sample_trajectory(small_game, uniform_profile(small_game), 0, 1)
    assert traj.horizon == 0


def test_deterministic_one_state_game():
    r = np.array([[[0.3]]])
    spec = GameSpec(1, (1,), 1, r, np.ones((1, 1, 1, 1)), 0.5, np.ones(1))
    traj = sample_trajectory(spec, uniform_profile(spec), 7, SeedSpec(3, 1, 2))
    assert np.all(traj.states == 0)
    assert np.allclose(traj.rewards, 0.3)


def test_initial_state_frequencies():
    spec = generate_random(2, 3, [2], 2, 0.5)
    batch = sample_batch(spec, uniform_profile(spec), 100_000, 5, H=1)
    freq = np.bincount(batch.states[:, 0], minlength=3) / 1e5
    se = np.sqrt(spec.initial_dist * (1 - spec.initial_dist) / 1e5)
    assert np.all(np.abs(freq - spec.initial_dist) <= 3 * se)


def test_geometric_horizon():
    assert all(sample_geometric_horizon(0.0, (1, 0, j)) == 1 for j in range(50))
    draws = stream(1).geometric(0.5, size=10**6)  # same law as the sampler's draw
    assert abs(draws.mean() - 2.0) <= 3 * draws.std() / 1e3
    spec = generate_random(0, 1, [1], 1, 0.9)
    lengths = sample_batch(spec, uniform_profile(spec), 20_000, 7).lengths
    p1 = np.mean(lengths == 1)
    assert abs(p1 - 0.1) <= 3 * np.sqrt(0.09 / 20_000)
    assert lengths.min() >= 1


def test_observed_rewards():
    assert observed_reward(1.0, 0, 2) == -0.5
    assert observed_reward(1.0, 1, 2) == -0.5
    assert observed_reward(0.7, 0, 1) == -0.7
    r = np.array([0.2, 0.9])
    total = sum(observed_reward(r, i, 3) for i in range(3)) + observed_reward(r, "adversary", 3)
    assert np.allclose(total, 0.0)


@pytest.mark.parametrize("workers", [2, 3, 7])
def test_thread_count_does_not_change_trajectories(small_game, workers):
    prof = random_profile(small_game, stream(2), zeta=0.1)
    a = sample_batch(small_game, prof, 200, 11, t=4, workers=1)
    b = sample_batch(small_game, prof, 200, 11, t=4, workers=workers)
    for name in ("states", "team_actions", "joint_actions", "adversary_actions", "rewards", "lengths"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_batch_slices_agree_with_single_draws(small_game):
    prof = uniform_profile(small_game)
    batch = sample_batch(small_game, prof, 10, 3, t=2, H=6)
    one = sample_trajectory(small_game, prof, 6, SeedSpec(3, 2, 4))
    assert np.array_equal(batch.trajectory(4).states, one.states)
    assert np.array_equal(batch.trajectory(4).rewards, one.rewards)


def test_joint_action_matches_members(small_game):
    batch = sample_batch(small_game, uniform_profile(small_game), 50, 1, H=5)
    ta = batch.team_actions
    assert np.array_equal(batch.joint_actions, ta[:, :, 0] * 2 + ta[:, :, 1])


def test_rewards_follow_the_table(small_game):
    batch = sample_batch(small_game, uniform_profile(small_game), 50, 1, H=5)
    expected = small_game.reward[batch.states, batch.joint_actions, batch.adversary_actions]
    assert np.array_equal(batch.rewards, expected)


def test_jsonl_round_trip(tmp_path, small_game):
    batch = sample_batch(small_game, uniform_profile(small_game), 5, 8)
    path = tmp_path / "t.jsonl"
    write_trajectories_jsonl(batch, path)
    back = read_trajectories_jsonl(path)
    assert len(back) == 5
    for j, tr in enumerate(back):
        ref = batch.trajectory(j)
        assert np.array_equal(tr.states, ref.states)
        assert np.array_equal(tr.team_actions, ref.team_actions)
        assert np.array_equal(tr.rewards, ref.rewards)
