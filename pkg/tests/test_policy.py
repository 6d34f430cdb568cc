import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from atmg.errors import PolicyError
from atmg.policy import (
    PolicyProfile,
    check_policy,
    nearest_truncated,
    profile_from_list,
    profile_to_list,
    project_policy,
    project_truncated_simplex,
    read_profile,
    uniform_policy,
    uniform_profile,
    write_profile,
)
from reference import simplex_projection_qp


def grid_of_truncated_simplex(m, zeta, step):
    """All points of the zeta-truncated simplex whose coordinates lie on a step grid."""
    k = int((1 - m * zeta) / step)
    for combo in itertools.product(range(k + 1), repeat=m - 1):
        head = np.array(combo) * step + zeta
        last = 1.0 - head.sum()
        if last < zeta:
            continue
        yield np.array([*head, last])


@pytest.mark.parametrize(
    "v, zeta, expected",
    [
        ((0.5, 0.5), 0.1, (0.5, 0.5)),
        ((1.0, 0.0), 0.1, (0.9, 0.1)),
        ((10.0, -10.0, 0.0), 0.05, (0.9, 0.05, 0.05)),
    ],
)
def test_projection_examples(v, zeta, expected):
    assert np.allclose(project_truncated_simplex(np.array(v), zeta), expected, atol=1e-12)


def test_projection_examples_against_grid():
    # (1, 0) at zeta 0.1: brute force over the grid of the truncated segment
    v = np.array([1.0, 0.0])
    best = min(grid_of_truncated_simplex(2, 0.1, 1e-4), key=lambda p: np.linalg.norm(p - v))
    assert np.allclose(project_truncated_simplex(v, 0.1), best, atol=1e-4)
    v = np.array([10.0, -10.0, 0.0])
    best = min(grid_of_truncated_simplex(3, 0.05, 1e-3), key=lambda p: np.linalg.norm(p - v))
    assert np.allclose(project_truncated_simplex(v, 0.05), best, atol=1e-3)


@given(
    v=arrays(np.float64, st.integers(1, 4), elements=st.floats(-3, 3)),
    frac=st.floats(0.0, 1.0),
)
def test_projection_beats_grid(v, frac):
    m = v.size
    zeta = frac / (2 * m)
    p = project_truncated_simplex(v, zeta)
    d = np.linalg.norm(p - v)
    step = 1e-3 if m <= 2 else (2e-2 if m == 3 else 5e-2)
    for q in grid_of_truncated_simplex(m, zeta, step):
        assert d <= np.linalg.norm(q - v) + 1e-6


@given(v=arrays(np.float64, st.integers(1, 5), elements=st.floats(-5, 5)), frac=st.floats(0.0, 1.0))
def test_projection_matches_convex_program(v, frac):
    zeta = frac / (2 * v.size)
    assert np.allclose(project_truncated_simplex(v, zeta), simplex_projection_qp(v, zeta), atol=1e-6)


@given(
    u=arrays(np.float64, (3, 4), elements=st.floats(-4, 4)),
    v=arrays(np.float64, (3, 4), elements=st.floats(-4, 4)),
    frac=st.floats(0.0, 1.0),
)
def test_projection_idempotent_and_nonexpansive(u, v, frac):
    zeta = frac / 8
    pu, pv = project_policy(u, zeta), project_policy(v, zeta)
    assert np.allclose(project_policy(pu, zeta), pu, atol=1e-12)
    assert np.linalg.norm(pu - pv) <= np.linalg.norm(u - v) + 1e-10
    assert np.all(pu >= zeta - 1e-12)
    assert np.allclose(pu.sum(axis=1), 1.0, atol=1e-10)


def test_projection_rejects_large_zeta():
    with pytest.raises(ValueError):
        project_truncated_simplex(np.ones(2) / 2, 0.26)


def test_deterministic_policy_projection():
    p = np.array([[1.0, 0.0], [0.0, 1.0]])
    out = project_policy(p, 0.1)
    assert np.allclose(np.sort(out, axis=1), [[0.1, 0.9], [0.1, 0.9]])
    feasible = np.array([[0.3, 0.7]])
    assert np.allclose(project_policy(feasible, 0.1), feasible)


def test_nearest_truncated_bounds():
    assert np.allclose(nearest_truncated(np.full(3, 1 / 3), 0.1), np.full(3, 1 / 3))
    q = nearest_truncated(np.array([1.0, 0.0]), 0.1)
    assert np.linalg.norm(q - np.array([1.0, 0.0])) <= 0.4
    zeta = 0.05
    for a in np.arange(0, 1.0001, 0.01):
        for b in np.arange(0, 1.0001 - a, 0.01):
            p = np.array([a, b, max(0.0, 1 - a - b)])
            q = nearest_truncated(p, zeta)
            assert q.min() >= zeta - 1e-12
            assert np.linalg.norm(q - p) <= 2 * zeta * 3 + 1e-12


def test_linear_objective_transfer_over_full_simplex(rng):
    # an eps-stationary point over the truncated set is nearly stationary over the whole simplex
    m, zeta = 3, 0.05
    for _ in range(50):
        c = rng.normal(size=m)
        p = project_truncated_simplex(np.full(m, 1 / m) - 10 * c, zeta)  # minimizer of c.p on the truncated set
        eps = max(0.0, max(c @ p - c @ q for q in np.eye(m) * (1 - m * zeta) + zeta))
        L_f = np.linalg.norm(c)
        full_dev = max(c @ p - c @ v for v in np.eye(m))
        assert full_dev <= eps + 2 * zeta * m * L_f + 1e-12


def test_uniform_policies():
    assert np.allclose(uniform_policy(3, 2), 0.5)
    assert np.allclose(uniform_policy(1, 4), 0.25)
    from atmg.game_model import generate_random

    spec = generate_random(0, 2, [2, 3], 4, 0.5)
    prof = uniform_profile(spec)
    for p in prof.agents():
        check_policy(p)


def test_check_policy_errors():
    with pytest.raises(PolicyError, match="row sums"):
        check_policy(np.array([[0.5, 0.6]]))
    with pytest.raises(PolicyError, match="below the floor"):
        check_policy(np.array([[0.05, 0.95]]), zeta=0.1)
    with pytest.raises(PolicyError, match="expected 3 states"):
        check_policy(np.full((2, 2), 0.5), num_states=3)


def test_profile_round_trip(tmp_path):
    prof = PolicyProfile((np.array([[0.2, 0.8]]), np.array([[0.5, 0.5]])), np.array([[0.1, 0.9]]))
    assert len(profile_to_list(prof)) == 3
    path = tmp_path / "p.json"
    write_profile(prof, path)
    back = read_profile(path)
    for a, b in zip(prof.agents(), back.agents()):
        assert np.array_equal(a, b)
    with pytest.raises(PolicyError):
        profile_from_list([[[1.0]]])
