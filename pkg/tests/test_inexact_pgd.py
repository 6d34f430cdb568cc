import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from atmg import inexact_pgd as pgd
from atmg.errors import NumericalError

box = pgd.box_projector(-1.0, 1.0)


def test_zero_gradient_keeps_point():
    z = np.array([0.3, -0.2])
    assert np.array_equal(pgd.step(z, np.zeros(2), 0.5, box), z)


def test_outward_gradient_on_boundary_is_absorbed():
    z = np.array([1.0, -1.0])
    assert np.array_equal(pgd.step(z, np.array([-3.0, 2.0]), 0.1, box), z)
    assert np.allclose(pgd.gradient_mapping(z, np.array([-3.0, 2.0]), 0.1, box), 0.0)


def test_rejects_nonpositive_step():
    with pytest.raises(ValueError):
        pgd.step(np.zeros(1), np.zeros(1), 0.0, box)


def test_squared_norm_contracts_geometrically():
    z0 = np.array([0.8, -0.5, 0.1])
    z = z0
    for t in range(1, 20):
        z = pgd.step(z, lambda v: 2 * v, 0.25, box)
        assert np.allclose(z, 0.5**t * z0, rtol=0, atol=1e-15)


def test_schedule_examples():
    assert pgd.paper_schedule(1.0, 4.0, 0.1).eta == pytest.approx(1 / 8)
    assert pgd.paper_schedule(1.0, 4.0, 0.1).M == 1
    assert pgd.paper_schedule(0.5, 1.0, 0.5).eta == pytest.approx(1 / 32)
    sch = pgd.paper_schedule(0.5, 1.0, 0.5, sigma2=0.09)
    assert sch.M == math.ceil(9 * 0.09 / (2 * 0.25))
    assert not pgd.paper_schedule(1.0, 1.0, 0.1, theta=0.02).theta_ok
    with pytest.raises(ValueError):
        pgd.paper_schedule(0.0, 1.0, 0.1)


def test_schedule_slack_matches_surrogate_step():
    for p, lp, eps in [(0.5, 1.0, 0.5), (0.3, 2.0, 0.05), (0.9, 0.7, 0.01)]:
        sch = pgd.paper_schedule(p, lp, eps)
        smooth = pgd.SmoothnessSpec(p, lp, sch.delta)
        assert 1 / (2 * smooth.l_prime) == pytest.approx(sch.eta, rel=1e-12)


def test_smoothness_spec_validation():
    assert pgd.SmoothnessSpec(1.0, 3.0, 0.7).l_prime == 3.0
    with pytest.raises(ValueError):
        pgd.SmoothnessSpec(0.5, 1.0, 0.0)
    with pytest.raises(ValueError):
        pgd.SmoothnessSpec(1.5, 1.0, 0.1)


def test_certificate_formula():
    assert pgd.certificate_translate(0.0, 0.1, 1.0, 0.5, 0.0) == 0.0
    assert pgd.certificate_translate(0.2, 0.1, 2.0, 0.5, 0.01) == pytest.approx(0.01 + 0.2 + 2 * 0.02**0.5)
    with pytest.raises(ValueError):
        pgd.certificate_translate(-1.0, 0.1, 1.0, 1.0, 0.0)


@given(st.lists(st.floats(0, 2), min_size=5, max_size=5), st.lists(st.floats(0, 1), min_size=5, max_size=5))
def test_certificate_monotone(base, bumps):
    eps, eta, lp, p, theta = base
    p = max(p / 2, 1e-3)
    lo = pgd.certificate_translate(eps, eta, lp, p, theta)
    hi = pgd.certificate_translate(eps + bumps[0], eta + bumps[1], lp + bumps[2], p, theta + bumps[4])
    assert hi >= lo - 1e-12


def _max_linear_deviation(grad, z_plus):
    # worst first-order decrease over feasible points within unit distance, 1-D
    lo, hi = max(-1.0, z_plus - 1.0), min(1.0, z_plus + 1.0)
    g = float(grad(np.array([z_plus]))[0])
    return max(-g * (lo - z_plus), -g * (hi - z_plus))


@pytest.mark.parametrize("p", [1.0, 0.5, 0.25])
def test_certificate_dominates_exhaustive_direction_check(p):
    _, grad, lp = pgd.power_objective(p)
    for theta in (0.0, 0.05):
        for z in np.linspace(-1, 1, 41):
            for eta in (0.01, 0.1, 0.5):
                g = grad(np.array([z])) + theta  # biased oracle
                r = float(np.abs(pgd.gradient_mapping(np.array([z]), g, eta, box))[0])
                z_plus = float(box(np.array([z]) - eta * g)[0])
                bound = pgd.certificate_translate(r, eta, lp, p, theta)
                assert _max_linear_deviation(grad, z_plus) <= bound + 1e-12


def test_deviation_can_exceed_step_squared_form():
    # a bound scaling like eta^2 * eps instead of eps fails far from stationarity
    _, grad, lp = pgd.power_objective(1.0)
    z, eta = np.array([-1.0]), 0.01
    r = float(np.abs(pgd.gradient_mapping(z, grad(z), eta, box))[0])
    z_plus = float(box(z - eta * grad(z))[0])
    assert _max_linear_deviation(grad, z_plus) > eta**2 * r + lp * (eta * r)
    assert _max_linear_deviation(grad, z_plus) <= pgd.certificate_translate(r, eta, lp, 1.0, 0.0)


@pytest.mark.parametrize("p", [0.25, 0.5, 0.75, 1.0])
def test_holder_remainder_on_grid(p):
    value, grad, lp = pgd.power_objective(p)
    zs = np.linspace(-1, 1, 81)
    for z in zs:
        dz = zs - z
        rem = np.array([abs(value(np.array([w])) - value(np.array([z])) - grad(np.array([z]))[0] * d) for w, d in zip(zs, dz)])
        assert np.all(rem <= pgd.holder_remainder_bound(lp, p, np.abs(dz)) + 1e-12)


@pytest.mark.parametrize("p,delta", [(0.5, 0.01), (0.25, 0.1), (0.75, 1e-4), (1.0, 0.0)])
def test_quadratic_majorant_on_grid(p, delta):
    smooth = pgd.SmoothnessSpec(p, 1.7, delta)
    d = np.linspace(0, 2, 2001)
    assert np.all(pgd.holder_remainder_bound(1.7, p, d) <= pgd.quadratic_majorant(smooth, d) + 1e-12)


def _plain_pgd(z0, grad, eta, T, lo, hi):
    out = [np.array(z0, float)]
    for _ in range(T):
        z = out[-1]
        out.append(np.minimum(np.maximum(z - eta * grad(z), lo), hi))
    return np.array(out)


def test_smooth_exact_run_matches_plain_pgd():
    Q = np.array([[3.0, 1.0], [1.0, 2.0]])
    b = np.array([-4.0, 1.0])
    grad = lambda z: Q @ z + b
    sch = pgd.Schedule(eta=0.2, T=60, delta=0.0, M=1)
    res = pgd.run(pgd.noisy_oracle(grad), pgd.box_projector(-0.5, 0.5), [0.1, 0.4], sch, seed=3)
    ref = _plain_pgd([0.1, 0.4], grad, 0.2, 60, -0.5, 0.5)
    assert np.array_equal(res.iterates, ref)


def test_exact_run_reaches_tolerance_on_power_objective():
    value, grad, lp = pgd.power_objective(0.5)
    sch = pgd.paper_schedule(0.5, lp, 0.05, phi_gap=2 / 3)
    res = pgd.run(pgd.noisy_oracle(grad, value=value), box, [0.9], sch, seed=0, lp=lp, p=0.5, max_iter=4000)
    z = res.iterates[res.certificate.t_star]
    r = np.linalg.norm(pgd.gradient_mapping(z, grad(z), sch.eta, box))
    assert r <= 0.05
    assert r == pytest.approx(res.certificate.grad_map_norm, abs=1e-14)


def test_averaged_bound_with_noise_and_bias():
    p, delta, sigma, M, theta, T = 0.5, 0.01, 0.1, 10, 0.01, 300
    value, grad, lp = pgd.power_objective(p)
    smooth = pgd.SmoothnessSpec(p, lp, delta)
    sch = pgd.Schedule(1 / (2 * smooth.l_prime), T, delta, M)
    oracle = pgd.noisy_oracle(grad, sigma=sigma, bias=theta)
    sq = []
    for seed in range(20):
        res = pgd.run(oracle, box, [1.0], sch, seed, lp=lp, p=p)
        sq.append(np.mean([row[2] ** 2 for row in res.trace]))
    bound = pgd.averaged_mapping_bound(p, lp, 2 / 3, delta, T, sigma**2, M, theta)
    assert np.mean(sq) <= 1.1 * bound


def test_minibatch_step_distance_bound():
    _, grad, _ = pgd.power_objective(0.5)
    oracle = pgd.noisy_oracle(grad, sigma=0.3)
    eta, M, z = 0.05, 4, np.array([0.4])
    exact = box(z - eta * grad(z))
    d = [float(np.sum((box(z - eta * oracle.grad(z, np.random.default_rng(s), M)) - exact) ** 2)) for s in range(4000)]
    assert np.mean(d) <= 1.1 * pgd.minibatch_step_bound(eta, 0.09, M)


def test_selection_rules_and_determinism():
    value, grad, lp = pgd.power_objective(0.5)
    sch = pgd.Schedule(0.01, 50, 0.01, 4)
    oracle = pgd.noisy_oracle(grad, sigma=0.1, value=value)
    a = pgd.run(oracle, box, [0.7], sch, seed=5)
    b = pgd.run(oracle, box, [0.7], sch, seed=5)
    assert np.array_equal(a.iterates, b.iterates) and a.certificate == b.certificate
    rnd = pgd.run(oracle, box, [0.7], sch, seed=5, selection="random")
    assert 0 <= rnd.certificate.t_star < 50
    with pytest.raises(ValueError):
        pgd.run(oracle, box, [0.7], sch, seed=5, selection="best")


def test_nonfinite_gradient_aborts():
    oracle = pgd.OracleSpec(lambda z, rng, M: np.array([np.nan]))
    with pytest.raises(NumericalError):
        pgd.run(oracle, box, [0.1], pgd.Schedule(0.1, 5, 0.0, 1), seed=0)


def test_trace_csv_round_trip(tmp_path):
    value, grad, _ = pgd.power_objective(1.0)
    res = pgd.run(pgd.noisy_oracle(grad, value=value), box, [0.5], pgd.Schedule(0.1, 7, 0.0, 1), seed=0)
    path = tmp_path / "trace.csv"
    pgd.write_trace_csv(res.trace, path)
    assert path.read_text().splitlines()[0] == "t,objective_estimate,grad_map_norm_estimate,stepsize"
    assert pgd.read_trace_csv(path) == res.trace
