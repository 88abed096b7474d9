import math
from fractions import Fraction

import numpy as np
import pytest

from rbmlab.environment import (EnvironmentDraw, annealed_replicates, coupled_run,
                                quenched_replicates, reflection_to_routing,
                                routing_to_reflection, sample_environment)
from rbmlab.laws import InitialLaw
from rbmlab.paths import TimeGrid, derive_seed, sample_brownian
from rbmlab.srbm import ReflectionSpec, simulate_particle_system


def test_two_point_zero_width_is_homogeneous():
    env = sample_environment(5, 0.3, family="two-point", env_seed=1, half_width=0.0)
    off = ~np.eye(5, dtype=bool)
    assert np.all(env.rho[off] == 0.3)
    assert env.spec().kind == "homogeneous" and env.spec().a == 0.3


def test_uniform_clt():
    n, a, h = 100, 0.2, 0.3
    env = sample_environment(n, a, 0.1, "uniform", 4, h)
    vals = env.rho[~np.eye(n, dtype=bool)]
    assert abs(vals.mean() - a) <= 3 * (h / math.sqrt(3)) / math.sqrt(n * (n - 1))


@pytest.mark.parametrize("family", ["uniform", "two-point", "truncated-gaussian"])
def test_support_and_mean(family):
    env = sample_environment(60, -0.4, 0.1, family, 7, 0.5)
    vals = env.rho[~np.eye(60, dtype=bool)]
    assert env.max_abs() <= 0.9
    assert np.all((vals >= -0.9) & (vals <= 0.1))
    sd = 0.5 if family == "two-point" else 0.5 / math.sqrt(3)
    assert abs(vals.mean() + 0.4) < 4 * sd / math.sqrt(vals.size)


def test_margin_violation_rejected():
    with pytest.raises(ValueError):
        sample_environment(4, 0.8, 0.1, "uniform", 0, 0.2)
    with pytest.raises(ValueError):
        sample_environment(4, 0.0, 0.1, "cauchy", 0, 0.2)


def test_draw_is_deterministic_and_serializable():
    small = sample_environment(6, 0.1, 0.1, "uniform", 3, 0.2)
    assert np.array_equal(small.rho, sample_environment(6, 0.1, 0.1, "uniform", 3, 0.2).rho)
    assert not np.array_equal(small.rho, sample_environment(6, 0.1, 0.1, "uniform", 4, 0.2).rho)
    again = EnvironmentDraw.from_json(small.to_json())
    assert np.array_equal(again.rho, small.rho)


def test_zero_width_coupling_is_exactly_zero():
    env = sample_environment(16, 0.2, 0.1, "uniform", 5, 0.0)
    res = coupled_run(env, TimeGrid(1.0, 100), noise_seed=3)
    assert res.max_dX == 0 and res.max_dL == 0


def _tandem_oracle(z, r12, r21, stop=Fraction(1, 10**40)):
    K = len(z[0])
    L = [[Fraction(0)] * K, [Fraction(0)] * K]
    coup = (r12, r21)
    while True:
        new = []
        for i in range(2):
            run, row = Fraction(0), []
            for k in range(K):
                run = max(run, -(z[i][k] + coup[i] * L[1 - i][k]))
                row.append(run)
            new.append(row)
        change = max(abs(new[i][k] - L[i][k]) for i in range(2) for k in range(K))
        L = new
        if change < stop:
            return L


def test_coupling_against_tandem_oracle():
    env = sample_environment(2, 0.0, 0.1, "uniform", 11, 0.8)
    g = TimeGrid(1.0, 4)
    res = coupled_run(env, g, noise_seed=2, tol=1e-15)
    W = sample_brownian(g, 2, 0.0, 1.0, 2).values
    z = [[Fraction(v) for v in row] for row in W]
    hat = _tandem_oracle(z, Fraction(env.rho[0, 1]), Fraction(env.rho[1, 0]))
    det = _tandem_oracle(z, Fraction(0), Fraction(0))
    dL = [max(abs(float(hat[i][k] - det[i][k])) for k in range(5)) for i in range(2)]
    assert np.allclose(res.dL, dL, atol=1e-12, rtol=0)
    assert max(dL) > 0


def test_quenched_and_annealed_single_replicate_agree():
    g = TimeGrid(1.0, 50)
    env = sample_environment(6, 0.2, 0.1, "uniform", derive_seed(9, 0), 0.3)
    q = quenched_replicates(env, 1, 4, g)
    an = annealed_replicates(1, 6, 0.2, 9, 4, g, half_width=0.3)
    assert np.array_equal(q[0].L, an[0].L)


def test_quenched_zero_width_matches_homogeneous():
    g = TimeGrid(1.0, 50)
    env = sample_environment(6, 0.2, 0.1, "uniform", 1, 0.0)
    q = quenched_replicates(env, 3, 10, g)
    for j, s in enumerate(q):
        h = simulate_particle_system(6, 0.2, InitialLaw.point(0.0), g, seed=derive_seed(10, j))
        assert np.array_equal(s.L, h.L)


def test_replicates_reject_empty():
    env = sample_environment(3, 0.0, 0.1, "uniform", 0, 0.1)
    with pytest.raises(ValueError):
        quenched_replicates(env, 0, 0, TimeGrid(1.0, 5))


def test_jackson_mapping():
    assert np.array_equal(routing_to_reflection(np.zeros((3, 3))), np.zeros((3, 3)))
    P = np.zeros((3, 3))
    P[1, 0] = 0.1
    rho = routing_to_reflection(P)
    assert rho[0, 1] == pytest.approx(-0.2)
    R = ReflectionSpec.from_rho(rho).matrix()
    assert np.allclose(R, np.eye(3) - P.T)


def test_jackson_round_trip():
    rng = np.random.default_rng(0)
    for n in (2, 3, 7, 20):
        P = rng.random((n, n))
        np.fill_diagonal(P, 0)
        P /= P.sum(axis=1, keepdims=True) * rng.uniform(1.0, 2.0, (n, 1))
        back = reflection_to_routing(routing_to_reflection(P))
        # dividing by n - 1 after multiplying can move the last bit
        assert np.allclose(back, P, rtol=2 * np.finfo(float).eps, atol=0)


def test_jackson_rejects_bad_input():
    with pytest.raises(ValueError):
        routing_to_reflection([[0, 0.7], [-0.1, 0]])
    with pytest.raises(ValueError):
        routing_to_reflection([[0, 0.6, 0.6], [0, 0, 0], [0, 0, 0]])
    with pytest.raises(ValueError):
        reflection_to_routing([[0, 0.2], [-0.1, 0]])
