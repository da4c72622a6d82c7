import json

import numpy as np
import pytest

from convorder.model import ConvexPayoff, VolatilityField, constant_field
from convorder.scenarios import diagonal_trig_field, trig_perturbed_field
from convorder.sde import (
    MeanExistenceError,
    coupled_paths,
    estimate,
    mc_mean,
    payoff_samples,
    simulate_paths,
)

N = 20_000


def square(w):
    return ConvexPayoff(lambda z: z * z, w)


def test_zero_field_stays_put():
    f = constant_field(np.zeros((2, 2)))
    ens = simulate_paths(f, [1.0, 1.0], 1.0, n_steps=8, n_paths=100)
    assert np.all(ens.terminal_states == 1.0)
    m = mc_mean(ens, square([1.0, 1.0]))
    assert m.mean == 4.0 and m.std_error == 0.0


def test_brownian_moments():
    ens = simulate_paths(constant_field(np.eye(2)), [0.0, 0.0], 1.0, n_steps=16, n_paths=N, seed=1)
    x = ens.terminal_states
    assert np.all(np.abs(x.mean(0)) < 3.0 / np.sqrt(N))
    assert np.allclose(x.var(0), 1.0, atol=0.05)


def test_ito_isometry_variances():
    ens = simulate_paths(constant_field(np.diag([2.0, 3.0])), [0.0, 0.0], 1.0, n_steps=16, n_paths=N, seed=2)
    v = ens.terminal_states.var(0)
    assert v[0] == pytest.approx(4.0, rel=0.05)
    assert v[1] == pytest.approx(9.0, rel=0.05)


def test_sum_of_squares_mean():
    ens = simulate_paths(constant_field(np.eye(2)), [0.0, 0.0], 1.0, n_steps=16, n_paths=N, seed=3)
    m = mc_mean(ens, square([1.0, 1.0]))
    assert abs(m.mean - 2.0) < 3 * m.std_error


def test_martingale_linear_payoff():
    f = trig_perturbed_field(0.1)
    ens = simulate_paths(f, [0.3, -0.2], 1.0, n_steps=64, n_paths=N, seed=4)
    m = mc_mean(ens, ConvexPayoff(lambda z: z, [1.0, 1.0]))
    assert abs(m.mean - 0.1) < 3 * m.std_error


def test_coupled_identical_fields():
    f = trig_perturbed_field(0.1)
    ex, ey = coupled_paths(f, f, [0.0, 0.0], 1.0, n_steps=32, n_paths=1000, seed=5)
    assert np.array_equal(ex.terminal_states, ey.terminal_states)


def test_coupled_scaling_is_exact():
    ex, ey = coupled_paths(constant_field(np.eye(2)), constant_field(2 * np.eye(2)), [0.0, 0.0], 1.0,
                           n_steps=32, n_paths=1000, seed=6)
    assert np.array_equal(ey.terminal_states, 2.0 * ex.terminal_states)


def test_coupling_reduces_variance():
    fx = trig_perturbed_field(0.1)
    fy = fx.plus_outer([0.5, 0.5])
    pay = ConvexPayoff(np.abs, [1.0, 1.0])
    coupled, indep = [], []
    for r in range(20):
        ex, ey = coupled_paths(fx, fy, [0.0, 0.0], 1.0, n_steps=16, n_paths=2000, seed=100 + r)
        ey2 = simulate_paths(fy, [0.0, 0.0], 1.0, n_steps=16, n_paths=2000, seed=900 + r)
        coupled.append(np.var(payoff_samples(ey, pay) - payoff_samples(ex, pay)))
        indep.append(np.var(payoff_samples(ey2, pay) - payoff_samples(ex, pay)))
    assert np.mean(coupled) < np.mean(indep)


def test_reproducible_across_threads():
    f = trig_perturbed_field(0.1)
    a = simulate_paths(f, [0.0, 0.0], 1.0, n_steps=16, n_paths=30_000, seed=7, threads=1)
    b = simulate_paths(f, [0.0, 0.0], 1.0, n_steps=16, n_paths=30_000, seed=7, threads=4)
    assert np.array_equal(a.terminal_states, b.terminal_states)
    c = simulate_paths(f, [0.0, 0.0], 1.0, n_steps=16, n_paths=30_000, seed=8, threads=4)
    assert not np.array_equal(a.terminal_states, c.terminal_states)


def test_constant_field_step_independence():
    f = constant_field(np.eye(1))
    p = square([1.0])
    m1 = mc_mean(simulate_paths(f, [0.0], 1.0, n_steps=8, n_paths=N, seed=9), p)
    m2 = mc_mean(simulate_paths(f, [0.0], 1.0, n_steps=16, n_paths=N, seed=9), p)
    assert abs(m1.mean - 1.0) < 3 * m1.std_error
    assert abs(m2.mean - 1.0) < 3 * m2.std_error


def test_milstein_diagonal():
    f = diagonal_trig_field(2, amp=0.2)
    ens = simulate_paths(f, [0.0, 0.0], 1.0, n_steps=32, n_paths=N, seed=10, scheme="Milstein")
    m = mc_mean(ens, ConvexPayoff(lambda z: z, [1.0, 0.0]))
    assert abs(m.mean) < 3 * m.std_error


def test_snapshots_and_errors():
    f = constant_field(np.eye(1))
    ens = simulate_paths(f, [0.0], 1.0, n_steps=16, n_paths=1000, seed=11, record_times=[0.5])
    assert ens.states_at(0.5).shape == (1000, 1)
    assert np.array_equal(ens.states_at(), ens.terminal_states)
    with pytest.raises(KeyError):
        ens.states_at(0.25)
    with pytest.raises(ValueError):
        payoff_samples(ens, square([1.0, 1.0]))


def test_non_finite_payoff_raises():
    f = constant_field(10.0 * np.eye(1))
    ens = simulate_paths(f, [0.0], 1.0, n_steps=4, n_paths=2000, seed=12)
    blow = ConvexPayoff(lambda z: np.exp(z ** 4), [1.0])
    with pytest.raises(MeanExistenceError):
        mc_mean(ens, blow)


def test_std_error_scaling(rng):
    s = rng.normal(size=40_000)
    big, small = estimate(s), estimate(s[:10_000])
    assert big.std_error >= 0
    assert small.std_error / big.std_error == pytest.approx(2.0, rel=0.05)


def test_csv_export(tmp_path):
    ens = simulate_paths(constant_field(np.eye(2)), [0.0, 0.0], 1.0, n_steps=4, n_paths=10, seed=13)
    meta = ens.to_csv(tmp_path / "paths.csv")
    lines = (tmp_path / "paths.csv").read_text().splitlines()
    assert lines[0] == "x1,x2" and len(lines) == 11
    back = np.loadtxt(tmp_path / "paths.csv", delimiter=",", skiprows=1)
    assert np.array_equal(back, ens.terminal_states)
    info = json.loads(open(meta).read())
    assert info["seed"] == 13 and info["scheme"] == "EulerMaruyama"


def test_lipschitz_step_refinement_drift_shrinks():
    f = VolatilityField(1, sigma=lambda x: (1.0 + 0.5 * np.sin(3 * x[..., :1]))[..., None])
    p = ConvexPayoff(lambda z: z ** 4, [1.0])
    means = [mc_mean(simulate_paths(f, [0.0], 1.0, n_steps=n, n_paths=N, seed=14), p).mean for n in (4, 8, 16)]
    assert abs(means[2] - means[1]) < abs(means[1] - means[0])
