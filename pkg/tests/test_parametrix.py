import math

import numpy as np
import pytest

from convorder.parametrix import (
    Coefficients,
    QuadSpec,
    build_kernel,
    convolution_structure_probe,
    gauss_hessian_rel,
    gauss_rel,
    gaussian_G,
    kernel_apply,
    kernel_apply_d11,
    kernel_normalization,
    kernel_pde_residual,
    levy_recursion,
    levy_term_L1,
    quadratic_form_N,
)
from convorder.scenarios import perturbation

SMALL = QuadSpec(n_space=24, n_time=12)
A_CONST = np.array([[1.0, 0.3], [0.3, 0.8]])


def a11_only(y2):
    return 1.0 + 0.1 * np.sin(y2), 0.0, 1.0


def test_quadratic_form_examples():
    eye = Coefficients.constant_matrix(np.eye(2))
    assert quadratic_form_N(eye, [0.4, -0.3], [0.4, -0.3]) == 0.0
    assert quadratic_form_N(eye, [1.0, 0.0], [0.0, 0.0]) == pytest.approx(1.0)
    d = Coefficients.constant_matrix(np.diag([2.0, 3.0]))
    assert quadratic_form_N(d, [1.0, 1.0], [0.0, 0.0]) == pytest.approx(5.0)
    assert quadratic_form_N(eye, [2.0, 0.0], [0.0, 0.0], mode="normalized") == pytest.approx(1.0)


def test_gaussian_peak():
    eye = Coefficients.constant_matrix(np.eye(2))
    assert gaussian_G(eye, 1.0, [0.0, 0.0], [0.0, 0.0]) == pytest.approx(1.0 / (4 * math.pi), rel=1e-14)
    with pytest.raises(ValueError):
        gauss_rel(eye, 0.0, 0.0, 0.0, 0.0)


def test_gaussian_integrates_to_one():
    c = Coefficients.constant_matrix(A_CONST)
    x = np.linspace(-8, 8, 801)
    D1, D2 = np.meshgrid(x, x, indexing="ij")
    g = gauss_rel(c, 0.5, D1, D2, 0.0)
    assert np.sum(g) * (x[1] - x[0]) ** 2 == pytest.approx(1.0, abs=1e-10)


def fd4(f, h):
    w = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
    return sum(wk * f(k * h) for wk, k in zip(w, range(-2, 3))) / h


def test_gaussian_solves_pde_normalized():
    c = Coefficients.constant_matrix(A_CONST)
    tau, d1, d2 = 0.3, 0.2, -0.35
    G = lambda t, u, v: gauss_rel(c, t, u, v, 0.0)
    h = 1e-3
    gt = fd4(lambda e: G(tau + e, d1, d2), h)
    g11, g12, g22 = gauss_hessian_rel(c, tau, d1, d2, 0.0)
    # analytic Hessian checked against nested differences
    assert g11 == pytest.approx(fd4(lambda e: fd4(lambda f: G(tau, d1 + e + f, d2), h), h), abs=1e-7)
    assert g12 == pytest.approx(fd4(lambda e: fd4(lambda f: G(tau, d1 + e, d2 + f), h), h), abs=1e-7)
    res = gt - (A_CONST[0, 0] * g11 + 2 * A_CONST[0, 1] * g12 + A_CONST[1, 1] * g22)
    assert abs(res) < 1e-8


def test_gaussian_literal_mode_residual_is_finite():
    c = Coefficients.constant_matrix(A_CONST)
    g11, g12, g22 = gauss_hessian_rel(c, 0.3, 0.2, -0.35, 0.0, mode="paper-literal")
    gt = fd4(lambda e: gauss_rel(c, 0.3 + e, 0.2, -0.35, 0.0, mode="paper-literal"), 1e-3)
    assert np.isfinite(gt - (g11 + g12 + g22))


def test_L1_vanishes():
    const = build_kernel(Coefficients.constant_matrix(A_CONST), M=2)
    assert levy_term_L1(const, 0.5, [0.3, 1.0], [0.0, -1.0]) == 0.0
    pert = build_kernel(Coefficients(a11_only), M=0)
    assert levy_term_L1(pert, 0.5, [0.3, 0.7], [0.0, 0.7]) == 0.0


def test_L1_symbolic_oracle():
    kern = build_kernel(Coefficients(a11_only), M=0)
    tau, d1, x2, y2 = 0.4, 0.3, math.pi / 2, 0.0
    # frozen a(y2) = I: G = exp(-(d1^2 + d2^2) / (4 tau)) / (4 pi tau), G_11 = G (d1^2 / (4 tau^2) - 1 / (2 tau))
    d2 = x2 - y2
    G = math.exp(-(d1 * d1 + d2 * d2) / (4 * tau)) / (4 * math.pi * tau)
    g11 = G * (d1 * d1 / (4 * tau * tau) - 1.0 / (2 * tau))
    val = levy_term_L1(kern, tau, [d1, x2], [0.0, y2])
    assert val == pytest.approx(0.1 * g11, abs=1e-10)


def test_constant_coefficients_collapse():
    c = Coefficients.constant_matrix(A_CONST)
    kern = build_kernel(c, M=3)
    rng = np.random.default_rng(0)
    tau = rng.uniform(0.05, 1.0, 50)
    d1, x2, y2 = (rng.uniform(-2, 2, 50) for _ in range(3))
    assert np.array_equal(kern.p_rel(tau, d1, x2, y2), kern.G(tau, d1, x2, y2))
    for m in range(4):
        assert np.all(levy_recursion(kern, m + 1, tau[:3], np.stack([d1, x2], -1)[:3], np.stack([0 * y2, y2], -1)[:3]) == 0)


def test_residual_decreases_with_M():
    kern = build_kernel(Coefficients.from_field(perturbation(0.1)), M=2)
    assert kern.term_ratios and kern.term_ratios[0] < 1
    d1 = np.array([0.1, -0.2, 0.05])
    x2 = np.array([0.4, 1.0, -0.6])
    y2 = np.array([0.2, 0.8, -0.3])
    res = [np.max(np.abs(kernel_pde_residual(kern, 0.1, d1, x2, y2, M=m))) for m in range(3)]
    assert res[0] > res[1] > res[2]


def test_from_field_rejects_x1_dependence():
    with pytest.raises(ValueError):
        Coefficients.from_field(lambda x: np.eye(2) * (1.5 + np.sin(x[..., 0]))[..., None, None])
    with pytest.raises(ValueError):
        Coefficients(lambda y2: (-1.0, 0.0, 1.0))


def test_structure_probe_exact():
    kern = build_kernel(Coefficients.from_field(perturbation(0.1)), M=1, quad=SMALL)
    rep = convolution_structure_probe(kern, [0.0, 1.75, -3.0], n_probes=60)
    assert rep["exact"]
    assert rep["max_abs_diff"] == {0.0: 0.0, 1.75: 0.0, -3.0: 0.0}
    with pytest.raises(ValueError):
        convolution_structure_probe(kern, [0.1], n_probes=4)


def test_normalization_and_moments():
    eye = build_kernel(Coefficients.constant_matrix(np.eye(2)), M=0)
    # the window of radius 8 sqrt(lambda_max tau) is about 5.7 standard deviations: mass 1 - 3e-8
    assert kernel_normalization(eye, 0.5, [0.2, -0.1], n=64)[0] == pytest.approx(1.0, abs=1e-7)
    y = np.array([[0.3, 0.0], [-1.0, 0.5]])
    u = kernel_apply(eye, lambda z1, z2: z1 * z1, 0.25, y)
    assert np.allclose(u, y[:, 0] ** 2 + 0.5, atol=1e-3)


def test_chapman_kolmogorov_constant():
    c = Coefficients.constant_matrix(A_CONST)
    kern = build_kernel(c, M=0)
    x, y = np.array([0.3, -0.2]), np.array([-0.1, 0.4])
    u, w = np.polynomial.legendre.leggauss(80)
    r = 6.0
    z1, z2 = np.meshgrid(r * u, r * u, indexing="ij")
    W = r * r * np.outer(w, w)
    left = kern.p_rel(0.3, x[0] - z1, x[1], z2)
    right = kern.p_rel(0.2, z1 - y[0], z2, y[1])
    assert np.sum(left * right * W) == pytest.approx(kern.p_rel(0.5, x[0] - y[0], x[1], y[1]), rel=1e-8)


def test_convex_data_gives_convex_first_variable():
    kern = build_kernel(Coefficients.from_field(perturbation(0.1)), M=1, quad=SMALL)
    # g(z) = |z1| smoothed: g11 is a positive Gaussian bump in z1
    g11 = lambda z1, z2: np.exp(-z1 * z1 / 0.2) / math.sqrt(0.2 * math.pi)
    u11 = kernel_apply_d11(kern, g11, 0.25, [[0.0, 0.0], [0.5, 1.0], [-0.7, -0.4]], n=32)
    assert np.all(u11 >= -1e-8)


def test_kernel_errors():
    with pytest.raises(ValueError):
        build_kernel(Coefficients.constant_matrix(np.eye(2)), M=-1)
    with pytest.raises(ValueError):
        build_kernel(Coefficients.constant_matrix(np.eye(2)), mode="other")
    kern = build_kernel(Coefficients.constant_matrix(np.eye(2)), M=0)
    with pytest.raises(ValueError):
        kern(0.5, [0.0, 0.0], 0.5, [0.0, 0.0])
    with pytest.raises(ValueError):
        kern.Lm(-1, 0.5, 0.0, 0.0, 0.0)
