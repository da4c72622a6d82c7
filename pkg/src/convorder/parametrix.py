"""Levy parametrix for ``u_t = sum_ij a_ij(x_2) u_{x_i x_j}`` in two space dimensions.

Coefficients depend on the second coordinate only, so every quantity below is
evaluated in relative form ``(tau, d1, x2, y2)`` with ``tau = t - s`` and
``d1 = x1 - y1``; absolute first coordinates are never read. The expansion is

    p = G + sum_{m=1}^{M} G (*) L_m,   L_1 = (a(x2) - a(y2)) : Hess_x G,
    L_{m+1} = L_m (*) L_1,

where ``(*)`` is the space-time convolution
``(F (*) H)(t, x; s, y) = int_s^t int F(t - sig, x; z) H(sig - s, z; y) dz dsig``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

MODES = ("normalized", "paper-literal")


class TruncationError(RuntimeError):
    pass


@dataclass(frozen=True)
class QuadSpec:
    """Tensor Gauss-Legendre rules.

    ``n_space``/``n_time`` are used for the first correction ``G (*) L_1``;
    deeper series terms (``m >= 2``), which are one order smaller each, use the
    cheaper ``n_space_deep``/``n_time_deep`` rule at every nesting level.
    """

    n_space: int = 64
    n_time: int = 32
    radius: float = 8.0
    n_space_deep: int = 12
    n_time_deep: int = 8
    chunk: int = 2_000_000

    def level(self, deep: bool):
        if deep:
            return self.n_space_deep, self.n_time_deep
        return self.n_space, self.n_time


class Coefficients:
    """``y2 -> (a11, a12, a22)`` (matrix entries) with a cached spread bound."""

    def __init__(self, fn: Callable, constant: bool = False, probe=(-20.0, 20.0)):
        self.fn = fn
        self.constant = bool(constant)
        y = np.linspace(probe[0], probe[1], 4001)
        a11, a12, a22 = (np.broadcast_to(np.asarray(v, dtype=float), y.shape) for v in fn(y))
        det = a11 * a22 - a12 * a12
        if np.any(a11 <= 0) or np.any(det <= 0):
            raise ValueError("coefficient matrix must be positive definite")
        tr = a11 + a22
        disc = np.sqrt(np.maximum(0.25 * tr * tr - det, 0.0))
        self.lam_min = float(np.min(0.5 * tr - disc))
        self.lam_max = float(np.max(0.5 * tr + disc))
        if not self.constant:
            self.constant = bool(
                np.ptp(a11) == 0.0 and np.ptp(a12) == 0.0 and np.ptp(a22) == 0.0
            )

    def __call__(self, y2):
        y2 = np.asarray(y2, dtype=float)
        return tuple(np.broadcast_to(np.asarray(v, dtype=float), y2.shape) for v in self.fn(y2))

    @classmethod
    def constant_matrix(cls, a):
        a = np.asarray(a, dtype=float)
        return cls(lambda y2: (a[0, 0], a[0, 1], a[1, 1]), constant=True)

    @classmethod
    def from_field(cls, a_of_x: Callable, box=((-5.0, 5.0), (-5.0, 5.0)), n_probe=257, seed=0):
        """Wrap ``a(x) -> (..., 2, 2)``; reject fields that read the first coordinate."""
        rng = np.random.default_rng(seed)
        x2 = rng.uniform(box[1][0], box[1][1], n_probe)
        xa = np.stack([rng.uniform(box[0][0], box[0][1], n_probe), x2], -1)
        xb = np.stack([rng.uniform(box[0][0], box[0][1], n_probe), x2], -1)
        A, B = np.asarray(a_of_x(xa)), np.asarray(a_of_x(xb))
        if np.max(np.abs(A - B)) > 1e-13 * max(1.0, float(np.max(np.abs(A)))):
            raise ValueError(
                "coefficients depend on the first coordinate; the partial-convolution "
                "structure requires a = a(x2)"
            )

        def fn(y2):
            y2 = np.asarray(y2, dtype=float)
            pts = np.stack([np.zeros_like(y2), y2], -1)
            a = np.asarray(a_of_x(pts))
            a = np.broadcast_to(a, y2.shape + (2, 2))
            return a[..., 0, 0], a[..., 0, 1], a[..., 1, 1]

        return cls(fn)


def _form(coeffs: Coefficients, y2, mode):
    """Exponent matrix ``B`` and prefactor so that ``G = pref / tau * exp(-d^T B d / tau)``."""
    a11, a12, a22 = coeffs(y2)
    if mode == "normalized":
        det = a11 * a22 - a12 * a12
        b11, b12, b22 = a22 / (4.0 * det), -a12 / (4.0 * det), a11 / (4.0 * det)
        pref = 1.0 / (4.0 * math.pi * np.sqrt(det))
    elif mode == "paper-literal":
        b11, b12, b22 = a11, 0.5 * a12, a22
        pref = np.full_like(a11, 1.0 / (4.0 * math.pi))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return (a11, a12, a22), (b11, b12, b22), pref


def quadratic_form_N(coeffs: Coefficients, x, y, mode: str = "paper-literal"):
    """Exponent quadratic form at the frozen point ``y``.

    ``paper-literal``: ``a11 d1^2 + a12 d1 d2 + a22 d2^2``;
    ``normalized``: ``<a^{-1} d, d> / 4``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d1, d2 = x[..., 0] - y[..., 0], x[..., 1] - y[..., 1]
    _, (b11, b12, b22), _ = _form(coeffs, y[..., 1], mode)
    return b11 * d1 * d1 + 2.0 * b12 * d1 * d2 + b22 * d2 * d2


def _gauss_parts(coeffs, tau, d1, x2, y2, mode):
    (a11, a12, a22), (b11, b12, b22), pref = _form(coeffs, y2, mode)
    d2 = x2 - y2
    q = b11 * d1 * d1 + 2.0 * b12 * d1 * d2 + b22 * d2 * d2
    g = pref / tau * np.exp(-q / tau)
    bd1 = b11 * d1 + b12 * d2
    bd2 = b12 * d1 + b22 * d2
    return g, (b11, b12, b22), (bd1, bd2), (a11, a12, a22)


def gauss_rel(coeffs, tau, d1, x2, y2, mode="normalized"):
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise ValueError("t - s must be positive")
    return _gauss_parts(coeffs, tau, d1, x2, y2, mode)[0]


def gauss_hessian_rel(coeffs, tau, d1, x2, y2, mode="normalized"):
    """``(G_11, G_12, G_22)``: analytic second derivatives in the forward variable."""
    g, (b11, b12, b22), (bd1, bd2), _ = _gauss_parts(coeffs, tau, d1, x2, y2, mode)
    h11 = g * (4.0 * bd1 * bd1 / tau**2 - 2.0 * b11 / tau)
    h12 = g * (4.0 * bd1 * bd2 / tau**2 - 2.0 * b12 / tau)
    h22 = g * (4.0 * bd2 * bd2 / tau**2 - 2.0 * b22 / tau)
    return h11, h12, h22


def levy_L1_rel(coeffs, tau, d1, x2, y2, mode="normalized"):
    if coeffs.constant:
        return np.zeros(np.broadcast(tau, d1, x2, y2).shape)
    # sum (a_ij(x2) - a_ij(y2)) G_ij as quadratics in d1 with coefficients free of d1,
    # so that only a few operations run at the full broadcast size
    (y11, y12, y22), (b11, b12, b22), pref = _form(coeffs, y2, mode)
    x11, x12, x22 = coeffs(x2)
    e11, e12, e22 = x11 - y11, x12 - y12, x22 - y22
    tau = np.asarray(tau, dtype=float)
    d2 = np.asarray(x2, dtype=float) - y2
    it = 1.0 / tau
    # exponent -(b11 d1^2 + 2 b12 d2 d1 + b22 d2^2) / tau
    p2, p1, p0 = -b11 * it, -2.0 * b12 * d2 * it, -b22 * d2 * d2 * it
    # 4/tau^2 (e11 u1^2 + 2 e12 u1 u2 + e22 u2^2) - 2/tau tr(e b), u = b (d1, d2)
    s = 4.0 * it * it
    q2 = s * (e11 * b11 * b11 + 2.0 * e12 * b11 * b12 + e22 * b12 * b12)
    q1 = s * 2.0 * d2 * (e11 * b11 * b12 + e12 * (b11 * b22 + b12 * b12) + e22 * b12 * b22)
    q0 = s * d2 * d2 * (e11 * b12 * b12 + 2.0 * e12 * b12 * b22 + e22 * b22 * b22) \
        - 2.0 * it * (e11 * b11 + 2.0 * e12 * b12 + e22 * b22)
    c = pref * it
    q2, q1, q0 = c * q2, c * q1, c * q0
    d1 = np.asarray(d1, dtype=float)
    ex = np.asarray(p2 * d1 + p1)
    ex *= d1
    ex += p0
    np.exp(ex, out=ex)
    out = np.asarray(q2 * d1 + q1)
    out *= d1
    out += q0
    out *= ex
    return out


def _rules(n):
    u, w = np.polynomial.legendre.leggauss(n)
    return u, w


def _time_nodes(tau, n_time):
    """Nodes and weights on ``(0, tau)`` for ``sig - s``.

    The interval is split at its midpoint and each half uses ``sig = end +- h u^2``
    so that integrable singularities at both ends are smoothed out.
    """
    half = max(1, n_time // 2)
    u, w = _rules(half)
    u = 0.5 * (u + 1.0)
    w = 0.5 * w
    h = 0.5 * tau[..., None]
    lo = h * u * u
    wlo = h * 2.0 * u * w
    hi = tau[..., None] - h * u * u
    return np.concatenate([lo, hi], -1), np.concatenate([wlo, wlo], -1)


def space_time_convolve(left, right, coeffs, tau, d1, x2, y2, n_space, n_time, radius, spread, chunk):
    """``(left (*) right)`` at relative arguments, vectorised over the leading axis.

    ``left(tau, d1, x2, z2)`` and ``right(tau, d1, z2, y2)`` are relative-form
    callables. The spatial window at intermediate time ``sig`` is centred at the
    Brownian-bridge point between source and target with radius
    ``radius * sqrt(spread * v)``, ``v = sig (tau - sig) / tau``.
    """
    tau, d1, x2, y2 = np.broadcast_arrays(*(np.atleast_1d(np.asarray(v, dtype=float)) for v in (tau, d1, x2, y2)))
    shape = tau.shape
    tau, d1, x2, y2 = (v.ravel() for v in (tau, d1, x2, y2))
    us, ws = _rules(n_space)
    per_point = n_time * n_space * n_space
    step = max(1, chunk // per_point)
    out = np.empty(tau.size)
    for start in range(0, tau.size, step):
        sl = slice(start, start + step)
        T, D1, X2, Y2 = tau[sl], d1[sl], x2[sl], y2[sl]
        sig, wsig = _time_nodes(T, n_time)                       # (P, nt)
        frac = sig / T[:, None]
        r = radius * np.sqrt(spread * sig * (T[:, None] - sig) / T[:, None])
        c1 = frac * D1[:, None]                                  # window centre for z1 - y1
        c2 = Y2[:, None] + frac * (X2 - Y2)[:, None]
        W = c1[..., None, None] + r[..., None, None] * us[:, None]        # (P, nt, ns, 1)
        Z2 = c2[..., None, None] + r[..., None, None] * us[None, :]      # (P, nt, 1, ns)
        S = sig[..., None, None]
        T4 = T[:, None, None, None]
        lv = left(T4 - S, D1[:, None, None, None] - W, X2[:, None, None, None], Z2)
        rv = right(S, W, Z2, Y2[:, None, None, None])
        wt = (wsig * r * r)[..., None, None] * ws[:, None] * ws[None, :]
        out[sl] = np.sum(lv * rv * wt, axis=(1, 2, 3))
    return out.reshape(shape)


@dataclass
class ParametrixKernel:
    """Truncated Levy expansion of the fundamental solution."""

    coeffs: Coefficients
    truncation_M: int = 2
    quad: QuadSpec = field(default_factory=QuadSpec)
    mode: str = "normalized"
    term_ratios: tuple = ()
    tail_estimate: float = 0.0

    def __post_init__(self):
        if self.truncation_M < 0:
            raise ValueError("M must be >= 0")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        a_spread = 4.0 * self.coeffs.lam_max if self.mode == "normalized" else 1.0 / self.coeffs.lam_min
        # window radius uses spread * v where the Gaussian's largest variance is 2 * lam_max * v
        self.spread = a_spread / 4.0

    # -- building blocks in relative form -------------------------------------
    def G(self, tau, d1, x2, y2):
        return gauss_rel(self.coeffs, tau, d1, x2, y2, self.mode)

    def L1(self, tau, d1, x2, y2):
        return levy_L1_rel(self.coeffs, tau, d1, x2, y2, self.mode)

    def _conv(self, left, right, tau, d1, x2, y2, deep):
        ns, nt = self.quad.level(deep)
        return space_time_convolve(
            left, right, self.coeffs, tau, d1, x2, y2, ns, nt,
            self.quad.radius, self.spread, self.quad.chunk,
        )

    def Lm(self, m, tau, d1, x2, y2):
        """``L_m`` by the recursion ``L_{m+1} = L_m (*) L_1`` (``L_0 := G``)."""
        if m < 0:
            raise ValueError("m must be >= 0")
        if m == 0:
            return self.G(tau, d1, x2, y2)
        if m == 1:
            return self.L1(tau, d1, x2, y2)
        if self.coeffs.constant:
            return np.zeros(np.broadcast(tau, d1, x2, y2).shape)
        prev = lambda T, D, X, Y: self.Lm(m - 1, T, D, X, Y)
        return self._conv(prev, self.L1, tau, d1, x2, y2, deep=True)

    def correction(self, m, tau, d1, x2, y2):
        """Series term ``G (*) L_m``."""
        if self.coeffs.constant:
            return np.zeros(np.broadcast(tau, d1, x2, y2).shape)
        right = self.L1 if m == 1 else (lambda T, D, X, Y: self.Lm(m, T, D, X, Y))
        return self._conv(self.G, right, tau, d1, x2, y2, deep=(m >= 2))

    def terms(self, tau, d1, x2, y2, M: Optional[int] = None):
        M = self.truncation_M if M is None else M
        out = [self.G(tau, d1, x2, y2)]
        for m in range(1, M + 1):
            out.append(self.correction(m, tau, d1, x2, y2))
        return out

    def p_rel(self, tau, d1, x2, y2, M: Optional[int] = None):
        return sum(self.terms(tau, d1, x2, y2, M))

    # -- absolute-coordinate front ends ----------------------------------------
    def __call__(self, t, x, s, y, M: Optional[int] = None):
        """``p(t, x; s, y)`` with ``x = (x1, x2)``, ``y = (y1, y2)`` arrays of shape (..., 2)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        tau = np.asarray(t, dtype=float) - np.asarray(s, dtype=float)
        if np.any(tau <= 0):
            raise ValueError("t - s must be positive")
        return self.p_rel(tau, x[..., 0] - y[..., 0], x[..., 1], y[..., 1], M)

    def density(self, t, y1, y2, s, z2, z1=0.0, M: Optional[int] = None):
        """``p(t, y1 - z1, y2; s, z2)`` in the partial-convolution parametrisation."""
        tau = np.asarray(t, dtype=float) - np.asarray(s, dtype=float)
        return self.p_rel(tau, np.asarray(y1) - np.asarray(z1), y2, z2, M)


def gaussian_G(coeffs: Coefficients, tau, x, y, mode="normalized"):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return gauss_rel(coeffs, tau, x[..., 0] - y[..., 0], x[..., 1], y[..., 1], mode)


def levy_term_L1(kernel: ParametrixKernel, tau, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return kernel.L1(np.asarray(tau, dtype=float), x[..., 0] - y[..., 0], x[..., 1], y[..., 1])


def levy_recursion(kernel: ParametrixKernel, m: int, tau, x, y):
    """``L_{m+1} = int int L_m(t - sig, x; z) L_1(sig - s, z; y) dz dsig``.

    ``m = 0`` uses ``L_0 := G`` and returns the first series correction ``G (*) L_1``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    tau = np.asarray(tau, dtype=float)
    d1, x2, y2 = x[..., 0] - y[..., 0], x[..., 1], y[..., 1]
    if m == 0:
        return kernel.correction(1, tau, d1, x2, y2)
    return kernel.Lm(m + 1, tau, d1, x2, y2)


def build_kernel(coeffs, M: int = 2, quad: Optional[QuadSpec] = None, mode: str = "normalized",
                 probe_tau: float = 0.1) -> ParametrixKernel:
    """Assemble the truncated expansion and check that the series contracts.

    Term magnitudes ``max |G (*) L_m|`` are probed on a small lattice at
    ``t - s = probe_tau``; growth with ``m`` raises :class:`TruncationError`.
    The ratio of the last two terms estimates the omitted tail.
    """
    if not isinstance(coeffs, Coefficients):
        coeffs = Coefficients(coeffs)
    if M < 0:
        raise ValueError("M must be >= 0")
    kern = ParametrixKernel(coeffs, M, quad or QuadSpec(), mode)
    if coeffs.constant or M == 0:
        return kern
    s = math.sqrt(2.0 * coeffs.lam_max * probe_tau)
    g = np.array([-1.0, 0.0, 1.0]) * s
    d1, x2 = np.meshgrid(g, g, indexing="ij")
    d1, x2 = d1.ravel(), x2.ravel()
    y2 = np.zeros_like(d1)
    tau = np.full_like(d1, probe_tau)
    mags = [float(np.max(np.abs(kern.G(tau, d1, x2 + 0.5, y2 + 0.5))))]
    for m in range(1, M + 1):
        mags.append(float(np.max(np.abs(kern.correction(m, tau, d1, x2 + 0.5, y2 + 0.5)))))
    ratios = tuple(mags[k + 1] / mags[k] for k in range(1, len(mags) - 1)) if M >= 2 else ()
    if any(r >= 1.0 for r in ratios):
        raise TruncationError(f"Levy series does not contract: term magnitudes {mags}")
    kern.term_ratios = ratios
    if ratios:
        q = ratios[-1]
        kern.tail_estimate = mags[-1] * q / (1.0 - q)
    return kern


# -- diagnostics ----------------------------------------------------------------

def _source_window(kernel: ParametrixKernel, tau, n):
    u, w = _rules(n)
    r = kernel.quad.radius * math.sqrt(kernel.spread * tau)
    return r * u, r * w


def kernel_apply(kernel: ParametrixKernel, g, t: float, y, n: int = 64, M: Optional[int] = None):
    """``u(t, y) = int g(z) p(t, y1 - z1, y2; 0, z2) dz`` on a Gauss-Legendre window around ``y``."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    off, w = _source_window(kernel, t, n)
    out = np.empty(len(y))
    for k, (y1, y2) in enumerate(y):
        z1 = y1 + off[:, None] + 0.0 * off[None, :]
        z2 = y2 + off[None, :] + 0.0 * off[:, None]
        p = kernel.p_rel(np.full(z1.shape, float(t)), y1 - z1, np.full(z1.shape, y2), z2, M)
        out[k] = np.sum(np.asarray(g(z1, z2)) * p * w[:, None] * w[None, :])
    return out


def kernel_apply_d11(kernel: ParametrixKernel, g11, t: float, y, n: int = 64, M: Optional[int] = None):
    """``u_{y1 y1}`` by moving the derivative onto the data: ``int g11(y1 - z1, z2) p(t, z1, y2; 0, z2) dz``."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    off, w = _source_window(kernel, t, n)
    out = np.empty(len(y))
    for k, (y1, y2) in enumerate(y):
        d1 = off[:, None] + 0.0 * off[None, :]
        z2 = y2 + off[None, :] + 0.0 * off[:, None]
        p = kernel.p_rel(np.full(d1.shape, float(t)), d1, np.full(d1.shape, y2), z2, M)
        out[k] = np.sum(np.asarray(g11(y1 - d1, z2)) * p * w[:, None] * w[None, :])
    return out


def kernel_normalization(kernel: ParametrixKernel, tau: float, x, n: int = 24, M: Optional[int] = None):
    """``int p(t, x; s, y) dy`` over the source variable; equals 1 for the exact kernel."""
    return kernel_apply(kernel, lambda z1, z2: np.ones_like(z1), tau, x, n, M)


_FD1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_FD2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0


def kernel_pde_residual(kernel: ParametrixKernel, tau, d1, x2, y2, h: float = 2e-3,
                        ht: Optional[float] = None, M: Optional[int] = None):
    """``p_t - sum a_ij(x2) p_{x_i x_j}`` by fourth-order central differences.

    The exact truncated expansion satisfies ``L p_M = -L_{M+1}``, so the residual
    shrinks with ``M`` when the series contracts.
    """
    tau, d1, x2, y2 = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (tau, d1, x2, y2))
    tau, d1, x2, y2 = np.broadcast_arrays(tau, d1, x2, y2)
    ht = 0.02 * float(np.min(tau)) if ht is None else ht
    k = np.arange(-2, 3)
    # one batched call: time, x1, x2 stencils and the 4x4 cross stencil
    cols = []
    for j in k:
        cols.append((tau + j * ht, d1, x2))
    for j in k:
        cols.append((tau, d1 + j * h, x2))
    for j in k:
        cols.append((tau, d1, x2 + j * h))
    cross = [(i, j) for i in (-2, -1, 1, 2) for j in (-2, -1, 1, 2)]
    for i, j in cross:
        cols.append((tau, d1 + i * h, x2 + j * h))
    T = np.stack([c[0] for c in cols])
    D = np.stack([c[1] for c in cols])
    X = np.stack([c[2] for c in cols])
    Y = np.broadcast_to(y2, T.shape)
    P = kernel.p_rel(T, D, X, Y, M)
    pt = np.tensordot(_FD1, P[0:5], 1) / ht
    p11 = np.tensordot(_FD2, P[5:10], 1) / h**2
    p22 = np.tensordot(_FD2, P[10:15], 1) / h**2
    w1 = {-2: 1.0 / 12, -1: -8.0 / 12, 1: 8.0 / 12, 2: -1.0 / 12}
    p12 = sum(w1[i] * w1[j] * P[15 + n] for n, (i, j) in enumerate(cross)) / h**2
    a11, a12, a22 = kernel.coeffs(x2)
    return pt - (a11 * p11 + 2.0 * a12 * p12 + a22 * p22)


def convolution_structure_probe(kernel: ParametrixKernel, shifts, n_probes: int = 1000, seed: int = 0,
                                tau_range=(0.05, 1.0), M: Optional[int] = None, bits: int = 20):
    """Compare ``p(t, y1 + h, y2; s, z1 + h, z2)`` with the unshifted value on ``n_probes`` pairs.

    Probe points and shifts lie on the lattice ``2^-bits Z`` so that ``(y1 + h) - (z1 + h)``
    equals ``y1 - z1`` in floating point; shift invariance then means bitwise equality.
    Pair ``k`` uses ``shifts[k % len(shifts)]``.
    """
    shifts = np.asarray(shifts, dtype=float)
    q = 2.0 ** bits
    if np.any(np.round(shifts * q) != shifts * q):
        raise ValueError(f"shifts must be multiples of 2^-{bits}")
    rng = np.random.default_rng(seed)
    tau = rng.uniform(*tau_range, n_probes)
    y1, z1, y2, z2 = (np.round(rng.uniform(-2, 2, n_probes) * q) / q for _ in range(4))
    h = shifts[np.arange(n_probes) % shifts.size]
    base = kernel(tau, np.stack([y1, y2], -1), 0.0, np.stack([z1, z2], -1), M)
    moved = kernel(tau, np.stack([y1 + h, y2], -1), 0.0, np.stack([z1 + h, z2], -1), M)
    diff = np.abs(moved - base)
    return {
        "n_probes": int(n_probes),
        "max_abs_diff": {float(v): float(np.max(diff[h == v])) for v in shifts},
        "exact": bool(np.all(moved == base)),
    }


def density_grid(kernel: ParametrixKernel, tau: float, y1_axis, y2_axis, z2: float, z1: float = 0.0,
                 coarse: int = 11, M: Optional[int] = None, over: str = "target"):
    """Kernel values on a tensor lattice ``(y1, y2)``.

    ``over="target"`` gives ``p(tau, y; 0, z)`` as a function of the evaluation
    point; ``over="source"`` gives ``p(tau, z; 0, y)`` as a function of the
    source point, which is the transition density of the diffusion started at
    ``z``. ``G`` and the first correction are evaluated at every node;
    corrections of order ``m >= 2`` (one order smaller each) are evaluated on a
    ``coarse`` lattice and interpolated by bicubic splines. Returns
    ``(values, interp_bound)`` where the bound compares the spline against
    direct evaluation at the coarse-cell midpoints.
    """
    from scipy.interpolate import RectBivariateSpline

    if over not in ("target", "source"):
        raise ValueError(f"unknown lattice variable {over!r}")
    M = kernel.truncation_M if M is None else M
    y1_axis = np.asarray(y1_axis, dtype=float)
    y2_axis = np.asarray(y2_axis, dtype=float)

    def args(Y1, Y2):
        T = np.full(Y1.shape, float(tau))
        Z2 = np.full(Y1.shape, float(z2))
        if over == "target":
            return T, Y1 - z1, Y2, Z2
        return T, z1 - Y1, Z2, Y2

    Y1, Y2 = np.meshgrid(y1_axis, y2_axis, indexing="ij")
    vals = kernel.G(*args(Y1, Y2))
    if M >= 1:
        vals = vals + kernel.correction(1, *args(Y1, Y2))
    bound = 0.0
    if M >= 2 and not kernel.coeffs.constant:
        c1 = np.linspace(y1_axis[0], y1_axis[-1], coarse)
        c2 = np.linspace(y2_axis[0], y2_axis[-1], coarse)
        C1, C2 = np.meshgrid(c1, c2, indexing="ij")
        m1 = 0.5 * (c1[1:] + c1[:-1])
        m2 = 0.5 * (c2[1:] + c2[:-1])
        Mi1, Mi2 = np.meshgrid(m1[::3], m2[::3], indexing="ij")
        for m in range(2, M + 1):
            spl = RectBivariateSpline(c1, c2, kernel.correction(m, *args(C1, C2)), kx=3, ky=3)
            vals = vals + spl.ev(Y1, Y2)
            direct = kernel.correction(m, *args(Mi1, Mi2))
            bound += float(np.max(np.abs(spl.ev(Mi1, Mi2) - direct)))
    return vals, bound


def mc_density_check(kernel: ParametrixKernel, tau: float, z, n_paths: int = 100_000, n_grid: int = 41,
                     half_width: float = 3.5, bandwidth: Optional[float] = None, n_steps: int = 256,
                     seed: int = 0, threads: Optional[int] = None, M: Optional[int] = None):
    """Sup distance between a Gaussian KDE of simulated endpoints and the kernel.

    Paths start at ``z`` and follow ``dX = sqrt(2 a(X2)) dW`` so that their
    generator is ``sum a_ij d_ij``; the kernel is evaluated in its source
    variable on an ``n_grid``-square lattice centred at ``z``. The KDE is
    bandwidth defaults to Silverman's rule; its smoothing bias is of order
    ``h^2 |Hess p| / 2``, far below the density peak at the default sizes.
    """
    from .model import VolatilityField, psd_sqrt
    from .sde import simulate_paths

    z = np.asarray(z, dtype=float)
    coeffs = kernel.coeffs

    def a_field(x):
        a11, a12, a22 = coeffs(np.asarray(x, dtype=float)[..., 1])
        return 2.0 * np.stack([np.stack([a11, a12], -1), np.stack([a12, a22], -1)], -2)

    fld = VolatilityField(2, sigma=lambda x: psd_sqrt(a_field(x)), a=a_field, name="kernel-diffusion")
    ens = simulate_paths(fld, z, tau, n_steps, n_paths, seed, threads=threads)
    pts = ens.terminal_states
    h = bandwidth or 1.06 * float(np.sqrt(2.0 * coeffs.lam_max * tau)) * n_paths ** (-1.0 / 6.0)
    ax1 = z[0] + np.linspace(-half_width, half_width, n_grid)
    ax2 = z[1] + np.linspace(-half_width, half_width, n_grid)

    def gauss(ax, col):
        u = (ax[:, None] - col[None, :]) / h
        return np.exp(-0.5 * u * u) / (h * math.sqrt(2.0 * math.pi))

    kde = gauss(ax1, pts[:, 0]) @ gauss(ax2, pts[:, 1]).T / n_paths
    vals, bound = density_grid(kernel, tau, ax1, ax2, z[1], z[0], M=M, over="source")
    return {
        "sup_distance": float(np.max(np.abs(kde - vals))),
        "bandwidth": h,
        "interp_bound": bound,
        "peak": float(np.max(vals)),
        "n_paths": int(n_paths),
        "n_grid": int(n_grid),
        "kde": kde,
        "kernel": vals,
    }
