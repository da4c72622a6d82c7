"""Heat-kernel smoothing of payoffs, damping at infinity, strict-convexity certificates."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

from .model import ConvexPayoff

_SQRT_PI = math.sqrt(math.pi)
TAIL_TOL = 1e-12


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class GaussianDamping:
    eps: float

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps_damp must be positive")

    def weights(self, x):
        g = np.exp(-self.eps * x * x)
        return g, -2.0 * self.eps * x * g, (4.0 * self.eps**2 * x * x - 2.0 * self.eps) * g


def _smoothstep(t):
    """Quintic 10t^3 - 15t^4 + 6t^5 with first and second derivatives."""
    t = np.clip(t, 0.0, 1.0)
    s = t**3 * (10.0 + t * (-15.0 + 6.0 * t))
    ds = 30.0 * t**2 * (1.0 - t) ** 2
    d2s = 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t)
    return s, ds, d2s


@dataclass(frozen=True)
class PlateauDamping:
    """C^2 bump equal to 1 on ``[lo, hi]`` and 0 outside ``[lo - margin, hi + margin]``."""

    lo: float
    hi: float
    margin: float

    def __post_init__(self):
        if not self.hi >= self.lo:
            raise ValueError("plateau interval is empty")
        if self.margin <= 0:
            raise ValueError("margin must be positive")

    def weights(self, x):
        x = np.asarray(x, dtype=float)
        b = np.ones_like(x)
        db = np.zeros_like(x)
        d2b = np.zeros_like(x)
        m = self.margin
        right = x > self.hi
        left = x < self.lo
        s, ds, d2s = _smoothstep((x - self.hi) / m)
        b = np.where(right, 1.0 - s, b)
        db = np.where(right, -ds / m, db)
        d2b = np.where(right, -d2s / m**2, d2b)
        s, ds, d2s = _smoothstep((self.lo - x) / m)
        b = np.where(left, 1.0 - s, b)
        db = np.where(left, ds / m, db)
        d2b = np.where(left, -d2s / m**2, d2b)
        return b, db, d2b


class SmoothPayoff:
    """``f`` convolved with the heat kernel ``(4 pi tau)^{-1/2} exp(-u^2 / (4 tau))``.

    Values and the first two derivatives are computed by adaptive quadrature
    with the kernel (or its derivatives) under the integral, on a window wide
    enough that kernel tail times growth bound stays below ``TAIL_TOL``.
    """

    def __init__(self, base: ConvexPayoff, tau: float, damping=None):
        if tau <= 0:
            raise ValueError("tau must be positive")
        self.base = base
        self.tau = float(tau)
        self.damping = damping

    # -- raw (undamped) convolution -------------------------------------
    def window(self, x: float) -> float:
        """Half-width of the integration window in ``u`` around ``x``."""
        tau = self.tau
        c, p = self.base.growth_c, 2.0 - self.base.growth_eps
        w = 8.0 * math.sqrt(2.0 * tau)

        def log_tail(w):
            # log of kernel(w) * growth bound at |x| + w, plus polynomial slack
            return (
                math.log(c) + c * (abs(x) + w) ** p - w * w / (4.0 * tau)
                + math.log(1.0 + w * w / tau)
            )

        while log_tail(w) > math.log(TAIL_TOL):
            w *= 1.25
            if w > 1e4 * math.sqrt(tau) + 1e3:
                raise QuadratureError(
                    f"heat_mollify: growth too fast for a finite window at x={x}"
                )
        return w

    def _quad(self, x: float, order: int) -> float:
        r = 2.0 * math.sqrt(self.tau)
        smax = self.window(x) / r
        f = self.base.f

        if order == 0:
            def g(s):
                return float(f(np.asarray(x - r * s))) * math.exp(-s * s)
        elif order == 1:
            def g(s):
                return float(f(np.asarray(x - r * s))) * (-s / math.sqrt(self.tau)) * math.exp(-s * s)
        else:
            def g(s):
                return float(f(np.asarray(x - r * s))) * (2.0 * s * s - 1.0) / (2.0 * self.tau) * math.exp(-s * s)

        brk = [0.0]
        for k in self.base.kinks:
            s_k = (x - k) / r
            if -smax < s_k < smax:
                brk.append(s_k)
        brk = sorted(set(brk))
        pts = [-smax] + brk + [smax]
        total = 0.0
        for lo, hi in zip(pts[:-1], pts[1:]):
            if hi <= lo:
                continue
            with warnings.catch_warnings():
                # round-off warnings are judged by the returned error estimate below
                warnings.simplefilter("ignore", integrate.IntegrationWarning)
                val, err = integrate.quad(g, lo, hi, epsabs=1e-15, epsrel=1e-13, limit=400)
            if not np.isfinite(val) or err > 1e-9 * max(1.0, abs(val)):
                raise QuadratureError(
                    f"heat_mollify quadrature did not converge at x={x} "
                    f"(estimate {val}, error {err})"
                )
            total += val
        return total / _SQRT_PI

    def _raw(self, x, order):
        x = np.asarray(x, dtype=float)
        flat = np.array([self._quad(float(v), order) for v in x.ravel()])
        return flat.reshape(x.shape)

    # -- public -------------------------------------------------------------
    def derivatives(self, x):
        """``(eval, eval', eval'')`` at ``x`` including damping."""
        v0, v1, v2 = self._raw(x, 0), self._raw(x, 1), self._raw(x, 2)
        if self.damping is None:
            return v0, v1, v2
        b, db, d2b = self.damping.weights(np.asarray(x, dtype=float))
        return v0 * b, v1 * b + v0 * db, v2 * b + 2.0 * v1 * db + v0 * d2b

    def eval(self, x):
        v = self._raw(x, 0)
        if self.damping is None:
            return v
        return v * self.damping.weights(np.asarray(x, dtype=float))[0]

    __call__ = eval

    def first_deriv(self, x):
        return self.derivatives(x)[1]

    def second_deriv(self, x):
        return self.derivatives(x)[2]

    def tabulated(self, lo: float, hi: float, n: int = 2001):
        """Fast vectorised evaluator: cubic spline on ``[lo, hi]``, quadrature outside."""
        nodes = np.linspace(lo, hi, n)
        spline = CubicSpline(nodes, self.eval(nodes))

        def fn(z):
            z = np.asarray(z, dtype=float)
            out = spline(np.clip(z, lo, hi))
            outside = (z < lo) | (z > hi)
            if np.any(outside):
                out[outside] = self.eval(z[outside])
            return out

        return fn

    def as_payoff(self, lo: float, hi: float, n: int = 2001) -> ConvexPayoff:
        """ConvexPayoff wrapper (same weights and growth constants) for Monte Carlo use."""
        b = self.base
        return ConvexPayoff(
            self.tabulated(lo, hi, n), b.weights, b.growth_c, b.growth_eps,
            name=f"mollified[{b.name}, tau={self.tau}]",
        )


def heat_mollify(payoff: ConvexPayoff, tau: float) -> SmoothPayoff:
    return SmoothPayoff(payoff, tau)


def apply_damping(sp: SmoothPayoff, mode) -> SmoothPayoff:
    """Return a copy of ``sp`` multiplied by a Gaussian or plateau damping factor."""
    if mode is not None and not isinstance(mode, (GaussianDamping, PlateauDamping)):
        raise TypeError(f"unknown damping mode {mode!r}")
    return SmoothPayoff(sp.base, sp.tau, mode)


def strict_convexity_certificate(sp: SmoothPayoff, K, n_grid: int = 201, tol: Optional[float] = None):
    """Minimum of ``eval''`` over an ``n_grid`` mesh on ``K = (lo, hi)``.

    ``ok`` requires the minimum to exceed ``tol`` (default ``1e-12`` times the
    largest ``|eval|`` on the mesh) so that quadrature round-off on a
    curvature-free payoff is not mistaken for strict convexity.
    """
    if n_grid < 3:
        raise ValueError("n_grid must be >= 3")
    x = np.linspace(K[0], K[1], n_grid)
    v0, _, v2 = sp.derivatives(x)
    if tol is None:
        tol = 1e-12 * max(1.0, float(np.max(np.abs(v0))))
    m = float(np.min(v2))
    return m, bool(m > tol)
