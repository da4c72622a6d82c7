"""Diffusion and payoff types, and sampling checks of the comparison hypotheses."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Box:
    """Axis-aligned compact region ``[lo_0, hi_0] x ... x [lo_{n-1}, hi_{n-1}]``."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi):
            raise ValueError("Box bounds must have equal length")
        if any(h < l for l, h in zip(lo, hi)):
            raise ValueError(f"Box has hi < lo: {lo} {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, lo: float, hi: float, dim: int) -> "Box":
        return cls((lo,) * dim, (hi,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lo)

    def grow(self, margin: float) -> "Box":
        return Box(tuple(l - margin for l in self.lo), tuple(h + margin for h in self.hi))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        return lo + (hi - lo) * rng.random((n, self.dim))


def psd_sqrt(a: np.ndarray) -> np.ndarray:
    """Symmetric square root of a batch of PSD matrices with shape (..., n, n)."""
    a = np.asarray(a, dtype=float)
    n = a.shape[-1]
    if n == 1:
        return np.sqrt(np.clip(a, 0.0, None))
    if n == 2:
        # sqrt(A) = (A + s I) / t with s = sqrt(det A), t = sqrt(tr A + 2 s)
        a11, a12, a22 = a[..., 0, 0], a[..., 0, 1], a[..., 1, 1]
        s = np.sqrt(np.maximum(a11 * a22 - a12 * a12, 0.0))
        t = np.sqrt(np.maximum(a11 + a22 + 2.0 * s, 0.0))
        with np.errstate(divide="ignore"):
            inv = np.where(t > 0.0, 1.0 / t, 0.0)
        off = a12 * inv
        comps = ((a11 + s) * inv, off, off, (a22 + s) * inv)
        return np.stack(comps, axis=-1).reshape(a.shape)
    w, v = np.linalg.eigh(a)
    w = np.sqrt(np.clip(w, 0.0, None))
    return (v * w[..., None, :]) @ np.swapaxes(v, -1, -2)


class VolatilityField:
    """Matrix volatility ``sigma(x)`` with its square ``a(x) = sigma sigma^T``.

    Either ``sigma`` or ``a`` may be given; the missing one is derived (the
    symmetric square root is used when only ``a`` is known). Both callables
    take points of shape ``(..., dim)`` and return ``(..., dim, dim)``;
    constant fields may return a single ``(dim, dim)`` matrix.
    """

    def __init__(
        self,
        dim: int,
        sigma: Optional[ArrayFn] = None,
        a: Optional[ArrayFn] = None,
        lipschitz_bound: float = np.inf,
        sup_bound: float = np.inf,
        diagonal: bool = False,
        constant: bool = False,
        depends_on: Optional[tuple] = None,
        name: str = "custom",
    ):
        if dim < 1:
            raise ValueError("dim must be a positive integer")
        if sigma is None and a is None:
            raise ValueError("need sigma or a")
        self.dim = int(dim)
        self._sigma = sigma
        self._a = a
        self.lipschitz_bound = float(lipschitz_bound)
        self.sup_bound = float(sup_bound)
        self.diagonal = bool(diagonal)
        self.constant = bool(constant)
        # coordinate indices the coefficients actually read; None = unknown
        self.depends_on = None if depends_on is None else tuple(depends_on)
        self.name = name

    def _batch(self, x, fn):
        x = np.asarray(x, dtype=float)
        out = np.asarray(fn(x), dtype=float)
        target = x.shape[:-1] + (self.dim, self.dim)
        if out.shape != target:
            out = np.broadcast_to(out, target)
        return out

    def sigma(self, x) -> np.ndarray:
        if self._sigma is not None:
            return self._batch(x, self._sigma)
        return psd_sqrt(self._batch(x, self._a))

    def a(self, x) -> np.ndarray:
        if self._a is not None:
            return self._batch(x, self._a)
        s = self._batch(x, self._sigma)
        return s @ np.swapaxes(s, -1, -2)

    def generator(self, x) -> np.ndarray:
        """Second-order coefficient ``a/2`` of the backward Kolmogorov operator."""
        return 0.5 * self.a(x)

    def scaled(self, factor: float) -> "VolatilityField":
        """Field with ``sigma`` multiplied by ``factor``."""
        return VolatilityField(
            self.dim,
            sigma=lambda x: factor * self.sigma(x),
            lipschitz_bound=factor**2 * self.lipschitz_bound,
            sup_bound=factor**2 * self.sup_bound,
            diagonal=self.diagonal,
            constant=self.constant,
            depends_on=self.depends_on,
            name=f"{factor}*{self.name}",
        )

    def plus_outer(self, q) -> "VolatilityField":
        """Field whose square is ``a(x) + q q^T`` (PSD increment)."""
        q = np.asarray(q, dtype=float)
        if q.shape != (self.dim,):
            raise ValueError("q must have length dim")
        qq = np.outer(q, q)
        return VolatilityField(
            self.dim,
            a=lambda x: self.a(x) + qq,
            lipschitz_bound=self.lipschitz_bound,
            sup_bound=self.sup_bound + float(q @ q),
            constant=self.constant,
            depends_on=self.depends_on,
            name=f"{self.name}+qq^T",
        )

    def __repr__(self):
        return f"VolatilityField(dim={self.dim}, name={self.name!r})"


def constant_field(sigma) -> VolatilityField:
    s = np.atleast_2d(np.asarray(sigma, dtype=float))
    if s.shape[0] != s.shape[1]:
        raise ValueError("only square volatility matrices are supported")
    a = s @ s.T
    return VolatilityField(
        s.shape[0],
        sigma=lambda x: s,
        a=lambda x: a,
        lipschitz_bound=0.0,
        sup_bound=float(np.linalg.norm(a, 2)),
        diagonal=bool(np.allclose(s, np.diag(np.diag(s)))),
        constant=True,
        depends_on=(),
        name="constant",
    )


@dataclass
class ConvexPayoff:
    """Univariate convex data ``f`` applied to ``sum_i weights_i x_i``."""

    f: Callable[[np.ndarray], np.ndarray]
    weights: np.ndarray
    growth_c: float = 1.0
    growth_eps: float = 1.0
    name: str = "custom"
    kinks: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if self.growth_c <= 0:
            raise ValueError("growth_c must be positive")
        if not 0.0 < self.growth_eps < 2.0:
            raise ValueError("growth_eps must lie in (0, 2)")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite")

    @property
    def dim(self) -> int:
        return self.weights.size

    def __call__(self, z):
        return np.asarray(self.f(np.asarray(z, dtype=float)), dtype=float)

    def of_state(self, states: np.ndarray) -> np.ndarray:
        return self(np.asarray(states) @ self.weights)

    def growth_bound(self, z):
        z = np.abs(np.asarray(z, dtype=float))
        return self.growth_c * np.exp(self.growth_c * z ** (2.0 - self.growth_eps))

    def midpoint_convex(self, lo=-10.0, hi=10.0, n=401, tol=1e-9) -> bool:
        u = np.linspace(lo, hi, n)
        uu, ww = np.meshgrid(u, u, indexing="ij")
        fm = self(0.5 * (uu + ww))
        rhs = 0.5 * (self(uu) + self(ww))
        scale = max(1.0, float(np.max(np.abs(rhs))))
        return bool(np.all(fm <= rhs + tol * scale))


class OrderResult(enum.Enum):
    LeqStrict = "LeqStrict"
    Leq = "Leq"
    NotLeq = "NotLeq"


def psd_order(A, B, tol: Optional[float] = None) -> OrderResult:
    """Classify ``A <= B`` in the Loewner order via the spectrum of ``B - A``.

    The default tolerance is ``1e-10 * max(1, ||B - A||_2)``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape != B.shape or A.shape[0] != A.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape} vs {B.shape}")
    diff = B - A
    if tol is None:
        tol = 1e-10 * max(1.0, float(np.linalg.norm(diff, 2)))
    sym_tol = max(tol, 1e-12 * max(1.0, float(np.abs(A).max()), float(np.abs(B).max())))
    for m in (A, B):
        if np.abs(m - m.T).max() > sym_tol:
            raise ValueError("psd_order requires symmetric matrices")
    lam = float(np.linalg.eigvalsh(0.5 * (diff + diff.T))[0])
    if lam > tol:
        return OrderResult.LeqStrict
    if lam >= -tol:
        return OrderResult.Leq
    return OrderResult.NotLeq


@dataclass(frozen=True)
class EllipticityCertificate:
    lam: float
    Lam: float
    domain: Box
    n_samples: int

    def __post_init__(self):
        if not 0.0 < self.lam <= self.Lam < np.inf:
            raise ValueError("need 0 < lambda <= Lambda < inf")


def rayleigh_extremes(field: VolatilityField, domain: Box, n_dirs=64, n_pts=4096, seed=0):
    """Min and max of ``z^T a(x) z`` over sampled unit ``z`` and ``x`` in ``domain``.

    The eigen-extremes at each sampled ``x`` are included, so the sampled
    directions only ever tighten nothing; they are kept for cross-checking.
    """
    if n_dirs < 1 or n_pts < 1:
        raise ValueError("n_dirs and n_pts must be >= 1")
    rng = np.random.default_rng(seed)
    x = domain.sample(n_pts, rng)
    a = field.a(x)
    a = 0.5 * (a + np.swapaxes(a, -1, -2))
    z = rng.standard_normal((n_dirs, field.dim))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    rq = np.einsum("di,pij,dj->pd", z, a, z)
    w = np.linalg.eigvalsh(a)
    lo = min(float(rq.min()), float(w[:, 0].min()))
    hi = max(float(rq.max()), float(w[:, -1].max()))
    return lo, hi


def ellipticity_bounds(field: VolatilityField, domain: Box, n_dirs=64, n_pts=4096, seed=0):
    """Sampled ellipticity certificate, or ``None`` when the field degenerates."""
    lo, hi = rayleigh_extremes(field, domain, n_dirs, n_pts, seed)
    if lo <= 0.0:
        return None
    return EllipticityCertificate(lo, hi, domain, n_pts)


def lipschitz_estimate(field: VolatilityField, domain: Box, n_pairs=4096, seed=0) -> float:
    """Largest sampled quotient ``||a(x) - a(y)||_2 / |x - y|`` (a lower bound).

    Half the pairs are global, half are local (``|x - y|`` ~ 1e-4 of the box
    diameter) so that slopes of smooth fields are resolved.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    rng = np.random.default_rng(seed)
    n_glob = max(1, n_pairs // 2)
    n_loc = max(1, n_pairs - n_glob)
    x = domain.sample(n_glob + n_loc, rng)
    y = np.empty_like(x)
    y[:n_glob] = domain.sample(n_glob, rng)
    lo, hi = np.asarray(domain.lo), np.asarray(domain.hi)
    diam = float(np.linalg.norm(hi - lo)) or 1.0
    u = rng.standard_normal((n_loc, domain.dim))
    # a quarter of the local pairs run along coordinate axes
    n_ax = n_loc // 4
    if n_ax:
        u[:n_ax] = 0.0
        u[np.arange(n_ax), rng.integers(0, domain.dim, n_ax)] = 1.0
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    y[n_glob:] = np.clip(x[n_glob:] + 1e-4 * diam * u, lo, hi)
    d = np.linalg.norm(x - y, axis=1)
    keep = d > 1e-12 * diam
    if not np.any(keep):
        return 0.0
    da = field.a(x[keep]) - field.a(y[keep])
    num = np.linalg.norm(da, ord=2, axis=(-2, -1))
    return float(np.max(num / d[keep]))


def growth_check(payoff: ConvexPayoff, radius: float, n_pts: int = 4001) -> bool:
    """Whether ``|f(z)| <= c exp(c |z|^(2 - eps))`` on a grid over ``[-radius, radius]``."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    z = np.linspace(-radius, radius, n_pts)
    with np.errstate(over="ignore", invalid="ignore"):
        fz = np.abs(payoff(z))
        bound = payoff.growth_bound(z)
        ok = np.where(np.isfinite(fz), fz <= bound, False)
    return bool(np.all(ok))
