"""Builders for fields, payoffs and coefficients from JSON-style specs, plus config validation."""
from __future__ import annotations

import copy
import json
import math
from importlib import resources
from pathlib import Path

import numpy as np

from .model import ConvexPayoff, VolatilityField, constant_field

SCHEMA_VERSION = 1
KINDS = ("compare", "monotonicity", "kernel-probe", "transform-solve", "mollify-probe", "convexity-sweep")


class ConfigError(ValueError):
    """Invalid scenario configuration (CLI exit status 64)."""


# -- field families ------------------------------------------------------------------

def perturbation(amp: float, phase: float = 0.0):
    """``x -> I + amp P(x2)`` with ``P = [[sin, cos/2], [cos/2, cos]]`` shifted by ``phase``."""
    def a(x):
        x2 = np.asarray(x, dtype=float)[..., 1] + phase
        s, c = np.sin(x2), np.cos(x2)
        row1 = np.stack([1 + amp * s, 0.5 * amp * c], -1)
        row2 = np.stack([0.5 * amp * c, 1 + amp * c], -1)
        return np.stack([row1, row2], -2)

    return a


def separable_perturbation(amp: float):
    """``x -> [[1 + amp sin x1, amp cos(x2)/2], [amp cos(x2)/2, 1 + amp cos x2]]``.

    ``a11`` reads only the first coordinate, so the first component is an
    autonomous one-dimensional martingale diffusion and convexity in it is preserved.
    """
    def a(x):
        x = np.asarray(x, dtype=float)
        s1, c2 = np.sin(x[..., 0]), np.cos(x[..., 1])
        row1 = np.stack([1 + amp * s1, 0.5 * amp * c2], -1)
        row2 = np.stack([0.5 * amp * c2, 1 + amp * c2], -1)
        return np.stack([row1, row2], -2)

    return a


def trig_perturbed_field(amp: float = 0.1, phase: float = 0.0, freq=(0.0, 1.0), name="trig-perturbed"):
    """Two-dimensional field with ``sigma sigma^T = I + amp P(w . x + phase)``."""
    w = np.asarray(freq, dtype=float)
    if w.shape != (2,):
        raise ValueError("freq must have two entries")

    def a(x):
        x = np.asarray(x, dtype=float)
        z = x @ w + phase
        return perturbation(amp)(np.stack([np.zeros_like(z), z], -1))

    # entries move at most amp * |w| per unit step; Frobenius norm of dP <= 1.6
    dep = tuple(i for i in range(2) if w[i] != 0.0)
    return VolatilityField(2, a=a, lipschitz_bound=1.6 * abs(amp) * float(np.linalg.norm(w)),
                           sup_bound=1 + 2 * abs(amp), depends_on=dep, name=name)


def diagonal_trig_field(dim: int, amp: float = 0.2, freq: float = 1.0, name="diagonal-trig"):
    """``sigma = diag(1 + amp sin(freq x_i))``."""
    def sigma(x):
        s = 1.0 + amp * np.sin(freq * np.asarray(x, dtype=float))
        return s[..., :, None] * np.eye(dim)

    return VolatilityField(dim, sigma=sigma, lipschitz_bound=2 * (1 + abs(amp)) * abs(amp * freq),
                           sup_bound=(1 + abs(amp)) ** 2, diagonal=True, name=name)


def linear_clamp_field(dim: int, slope: float = 0.2, lo: float = 0.5, hi: float = 2.0, name="linear-clamp"):
    """``sigma = diag(clip(1 + slope x_i, lo, hi))``."""
    if not 0 < lo < hi:
        raise ValueError("need 0 < lo < hi")

    def sigma(x):
        s = np.clip(1.0 + slope * np.asarray(x, dtype=float), lo, hi)
        return s[..., :, None] * np.eye(dim)

    return VolatilityField(dim, sigma=sigma, lipschitz_bound=2 * hi * abs(slope), sup_bound=hi * hi,
                           diagonal=True, name=name)


def polynomial_field(dim: int, coef=(1.0, 0.0, 0.1), floor: float = 0.25, name="polynomial"):
    """``sigma = diag(sqrt(floor + p(x_i)^2))`` for the polynomial ``p`` with coefficients ``coef``."""
    coef = np.asarray(coef, dtype=float)
    if floor <= 0:
        raise ValueError("floor must be positive")

    def sigma(x):
        p = np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), coef)
        return np.sqrt(floor + p * p)[..., :, None] * np.eye(dim)

    return VolatilityField(dim, sigma=sigma, diagonal=True, name=name)


_FIELD_KEYS = {
    "constant": {"sigma"},
    "diagonal-trig": {"dim", "amp", "freq"},
    "linear-clamp": {"dim", "slope", "lo", "hi"},
    "polynomial": {"dim", "coef", "floor"},
    "trig-perturbed": {"amp", "phase", "freq"},
}


def _check_keys(spec: dict, allowed: set, where: str):
    if not isinstance(spec, dict):
        raise ConfigError(f"{where}: expected an object")
    extra = set(spec) - allowed
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {sorted(extra)}")


def build_field(spec: dict, where: str = "field") -> VolatilityField:
    fam = spec.get("family") if isinstance(spec, dict) else None
    if fam not in _FIELD_KEYS:
        raise ConfigError(f"{where}.family: unknown field family {fam!r}")
    _check_keys(spec, _FIELD_KEYS[fam] | {"family", "add_outer"}, where)
    args = {k: v for k, v in spec.items() if k not in ("family", "add_outer")}
    try:
        if fam == "constant":
            fld = constant_field(args["sigma"])
        elif fam == "diagonal-trig":
            fld = diagonal_trig_field(**args)
        elif fam == "linear-clamp":
            fld = linear_clamp_field(**args)
        elif fam == "polynomial":
            fld = polynomial_field(**args)
        else:
            fld = trig_perturbed_field(**args)
        if "add_outer" in spec:
            fld = fld.plus_outer(spec["add_outer"])
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    return fld


# -- coefficient families (PDE convention, functions of the second coordinate) --------

def build_coefficients(spec: dict, where: str = "coefficients"):
    """``x -> (..., 2, 2)`` diffusion matrix of ``v_t = sum a_ij v_ij``."""
    fam = spec.get("family") if isinstance(spec, dict) else None
    if fam == "constant":
        _check_keys(spec, {"family", "a"}, where)
        try:
            A = np.asarray(spec["a"], dtype=float)
        except KeyError as exc:
            raise ConfigError(f"{where}: missing key 'a'") from exc
        if A.shape != (2, 2) or not np.allclose(A, A.T) or np.linalg.eigvalsh(A)[0] <= 0:
            raise ConfigError(f"{where}.a: need a symmetric positive definite 2x2 matrix")
        return lambda x: np.broadcast_to(A, np.shape(x)[:-1] + (2, 2))
    if fam == "trig-perturbed":
        _check_keys(spec, {"family", "amp", "phase", "scale"}, where)
        amp = float(spec.get("amp", 0.1))
        if not 0 <= amp < 0.5:
            raise ConfigError(f"{where}.amp: must lie in [0, 0.5)")
        scale = float(spec.get("scale", 1.0))
        if scale <= 0:
            raise ConfigError(f"{where}.scale: must be positive")
        base = perturbation(amp, float(spec.get("phase", 0.0)))
        return lambda x: scale * base(x)
    if fam == "separable-perturbed":
        _check_keys(spec, {"family", "amp", "scale"}, where)
        amp = float(spec.get("amp", 0.1))
        if not 0 <= amp < 0.5:
            raise ConfigError(f"{where}.amp: must lie in [0, 0.5)")
        scale = float(spec.get("scale", 1.0))
        if scale <= 0:
            raise ConfigError(f"{where}.scale: must be positive")
        return lambda x: scale * separable_perturbation(amp)(x)
    raise ConfigError(f"{where}.family: unknown coefficient family {fam!r}")


# -- payoffs ---------------------------------------------------------------------------

def _square(z):
    return z * z


def _call(strike):
    return lambda z: np.maximum(z - strike, 0.0)


_PAYOFFS = {
    "square": (lambda p: _square, set(), (1.0, 1.0), ()),
    "abs": (lambda p: np.abs, set(), (1.0, 1.0), (0.0,)),
    "call": (lambda p: _call(p.get("strike", 0.5)), {"strike"}, (1.0, 1.0), None),
    "linear": (lambda p: (lambda z: p.get("slope", 1.0) * z), {"slope"}, (1.0, 1.0), ()),
    "neg-square": (lambda p: (lambda z: -z * z), set(), (1.0, 1.0), ()),
    "exp-square": (lambda p: (lambda z: np.exp(z * z)), set(), (1.0, 0.5), ()),
}


def build_payoff(spec: dict, dim: int, where: str = "payoff") -> ConvexPayoff:
    fam = spec.get("family") if isinstance(spec, dict) else None
    if fam not in _PAYOFFS:
        raise ConfigError(f"{where}.family: unknown payoff family {fam!r}")
    make, extra, (gc, ge), kinks = _PAYOFFS[fam]
    _check_keys(spec, {"family", "weights", "mollify"} | extra, where)
    w = np.asarray(spec.get("weights", [1.0] * dim), dtype=float)
    if w.shape != (dim,):
        raise ConfigError(f"{where}.weights: expected {dim} entries")
    if kinks is None:
        kinks = (float(spec.get("strike", 0.5)),)
    pay = ConvexPayoff(make(spec), w, gc, ge, name=fam, kinks=tuple(kinks))
    if "mollify" in spec:
        m = spec["mollify"]
        _check_keys(m, {"tau", "range", "n"}, f"{where}.mollify")
        from .mollify import heat_mollify

        tau = float(m.get("tau", 0.05))
        if tau <= 0:
            raise ConfigError(f"{where}.mollify.tau: must be positive")
        lo, hi = m.get("range", [-10.0, 10.0])
        pay = heat_mollify(pay, tau).as_payoff(float(lo), float(hi), int(m.get("n", 2001)))
    return pay


# -- config loading ----------------------------------------------------------------------

_COMMON = {"schema", "kind", "seed", "description"}
_KIND_KEYS = {
    "compare": {"fieldX", "fieldY", "payoff", "x0", "T", "numerics", "suite", "pde_probes"},
    "monotonicity": {"field", "payoff", "x0", "times", "numerics", "control_payoff"},
    "kernel-probe": {"coefficients", "mode", "M", "n_probes", "probe_box", "quad", "structure", "density"},
    "transform-solve": {"coefficients", "K", "mesh", "tilt", "kappa"},
    "mollify-probe": {"payoff", "tau", "points", "certificate_K", "damping"},
    "convexity-sweep": {"coefficients", "payoff", "domain", "times", "mesh", "n_transforms", "tol"},
}
_NUMERICS = {"n_paths": (2, 10**8), "n_steps": (1, 10**5), "scheme": None, "pde": None, "pde_mesh": (17, 1025)}


def _range(cfg, key, lo, hi, where, cast=float):
    if key not in cfg:
        return
    v = cfg[key]
    try:
        v = cast(v)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}.{key}: not a number") from exc
    if not (lo <= v <= hi) or (isinstance(v, float) and not math.isfinite(v)):
        raise ConfigError(f"{where}.{key}: {v} outside [{lo}, {hi}]")


def validate(cfg: dict) -> dict:
    """Check schema, kind, key names and numeric ranges; return a deep copy."""
    if not isinstance(cfg, dict):
        raise ConfigError("config: expected a JSON object")
    if cfg.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"schema: expected {SCHEMA_VERSION}, got {cfg.get('schema')!r}")
    kind = cfg.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"kind: unknown scenario kind {kind!r}")
    _check_keys(cfg, _COMMON | _KIND_KEYS[kind], "config")
    _range(cfg, "seed", 0, 2**63 - 1, "config", int)
    _range(cfg, "T", 1e-8, 1e3, "config")
    _range(cfg, "tau", 1e-8, 1e2, "config")
    _range(cfg, "M", 0, 4, "config", int)
    _range(cfg, "mesh", 17, 1025, "config", int)
    _range(cfg, "n_transforms", 1, 1024, "config", int)
    _range(cfg, "n_probes", 1, 10**6, "config", int)
    if kind == "compare" and "suite" not in cfg:
        for key in ("fieldX", "fieldY", "payoff", "x0", "T"):
            if key not in cfg:
                raise ConfigError(f"config: missing key {key!r}")
    if "suite" in cfg:
        _check_keys(cfg["suite"], {"n_instances", "seed"}, "suite")
        _range(cfg["suite"], "n_instances", 1, 10**4, "suite", int)
    for key, allowed in (("quad", {"n_space", "n_time", "radius", "n_space_deep", "n_time_deep"}),
                         ("structure", {"shifts", "n_probes"}),
                         ("density", {"tau", "z", "n_paths", "n_grid"}),
                         ("damping", {"kind", "eps", "lo", "hi", "margin"})):
        if key in cfg:
            _check_keys(cfg[key], allowed, key)
    num = cfg.get("numerics", {})
    _check_keys(num, set(_NUMERICS), "numerics")
    for k, r in _NUMERICS.items():
        if r is not None:
            _range(num, k, r[0], r[1], "numerics", int)
    if num.get("scheme", "EulerMaruyama") not in ("EulerMaruyama", "Milstein"):
        raise ConfigError(f"numerics.scheme: unknown scheme {num.get('scheme')!r}")
    # build once so that family and parameter errors surface here
    for key in ("fieldX", "fieldY", "field"):
        if key in cfg:
            build_field(cfg[key], key)
    if "coefficients" in cfg:
        build_coefficients(cfg["coefficients"])
    if "payoff" in cfg:
        dim = {"compare": None, "monotonicity": None}.get(kind, 2 if kind == "convexity-sweep" else 1)
        if dim is None:
            dim = len(cfg.get("x0", [0.0]))
        pl = copy.deepcopy(cfg["payoff"])
        if isinstance(pl, dict) and "mollify" in pl:
            # tabulation is deferred to the run
            _check_keys(pl.pop("mollify"), {"tau", "range", "n"}, "payoff.mollify")
        build_payoff(pl, dim)
    return copy.deepcopy(cfg)


def bundled_names():
    return sorted(p.name[:-5] for p in resources.files("convorder").joinpath("configs").iterdir()
                  if p.name.endswith(".json"))


def load_config(ref: str) -> dict:
    """Load ``ref`` as a path, or as the name of a bundled config."""
    path = Path(ref)
    if path.is_file():
        text = path.read_text()
    else:
        res = resources.files("convorder").joinpath("configs", f"{ref}.json")
        if not res.is_file():
            raise ConfigError(f"--config: no file or bundled config named {ref!r} (bundled: {bundled_names()})")
        text = res.read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from exc
    return validate(cfg)
