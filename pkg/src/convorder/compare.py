"""Monte Carlo check of ``E f(sum c_i X_i(t)) <= E f(sum c_i Y_i(t))`` for ordered volatilities."""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import qmc

from . import sde
from .model import (
    Box,
    ConvexPayoff,
    VolatilityField,
    ellipticity_bounds,
    growth_check,
    lipschitz_estimate,
)


class Verdict(str, enum.Enum):
    OrderedStrict = "OrderedStrict"
    Ordered = "Ordered"
    Inconclusive = "Inconclusive"
    Violated = "Violated"


@dataclass
class CompareConfig:
    n_paths: int = 100_000
    n_steps: int = 256
    seed: int = 0
    scheme: str = "EulerMaruyama"
    threads: Optional[int] = None
    n_psd: int = 4096
    n_dirs: int = 64
    n_pts: int = 4096
    n_pairs: int = 4096
    z_sigma: float = 3.0          # margin multiplier: verdicts use 3 standard errors
    cauchy_rel: float = 0.02
    pde: bool = False
    pde_mesh: int = 129


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# -- hypotheses --------------------------------------------------------------------

def psd_order_sampled(field_x: VolatilityField, field_y: VolatilityField, domain: Box, n: int = 4096, seed: int = 0):
    """Smallest eigenvalue of ``a_Y(x) - a_X(x)`` over scrambled-Sobol points of ``domain``."""
    m = int(round(math.log2(max(n, 2))))
    pts = qmc.Sobol(domain.dim, scramble=True, seed=seed).random_base2(m)[:n]
    pts = qmc.scale(pts, domain.lo, domain.hi) if domain.dim > 0 else pts
    diff = field_y.a(pts) - field_x.a(pts)
    diff = 0.5 * (diff + np.swapaxes(diff, -1, -2))
    eig = np.linalg.eigvalsh(diff)[:, 0]
    tol = 1e-10 * max(1.0, float(np.max(np.abs(diff))))
    k = int(np.argmin(eig))
    if eig[k] > tol:
        result = "LeqStrict"
    elif eig[k] >= -tol:
        result = "Leq"
    else:
        result = "NotLeq"
    return {
        "passed": result != "NotLeq",
        "result": result,
        "min_eig": float(eig[k]),
        "witness": pts[k].tolist(),
        "n_points": int(n),
    }


def hypothesis_suite(field_x: VolatilityField, field_y: VolatilityField, payoff: ConvexPayoff,
                     domain: Box, cfg: Optional[CompareConfig] = None) -> dict:
    """PSD order, Lipschitz bounds, ellipticity and growth, each with a pass flag."""
    cfg = cfg or CompareConfig()
    out = {"psd": psd_order_sampled(field_x, field_y, domain, cfg.n_psd, cfg.seed)}
    lip = {}
    for tag, fld in (("X", field_x), ("Y", field_y)):
        est = lipschitz_estimate(fld, domain, cfg.n_pairs, cfg.seed)
        ok = math.isfinite(est) and (not math.isfinite(fld.lipschitz_bound) or est <= fld.lipschitz_bound * (1 + 1e-6) + 1e-12)
        lip[tag] = {"estimate": est, "declared": fld.lipschitz_bound, "passed": bool(ok)}
    out["lipschitz"] = {"passed": all(v["passed"] for v in lip.values()), **lip}
    ell = {}
    for tag, fld in (("X", field_x), ("Y", field_y)):
        cert = ellipticity_bounds(fld, domain, cfg.n_dirs, cfg.n_pts, cfg.seed)
        ell[tag] = {"passed": cert is not None, "lambda": None if cert is None else cert.lam,
                    "Lambda": None if cert is None else cert.Lam}
    out["ellipticity"] = {"passed": all(v["passed"] for v in ell.values()), **ell}
    radius = float(np.sum(np.abs(payoff.weights) * np.maximum(np.abs(domain.lo), np.abs(domain.hi))))
    out["growth"] = {"passed": growth_check(payoff, max(radius, 1.0)), "radius": max(radius, 1.0)}
    return out


def has_curvature(payoff: ConvexPayoff, lo: float, hi: float, n: int = 257, tol: float = 1e-9) -> bool:
    """Whether ``f`` is not affine on ``[lo, hi]`` (``f'' != 0`` there in the distributional sense)."""
    u = np.linspace(lo, hi, n)
    f = payoff(u)
    defect = 0.5 * (f[:-2] + f[2:]) - f[1:-1]
    scale = max(1.0, float(np.max(np.abs(f))))
    return bool(np.max(defect) > tol * scale)


def mean_existence(samples, rel: float = 0.02, z: float = 3.0) -> dict:
    """Sample-mean stability over four doubling batch sizes ending at the full sample.

    A batch mean ``m_k`` is accepted when ``|m_k - m| <= rel |m| + z SE_k``.
    """
    s = np.asarray(samples, dtype=float)
    n = s.size
    sizes = [n // 8, n // 4, n // 2, n]
    full = float(s.mean())
    drift, ok = [], True
    for k in sizes:
        if k < 2:
            continue
        m = float(s[:k].mean())
        se = float(s[:k].std(ddof=1) / math.sqrt(k))
        drift.append({"n": int(k), "mean": m, "se": se})
        if abs(m - full) > rel * abs(full) + z * se:
            ok = False
    return {"passed": ok, "batches": drift}


@dataclass
class ComparisonReport:
    hypothesis: dict
    mc: dict
    verdict: Verdict
    strictness_inputs: dict
    pde_crosscheck: Optional[dict] = None
    reasons: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def summary(self) -> str:
        m = self.mc
        lines = [
            f"verdict: {self.verdict.value}",
            f"mean X = {m['meanX']['mean']:.6g} +- {m['meanX']['std_error']:.3g}",
            f"mean Y = {m['meanY']['mean']:.6g} +- {m['meanY']['std_error']:.3g}",
            f"coupled difference Y - X = {m['diff']:.6g} +- {m['diff_se']:.3g}",
        ]
        for k, v in self.hypothesis.items():
            lines.append(f"hypothesis {k}: {'pass' if v['passed'] else 'FAIL'}")
        lines += [f"note: {r}" for r in self.reasons]
        return "\n".join(lines)


def _visited_box(x0, *ensembles) -> Box:
    pts = np.vstack([np.atleast_2d(x0)] + [e.terminal_states for e in ensembles])
    lo, hi = pts.min(0), pts.max(0)
    pad = 1e-9 + 1e-6 * np.maximum(1.0, np.abs(lo))
    return Box(tuple(lo - pad), tuple(hi + pad))


def decide(diff: float, se: float, strict_inputs: bool, z: float = 3.0, hypotheses_ok: bool = True,
           means_ok: bool = True):
    """Verdict from the coupled difference ``mean_Y - mean_X`` and its standard error."""
    if diff < -z * se:
        return Verdict.Violated, "coupled difference below -3 SE"
    if not hypotheses_ok:
        return Verdict.Inconclusive, "hypothesis failure"
    if not means_ok:
        return Verdict.Inconclusive, "sample mean not stable across batch sizes"
    if strict_inputs:
        if diff > z * se:
            return Verdict.OrderedStrict, "difference exceeds 3 SE with strictness inputs satisfied"
        return Verdict.Inconclusive, "strict order expected but difference within 3 SE"
    return Verdict.Ordered, "non-strict order consistent with the coupled difference"


def compare_means(field_x: VolatilityField, field_y: VolatilityField, payoff: ConvexPayoff, x0, T: float,
                  cfg: Optional[CompareConfig] = None) -> ComparisonReport:
    cfg = cfg or CompareConfig()
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if field_x.dim != field_y.dim or field_x.dim != x0.size:
        raise ValueError("fields and x0 must share the dimension")
    if payoff.dim != field_x.dim:
        raise ValueError("payoff weights and field dimension differ")
    ex, ey = sde.coupled_paths(field_x, field_y, x0, T, cfg.n_steps, cfg.n_paths, cfg.seed, cfg.scheme, cfg.threads)
    fx = sde.payoff_samples(ex, payoff)
    fy = sde.payoff_samples(ey, payoff)
    mx, my = sde.estimate(fx), sde.estimate(fy)
    d = sde.estimate(fy - fx)

    domain = _visited_box(x0, ex, ey)
    hyp = hypothesis_suite(field_x, field_y, payoff, domain, cfg)
    existence = {"X": mean_existence(fx, cfg.cauchy_rel, cfg.z_sigma), "Y": mean_existence(fy, cfg.cauchy_rel, cfg.z_sigma)}
    z = np.concatenate([ex.terminal_states @ payoff.weights, ey.terminal_states @ payoff.weights])
    lo, hi = np.quantile(z, [0.001, 0.999])
    strict = {
        "f_second_deriv_nonzero": has_curvature(payoff, float(lo), float(hi)),
        "ellipticity_ok": hyp["ellipticity"]["passed"],
        "psd_strict": hyp["psd"]["result"] == "LeqStrict",
    }
    hyp_ok = hyp["psd"]["passed"] and hyp["lipschitz"]["passed"] and hyp["growth"]["passed"]
    means_ok = existence["X"]["passed"] and existence["Y"]["passed"]
    verdict, why = decide(d.mean, d.std_error, all(strict.values()), cfg.z_sigma, hyp_ok, means_ok)
    mc = {
        "meanX": asdict(mx), "meanY": asdict(my), "diff": d.mean, "diff_se": d.std_error,
        "n_paths": cfg.n_paths, "n_steps": cfg.n_steps, "seed": cfg.seed, "scheme": cfg.scheme,
        "mean_existence": existence, "domain": {"lo": domain.lo, "hi": domain.hi},
    }
    rep = ComparisonReport(hyp, mc, verdict, strict, reasons=[why])
    if cfg.pde and field_x.dim == 2:
        rep.pde_crosscheck = {
            "X": pde_crosscheck(field_x, payoff, [x0], T, cfg.pde_mesh, cfg),
            "Y": pde_crosscheck(field_y, payoff, [x0], T, cfg.pde_mesh, cfg),
        }
    return rep


# -- PDE cross-check -----------------------------------------------------------------

def value_problem(field: VolatilityField, payoff: ConvexPayoff, domain: Box, T: float):
    """Backward equation ``v_t = sum (sigma sigma^T / 2)_ij v_ij`` with data ``f(c . x)``."""
    from .pde import ParabolicProblem

    c = payoff.weights
    return ParabolicProblem(
        a=field.generator,
        data=lambda x1, x2: payoff(c[0] * x1 + c[1] * x2),
        domain=domain,
        T=T,
        name=f"value[{field.name}]",
    )


def pde_crosscheck(field: VolatilityField, payoff: ConvexPayoff, points, T: float, mesh: int = 257,
                   cfg: Optional[CompareConfig] = None) -> dict:
    """PDE value with a Richardson grid-error estimate against an MC mean at each start point."""
    from .pde import MeshSpec, richardson_error

    cfg = cfg or CompareConfig()
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != 2:
        raise ValueError("the PDE cross-check is two-dimensional")
    dom = Box(tuple(pts.min(0) - 0.5), tuple(pts.max(0) + 0.5))
    prob = value_problem(field, payoff, dom, T)
    v, grid_err = richardson_error(prob, MeshSpec(mesh, mesh), T, pts)
    rows = []
    for k, x0 in enumerate(pts):
        ens = sde.simulate_paths(field, x0, T, cfg.n_steps, cfg.n_paths, cfg.seed + k, cfg.scheme, cfg.threads)
        est = sde.mc_mean(ens, payoff)
        tol = max(cfg.z_sigma * est.std_error, 5.0 * float(grid_err[k]))
        rows.append({
            "x0": x0.tolist(), "v_pde": float(v[k]), "grid_error": float(grid_err[k]),
            "mc_mean": est.mean, "mc_se": est.std_error, "tolerance": tol,
            "passed": bool(abs(v[k] - est.mean) <= tol),
        })
    return {"points": rows, "passed": all(r["passed"] for r in rows)}


# -- time monotonicity ----------------------------------------------------------------

def monotonicity_report(field: VolatilityField, payoff: ConvexPayoff, x0, times: Sequence[float],
                        cfg: Optional[CompareConfig] = None) -> dict:
    """Value estimates along shared paths at increasing times with paired-difference margins."""
    cfg = cfg or CompareConfig()
    times = sorted(float(t) for t in times)
    if len(times) < 2:
        raise ValueError("need at least two times")
    T = times[-1]
    ens = sde.simulate_paths(field, x0, T, cfg.n_steps, cfg.n_paths, cfg.seed, cfg.scheme, cfg.threads,
                             record_times=times[:-1])
    samples = [sde.payoff_samples(ens, payoff, t) for t in times]
    values = [sde.estimate(s) for s in samples]
    steps = [sde.estimate(b - a) for a, b in zip(samples[:-1], samples[1:])]
    z = np.concatenate([ens.states_at(t) @ payoff.weights for t in times])
    lo, hi = np.quantile(z, [0.001, 0.999])
    curved = has_curvature(payoff, float(lo), float(hi))
    box = Box(tuple(np.min(ens.terminal_states, 0)), tuple(np.max(ens.terminal_states, 0)))
    elliptic = ellipticity_bounds(field, box, cfg.n_dirs, cfg.n_pts, cfg.seed) is not None
    margins = [s.mean / s.std_error if s.std_error > 0 else (math.inf if s.mean > 0 else 0.0) for s in steps]
    increasing = all(s.mean > cfg.z_sigma * s.std_error for s in steps)
    flat = all(abs(s.mean) <= cfg.z_sigma * s.std_error for s in steps)
    if not curved:
        verdict = "Flat" if flat else "NotStrict"
    elif increasing and elliptic:
        verdict = "StrictlyIncreasing"
    elif all(s.mean >= -cfg.z_sigma * s.std_error for s in steps):
        verdict = "Inconclusive"
    else:
        verdict = "Decreasing"
    return _jsonable({
        "times": times,
        "values": [asdict(v) for v in values],
        "steps": [{"diff": s.mean, "se": s.std_error, "margin_in_se": m} for s, m in zip(steps, margins)],
        "f_second_deriv_nonzero": curved,
        "ellipticity_ok": elliptic,
        "strict_claimed": bool(curved and elliptic),
        "strictly_increasing": bool(increasing),
        "flat_within_se": bool(flat),
        "verdict": verdict,
    })


# -- randomized ordered instances -------------------------------------------------------

SUITE_PAYOFFS = ("square", "abs", "call")


def random_instance(rng: np.random.Generator, payoff_name: str = "square"):
    """``sigma sigma^T = I + amp P(w . x + phase)`` and ``rho rho^T = sigma sigma^T + q q^T``.

    ``amp`` is drawn from ``[0.05, 0.15]``, ``|w|`` from ``[0.5, 1.5]`` and
    ``|q|`` from ``[0.5, 1.5]`` with uniform directions; payoff weights are ``(1, 1)``.
    """
    from .scenarios import build_payoff, trig_perturbed_field

    amp = rng.uniform(0.05, 0.15)
    phase = rng.uniform(0.0, 2 * math.pi)
    ang = rng.uniform(0.0, 2 * math.pi)
    w = rng.uniform(0.5, 1.5) * np.array([math.cos(ang), math.sin(ang)])
    ang = rng.uniform(0.0, 2 * math.pi)
    q = rng.uniform(0.5, 1.5) * np.array([math.cos(ang), math.sin(ang)])
    fx = trig_perturbed_field(amp, phase, w, name="random-perturbed")
    fy = fx.plus_outer(q)
    pay = build_payoff({"family": payoff_name, "weights": [1.0, 1.0]}, 2)
    meta = {"amp": amp, "phase": phase, "freq": w.tolist(), "q": q.tolist(), "payoff": payoff_name}
    return fx, fy, pay, meta


def randomized_suite(n_instances: int = 50, seed: int = 2024, cfg: Optional[CompareConfig] = None,
                     T: float = 1.0, x0=(0.0, 0.0)) -> dict:
    """Coupled comparisons on ``n_instances`` random ordered pairs; payoffs cycle through ``SUITE_PAYOFFS``."""
    cfg = cfg or CompareConfig()
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(n_instances):
        fx, fy, pay, meta = random_instance(rng, SUITE_PAYOFFS[k % len(SUITE_PAYOFFS)])
        run_cfg = CompareConfig(**{**asdict(cfg), "seed": cfg.seed + k})
        rep = compare_means(fx, fy, pay, x0, T, run_cfg)
        rows.append({**meta, "instance": k, "verdict": rep.verdict.value, "diff": rep.mc["diff"],
                     "diff_se": rep.mc["diff_se"], "reason": rep.reasons[0]})
    counts = {v.value: sum(r["verdict"] == v.value for r in rows) for v in Verdict}
    ordered = counts["Ordered"] + counts["OrderedStrict"]
    return _jsonable({
        "instances": rows,
        "counts": counts,
        "passed": counts["Violated"] == 0 and ordered >= math.ceil(0.9 * n_instances),
    })
