"""Command-line runner: one scenario per invocation, JSON/CSV artifacts written atomically.

Exit status: 0 ordered or check passed, 1 a check failed (convexity, transform),
2 inconclusive, 3 violated, 64 invalid configuration.
"""
from __future__ import annotations

import argparse
import io
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import compare as cmp
from .model import Box
from .scenarios import (
    KINDS,
    ConfigError,
    build_coefficients,
    build_field,
    build_payoff,
    bundled_names,
    load_config,
)

EXIT_OK, EXIT_FAIL, EXIT_INCONCLUSIVE, EXIT_VIOLATED, EXIT_CONFIG = 0, 1, 2, 3, 64


# -- output helpers -------------------------------------------------------------------

def write_atomic(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    write_atomic(path, json.dumps(cmp._jsonable(obj), indent=2, sort_keys=True) + "\n")


def write_csv(path, header, columns):
    buf = io.StringIO()
    data = np.column_stack([np.asarray(c, dtype=float).ravel() for c in columns])
    np.savetxt(buf, data, delimiter=",", header=",".join(header), comments="", fmt="%.17g")
    write_atomic(path, buf.getvalue())


def _compare_config(cfg, threads):
    num = dict(cfg.get("numerics", {}))
    return cmp.CompareConfig(seed=int(cfg.get("seed", 0)), threads=threads, **num)


# -- scenarios ----------------------------------------------------------------------------

def run_compare(cfg, out: Path, threads):
    ccfg = _compare_config(cfg, threads)
    if "suite" in cfg:
        s = cfg["suite"]
        res = cmp.randomized_suite(int(s.get("n_instances", 50)), int(s.get("seed", 2024)), ccfg)
        write_json(out / "suite.json", res)
        lines = [f"{k}: {v}" for k, v in res["counts"].items()]
        lines.append(f"suite {'passed' if res['passed'] else 'FAILED'}")
        write_atomic(out / "summary.txt", "\n".join(lines) + "\n")
        print("\n".join(lines))
        if res["counts"]["Violated"]:
            return EXIT_VIOLATED
        return EXIT_OK if res["passed"] else EXIT_INCONCLUSIVE
    fx, fy = build_field(cfg["fieldX"], "fieldX"), build_field(cfg["fieldY"], "fieldY")
    pay = build_payoff(cfg["payoff"], fx.dim)
    rep = cmp.compare_means(fx, fy, pay, cfg["x0"], float(cfg["T"]), ccfg)
    code = {cmp.Verdict.OrderedStrict: EXIT_OK, cmp.Verdict.Ordered: EXIT_OK,
            cmp.Verdict.Inconclusive: EXIT_INCONCLUSIVE, cmp.Verdict.Violated: EXIT_VIOLATED}[rep.verdict]
    if "pde_probes" in cfg:
        rep.pde_crosscheck = {
            tag: cmp.pde_crosscheck(f, pay, cfg["pde_probes"], float(cfg["T"]), ccfg.pde_mesh, ccfg)
            for tag, f in (("X", fx), ("Y", fy))
        }
        if code == EXIT_OK and not all(v["passed"] for v in rep.pde_crosscheck.values()):
            code = EXIT_INCONCLUSIVE
    text = rep.summary()
    if rep.pde_crosscheck:
        for tag, v in rep.pde_crosscheck.items():
            text += f"\npde cross-check {tag}: {'pass' if v['passed'] else 'FAIL'}"
    write_json(out / "report.json", rep.to_dict())
    write_atomic(out / "summary.txt", text + "\n")
    print(text)
    return code


def run_monotonicity(cfg, out: Path, threads):
    ccfg = _compare_config(cfg, threads)
    fld = build_field(cfg["field"], "field")
    res = {"payoff": cmp.monotonicity_report(fld, build_payoff(cfg["payoff"], fld.dim), cfg["x0"], cfg["times"], ccfg)}
    if "control_payoff" in cfg:
        ctrl = build_payoff(cfg["control_payoff"], fld.dim, "control_payoff")
        res["control"] = cmp.monotonicity_report(fld, ctrl, cfg["x0"], cfg["times"], ccfg)
    write_json(out / "monotonicity.json", res)
    rows = res["payoff"]
    write_csv(out / "values.csv", ["t", "mean", "std_error"],
              [rows["times"], [v["mean"] for v in rows["values"]], [v["std_error"] for v in rows["values"]]])
    lines = [f"{k}: {v['verdict']} (steps in SE: {[round(s['margin_in_se'], 1) for s in v['steps']]})"
             for k, v in res.items()]
    write_atomic(out / "summary.txt", "\n".join(lines) + "\n")
    print("\n".join(lines))
    verdicts = [v["verdict"] for v in res.values()]
    if "Decreasing" in verdicts:
        return EXIT_VIOLATED
    ok = res["payoff"]["verdict"] in ("StrictlyIncreasing", "Flat")
    if "control" in res:
        ok = ok and res["control"]["verdict"] == "Flat" and not res["control"]["strict_claimed"]
    return EXIT_OK if ok else EXIT_INCONCLUSIVE


def frozen_gaussian(coeffs, tau, d1, x2, y2):
    """Normal density with covariance ``2 tau a(y2)`` at ``(d1, x2 - y2)``."""
    a11, a12, a22 = coeffs(y2)
    det = a11 * a22 - a12 * a12
    d2 = x2 - y2
    q = (a22 * d1 * d1 - 2 * a12 * d1 * d2 + a11 * d2 * d2) / det
    return np.exp(-q / (4 * tau)) / (4 * np.pi * tau * np.sqrt(det))


def run_kernel_probe(cfg, out: Path, threads):
    from . import parametrix as px

    coeffs = px.Coefficients.from_field(build_coefficients(cfg["coefficients"]))
    q = cfg.get("quad", {})
    quad = px.QuadSpec(**q) if q else None
    mode = cfg.get("mode", "normalized")
    if mode not in px.MODES:
        raise ConfigError(f"mode: unknown kernel mode {mode!r}")
    M = int(cfg.get("M", 2))
    kern = px.build_kernel(coeffs, M, quad, mode)
    rng = np.random.default_rng(int(cfg.get("seed", 0)))
    n = int(cfg.get("n_probes", 100))
    lo, hi = cfg.get("probe_box", [-2.0, 2.0])
    tau = rng.uniform(0.05, 1.0, n)
    d1, x2, y2 = (rng.uniform(lo, hi, n) for _ in range(3))
    p = kern.p_rel(tau, d1, x2, y2)
    g = frozen_gaussian(coeffs, tau, d1, x2, y2) if mode == "normalized" else px.gauss_rel(coeffs, tau, d1, x2, y2, mode)
    write_csv(out / "kernel.csv", ["tau", "d1", "x2", "y2", "p", "gauss"], [tau, d1, x2, y2, p, g])
    res = {"M": M, "mode": mode, "constant": coeffs.constant, "max_abs_p_minus_gauss": float(np.max(np.abs(p - g))),
           "term_ratios": kern.term_ratios, "tail_estimate": kern.tail_estimate}
    if not coeffs.constant:
        k = min(n, 5)
        t_r = np.full(k, 0.1)
        res["residual_by_M"] = [float(np.max(np.abs(px.kernel_pde_residual(kern, t_r, d1[:k] * 0.3, x2[:k], y2[:k], M=m))))
                                for m in range(M + 1)]
        res["normalization_minus_one"] = float(px.kernel_normalization(kern, 0.1, [0.0, 0.0], n=16)[0] - 1.0)
    if "structure" in cfg:
        s = cfg["structure"]
        res["structure"] = px.convolution_structure_probe(kern, s.get("shifts", [0.5, -1.25, 3.0]),
                                                           int(s.get("n_probes", 1000)), int(cfg.get("seed", 0)))
    if "density" in cfg:
        d = cfg["density"]
        r = px.mc_density_check(kern, float(d.get("tau", 1.0)), d.get("z", [0.0, 0.0]), int(d.get("n_paths", 100_000)),
                                int(d.get("n_grid", 41)), seed=int(cfg.get("seed", 0)), threads=threads)
        kde, kv = r.pop("kde"), r.pop("kernel")
        res["density"] = r
        write_csv(out / "density.csv", ["i", "j", "kde", "kernel"],
                  [*np.indices(kde.shape), kde, kv])
    write_json(out / "kernel.json", res)
    lines = [f"{k}: {v}" for k, v in res.items() if not isinstance(v, dict)]
    write_atomic(out / "summary.txt", "\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def run_transform(cfg, out: Path, threads):
    from . import transform as tf

    a = build_coefficients(cfg["coefficients"])
    (l1, h1), (l2, h2) = cfg.get("K", [[-1.0, 1.0], [-1.0, 1.0]])
    K = Box((l1, l2), (h1, h2))
    sol = tf.solve_transform(a, K, int(cfg.get("mesh", 129)), float(cfg.get("kappa", 4.0)),
                             float(cfg.get("tilt", 0.05)))
    X1, X2 = np.meshgrid(sol.x1, sol.x2, indexing="ij")
    write_csv(out / "transform.csv", ["x1", "x2", "y1", "y2", "inside"], [X1, X2, sol.y1, sol.y2, sol.inside])
    res = {"residuals": sol.residuals.norms, "extension_ok": sol.residuals.extension_ok,
           "monotone": sol.monotone, "jacobian_ok": sol.jacobian_ok, "trace": sol.trace, "meta": sol.meta}
    write_json(out / "transform.json", res)
    lines = [f"{eq}: C0={v['C0']:.3g} C2={v['C2']:.3g}" for eq, v in sol.residuals.norms.items()]
    lines.append(f"monotone={sol.monotone} jacobian_ok={sol.jacobian_ok} extension_ok={sol.residuals.extension_ok}")
    write_atomic(out / "summary.txt", "\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK if sol.monotone and sol.jacobian_ok else EXIT_FAIL


def _damping(spec):
    from .mollify import GaussianDamping, PlateauDamping

    if spec is None:
        return None
    kind = spec.get("kind")
    try:
        if kind == "gaussian":
            return GaussianDamping(float(spec["eps"]))
        if kind == "plateau":
            return PlateauDamping(float(spec["lo"]), float(spec["hi"]), float(spec["margin"]))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"damping: {exc}") from exc
    raise ConfigError(f"damping.kind: unknown damping {kind!r}")


def run_mollify(cfg, out: Path, threads):
    from .mollify import SmoothPayoff, strict_convexity_certificate

    sp = SmoothPayoff(build_payoff(cfg["payoff"], 1), float(cfg.get("tau", 0.25)), _damping(cfg.get("damping")))
    x = np.asarray(cfg.get("points", list(np.linspace(-2, 2, 41))), dtype=float)
    v0, v1, v2 = sp.derivatives(x)
    write_csv(out / "mollify.csv", ["x", "eval", "d1", "d2"], [x, v0, v1, v2])
    res = {"tau": sp.tau}
    if "certificate_K" in cfg:
        m, ok = strict_convexity_certificate(sp, cfg["certificate_K"])
        res["certificate"] = {"min_second_deriv": m, "strictly_convex": ok, "K": cfg["certificate_K"]}
    write_json(out / "mollify.json", res)
    text = json.dumps(cmp._jsonable(res), sort_keys=True)
    write_atomic(out / "summary.txt", text + "\n")
    print(text)
    return EXIT_OK


def convexity_sweep(cfg) -> dict:
    """Solve the initial value problem and test directional convexity at every output time."""
    from .pde import MeshSpec, ParabolicProblem, affine_family, directional_convexity_check, solve_ivp

    a = build_coefficients(cfg["coefficients"])
    pay = build_payoff(cfg["payoff"], 2)
    (l1, h1), (l2, h2) = cfg.get("domain", [[-2.0, 2.0], [-2.0, 2.0]])
    times = [float(t) for t in cfg.get("times", [0.25, 0.5, 1.0])]
    c = pay.weights
    prob = ParabolicProblem(a, lambda x1, x2: pay(c[0] * x1 + c[1] * x2), Box((l1, l2), (h1, h2)), max(times),
                            name="convexity-sweep")
    n = int(cfg.get("mesh", 129))
    vs = solve_ivp(prob, MeshSpec(n, n), times=times)
    fam = affine_family(int(cfg.get("n_transforms", 32)), int(cfg.get("seed", 0)))
    tol = float(cfg.get("tol", 1e-6))
    reps = [directional_convexity_check(vs, t, fam, tol) for t in times]
    return {"times": times, "tol": tol, "n_transforms": len(fam),
            "reports": [{"t": r.t, "min": min(r.minima), "passed": r.passed, "minima": r.minima,
                         "witness": r.witnesses[int(np.argmin(r.minima))]} for r in reps],
            "convex": all(r.passed for r in reps)}


def run_convexity(cfg, out: Path, threads):
    res = convexity_sweep(cfg)
    ts = [r["t"] for r in res["reports"] for _ in r["minima"]]
    idx = [k for r in res["reports"] for k in range(len(r["minima"]))]
    mins = [m for r in res["reports"] for m in r["minima"]]
    write_csv(out / "convexity.csv", ["t", "transform", "min_second_difference"], [ts, idx, mins])
    write_json(out / "convexity.json", res)
    lines = [f"t={r['t']}: min={r['min']:.3g} {'convex' if r['passed'] else 'NOT convex'}" for r in res["reports"]]
    write_atomic(out / "summary.txt", "\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK if res["convex"] else EXIT_FAIL


RUNNERS = {
    "compare": run_compare,
    "monotonicity": run_monotonicity,
    "kernel-probe": run_kernel_probe,
    "transform-solve": run_transform,
    "mollify-probe": run_mollify,
    "convexity-sweep": run_convexity,
}


def run_scenario(cfg: dict, out, threads=None) -> int:
    out = Path(out)
    write_json(out / "config.json", cfg)
    return RUNNERS[cfg["kind"]](cfg, out, threads)


def build_parser():
    ap = argparse.ArgumentParser(prog="convorder", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        sp = sub.add_parser(kind, help=f"run a {kind} scenario")
        sp.add_argument("--config", required=True, help="JSON file or bundled config name")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default="convorder-out", help="output directory")
        sp.add_argument("--threads", type=int, default=None, help="worker threads (env CONVORDER_THREADS)")
    sub.add_parser("list", help="list bundled configs")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list":
        print("\n".join(bundled_names()))
        return EXIT_OK
    try:
        cfg = load_config(args.config)
        if cfg["kind"] != args.command:
            raise ConfigError(f"kind: config is a {cfg['kind']!r} scenario, not {args.command!r}")
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed: must be non-negative")
            cfg["seed"] = args.seed
        threads = args.threads
        if threads is None and os.environ.get("CONVORDER_THREADS"):
            threads = int(os.environ["CONVORDER_THREADS"])
        return run_scenario(cfg, args.out, threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
