"""Larger volatility gives a larger expected convex payoff.

Couples a diffusion with sigma = 1 and one with sigma = 2 through the same
Brownian increments, compares E f for f(z) = z^2 and f(z) = |z|, and then shows
that the mollified |z| value grows strictly in time while a linear payoff stays flat.
"""
import numpy as np

from convorder.compare import CompareConfig, compare_means, monotonicity_report
from convorder.model import ConvexPayoff, constant_field
from convorder.scenarios import trig_perturbed_field
from convorder.mollify import SmoothPayoff


def main():
    cfg = CompareConfig(n_paths=50_000, n_steps=128)
    fx, fy = constant_field([[1.0]]), constant_field([[2.0]])
    for name, f in (("z^2", lambda z: z * z), ("|z|", np.abs)):
        rep = compare_means(fx, fy, ConvexPayoff(f, [1.0]), [0.0], 1.0, cfg)
        m = rep.mc
        print(f"{name:4s} E_X={m['meanX']['mean']:.4f} E_Y={m['meanY']['mean']:.4f} "
              f"diff={m['diff']:.4f} +- {m['diff_se']:.4f} -> {rep.verdict.value}")

    fld = trig_perturbed_field(0.1)
    smooth = SmoothPayoff(ConvexPayoff(np.abs, [1.0, 1.0]), 0.05).as_payoff(-12.0, 12.0)
    times = [0.25, 0.5, 0.75, 1.0]
    for label, pay in (("mollified |z|", smooth), ("linear", ConvexPayoff(lambda z: z, [1.0, 1.0]))):
        r = monotonicity_report(fld, pay, [0.0, 0.0], times, cfg)
        vals = " ".join(f"{v['mean']:.4f}" for v in r["values"])
        print(f"{label:14s} values at {times}: {vals} -> {r['verdict']}")


if __name__ == "__main__":
    main()
