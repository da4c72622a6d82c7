"""The fundamental solution and the flattening coordinate change for a = I + 0.1 P(x2).

Prints the size of successive terms of the Levy expansion, checks shift
invariance in the first variable, and solves for the coordinate change whose
transformed operator has constant coefficients on [-1, 1]^2.
"""
import numpy as np

from convorder.model import Box
from convorder.parametrix import Coefficients, build_kernel, convolution_structure_probe, kernel_normalization
from convorder.scenarios import perturbation
from convorder.transform import solve_transform


def main():
    a = perturbation(0.1)
    kern = build_kernel(Coefficients.from_field(a), M=2)
    tau = np.full(3, 0.1)
    d1, x2, y2 = np.array([0.0, 0.2, -0.3]), np.array([0.5, 0.0, 1.0]), np.array([0.5, 0.1, 0.8])
    for m, term in enumerate(kern.terms(tau, d1, x2, y2)):
        print(f"term {m}: max |.| = {np.max(np.abs(term)):.3e}")
    print(f"mass at t - s = 0.1: {kernel_normalization(kern, 0.1, [0.0, 0.0], n=16)[0]:.6f}")
    print("shift invariance:", convolution_structure_probe(kern, [0.5, -1.25], n_probes=50))

    sol = solve_transform(a, Box.cube(-1.0, 1.0, 2), n=65)
    for eq, v in sol.residuals.norms.items():
        print(f"{eq}: C0={v['C0']:.2e} C2={v['C2']:.2e}")
    print(f"monotone={sol.monotone} jacobian_ok={sol.jacobian_ok}")


if __name__ == "__main__":
    main()
