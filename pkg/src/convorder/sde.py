"""Driftless Ito diffusions: Euler-Maruyama / Milstein paths and mean estimates.

Noise is generated in fixed-size path blocks; block ``b`` draws from a Philox
(counter-based) stream keyed by ``SeedSequence([seed, b])``. Results are
therefore independent of how blocks are distributed over worker threads.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .model import ConvexPayoff, VolatilityField

BLOCK_SIZE = 8192
SCHEMES = ("EulerMaruyama", "Milstein")


class SimulationError(RuntimeError):
    pass


class MeanExistenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class PathEnsemble:
    n_paths: int
    n_steps: int
    horizon: float
    dim: int
    terminal_states: np.ndarray
    seed: int
    scheme: str
    snapshots: dict = field(default_factory=dict)

    def states_at(self, t: Optional[float] = None) -> np.ndarray:
        if t is None or np.isclose(t, self.horizon):
            return self.terminal_states
        for key, val in self.snapshots.items():
            if np.isclose(key, t):
                return val
        raise KeyError(f"no snapshot recorded at t={t}")

    def meta(self) -> dict:
        return {
            "seed": int(self.seed),
            "n_steps": int(self.n_steps),
            "n_paths": int(self.n_paths),
            "horizon": float(self.horizon),
            "dim": int(self.dim),
            "scheme": self.scheme,
            "block_size": BLOCK_SIZE,
        }

    def to_csv(self, path, meta_path=None):
        """One row per path, one column per component; JSON sidecar with the run meta."""
        header = ",".join(f"x{i + 1}" for i in range(self.dim))
        np.savetxt(path, self.terminal_states, delimiter=",", header=header, comments="", fmt="%.17g")
        meta_path = meta_path or (str(path) + ".json")
        with open(meta_path, "w") as fh:
            json.dump(self.meta(), fh, indent=2, sort_keys=True)
        return meta_path


@dataclass(frozen=True)
class MeanEstimate:
    mean: float
    std_error: float
    n_paths: int


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(block)])))


def _diag_sigma_slope(field: VolatilityField, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """d sigma_ii / d x_i by central differences, shape (m, n)."""
    out = np.empty_like(x)
    for i in range(x.shape[1]):
        xp = x.copy()
        xm = x.copy()
        xp[:, i] += h
        xm[:, i] -= h
        out[:, i] = (field.sigma(xp)[:, i, i] - field.sigma(xm)[:, i, i]) / (2.0 * h)
    return out


def _step(field, x, dw, dt, scheme):
    sig = field.sigma(x)
    if field.diagonal:
        d = np.diagonal(sig, axis1=-2, axis2=-1)
        inc = d * dw
        if scheme == "Milstein":
            inc = inc + 0.5 * d * _diag_sigma_slope(field, x) * (dw * dw - dt)
        return x + inc
    return x + np.einsum("pij,pj->pi", sig, dw)


def _run_block(fields, x0, T, n_steps, nb, seed, block, scheme, record):
    rng = _block_rng(seed, block)
    dt = T / n_steps
    sq = np.sqrt(dt)
    dim = x0.size
    xs = [np.tile(x0, (nb, 1)) for _ in fields]
    snaps = [dict() for _ in fields]
    for k in range(n_steps):
        dw = rng.standard_normal((nb, dim)) * sq
        for j, fld in enumerate(fields):
            xs[j] = _step(fld, xs[j], dw, dt, scheme)
        if (k + 1) in record:
            for j in range(len(fields)):
                snaps[j][k + 1] = xs[j].copy()
        if (k % 16 == 15 or k == n_steps - 1) and not all(np.all(np.isfinite(x)) for x in xs):
            raise SimulationError(
                f"non-finite state in block {block} at step {k + 1}; "
                "the volatility field is probably unbounded"
            )
    return xs, snaps


def _thread_count(threads):
    if threads is None:
        threads = int(os.environ.get("CONVORDER_THREADS", "1") or 1)
    return max(1, int(threads))


def _simulate(fields, x0, T, n_steps, n_paths, seed, scheme, threads=None, record_times=()):
    if T <= 0:
        raise ValueError("T must be positive")
    if n_steps < 1 or n_paths < 1:
        raise ValueError("n_steps and n_paths must be >= 1")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    for fld in fields:
        if fld.dim != x0.size:
            raise ValueError("x0 and field dimensions differ")
        if scheme == "Milstein" and not fld.diagonal:
            raise ValueError("Milstein is only offered for diagonal volatility")
    record = {}
    for t in record_times:
        k = int(round(t / T * n_steps))
        if not np.isclose(k * T / n_steps, t) or k < 1:
            raise ValueError(f"record time {t} is not on the step grid")
        record[k] = float(t)
    sizes = [BLOCK_SIZE] * (n_paths // BLOCK_SIZE)
    if n_paths % BLOCK_SIZE:
        sizes.append(n_paths % BLOCK_SIZE)

    def work(b):
        return _run_block(fields, x0, T, n_steps, sizes[b], seed, b, scheme, record)

    nthreads = _thread_count(threads)
    if nthreads == 1 or len(sizes) == 1:
        results = [work(b) for b in range(len(sizes))]
    else:
        with ThreadPoolExecutor(nthreads) as pool:
            results = list(pool.map(work, range(len(sizes))))

    ensembles = []
    for j in range(len(fields)):
        term = np.concatenate([r[0][j] for r in results])
        snaps = {
            record[k]: np.concatenate([r[1][j][k] for r in results]) for k in record
        }
        ensembles.append(
            PathEnsemble(n_paths, n_steps, float(T), x0.size, term, int(seed), scheme, snaps)
        )
    return ensembles


def simulate_paths(
    field: VolatilityField,
    x0,
    T: float,
    n_steps: int = 256,
    n_paths: int = 100_000,
    seed: int = 0,
    scheme: str = "EulerMaruyama",
    threads: Optional[int] = None,
    record_times: Sequence[float] = (),
) -> PathEnsemble:
    """Simulate ``X_{k+1} = X_k + sigma(X_k) dW_k`` and return the terminal states."""
    return _simulate([field], x0, T, n_steps, n_paths, seed, scheme, threads, record_times)[0]


def coupled_paths(
    field_x: VolatilityField,
    field_y: VolatilityField,
    x0,
    T: float,
    n_steps: int = 256,
    n_paths: int = 100_000,
    seed: int = 0,
    scheme: str = "EulerMaruyama",
    threads: Optional[int] = None,
    record_times: Sequence[float] = (),
):
    """Both diffusions driven by the same Brownian increments (common random numbers)."""
    if field_x.dim != field_y.dim:
        raise ValueError("fields must have the same dimension")
    ex, ey = _simulate([field_x, field_y], x0, T, n_steps, n_paths, seed, scheme, threads, record_times)
    return ex, ey


def payoff_samples(ensemble: PathEnsemble, payoff: ConvexPayoff, t: Optional[float] = None):
    if payoff.dim != ensemble.dim:
        raise ValueError("payoff weights and ensemble dimension differ")
    with np.errstate(over="ignore", invalid="ignore"):
        vals = payoff.of_state(ensemble.states_at(t))
    bad = ~np.isfinite(vals)
    if np.any(bad):
        idx = int(np.flatnonzero(bad)[0])
        raise MeanExistenceError(
            f"payoff is non-finite at path {idx} (state {ensemble.states_at(t)[idx]}); "
            "growth condition violated or mean does not exist"
        )
    return vals


def estimate(samples) -> MeanEstimate:
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    se = float(samples.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return MeanEstimate(float(samples.mean()), se, n)


def mc_mean(ensemble: PathEnsemble, payoff: ConvexPayoff, t: Optional[float] = None) -> MeanEstimate:
    """Sample mean of ``f(sum_i c_i X_i(t))`` and its standard error."""
    return estimate(payoff_samples(ensemble, payoff, t))
