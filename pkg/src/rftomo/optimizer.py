"""Derivative-free search over truncated-Fourier pulses.

Two objectives are supported: the concurrence reached by a preparation pulse
acting on a known initial state, and the inverse norm ``||M^-1||`` of the
measurement matrix produced by a set of tomography pulses. Pulses are
parametrized without bounds: amplitudes through a softmax (so they stay on the
simplex), frequencies through a logistic map into the allowed band, phases
directly.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, softmax

from .model import MHZ, ControlledSystem
from .propagator import PropagationSpec, propagate, propagators
from .pulse import FourierPulse
from .quantum import check_density_matrix, concurrence, dagger
from .tomography import inverse_norm, matrix_rows

log = logging.getLogger(__name__)

OBJECTIVES = ("max-concurrence", "min-inverse-norm")


@dataclass(frozen=True)
class OptimizationSpec:
    objective: str = "max-concurrence"
    k: int = 10
    duration: float = 1.8e-6
    restarts: int = 20
    max_evals: int = 2000
    seed: int = 0
    freq_lo: float = 0.0
    freq_hi: float = 4 * MHZ

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if self.restarts < 1 or self.max_evals < 1 or self.k < 1:
            raise ValueError("restarts, max_evals and k must be >= 1")
        if not 0 <= self.freq_lo < self.freq_hi:
            raise ValueError("frequency band must satisfy 0 <= lo < hi")


@dataclass(frozen=True, eq=False)
class OptimizationResult:
    pulses: list
    achieved: float
    restart: int
    history: np.ndarray = field(repr=False)  # columns: eval, objective, best

    @property
    def pulse(self) -> FourierPulse:
        return self.pulses[0]

    def write_log(self, path, header_comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh)
            w.writerow(["eval", "objective", "best"])
            for e, o, b in self.history:
                w.writerow([int(e), repr(float(o)), repr(float(b))])


def params_to_pulse(theta: np.ndarray, spec: OptimizationSpec) -> FourierPulse:
    k = spec.k
    F = softmax(theta[:k])
    F[np.argmax(F)] += 1.0 - F.sum()
    nu = spec.freq_lo + (spec.freq_hi - spec.freq_lo) * expit(theta[k : 2 * k])
    return FourierPulse(F, nu, theta[2 * k : 3 * k], spec.duration)


def random_params(spec: OptimizationSpec, n_pulses: int, rng: np.random.Generator) -> np.ndarray:
    k = spec.k
    out = []
    for _ in range(n_pulses):
        logits = np.log(rng.standard_exponential(k))  # softmax of these is uniform on the simplex
        u = rng.uniform(1e-3, 1 - 1e-3, k)
        out += [logits, np.log(u / (1 - u)), rng.uniform(0, 2 * np.pi, k)]
    return np.concatenate(out)


def prepared_state(system: ControlledSystem, rho0: np.ndarray, pulse: FourierPulse, step: PropagationSpec):
    u = propagate(system, pulse, pulse.duration, step)
    rho = u @ rho0 @ u.conj().T
    return 0.5 * (rho + rho.conj().T)


def _concurrence_loss(system, rho0, spec, step):
    def loss(theta):
        return -concurrence(prepared_state(system, rho0, params_to_pulse(theta, spec), step))

    return loss


def _inverse_norm_loss(system, basis, spec, step, n_pulses):
    block = 3 * spec.k

    def loss(theta):
        pulses = [params_to_pulse(theta[i * block : (i + 1) * block], spec) for i in range(n_pulses)]
        u = propagators(system, pulses, [spec.duration], step)[:, 0]
        return inverse_norm(matrix_rows(system, u, basis))

    return loss


class _Budget(Exception):
    pass


def _local_search(loss: Callable, x0: np.ndarray, max_evals: int):
    """Nelder-Mead from ``x0``; returns (best_x, best_value, per-eval values)."""
    values: list[float] = []
    best = [np.inf, x0]

    def wrapped(x):
        if len(values) >= max_evals:
            raise _Budget
        v = float(loss(x))
        values.append(v)
        if v < best[0]:
            best[0], best[1] = v, np.array(x, copy=True)
        return v

    try:
        minimize(
            wrapped,
            x0,
            method="Nelder-Mead",
            options={"maxfev": max_evals, "maxiter": 10 * max_evals, "xatol": 1e-9, "fatol": 1e-12, "adaptive": True},
        )
    except _Budget:
        pass
    return best[1], best[0], values


def _run_restart(args):
    loss_factory, factory_args, x0, max_evals = args
    return _local_search(loss_factory(*factory_args), x0, max_evals)


def _multistart(loss_factory, factory_args, spec: OptimizationSpec, n_pulses: int, workers: int):
    seeds = np.random.SeedSequence(spec.seed).spawn(spec.restarts)
    starts = [random_params(spec, n_pulses, np.random.default_rng(s)) for s in seeds]
    jobs = [(loss_factory, factory_args, x0, spec.max_evals) for x0 in starts]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            runs = list(ex.map(_run_restart, jobs))
    else:
        runs = [_run_restart(j) for j in jobs]

    # deterministic merge: lowest loss, ties to the lowest restart index
    best_idx = min(range(len(runs)), key=lambda i: (runs[i][1], i))
    losses = np.concatenate([np.asarray(r[2]) for r in runs])
    history = np.column_stack([np.arange(1, len(losses) + 1), losses, np.minimum.accumulate(losses)])
    for i, r in enumerate(runs):
        log.debug("restart %d: best loss %.6g after %d evals", i, r[1], len(r[2]))
    return runs[best_idx][0], runs[best_idx][1], best_idx, history


def optimize_preparation(
    system: ControlledSystem,
    rho0,
    spec: OptimizationSpec = OptimizationSpec(),
    step: PropagationSpec = PropagationSpec(),
    workers: int = 1,
) -> OptimizationResult:
    """Search for the pulse whose evolution of ``rho0`` is most entangled."""
    if spec.objective != "max-concurrence":
        raise ValueError("optimize_preparation needs objective='max-concurrence'")
    if system.dim != 4:
        raise ValueError("concurrence is defined for two qubits only")
    rho0 = check_density_matrix(rho0)
    theta, best, idx, history = _multistart(_concurrence_loss, (system, rho0, spec, step), spec, 1, workers)
    # report concurrence itself: flip the sign of the loss columns
    history[:, 1:] *= -1
    return OptimizationResult([params_to_pulse(theta, spec)], -best, idx, history)


def optimize_tomography_pulse(
    system: ControlledSystem,
    spec: OptimizationSpec,
    basis: np.ndarray,
    step: PropagationSpec = PropagationSpec(),
    workers: int = 1,
) -> OptimizationResult:
    """Jointly shape ``d**2 - 1`` pulses to minimize ``||M^-1||`` at their final time."""
    if spec.objective != "min-inverse-norm":
        raise ValueError("optimize_tomography_pulse needs objective='min-inverse-norm'")
    n = system.dim**2 - 1
    theta, best, idx, history = _multistart(_inverse_norm_loss, (system, basis, spec, step, n), spec, n, workers)
    block = 3 * spec.k
    pulses = [params_to_pulse(theta[i * block : (i + 1) * block], spec) for i in range(n)]
    return OptimizationResult(pulses, best, idx, history)
