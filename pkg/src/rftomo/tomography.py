"""Measurement records, state reconstruction and record conditioning.

A record design is a set of pulses plus the sample times at which each pulse
is read out. Record ``j`` collects ``<M>`` at the ``j``-th sample time across
all pulses, so its matrix has one row per pulse:

    matrix[n, m] = Tr(U_n^dagger M U_n B_m),   U_n = propagator of pulse n at t_j
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import ControlledSystem
from .propagator import PropagationSpec, heisenberg_observables, propagators, sample_times as grid_times
from .pulse import FourierPulse, PulseSamplingSpec, sample_pulse_rng, sample_pulses
from .quantum import (
    check_density_matrix,
    concurrence,
    fidelity,
    from_bloch,
    hs_components,
    matrix_to_json,
    pauli_basis,
    to_bloch,
)

log = logging.getLogger(__name__)

SINGULAR_CAP = 1e12
INVERTIBLE_RTOL = 1e-6
NOISE_KINDS = ("none", "gaussian", "shots")


class InformationallyIncompleteError(ValueError):
    """The stacked measurement matrix does not determine the Bloch vector."""

    def __init__(self, null_dim: int, n_params: int):
        self.null_dim = null_dim
        super().__init__(
            f"measurement record is informationally incomplete: "
            f"null space of dimension {null_dim} out of {n_params} Bloch components"
        )


@dataclass(frozen=True)
class RecordDesign:
    pulses: tuple
    sample_times: np.ndarray
    step: PropagationSpec = PropagationSpec()

    def __post_init__(self):
        pulses = tuple(self.pulses)
        times = np.atleast_1d(np.asarray(self.sample_times, dtype=float))
        if not pulses:
            raise ValueError("a record design needs at least one pulse")
        if times.size == 0 or np.any(np.diff(times) <= 0) or times[0] < 0:
            raise ValueError("sample times must be non-empty, nonnegative and strictly increasing")
        shortest = min(p.duration for p in pulses)
        if times[-1] > shortest * (1 + 1e-9):
            raise ValueError(f"sample time {times[-1]} exceeds the shortest pulse ({shortest})")
        times.setflags(write=False)
        object.__setattr__(self, "pulses", pulses)
        object.__setattr__(self, "sample_times", times)

    def check_for(self, system: ControlledSystem) -> None:
        need = system.dim**2 - 1
        if len(self.pulses) != need:
            raise ValueError(f"a d={system.dim} design needs exactly {need} pulses, got {len(self.pulses)}")


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "none"
    sigma: float = 0.0
    shots: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "gaussian" and not self.sigma >= 0:
            raise ValueError("gaussian noise needs sigma >= 0")
        if self.kind == "shots" and self.shots < 1:
            raise ValueError("shot noise needs shots >= 1")

    def meta(self) -> dict:
        if self.kind == "gaussian":
            return {"kind": "gaussian", "sigma": self.sigma, "seed": self.seed}
        if self.kind == "shots":
            return {"kind": "shots", "shots": self.shots, "seed": self.seed}
        return {"kind": "none"}


@dataclass(frozen=True, eq=False)
class MeasurementRecord:
    y: np.ndarray
    matrix: np.ndarray
    sample_index: int = 0
    noise_meta: dict = field(default_factory=lambda: {"kind": "none"})

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or y.shape != (m.shape[0],):
            raise ValueError(f"record shapes disagree: y {y.shape}, matrix {m.shape}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "matrix", m)

    def to_json(self) -> dict:
        return {
            "sample_index": self.sample_index,
            "noise": self.noise_meta,
            "y": self.y.tolist(),
            "matrix": self.matrix.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MeasurementRecord":
        return cls(obj["y"], obj["matrix"], int(obj.get("sample_index", 0)), obj.get("noise", {"kind": "none"}))


@dataclass(frozen=True, eq=False)
class TomographyResult:
    rho: np.ndarray
    bloch: np.ndarray
    residual: float
    iterations: int
    method: str
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)

    def to_json(self, reference=None) -> dict:
        out = {
            "rho": matrix_to_json(self.rho),
            "bloch": self.bloch.tolist(),
            "residual": self.residual,
            "method": self.method,
            "iterations": self.iterations,
            "converged": self.converged,
        }
        if reference is not None:
            out["fidelity_vs_reference"] = fidelity(self.rho, reference)
        if self.rho.shape == (4, 4):
            out["concurrence"] = concurrence(self.rho)
        return out


# --------------------------------------------------------------------------
# forward model


def matrix_rows(system: ControlledSystem, u: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Basis components of ``U^dagger M U`` for every propagator in ``u``."""
    a = hs_components(heisenberg_observables(system, u), basis)
    if np.max(np.abs(a.imag), initial=0.0) > 1e-9:
        raise ArithmeticError("measurement matrix entries are not real")
    return a.real


def build_matrices(system: ControlledSystem, design: RecordDesign, basis: np.ndarray) -> np.ndarray:
    """Matrices for every sample time, shape ``(n_samples, n_pulses, d**2 - 1)``."""
    design.check_for(system)
    if basis.shape[-1] != system.dim:
        raise ValueError("basis and system dimensions differ")
    u = propagators(system, design.pulses, design.sample_times, design.step)
    return np.swapaxes(matrix_rows(system, u, basis), 0, 1)


def build_matrix(system: ControlledSystem, design: RecordDesign, basis: np.ndarray, sample_index: int) -> np.ndarray:
    if not 0 <= sample_index < len(design.sample_times):
        raise IndexError(f"sample_index {sample_index} out of range")
    sub = RecordDesign(design.pulses, design.sample_times[: sample_index + 1], design.step)
    return build_matrices(system, sub, basis)[sample_index]


def single_pulse_matrix(system: ControlledSystem, pulse: FourierPulse, times, basis, step=PropagationSpec()):
    """One long pulse read out at ``d**2 - 1`` times: row ``n`` belongs to ``times[n]``."""
    times = np.asarray(times, dtype=float)
    if len(times) != system.dim**2 - 1:
        raise ValueError(f"need {system.dim**2 - 1} sample times")
    return matrix_rows(system, propagators(system, pulse, times, step), basis)


def _apply_noise(y: np.ndarray, noise: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    if noise.kind == "gaussian":
        return y + rng.normal(0.0, noise.sigma, size=y.shape)
    if noise.kind == "shots":
        p = np.clip((1 + y) / 2, 0.0, 1.0)
        k = rng.binomial(noise.shots, p)
        return 2 * k / noise.shots - 1
    return y.copy()


def _check_noise(system: ControlledSystem, noise: NoiseSpec) -> None:
    if noise.kind == "shots":
        ev = np.linalg.eigvalsh(system.observable)
        if not np.allclose(np.abs(ev), 1.0, atol=1e-9):
            raise ValueError("shot noise needs an observable with spectrum {-1, +1}")


def simulate_records(
    system: ControlledSystem,
    design: RecordDesign,
    rho,
    basis: np.ndarray,
    noise: NoiseSpec = NoiseSpec(),
    matrices: np.ndarray | None = None,
) -> list[MeasurementRecord]:
    """One record per sample time; noise drawn from a single stream seeded by ``noise.seed``."""
    rho = check_density_matrix(rho)
    _check_noise(system, noise)
    r = to_bloch(rho, basis)
    mats = build_matrices(system, design, basis) if matrices is None else matrices
    rng = np.random.default_rng(noise.seed)
    return [MeasurementRecord(_apply_noise(m @ r, noise, rng), m, j, noise.meta()) for j, m in enumerate(mats)]


def simulate_record(system, design, rho, basis, sample_index: int, noise: NoiseSpec = NoiseSpec()):
    rho = check_density_matrix(rho)
    _check_noise(system, noise)
    m = build_matrix(system, design, basis, sample_index)
    y = _apply_noise(m @ to_bloch(rho, basis), noise, np.random.default_rng(noise.seed))
    return MeasurementRecord(y, m, sample_index, noise.meta())


# --------------------------------------------------------------------------
# reconstruction


def project_to_physical(a) -> np.ndarray:
    """Nearest (Frobenius) unit-trace PSD matrix to a Hermitian matrix.

    Eigenvalues are projected onto the probability simplex: negatives are
    clipped and the deficit is shared equally among the survivors.
    """
    a = np.asarray(a, dtype=complex)
    a = 0.5 * (a + a.conj().T)
    w, v = np.linalg.eigh(a)
    mu = np.sort(w)[::-1]
    css = np.cumsum(mu)
    idx = np.arange(1, len(mu) + 1)
    k = idx[mu - (css - 1) / idx > 0][-1]
    theta = (css[k - 1] - 1) / k
    lam = np.clip(w - theta, 0.0, None)
    rho = (v * lam) @ v.conj().T
    return 0.5 * (rho + rho.conj().T)


def _stack(records: Sequence[MeasurementRecord]) -> tuple[np.ndarray, np.ndarray]:
    if not records:
        raise ValueError("need at least one measurement record")
    a = np.vstack([rec.matrix for rec in records])
    y = np.concatenate([rec.y for rec in records])
    return a, y


def stacked_rank(a: np.ndarray, rtol: float = 1e-10) -> int:
    s = np.linalg.svd(a, compute_uv=False)
    return int(np.sum(s > rtol * s[0])) if s.size and s[0] > 0 else 0


def _solve_linear(a: np.ndarray, y: np.ndarray) -> np.ndarray:
    n = a.shape[1]
    rank = stacked_rank(a)
    if rank < n:
        raise InformationallyIncompleteError(n - rank, n)
    r, *_ = np.linalg.lstsq(a, y, rcond=None)
    return r


def reconstruct_linear(records: Sequence[MeasurementRecord], basis: np.ndarray) -> TomographyResult:
    """Least-squares inversion of the stacked records, then projection to a physical state."""
    a, y = _stack(records)
    if a.shape[1] != basis.shape[0]:
        raise ValueError("record matrices and basis disagree on the number of Bloch components")
    r = _solve_linear(a, y)
    raw, physical = from_bloch(r, basis)
    rho = project_to_physical(raw)
    bloch = to_bloch(rho, basis)
    res = float(np.sum((y - a @ bloch) ** 2))
    return TomographyResult(
        rho, bloch, res, 0, "linear-inversion-projected", True, {"unprojected_bloch": r, "raw_physical": physical}
    )


@dataclass(frozen=True)
class SolverOptions:
    gtol: float = 1e-9
    max_iters: int = 20000
    armijo: float = 1e-4
    shrink: float = 0.5
    nonmonotone: int = 20  # Armijo reference = max of the last this-many objective values


def _tril(d: int):
    return np.tril_indices(d, -1)


def params_to_factor(x: np.ndarray, d: int) -> np.ndarray:
    """Lower-triangular ``T`` from ``d**2`` reals: real diagonal, complex strict lower part."""
    t = np.zeros((d, d), dtype=complex)
    t[np.diag_indices(d)] = x[:d]
    m = d * (d - 1) // 2
    t[_tril(d)] = x[d : d + m] + 1j * x[d + m :]
    return t


def factor_to_params(t: np.ndarray) -> np.ndarray:
    d = t.shape[0]
    low = t[_tril(d)]
    return np.concatenate([np.diag(t).real, low.real, low.imag])


def factor_from_state(rho: np.ndarray, mix: float = 1e-10) -> np.ndarray:
    """Lower-triangular ``T`` with ``T^dagger T = rho`` (QL factorization of a square root).

    A tiny admixture of the identity keeps every row of ``T`` nonzero so the
    descent can still raise the rank of the estimate.
    """
    d = rho.shape[0]
    rho = (1 - mix) * rho + mix * np.eye(d) / d
    w, v = np.linalg.eigh(rho)
    root = np.sqrt(np.clip(w, 0.0, None))[:, None] * v.conj().T  # root^dagger root = rho
    j = np.eye(d)[::-1]
    _, upper = np.linalg.qr(j @ root @ j)
    t = j @ upper @ j
    diag = np.diag(t)
    phase = np.where(np.abs(diag) > 0, diag / np.where(np.abs(diag) > 0, np.abs(diag), 1.0), 1.0)
    return t / phase[:, None]


def state_from_params(x: np.ndarray, d: int) -> np.ndarray:
    t = params_to_factor(x, d)
    a = t.conj().T @ t
    return a / np.trace(a).real


def objective_and_gradient(x: np.ndarray, mats: np.ndarray, ys: np.ndarray, basis: np.ndarray):
    """Stacked least-squares objective ``sum_j |y_j - M_j r(T)|^2`` and its gradient in ``x``."""
    d = basis.shape[-1]
    t = params_to_factor(x, d)
    a = t.conj().T @ t
    tau = np.trace(a).real
    rho = a / tau
    r = hs_components(rho, basis).real
    res = ys - mats @ r
    val = float(np.sum(res**2))
    g_r = -2.0 * np.einsum("jnm,jn->m", mats, res)
    g = np.tensordot(g_r, basis, axes=1)
    g_t = (g - np.trace(rho @ g).real * np.eye(d)) / tau
    p = t @ g_t
    m = d * (d - 1) // 2
    grad = np.empty(d * d)
    grad[:d] = 2 * np.diag(p).real
    low = p[_tril(d)]
    grad[d : d + m] = 2 * low.real
    grad[d + m :] = 2 * low.imag
    return val, grad


def reconstruct_constrained(
    records: Sequence[MeasurementRecord],
    basis: np.ndarray,
    opts: SolverOptions = SolverOptions(),
    initial: np.ndarray | None = None,
) -> TomographyResult:
    """Least squares over physical states via ``rho = T^dagger T / Tr(T^dagger T)``.

    Gradient descent with Barzilai-Borwein trial steps and a non-monotone
    Armijo backtracking line search. The factor is renormalized to unit Frobenius norm after each
    step, which leaves ``rho`` unchanged.
    """
    mats = np.array([rec.matrix for rec in records])
    ys = np.array([rec.y for rec in records])
    if mats.ndim != 3 or mats.shape[-1] != basis.shape[0]:
        raise ValueError("records must share one shape matching the basis")
    d = basis.shape[-1]

    if initial is None:
        try:
            initial = reconstruct_linear(records, basis).rho
            init_method = "linear"
        except InformationallyIncompleteError:
            initial = np.eye(d, dtype=complex) / d
            init_method = "maximally-mixed"
    else:
        initial = check_density_matrix(initial)
        init_method = "given"
    x = factor_to_params(factor_from_state(initial))
    x /= np.linalg.norm(x)

    val, grad = objective_and_gradient(x, mats, ys, basis)
    step = 1.0 / max(np.linalg.norm(grad), 1.0)
    history = [val]
    converged = False
    it = 0
    for it in range(1, opts.max_iters + 1):
        gnorm = np.linalg.norm(grad)
        if gnorm < opts.gtol:
            converged = True
            it -= 1
            break
        while True:
            x_new = x - step * grad
            x_new /= np.linalg.norm(x_new)
            val_new, grad_new = objective_and_gradient(x_new, mats, ys, basis)
            ref = max(history[-opts.nonmonotone :])
            if val_new <= ref - opts.armijo * step * gnorm**2 or step < 1e-20:
                break
            step *= opts.shrink
        s = x_new - x
        g_diff = grad_new - grad
        x, val, grad = x_new, val_new, grad_new
        history.append(val)
        sy = float(s @ g_diff)
        step = float(s @ s) / sy if sy > 0 else step * 2.0
        if val == 0.0:
            converged = True
            break
    else:
        converged = np.linalg.norm(grad) < opts.gtol
        if not converged:
            log.warning("constrained reconstruction stopped at max_iters=%d (|grad|=%.3g)", opts.max_iters, np.linalg.norm(grad))

    rho = state_from_params(x, d)
    rho = 0.5 * (rho + rho.conj().T)
    return TomographyResult(
        rho,
        to_bloch(rho, basis),
        val,
        it,
        "factor-parametrized",
        bool(converged),
        {"grad_norm": float(np.linalg.norm(grad)), "init": init_method},
    )


# --------------------------------------------------------------------------
# conditioning and the experimental protocol


def inverse_norm(matrix: np.ndarray) -> float:
    """Spectral norm of the inverse, ``1 / sigma_min``, capped at SINGULAR_CAP."""
    s = np.linalg.svd(matrix, compute_uv=False)
    if s[-1] <= s[0] / SINGULAR_CAP or s[-1] * SINGULAR_CAP <= 1.0:
        return SINGULAR_CAP
    return float(1.0 / s[-1])


def is_informationally_complete(matrix: np.ndarray, rtol: float = INVERTIBLE_RTOL) -> bool:
    s = np.linalg.svd(matrix, compute_uv=False)
    return bool(s[-1] > rtol * s[0])


@dataclass(frozen=True)
class ConditioningRow:
    duration: float
    mean_inv_norm: float
    std_inv_norm: float
    mean_log_inv_norm: float
    std_log_inv_norm: float
    n_finite: int
    singular_count: int

    @property
    def sem_log(self) -> float:
        return self.std_log_inv_norm / np.sqrt(self.n_finite) if self.n_finite > 1 else float("inf")


def random_design_matrices(
    system: ControlledSystem,
    pulse_spec: PulseSamplingSpec,
    duration: float,
    realizations: int,
    basis: np.ndarray,
    step: PropagationSpec = PropagationSpec(),
    rng: np.random.Generator | None = None,
    chunk: int = 8,
) -> np.ndarray:
    """Matrices at ``t = duration`` for ``realizations`` independent random pulse sets."""
    rng = np.random.default_rng(pulse_spec.seed) if rng is None else rng
    n = system.dim**2 - 1
    out = np.empty((realizations, n, basis.shape[0]))
    length = max(duration, step.step)
    for lo in range(0, realizations, chunk):
        hi = min(lo + chunk, realizations)
        pulses = [sample_pulse_rng(pulse_spec, length, rng) for _ in range((hi - lo) * n)]
        if duration == 0.0:
            u = np.broadcast_to(np.eye(system.dim, dtype=complex), (len(pulses), system.dim, system.dim))
        else:
            u = propagators(system, pulses, [duration], step)[:, 0]
        out[lo:hi] = matrix_rows(system, u, basis).reshape(hi - lo, n, -1)
    return out


def conditioning_study(
    system: ControlledSystem,
    pulse_spec: PulseSamplingSpec,
    durations: Sequence[float],
    realizations: int,
    basis: np.ndarray,
    step: PropagationSpec = PropagationSpec(),
    threads: int = 1,
) -> list[ConditioningRow]:
    """Statistics of ``||M^-1||`` versus pulse length over random pulse sets.

    Every duration draws from its own stream ``SeedSequence([seed, index])``
    so results do not depend on thread scheduling.
    """
    if realizations < 1:
        raise ValueError("realizations must be >= 1")

    def one(item):
        i, dur = item
        rng = np.random.default_rng(np.random.SeedSequence([pulse_spec.seed, i]))
        mats = random_design_matrices(system, pulse_spec, dur, realizations, basis, step, rng)
        norms = np.array([inverse_norm(m) for m in mats])
        finite = norms[norms < SINGULAR_CAP]
        if finite.size:
            logs = np.log(finite)
            stats = (finite.mean(), finite.std(ddof=1) if finite.size > 1 else 0.0, logs.mean(),
                     logs.std(ddof=1) if finite.size > 1 else 0.0)
        else:
            stats = (SINGULAR_CAP, 0.0, float(np.log(SINGULAR_CAP)), 0.0)
        return ConditioningRow(float(dur), *map(float, stats), int(finite.size), int(norms.size - finite.size))

    items = list(enumerate(durations))
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(one, items))
    return [one(it) for it in items]


def write_conditioning_csv(rows: Sequence[ConditioningRow], path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(["duration_s", "mean_log_inv_norm", "std", "singular_count", "mean_inv_norm", "std_inv_norm"])
        for r in rows:
            w.writerow([r.duration, r.mean_log_inv_norm, r.std_log_inv_norm, r.singular_count,
                        r.mean_inv_norm, r.std_inv_norm])


@dataclass(frozen=True)
class Protocol:
    """Record-stacking constants of the NV experiment."""

    num_pulses: int | None = None  # d**2 - 1 when None
    duration: float = 0.7e-6
    spacing: float = 20e-9
    last_k: int = 10
    step: PropagationSpec = PropagationSpec()

    def design_times(self) -> np.ndarray:
        t = grid_times(self.duration, self.spacing)
        if self.last_k > len(t):
            raise ValueError(f"last_k={self.last_k} exceeds the {len(t)} available sample points")
        return t[-self.last_k :]


def protocol_records(
    system: ControlledSystem,
    rho,
    pulse_spec: PulseSamplingSpec,
    noise: NoiseSpec = NoiseSpec(),
    protocol: Protocol = Protocol(),
    basis: np.ndarray | None = None,
):
    d = system.dim
    basis = pauli_basis(int(round(np.log2(d)))) if basis is None else basis
    n = protocol.num_pulses or d * d - 1
    pulses = sample_pulses(pulse_spec, protocol.duration, n)
    design = RecordDesign(pulses, protocol.design_times(), protocol.step)
    return design, simulate_records(system, design, rho, basis, noise)


def experiment_protocol(
    system: ControlledSystem,
    rho,
    pulse_spec: PulseSamplingSpec,
    noise: NoiseSpec = NoiseSpec(),
    protocol: Protocol = Protocol(),
    opts: SolverOptions = SolverOptions(),
    basis: np.ndarray | None = None,
) -> TomographyResult:
    """Sample pulses, simulate the last ``last_k`` readouts of each, reconstruct."""
    if system.dim != 4:
        raise ValueError("the experimental protocol is defined for the two-qubit (d=4) system")
    basis = pauli_basis(2) if basis is None else basis
    _, records = protocol_records(system, rho, pulse_spec, noise, protocol, basis)
    return reconstruct_constrained(records, basis, opts)


def records_to_json(records: Sequence[MeasurementRecord], **meta) -> str:
    return json.dumps({**meta, "records": [r.to_json() for r in records]}, indent=1)


def write_records_csv(records: Sequence[MeasurementRecord], path, header_comment: str | None = None) -> None:
    """One line per matrix row: ``sample_index, row, y, m_1 .. m_P`` (row-major)."""
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        n_cols = records[0].matrix.shape[1] if records else 0
        w.writerow(["sample_index", "row", "y", *(f"m_{i + 1}" for i in range(n_cols))])
        for rec in records:
            for n, (y, row) in enumerate(zip(rec.y, rec.matrix)):
                w.writerow([rec.sample_index, n, repr(float(y)), *(repr(float(v)) for v in row)])


def records_from_json(text: str) -> list[MeasurementRecord]:
    return [MeasurementRecord.from_json(o) for o in json.loads(text)["records"]]
