"""Time-ordered propagation under ``H(t) = H0 + f(t) Hc``.

The evolution is split into slices of width ``step`` laid on a grid that
starts at the propagation origin. Each slice contributes ``exp(-i w H(t_mid))``
with ``f`` sampled at the slice midpoint; a requested time that falls between
grid points is reached with one extra partial slice of exactly the missing
width. Partial slices are only ever appended at the end, so the propagator
reported at ``t`` uses the same slices whether it is computed alone or as part
of a longer trace (the products agree to roundoff).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import ControlledSystem
from .pulse import FourierPulse, evaluate
from .quantum import as_square, check_density_matrix, dagger

DEFAULT_STEP = 1e-9
SCHEMES = ("midpoint",)
_SNAP = 1e-9  # relative slack when snapping times onto the slice grid


@dataclass(frozen=True)
class PropagationSpec:
    step: float = DEFAULT_STEP
    scheme: str = "midpoint"

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError(f"step must be positive, got {self.step}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")


@dataclass(frozen=True, eq=False)
class TimeTrace:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if len(self.times) != len(self.values):
            raise ValueError("times and values differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trace times must be strictly increasing")

    def to_csv(self, path, header_comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh)
            w.writerow(["t_s", "expectation"])
            for t, v in zip(self.times, self.values):
                w.writerow([repr(float(t)), repr(float(v))])


def expm_batch(h: np.ndarray, widths) -> np.ndarray:
    """``exp(-i w_k H_k)`` for a stack of Hermitian matrices."""
    w, v = np.linalg.eigh(h)
    phase = np.exp(-1j * np.asarray(widths)[..., None] * w)
    return (v * phase[..., None, :]) @ dagger(v)


def ordered_product(mats: np.ndarray) -> np.ndarray:
    """``mats[..., n-1, :, :] @ ... @ mats[..., 0, :, :]`` by pairwise reduction."""
    n = mats.shape[-3]
    if n == 0:
        d = mats.shape[-1]
        return np.broadcast_to(np.eye(d, dtype=complex), mats.shape[:-3] + (d, d)).copy()
    while n > 1:
        tail = mats[..., n - 1 :, :, :] if n % 2 else None
        even = n - (n % 2)
        mats = mats[..., 1:even:2, :, :] @ mats[..., 0:even:2, :, :]
        if tail is not None:
            mats = np.concatenate([mats, tail], axis=-3)
        n = mats.shape[-3]
    return mats[..., 0, :, :]


def _grid(times: np.ndarray, start: float, h: float):
    rel = times - start
    k = np.floor(rel / h + _SNAP).astype(np.int64)
    rem = rel - k * h
    rem[rem < _SNAP * h] = 0.0
    return k, rem


def _check_times(times, start: float) -> np.ndarray:
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if times.ndim != 1:
        raise ValueError("times must be one-dimensional")
    if np.any(times < start):
        raise ValueError(f"times must be >= {start}")
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    return times


def propagators(
    system: ControlledSystem,
    pulses: FourierPulse | Sequence[FourierPulse],
    times,
    spec: PropagationSpec = PropagationSpec(),
    *,
    start: float = 0.0,
    initial: np.ndarray | None = None,
) -> np.ndarray:
    """Propagators ``U_t`` at every requested time for one pulse or a batch.

    Returns shape ``(n_times, d, d)`` for a single pulse, or
    ``(n_pulses, n_times, d, d)`` for a sequence of pulses. ``initial`` is the
    propagator already accumulated at ``start``.
    """
    single = isinstance(pulses, FourierPulse)
    plist = [pulses] if single else list(pulses)
    times = _check_times(times, start)
    h = spec.step
    d = system.dim
    k, rem = _grid(times, start, h)

    nfull = int(k.max())
    mids = start + (np.arange(nfull) + 0.5) * h
    fvals = np.array([evaluate(p, mids) for p in plist]).reshape(len(plist), nfull)
    full = expm_batch(system.h0 + fvals[..., None, None] * system.hc, h)

    u = np.broadcast_to(np.eye(d, dtype=complex), (len(plist), d, d)).copy()
    if initial is not None:
        u = u @ as_square(initial, "initial")
    grid_u = np.empty((len(plist), len(times), d, d), dtype=complex)
    prev = 0
    for i, ki in enumerate(k):
        if ki > prev:
            u = ordered_product(full[:, prev:ki]) @ u
            prev = ki
        grid_u[:, i] = u

    out = grid_u
    part = np.nonzero(rem > 0)[0]
    if part.size:
        tm = start + k[part] * h + rem[part] / 2
        fp = np.array([evaluate(p, tm) for p in plist]).reshape(len(plist), part.size)
        ep = expm_batch(system.h0 + fp[..., None, None] * system.hc, rem[part])
        out = grid_u.copy()
        out[:, part] = ep @ grid_u[:, part]
    return out[0] if single else out


def propagate(
    system: ControlledSystem,
    pulse: FourierPulse,
    t: float,
    spec: PropagationSpec = PropagationSpec(),
    *,
    start: float = 0.0,
    initial: np.ndarray | None = None,
) -> np.ndarray:
    """Time-ordered propagator from ``start`` to ``t``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t > pulse.duration * (1 + _SNAP):
        raise ValueError(f"t={t} is beyond the pulse duration {pulse.duration}")
    if t == start:
        d = system.dim
        return np.eye(d, dtype=complex) if initial is None else as_square(initial).copy()
    return propagators(system, pulse, [t], spec, start=start, initial=initial)[0]


def heisenberg_observables(system: ControlledSystem, u: np.ndarray) -> np.ndarray:
    """``U^dagger M U`` for a (batched) propagator."""
    return dagger(u) @ system.observable @ u


def expectation_trace(
    system: ControlledSystem,
    pulse: FourierPulse,
    rho,
    times,
    spec: PropagationSpec = PropagationSpec(),
) -> TimeTrace:
    """``<M>_t = Tr(U_t^dagger M U_t rho)`` on a sorted time grid."""
    rho = check_density_matrix(rho)
    times = _check_times(times, 0.0)
    if times[-1] > pulse.duration * (1 + _SNAP):
        raise ValueError("trace times extend beyond the pulse duration")
    u = propagators(system, pulse, times, spec)
    vals = np.einsum("nij,ji->n", heisenberg_observables(system, u), rho)
    if np.max(np.abs(vals.imag), initial=0.0) > 1e-9:
        raise ArithmeticError("expectation values picked up an imaginary part")
    return TimeTrace(times, vals.real.copy())


def sample_times(duration: float, spacing: float) -> np.ndarray:
    """Grid ``spacing, 2*spacing, ..., duration`` (the last point is exactly ``duration``)."""
    n = int(np.floor(duration / spacing + _SNAP))
    t = np.arange(1, n + 1) * spacing
    if n and abs(t[-1] - duration) <= _SNAP * spacing:
        t[-1] = duration
    elif not n or t[-1] < duration:
        t = np.append(t, duration)
    return t
