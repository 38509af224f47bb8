"""Truncated-Fourier control pulses ``f(t) = sum_j F_j cos(nu_j t + phi_j)``."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import MHZ

AMPLITUDE_LAWS = ("uniform-simplex",)


@dataclass(frozen=True, eq=False)
class FourierPulse:
    amplitudes: np.ndarray  # F_j, dimensionless, sum to 1
    frequencies: np.ndarray  # nu_j, rad/s
    phases: np.ndarray  # phi_j, rad
    duration: float  # s

    def __post_init__(self):
        arrs = [np.array(a, dtype=float).ravel() for a in (self.amplitudes, self.frequencies, self.phases)]
        if not (len(arrs[0]) == len(arrs[1]) == len(arrs[2]) >= 1):
            raise ValueError("a pulse needs K >= 1 matching (F, nu, phi) triples")
        if not all(np.all(np.isfinite(a)) for a in arrs):
            raise ValueError("pulse coefficients must be finite")
        if not (math.isfinite(self.duration) and self.duration > 0):
            raise ValueError(f"pulse duration must be positive, got {self.duration}")
        if abs(arrs[0].sum() - 1.0) > 1e-12:
            raise ValueError(f"amplitudes must sum to 1, got {arrs[0].sum()!r}")
        for name, a in zip(("amplitudes", "frequencies", "phases"), arrs):
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        object.__setattr__(self, "duration", float(self.duration))

    @property
    def k(self) -> int:
        return len(self.amplitudes)

    def __call__(self, t):
        return evaluate(self, t)

    def __eq__(self, other):
        if not isinstance(other, FourierPulse):
            return NotImplemented
        return (
            self.duration == other.duration
            and np.array_equal(self.amplitudes, other.amplitudes)
            and np.array_equal(self.frequencies, other.frequencies)
            and np.array_equal(self.phases, other.phases)
        )

    def with_duration(self, duration: float) -> "FourierPulse":
        return FourierPulse(self.amplitudes, self.frequencies, self.phases, duration)

    def to_json(self) -> dict:
        return {
            "duration_s": self.duration,
            "components": [
                {"F": float(F), "nu_hz_linear": float(nu / (2 * math.pi)), "phi_rad": float(phi)}
                for F, nu, phi in zip(self.amplitudes, self.frequencies, self.phases)
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FourierPulse":
        comps = obj["components"]
        F = np.array([c["F"] for c in comps], dtype=float)
        # renormalize away the rounding picked up in the decimal round-trip
        F = F / F.sum()
        return cls(
            F,
            np.array([2 * math.pi * c["nu_hz_linear"] for c in comps], dtype=float),
            np.array([c["phi_rad"] for c in comps], dtype=float),
            float(obj["duration_s"]),
        )


@dataclass(frozen=True)
class PulseSamplingSpec:
    k: int = 10
    freq_lo: float = 0.0  # rad/s
    freq_hi: float = 4 * MHZ  # rad/s
    amplitude_law: str = "uniform-simplex"
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not (0 <= self.freq_lo < self.freq_hi):
            raise ValueError("frequency range must satisfy 0 <= lo < hi")
        if self.amplitude_law not in AMPLITUDE_LAWS:
            raise ValueError(f"unknown amplitude law {self.amplitude_law!r}")
        if not (0 <= self.seed < 2**64):
            raise ValueError("seed must be an unsigned 64-bit integer")

    def with_seed(self, seed: int) -> "PulseSamplingSpec":
        return PulseSamplingSpec(self.k, self.freq_lo, self.freq_hi, self.amplitude_law, seed)


def uniform_simplex(k: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform point on the standard (k-1)-simplex by normalizing exponential gaps."""
    e = rng.standard_exponential(k)
    F = e / e.sum()
    # push the summation residue into the largest weight so sum(F) == 1 to ~1 ulp
    F[np.argmax(F)] += 1.0 - F.sum()
    return F


def sample_pulse_rng(spec: PulseSamplingSpec, duration: float, rng: np.random.Generator) -> FourierPulse:
    F = uniform_simplex(spec.k, rng)
    nu = rng.uniform(spec.freq_lo, spec.freq_hi, spec.k)
    phi = rng.uniform(0.0, 2 * math.pi, spec.k)
    return FourierPulse(F, nu, phi, duration)


def sample_pulse(spec: PulseSamplingSpec, duration: float) -> FourierPulse:
    """Draw one random pulse; reproducible from ``spec.seed`` (numpy PCG64)."""
    return sample_pulse_rng(spec, duration, np.random.default_rng(spec.seed))


def sample_pulses(spec: PulseSamplingSpec, duration: float, count: int) -> list[FourierPulse]:
    """``count`` independent pulses from one seeded stream."""
    rng = np.random.default_rng(spec.seed)
    return [sample_pulse_rng(spec, duration, rng) for _ in range(count)]


def evaluate(pulse: FourierPulse, t):
    """Evaluate the pulse at scalar or array ``t`` (seconds)."""
    t = np.asarray(t, dtype=float)
    phase = np.multiply.outer(t, pulse.frequencies) + pulse.phases
    out = np.cos(phase) @ pulse.amplitudes
    return float(out) if out.ndim == 0 else out


def constant_pulse(duration: float) -> FourierPulse:
    """``f(t) == 1``; used for Rabi calibration."""
    return FourierPulse(np.ones(1), np.zeros(1), np.zeros(1), duration)
