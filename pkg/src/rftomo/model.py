"""Controlled quantum systems ``H(t) = H0 + f(t) Hc`` and the NV-center model.

All Hamiltonian entries are angular frequencies (rad/s). Parameters quoted as
``X / 2pi = ... MHz`` are passed to the ``*_mhz`` constructors, which apply the
``2 pi * 1e6`` factor once.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .quantum import I2, SX, SZ, as_square, is_hermitian, kron, matrix_from_json, matrix_to_json

MHZ = 2 * math.pi * 1e6  # rad/s per MHz of linear frequency


@dataclass(frozen=True, eq=False)
class ControlledSystem:
    h0: np.ndarray
    hc: np.ndarray
    observable: np.ndarray

    def __post_init__(self):
        h0 = as_square(self.h0, "h0")
        hc = as_square(self.hc, "hc")
        obs = as_square(self.observable, "observable")
        if not (h0.shape == hc.shape == obs.shape):
            raise ValueError(f"dimension mismatch: h0 {h0.shape}, hc {hc.shape}, observable {obs.shape}")
        for name, m in (("h0", h0), ("hc", hc), ("observable", obs)):
            if not is_hermitian(m, 1e-10 * max(1.0, np.abs(m).max(initial=0.0))):
                raise ValueError(f"{name} is not Hermitian")
        if abs(np.trace(obs)) > 1e-10:
            raise ValueError("observable must be traceless; use custom_system() to project it")
        for m in (h0, hc, obs):
            m.setflags(write=False)
        object.__setattr__(self, "h0", h0)
        object.__setattr__(self, "hc", hc)
        object.__setattr__(self, "observable", obs)

    @property
    def dim(self) -> int:
        return self.h0.shape[0]

    def hamiltonian(self, f: float) -> np.ndarray:
        return self.h0 + f * self.hc

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "h0": matrix_to_json(self.h0),
            "hc": matrix_to_json(self.hc),
            "observable": matrix_to_json(self.observable),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ControlledSystem":
        return custom_system(
            matrix_from_json(obj["h0"]), matrix_from_json(obj["hc"]), matrix_from_json(obj["observable"])
        )


def custom_system(h0, hc, observable) -> ControlledSystem:
    """Build a validated system, projecting the observable onto its traceless part."""
    obs = as_square(observable, "observable")
    tr = np.trace(obs)
    if abs(tr) > 1e-10:
        d = obs.shape[0]
        obs = obs - tr / d * np.eye(d)
        if np.abs(obs).max() <= 1e-12:
            raise ValueError("observable is proportional to the identity; its traceless part vanishes")
        warnings.warn("observable is not traceless; using its traceless part", UserWarning, stacklevel=2)
    return ControlledSystem(h0, hc, obs)


@dataclass(frozen=True)
class NVParams:
    """Rotating-frame NV parameters in rad/s."""

    omega1: float
    omega2: float
    Omega1: float
    Omega2: float
    gz: float
    gx: float

    def __post_init__(self):
        vals = asdict(self).values()
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("NV parameters must be finite")
        if self.Omega1 == 0:
            raise ValueError("Omega1 must be nonzero, otherwise the drive does nothing")

    @classmethod
    def from_mhz(cls, omega1, omega2, Omega1, Omega2, gz, gx) -> "NVParams":
        return cls(omega1 * MHZ, omega2 * MHZ, Omega1 * MHZ, Omega2 * MHZ, gz * MHZ, gx * MHZ)

    @classmethod
    def published(cls) -> "NVParams":
        """The published experimental values (electron + 13C)."""
        return cls.from_mhz(-2.97, -6.46, 7.91, -1.39, 5.92, 1.39)

    def to_mhz(self) -> dict:
        return {k: v / MHZ for k, v in asdict(self).items()}

    def to_json(self) -> dict:
        return {f"{k}_mhz": v for k, v in self.to_mhz().items()}

    @classmethod
    def from_json(cls, obj: dict) -> "NVParams":
        return cls.from_mhz(*(float(obj[f"{k}_mhz"]) for k in ("omega1", "omega2", "Omega1", "Omega2", "gz", "gx")))


@dataclass(frozen=True)
class NVPhysicalParams:
    """Lab-frame constants.

    ``D``, ``A_N``, ``A_zz``, ``A_zx`` and ``omega_mw`` are in rad/s,
    ``gamma_e`` and ``gamma_c`` in rad/s per gauss, ``B`` in gauss.
    """

    D: float
    gamma_e: float
    gamma_c: float
    B: float
    A_N: float
    A_zz: float
    A_zx: float
    omega_mw: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in asdict(self).values()):
            raise ValueError("physical parameters must be finite")

    @classmethod
    def from_mhz(cls, D, gamma_e, gamma_c, B, A_N, A_zz, A_zx, omega_mw) -> "NVPhysicalParams":
        """Frequencies in MHz, gyromagnetic ratios in MHz/G, field in G."""
        return cls(D * MHZ, gamma_e * MHZ, gamma_c * MHZ, B, A_N * MHZ, A_zz * MHZ, A_zx * MHZ, omega_mw * MHZ)

    @classmethod
    def published(cls) -> "NVPhysicalParams":
        return cls.from_mhz(
            D=2870.0, gamma_e=-2.8, gamma_c=1.07e-3, B=504.7, A_N=2.16, A_zz=11.832, A_zx=2.790, omega_mw=1455.5
        )


def nv_params_from_physical(p: NVPhysicalParams, Omega1: float) -> NVParams:
    """Rotating-frame parameters from the lab-frame constants.

    ``Omega1`` (rad/s) is the calibrated drive amplitude and passes through.
    The nuclear gyromagnetic ratio is ``p.gamma_c``.
    """
    return NVParams(
        omega1=p.omega_mw - p.D + p.gamma_e * p.B + p.A_N,
        omega2=p.gamma_c * p.B - p.A_zz / 2,
        Omega1=Omega1,
        Omega2=-p.A_zx / 2,
        gz=p.A_zz / 2,
        gx=p.A_zx / 2,
    )


def nv_system(p: NVParams) -> ControlledSystem:
    """Electron (qubit 1) + 13C (qubit 2); control on the electron; M = sigma_z (x) 1."""
    h0 = (
        p.omega1 / 2 * kron(SZ, I2)
        + p.omega2 / 2 * kron(I2, SZ)
        + p.Omega2 / 2 * kron(I2, SX)
        + p.gz / 2 * kron(SZ, SZ)
        + p.gx / 2 * kron(SZ, SX)
    )
    hc = p.Omega1 / 2 * kron(SX, I2)
    return ControlledSystem(h0, hc, kron(SZ, I2))


def population_from_expectation(expectation):
    """Population of the +1 eigenstate (m_s = 0) from ``<sigma_z>``."""
    return (1 + np.asarray(expectation)) / 2
