"""Dense matrix helpers, Pauli bases, Bloch vectors and state metrics."""

from __future__ import annotations

import itertools
import warnings

import numpy as np

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-10
PSD_TOL = 1e-9
MAX_QUBITS = 6  # d = 64, the practical cap for dense d^2 x d^2 storage

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = {"I": I2, "x": SX, "y": SY, "z": SZ}


class NotPhysicalError(ValueError):
    """Raised when a matrix is not a valid density matrix."""


def as_square(a, name: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def is_hermitian(a: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    return bool(np.max(np.abs(a - a.conj().T), initial=0.0) <= tol)


def dagger(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2).conj()


def kron(*mats) -> np.ndarray:
    """Kronecker product of one or more square matrices, left to right."""
    out = np.ones((1, 1), dtype=complex)
    for m in mats:
        out = np.kron(out, as_square(m))
    return out


def pauli_string(label: str) -> np.ndarray:
    """Unnormalized Pauli string, e.g. ``"zI"`` -> sigma_z (x) identity."""
    return kron(*(PAULIS[c] for c in label))


def pauli_labels(num_qubits: int) -> list[str]:
    labels = ["".join(p) for p in itertools.product("Ixyz", repeat=num_qubits)]
    return labels[1:]


def pauli_basis(num_qubits: int) -> np.ndarray:
    """Hilbert-Schmidt orthonormal basis of traceless Hermitian operators.

    Elements are the nontrivial Pauli strings divided by ``sqrt(d)`` so that
    ``Tr(B_i B_j) = delta_ij``. Ordering is lexicographic in ``(I, x, y, z)``
    per qubit with qubit 1 leftmost, identity string dropped. Returns an array
    of shape ``(d**2 - 1, d, d)``.
    """
    if int(num_qubits) != num_qubits or num_qubits < 1:
        raise ValueError("num_qubits must be a positive integer")
    if num_qubits > MAX_QUBITS:
        raise ValueError(f"num_qubits={num_qubits} exceeds the dense-storage cap of {MAX_QUBITS}")
    d = 2**num_qubits
    return np.array([pauli_string(lab) for lab in pauli_labels(num_qubits)]) / np.sqrt(d)


def basis_dim(basis: np.ndarray) -> int:
    return basis.shape[-1]


def hs_components(op: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Complex ``Tr(op B_m)`` for every basis element; ``op`` may be batched."""
    # Tr(A B) = sum_ij A_ij B_ji
    return np.einsum("...ij,mji->...m", op, basis)


def expm_hermitian(h, scale: float = 1.0) -> np.ndarray:
    """``exp(-i * scale * h)`` for Hermitian ``h`` via eigendecomposition."""
    h = as_square(h, "h")
    if not is_hermitian(h):
        raise ValueError("expm_hermitian requires a Hermitian matrix")
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * scale * w)) @ v.conj().T


def check_density_matrix(rho, tol_psd: float = PSD_TOL) -> np.ndarray:
    """Validate and return ``rho`` as a complex array; raise NotPhysicalError otherwise."""
    rho = as_square(rho, "rho")
    if not is_hermitian(rho):
        raise NotPhysicalError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1.0) > TRACE_TOL:
        raise NotPhysicalError(f"density matrix trace {np.trace(rho).real:.3g} != 1")
    if np.linalg.eigvalsh(rho)[0] < -tol_psd:
        raise NotPhysicalError("density matrix has a negative eigenvalue")
    return rho


def is_physical(rho, tol_psd: float = PSD_TOL) -> bool:
    try:
        check_density_matrix(rho, tol_psd)
    except NotPhysicalError:
        return False
    return True


def to_bloch(rho, basis: np.ndarray) -> np.ndarray:
    """Real Bloch vector ``r_m = Tr(rho B_m)``."""
    rho = as_square(rho, "rho")
    if rho.shape[0] != basis_dim(basis):
        raise ValueError(f"rho has dim {rho.shape[0]}, basis has dim {basis_dim(basis)}")
    r = hs_components(rho, basis)
    if np.max(np.abs(r.imag), initial=0.0) > 1e-10:
        raise ValueError("Bloch components are not real; is rho Hermitian?")
    return r.real.copy()


def from_bloch(r, basis: np.ndarray) -> tuple[np.ndarray, bool]:
    """Return ``(1/d + sum_m r_m B_m, is_physical)``.

    The result is Hermitian with unit trace by construction; positivity is
    only reported, never enforced.
    """
    r = np.asarray(r, dtype=float)
    if r.shape != (basis.shape[0],):
        raise ValueError(f"Bloch vector must have length {basis.shape[0]}, got {r.shape}")
    d = basis_dim(basis)
    rho = np.eye(d, dtype=complex) / d + np.tensordot(r, basis, axes=1)
    rho = 0.5 * (rho + rho.conj().T)
    return rho, bool(np.linalg.eigvalsh(rho)[0] >= -PSD_TOL)


def bloch_norm_bound(d: int) -> float:
    return float(np.sqrt((d - 1) / d))


_ROUNDOFF = 1e-13  # eigenvalues below this are treated as exact zeros


def _psd_sqrt(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(a)
    if w[0] < -PSD_TOL:
        raise NotPhysicalError("matrix square root of a non-PSD matrix")
    w = np.where(w < _ROUNDOFF, 0.0, w)
    return (v * np.sqrt(w)) @ v.conj().T


def fidelity(rho, sigma) -> float:
    """Uhlmann fidelity ``(Tr sqrt(sqrt(rho) sigma sqrt(rho)))**2``."""
    rho = check_density_matrix(rho)
    sigma = check_density_matrix(sigma)
    if rho.shape != sigma.shape:
        raise ValueError("fidelity needs matrices of equal dimension")
    s = _psd_sqrt(rho)
    inner = s @ sigma @ s
    inner = 0.5 * (inner + inner.conj().T)
    w = np.linalg.eigvalsh(inner)
    if w[0] < -PSD_TOL:
        raise NotPhysicalError("fidelity kernel is not PSD")
    f = float(np.sum(np.sqrt(np.where(w < _ROUNDOFF, 0.0, w))) ** 2)
    if f > 1.0 + PSD_TOL:
        warnings.warn(f"fidelity {f} exceeds 1 beyond tolerance", RuntimeWarning)
    return min(max(f, 0.0), 1.0)


_SYSY = np.kron(SY, SY)


def concurrence(rho) -> float:
    """Wootters concurrence of a two-qubit density matrix."""
    rho = check_density_matrix(rho)
    if rho.shape != (4, 4):
        raise ValueError("concurrence is defined for two qubits (d=4) only")
    # with rho = V V^dagger, the square roots of the eigenvalues of rho * rho_tilde are
    # the singular values of V^T (sy x sy) V; this avoids square roots of roundoff
    w, v = np.linalg.eigh(rho)
    vv = v * np.sqrt(np.clip(w, 0.0, None))
    lam = np.linalg.svd(vv.T @ _SYSY @ vv, compute_uv=False)
    return float(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]))


def purity(rho) -> float:
    rho = as_square(rho, "rho")
    return float(np.real(np.trace(rho @ rho)))


def pure_state(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex).ravel()
    psi = psi / np.linalg.norm(psi)
    return np.outer(psi, psi.conj())


def basis_state(bits: str) -> np.ndarray:
    """Projector on a computational basis state; ``"0"`` is the +1 eigenstate of sigma_z."""
    idx = int(bits, 2)
    psi = np.zeros(2 ** len(bits), dtype=complex)
    psi[idx] = 1.0
    return np.outer(psi, psi.conj())


def random_pure_state(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random pure state."""
    psi = rng.normal(size=d) + 1j * rng.normal(size=d)
    return pure_state(psi)


def random_density_matrix(d: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Random mixed state from the induced (Ginibre) measure."""
    rank = d if rank is None else rank
    g = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = g @ g.conj().T
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


def random_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    ph = np.diag(r) / np.abs(np.diag(r))
    return q * ph


def matrix_to_json(a) -> dict:
    a = as_square(a)
    return {"dim": int(a.shape[0]), "re": a.real.ravel().tolist(), "im": a.imag.ravel().tolist()}


def matrix_from_json(obj: dict) -> np.ndarray:
    d = int(obj["dim"])
    re = np.asarray(obj["re"], dtype=float).reshape(d, d)
    im = np.asarray(obj.get("im", np.zeros(d * d)), dtype=float).reshape(d, d)
    return as_square(re + 1j * im)
