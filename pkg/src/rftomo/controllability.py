"""Dynamical Lie algebra of ``{i H0, i Hc}`` and the full-controllability test."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .quantum import as_square, is_hermitian


@dataclass(frozen=True)
class LieClosureResult:
    dimension: int
    is_fully_controllable: bool
    depth: int
    d: int
    basis: list = field(repr=False, default_factory=list)

    def to_json(self) -> dict:
        return {"dimension": self.dimension, "full": self.is_fully_controllable, "depth": self.depth, "d": self.d}


def _vec(a: np.ndarray) -> np.ndarray:
    # real vectorization; the Euclidean inner product is Re Tr(A^dagger B)
    return np.concatenate([a.real.ravel(), a.imag.ravel()])


def _unvec(v: np.ndarray, d: int) -> np.ndarray:
    n = d * d
    return (v[:n] + 1j * v[n:]).reshape(d, d)


class _RealSpan:
    """Incremental orthonormal basis with a relative rank tolerance."""

    def __init__(self, dim: int, tol: float):
        self.q = np.zeros((0, dim))
        self.tol = tol
        self.largest = 0.0

    def add(self, v: np.ndarray) -> np.ndarray | None:
        self.largest = max(self.largest, float(np.linalg.norm(v)))
        for _ in range(2):  # second pass restores orthogonality lost to cancellation
            v = v - self.q.T @ (self.q @ v)
        n = np.linalg.norm(v)
        if n <= self.tol * self.largest or n == 0.0:
            return None
        v = v / n
        self.q = np.vstack([self.q, v])
        return v


def lie_closure(h0, hc, tol: float = 1e-10) -> LieClosureResult:
    """Breadth-first closure of ``Lie(i h0, i hc)``.

    Each generation commutes the newly found directions with the two
    generators; the real span is tracked by Gram-Schmidt with a tolerance
    relative to the largest vector norm encountered.
    """
    h0 = as_square(h0, "h0")
    hc = as_square(hc, "hc")
    if h0.shape != hc.shape:
        raise ValueError("generators must have the same dimension")
    for name, m in (("h0", h0), ("hc", hc)):
        if not is_hermitian(m, 1e-10 * max(1.0, np.abs(m).max(initial=0.0))):
            raise ValueError(f"{name} is not Hermitian")
    if tol <= 0:
        raise ValueError("tol must be positive")
    d = h0.shape[0]

    gens = []
    for h in (h0, hc):
        nrm = np.linalg.norm(h)
        if nrm > 0:
            gens.append(1j * h / nrm)
    traceless = all(abs(np.trace(g)) < 1e-12 * d for g in gens)
    target = d * d - 1 if traceless else d * d

    span = _RealSpan(2 * d * d, tol)
    frontier = []
    for g in gens:
        v = span.add(_vec(g))
        if v is not None:
            frontier.append(_unvec(v, d))

    depth = 0
    while frontier:
        if depth >= d * d:
            raise RuntimeError(f"Lie closure did not converge within {d * d} generations")
        depth += 1
        new = []
        for x in frontier:
            for g in gens:
                v = span.add(_vec(g @ x - x @ g))
                if v is not None:
                    new.append(_unvec(v, d))
        frontier = new
        if span.q.shape[0] >= d * d:
            break

    basis = [_unvec(v, d) for v in span.q]
    dim = len(basis)
    return LieClosureResult(dim, dim >= target, depth, d, basis)
