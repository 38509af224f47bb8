import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rftomo.controllability import lie_closure
from rftomo.quantum import I2, SX, SY, SZ, kron


def random_hermitian(d, rng):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return a + a.conj().T


def test_nv_is_fully_controllable(nv):
    t0 = time.perf_counter()
    res = lie_closure(nv.h0, nv.hc)
    assert time.perf_counter() - t0 < 1.0
    assert res.dimension == 15
    assert res.is_fully_controllable
    assert res.to_json() == {"dimension": 15, "full": True, "depth": res.depth, "d": 4}


def test_basis_is_orthonormal_and_antihermitian(nv):
    res = lie_closure(nv.h0, nv.hc)
    b = np.array(res.basis)
    assert np.allclose(b, -np.swapaxes(b, 1, 2).conj(), atol=1e-12)
    gram = np.einsum("aij,bij->ab", b.conj(), b).real
    assert np.allclose(gram, np.eye(len(b)), atol=1e-10)


def test_decoupled_system():
    res = lie_closure(kron(SZ, I2), kron(SX, I2))
    assert res.dimension == 3
    assert not res.is_fully_controllable


def test_single_qubit():
    res = lie_closure(SZ, SX)
    assert res.dimension == 3 and res.is_fully_controllable


def test_commuting_generators():
    res = lie_closure(SZ, 2 * SZ)
    assert res.dimension == 1
    res = lie_closure(kron(SZ, I2), kron(I2, SZ))
    assert res.dimension == 2


def test_identity_component_counts_toward_u_d():
    res = lie_closure(SZ + I2, SX)
    assert res.dimension == 4 and res.is_fully_controllable


def test_zero_generators():
    res = lie_closure(np.zeros((2, 2)), np.zeros((2, 2)))
    assert res.dimension == 0 and not res.is_fully_controllable


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32), st.floats(1e-3, 1e8), st.floats(1e-3, 1e8))
def test_scale_and_order_invariance(seed, a, b):
    rng = np.random.default_rng(seed)
    h0 = random_hermitian(3, rng)
    hc = kron(np.diag([1.0, -1.0, 0.0]))
    base = lie_closure(h0, hc).dimension
    assert lie_closure(a * h0, b * hc).dimension == base
    assert lie_closure(hc, h0).dimension == base


def test_generic_pair_is_full():
    rng = np.random.default_rng(7)
    res = lie_closure(random_hermitian(4, rng), random_hermitian(4, rng))
    assert res.dimension == 16  # traces are nonzero, so u(4)


def test_adding_a_generator_never_shrinks(nv):
    assert lie_closure(nv.h0, nv.hc).dimension >= lie_closure(nv.h0, np.zeros((4, 4))).dimension
    assert lie_closure(nv.h0, nv.hc).dimension >= lie_closure(np.zeros((4, 4)), nv.hc).dimension


def test_input_validation():
    with pytest.raises(ValueError):
        lie_closure(SZ, kron(SX, I2))
    with pytest.raises(ValueError):
        lie_closure(SZ, np.array([[0, 1], [0, 0]]))
    with pytest.raises(ValueError):
        lie_closure(SZ, SX, tol=0)
