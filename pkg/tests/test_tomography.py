import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rftomo.model import MHZ, custom_system
from rftomo.propagator import PropagationSpec
from rftomo.pulse import PulseSamplingSpec, sample_pulse, sample_pulses
from rftomo.quantum import (
    I2, SX, SZ, basis_state, fidelity, is_physical, kron, pauli_basis, random_density_matrix, random_pure_state,
    to_bloch,
)
from rftomo.tomography import (
    SINGULAR_CAP, InformationallyIncompleteError, MeasurementRecord, NoiseSpec, Protocol, RecordDesign,
    SolverOptions, build_matrices, build_matrix, conditioning_study, experiment_protocol, factor_from_state,
    factor_to_params, inverse_norm, is_informationally_complete, objective_and_gradient, params_to_factor,
    project_to_physical, protocol_records, reconstruct_constrained, reconstruct_linear, records_from_json,
    records_to_json, simulate_record, simulate_records, single_pulse_matrix, state_from_params,
    write_conditioning_csv,
)

SPEC = PulseSamplingSpec(seed=2024)


@pytest.fixture(scope="module")
def design():
    return RecordDesign(sample_pulses(SPEC, 0.7e-6, 15), Protocol().design_times())


@pytest.fixture(scope="module")
def mats(nv, basis2, design):
    return build_matrices(nv, design, basis2)


def test_matrix_at_time_zero_is_rank_one(nv, basis2):
    d = RecordDesign(sample_pulses(SPEC, 0.7e-6, 15), [0.0])
    m = build_matrix(nv, d, basis2, 0)
    expected = np.zeros(15)
    expected[11] = 2.0
    assert np.allclose(m, expected[None, :], atol=1e-14)
    assert np.linalg.matrix_rank(m) == 1


def test_protocol_matrices_invertible(mats):
    assert mats.shape == (10, 15, 15)
    assert all(is_informationally_complete(m) for m in mats)


def test_build_matrix_matches_batch(nv, basis2, design, mats):
    assert np.allclose(build_matrix(nv, design, basis2, 4), mats[4], atol=1e-12)
    with pytest.raises(IndexError):
        build_matrix(nv, design, basis2, 10)


def test_rows_have_observable_norm(mats):
    # U^dagger M U has the same Hilbert-Schmidt norm as M = sigma_z (x) 1, i.e. 2
    assert np.allclose(np.linalg.norm(mats, axis=-1), 2.0)


def test_design_needs_d2_minus_1_pulses(nv, basis2):
    d = RecordDesign(sample_pulses(SPEC, 0.7e-6, 14), [0.7e-6])
    with pytest.raises(ValueError):
        build_matrices(nv, d, basis2)


def test_design_validation():
    ps = sample_pulses(SPEC, 0.5e-6, 15)
    with pytest.raises(ValueError):
        RecordDesign(ps, [0.6e-6])
    with pytest.raises(ValueError):
        RecordDesign(ps, [0.3e-6, 0.2e-6])
    with pytest.raises(ValueError):
        RecordDesign(ps, [])
    with pytest.raises(ValueError):
        RecordDesign([], [0.1e-6])


def test_noiseless_records_are_linear(nv, basis2, design, mats):
    rho = random_density_matrix(4, np.random.default_rng(0))
    recs = simulate_records(nv, design, rho, basis2, matrices=mats)
    r = to_bloch(rho, basis2)
    for rec, m in zip(recs, mats):
        assert np.abs(rec.y - m @ r).max() < 1e-10
    single = simulate_record(nv, design, rho, basis2, 3)
    assert np.allclose(single.y, recs[3].y, atol=1e-12)


def test_maximally_mixed_gives_zero_record(nv, basis2, design, mats):
    recs = simulate_records(nv, design, np.eye(4) / 4, basis2, matrices=mats)
    assert np.abs(np.concatenate([r.y for r in recs])).max() < 1e-12


def test_shot_noise_std(nv, basis2, design, mats):
    rho = basis_state("00")
    noise_free = simulate_records(nv, design, rho, basis2, matrices=mats[:1])[0].y
    n = 10_000
    ys = np.array([
        simulate_records(nv, design, rho, basis2, NoiseSpec("shots", shots=n, seed=s), matrices=mats[:1])[0].y
        for s in range(100)
    ])
    oracle = np.sqrt((1 - noise_free**2) / n)
    ratio = ys.std(axis=0, ddof=1) / oracle
    assert np.all(np.abs(ratio - 1) < 0.2)
    assert np.all(np.abs(ys) <= 1)


def test_gaussian_noise_is_seeded(nv, basis2, design, mats):
    rho = basis_state("01")
    a = simulate_records(nv, design, rho, basis2, NoiseSpec("gaussian", sigma=0.1, seed=5), matrices=mats)
    b = simulate_records(nv, design, rho, basis2, NoiseSpec("gaussian", sigma=0.1, seed=5), matrices=mats)
    assert all(np.array_equal(x.y, y.y) for x, y in zip(a, b))
    assert a[0].noise_meta == {"kind": "gaussian", "sigma": 0.1, "seed": 5}


def test_shot_noise_needs_pm1_spectrum(basis2):
    s = custom_system(kron(SZ, SZ), kron(SX, I2), np.diag([1.0, 0.0, 0.0, -1.0]))
    ps = sample_pulses(SPEC, 0.1e-6, 15)
    with pytest.raises(ValueError):
        simulate_records(s, RecordDesign(ps, [0.1e-6]), np.eye(4) / 4, basis2, NoiseSpec("shots", shots=10))


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec("poisson")
    with pytest.raises(ValueError):
        NoiseSpec("shots", shots=0)
    with pytest.raises(ValueError):
        NoiseSpec("gaussian", sigma=-1)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32))
def test_linear_reconstruction_noiseless(seed):
    from rftomo.model import NVParams, nv_system

    nv, basis = nv_system(NVParams.published()), pauli_basis(2)
    rng = np.random.default_rng(seed)
    rho = random_density_matrix(4, rng)
    design = RecordDesign(sample_pulses(SPEC.with_seed(seed), 0.7e-6, 15), [0.7e-6])
    rec = simulate_records(nv, design, rho, basis)
    if np.linalg.svd(rec[0].matrix, compute_uv=False)[-1] > 1e-4:
        res = reconstruct_linear(rec, basis)
        assert np.abs(res.diagnostics["unprojected_bloch"] - to_bloch(rho, basis)).max() < 1e-7
        assert fidelity(res.rho, rho) > 1 - 1e-9


def test_linear_error_bound(nv, basis2, design, mats):
    rng = np.random.default_rng(1)
    for trial in range(10):
        rho = random_density_matrix(4, rng)
        rec = simulate_records(nv, design, rho, basis2, NoiseSpec("gaussian", sigma=0.01, seed=trial),
                               matrices=mats[:1])
        eps = rec[0].y - mats[0] @ to_bloch(rho, basis2)
        r_hat = reconstruct_linear(rec, basis2).diagnostics["unprojected_bloch"]
        assert np.linalg.norm(r_hat - to_bloch(rho, basis2)) <= inverse_norm(mats[0]) * np.linalg.norm(eps) + 1e-12


def test_decoupled_system_is_incomplete(basis2):
    # qubit 2 never talks to qubit 1, so only the xI, yI, zI components are seen
    s = custom_system(MHZ * kron(SZ, I2), MHZ * kron(SX, I2), kron(SZ, I2))
    design = RecordDesign(sample_pulses(SPEC, 0.7e-6, 15), Protocol().design_times())
    recs = simulate_records(s, design, basis_state("00"), basis2)
    with pytest.raises(InformationallyIncompleteError) as exc:
        reconstruct_linear(recs, basis2)
    assert exc.value.null_dim == 12
    assert "12" in str(exc.value)


def simplex_projection_oracle(v):
    # bisection on the shift theta with sum(max(v - theta, 0)) = 1
    lo, hi = v.min() - 1, v.max()
    for _ in range(200):
        mid = (lo + hi) / 2
        if np.clip(v - mid, 0, None).sum() > 1:
            lo = mid
        else:
            hi = mid
    return np.clip(v - (lo + hi) / 2, 0, None)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4), st.integers(0, 2**32))
def test_projection_matches_simplex_oracle(w, seed):
    u = np.linalg.qr(np.random.default_rng(seed).normal(size=(4, 4)) + 1j)[0]
    a = (u * np.array(w)) @ u.conj().T
    rho = project_to_physical(a)
    assert is_physical(rho, 1e-12)
    expected = (u * simplex_projection_oracle(np.array(w))) @ u.conj().T
    assert np.allclose(rho, expected, atol=1e-10)


def test_projection_fixes_physical_states():
    rho = random_density_matrix(4, np.random.default_rng(3))
    assert np.allclose(project_to_physical(rho), rho, atol=1e-14)


def test_factor_round_trip():
    rng = np.random.default_rng(2)
    for rho in (random_density_matrix(4, rng), random_pure_state(4, rng), basis_state("10")):
        t = factor_from_state(rho, mix=0.0)
        assert np.allclose(np.triu(t, 1), 0)
        assert np.allclose(np.diag(t).imag, 0)
        assert np.allclose(t.conj().T @ t, rho, atol=1e-12)
        x = factor_to_params(t)
        assert np.allclose(params_to_factor(x, 4), t)
        assert np.allclose(state_from_params(x, 4), rho, atol=1e-12)


def test_gradient_matches_finite_differences(nv, basis2, design, mats):
    rng = np.random.default_rng(11)
    ys = np.array([m @ to_bloch(random_density_matrix(4, rng), basis2) for m in mats]) + rng.normal(0, 0.05, (10, 15))
    h = 1e-6
    for _ in range(10):
        x = rng.normal(size=16)
        _, g = objective_and_gradient(x, mats, ys, basis2)
        fd = np.array([
            (objective_and_gradient(x + h * e, mats, ys, basis2)[0]
             - objective_and_gradient(x - h * e, mats, ys, basis2)[0]) / (2 * h)
            for e in np.eye(16)
        ])
        assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)


def test_constrained_noiseless_recovery(nv, basis2, design, mats):
    rng = np.random.default_rng(6)
    for rho in (random_pure_state(4, rng), random_density_matrix(4, rng), basis_state("11")):
        recs = simulate_records(nv, design, rho, basis2, matrices=mats)
        res = reconstruct_constrained(recs, basis2)
        assert res.converged
        assert is_physical(res.rho, 1e-13)
        assert fidelity(res.rho, rho) > 0.9999


def test_constrained_noisy_is_physical(nv, basis2, design, mats):
    rho = random_pure_state(4, np.random.default_rng(8))
    recs = simulate_records(nv, design, rho, basis2, NoiseSpec("gaussian", sigma=0.05, seed=1), matrices=mats)
    res = reconstruct_constrained(recs, basis2)
    assert abs(np.trace(res.rho) - 1) < 1e-12
    assert np.linalg.eigvalsh(res.rho)[0] >= -1e-13
    lin = reconstruct_linear(recs, basis2)
    assert res.residual <= lin.residual + 1e-12


def test_constrained_without_complete_record_still_physical(basis2):
    s = custom_system(kron(SZ, I2), kron(SX, I2), kron(SZ, I2))
    design = RecordDesign(sample_pulses(SPEC, 0.3e-6, 15), [0.3e-6])
    recs = simulate_records(s, design, basis_state("00"), basis2)
    res = reconstruct_constrained(recs, basis2, SolverOptions(max_iters=200))
    assert res.diagnostics["init"] == "maximally-mixed"
    assert is_physical(res.rho, 1e-13)


def test_records_json_round_trip(nv, basis2, design, mats):
    recs = simulate_records(nv, design, basis_state("00"), basis2, NoiseSpec("gaussian", 0.02, seed=3), matrices=mats)
    back = records_from_json(records_to_json(recs, tag="x"))
    assert len(back) == 10
    for a, b in zip(recs, back):
        assert np.array_equal(a.y, b.y) and np.array_equal(a.matrix, b.matrix)
        assert a.sample_index == b.sample_index and a.noise_meta == b.noise_meta
    with pytest.raises(ValueError):
        MeasurementRecord(np.zeros(3), np.zeros((4, 15)))


def test_inverse_norm():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(15, 15))
    assert np.isclose(inverse_norm(a), np.linalg.norm(np.linalg.inv(a), 2))
    assert inverse_norm(np.eye(3)) == 1.0
    assert inverse_norm(np.diag([1.0, 1.0, 0.0])) == SINGULAR_CAP


def test_single_pulse_matrix(nv, basis2):
    p = sample_pulse(SPEC, 3e-6)
    times = np.arange(1, 16) * 0.2e-6
    m = single_pulse_matrix(nv, p, times, basis2)
    assert m.shape == (15, 15)
    assert is_informationally_complete(m)
    with pytest.raises(ValueError):
        single_pulse_matrix(nv, p, times[:5], basis2)


def test_conditioning_zero_duration(nv, basis2):
    rows = conditioning_study(nv, SPEC, [0.0], 5, basis2)
    assert rows[0].singular_count == 5 and rows[0].n_finite == 0


def test_conditioning_threads_deterministic(nv, basis2):
    a = conditioning_study(nv, SPEC, [0.2e-6, 0.4e-6], 6, basis2)
    b = conditioning_study(nv, SPEC, [0.2e-6, 0.4e-6], 6, basis2, threads=2)
    assert a == b


def test_conditioning_monte_carlo_consistency(nv, basis2):
    small = conditioning_study(nv, SPEC, [0.4e-6], 40, basis2, PropagationSpec(2e-9))[0]
    large = conditioning_study(nv, SPEC.with_seed(77), [0.4e-6], 80, basis2, PropagationSpec(2e-9))[0]
    se = np.hypot(small.sem_log, large.sem_log)
    assert abs(small.mean_log_inv_norm - large.mean_log_inv_norm) < 2.5 * se


def test_conditioning_csv(tmp_path, nv, basis2):
    rows = conditioning_study(nv, SPEC, [0.1e-6], 3, basis2)
    path = tmp_path / "c.csv"
    write_conditioning_csv(rows, path, "seed=2024")
    lines = path.read_text().splitlines()
    assert lines[1].startswith("duration_s,mean_log_inv_norm,std,singular_count")
    assert len(lines) == 3


def test_protocol_times():
    t = Protocol().design_times()
    assert len(t) == 10
    assert np.isclose(t[0], 0.52e-6) and t[-1] == 0.7e-6
    with pytest.raises(ValueError):
        Protocol(duration=0.1e-6, last_k=10).design_times()


def test_experiment_protocol_noiseless(nv):
    for rho in (basis_state("00"), random_density_matrix(4, np.random.default_rng(4))):
        res = experiment_protocol(nv, rho, SPEC)
        assert fidelity(res.rho, rho) >= 0.999


def test_experiment_protocol_shot_noise(nv, basis2):
    rng = np.random.default_rng(12)
    fids = []
    for trial in range(20):
        rho = random_pure_state(4, rng)
        res = experiment_protocol(nv, rho, SPEC.with_seed(trial), NoiseSpec("shots", shots=100_000, seed=trial))
        assert is_physical(res.rho, 1e-13)
        fids.append(fidelity(res.rho, rho))
    assert np.median(fids) >= 0.98


def test_protocol_requires_two_qubits():
    s = custom_system(SZ, SX, SZ)
    with pytest.raises(ValueError):
        experiment_protocol(s, np.eye(2) / 2, SPEC)


def test_protocol_records_shape(nv, basis2):
    design, recs = protocol_records(nv, basis_state("00"), SPEC)
    assert len(design.pulses) == 15 and len(recs) == 10
    assert [r.sample_index for r in recs] == list(range(10))
