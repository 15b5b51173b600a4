import numpy as np
import pytest
from scipy.integrate import solve_ivp

from excinet.liouville import (
    RK4_THETA,
    NumericalError,
    StateVector,
    assemble,
    basis_state,
    chain_population,
    devectorize,
    energy_generator,
    l1_coherence,
    liouvillian,
    loss_population,
    physicality,
    propagate,
    propagate_trajectory,
    pure_state,
    rk4_step_count,
    site_coherence,
    sink_population,
    trajectory_rows,
    vectorize,
)
from excinet.network import (
    GAMMA_REF,
    H_REF,
    ChainSpec,
    JumpKind,
    JumpOperator,
    NetworkSpec,
    build_hamiltonian,
    build_jump_operators,
    extend_with_chain,
    fmo_reference_spec,
    random_couplings,
)


def random_spec(seed, n=None):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 11)) if n is None else n
    return NetworkSpec(
        couplings=random_couplings(n, -100, 100, seed=rng),
        local_energies=rng.uniform(-100, 100, n),
        dephasing_rates=rng.uniform(0, 10, n),
        loss_rates=rng.uniform(0, 0.1, n),
        sink_rate=rng.uniform(0.5, 8),
        sink_sites=(int(rng.integers(2, n + 1)),),
        initial_site=1,
    )


def random_density(d, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = A @ A.conj().T
    return rho / np.trace(rho)


def master_equation_oracle(spec, rho0, t):
    """Textbook Lindblad equation integrated in matrix form with an adaptive solver."""
    H = build_hamiltonian(spec)
    Ls = [op.matrix for op in build_jump_operators(spec)]
    d = H.shape[0]

    def rhs(_, y):
        rho = y.reshape(d, d)
        out = -1j / spec.hbar * (H @ rho - rho @ H)
        for L in Ls:
            LdL = L.conj().T @ L
            out += L @ rho @ L.conj().T - 0.5 * (LdL @ rho + rho @ LdL)
        return out.reshape(-1)

    sol = solve_ivp(rhs, (0, t), rho0.reshape(-1).astype(complex), rtol=1e-11, atol=1e-13, method="DOP853")
    return sol.y[:, -1].reshape(d, d)


def test_vectorize_layout():
    r = basis_state(9, 1)
    assert np.flatnonzero(r.data).tolist() == [10]
    rho = np.zeros((9, 9))
    rho[1, 3] = 1.0
    assert np.flatnonzero(vectorize(rho).data).tolist() == [1 * 9 + 3]


def test_vectorize_round_trip_exact():
    rho = random_density(6, 0)
    assert np.array_equal(devectorize(vectorize(rho)), rho)


def test_state_vector_rejects_non_square_length():
    with pytest.raises(ValueError):
        StateVector(np.ones(5))


def test_zero_generator_is_identity():
    L = assemble(np.zeros((3, 3)), [], hbar=1.0)
    assert L.assembled.nnz == 0
    r0 = vectorize(random_density(3, 1))
    np.testing.assert_array_equal(propagate(L, r0, 3.0).data, r0.data)


def test_single_dephasing_closed_form():
    # H = 0 and one dephasing jump on |1>: populations frozen, rho_12 ~ exp(-gamma t / 2)
    gamma, t = 1.7, 0.8
    jump = JumpOperator(JumpKind.DEPHASING, 1, gamma, 4, 1, 1)
    L = assemble(np.zeros((4, 4)), [jump], hbar=5.0)
    rho0 = random_density(4, 2)
    # RK4 local error is about theta^5 / 120 per step
    for method, tol in (("expm", 1e-12), ("ode", 1e-7)):
        rho = propagate(L, vectorize(rho0), t, method=method).matrix()
        np.testing.assert_allclose(np.diagonal(rho), np.diagonal(rho0), atol=1e-12)
        assert abs(rho[1, 2] - rho0[1, 2] * np.exp(-gamma * t / 2)) < tol
        assert abs(rho[2, 3] - rho0[2, 3]) < 1e-12


def test_generator_sign_convention():
    # the row-major Kronecker form evolves rho with conj(rho) obeying the textbook equation
    spec = random_spec(3, n=4)
    rho0 = random_density(spec.dim, 3)
    ours = propagate(liouvillian(spec), vectorize(rho0), 0.7).matrix()
    reference = master_equation_oracle(spec, rho0.conj(), 0.7).conj()
    assert np.abs(ours - reference).max() < 1e-8
    # the textbook picture itself differs once the initial state has complex coherences
    assert np.abs(ours - master_equation_oracle(spec, rho0, 0.7)).max() > 1e-3


@pytest.mark.parametrize("seed", range(5))
def test_matches_master_equation_oracle(seed):
    spec = random_spec(100 + seed)
    r0 = basis_state(spec.dim, spec.initial_index)
    ours = propagate(liouvillian(spec), r0, 1.5).matrix()
    reference = master_equation_oracle(spec, r0.matrix(), 1.5)
    np.testing.assert_allclose(np.diagonal(ours).real, np.diagonal(reference).real, atol=1e-8)
    np.testing.assert_allclose(np.abs(ours), np.abs(reference), atol=1e-8)


def test_fmo_superoperator_shape():
    L = liouvillian(fmo_reference_spec())
    assert L.assembled.shape == (81, 81)
    assert len(L.energy_generators) == 7


def test_assembled_rebuild():
    spec = fmo_reference_spec(local_energies=H_REF)
    L = liouvillian(spec)
    rebuilt = L.fixed_part.toarray() + sum(h * Hn.toarray() for h, Hn in zip(H_REF, L.energy_generators))
    assert np.array_equal(L.assembled.toarray(), rebuilt)
    assert np.array_equal(L.with_energies(np.zeros(7)).assembled.toarray(), L.fixed_part.toarray())


def test_energy_generators_structure():
    d = 9
    for k in range(1, 8):
        Hk = energy_generator(d, k).toarray()
        nz = Hk[Hk != 0]
        assert nz.size == 2 * (d - 1)
        assert set(np.unique(nz.real)) == {-1.0, 1.0}
        assert np.count_nonzero(Hk - np.diag(np.diagonal(Hk))) == 0


@pytest.mark.parametrize("seed", range(5))
def test_trace_functional_is_left_null_vector(seed):
    spec = random_spec(seed)
    G = liouvillian(spec).dense_generator
    d = spec.dim
    one = np.eye(d).reshape(-1)
    assert np.abs(one @ G).max() < 1e-12


def test_propagate_zero_time_returns_input():
    L = liouvillian(fmo_reference_spec())
    r0 = basis_state(9, 1)
    assert propagate(L, r0, 0.0) is r0
    assert sink_population(r0) == 0.0


@pytest.mark.parametrize(
    ("gammas", "expected"),
    [(GAMMA_REF, 0.955), (1.0, 0.922), (0.0, 0.639)],
)
def test_fmo_unoptimized_sink_population(gammas, expected):
    spec = fmo_reference_spec(dephasing_rates=gammas)
    r = propagate(liouvillian(spec), basis_state(9, 1), 5.0)
    assert sink_population(r) == pytest.approx(expected, abs=0.01)


@pytest.mark.parametrize("seed", range(20))
def test_expm_matches_ode(seed):
    spec = random_spec(200 + seed)
    assert 5 <= spec.dim <= 12
    L = liouvillian(spec)
    r0 = basis_state(spec.dim, 1)
    a = propagate(L, r0, 2.0, method="expm")
    b = propagate(L, r0, 2.0, method="ode")
    assert np.abs(a.data - b.data).max() < 1e-6


def test_rk4_step_halving():
    spec = fmo_reference_spec(local_energies=H_REF)
    L = liouvillian(spec)
    r0 = basis_state(9, 1)
    a = propagate(L, r0, 5.0, method="ode")
    b = propagate(L, r0, 5.0, method="ode", theta=RK4_THETA / 2)
    assert rk4_step_count(L, 5.0, RK4_THETA / 2) >= 2 * rk4_step_count(L, 5.0) - 1
    assert np.abs(a.data - b.data).max() < 1e-8


def test_sparse_rk4_matches_expm():
    # a chain long enough to push the system onto the sparse stepping path
    spec = fmo_reference_spec()
    ext = extend_with_chain(spec, ChainSpec.matched_to_sink(spec, n_chain=26))
    L = liouvillian(ext)
    assert ext.dim**2 > 1024
    r0 = basis_state(ext.dim, 1)
    a = propagate(L, r0, 0.5, method="ode")
    b = propagate(L, r0, 0.5, method="expm")
    assert np.abs(a.data - b.data).max() < 1e-6


@pytest.mark.parametrize("method", ["expm", "ode"])
def test_trajectory_chaining_matches_direct(method):
    spec = fmo_reference_spec(local_energies=H_REF)
    L = liouvillian(spec)
    r0 = basis_state(9, 1)
    times = np.linspace(0, 5, 33)
    states = propagate_trajectory(L, r0, times, method=method)
    assert len(states) == len(times)
    for t, r in zip(times[::4], states[::4]):
        assert np.abs(r.data - propagate(L, r0, t, method=method).data).max() < 1e-8


def test_trajectory_single_time():
    L = liouvillian(fmo_reference_spec())
    r0 = basis_state(9, 1)
    assert propagate_trajectory(L, r0, [0.0]) == [r0]
    with pytest.raises(ValueError):
        propagate_trajectory(L, r0, [1.0, 0.5])


def test_sink_monotone_along_trajectory():
    spec = fmo_reference_spec(local_energies=[65.8, -11.1, -56.7, -36.0, -31.0, 55.7, 3.5])
    states = propagate_trajectory(liouvillian(spec), basis_state(9, 1), np.linspace(0, 5, 200))
    rs = np.array([sink_population(r) for r in states])
    assert np.all(np.diff(rs) >= -1e-12)


@pytest.mark.parametrize("seed", range(8))
def test_physicality_preserved(seed):
    spec = random_spec(300 + seed)
    r0 = vectorize(random_density(spec.dim, seed))
    states = propagate_trajectory(liouvillian(spec), r0, np.linspace(0, 10, 21))
    p0 = np.array([loss_population(r) for r in states])
    ps = np.array([sink_population(r) for r in states])
    for r in states:
        check = physicality(r)
        assert check["trace_error"] < 1e-9
        assert check["hermiticity_error"] < 1e-9
        assert check["min_eigenvalue"] >= -1e-8
        assert np.all(r.populations() >= -1e-9)
    # loss and sink are absorbing
    assert np.all(np.diff(p0) >= -1e-12)
    assert np.all(np.diff(ps) >= -1e-12)


@pytest.mark.parametrize("method", ["expm", "ode"])
def test_linearity(method):
    spec = random_spec(7)
    L = liouvillian(spec)
    r1 = random_density(spec.dim, 1).reshape(-1)
    r2 = random_density(spec.dim, 2).reshape(-1)
    alpha, beta = 0.3 - 0.2j, 1.7
    lhs = propagate(L, StateVector(alpha * r1 + beta * r2), 1.2, method=method).data
    rhs = alpha * propagate(L, StateVector(r1), 1.2, method=method).data + beta * propagate(
        L, StateVector(r2), 1.2, method=method
    ).data
    assert np.abs(lhs - rhs).max() < 1e-9


def test_unitary_case_keeps_purity():
    spec = random_spec(11, n=5).replace(
        dephasing_rates=np.zeros(5), loss_rates=np.zeros(5), sink_rate=0.0
    )
    L = liouvillian(spec)
    for r in propagate_trajectory(L, basis_state(spec.dim, 1), np.linspace(0, 3, 7)):
        rho = r.matrix()
        assert abs(np.trace(rho @ rho).real - 1) < 1e-9


def test_propagate_input_errors():
    L = liouvillian(fmo_reference_spec())
    with pytest.raises(ValueError):
        propagate(L, basis_state(9, 1), -1.0)
    with pytest.raises(ValueError):
        propagate(L, basis_state(5, 1), 1.0)
    with pytest.raises(ValueError):
        propagate(L, basis_state(9, 1), 1.0, method="euler")


def test_non_finite_state_raises():
    L = liouvillian(fmo_reference_spec())
    bad = np.zeros(81, dtype=complex)
    bad[10] = np.nan
    with pytest.raises((ValueError, NumericalError)):
        propagate(L, StateVector(bad), 1.0)


def test_non_hermitian_hamiltonian_rejected():
    H = np.array([[0, 1], [0, 0]], dtype=complex)
    with pytest.raises(ValueError):
        assemble(H, [], hbar=1.0)


def test_l1_coherence_examples():
    assert l1_coherence(np.diag([0.2, 0.3, 0.5])) == 0.0
    psi = np.zeros(9)
    psi[[1, 8]] = 1.0
    rho = pure_state(psi).matrix()
    assert l1_coherence(rho) == pytest.approx(1.0)
    assert site_coherence(rho, 8) == pytest.approx(0.5)
    assert site_coherence(np.diag([0.5, 0.5]), 1) == 0.0


@pytest.mark.parametrize("seed", range(10))
def test_coherence_symmetry_and_bounds(seed):
    rng = np.random.default_rng(seed)
    rho = pure_state(rng.normal(size=8) + 1j * rng.normal(size=8)).matrix()
    upper = np.abs(rho[np.triu_indices(8, 1)]).sum()
    assert l1_coherence(rho) == pytest.approx(2 * upper, rel=1e-14)
    C = l1_coherence(rho)
    for k in range(8):
        assert 0 <= site_coherence(rho, k) <= C + 1e-12


def test_chain_population_and_conservation():
    spec = fmo_reference_spec(dephasing_rates=0.0)
    ext = extend_with_chain(spec, ChainSpec.matched_to_sink(spec, n_chain=12))
    L = liouvillian(ext)
    states = propagate_trajectory(L, basis_state(ext.dim, 1), np.linspace(0, 10, 11))
    assert chain_population(states[0], ext.chain_indices) == 0.0
    for r in states:
        p_c = chain_population(r, ext.chain_indices)
        pops = r.populations()
        assert -1e-12 <= p_c <= 1 + 1e-12
        total = p_c + pops[list(ext.network_indices)].sum() + pops[ext.extra_index] + loss_population(r)
        assert abs(total - 1) < 1e-8


def test_trajectory_rows_columns():
    spec = fmo_reference_spec()
    times = [0.0, 1.0]
    states = propagate_trajectory(liouvillian(spec), basis_state(9, 1), times)
    rows = trajectory_rows(spec, times, states)
    assert list(rows[0]) == ["t", "r_s", "p_loss"] + [f"p{n}" for n in range(1, 8)]
    assert rows[0]["p1"] == 1.0 and rows[0]["r_s"] == 0.0

    ext = extend_with_chain(spec, ChainSpec.matched_to_sink(spec, n_chain=4))
    psi = np.zeros(ext.dim)
    psi[[1, ext.extra_index]] = 1.0
    r0 = pure_state(psi)
    rows = trajectory_rows(ext, [0.0], [r0])
    assert rows[0]["C"] == pytest.approx(1.0)
    assert rows[0]["C_8"] == pytest.approx(0.5)
    assert rows[0]["p_C"] == 0.0
