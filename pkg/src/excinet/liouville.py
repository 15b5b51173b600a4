"""Vectorized Lindblad dynamics.

Density matrices are flattened row-major, ``r = (rho_00, rho_01, ..., rho_dd)``,
and the generator is written in the Kronecker form

    L = (I (x) H_I - H_I^T (x) I) + sum_n h_n H_n + i hbar sum_mu D_mu,

    D_mu = conj(L_mu) (x) L_mu - 1/2 (I (x) L_mu^+ L_mu + (L_mu^+ L_mu)^T (x) I),

with ``r(t) = exp(-(i/hbar) t L) r(0)``. Under row-major flattening this
produces the complex-conjugate picture of the textbook master equation:
populations and coherence magnitudes are identical, phases are mirrored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .network import ExtendedSpec, JumpOperator, NetworkSpec, build_hamiltonian, build_jump_operators

# RK4 step is chosen so that dt * ||G||_1 <= RK4_THETA
RK4_THETA = 0.025
# superoperators up to this size are exponentiated densely under method="auto"
DENSE_LIMIT = 1024


class NumericalError(RuntimeError):
    """Propagation produced non-finite values."""


@dataclass(frozen=True, eq=False)
class StateVector:
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=complex).reshape(-1)
        d = math.isqrt(data.size)
        if d * d != data.size or d == 0:
            raise ValueError(f"state vector length {data.size} is not a perfect square")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def dim(self) -> int:
        return math.isqrt(self.data.size)

    def matrix(self) -> np.ndarray:
        return devectorize(self)

    def trace(self) -> complex:
        return complex(self.data[:: self.dim + 1].sum())

    def populations(self) -> np.ndarray:
        return self.data[:: self.dim + 1].real.copy()


def vectorize(rho) -> StateVector:
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {rho.shape}")
    return StateVector(rho.reshape(-1))


def devectorize(r: StateVector) -> np.ndarray:
    return r.data.reshape(r.dim, r.dim).copy()


def basis_state(dim: int, k: int) -> StateVector:
    """The pure state ``|k><k|``."""
    rho = np.zeros((dim, dim), dtype=complex)
    rho[k, k] = 1.0
    return vectorize(rho)


def pure_state(psi) -> StateVector:
    psi = np.asarray(psi, dtype=complex)
    psi = psi / np.linalg.norm(psi)
    return vectorize(np.outer(psi, psi.conj()))


@dataclass(frozen=True, eq=False)
class SuperOperator:
    """Vectorized Lindbladian split into an energy-independent part and
    one generator per tunable site energy.

    ``fixed_part`` and ``energy_generators`` are in energy units (the form that
    multiplies ``-(i/hbar) t`` in the propagator).
    """

    dim: int
    hbar: float
    fixed_part: sp.csr_matrix
    energy_generators: tuple
    energy_sites: tuple
    energies: np.ndarray

    @cached_property
    def assembled(self) -> sp.csr_matrix:
        out = self.fixed_part.copy()
        for h, Hn in zip(self.energies, self.energy_generators):
            if h != 0.0:
                out = out + h * Hn
        return out.tocsr()

    @cached_property
    def energy_diagonals(self) -> np.ndarray:
        """Diagonals of the (diagonal) energy generators, shape ``(N, d^2)``."""
        return np.array([Hn.diagonal().real for Hn in self.energy_generators]).reshape(-1, self.dim**2)

    def generator(self) -> sp.csr_matrix:
        """``-(i/hbar) L``, the matrix in ``dr/dt = G r``."""
        return (-1j / self.hbar) * self.assembled

    @cached_property
    def dense_generator(self) -> np.ndarray:
        return self.generator().toarray()

    @cached_property
    def generator_norm(self) -> float:
        G = self.generator()
        return float(abs(G).sum(axis=0).max()) if G.nnz else 0.0

    def with_energies(self, h) -> SuperOperator:
        h = np.array(h, dtype=float).reshape(-1)
        if h.shape != (len(self.energy_generators),):
            raise ValueError(f"expected {len(self.energy_generators)} energies, got {h.size}")
        if not np.all(np.isfinite(h)):
            raise ValueError("energies must be finite")
        h.setflags(write=False)
        return replace(self, energies=h)


def _projector(dim: int, k: int) -> sp.csr_matrix:
    return sp.csr_matrix(([1.0], ([k], [k])), shape=(dim, dim))


def energy_generator(dim: int, k: int) -> sp.csr_matrix:
    """``I (x) |k><k| - |k><k| (x) I``: diagonal, 2(d-1) entries equal to +-1."""
    P = _projector(dim, k)
    I = sp.identity(dim, format="csr")
    out = (sp.kron(I, P) - sp.kron(P, I)).tocsr()
    out.eliminate_zeros()
    return out


def assemble(H, jumps, hbar: float, energy_sites=None) -> SuperOperator:
    """Build the vectorized Lindbladian of ``H`` and ``jumps``.

    The diagonal entries of ``H`` at ``energy_sites`` (default: every index
    except the first and last, i.e. the network sites) are moved into the
    energy generators so they can be changed without reassembly.
    """
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"Hamiltonian must be square, got shape {H.shape}")
    d = H.shape[0]
    scale = max(1.0, float(np.abs(H).max()))
    if np.abs(H - H.conj().T).max() > 1e-12 * scale:
        raise ValueError("Hamiltonian is not Hermitian")
    if hbar <= 0:
        raise ValueError("hbar must be positive")
    if energy_sites is None:
        energy_sites = tuple(range(1, d - 1))
    energy_sites = tuple(int(k) for k in energy_sites)

    energies = np.array([H[k, k].real for k in energy_sites])
    H_I = H.copy()
    for k in energy_sites:
        H_I[k, k] = 0.0
    H_I = sp.csr_matrix(H_I)
    I = sp.identity(d, format="csr")
    fixed = sp.kron(I, H_I) - sp.kron(H_I.T, I)

    dissipator = sp.csr_matrix((d * d, d * d), dtype=complex)
    for jump in jumps:
        Lm = jump.matrix if isinstance(jump, JumpOperator) else np.asarray(jump)
        if Lm.shape != (d, d):
            raise ValueError(f"jump operator shape {Lm.shape} does not match dimension {d}")
        Lm = sp.csr_matrix(Lm, dtype=complex)
        LdL = (Lm.conj().T @ Lm).tocsr()
        dissipator = dissipator + sp.kron(Lm.conj(), Lm) - 0.5 * (sp.kron(I, LdL) + sp.kron(LdL.T, I))
    fixed = (fixed + 1j * hbar * dissipator).tocsr()
    fixed.eliminate_zeros()

    energies.setflags(write=False)
    return SuperOperator(
        dim=d,
        hbar=float(hbar),
        fixed_part=fixed,
        energy_generators=tuple(energy_generator(d, k) for k in energy_sites),
        energy_sites=energy_sites,
        energies=energies,
    )


def liouvillian(spec: NetworkSpec | ExtendedSpec) -> SuperOperator:
    return assemble(
        build_hamiltonian(spec),
        build_jump_operators(spec),
        spec.hbar,
        energy_sites=spec.network_indices,
    )


def _resolve_method(L: SuperOperator, method: str) -> str:
    method = method.lower()
    if method == "auto":
        return "expm" if L.dim**2 <= DENSE_LIMIT else "ode"
    if method not in ("expm", "ode"):
        raise ValueError(f"unknown propagation method {method!r}")
    return method


def _check_finite(r: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(r)):
        raise NumericalError("propagation produced non-finite values")
    return r


def rk4_step_count(L: SuperOperator, t: float, theta: float = RK4_THETA) -> int:
    return max(1, math.ceil(t * L.generator_norm / theta))


class _RK4:
    """Fixed-step classical RK4 for ``dr/dt = G r``.

    Dense generators use the equivalent one-matrix form
    ``r <- (I + X + X^2/2 + X^3/6 + X^4/24) r`` with ``X = dt G``.
    """

    def __init__(self, L: SuperOperator, theta: float = RK4_THETA):
        self.L = L
        self.theta = theta
        self.dense = L.dim**2 <= DENSE_LIMIT
        self.G = L.dense_generator if self.dense else L.generator()
        self._poly = {}

    def _step_matrix(self, dt: float) -> np.ndarray:
        P = self._poly.get(dt)
        if P is None:
            X = dt * self.G
            P = np.eye(X.shape[0], dtype=complex)
            term = np.eye(X.shape[0], dtype=complex)
            for k in range(1, 5):
                term = term @ X / k
                P = P + term
            self._poly[dt] = P
        return P

    def advance(self, r: np.ndarray, t: float) -> np.ndarray:
        if t == 0:
            return r
        n = rk4_step_count(self.L, t, self.theta)
        dt = t / n
        if self.dense:
            P = self._step_matrix(dt)
            for _ in range(n):
                r = P @ r
            return r
        G = self.G
        for _ in range(n):
            k1 = G @ r
            k2 = G @ (r + 0.5 * dt * k1)
            k3 = G @ (r + 0.5 * dt * k2)
            k4 = G @ (r + dt * k3)
            r = r + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return r


def _check_time(t: float) -> float:
    t = float(t)
    if not np.isfinite(t) or t < 0:
        raise ValueError(f"time must be finite and nonnegative, got {t}")
    return t


def propagate(L: SuperOperator, r0: StateVector, t: float, method: str = "auto", theta: float = RK4_THETA) -> StateVector:
    """Evolve ``r0`` for a time ``t`` (ps)."""
    t = _check_time(t)
    if r0.dim != L.dim:
        raise ValueError(f"state dimension {r0.dim} does not match superoperator dimension {L.dim}")
    if not np.all(np.isfinite(r0.data)):
        raise ValueError("initial state has non-finite entries")
    if t == 0:
        return r0
    if _resolve_method(L, method) == "expm":
        r = scipy.linalg.expm(t * L.dense_generator) @ r0.data
    else:
        r = _RK4(L, theta).advance(r0.data, t)
    return StateVector(_check_finite(r))


def propagate_trajectory(
    L: SuperOperator, r0: StateVector, times, method: str = "auto", theta: float = RK4_THETA
) -> list[StateVector]:
    """States at each of ``times`` by chaining propagation over the increments."""
    times = np.asarray(times, dtype=float).reshape(-1)
    if times.size == 0:
        return []
    if np.any(~np.isfinite(times)) or times[0] < 0:
        raise ValueError("times must be finite and nonnegative")
    if np.any(np.diff(times) < 0):
        raise ValueError("times must be sorted ascending")
    if r0.dim != L.dim:
        raise ValueError(f"state dimension {r0.dim} does not match superoperator dimension {L.dim}")

    method = _resolve_method(L, method)
    if method == "ode":
        stepper = _RK4(L, theta)
    else:
        G = L.dense_generator
        cache = {}

    out = []
    r = r0.data
    previous = 0.0
    for t in times:
        dt = t - previous
        if dt > 0:
            if method == "ode":
                r = stepper.advance(r, dt)
            else:
                # uniform grids hit the same increment up to rounding
                key = round(dt, 12)
                U = cache.get(key)
                if U is None:
                    U = cache[key] = scipy.linalg.expm(dt * G)
                r = U @ r
            _check_finite(r)
        out.append(r0 if t == 0 else StateVector(r))
        previous = t
    return out


def sink_population(r: StateVector, index: int | None = None) -> float:
    """Population of the sink state (the last basis state by default)."""
    k = r.dim - 1 if index is None else index
    return float(r.data[k * r.dim + k].real)


def loss_population(r: StateVector) -> float:
    return float(r.data[0].real)


def chain_population(r: StateVector, chain_indices) -> float:
    pops = r.populations()
    return float(pops[list(chain_indices)].sum())


def l1_coherence(rho) -> float:
    """Sum of the magnitudes of all off-diagonal entries."""
    rho = np.asarray(rho)
    return float(np.abs(rho).sum() - np.abs(np.diagonal(rho)).sum())


def site_coherence(rho, k: int, sites=None) -> float:
    """``sum_j |rho_kj| - rho_kk`` with ``j`` over ``sites`` (default: all)."""
    rho = np.asarray(rho)
    d = rho.shape[0]
    if not 0 <= k < d:
        raise IndexError(f"site index {k} outside 0..{d - 1}")
    row = rho[k] if sites is None else rho[k, list(sites)]
    return float(np.abs(row).sum() - rho[k, k].real)


def physicality(r: StateVector) -> dict:
    """Trace, Hermiticity and positivity diagnostics of a state."""
    rho = r.matrix()
    herm = np.abs(rho - rho.conj().T).max()
    eig = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    return {
        "trace_error": abs(r.trace() - 1.0),
        "hermiticity_error": float(herm),
        "min_eigenvalue": float(eig.min()),
    }


def trajectory_rows(spec: NetworkSpec | ExtendedSpec, times, states) -> list[dict]:
    """Rows for the trajectory export: ``t, r_s, p_loss, p1..pN[, p_C, C, C_8]``.

    Chain-extended instances have no sink state, so ``r_s`` is reported as 0.
    """
    extended = isinstance(spec, ExtendedSpec)
    rows = []
    for t, r in zip(times, states):
        pops = r.populations()
        row = {
            "t": float(t),
            "r_s": 0.0 if extended else float(pops[-1]),
            "p_loss": float(pops[0]),
        }
        for n in spec.network_indices:
            row[f"p{n}"] = float(pops[n])
        if extended:
            rho = r.matrix()
            row["p_C"] = float(pops[list(spec.chain_indices)].sum())
            row["C"] = l1_coherence(rho)
            k = spec.extra_index
            row["C_8"] = site_coherence(rho, k, sites=range(1, spec.dim)) if k is not None else 0.0
        rows.append(row)
    return rows
