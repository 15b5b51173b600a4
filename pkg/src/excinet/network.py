"""Network models for single-excitation transport on fully connected networks.

Basis ordering for a plain network of ``N`` sites is ``[|0>, |1>, ..., |N>, |s>]``:
index 0 is the loss state, indices ``1..N`` are the sites (so a 1-based site label
is also its basis index) and the last index is the sink.

Chain-extended instances use ``[|0>, |1..N>, |8>, |s_0>, ..., |s_{N_C-1}>]``, the
extra site being optional.

Energies are in units of 1.2414e-4 eV, times in ps and rates in 1/ps.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass

import numpy as np

# 6.582119569e-4 eV ps expressed in energy units; the calibrated default is HBAR_CM
HBAR_EV = 5.3022
HBAR_CM = 5.3088
HBAR_DEFAULT = HBAR_CM
# Lindblad operators are built as sqrt(rate_factor * rate) * |a><b|
RATE_FACTOR_DEFAULT = 2.0

FMO_COUPLINGS = np.array(
    [
        [0.0, -104.1, 5.1, -4.3, 4.7, -15.1, -7.8],
        [-104.1, 0.0, 32.6, 7.1, 5.4, 8.3, 0.8],
        [5.1, 32.6, 0.0, -46.8, 1.0, -8.1, 5.1],
        [-4.3, 7.1, -46.8, 0.0, -70.7, -14.7, -61.5],
        [4.7, 5.4, 1.0, -70.7, 0.0, 89.7, -2.5],
        [-15.1, 8.3, -8.1, -14.7, 89.7, 0.0, 32.7],
        [-7.8, 0.8, 5.1, -61.5, -2.5, 32.7, 0.0],
    ]
)
FMO_COUPLINGS.setflags(write=False)

H_REF = (215.0, 220.0, 0.0, 125.0, 450.0, 330.0, 280.0)
GAMMA_REF = (0.157, 9.432, 7.797, 9.432, 7.797, 0.922, 9.433)
FMO_LOSS_RATE = 5e-4
FMO_SINK_RATE = 6.283


class SpecError(ValueError):
    """Raised for an inconsistent network description."""


def _frozen_vector(values, n: int, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    if arr.shape != (n,):
        raise SpecError(f"{name}: expected {n} entries, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise SpecError(f"{name}: entries must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    """A complete network instance.

    ``sink_sites`` and ``initial_site`` are 1-based site labels. ``rate_factor``
    scales every rate inside the jump amplitudes (2 reproduces the reference
    FMO results, 1 is the bare Lindblad form).
    """

    couplings: np.ndarray
    local_energies: np.ndarray
    dephasing_rates: np.ndarray
    loss_rates: np.ndarray
    sink_rate: float
    sink_sites: tuple[int, ...]
    initial_site: int
    hbar: float = HBAR_DEFAULT
    rate_factor: float = RATE_FACTOR_DEFAULT

    def __post_init__(self):
        J = np.array(self.couplings, dtype=float)
        if J.ndim != 2 or J.shape[0] != J.shape[1]:
            raise SpecError(f"couplings: expected a square matrix, got shape {J.shape}")
        n = J.shape[0]
        if n < 1:
            raise SpecError("couplings: network needs at least one site")
        if not np.all(np.isfinite(J)):
            raise SpecError("couplings: entries must be finite")
        if not np.array_equal(J, J.T):
            raise SpecError("couplings: matrix is not symmetric")
        if np.any(np.diag(J) != 0.0):
            raise SpecError("couplings: diagonal must be zero")
        J.setflags(write=False)
        set_ = object.__setattr__
        set_(self, "couplings", J)
        set_(self, "local_energies", _frozen_vector(self.local_energies, n, "local_energies"))
        set_(self, "dephasing_rates", _frozen_vector(self.dephasing_rates, n, "dephasing_rates"))
        set_(self, "loss_rates", _frozen_vector(self.loss_rates, n, "loss_rates"))
        if np.any(self.dephasing_rates < 0):
            raise SpecError("dephasing_rates: must be nonnegative")
        if np.any(self.loss_rates < 0):
            raise SpecError("loss_rates: must be nonnegative")

        sink_rate = float(self.sink_rate)
        if not np.isfinite(sink_rate) or sink_rate < 0:
            raise SpecError("sink_rate: must be a nonnegative finite number")
        set_(self, "sink_rate", sink_rate)

        sinks = tuple(int(m) for m in np.atleast_1d(self.sink_sites))
        if not sinks:
            raise SpecError("sink_sites: at least one sink site is required")
        if len(set(sinks)) != len(sinks):
            raise SpecError(f"sink_sites: duplicate entries in {sinks}")
        for m in sinks:
            if not 1 <= m <= n:
                raise SpecError(f"sink_sites: site {m} outside 1..{n}")
        set_(self, "sink_sites", tuple(sorted(sinks)))

        init = int(self.initial_site)
        if not 1 <= init <= n:
            raise SpecError(f"initial_site: site {init} outside 1..{n}")
        set_(self, "initial_site", init)

        for name in ("hbar", "rate_factor"):
            value = float(getattr(self, name))
            if not np.isfinite(value) or value <= 0:
                raise SpecError(f"{name}: must be positive")
            set_(self, name, value)

    @property
    def n_sites(self) -> int:
        return self.couplings.shape[0]

    @property
    def dim(self) -> int:
        return self.n_sites + 2

    @property
    def network_indices(self) -> tuple[int, ...]:
        return tuple(range(1, self.n_sites + 1))

    @property
    def sink_index(self) -> int:
        return self.n_sites + 1

    @property
    def initial_index(self) -> int:
        return self.initial_site

    def replace(self, **changes) -> NetworkSpec:
        return dataclasses.replace(self, **changes)

    def with_energies(self, h) -> NetworkSpec:
        return self.replace(local_energies=h)

    def with_dephasing(self, gammas) -> NetworkSpec:
        gammas = np.broadcast_to(np.asarray(gammas, dtype=float), (self.n_sites,))
        return self.replace(dephasing_rates=gammas)

    def __eq__(self, other):
        if not isinstance(other, NetworkSpec):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, f.name), getattr(other, f.name))
            for f in dataclasses.fields(self)
        )

    __hash__ = None


@dataclass(frozen=True)
class ChainSpec:
    """Nearest-neighbour chain used as a unitary effective sink."""

    n_chain: int
    chain_coupling: float
    bridge_coupling: float
    extra_site: bool = True

    def __post_init__(self):
        if int(self.n_chain) < 1:
            raise SpecError("n_chain: chain needs at least one spin")
        object.__setattr__(self, "n_chain", int(self.n_chain))
        for name in ("chain_coupling", "bridge_coupling"):
            value = float(getattr(self, name))
            if not np.isfinite(value):
                raise SpecError(f"{name}: must be finite")
            object.__setattr__(self, name, value)

    @classmethod
    def matched_to_sink(cls, spec: NetworkSpec, n_chain: int = 80, extra_site: bool = True) -> ChainSpec:
        """Bridge coupling ``hbar * sink_rate`` and chain coupling twice that."""
        bridge = spec.hbar * spec.sink_rate
        return cls(n_chain=n_chain, chain_coupling=2.0 * bridge, bridge_coupling=bridge, extra_site=extra_site)


@dataclass(frozen=True, eq=False)
class ExtendedSpec:
    """A network whose sink site is attached to a chain instead of a sink state."""

    network: NetworkSpec
    chain: ChainSpec

    @property
    def hbar(self) -> float:
        return self.network.hbar

    @property
    def n_sites(self) -> int:
        return self.network.n_sites

    @property
    def dim(self) -> int:
        return 1 + self.n_sites + int(self.chain.extra_site) + self.chain.n_chain

    @property
    def network_indices(self) -> tuple[int, ...]:
        return self.network.network_indices

    @property
    def extra_index(self) -> int | None:
        return self.n_sites + 1 if self.chain.extra_site else None

    @property
    def chain_indices(self) -> tuple[int, ...]:
        start = 1 + self.n_sites + int(self.chain.extra_site)
        return tuple(range(start, start + self.chain.n_chain))

    @property
    def attach_site(self) -> int:
        return self.network.sink_sites[0]


class JumpKind(enum.Enum):
    DEPHASING = "dephasing"
    LOSS = "loss"
    SINK = "sink"


@dataclass(frozen=True)
class JumpOperator:
    """Single-entry Lindblad operator ``sqrt(rate) |target><source|``."""

    kind: JumpKind
    site: int
    rate: float
    dim: int
    target: int
    source: int

    @property
    def matrix(self) -> np.ndarray:
        L = np.zeros((self.dim, self.dim), dtype=complex)
        L[self.target, self.source] = np.sqrt(self.rate)
        return L


def build_hamiltonian(spec: NetworkSpec | ExtendedSpec) -> np.ndarray:
    """Full Hamiltonian ``H_D + H_I`` embedded in the enlarged Hilbert space."""
    if isinstance(spec, ExtendedSpec):
        return _extended_hamiltonian(spec)
    H = np.zeros((spec.dim, spec.dim), dtype=complex)
    net = slice(1, spec.n_sites + 1)
    H[net, net] = spec.couplings + np.diag(spec.local_energies)
    return H


def _extended_hamiltonian(ext: ExtendedSpec) -> np.ndarray:
    net = ext.network
    H = np.zeros((ext.dim, ext.dim), dtype=complex)
    sl = slice(1, net.n_sites + 1)
    H[sl, sl] = net.couplings + np.diag(net.local_energies)
    chain = ext.chain_indices
    a = ext.attach_site
    H[a, chain[0]] = H[chain[0], a] = ext.chain.bridge_coupling
    for j, k in zip(chain[:-1], chain[1:]):
        H[j, k] = H[k, j] = ext.chain.chain_coupling
    return H


def build_jump_operators(spec: NetworkSpec | ExtendedSpec) -> list[JumpOperator]:
    """Dephasing, loss and sink-transfer operators; zero rates are omitted.

    For a chain-extended instance the sink operator is dropped and the
    environment acts only on the original network sites.
    """
    net = spec.network if isinstance(spec, ExtendedSpec) else spec
    d = spec.dim
    f = net.rate_factor
    ops = []
    for n, gamma in zip(net.network_indices, net.dephasing_rates):
        if gamma > 0:
            ops.append(JumpOperator(JumpKind.DEPHASING, n, f * gamma, d, n, n))
    for n, loss in zip(net.network_indices, net.loss_rates):
        if loss > 0:
            ops.append(JumpOperator(JumpKind.LOSS, n, f * loss, d, 0, n))
    if not isinstance(spec, ExtendedSpec) and net.sink_rate > 0:
        for m in net.sink_sites:
            ops.append(JumpOperator(JumpKind.SINK, m, f * net.sink_rate, d, net.sink_index, m))
    return ops


def fmo_reference_spec(
    local_energies=None,
    dephasing_rates=GAMMA_REF,
    hbar: float = HBAR_DEFAULT,
    rate_factor: float = RATE_FACTOR_DEFAULT,
) -> NetworkSpec:
    """Seven-site FMO network: sink on site 3, excitation injected on site 1."""
    n = FMO_COUPLINGS.shape[0]
    return NetworkSpec(
        couplings=FMO_COUPLINGS,
        local_energies=np.zeros(n) if local_energies is None else local_energies,
        dephasing_rates=np.broadcast_to(np.asarray(dephasing_rates, dtype=float), (n,)),
        loss_rates=np.full(n, FMO_LOSS_RATE),
        sink_rate=FMO_SINK_RATE,
        sink_sites=(3,),
        initial_site=1,
        hbar=hbar,
        rate_factor=rate_factor,
    )


def random_couplings(n: int, lo: float = -200.0, hi: float = 200.0, seed=0) -> np.ndarray:
    """Symmetric zero-diagonal matrix with i.i.d. uniform upper-triangular entries.

    ``seed`` is anything accepted by :func:`numpy.random.default_rng`.
    """
    if n < 2:
        raise SpecError(f"random_couplings: need n >= 2, got {n}")
    if not lo < hi:
        raise SpecError(f"random_couplings: need lo < hi, got [{lo}, {hi}]")
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n, k=1)
    J = np.zeros((n, n))
    J[iu] = rng.uniform(lo, hi, size=iu[0].size)
    return J + J.T


def remove_node(spec: NetworkSpec, node: int) -> NetworkSpec:
    """Delete one site (not the input or an output node) and relabel the rest."""
    n = spec.n_sites
    if not 1 <= node <= n:
        raise SpecError(f"remove_node: site {node} outside 1..{n}")
    if node == spec.initial_site or node in spec.sink_sites:
        raise SpecError(f"remove_node: site {node} is the input or an output node")
    if n < 4:
        raise SpecError("remove_node: the network must keep at least 3 sites")
    keep = [k for k in range(n) if k != node - 1]

    def relabel(m: int) -> int:
        return m - 1 if m > node else m

    return spec.replace(
        couplings=spec.couplings[np.ix_(keep, keep)],
        local_energies=spec.local_energies[keep],
        dephasing_rates=spec.dephasing_rates[keep],
        loss_rates=spec.loss_rates[keep],
        sink_sites=tuple(relabel(m) for m in spec.sink_sites),
        initial_site=relabel(spec.initial_site),
    )


def extend_with_chain(spec: NetworkSpec, chain: ChainSpec) -> ExtendedSpec:
    if len(spec.sink_sites) != 1:
        raise SpecError("extend_with_chain: the chain attaches to a single sink site")
    if chain.extra_site and spec.n_sites != 7:
        raise SpecError("extend_with_chain: the extra site |8> is only defined for 7-site networks")
    return ExtendedSpec(network=spec, chain=chain)
