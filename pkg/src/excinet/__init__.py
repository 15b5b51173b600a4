"""Excitation transfer on fully connected open quantum networks."""

from .liouville import (
    NumericalError,
    StateVector,
    SuperOperator,
    assemble,
    basis_state,
    chain_population,
    devectorize,
    l1_coherence,
    liouvillian,
    propagate,
    propagate_trajectory,
    site_coherence,
    sink_population,
    vectorize,
)
from .network import (
    GAMMA_REF,
    H_REF,
    ChainSpec,
    ExtendedSpec,
    JumpKind,
    JumpOperator,
    NetworkSpec,
    SpecError,
    build_hamiltonian,
    build_jump_operators,
    extend_with_chain,
    fmo_reference_spec,
    random_couplings,
    remove_node,
)
from .optimize import (
    OptimizationResult,
    OptimizerConfig,
    OptimizerDivergence,
    cost,
    gradient,
    rmsprop_minimize,
)

__version__ = "0.1.0"
