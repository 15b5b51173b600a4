"""Sink-population cost, its exact gradient in the site energies, and RMSprop.

The cost is ``C(h) = 1 - r_s(T)`` with ``r_s(T) = s^T exp(A(h)) r0`` and
``A(h) = -(i/hbar) T (L_fixed + sum_n h_n H_n)``. Derivatives of the matrix
exponential come from the block-triangular identity

    exp([[A, E], [0, A]]) = [[exp(A), Dexp_A[E]], [0, exp(A)]].
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .liouville import NumericalError, SuperOperator, liouvillian
from .network import NetworkSpec

log = logging.getLogger(__name__)

GRADIENT_METHODS = ("adjoint", "direct", "frechet")


class OptimizerDivergence(RuntimeError):
    """The optimizer left the numerically sane region."""


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1.0
    decay: float = 0.9
    epsilon: float = 1e-8
    max_iters: int = 2000
    target_cost: float | None = None
    seed: int = 0
    # stop once the best r_s has not improved by min_improvement for this many iterations
    patience: int | None = None
    min_improvement: float = 1e-7
    gradient_method: str = "adjoint"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.decay < 1:
            raise ValueError("decay must lie in (0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be a positive integer")
        if self.patience is not None and int(self.patience) < 1:
            raise ValueError("patience must be a positive integer")
        if self.min_improvement < 0:
            raise ValueError("min_improvement must be nonnegative")
        if self.gradient_method not in GRADIENT_METHODS:
            raise ValueError(f"gradient_method must be one of {GRADIENT_METHODS}")


@dataclass
class OptimizationResult:
    h_opt: np.ndarray
    learning_curve: list[tuple[int, float]]
    final_cost: float
    gradient_norm_final: float
    best_iteration: int = 0
    stop_reason: str = "max_iters"
    h_history: list = field(default_factory=list, repr=False)

    @property
    def r_s(self) -> float:
        return 1.0 - self.final_cost


class SinkObjective:
    """Final sink population ``r_s(T)`` as a function of the site energies.

    The energy-independent part of the generator is built once; each
    evaluation only adds the diagonal energy terms.
    """

    def __init__(self, spec: NetworkSpec, T: float, L: SuperOperator | None = None):
        T = float(T)
        if not (np.isfinite(T) and T > 0):
            raise ValueError(f"evolution time must be positive, got {T}")
        self.spec = spec
        self.T = T
        self.L = liouvillian(spec) if L is None else L
        d2 = self.L.dim**2
        self.n_params = len(self.L.energy_generators)
        self.r0 = np.zeros(d2, dtype=complex)
        self.r0[spec.initial_index * (self.L.dim + 1)] = 1.0
        self.target = spec.sink_index * (self.L.dim + 1)
        # T * dA/dh_n; all energy generators are diagonal
        self._dA = (-1j * T / self.L.hbar) * self.L.energy_diagonals
        self._A0 = (-1j * T / self.L.hbar) * self.L.fixed_part.toarray()
        self.has_sink = spec.sink_rate > 0

    def _check(self, h) -> np.ndarray:
        h = np.asarray(h, dtype=float).reshape(-1)
        if h.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} energies, got {h.size}")
        if not np.all(np.isfinite(h)):
            raise ValueError("energies must be finite")
        return h

    def generator_matrix(self, h) -> np.ndarray:
        """``A(h) = -(i/hbar) T L(h)`` as a dense matrix."""
        h = self._check(h)
        A = self._A0.copy()
        A[np.diag_indices_from(A)] += h @ self._dA
        return A

    def value(self, h) -> float:
        h = self._check(h)
        if not self.has_sink:
            return 0.0
        r = scipy.linalg.expm(self.generator_matrix(h)) @ self.r0
        if not np.all(np.isfinite(r)):
            raise NumericalError("non-finite state in cost evaluation")
        return float(r[self.target].real)

    def value_and_gradient(self, h, method: str = "adjoint") -> tuple[float, np.ndarray]:
        """``r_s(T)`` and its gradient with respect to ``h``.

        ``adjoint``: one block exponential giving ``d r_s / dA`` in full,
        ``Dexp_{A^T}[s r0^T]``, contracted with each ``dA/dh_n``.
        ``direct``: one block exponential ``[[A, dA/dh_n], [0, A]]`` per site.
        ``frechet``: the adjoint contraction with scipy's ``expm_frechet``.
        """
        h = self._check(h)
        n = self.n_params
        if not self.has_sink:
            return 0.0, np.zeros(n)
        A = self.generator_matrix(h)
        D = A.shape[0]
        if method == "direct":
            U = scipy.linalg.expm(A)
            value = (U @ self.r0)[self.target].real
            grad = np.empty(n)
            M = np.zeros((2 * D, 2 * D), dtype=complex)
            M[:D, :D] = A
            M[D:, D:] = A
            for k in range(n):
                M[:D, D:] = np.diag(self._dA[k])
                E = scipy.linalg.expm(M)
                grad[k] = (E[self.target, D:] @ self.r0).real
        elif method in ("adjoint", "frechet"):
            direction = np.zeros((D, D), dtype=complex)
            direction[self.target] = self.r0
            if method == "adjoint":
                M = np.zeros((2 * D, 2 * D), dtype=complex)
                M[:D, :D] = A.T
                M[D:, D:] = A.T
                M[:D, D:] = direction
                E = scipy.linalg.expm(M)
                UT, G = E[:D, :D], E[:D, D:]
            else:
                UT, G = scipy.linalg.expm_frechet(A.T, direction)
            value = (UT.T @ self.r0)[self.target].real
            grad = (self._dA @ np.diagonal(G)).real
        else:
            raise ValueError(f"unknown gradient method {method!r}")
        if not (np.isfinite(value) and np.all(np.isfinite(grad))):
            raise NumericalError("non-finite value or gradient")
        return float(value), grad


def cost(h, spec: NetworkSpec, T: float) -> float:
    """``1 - r_s(T)`` for site energies ``h``."""
    return 1.0 - SinkObjective(spec, T).value(h)


def gradient(h, spec: NetworkSpec, T: float, method: str = "adjoint") -> np.ndarray:
    """Gradient of the cost ``1 - r_s(T)`` with respect to ``h``."""
    _, g = SinkObjective(spec, T).value_and_gradient(h, method=method)
    return -g


def rmsprop_minimize(
    spec: NetworkSpec,
    T: float,
    config: OptimizerConfig | None = None,
    h0=None,
    objective: SinkObjective | None = None,
    record_history: bool = False,
) -> OptimizationResult:
    """Minimise ``1 - r_s(T)`` over the site energies with RMSprop.

    Every iteration evaluates the current energies, records ``r_s`` in the
    learning curve and then takes one step. The best evaluated energies are
    returned.
    """
    config = config or OptimizerConfig()
    obj = objective or SinkObjective(spec, T)
    h = np.zeros(obj.n_params) if h0 is None else np.array(h0, dtype=float).reshape(-1)
    if h.shape != (obj.n_params,):
        raise ValueError(f"h0 must have {obj.n_params} entries")

    v = np.zeros_like(h)
    curve = []
    history = []
    best_value, best_h, best_at, best_grad = -np.inf, h.copy(), 0, np.zeros_like(h)
    last_gain = 0
    reason = "max_iters"
    for it in range(int(config.max_iters)):
        value, grad_rs = obj.value_and_gradient(h, method=config.gradient_method)
        c = 1.0 - value
        if c > 1.0 + 1e-6 or np.linalg.norm(h) > 1e6:
            raise OptimizerDivergence(f"iteration {it}: cost {c:.6g}, |h| = {np.linalg.norm(h):.6g}")
        curve.append((it, value))
        if record_history:
            history.append(h.copy())
        if value > best_value + config.min_improvement:
            last_gain = it
        if value > best_value:
            best_value, best_h, best_at, best_grad = value, h.copy(), it, grad_rs
        if config.target_cost is not None and c <= config.target_cost:
            reason = "target_cost"
            break
        if config.patience is not None and it - last_gain >= config.patience:
            reason = "patience"
            break
        g = -grad_rs
        v = config.decay * v + (1.0 - config.decay) * g * g
        h = h - config.learning_rate * g / (np.sqrt(v) + config.epsilon)

    log.debug("rmsprop stopped after %d iterations (%s), best r_s=%.6f at %d", len(curve), reason, best_value, best_at)
    return OptimizationResult(
        h_opt=best_h,
        learning_curve=curve,
        final_cost=1.0 - best_value,
        gradient_norm_final=float(np.linalg.norm(best_grad)),
        best_iteration=best_at,
        stop_reason=reason,
        h_history=history,
    )
