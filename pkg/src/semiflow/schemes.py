"""Split-step one-step operators and their iteration.

One step of size tau freezes the second component while evolving the first
(step 1), then freezes the first while evolving the second (step 2).  Both
frozen solves are constant-forcing Cauchy problems, solved exactly by the
semigroup plus the phi-1 integral:

    step1 = [[E1, X1], [0, I]],   step2 = [[I, 0], [X2, E2]],

with ``E_j(tau) = exp(-tau*A_j)`` and ``X_j(tau) = F_tau(A_j) B_j``.  The
default scheme is the composition step2 @ step1, whose closed block form is

    [[E1, X1], [X2 E1, X2 X1 + E2]].

Variants: the transposed order step1 @ step2, the symmetrized one-step map
[[E1, X1], [X2, E2]], the naive map that replaces X_j by tau*B_j, and the
exact semigroup of the flattened coupled generator as oracle.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, SelfCheckError
from .gallery import ProblemInstance
from .linop import (
    BlockOperator,
    DenseOperator,
    block_identity,
    expm,
    identity,
    operator_norm,
    phi1_integral,
    split_blocks,
    zeros,
)

_PRODUCT_CHECK_TOL = 1e-12


class Scheme(enum.Enum):
    """Which one-step family to assemble; AO is the default composition."""

    AO = "AO"
    TRANSPOSED = "transposed"
    SYMMETRIZED = "symmetrized"
    NAIVE = "naive"
    EXACT = "exact"

    @classmethod
    def from_name(cls, name: str) -> "Scheme":
        for member in cls:
            if member.value == name:
                return member
        raise DomainError(f"unknown scheme kind: {name!r}")


@dataclass(frozen=True, eq=False)
class SteppedFamily:
    """An assembled one-step operator at a fixed step size."""

    problem: ProblemInstance
    scheme: Scheme
    tau: float
    operator: BlockOperator


def step_blocks(p: ProblemInstance, tau: float):
    """The four building blocks E1, E2, X1, X2 at step size tau."""
    e1 = expm(p.A1, tau)
    e2 = expm(p.A2, tau)
    x1 = phi1_integral(p.A1, tau) @ p.B1
    x2 = phi1_integral(p.A2, tau) @ p.B2
    return e1, e2, x1, x2


def frozen_step_1(p: ProblemInstance, tau: float) -> BlockOperator:
    """Evolve the first component with the second frozen: [[E1, X1], [0, I]]."""
    if tau < 0:
        raise DomainError("tau must be >= 0")
    n1, n2 = p.dims
    e1 = expm(p.A1, tau)
    x1 = phi1_integral(p.A1, tau) @ p.B1
    return BlockOperator(e1, x1, zeros(n2, n1), identity(n2))


def frozen_step_2(p: ProblemInstance, tau: float) -> BlockOperator:
    """Evolve the second component with the first frozen: [[I, 0], [X2, E2]]."""
    if tau < 0:
        raise DomainError("tau must be >= 0")
    n1, n2 = p.dims
    e2 = expm(p.A2, tau)
    x2 = phi1_integral(p.A2, tau) @ p.B2
    return BlockOperator(identity(n1), zeros(n1, n2), x2, e2)


def assemble(p: ProblemInstance, scheme: Scheme, tau: float) -> SteppedFamily:
    """Build the one-step operator of a scheme at step size tau.

    For the default composition the closed block form is compared entrywise
    against the literal factor product; a mismatch beyond 1e-12 aborts.
    """
    tau = float(tau)
    if tau < 0:
        raise DomainError("tau must be >= 0")
    n1, n2 = p.dims
    if scheme is Scheme.EXACT:
        op = split_blocks(expm(p.block_c.flatten, tau), n1, n2)
        return SteppedFamily(p, scheme, tau, op)
    e1, e2, x1, x2 = step_blocks(p, tau)
    if scheme is Scheme.AO:
        closed = BlockOperator(e1, x1, x2 @ e1, x2 @ x1 + e2)
        literal = frozen_step_2(p, tau) @ frozen_step_1(p, tau)
        defect = float(np.max(np.abs(closed.flatten.entries - literal.flatten.entries)))
        if defect > _PRODUCT_CHECK_TOL * (1.0 + float(np.max(np.abs(closed.flatten.entries)))):
            raise SelfCheckError(
                f"closed block form deviates from the factor product by {defect:.3e}"
            )
        op = closed
    elif scheme is Scheme.TRANSPOSED:
        op = frozen_step_1(p, tau) @ frozen_step_2(p, tau)
    elif scheme is Scheme.SYMMETRIZED:
        op = BlockOperator(e1, x1, x2, e2)
    elif scheme is Scheme.NAIVE:
        op = BlockOperator(e1, tau * p.B1, tau * p.B2, e2)
    else:
        raise DomainError(f"unknown scheme kind: {scheme!r}")
    return SteppedFamily(p, scheme, tau, op)


def iterate(fam: SteppedFamily, n: int) -> BlockOperator:
    """The n-th power of the one-step operator by binary repeated squaring.

    ``n = 0`` returns the identity (documented convention).
    """
    if n < 0:
        raise DomainError("iteration count must be >= 0")
    n1, n2 = fam.problem.dims
    if n == 0:
        return block_identity(n1, n2)
    result = matrix_power(fam.operator.flatten.entries, n)
    return split_blocks(DenseOperator(result), n1, n2)


def matrix_power(m: np.ndarray, n: int) -> np.ndarray:
    """Plain binary powering on the binary expansion of n."""
    result = None
    base = m
    k = n
    while k:
        if k & 1:
            result = base if result is None else result @ base
        k >>= 1
        if k:
            base = base @ base
    return np.eye(m.shape[0]) if result is None else result


def scaled_power_norm(m: np.ndarray, n: int) -> float:
    """Spectral norm of ``m**n`` with overflow-safe rescaling.

    Partial products are renormalized by their max-abs entry and the log
    scales tracked on the side, so norms far beyond float range come back as
    ``inf`` instead of poisoning the powering with non-finite entries.
    """
    if n == 0:
        return 1.0
    log_result = 0.0
    log_base = 0.0
    result = None
    base = m.copy()
    k = n
    while k:
        if k & 1:
            result = base.copy() if result is None else result @ base
            log_result += log_base
            peak = float(np.max(np.abs(result)))
            if peak > 0.0:
                result /= peak
                log_result += np.log(peak)
        k >>= 1
        if k:
            base = base @ base
            log_base *= 2.0
            peak = float(np.max(np.abs(base)))
            if peak > 0.0:
                base /= peak
                log_base += np.log(peak)
    sigma = float(np.linalg.svd(result, compute_uv=False)[0])
    log_norm = np.log(max(sigma, 1e-300)) + log_result
    return float(np.exp(log_norm)) if log_norm < 709.0 else float("inf")


def derivative_defects(p: ProblemInstance, tau_grid) -> list[float]:
    """Consistency defects ``||(T(tau) - I)/tau + C||`` along a tau grid."""
    c_flat = p.block_c.flatten.entries
    ident = np.eye(c_flat.shape[0])
    out = []
    for tau in tau_grid:
        if tau <= 0:
            raise DomainError("tau grid must be positive")
        t_flat = assemble(p, Scheme.AO, tau).operator.flatten.entries
        out.append(operator_norm(DenseOperator((t_flat - ident) / tau + c_flat)))
    return out


def derivative_check(p: ProblemInstance, tau_grid) -> float:
    """Max defect over the two smallest steps of a decreasing tau grid."""
    taus = list(tau_grid)
    if len(taus) < 2:
        raise DomainError("tau grid needs at least two points")
    if any(b >= a for a, b in zip(taus, taus[1:])):
        raise DomainError("tau grid must be strictly decreasing")
    defects = derivative_defects(p, taus[-2:])
    return max(defects)
