"""Dense linear-operator kernels for split-step semigroup experiments.

Everything is oriented the generator way round: ``expm(A, t)`` is the
semigroup step ``exp(-t*A)`` and ``phi1_integral(A, t)`` is the operator
``F_t = int_0^t exp(-s*A) ds`` that solves constant-forcing linear Cauchy
problems.  Operator norms are spectral norms throughout; the product space
``X1 x X2`` carries the Euclidean norm, so a 2x2 block operator is measured
through its flattened matrix.

Two independent exponential paths are kept on purpose: symmetric matrices go
through an eigendecomposition, everything else through Pade-13 scaling and
squaring.  They cross-check each other in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

from .errors import DomainError, ShapeError, UnsupportedOperatorError

# Full SVD below this dimension, randomized power iteration above.
_SVD_MAX_DIM = 512
_POWER_ITER_REL_TOL = 1e-10

# Degree-13 diagonal Pade, scaling threshold in spectral norm.
_PADE13_THETA = 5.371920351148152
_PADE13_B = (
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0, 129060195264000.0, 10559470521600.0,
    670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
    960960.0, 16380.0, 182.0, 1.0,
)

# Grid on which semigroup constants are certified numerically.
_CERT_GRID = tuple(float(t) for t in np.logspace(-6.0, 3.0, 200))
_CERT_TOL = 1e-9


def _as_matrix(entries) -> np.ndarray:
    arr = np.array(entries, dtype=np.float64, order="C", copy=True)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-d matrix, got ndim={arr.ndim}")
    if arr.size and not np.isfinite(arr).all():
        raise DomainError("matrix entries must be finite (no NaN/Inf)")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class DenseOperator:
    """Immutable real dense matrix with lazily cached factorizations."""

    entries: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "entries", _as_matrix(self.entries))

    @property
    def rows(self) -> int:
        return self.entries.shape[0]

    @property
    def cols(self) -> int:
        return self.entries.shape[1]

    @property
    def is_square(self) -> bool:
        return self.rows == self.cols

    @cached_property
    def is_symmetric(self) -> bool:
        # Exact comparison: symmetric inputs are built bit-symmetric upstream.
        return self.is_square and np.array_equal(self.entries, self.entries.T)

    @cached_property
    def eigh(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigenvalues and orthonormal eigenvectors (symmetric matrices only)."""
        if not self.is_symmetric:
            raise UnsupportedOperatorError("eigh requires a symmetric operator")
        w, v = np.linalg.eigh(self.entries)
        w.flags.writeable = False
        v.flags.writeable = False
        return w, v

    @cached_property
    def _lu(self):
        if not self.is_square:
            raise ShapeError("LU solve requires a square operator")
        return scipy.linalg.lu_factor(self.entries)

    @cached_property
    def norm2(self) -> float:
        """Spectral norm (largest singular value)."""
        if self.entries.size == 0:
            return 0.0
        if max(self.entries.shape) <= _SVD_MAX_DIM:
            return float(np.linalg.svd(self.entries, compute_uv=False)[0])
        return _power_iteration_norm(self.entries)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.entries @ x

    def solve(self, rhs: "DenseOperator") -> "DenseOperator":
        """Return ``A^{-1} @ rhs`` through the cached LU factorization."""
        return DenseOperator(scipy.linalg.lu_solve(self._lu, rhs.entries))

    def rsolve(self, lhs: "DenseOperator") -> "DenseOperator":
        """Return ``lhs @ A^{-1}`` through the cached LU factorization."""
        out = scipy.linalg.lu_solve(self._lu, lhs.entries.T, trans=1).T
        return DenseOperator(out)

    def transpose(self) -> "DenseOperator":
        return DenseOperator(self.entries.T)

    def __matmul__(self, other: "DenseOperator") -> "DenseOperator":
        if self.cols != other.rows:
            raise ShapeError(
                f"cannot compose {self.rows}x{self.cols} with {other.rows}x{other.cols}"
            )
        return DenseOperator(self.entries @ other.entries)

    def __add__(self, other: "DenseOperator") -> "DenseOperator":
        if self.entries.shape != other.entries.shape:
            raise ShapeError("operator sum requires identical shapes")
        return DenseOperator(self.entries + other.entries)

    def __sub__(self, other: "DenseOperator") -> "DenseOperator":
        if self.entries.shape != other.entries.shape:
            raise ShapeError("operator difference requires identical shapes")
        return DenseOperator(self.entries - other.entries)

    def __mul__(self, scalar: float) -> "DenseOperator":
        return DenseOperator(self.entries * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "DenseOperator":
        return DenseOperator(-self.entries)

    def __repr__(self) -> str:
        return f"DenseOperator({self.rows}x{self.cols})"


def identity(n: int) -> DenseOperator:
    return DenseOperator(np.eye(n))


def zeros(rows: int, cols: int) -> DenseOperator:
    return DenseOperator(np.zeros((rows, cols)))


def diagonal(values) -> DenseOperator:
    return DenseOperator(np.diag(np.asarray(values, dtype=np.float64)))


def _require_square(a: DenseOperator, op: str) -> None:
    if not a.is_square:
        raise ShapeError(f"{op} requires a square operator, got {a.rows}x{a.cols}")


def _power_iteration_norm(m: np.ndarray, rel_tol: float = _POWER_ITER_REL_TOL,
                          max_iter: int = 10_000) -> float:
    """Largest singular value by power iteration on ``m.T @ m``.

    The start vector comes from a fixed deterministic stream so the result is
    bit-stable across runs.
    """
    stream = _SplitMix64(0x5EED_0055)
    v = np.array([stream.uniform() for _ in range(m.shape[1])])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(max_iter):
        w = m @ v
        v = m.T @ w
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return 0.0
        v /= nv
        new_sigma = math.sqrt(nv)
        if abs(new_sigma - sigma) <= rel_tol * max(new_sigma, 1e-300):
            return new_sigma
        sigma = new_sigma
    return sigma


class _SplitMix64:
    """SplitMix64 stream; identical bits on every platform.

    ``uniform`` draws from [-1, 1) using the top 53 bits of each output word.
    """

    _MASK = (1 << 64) - 1

    def __init__(self, seed: int):
        self._state = seed & self._MASK

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & self._MASK
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & self._MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & self._MASK
        return z ^ (z >> 31)

    def uniform(self) -> float:
        return ((self.next_u64() >> 11) * 2.0 ** -53) * 2.0 - 1.0

    def matrix(self, rows: int, cols: int) -> np.ndarray:
        out = np.empty((rows, cols))
        for i in range(rows):
            for j in range(cols):
                out[i, j] = self.uniform()
        return out


def _pade13_expm(m: np.ndarray) -> np.ndarray:
    """``exp(m)`` by degree-13 diagonal Pade with spectral-norm scaling."""
    nrm = float(np.linalg.norm(m, 2)) if m.size else 0.0
    s = 0
    if nrm > _PADE13_THETA:
        s = int(math.ceil(math.log2(nrm / _PADE13_THETA)))
    a = m / (2.0 ** s)
    n = a.shape[0]
    b = _PADE13_B
    ident = np.eye(n)
    a2 = a @ a
    a4 = a2 @ a2
    a6 = a4 @ a2
    u = a @ (a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2)
             + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident)
    v = (a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2)
         + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident)
    f = np.linalg.solve(v - u, v + u)
    for _ in range(s):
        f = f @ f
    return f


def expm(a: DenseOperator, t: float) -> DenseOperator:
    """Semigroup step ``exp(-t*a)`` for ``t >= 0``.

    Symmetric operators go through the cached eigendecomposition; everything
    else through Pade-13 scaling and squaring.  ``expm(a, 0)`` is exactly the
    identity.
    """
    _require_square(a, "expm")
    t = float(t)
    if t < 0.0:
        raise DomainError(f"expm needs t >= 0, got {t}")
    if t == 0.0:
        return identity(a.rows)
    if a.is_symmetric:
        w, v = a.eigh
        return DenseOperator((v * np.exp(-t * w)) @ v.T)
    return DenseOperator(_pade13_expm(-t * a.entries))


def phi1_integral(a: DenseOperator, t: float) -> DenseOperator:
    """The operator ``F_t = int_0^t exp(-s*a) ds``.

    Works for singular ``a``: symmetric inputs use the eigendecomposition with
    the exact scalar limit at zero eigenvalues, non-symmetric inputs use the
    exponential of the augmented matrix ``[[a, -I], [0, 0]]`` whose top-right
    block is ``F_t``.
    """
    _require_square(a, "phi1_integral")
    t = float(t)
    if t < 0.0:
        raise DomainError(f"phi1_integral needs t >= 0, got {t}")
    n = a.rows
    if t == 0.0:
        return zeros(n, n)
    if a.is_symmetric:
        w, v = a.eigh
        w_safe = np.where(w == 0.0, 1.0, w)
        phi = np.where(w == 0.0, t, -np.expm1(-t * w) / w_safe)
        return DenseOperator((v * phi) @ v.T)
    aug = np.zeros((2 * n, 2 * n))
    aug[:n, :n] = a.entries
    aug[:n, n:] = -np.eye(n)
    e_aug = expm(DenseOperator(aug), t)
    return DenseOperator(e_aug.entries[:n, n:])


def operator_norm(a: DenseOperator) -> float:
    """Spectral norm of ``a``."""
    return a.norm2


def fractional_power(a: DenseOperator, beta: float) -> DenseOperator:
    """``a**beta`` for symmetric positive definite ``a`` and ``beta`` in [0, 1]."""
    _require_square(a, "fractional_power")
    beta = float(beta)
    if not 0.0 <= beta <= 1.0:
        raise DomainError(f"fractional_power needs beta in [0, 1], got {beta}")
    if not a.is_symmetric:
        raise UnsupportedOperatorError("fractional_power requires a symmetric positive definite operator")
    w, v = a.eigh
    if w.size and w[0] <= 0.0:
        raise UnsupportedOperatorError(
            f"fractional_power requires positive eigenvalues, min is {w[0]:.3e}"
        )
    if beta == 0.0:
        return identity(a.rows)
    if beta == 1.0:
        return a
    return DenseOperator((v * np.power(w, beta)) @ v.T)


def shift(a: DenseOperator, eta: float) -> DenseOperator:
    """``a + eta*I`` for ``eta > 0``; commutes with the exponential, so
    ``expm(shift(a, eta), t) == exp(-t*eta) * expm(a, t)``."""
    _require_square(a, "shift")
    eta = float(eta)
    if eta <= 0.0:
        raise DomainError(f"shift needs eta > 0, got {eta}")
    return DenseOperator(a.entries + eta * np.eye(a.rows))


@dataclass(frozen=True, eq=False)
class BlockOperator:
    """2x2 block of dense operators on the product space ``X1 x X2``.

    ``b11: X1->X1``, ``b12: X2->X1``, ``b21: X1->X2``, ``b22: X2->X2``.
    """

    b11: DenseOperator
    b12: DenseOperator
    b21: DenseOperator
    b22: DenseOperator

    def __post_init__(self):
        ok = (self.b11.rows == self.b12.rows
              and self.b21.rows == self.b22.rows
              and self.b11.cols == self.b21.cols
              and self.b12.cols == self.b22.cols)
        if not ok:
            raise ShapeError("incompatible block shapes")

    @property
    def dims(self) -> tuple[int, int]:
        return self.b11.rows, self.b22.rows

    @cached_property
    def flatten(self) -> DenseOperator:
        return DenseOperator(np.block([
            [self.b11.entries, self.b12.entries],
            [self.b21.entries, self.b22.entries],
        ]))

    def apply(self, x1: np.ndarray, x2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Blockwise action on a pair of component vectors."""
        return (self.b11.apply(x1) + self.b12.apply(x2),
                self.b21.apply(x1) + self.b22.apply(x2))

    def __matmul__(self, other: "BlockOperator") -> "BlockOperator":
        # Blockwise product: (CD)_ij = sum_k C_ik D_kj.
        return BlockOperator(
            self.b11 @ other.b11 + self.b12 @ other.b21,
            self.b11 @ other.b12 + self.b12 @ other.b22,
            self.b21 @ other.b11 + self.b22 @ other.b21,
            self.b21 @ other.b12 + self.b22 @ other.b22,
        )

    def __add__(self, other: "BlockOperator") -> "BlockOperator":
        return BlockOperator(self.b11 + other.b11, self.b12 + other.b12,
                             self.b21 + other.b21, self.b22 + other.b22)

    def __sub__(self, other: "BlockOperator") -> "BlockOperator":
        return BlockOperator(self.b11 - other.b11, self.b12 - other.b12,
                             self.b21 - other.b21, self.b22 - other.b22)

    def __repr__(self) -> str:
        n1, n2 = self.dims
        return f"BlockOperator({n1}+{n2})"


def block_identity(n1: int, n2: int) -> BlockOperator:
    return BlockOperator(identity(n1), zeros(n1, n2), zeros(n2, n1), identity(n2))


def block_diag(a1: DenseOperator, a2: DenseOperator) -> BlockOperator:
    return BlockOperator(a1, zeros(a1.rows, a2.cols), zeros(a2.rows, a1.cols), a2)


def block_offdiag(b1: DenseOperator, b2: DenseOperator) -> BlockOperator:
    """Coupling-shaped block: ``b1`` at (1,2), ``b2`` at (2,1), zero diagonal."""
    return BlockOperator(zeros(b1.rows, b2.cols), b1, b2, zeros(b2.rows, b1.cols))


def split_blocks(flat: DenseOperator, n1: int, n2: int) -> BlockOperator:
    """Inverse of ``BlockOperator.flatten`` for the given component sizes."""
    if flat.rows != n1 + n2 or flat.cols != n1 + n2:
        raise ShapeError(f"cannot split {flat.rows}x{flat.cols} into {n1}+{n2} blocks")
    e = flat.entries
    return BlockOperator(
        DenseOperator(e[:n1, :n1]), DenseOperator(e[:n1, n1:]),
        DenseOperator(e[n1:, :n1]), DenseOperator(e[n1:, n1:]),
    )


def block_norm_bounds(block: BlockOperator) -> tuple[float, float]:
    """Bracket the spectral norm of a block operator by blockwise norms.

    Lower bound: the largest blockwise norm.  Upper bound: the column-wise
    root-sum-square estimate ``sqrt(2) * max(hypot(n11, n21), hypot(n12, n22))``.
    Both bracket ``operator_norm(block.flatten)``.
    """
    n11 = operator_norm(block.b11)
    n12 = operator_norm(block.b12)
    n21 = operator_norm(block.b21)
    n22 = operator_norm(block.b22)
    lower = max(n11, n12, n21, n22)
    upper = math.sqrt(2.0) * max(math.hypot(n11, n21), math.hypot(n12, n22))
    return lower, upper


@dataclass(frozen=True)
class SemigroupBounds:
    """Numerically certified constants of the semigroup generated by ``-A``.

    ``m_a`` is the sup of ``t * ||A exp(-t*A)||`` over the certification grid
    (finite for every matrix; small only when the generator smooths well).
    """

    is_contraction: bool
    m_a: float | None
    growth_m: float
    growth_beta: float
    invertible: bool
    spd: bool


def certify_semigroup(a: DenseOperator, grid=_CERT_GRID) -> SemigroupBounds:
    """Measure contraction, smoothing and invertibility of ``exp(-t*a)``.

    Symmetric operators are certified through their eigenvalues (still a
    numerical sup over the same grid); everything else evaluates the matrix
    exponential per grid point.
    """
    _require_square(a, "certify_semigroup")
    svals = np.linalg.svd(a.entries, compute_uv=False)
    invertible = bool(svals[-1] > 1e-10 * max(svals[0], 1.0))
    if a.is_symmetric:
        w, _ = a.eigh
        spd = bool(w[0] > 0.0)
        tg = np.asarray(grid)
        sup_e = float(np.max(np.exp(-np.outer(tg, w))))
        m_a = float(np.max(np.abs(np.outer(tg, w)) * np.exp(-np.outer(tg, w))))
        is_contraction = sup_e <= 1.0 + _CERT_TOL
        growth_m = max(1.0, sup_e)
        return SemigroupBounds(is_contraction, m_a, growth_m, 0.0, invertible, spd)
    sup_e = 0.0
    m_a = 0.0
    for t in grid:
        e_t = expm(a, t)
        sup_e = max(sup_e, operator_norm(e_t))
        m_a = max(m_a, t * operator_norm(a @ e_t))
    is_contraction = sup_e <= 1.0 + _CERT_TOL
    return SemigroupBounds(is_contraction, m_a, max(1.0, sup_e), 0.0, invertible, False)
