"""Reproducible test problems: generator pairs with certified couplings.

Every instance is a pair of contraction generators ``(A1, A2)`` plus coupling
operators ``B1: X2->X1`` and ``B2: X1->X2``, assembled into the block
operators

    A = diag(A1, A2),   B = offdiag(B1, B2),   C = A - B,

so that ``-C`` drives the coupled evolution ``u' = -A1 u + B1 v``,
``v' = B2 u - A2 v``.  All randomness comes from a SplitMix64 stream seeded
per recipe, so rebuilding a recipe is bit-reproducible across platforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from . import linop
from .errors import DomainError, UnsupportedOperatorError
from .linop import (
    BlockOperator,
    DenseOperator,
    SemigroupBounds,
    _SplitMix64,
    block_diag,
    block_offdiag,
    certify_semigroup,
    fractional_power,
    operator_norm,
)

_SKEW_EPSILON = 1e-3  # diagonal regularization of the skew family


@dataclass(frozen=True)
class CouplingKind:
    """Either plain bounded coupling or a fractional-power coupling of order beta."""

    name: str  # "bounded" | "fractional"
    beta: float | None = None

    def tag(self) -> str:
        if self.name == "bounded":
            return "bounded"
        return f"fractional({self.beta:g})"


BOUNDED = CouplingKind("bounded")


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """A generator pair with couplings and certified semigroup constants."""

    id: str
    A1: DenseOperator
    A2: DenseOperator
    B1: DenseOperator  # X2 -> X1, shape n1 x n2
    B2: DenseOperator  # X1 -> X2, shape n2 x n1
    bounds1: SemigroupBounds
    bounds2: SemigroupBounds
    coupling_kind: CouplingKind = BOUNDED

    def __post_init__(self):
        if not (self.A1.is_square and self.A2.is_square):
            raise DomainError("generators must be square")
        n1, n2 = self.A1.rows, self.A2.rows
        if self.B1.entries.shape != (n1, n2) or self.B2.entries.shape != (n2, n1):
            raise DomainError("coupling shapes must be (n1, n2) and (n2, n1)")
        if not (self.bounds1.is_contraction and self.bounds2.is_contraction):
            raise DomainError(f"{self.id}: generators failed contraction certification")

    @property
    def dims(self) -> tuple[int, int]:
        return self.A1.rows, self.A2.rows

    @cached_property
    def norm_b1(self) -> float:
        return operator_norm(self.B1)

    @cached_property
    def norm_b2(self) -> float:
        return operator_norm(self.B2)

    def block_a(self) -> BlockOperator:
        return block_diag(self.A1, self.A2)

    def block_b(self) -> BlockOperator:
        return block_offdiag(self.B1, self.B2)

    @cached_property
    def block_c(self) -> BlockOperator:
        return self.block_a() - self.block_b()

    def stability_rhs(self, t: float) -> float:
        """The iterated-step norm bound ``exp(t * (||B1|| + ||B2||))``."""
        return math.exp(t * (self.norm_b1 + self.norm_b2))

    def __repr__(self) -> str:
        return f"ProblemInstance({self.id})"


@dataclass(frozen=True)
class CouplingSpec:
    kind: str  # random_bounded | fractional | identity_like
    scale: float
    beta: float | None = None

    def tag(self) -> str:
        if self.kind == "fractional":
            return f"fr{self.beta:g}x{self.scale:g}"
        short = "rb" if self.kind == "random_bounded" else "id"
        return f"{short}{self.scale:g}"


@dataclass(frozen=True)
class GalleryRecipe:
    """A named, seeded construction of a ProblemInstance."""

    family: str  # laplacian1d | spd_random | skew | bounded_random | scalar2x2
    dims: tuple[int, int]
    coupling: CouplingSpec
    seed: int
    note: str = ""

    @property
    def instance_id(self) -> str:
        n1, n2 = self.dims
        return f"{self.family}-{n1}x{n2}-{self.coupling.tag()}-s{self.seed}"


def _seed_from_text(text: str) -> int:
    stream = _SplitMix64(0xC0FFEE)
    acc = 0
    for ch in text.encode("utf-8"):
        stream._state ^= ch
        acc ^= stream.next_u64()
    return acc


def _normalized_random(stream: _SplitMix64, rows: int, cols: int, scale: float) -> DenseOperator:
    """Random dense matrix with spectral norm exactly ``scale`` (post-normalized)."""
    raw = stream.matrix(rows, cols)
    if scale == 0.0:
        return linop.zeros(rows, cols)
    nrm = float(np.linalg.svd(raw, compute_uv=False)[0])
    return DenseOperator(raw * (scale / nrm))


def _orthonormal_columns(stream: _SplitMix64, rows: int, cols: int) -> np.ndarray:
    """Matrix with orthonormal columns (rows >= cols) or rows (cols > rows)."""
    if rows >= cols:
        q, _ = np.linalg.qr(stream.matrix(rows, cols))
        return q
    q, _ = np.linalg.qr(stream.matrix(cols, rows))
    return q.T


def _symmetrize(m: np.ndarray) -> np.ndarray:
    return (m + m.T) / 2.0


def dirichlet_laplacian(n: int) -> DenseOperator:
    """1-d Dirichlet Laplacian on n interior points of (0, 1).

    Stencil (-1, 2, -1) scaled by (n+1)^2, so refining n mimics mesh
    refinement of one fixed operator: the norm grows like 4(n+1)^2 while the
    smallest eigenvalue stays near pi^2.
    """
    if n < 2:
        raise DomainError(f"dirichlet_laplacian needs n >= 2, got {n}")
    a = 2.0 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
    return DenseOperator(_symmetrize(a * (n + 1) ** 2))


def dirichlet_eigenvalues(n: int) -> np.ndarray:
    """Closed-form spectrum 4(n+1)^2 sin^2(k pi / (2(n+1))), k = 1..n."""
    k = np.arange(1, n + 1)
    return 4.0 * (n + 1) ** 2 * np.sin(k * np.pi / (2.0 * (n + 1))) ** 2


def _random_couplings(stream, n1, n2, scale) -> tuple[DenseOperator, DenseOperator]:
    b1 = _normalized_random(stream, n1, n2, scale)
    b2 = _normalized_random(stream, n2, n1, scale)
    return b1, b2


def make_laplacian_problem(n1: int, n2: int, coupling_scale: float, seed: int) -> ProblemInstance:
    """Coupled Dirichlet Laplacians with random couplings of given norm."""
    if n1 < 2 or n2 < 2:
        raise DomainError("make_laplacian_problem needs n1, n2 >= 2")
    if coupling_scale < 0:
        raise DomainError("coupling_scale must be >= 0")
    a1 = dirichlet_laplacian(n1)
    a2 = dirichlet_laplacian(n2)
    stream = _SplitMix64(seed)
    b1, b2 = _random_couplings(stream, n1, n2, coupling_scale)
    ident = f"laplacian1d-{n1}x{n2}-rb{coupling_scale:g}-s{seed}"
    return ProblemInstance(ident, a1, a2, b1, b2,
                           certify_semigroup(a1), certify_semigroup(a2))


def _spd_random(stream: _SplitMix64, n: int, lo: float = 0.5, hi: float = 8.0) -> DenseOperator:
    q = _orthonormal_columns(stream, n, n)
    lam = np.array([lo + (stream.uniform() + 1.0) / 2.0 * (hi - lo) for _ in range(n)])
    return DenseOperator(_symmetrize((q * lam) @ q.T))


def _skew_generator(stream: _SplitMix64, n: int) -> DenseOperator:
    raw = stream.matrix(n, n)
    s = (raw - raw.T) / 2.0
    nrm = float(np.linalg.svd(s, compute_uv=False)[0])
    s = s / nrm  # unit-norm rotation part
    return DenseOperator(s + _SKEW_EPSILON * np.eye(n))


def _dissipative_random(stream: _SplitMix64, n: int) -> DenseOperator:
    """Bounded non-normal contraction generator: SPD part plus mild skew part."""
    d = _spd_random(stream, n, lo=0.1, hi=1.5)
    raw = stream.matrix(n, n)
    s = (raw - raw.T) / 2.0
    nrm = float(np.linalg.svd(s, compute_uv=False)[0])
    return DenseOperator(d.entries + 0.5 * s / nrm)


def _build_generators(family: str, dims: tuple[int, int], stream: _SplitMix64):
    n1, n2 = dims
    if family == "laplacian1d":
        return dirichlet_laplacian(n1), dirichlet_laplacian(n2)
    if family == "spd_random":
        return _spd_random(stream, n1), _spd_random(stream, n2)
    if family == "skew":
        return _skew_generator(stream, n1), _skew_generator(stream, n2)
    if family == "bounded_random":
        return _dissipative_random(stream, n1), _dissipative_random(stream, n2)
    if family == "scalar2x2":
        if dims != (1, 1):
            raise DomainError("scalar2x2 is the 1+1-dimensional model problem")
        return linop.identity(1), linop.identity(1)
    raise DomainError(f"unknown gallery family: {family!r}")


def build_instance(recipe: GalleryRecipe) -> ProblemInstance:
    """Construct the instance of a recipe; same recipe, same bits."""
    stream = _SplitMix64(recipe.seed)
    a1, a2 = _build_generators(recipe.family, recipe.dims, stream)
    n1, n2 = recipe.dims
    spec = recipe.coupling
    if spec.kind == "random_bounded":
        b1, b2 = _random_couplings(stream, n1, n2, spec.scale)
        kind = BOUNDED
    elif spec.kind == "identity_like":
        b1 = DenseOperator(spec.scale * np.eye(n1, n2))
        b2 = DenseOperator(spec.scale * np.eye(n2, n1))
        kind = BOUNDED
    elif spec.kind == "fractional":
        base = ProblemInstance(recipe.instance_id, a1, a2,
                               linop.zeros(n1, n2), linop.zeros(n2, n1),
                               certify_semigroup(a1), certify_semigroup(a2))
        return make_fractional_coupling(base, spec.beta, spec.scale, seed=recipe.seed)
    else:
        raise DomainError(f"unknown coupling kind: {spec.kind!r}")
    return ProblemInstance(recipe.instance_id, a1, a2, b1, b2,
                           certify_semigroup(a1), certify_semigroup(a2), kind)


def _fractional_factors(base: ProblemInstance, seed: int | None):
    """The orthonormal factors shared by fractional couplings and their controls."""
    if seed is None:
        seed = _seed_from_text(base.id)
    stream = _SplitMix64(seed ^ 0xF4AC7A11)
    n1, n2 = base.dims
    r1 = _orthonormal_columns(stream, n1, n2)
    r2 = _orthonormal_columns(stream, n2, n1)
    return DenseOperator(r1), DenseOperator(r2)


def make_fractional_coupling(base: ProblemInstance, beta: float, scale: float,
                             *, seed: int | None = None) -> ProblemInstance:
    """Couple through fractional powers: ``B_i = scale * A_i^beta * R_i``.

    The preconditioned norm ``||A_i^{-beta} B_i|| = scale`` stays fixed under
    mesh refinement while ``||B_i||`` itself grows like ``lambda_max^beta``;
    this is the regime in which iterated split steps lose stability.
    """
    beta = float(beta)
    if not 0.0 < beta <= 1.0:
        raise DomainError(f"make_fractional_coupling needs beta in (0, 1], got {beta}")
    if scale < 0:
        raise DomainError("scale must be >= 0")
    if not (base.bounds1.spd and base.bounds2.spd):
        raise UnsupportedOperatorError("fractional couplings need SPD generators")
    r1, r2 = _fractional_factors(base, seed)
    b1 = scale * (fractional_power(base.A1, beta) @ r1)
    b2 = scale * (fractional_power(base.A2, beta) @ r2)
    ident = f"{base.id}-frac{beta:g}x{scale:g}"
    return ProblemInstance(ident, base.A1, base.A2, b1, b2,
                           base.bounds1, base.bounds2,
                           CouplingKind("fractional", beta))


def make_bounded_control(base: ProblemInstance, scale: float,
                         *, seed: int | None = None) -> ProblemInstance:
    """The beta -> 0 limit of the fractional construction: ``B_i = scale * R_i``.

    Shares the orthonormal factors with :func:`make_fractional_coupling`, so a
    sweep over beta isolates exactly the fractional-power factor.
    """
    if scale < 0:
        raise DomainError("scale must be >= 0")
    r1, r2 = _fractional_factors(base, seed)
    ident = f"{base.id}-control-x{scale:g}"
    return ProblemInstance(ident, base.A1, base.A2, scale * r1, scale * r2,
                           base.bounds1, base.bounds2, BOUNDED)


def make_scalar_model(x: float) -> DenseOperator:
    """The 2x2 coupling-growth model ``P(x) = [[1, x], [x, 1 + x^2]]``."""
    x = float(x)
    if x < 0.0:
        raise DomainError(f"make_scalar_model needs x >= 0, got {x}")
    return DenseOperator([[1.0, x], [x, 1.0 + x * x]])


def scalar_model_eigenpair(x: float) -> tuple[float, np.ndarray]:
    """Dominant eigenpair of ``P(x)`` in closed form.

    lambda(x) = 1 + (x/2)(x + sqrt(4 + x^2)) with eigenvector
    v(x) = ((-x + sqrt(4 + x^2))/2, 1).
    """
    x = float(x)
    root = math.sqrt(4.0 + x * x)
    lam = 1.0 + 0.5 * x * (x + root)
    v = np.array([0.5 * (-x + root), 1.0])
    return lam, v


# Shared seed for the Laplacian refinement ladder keeps the coupling draw
# comparable across dimensions (mesh-uniformity experiments read across it).
_LAPLACIAN_SEED = 11


def gallery_list() -> list[GalleryRecipe]:
    """The built-in catalog."""
    recipes = [
        GalleryRecipe("laplacian1d", (n, n), CouplingSpec("random_bounded", 1.0),
                      _LAPLACIAN_SEED,
                      f"coupled 1-d Dirichlet Laplacians, {n} mesh points per component")
        for n in (8, 16, 32, 64)
    ]
    recipes += [
        GalleryRecipe("spd_random", (6, 5), CouplingSpec("random_bounded", 1.0), 31,
                      "random SPD generators with spectra in [0.5, 8]"),
        GalleryRecipe("skew", (7, 7), CouplingSpec("random_bounded", 1.0), 47,
                      "unit-norm skew rotation plus 1e-3 damping: large smoothing constant"),
        GalleryRecipe("bounded_random", (5, 8), CouplingSpec("random_bounded", 1.0), 59,
                      "bounded non-normal contraction generators, norms near 2"),
        GalleryRecipe("scalar2x2", (1, 1), CouplingSpec("identity_like", 1.0), 73,
                      "scalar model A1 = A2 = 1, unit coupling: every entry in closed form"),
    ]
    return recipes


def build_catalog() -> list[ProblemInstance]:
    return [build_instance(r) for r in gallery_list()]
