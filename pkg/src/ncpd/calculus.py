"""First-order calculus of the residual map: gradient, Gramian, kernel.

The residual map sends a factorization point to the flat difference between
its rank-1 sum model and the data tensor.  Everything here is expressed in
the canonical flat layout of :mod:`ncpd.tensors`.

The Gramian (Jacobian-transpose times Jacobian) is never formed densely in
the solver: thanks to the Kronecker structure of the Jacobian its action on
a vector only needs the R-by-R cross products of the factor matrices, so one
apply costs a polynomial in the rank and the sum of mode sizes, independent
of the tensor size.  Dense assembly is provided separately for diagnostics
on small problems.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensors import (
    CpdPoint,
    DenseTensor,
    khatri_rao,
    residual_values,
    unfold,
)

__all__ = [
    "EvalCounters",
    "gradient",
    "GramianOperator",
    "explicit_jacobian",
    "KernelBasis",
    "kernel_basis",
    "numerical_rank",
    "cauchy_scale",
]


@dataclass
class EvalCounters:
    """Cumulative work counters threaded through a solve."""

    fevals: int = 0
    gevals: int = 0
    gramian_applies: int = 0


def gradient(point: CpdPoint, tensor: DenseTensor) -> np.ndarray:
    """Gradient of the half squared residual norm, as a flat vector.

    Computed mode by mode by unfolding the residual tensor against the
    Khatri-Rao product of the remaining factors (decreasing mode order), one
    pass per mode; cost is O(N R prod(dims)).
    """
    structure = point.structure
    if structure.dims != tensor.dims:
        raise ValueError(f"point dims {structure.dims} do not match tensor {tensor.dims}")
    res = DenseTensor(tensor.dims, residual_values(point, tensor))
    factors = point.factors
    n_modes = structure.num_modes
    grad_factors = []
    grad_weights = None
    for n in range(n_modes):
        others = [factors[m] for m in range(n_modes - 1, -1, -1) if m != n]
        mtt = unfold(res, n) @ khatri_rao(others)
        grad_factors.append(mtt * point.weights[None, :])
        if n == 0:
            grad_weights = np.einsum("ir,ir->r", factors[0], mtt)
    return structure.join(grad_factors, grad_weights)


class GramianOperator:
    """Matrix-free action of the residual-map Gramian at a point.

    Caches the per-mode R-by-R factor cross products at construction; each
    apply then costs O(N^2 R^2 + R sum(dims)) with no dependence on the
    tensor size.  The operator is symmetric positive semidefinite with a
    null space of dimension at least N*R at generic points, spanned by the
    per-term rescaling directions (see :func:`kernel_basis`).
    """

    def __init__(self, point: CpdPoint, counters: EvalCounters | None = None):
        self.point = point
        self.counters = counters
        self.applies = 0
        s = point.structure
        factors = point.factors
        n = s.num_modes
        cross = [a.T @ a for a in factors]
        self._cross = cross
        self._w_except = []
        for i in range(n):
            w = np.ones((s.rank, s.rank))
            for m in range(n):
                if m != i:
                    w = w * cross[m]
            self._w_except.append(w)
        self._w_pair = {}
        for i in range(n):
            for j in range(i + 1, n):
                w = np.ones((s.rank, s.rank))
                for m in range(n):
                    if m != i and m != j:
                        w = w * cross[m]
                self._w_pair[(i, j)] = w
        self._w_all = self._w_except[0] * cross[0]
        self._lam_outer = np.outer(point.weights, point.weights)

    @property
    def size(self) -> int:
        return self.point.structure.size

    def _pair(self, i: int, j: int) -> np.ndarray:
        return self._w_pair[(i, j)] if i < j else self._w_pair[(j, i)]

    def apply(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.size,):
            raise ValueError(f"expected flat length {self.size}, got {v.shape}")
        self.applies += 1
        if self.counters is not None:
            self.counters.gramian_applies += 1
        s = self.point.structure
        factors = self.point.factors
        lam = self.point.weights
        vf, vw = s.split(v)
        n_modes = s.num_modes
        # D[m][r, s] = <a_r^(m), v_s^(m)>
        dots = [factors[m].T @ vf[m] for m in range(n_modes)]
        out_factors = []
        for i in range(n_modes):
            u = vf[i] @ (self._lam_outer * self._w_except[i])
            mix = np.zeros((s.rank, s.rank))
            for j in range(n_modes):
                if j != i:
                    mix += self._lam_outer * self._pair(i, j) * dots[j]
            mix += (lam[:, None] * self._w_except[i]) * vw[None, :]
            u = u + factors[i] @ mix.T
            out_factors.append(u)
        out_w = self._w_all @ vw
        for j in range(n_modes):
            out_w = out_w + (self._w_except[j] * dots[j]) @ lam
        return s.join(out_factors, out_w)


def explicit_jacobian(point: CpdPoint, max_entries: int = 100_000) -> np.ndarray:
    """Dense Jacobian of the residual map; diagnostics only.

    Column blocks follow the canonical flat layout: factor columns mode by
    mode, then one column per weight (each equal to the flat unit-weight
    rank-1 term).  Refuses tensors larger than ``max_entries``.
    """
    s = point.structure
    n_entries = math.prod(s.dims)
    if n_entries > max_entries:
        raise ValueError(
            f"tensor has {n_entries} entries, over the dense-assembly cap {max_entries}"
        )
    factors = point.factors
    lam = point.weights
    jac = np.empty((n_entries, s.size))
    for n in range(s.num_modes):
        for r in range(s.rank):
            block = np.ones((1, 1))
            for m in range(s.num_modes - 1, -1, -1):
                piece = np.eye(s.dims[m]) if m == n else factors[m][:, r : r + 1]
                block = np.kron(block, piece)
            sl = s.block_slice(n, r)
            jac[:, sl] = lam[r] * block
    for r in range(s.rank):
        col = np.ones(1)
        for m in range(s.num_modes - 1, -1, -1):
            col = np.kron(col, factors[m][:, r])
        jac[:, s.factor_dim + r] = col
    return jac


@dataclass(frozen=True)
class KernelBasis:
    """Basis of the structural Gramian null space at a point.

    One column per (mode, column) pair: the factor column placed in its own
    block and the negated weight in the matching weight entry.  Each column
    is tangent to the rescaling curve that trades factor-column scale
    against the weight, which leaves the rank-1 term unchanged.  The
    ``degenerate`` flag marks points (zero weight or zero factor column)
    where the basis may lose rank.
    """

    matrix: np.ndarray
    degenerate: bool

    @property
    def num_columns(self) -> int:
        return self.matrix.shape[1]


def kernel_basis(point: CpdPoint) -> KernelBasis:
    s = point.structure
    basis = np.zeros((s.size, s.num_modes * s.rank))
    degenerate = bool(np.any(point.weights == 0.0))
    col = 0
    for n in range(s.num_modes):
        for r in range(s.rank):
            if not np.any(point.factors[n][:, r]):
                degenerate = True
            basis[s.block_slice(n, r), col] = point.factors[n][:, r]
            basis[s.factor_dim + r, col] = -point.weights[r]
            col += 1
    return KernelBasis(basis, degenerate)


def numerical_rank(matrix, rel_tol: float = 1e-10) -> int:
    """Number of singular values above ``rel_tol`` times the largest."""
    svals = np.linalg.svd(np.asarray(matrix, dtype=np.float64), compute_uv=False)
    if svals.size == 0 or svals[0] == 0.0:
        return 0
    return int(np.count_nonzero(svals > rel_tol * svals[0]))


def cauchy_scale(
    point: CpdPoint,
    g: np.ndarray,
    reciprocal: bool = False,
    op: GramianOperator | None = None,
) -> float:
    """Curvature scale of the Gramian along ``g``, via one Gramian apply.

    Returns the Rayleigh quotient ``g.G.g / g.g`` or, with ``reciprocal``,
    its inverse ``g.g / g.G.g`` (a stepsize-scale quantity).  Raises on a
    zero direction; the reciprocal of a flat direction comes out ``inf`` and
    is left to the caller to ignore.
    """
    g = np.asarray(g, dtype=np.float64)
    den = float(g @ g)
    if den == 0.0:
        raise ValueError("cannot take a curvature scale along the zero direction")
    if op is None:
        op = GramianOperator(point)
    num = float(g @ op.apply(g))
    if reciprocal:
        return den / num if num > 0.0 else math.inf
    return num / den
