"""Discrete periodic spaces on the voxel grid.

Discretization: trilinear (Q1) hexahedral elements on the voxel partition,
one periodic node per voxel corner equivalence class, 2x2x2 Gauss quadrature
per voxel. Linear displacement fields are reproduced exactly and the
element Jacobian is one constant matrix for the whole grid, so every
operator below is a short stencil.

Field layouts (all plain float arrays):

* nodal displacement / functional:  ``(n1, n2, n3, 3)``
* per-quadrature-point Mandel field: ``(n1, n2, n3, 8, 6)``

``div_adjoint`` is defined as the exact transpose of the quadrature pairing,
so the discrete Green identity

    integral <s, sym_grad v>  ==  <div_adjoint(s), v>_nodes

holds to rounding by construction; the continuous minus-divergence sign is
absorbed into this dual pairing.
"""

from __future__ import annotations

from dataclasses import dataclass
import itertools

import numpy as np

from .cell import VoxelCell, cell_average
from .mandel import SQRT2, mandel_to_sym

#: corner offsets of a voxel, fixed ordering shared by gather and scatter
CORNERS = tuple(itertools.product((0, 1), repeat=3))

_GAUSS_1D = (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0))
#: Gauss points on the reference unit cube, fixed ordering
GAUSS_POINTS = tuple(itertools.product(_GAUSS_1D, repeat=3))


class SolverFailure(RuntimeError):
    """Raised when an auxiliary inner solve stalls."""


@dataclass
class LinPerField:
    """Displacement of the form ``u(y) = A y + phi(y)`` with periodic phi.

    ``macro`` is the symmetric matrix A as a Mandel 6-vector; ``periodic``
    holds the nodal coefficients of phi. The cell average of the symmetric
    gradient of such a field equals ``macro`` (the periodic part contributes
    zero mean strain).
    """

    macro: np.ndarray
    periodic: np.ndarray

    def __post_init__(self):
        self.macro = np.asarray(self.macro, dtype=float)
        self.periodic = np.asarray(self.periodic, dtype=float)

    @classmethod
    def zeros(cls, cell: VoxelCell, macro=None) -> "LinPerField":
        m = np.zeros(6) if macro is None else np.asarray(macro, dtype=float)
        return cls(m, np.zeros(cell.dims + (3,)))


def shape_gradients(cell: VoxelCell) -> np.ndarray:
    """Physical shape-function gradients, shape ``(8 gauss, 8 corners, 3)``."""
    jac = cell.lattice.matrix @ np.diag([1.0 / n for n in cell.dims])
    jinv_t = np.linalg.inv(jac).T
    grad = np.zeros((8, 8, 3))
    for qi, xi in enumerate(GAUSS_POINTS):
        for ai, a in enumerate(CORNERS):
            g = np.zeros(3)
            for d in range(3):
                val = 2.0 * a[d] - 1.0
                for dd in range(3):
                    if dd != d:
                        val *= xi[dd] if a[dd] else 1.0 - xi[dd]
                g[d] = val
            grad[qi, ai] = jinv_t @ g
    return grad


def strain_tables(cell: VoxelCell) -> np.ndarray:
    """Mandel strain-displacement matrices, shape ``(8, 8, 6, 3)``.

    ``B[q, a] @ u_a`` is the Mandel strain contribution of corner ``a`` at
    Gauss point ``q``.
    """
    g = shape_gradients(cell)
    b = np.zeros((8, 8, 6, 3))
    b[:, :, 0, 0] = g[:, :, 0]
    b[:, :, 1, 1] = g[:, :, 1]
    b[:, :, 2, 2] = g[:, :, 2]
    b[:, :, 3, 1] = g[:, :, 2] / SQRT2
    b[:, :, 3, 2] = g[:, :, 1] / SQRT2
    b[:, :, 4, 0] = g[:, :, 2] / SQRT2
    b[:, :, 4, 2] = g[:, :, 0] / SQRT2
    b[:, :, 5, 0] = g[:, :, 1] / SQRT2
    b[:, :, 5, 1] = g[:, :, 0] / SQRT2
    return b


def gather_corners(values: np.ndarray) -> np.ndarray:
    """Collect the 8 corner-node values of every voxel, shape ``dims+(8,3)``."""
    return np.stack(
        [np.roll(values, shift=(-a[0], -a[1], -a[2]), axis=(0, 1, 2)) for a in CORNERS],
        axis=3,
    )


def sym_gradient(cell: VoxelCell, u: LinPerField, tables: np.ndarray | None = None) -> np.ndarray:
    """Symmetric gradient of ``u`` at every Gauss point, Mandel components."""
    b = strain_tables(cell) if tables is None else tables
    gath = gather_corners(u.periodic)
    e = np.einsum("qacd,ijkad->ijkqc", b, gath)
    e += u.macro
    return e


def div_adjoint(cell: VoxelCell, s: np.ndarray, tables: np.ndarray | None = None) -> np.ndarray:
    """Nodal functional dual to the quadrature pairing with ``sym_gradient``.

    Returns the array ``F`` with ``<F, v>_nodes = integral <s, sym_grad v>``
    for every periodic nodal field ``v``.
    """
    b = strain_tables(cell) if tables is None else tables
    w = cell.voxel_volume / 8.0
    out = np.zeros(cell.dims + (3,))
    for ai, a in enumerate(CORNERS):
        contrib = w * np.einsum("qcd,ijkqc->ijkd", b[:, ai], s)
        out += np.roll(contrib, shift=a, axis=(0, 1, 2))
    return out


def quad_inner(cell: VoxelCell, f: np.ndarray, g: np.ndarray) -> float:
    """L2 inner product of two quadrature fields."""
    w = cell.voxel_volume / 8.0
    return float(w * np.sum(f * g))


def quad_norm(cell: VoxelCell, f: np.ndarray) -> float:
    """L2 norm of a quadrature field."""
    return float(np.sqrt(max(quad_inner(cell, f, f), 0.0)))


def node_mean(values: np.ndarray) -> np.ndarray:
    """Mean nodal value per component."""
    return values.mean(axis=(0, 1, 2))


def node_centroid(cell: VoxelCell) -> np.ndarray:
    """Mean position of the periodic nodes (nodes sit at G @ (i/n))."""
    frac = np.array([(n - 1) / (2.0 * n) for n in cell.dims])
    return cell.lattice.matrix @ frac


def project_zero_mean(cell: VoxelCell, u: LinPerField) -> LinPerField:
    """Shift ``u`` by a constant vector so its nodal cell average vanishes.

    The symmetric gradient is unchanged (constants drop out); idempotent.
    """
    shift = node_mean(u.periodic) + mandel_to_sym(u.macro) @ node_centroid(cell)
    return LinPerField(u.macro.copy(), u.periodic - shift)


def dual_norm_scale(cell: VoxelCell) -> float:
    """Operator-norm bound converting L2 field size to nodal-functional size.

    ``|div_adjoint(s)|_2 <= dual_norm_scale * |s|_L2`` for every field s;
    the bound is sqrt(8 * lambda_max) of one element Gram matrix (a node
    touches at most 8 elements).
    """
    b = strain_tables(cell)
    w = cell.voxel_volume / 8.0
    bm = b.transpose(0, 2, 1, 3).reshape(8, 6, 24)
    gram = w * np.einsum("qci,qcj->ij", bm, bm)
    lam = np.linalg.eigvalsh(gram)[-1]
    return float(np.sqrt(8.0 * max(lam, 0.0)))


def is_equilibrated(cell: VoxelCell, s: np.ndarray, mean: np.ndarray, tol: float):
    """Weak test for membership in the admissible stress set.

    A quadrature stress field is accepted when its weak divergence vanishes
    against every periodic test displacement and its cell average equals
    ``mean``, both up to ``tol``.

    Returns
    -------
    (ok, div_residual, mean_residual) : tuple[bool, float, float]
        Dimensionless residual ratios; the divergence one is measured in the
        nodal dual norm scaled by ``dual_norm_scale * |s|_L2``, the mean one
        relative to ``|mean|`` (absolute when ``mean`` is zero).
    """
    mean = np.asarray(mean, dtype=float)
    fnorm = float(np.linalg.norm(div_adjoint(cell, s)))
    scale = dual_norm_scale(cell) * quad_norm(cell, s)
    div_res = fnorm / scale if scale > 0.0 else 0.0
    dmean = np.linalg.norm(cell_average(cell, s) - mean)
    mnorm = np.linalg.norm(mean)
    mean_res = float(dmean / mnorm) if mnorm > 0.0 else float(dmean)
    return (div_res <= tol and mean_res <= tol), div_res, mean_res


def compatibility_residual(cell: VoxelCell, e: np.ndarray,
                           tol: float = 1e-12, max_iter: int | None = None) -> float:
    """L2 distance from ``e`` to the range of ``sym_gradient``.

    The best macro part is the cell average of ``e`` (periodic gradients have
    zero mean), and the periodic part solves the normal equations of the
    least-squares fit, run here with conjugate gradients on the unit-material
    stiffness. Zero iff ``e`` is a discrete compatible strain.
    """
    tables = strain_tables(cell)
    macro = cell_average(cell, e)
    rhs = div_adjoint(cell, e, tables)
    rhs -= node_mean(rhs)

    def op(phi):
        field = sym_gradient(cell, LinPerField(np.zeros(6), phi), tables)
        out = div_adjoint(cell, field, tables)
        return out - node_mean(out)

    phi = _plain_cg(op, rhs, tol=tol, max_iter=max_iter or 6 * rhs.size)
    fit = sym_gradient(cell, LinPerField(macro, phi), tables)
    return quad_norm(cell, e - fit)


def _plain_cg(op, b, tol, max_iter):
    """Minimal CG on an SPSD operator; used by least-squares projections."""
    bnorm = float(np.linalg.norm(b))
    x = np.zeros_like(b)
    if bnorm == 0.0:
        return x
    r = b.copy()
    p = r.copy()
    rr = float(np.sum(r * r))
    for _ in range(int(max_iter)):
        if np.sqrt(rr) <= tol * bnorm:
            return x
        ap = op(p)
        pap = float(np.sum(p * ap))
        if pap <= 0.0:
            break
        alpha = rr / pap
        x += alpha * p
        r -= alpha * ap
        rr_new = float(np.sum(r * r))
        p = r + (rr_new / rr) * p
        rr = rr_new
    if np.sqrt(rr) <= max(tol * 100.0, 1e-8) * bnorm:
        return x
    raise SolverFailure(
        f"least-squares projection stalled at residual {np.sqrt(rr) / bnorm:.3e}"
    )
