"""Brute-force dense elemental matrix assembly by explicit quadrature sums.

Ground truth for the fast operator strategies.  The only inputs shared with
the fast path are the quadrature rules and pointwise basis values from the
1D layer; gradients, metric chains and the assembly sums are re-derived
here with no shared contraction code and no factorisation tricks, so
agreement between the two routes is meaningful.

Two independent Helmholtz constructions are provided: the literal discrete
double sum over quadrature points, and the factored form that sandwiches
the weak Laplacian of the collocated Lagrange basis between the dense basis
matrix and its transpose.  They agree entrywise to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from speckern.geometry import GeometricFactors, GeometryClass
from speckern.operators import OperatorKind
from speckern.shapes import ShapeBasis

__all__ = [
    "DenseElementalMatrix",
    "assemble_bwd",
    "assemble_mass",
    "assemble_helmholtz",
    "assemble_helmholtz_factored",
    "apply_dense",
    "basis_gradients_xi",
]


@dataclass(frozen=True)
class DenseElementalMatrix:
    """A dense elemental operator with its provenance."""

    kind: OperatorKind
    matrix: np.ndarray

    def __post_init__(self) -> None:
        self.matrix.setflags(write=False)


def _dense_g(sb: ShapeBasis) -> np.ndarray:
    """Chain-rule factors as a dense (n_points, d, d) array."""
    d = sb.ndim
    nq = sb.n_points
    g = np.zeros((nq, d, d))
    for i in range(d):
        for j in range(d):
            ent = sb.gmap.entries[i][j]
            if ent is None:
                continue
            g[:, i, j] = ent
    return g


def _colloc_derivative_columns(sb: ShapeBasis, d: int) -> np.ndarray:
    """d(basis)/d(eta_d) at all points for all modes, via the 1D
    differentiation matrix applied along one tensor axis."""
    full = sb.bmat.reshape(*sb.qcounts, sb.n_modes)
    out = np.moveaxis(np.tensordot(sb.dmats[d], full, axes=([1], [d])), 0, d)
    return out.reshape(sb.n_points, sb.n_modes)


def basis_gradients_xi(sb: ShapeBasis) -> np.ndarray:
    """Standard-region gradients d(phi_m)/d(xi_i), shape (d, n_points, n_modes).

    Built by collocation differentiation of the pointwise basis values on
    the collapsed grid followed by the Duffy chain rule.
    """
    d = sb.ndim
    deta = np.stack([_colloc_derivative_columns(sb, k) for k in range(d)])
    g = _dense_g(sb)
    return np.einsum("lij,jlm->ilm", g, deta)


def _pointwise_metric(
    sb: ShapeBasis, factors: GeometricFactors, element: int
) -> tuple[np.ndarray, np.ndarray]:
    """(w|J| per point, dxi_dx per point) for one element."""
    if factors.geometry_class is GeometryClass.DEFORMED:
        wj = factors.jac[element]
        dxi = factors.dxi_dx[element]
    else:
        wj = sb.ref_weights * factors.jac[element]
        dxi = np.broadcast_to(
            factors.dxi_dx[element], (sb.n_points, sb.ndim, sb.ndim)
        )
    return wj, dxi


def assemble_bwd(sb: ShapeBasis) -> DenseElementalMatrix:
    """Dense backward-transform matrix (n_points x n_modes)."""
    return DenseElementalMatrix(OperatorKind.BWD_TRANS, sb.bmat.copy())


def assemble_mass(
    sb: ShapeBasis, factors: GeometricFactors, element: int = 0
) -> DenseElementalMatrix:
    """Mass matrix M[m][n] = sum_l w_l |J_l| phi_m(l) phi_n(l)."""
    wj, _ = _pointwise_metric(sb, factors, element)
    m = np.einsum("lm,l,ln->mn", sb.bmat, wj, sb.bmat)
    return DenseElementalMatrix(OperatorKind.MASS, m)


def assemble_helmholtz(
    sb: ShapeBasis, factors: GeometricFactors, lam: float, element: int = 0
) -> DenseElementalMatrix:
    """Discrete elemental Helmholtz matrix by the literal quadrature sum.

    ``H[m][n] = sum_l w_l |J_l| [lam phi_n phi_m
    + (J^-T grad phi_n) . (J^-1 grad phi_m)]`` with the standard-region
    gradients obtained by collocation differentiation plus chain rule.
    """
    if lam < 0.0:
        raise ValueError(f"reaction coefficient must be nonnegative, got {lam}")
    wj, dxi = _pointwise_metric(sb, factors, element)
    grad_xi = basis_gradients_xi(sb)
    # Cartesian gradients: d(phi)/dx_j = sum_i dxi[i, j] d(phi)/dxi_i
    grad_x = np.einsum("lij,ilm->jlm", dxi, grad_xi)
    h = lam * np.einsum("lm,l,ln->mn", sb.bmat, wj, sb.bmat)
    h = h + np.einsum("jlm,l,jln->mn", grad_x, wj, grad_x)
    return DenseElementalMatrix(OperatorKind.HELMHOLTZ_NONCOLL, h)


def assemble_helmholtz_factored(
    sb: ShapeBasis, factors: GeometricFactors, lam: float, element: int = 0
) -> DenseElementalMatrix:
    """Helmholtz matrix as ``B^T { sum_j E_j^T W E_j + lam W } B``.

    ``E_j = sum_d Lambda(T[j, d]) D_d`` collects the Cartesian derivative of
    the collocated Lagrange basis, with ``D_d`` the dense tensor collocation
    matrices and ``T`` the combined chain-rule/inverse-Jacobian factors.
    The braced term is the weak Laplacian (plus reaction) of the Lagrange
    basis through the quadrature points.
    """
    if lam < 0.0:
        raise ValueError(f"reaction coefficient must be nonnegative, got {lam}")
    d = sb.ndim
    nq = sb.n_points
    wj, dxi = _pointwise_metric(sb, factors, element)
    g = _dense_g(sb)
    # T[l, j, m]: d(eta_m)-coefficient of d/dx_j at point l
    t = np.einsum("lij,lim->ljm", dxi, g)
    dmats_full = [_dense_tensor_d(sb, k) for k in range(d)]
    core = lam * np.diag(wj)
    for j in range(d):
        e_j = np.zeros((nq, nq))
        for m in range(d):
            e_j += t[:, j, m, None] * dmats_full[m]
        core += e_j.T @ (wj[:, None] * e_j)
    h = sb.bmat.T @ core @ sb.bmat
    return DenseElementalMatrix(OperatorKind.HELMHOLTZ_COLL, h)


def _dense_tensor_d(sb: ShapeBasis, d: int) -> np.ndarray:
    """Dense (n_points x n_points) collocation derivative in direction d,
    assembled from Kronecker products of identities and the 1D matrix."""
    mats = [np.eye(q) for q in sb.qcounts]
    mats[d] = sb.dmats[d]
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    return out


def apply_dense(matrix: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """Plain matrix-vector product with a dimension check."""
    matrix = np.asarray(matrix)
    vec = np.asarray(vec)
    if matrix.shape[1] != vec.shape[0]:
        raise ValueError(
            f"dimension mismatch: matrix {matrix.shape} versus vector {vec.shape}"
        )
    return matrix @ vec
