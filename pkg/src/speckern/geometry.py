"""Element coordinate mappings, Jacobians and precomputed metric factors.

Regular (affine) elements carry one constant ``d x d`` metric and one
Jacobian scalar each; Deformed (curvilinear) elements carry per-quadrature-
point metrics obtained by collocation differentiation of the iso-parametric
coordinate field followed by pointwise inversion.  Synthetic element
generators for benchmarking are seeded deterministically per element.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

import numpy as np

from speckern.shapes import Shape, ShapeBasis, duffy_inverse

__all__ = [
    "GeometryClass",
    "GeometricFactors",
    "DegenerateElementError",
    "REFERENCE_VERTICES",
    "make_affine_block",
    "make_deformed_block",
    "deformed_factors_from_coords",
    "fuse_weights",
    "synthetic_affine_vertices",
    "synthetic_deformation",
    "make_synthetic_factors",
]


class GeometryClass(enum.Enum):
    """Affine (Regular) versus curvilinear (Deformed) element mappings."""

    REGULAR = "regular"
    DEFORMED = "deformed"


class DegenerateElementError(ValueError):
    """Raised when an element mapping has a nonpositive Jacobian."""


#: Vertices of the standard (reference) element of each shape.
REFERENCE_VERTICES: dict[Shape, np.ndarray] = {
    Shape.QUAD: np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float),
    Shape.TRI: np.array([[-1, -1], [1, -1], [-1, 1]], dtype=float),
    Shape.HEX: np.array(
        [
            [-1, -1, -1],
            [1, -1, -1],
            [1, 1, -1],
            [-1, 1, -1],
            [-1, -1, 1],
            [1, -1, 1],
            [1, 1, 1],
            [-1, 1, 1],
        ],
        dtype=float,
    ),
    Shape.PRISM: np.array(
        [
            [-1, -1, -1],
            [1, -1, -1],
            [1, 1, -1],
            [-1, 1, -1],
            [-1, -1, 1],
            [-1, 1, 1],
        ],
        dtype=float,
    ),
    Shape.PYR: np.array(
        [[-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1], [-1, -1, 1]],
        dtype=float,
    ),
    Shape.TET: np.array(
        [[-1, -1, -1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float
    ),
}

#: Vertex indices whose edges from vertex 0 span the local directions.
_EDGE_VERTICES: dict[Shape, tuple[int, ...]] = {
    Shape.QUAD: (1, 3),
    Shape.TRI: (1, 2),
    Shape.HEX: (1, 3, 4),
    Shape.PRISM: (1, 3, 4),
    Shape.PYR: (1, 3, 4),
    Shape.TET: (1, 2, 3),
}


@dataclass(frozen=True)
class GeometricFactors:
    """Metric data of one homogeneous group of elements.

    For Regular elements ``dxi_dx`` has shape ``(n_elements, d, d)`` and
    ``jac`` has shape ``(n_elements,)`` -- ``d**2 + 1`` scalars per element,
    independent of the quadrature resolution.  For Deformed elements both
    carry an extra per-point axis: ``(n_elements, n_points, d, d)`` and
    ``(n_elements, n_points)``, where ``jac`` already includes the reference
    quadrature weights (``w_l |J^e_l|``).

    ``dxi_dx[..., i, j]`` stores the entry ``d xi_i / d x_j``.
    """

    geometry_class: GeometryClass
    shape: Shape
    n_elements: int
    dxi_dx: np.ndarray
    jac: np.ndarray

    def __post_init__(self) -> None:
        self.dxi_dx.setflags(write=False)
        self.jac.setflags(write=False)


def make_affine_block(shape: Shape, vertices) -> GeometricFactors:
    """Constant metric factors for straight-sided (affine) elements.

    Parameters
    ----------
    vertices : array_like, shape (n_elements, n_verts, d) or (n_verts, d)
        Physical vertex coordinates ordered like ``REFERENCE_VERTICES``.
        Only vertex 0 and its edge neighbours enter the affine map; the
        remaining vertices must be consistent with it (parallelepiped faces
        for quads/hexes), which is the caller's responsibility.

    Raises
    ------
    DegenerateElementError
        If any element has ``|J| <= 0``.
    """
    verts = np.asarray(vertices, dtype=float)
    if verts.ndim == 2:
        verts = verts[None]
    d = shape.ndim
    nv = REFERENCE_VERTICES[shape].shape[0]
    if verts.shape[1:] != (nv, d):
        raise ValueError(
            f"{shape.value} expects vertex array (n_elements, {nv}, {d}), "
            f"got {verts.shape}"
        )
    edges = np.stack(
        [verts[:, k, :] - verts[:, 0, :] for k in _EDGE_VERTICES[shape]], axis=-1
    )  # (nelem, d, d): column j = edge along direction j
    jac_mat = 0.5 * edges  # x = v0 + edges @ (xi + 1)/2
    det = np.linalg.det(jac_mat)
    if np.any(det <= 0.0):
        bad = int(np.argmax(det <= 0.0))
        raise DegenerateElementError(
            f"element {bad} has nonpositive Jacobian {det[bad]:.3e}"
        )
    dxi_dx = np.linalg.inv(jac_mat)
    return GeometricFactors(
        GeometryClass.REGULAR, shape, verts.shape[0], dxi_dx, det
    )


def deformed_factors_from_coords(
    basis: ShapeBasis, coords: np.ndarray
) -> GeometricFactors:
    """Per-point metric factors from iso-parametric coordinate samples.

    ``coords`` holds the physical coordinates of every tensor quadrature
    point, shape ``(n_elements, n_points, d)``.  The Jacobian matrix is
    obtained by collocation differentiation on the collapsed grid followed
    by the Duffy chain rule, then inverted pointwise.
    """
    coords = np.asarray(coords, dtype=float)
    if coords.ndim == 2:
        coords = coords[None]
    d = basis.ndim
    ne = coords.shape[0]
    if coords.shape[1:] != (basis.n_points, d):
        raise ValueError(
            f"expected coords (n_elements, {basis.n_points}, {d}), got {coords.shape}"
        )
    # dx_i/deta_m at every point
    full = coords.reshape(ne, *basis.qcounts, d)
    dxdeta = np.empty((ne, basis.n_points, d, d))
    for m in range(d):
        der = np.moveaxis(
            np.tensordot(basis.dmats[m], full, axes=([1], [m + 1])), 0, m + 1
        )
        dxdeta[..., m] = der.reshape(ne, basis.n_points, d)
    # chain rule: dx_i/dxi_j = sum_m G[j][m] dx_i/deta_m
    g = basis.gmap
    if g.identity:
        jac_mat = dxdeta
    else:
        jac_mat = np.zeros_like(dxdeta)
        for j in range(d):
            for m in range(d):
                ent = g.entries[j][m]
                if ent is None:
                    continue
                term = dxdeta[..., m]
                if isinstance(ent, np.ndarray):
                    term = term * ent[None, :, None]
                jac_mat[..., j] += term
    det = np.linalg.det(jac_mat)
    if np.any(det <= 0.0):
        bad = np.argwhere(det <= 0.0)[0]
        raise DegenerateElementError(
            f"element {bad[0]} has nonpositive Jacobian {det[tuple(bad)]:.3e} "
            f"at quadrature point {bad[1]}"
        )
    dxi_dx = np.linalg.inv(jac_mat)
    wjac = basis.ref_weights[None, :] * det
    return GeometricFactors(GeometryClass.DEFORMED, basis.shape, ne, dxi_dx, wjac)


def make_deformed_block(
    basis: ShapeBasis,
    mapping: Callable[[np.ndarray], np.ndarray],
    n_elements: int = 1,
) -> GeometricFactors:
    """Metric factors for elements under a smooth coordinate mapping.

    ``mapping(xi)`` takes standard-region coordinates ``(n_points, d)`` and
    returns physical coordinates of the same shape; when ``n_elements > 1``
    it is called as ``mapping(xi, e)`` per element.
    """
    xi = quadrature_coords(basis)
    if n_elements == 1:
        coords = np.asarray(mapping(xi), dtype=float)[None]
    else:
        coords = np.stack([np.asarray(mapping(xi, e), dtype=float) for e in range(n_elements)])
    return deformed_factors_from_coords(basis, coords)


def quadrature_coords(basis: ShapeBasis) -> np.ndarray:
    """Standard-region coordinates ``xi`` of all tensor quadrature points."""
    grids = np.meshgrid(*basis.eta, indexing="ij")
    eta = np.stack([g.ravel() for g in grids], axis=-1)
    return duffy_inverse(basis.shape, eta)


def fuse_weights(factors: GeometricFactors, basis: ShapeBasis) -> np.ndarray:
    """Diagonal-W payload of a block: ``w_l |J^e_l|`` per point.

    Deformed factors already store it per point, shape
    ``(n_elements, n_points)``.  Regular factors return the scalar Jacobians
    ``(n_elements,)``, to be combined with ``basis.ref_weights`` on the fly.
    """
    del basis  # layout decided by the geometry class alone
    return factors.jac


# ---------------------------------------------------------------------------
# Synthetic benchmark geometry


def synthetic_affine_vertices(
    shape: Shape, n_elements: int, seed: int = 0, jitter: float = 0.15
) -> np.ndarray:
    """Deterministic straight-sided elements: jittered linear images of the
    standard element, one independent draw per element index."""
    ref = REFERENCE_VERTICES[shape]
    d = shape.ndim
    out = np.empty((n_elements, ref.shape[0], d))
    for e in range(n_elements):
        rng = np.random.default_rng(seed * 1_000_003 + e)
        mat = np.eye(d) + jitter * (rng.random((d, d)) - 0.5)
        # keep orientation positive
        if np.linalg.det(mat) <= 0.0:
            mat[:, 0] = -mat[:, 0]
        shift = rng.random(d)
        out[e] = ref @ mat.T + shift
    return out


def synthetic_deformation(
    shape: Shape, seed: int = 0, amplitude: float = 0.05
) -> Callable[[np.ndarray, int], np.ndarray]:
    """Smooth sinusoidal per-element deformations for benchmark meshes.

    Each element applies ``x = xi + a * sin(pi * xi_perm + phase)`` with
    amplitude, axis permutation and phases drawn from a per-element seed.
    Amplitudes are capped well below the invertibility limit.
    """
    d = shape.ndim
    amplitude = min(amplitude, 0.1)

    def mapping(xi: np.ndarray, e: int = 0) -> np.ndarray:
        rng = np.random.default_rng(seed * 9_999_991 + 7 * e + 1)
        amp = amplitude * (0.5 + 0.5 * rng.random(d))
        phase = 2.0 * np.pi * rng.random(d)
        perm = rng.permutation(d)
        shift = rng.random(d)
        x = xi + shift
        for i in range(d):
            x[..., i] = x[..., i] + amp[i] * np.sin(
                np.pi * xi[..., perm[i]] + phase[i]
            )
        return x

    return mapping


def make_synthetic_factors(
    basis: ShapeBasis,
    geometry_class: GeometryClass,
    n_elements: int,
    seed: int = 0,
    amplitude: float = 0.05,
) -> GeometricFactors:
    """Deterministic synthetic geometry of either class for benchmarking."""
    if geometry_class is GeometryClass.REGULAR:
        verts = synthetic_affine_vertices(basis.shape, n_elements, seed)
        return make_affine_block(basis.shape, verts)
    mapping = synthetic_deformation(basis.shape, seed, amplitude)
    return make_deformed_block(basis, mapping, n_elements)
