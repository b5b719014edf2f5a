"""Element shapes and their tensor-product basis composition.

Defines the six supported element shapes, their admissible mode index sets,
the per-direction quadrature composition (Gauss-Lobatto in regular
directions, Gauss-Radau-Jacobi in collapsed ones, with the Duffy Jacobian
absorbed analytically into the weights), the square/cube-to-simplex Duffy
maps and their chain-rule metric factors, and the assembly of the dense
multi-dimensional basis-evaluation matrix from one-dimensional factors.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from speckern.bases import (
    BasisKind,
    QuadKind,
    QuadratureRule,
    build_basis_matrices,
    build_diff_matrix,
    compute_rule,
    modified_a,
    modified_a_deriv,
    modified_b,
    modified_b_deriv,
    warped_family,
)

__all__ = [
    "Shape",
    "ShapeBasis",
    "CollapsedMap",
    "mode_count",
    "quad_point_counts",
    "index_set",
    "duffy_forward",
    "duffy_inverse",
    "build_collapsed_metric",
    "build_shape_basis",
    "eval_mode_values",
]

_SINGULAR_TOL = 1e-14

#: Test-only hook: callable applied to every nonconstant collapsed-metric
#: entry as it is built.  Lets the verification harness prove it detects a
#: corrupted chain-rule factor on simplex-type shapes.  Never set in
#: production code.
_METRIC_FAULT_HOOK: Callable[[np.ndarray], np.ndarray] | None = None


class Shape(enum.Enum):
    """Supported element shapes."""

    QUAD = "quad"
    TRI = "tri"
    HEX = "hex"
    PRISM = "prism"
    PYR = "pyr"
    TET = "tet"

    @property
    def ndim(self) -> int:
        return 2 if self in (Shape.QUAD, Shape.TRI) else 3


#: Quadrature family per local direction.  Collapsed directions use Radau
#: rules whose fixed endpoint is -1, so the singular point eta = +1 is never
#: a quadrature abscissa; the weight exponent matches the power of
#: (1 - eta)/2 in the Duffy Jacobian (1 for single, 2 for double collapse).
_RULE_KINDS: dict[Shape, tuple[QuadKind, ...]] = {
    Shape.QUAD: (QuadKind.GAUSS_LOBATTO_LEGENDRE,) * 2,
    Shape.TRI: (
        QuadKind.GAUSS_LOBATTO_LEGENDRE,
        QuadKind.GAUSS_RADAU_JACOBI_ALPHA1,
    ),
    Shape.HEX: (QuadKind.GAUSS_LOBATTO_LEGENDRE,) * 3,
    Shape.PRISM: (
        QuadKind.GAUSS_LOBATTO_LEGENDRE,
        QuadKind.GAUSS_LOBATTO_LEGENDRE,
        QuadKind.GAUSS_RADAU_JACOBI_ALPHA1,
    ),
    Shape.PYR: (
        QuadKind.GAUSS_LOBATTO_LEGENDRE,
        QuadKind.GAUSS_LOBATTO_LEGENDRE,
        QuadKind.GAUSS_RADAU_JACOBI_ALPHA2,
    ),
    Shape.TET: (
        QuadKind.GAUSS_LOBATTO_LEGENDRE,
        QuadKind.GAUSS_RADAU_JACOBI_ALPHA1,
        QuadKind.GAUSS_RADAU_JACOBI_ALPHA2,
    ),
}

#: Constant part of the Duffy Jacobian folded into the reference weights
#: (the (1 - eta)^alpha part is absorbed by the Radau weight function).
_DUFFY_SCALE: dict[Shape, tuple[float, ...]] = {
    Shape.QUAD: (1.0, 1.0),
    Shape.TRI: (1.0, 0.5),
    Shape.HEX: (1.0, 1.0, 1.0),
    Shape.PRISM: (1.0, 1.0, 0.5),
    Shape.PYR: (1.0, 1.0, 0.25),
    Shape.TET: (1.0, 0.5, 0.25),
}


def mode_count(shape: Shape, order: int) -> int:
    """Number of expansion modes of a shape at polynomial order ``order``."""
    if order < 1:
        raise ValueError(f"polynomial order must be at least 1, got {order}")
    p = order
    if shape is Shape.QUAD:
        return (p + 1) ** 2
    if shape is Shape.TRI:
        return (p + 1) * (p + 2) // 2
    if shape is Shape.HEX:
        return (p + 1) ** 3
    if shape is Shape.PRISM:
        return (p + 1) ** 2 * (p + 2) // 2
    if shape is Shape.PYR:
        return (p + 1) * (p + 2) * (2 * p + 3) // 6
    if shape is Shape.TET:
        return (p + 1) * (p + 2) * (p + 3) // 6
    raise ValueError(f"unsupported shape: {shape!r}")


def quad_point_counts(shape: Shape, order: int) -> tuple[int, ...]:
    """Points per direction: ``P + 2`` Lobatto, ``P + 1`` Radau (collapsed)."""
    if order < 1:
        raise ValueError(f"polynomial order must be at least 1, got {order}")
    return tuple(
        order + 2 if k is QuadKind.GAUSS_LOBATTO_LEGENDRE else order + 1
        for k in _RULE_KINDS[shape]
    )


def index_set(shape: Shape, order: int) -> tuple[tuple[int, ...], ...]:
    """Admissible mode tuples, lexicographic with the first index slowest."""
    p_ = order
    if shape is Shape.QUAD:
        modes = [(p, q) for p in range(p_ + 1) for q in range(p_ + 1)]
    elif shape is Shape.TRI:
        modes = [(p, q) for p in range(p_ + 1) for q in range(p_ + 1 - p)]
    elif shape is Shape.HEX:
        modes = [
            (p, q, r)
            for p in range(p_ + 1)
            for q in range(p_ + 1)
            for r in range(p_ + 1)
        ]
    elif shape is Shape.PRISM:
        modes = [
            (p, q, r)
            for p in range(p_ + 1)
            for q in range(p_ + 1)
            for r in range(p_ + 1 - p)
        ]
    elif shape is Shape.PYR:
        modes = [
            (p, q, r)
            for p in range(p_ + 1)
            for q in range(p_ + 1)
            for r in range(p_ + 1 - max(p, q))
        ]
    elif shape is Shape.TET:
        modes = [
            (p, q, r)
            for p in range(p_ + 1)
            for q in range(p_ + 1 - p)
            for r in range(p_ + 1 - p - q)
        ]
    else:
        raise ValueError(f"unsupported shape: {shape!r}")
    return tuple(modes)


# ---------------------------------------------------------------------------
# Duffy transformations


def duffy_forward(shape: Shape, xi) -> np.ndarray:
    """Map standard-region coordinates ``xi`` to collapsed coordinates ``eta``.

    Raises ``ValueError`` when evaluated at the collapsed singularity (for
    example ``xi_2 = 1`` on the triangle), where the map is undefined.
    """
    xi = np.asarray(xi, dtype=float)
    eta = xi.copy()
    if shape in (Shape.QUAD, Shape.HEX):
        return eta
    if shape is Shape.TRI:
        den = 1.0 - xi[..., 1]
        _check_nonsingular(den)
        eta[..., 0] = 2.0 * (1.0 + xi[..., 0]) / den - 1.0
    elif shape in (Shape.PRISM, Shape.PYR):
        den = 1.0 - xi[..., 2]
        _check_nonsingular(den)
        eta[..., 0] = 2.0 * (1.0 + xi[..., 0]) / den - 1.0
        if shape is Shape.PYR:
            eta[..., 1] = 2.0 * (1.0 + xi[..., 1]) / den - 1.0
    elif shape is Shape.TET:
        den1 = -xi[..., 1] - xi[..., 2]
        den2 = 1.0 - xi[..., 2]
        _check_nonsingular(den1)
        _check_nonsingular(den2)
        eta[..., 0] = 2.0 * (1.0 + xi[..., 0]) / den1 - 1.0
        eta[..., 1] = 2.0 * (1.0 + xi[..., 1]) / den2 - 1.0
    else:
        raise ValueError(f"unsupported shape: {shape!r}")
    return eta


def duffy_inverse(shape: Shape, eta) -> np.ndarray:
    """Map collapsed coordinates ``eta`` in ``[-1, 1]^d`` to the standard region."""
    eta = np.asarray(eta, dtype=float)
    xi = eta.copy()
    if shape in (Shape.QUAD, Shape.HEX):
        return xi
    if shape is Shape.TRI:
        xi[..., 0] = 0.5 * (1.0 + eta[..., 0]) * (1.0 - eta[..., 1]) - 1.0
    elif shape is Shape.PRISM:
        xi[..., 0] = 0.5 * (1.0 + eta[..., 0]) * (1.0 - eta[..., 2]) - 1.0
    elif shape is Shape.PYR:
        xi[..., 0] = 0.5 * (1.0 + eta[..., 0]) * (1.0 - eta[..., 2]) - 1.0
        xi[..., 1] = 0.5 * (1.0 + eta[..., 1]) * (1.0 - eta[..., 2]) - 1.0
    elif shape is Shape.TET:
        xi[..., 1] = 0.5 * (1.0 + eta[..., 1]) * (1.0 - eta[..., 2]) - 1.0
        xi[..., 0] = (
            0.25 * (1.0 + eta[..., 0]) * (1.0 - eta[..., 1]) * (1.0 - eta[..., 2])
            - 1.0
        )
    else:
        raise ValueError(f"unsupported shape: {shape!r}")
    return xi


def _check_nonsingular(den: np.ndarray) -> None:
    if np.any(np.abs(den) < _SINGULAR_TOL):
        raise ValueError("Duffy transformation evaluated at the collapsed singularity")


# ---------------------------------------------------------------------------
# Collapsed-coordinate chain rule


@dataclass(frozen=True)
class CollapsedMap:
    """Chain-rule factors ``G`` with ``grad_xi = G grad_eta`` at tensor points.

    ``entries[i][j]`` is ``None`` (zero), a float (constant) or an array over
    the flattened tensor grid.  ``identity`` is set for the non-collapsed
    shapes where ``G`` is the identity at every point.
    """

    shape: Shape
    identity: bool
    entries: tuple[tuple[object, ...], ...]


def build_collapsed_metric(
    shape: Shape, rules: tuple[QuadratureRule, ...]
) -> CollapsedMap:
    """Chain-rule metric of the Duffy map on a tensor grid of rule points.

    The collapsed-direction rules must exclude the singular endpoint
    ``eta = +1``; all returned entries are then finite.
    """
    grids = np.meshgrid(*[r.points for r in rules], indexing="ij")
    flat = [g.ravel() for g in grids]
    ndim = shape.ndim
    for d, kind in enumerate(_RULE_KINDS[shape]):
        if kind is not QuadKind.GAUSS_LOBATTO_LEGENDRE and np.any(
            flat[d] >= 1.0 - _SINGULAR_TOL
        ):
            raise ValueError("collapsed-direction rule includes the singular endpoint")

    def _hook(arr: np.ndarray) -> np.ndarray:
        return _METRIC_FAULT_HOOK(arr) if _METRIC_FAULT_HOOK is not None else arr

    zero = None
    one = 1.0
    if shape in (Shape.QUAD, Shape.HEX):
        entries = tuple(
            tuple(one if i == j else zero for j in range(ndim)) for i in range(ndim)
        )
        return CollapsedMap(shape, True, entries)
    if shape is Shape.TRI:
        e1, e2 = flat
        g00 = _hook(2.0 / (1.0 - e2))
        g10 = _hook((1.0 + e1) / (1.0 - e2))
        entries = ((g00, zero), (g10, one))
    elif shape is Shape.PRISM:
        e1, _, e3 = flat
        g00 = _hook(2.0 / (1.0 - e3))
        g20 = _hook((1.0 + e1) / (1.0 - e3))
        entries = ((g00, zero, zero), (zero, one, zero), (g20, zero, one))
    elif shape is Shape.PYR:
        e1, e2, e3 = flat
        g00 = _hook(2.0 / (1.0 - e3))
        g11 = _hook(2.0 / (1.0 - e3))
        g20 = _hook((1.0 + e1) / (1.0 - e3))
        g21 = _hook((1.0 + e2) / (1.0 - e3))
        entries = ((g00, zero, zero), (zero, g11, zero), (g20, g21, one))
    elif shape is Shape.TET:
        e1, e2, e3 = flat
        g00 = _hook(4.0 / ((1.0 - e2) * (1.0 - e3)))
        g10 = _hook(2.0 * (1.0 + e1) / ((1.0 - e2) * (1.0 - e3)))
        g11 = _hook(2.0 / (1.0 - e3))
        g20 = _hook(2.0 * (1.0 + e1) / ((1.0 - e2) * (1.0 - e3)))
        g21 = _hook((1.0 + e2) / (1.0 - e3))
        entries = ((g00, zero, zero), (g10, g11, zero), (g20, g21, one))
    else:
        raise ValueError(f"unsupported shape: {shape!r}")
    for row in entries:
        for ent in row:
            if isinstance(ent, np.ndarray) and not np.all(np.isfinite(ent)):
                raise ValueError("chain-rule metric is singular at a quadrature point")
    return CollapsedMap(shape, False, entries)


# ---------------------------------------------------------------------------
# Mode evaluation (direct route, including the collapsed-vertex special cases)


def eval_mode_values(
    shape: Shape,
    order: int,
    mode: tuple[int, ...],
    grids: tuple[np.ndarray, ...],
    deriv_dir: int | None = None,
) -> np.ndarray:
    """Evaluate one expansion mode on a tensor grid of collapsed coordinates.

    Returns the flattened values over the tensor product of the 1D ``grids``
    (first direction slowest).  ``deriv_dir`` selects the derivative with
    respect to that collapsed coordinate instead of the value.

    The vertex modes that sit on a collapsed vertex or edge drop their
    leading tensor factors so the mapped functions stay single-valued there:
    mode ``(0, 1)`` of the triangle is ``psi^b_{01}(eta_2)`` alone, and the
    analogous tet/prism/pyramid modes follow the same pattern.
    """
    factors = _mode_factors(shape, order, mode)
    arrays = []
    for d, grid in enumerate(grids):
        val_fn, der_fn = factors[d]
        fn = der_fn if deriv_dir == d else val_fn
        arrays.append(fn(grid))
    out = arrays[0]
    for arr in arrays[1:]:
        out = np.multiply.outer(out, arr)
    return out.ravel()


def _ones_factor() -> tuple[Callable, Callable]:
    return (lambda z: np.ones_like(np.asarray(z, dtype=float))), (
        lambda z: np.zeros_like(np.asarray(z, dtype=float))
    )


def _a_factor(p: int) -> tuple[Callable, Callable]:
    return (lambda z: modified_a(p, z)), (lambda z: modified_a_deriv(p, z))


def _b_factor(p: int, q: int) -> tuple[Callable, Callable]:
    return (lambda z: modified_b(p, q, z)), (lambda z: modified_b_deriv(p, q, z))


def _mode_factors(
    shape: Shape, order: int, mode: tuple[int, ...]
) -> list[tuple[Callable, Callable]]:
    if shape is Shape.QUAD:
        p, q = mode
        return [_a_factor(p), _a_factor(q)]
    if shape is Shape.HEX:
        p, q, r = mode
        return [_a_factor(p), _a_factor(q), _a_factor(r)]
    if shape is Shape.TRI:
        p, q = mode
        if (p, q) == (0, 1):
            return [_ones_factor(), _b_factor(0, 1)]
        return [_a_factor(p), _b_factor(p, q)]
    if shape is Shape.TET:
        p, q, r = mode
        if (p, q, r) == (0, 0, 1):
            return [_ones_factor(), _ones_factor(), _b_factor(0, 1)]
        if (p, q) == (0, 1):
            return [_ones_factor(), _b_factor(0, 1), _b_factor(1, r)]
        return [_a_factor(p), _b_factor(p, q), _b_factor(p + q, r)]
    if shape is Shape.PRISM:
        p, q, r = mode
        if (p, r) == (0, 1):
            return [_ones_factor(), _a_factor(q), _b_factor(0, 1)]
        return [_a_factor(p), _a_factor(q), _b_factor(p, r)]
    if shape is Shape.PYR:
        p, q, r = mode
        if (p, q, r) == (0, 0, 1):
            return [_ones_factor(), _ones_factor(), _b_factor(0, 1)]
        return [_a_factor(p), _a_factor(q), _b_factor(max(p, q), r)]
    raise ValueError(f"unsupported shape: {shape!r}")


# ---------------------------------------------------------------------------
# Assembled per-shape basis


@dataclass(frozen=True)
class ShapeBasis:
    """Per-direction bases, quadrature and dense evaluation matrix of a shape.

    The dense matrix ``bmat`` has one column per mode and one row per tensor
    quadrature point (first direction slowest); ``dbmats[d]`` is its
    collocation derivative with respect to collapsed coordinate ``d``.
    ``tables`` holds the per-direction 1D factor matrices consumed by the
    sum-factorised kernels; ``gmap`` the collapsed chain-rule factors.
    """

    shape: Shape
    order: int
    rules: tuple[QuadratureRule, ...]
    qcounts: tuple[int, ...]
    n_points: int
    modes: tuple[tuple[int, ...], ...]
    n_modes: int
    mode_index: dict
    eta: tuple[np.ndarray, ...]
    ref_weights: np.ndarray
    dmats: tuple[np.ndarray, ...]
    bmat: np.ndarray
    dbmats: tuple[np.ndarray, ...]
    gmap: CollapsedMap
    tables: "SumFacTables"

    @property
    def ndim(self) -> int:
        return self.shape.ndim


@dataclass(frozen=True)
class SumFacTables:
    """1D factor matrices for the sum-factorised kernels.

    ``a[d]`` is ``(values, derivatives)`` of the full family in direction
    ``d`` or ``None`` when that direction is warped; warped directions carry
    per-leading-index slices instead (``b2`` keyed by ``p``, ``c3`` keyed by
    the combined index the third direction depends on).
    """

    a: tuple[tuple[np.ndarray, np.ndarray] | None, ...]
    b2: tuple[tuple[np.ndarray, np.ndarray], ...] | None = None
    c3: tuple[tuple[np.ndarray, np.ndarray], ...] | None = None


def _default_rules(shape: Shape, order: int) -> tuple[QuadratureRule, ...]:
    return tuple(
        compute_rule(kind, q)
        for kind, q in zip(_RULE_KINDS[shape], quad_point_counts(shape, order))
    )


@lru_cache(maxsize=None)
def _build_shape_basis_cached(
    shape: Shape, order: int, qpoints: tuple[int, ...] | None
) -> ShapeBasis:
    kinds = _RULE_KINDS[shape]
    counts = quad_point_counts(shape, order) if qpoints is None else qpoints
    if len(counts) != shape. ndim:
        raise ValueError(
            f"{shape.value} needs {shape.ndim} per-direction point counts, got {counts}"
        )
    rules = tuple(compute_rule(kind, q) for kind, q in zip(kinds, counts))
    eta = tuple(r.points for r in rules)
    modes = index_set(shape, order)
    mode_index = {m: i for i, m in enumerate(modes)}
    n_points = int(np.prod(counts))

    scale = _DUFFY_SCALE[shape]
    wdirs = [r.weights * s for r, s in zip(rules, scale)]
    ref_weights = wdirs[0]
    for w in wdirs[1:]:
        ref_weights = np.multiply.outer(ref_weights, w)
    ref_weights = ref_weights.ravel()

    dmats = tuple(build_diff_matrix(r).matrix for r in rules)

    bcols = [eval_mode_values(shape, order, m, eta) for m in modes]
    bmat = np.stack(bcols, axis=1)

    dbmats = tuple(_tensor_diff(bmat, dmats, counts, d) for d in range(shape.ndim))

    gmap = build_collapsed_metric(shape, rules)
    tables = _build_tables(shape, order, rules)

    for arr in (ref_weights, bmat, *dbmats):
        arr.setflags(write=False)

    return ShapeBasis(
        shape=shape,
        order=order,
        rules=rules,
        qcounts=tuple(counts),
        n_points=n_points,
        modes=modes,
        n_modes=len(modes),
        mode_index=mode_index,
        eta=eta,
        ref_weights=ref_weights,
        dmats=dmats,
        bmat=bmat,
        dbmats=dbmats,
        gmap=gmap,
        tables=tables,
    )


def build_shape_basis(
    shape: Shape, order: int, qpoints: tuple[int, ...] | None = None
) -> ShapeBasis:
    """Assemble the full basis/quadrature bundle for a shape and order.

    ``qpoints`` overrides the per-direction point counts (each must be at
    least ``order + 2`` in Lobatto directions and ``order + 1`` in collapsed
    ones so the quadrature keeps its exactness guarantees).
    """
    if order < 1:
        raise ValueError(f"polynomial order must be at least 1, got {order}")
    if qpoints is not None:
        qpoints = tuple(int(q) for q in qpoints)
        for q, kind, qmin in zip(
            qpoints, _RULE_KINDS[shape], quad_point_counts(shape, order)
        ):
            if q < qmin:
                raise ValueError(
                    f"direction needs at least {qmin} points for order {order}, got {q}"
                )
    return _build_shape_basis_cached(shape, order, qpoints)


def _tensor_diff(
    bmat: np.ndarray, dmats: tuple[np.ndarray, ...], counts: tuple[int, ...], d: int
) -> np.ndarray:
    """Collocation derivative of every column of ``bmat`` in direction ``d``."""
    full = bmat.reshape(*counts, -1)
    out = np.moveaxis(
        np.tensordot(dmats[d], full, axes=([1], [d])), 0, d
    )
    return np.ascontiguousarray(out.reshape(bmat.shape))


def _build_tables(
    shape: Shape, order: int, rules: tuple[QuadratureRule, ...]
) -> SumFacTables:
    def a_pair(rule: QuadratureRule) -> tuple[np.ndarray, np.ndarray]:
        b = build_basis_matrices(BasisKind.MODIFIED_A, order, rule)
        return b.eval_matrix, b.deriv_matrix

    def fam(rule: QuadratureRule) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
        return tuple(warped_family(BasisKind.MODIFIED_B, order, rule))

    if shape is Shape.QUAD:
        return SumFacTables(a=(a_pair(rules[0]), a_pair(rules[1])))
    if shape is Shape.HEX:
        return SumFacTables(a=tuple(a_pair(r) for r in rules))
    if shape is Shape.TRI:
        return SumFacTables(a=(a_pair(rules[0]), None), b2=fam(rules[1]))
    if shape is Shape.TET:
        return SumFacTables(
            a=(a_pair(rules[0]), None, None), b2=fam(rules[1]), c3=fam(rules[2])
        )
    if shape is Shape.PRISM:
        return SumFacTables(
            a=(a_pair(rules[0]), a_pair(rules[1]), None), c3=fam(rules[2])
        )
    if shape is Shape.PYR:
        return SumFacTables(
            a=(a_pair(rules[0]), a_pair(rules[1]), None), c3=fam(rules[2])
        )
    raise ValueError(f"unsupported shape: {shape!r}")
