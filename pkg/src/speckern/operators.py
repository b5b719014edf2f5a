"""Elemental operator kernels under multiple equivalent strategies.

Implements the backward transform, inner products with respect to the basis
and its derivatives, physical derivatives, the mass operator and the
Helmholtz operator (collocated and non-collocated formulations), each
dispatchable per block as:

* ``STD_MAT`` -- one dense reference-element matrix multiplication over the
  whole block (plain element-major operands),
* ``STD_MAT_GROUPED`` -- the same matrix applied per interleaved group of
  ``interleave_width`` elements, operating lane-major,
* ``SUM_FAC`` -- per-direction 1D contractions, with triangular contraction
  bounds on the warped directions of simplex-type shapes and explicit
  rank-one corrections for the collapsed-vertex modes,
* ``SUM_FAC_TOP`` -- reserved for a device work-group variant; unimplemented.

All kernels are pure functions of the block contents and run independently
per element group, so distinct blocks and distinct groups may be processed
concurrently.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache

import numpy as np

from speckern.field_block import AccessQualifier, Block, Field, FieldState, interleave_array
from speckern.geometry import GeometryClass
from speckern.shapes import Shape, ShapeBasis

__all__ = [
    "Strategy",
    "OperatorKind",
    "UnsupportedStrategyError",
    "FieldStateError",
    "bwd_trans",
    "iproduct_wrt_base",
    "phys_deriv",
    "iproduct_wrt_deriv_base",
    "mass_apply",
    "helmholtz_apply_noncoll",
    "helmholtz_apply_coll",
    "helmholtz_apply",
    "apply_operator",
    "apply_to_field",
    "operator_flops",
]


class Strategy(enum.Enum):
    STD_MAT = "stdmat"
    STD_MAT_GROUPED = "stdmat_grouped"
    SUM_FAC = "sumfac"
    SUM_FAC_TOP = "sumfac_top"  # reserved, unimplemented


class OperatorKind(enum.Enum):
    BWD_TRANS = "bwdtrans"
    IPRODUCT_WRT_BASE = "iproduct"
    PHYS_DERIV = "physderiv"
    IPRODUCT_WRT_DERIV_BASE = "iproduct_deriv"
    MASS = "mass"
    HELMHOLTZ_NONCOLL = "helmholtz_noncoll"
    HELMHOLTZ_COLL = "helmholtz_coll"


class UnsupportedStrategyError(ValueError):
    """Strategy not implemented for this build (or unknown)."""


class FieldStateError(ValueError):
    """Block is in the wrong coefficient/physical state for an operator."""


# ---------------------------------------------------------------------------
# Mode-segment bookkeeping for the warped shapes


@lru_cache(maxsize=None)
def _segments(shape: Shape, order: int):
    """Offsets of contiguous mode runs in the lexicographic mode ordering.

    tri:   per ``p``   -> (offset, n_q)
    prism: per ``p``   -> (offset, n_q, n_r)   (rectangular q x r slab)
    tet:   per ``p``   -> list per ``q`` of (offset, n_r)
    pyr:   per ``p``   -> list per ``q`` of (offset, n_r)
    """
    p1 = order + 1
    if shape is Shape.TRI:
        segs, off = [], 0
        for p in range(p1):
            segs.append((off, p1 - p))
            off += p1 - p
        return tuple(segs)
    if shape is Shape.PRISM:
        segs, off = [], 0
        for p in range(p1):
            segs.append((off, p1, p1 - p))
            off += p1 * (p1 - p)
        return tuple(segs)
    if shape in (Shape.TET, Shape.PYR):
        segs, off = [], 0
        for p in range(p1):
            row = []
            qmax = p1 - p if shape is Shape.TET else p1
            for q in range(qmax):
                nr = p1 - p - q if shape is Shape.TET else p1 - max(p, q)
                row.append((off, nr))
                off += nr
            segs.append(tuple(row))
        return tuple(segs)
    raise ValueError(f"{shape!r} has no warped segments")


def _pick(table: tuple[np.ndarray, np.ndarray], want_deriv: bool) -> np.ndarray:
    return table[1] if want_deriv else table[0]


# ---------------------------------------------------------------------------
# Sum-factorised kernels.  All take/return lane-major arrays
# (n_groups, n, width); dmode selects the derivative factor of one direction.


def _sumfac_bwd_quad(sb: ShapeBasis, x: np.ndarray, dmode):
    g, _, w = x.shape
    q1, q2 = sb.qcounts
    p1 = sb.order + 1
    b1 = _pick(sb.tables.a[0], dmode == 0)
    b2 = _pick(sb.tables.a[1], dmode == 1)
    t = np.matmul(b1, x.reshape(g, p1, p1 * w))  # (g, q1, p1*w)
    u = np.matmul(b2, t.reshape(g, q1, p1, w))
    return u.reshape(g, q1 * q2, w)


def _sumfac_bwdt_quad(sb: ShapeBasis, y: np.ndarray, dmode):
    g, _, w = y.shape
    q1, q2 = sb.qcounts
    p1 = sb.order + 1
    b1 = _pick(sb.tables.a[0], dmode == 0)
    b2 = _pick(sb.tables.a[1], dmode == 1)
    t = np.matmul(b2.T, y.reshape(g, q1, q2, w))  # (g, q1, p1, w)
    out = np.matmul(b1.T, t.reshape(g, q1, p1 * w))
    return out.reshape(g, p1 * p1, w)


def _sumfac_bwd_hex(sb: ShapeBasis, x: np.ndarray, dmode):
    g, _, w = x.shape
    q1, q2, q3 = sb.qcounts
    p1 = sb.order + 1
    b1 = _pick(sb.tables.a[0], dmode == 0)
    b2 = _pick(sb.tables.a[1], dmode == 1)
    b3 = _pick(sb.tables.a[2], dmode == 2)
    t = np.matmul(b1, x.reshape(g, p1, p1 * p1 * w))
    t = np.matmul(b2, t.reshape(g, q1, p1, p1 * w))
    u = np.matmul(b3, t.reshape(g, q1, q2, p1, w))
    return u.reshape(g, q1 * q2 * q3, w)


def _sumfac_bwdt_hex(sb: ShapeBasis, y: np.ndarray, dmode):
    g, _, w = y.shape
    q1, q2, q3 = sb.qcounts
    p1 = sb.order + 1
    b1 = _pick(sb.tables.a[0], dmode == 0)
    b2 = _pick(sb.tables.a[1], dmode == 1)
    b3 = _pick(sb.tables.a[2], dmode == 2)
    t = np.matmul(b3.T, y.reshape(g, q1, q2, q3, w))
    t = np.matmul(b2.T, t.reshape(g, q1, q2, p1 * w))
    out = np.matmul(b1.T, t.reshape(g, q1, p1 * p1 * w))
    return out.reshape(g, p1 ** 3, w)


def _sumfac_bwd_tri(sb: ShapeBasis, x: np.ndarray, dmode):
    g, _, w = x.shape
    q1, q2 = sb.qcounts
    p1 = sb.order + 1
    a1 = _pick(sb.tables.a[0], dmode == 0)
    segs = _segments(Shape.TRI, sb.order)
    t = np.empty((g, p1, q2, w))
    for p, (off, nq) in enumerate(segs):
        mat = _pick(sb.tables.b2[p], dmode == 1)
        t[:, p] = np.matmul(mat, x[:, off : off + nq, :])
    # collapsed top-vertex mode (0,1): its dropped eta_1 factor is
    # psi^a_0 + psi^a_1; the psi^a_0 share is already in the tensor sum.
    bcol = _pick(sb.tables.b2[0], dmode == 1)[:, 1]
    t[:, 1] += bcol[None, :, None] * x[:, 1, :][:, None, :]
    u = np.matmul(a1, t.reshape(g, p1, q2 * w))
    return u.reshape(g, q1 * q2, w)


def _sumfac_bwdt_tri(sb: ShapeBasis, y: np.ndarray, dmode):
    g, _, w = y.shape
    q1, q2 = sb.qcounts
    p1 = sb.order + 1
    a1 = _pick(sb.tables.a[0], dmode == 0)
    segs = _segments(Shape.TRI, sb.order)
    t = np.matmul(a1.T, y.reshape(g, q1, q2 * w)).reshape(g, p1, q2, w)
    out = np.empty((g, sb.n_modes, w))
    for p, (off, nq) in enumerate(segs):
        mat = _pick(sb.tables.b2[p], dmode == 1)
        out[:, off : off + nq, :] = np.matmul(mat.T, t[:, p])
    bcol = _pick(sb.tables.b2[0], dmode == 1)[:, 1]
    out[:, 1, :] += np.einsum("j,gjw->gw", bcol, t[:, 1])
    return out


def _sumfac_bwd_tet(sb: ShapeBasis, x: np.ndarray, dmode):
    g, _, w = x.shape
    q1, q2, q3 = sb.qcounts
    p1 = sb.order + 1
    a1 = _pick(sb.tables.a[0], dmode == 0)
    segs = _segments(Shape.TET, sb.order)
    t2 = np.zeros((g, p1, q2, q3, w))
    for p, row in enumerate(segs):
        nq = len(row)
        t1 = np.empty((g, nq, q3, w))
        for q, (off, nr) in enumerate(row):
            cmat = _pick(sb.tables.c3[p + q], dmode == 2)
            t1[:, q] = np.matmul(cmat, x[:, off : off + nr, :])
        bmat = _pick(sb.tables.b2[p], dmode == 1)
        t2[:, p] = np.matmul(bmat, t1.reshape(g, nq, q3 * w)).reshape(g, q2, q3, w)
    # collapsed-edge modes (0, 1, r): dropped eta_1 factor, psi^a_1 share
    off01, nr01 = segs[0][1]
    c1 = _pick(sb.tables.c3[1], dmode == 2)
    tmp = np.matmul(c1, x[:, off01 : off01 + nr01, :])  # (g, q3, w)
    bcol = _pick(sb.tables.b2[0], dmode == 1)[:, 1]
    t2[:, 1] += bcol[None, :, None, None] * tmp[:, None, :, :]
    # collapsed top-vertex mode (0, 0, 1)
    u001 = x[:, 1, :]  # modes are lexicographic: (0,0,0), (0,0,1), ...
    ccol = _pick(sb.tables.c3[0], dmode == 2)[:, 1]
    ones2 = (
        np.zeros(q2) if dmode == 1 else np.ones(q2)
    )  # the eta_2 factor of the psi^a_1 share is the constant 1
    t2[:, 1] += (
        ones2[None, :, None, None]
        * ccol[None, None, :, None]
        * u001[:, None, None, :]
    )
    t2[:, 0] += (
        bcol[None, :, None, None] * ccol[None, None, :, None] * u001[:, None, None, :]
    )
    u = np.matmul(a1, t2.reshape(g, p1, q2 * q3 * w))
    return u.reshape(g, q1 * q2 * q3, w)


def _sumfac_bwdt_tet(sb: ShapeBasis, y: np.ndarray, dmode):
    g, _, w = y.shape
    q1, q2, q3 = sb.qcounts
    p1 = sb.order + 1
    a1 = _pick(sb.tables.a[0], dmode == 0)
    segs = _segments(Shape.TET, sb.order)
    t2 = np.matmul(a1.T, y.reshape(g, q1, q2 * q3 * w)).reshape(g, p1, q2, q3, w)
    out = np.empty((g, sb.n_modes, w))
    for p, row in enumerate(segs):
        nq = len(row)
        bmat = _pick(sb.tables.b2[p], dmode == 1)
        t1 = np.matmul(bmat.T, t2[:, p].reshape(g, q2, q3 * w)).reshape(g, nq, q3, w)
        for q, (off, nr) in enumerate(row):
            cmat = _pick(sb.tables.c3[p + q], dmode == 2)
            out[:, off : off + nr, :] = np.matmul(cmat.T, t1[:, q])
    off01, nr01 = segs[0][1]
    bcol = _pick(sb.tables.b2[0], dmode == 1)[:, 1]
    c1 = _pick(sb.tables.c3[1], dmode == 2)
    tmp = np.einsum("j,gjkw->gkw", bcol, t2[:, 1])
    out[:, off01 : off01 + nr01, :] += np.matmul(c1.T, tmp)
    ccol = _pick(sb.tables.c3[0], dmode == 2)[:, 1]
    ones2 = np.zeros(q2) if dmode == 1 else np.ones(q2)
    out[:, 1, :] += np.einsum("j,k,gjkw->gw", ones2, ccol, t2[:, 1])
    out[:, 1, :] += np.einsum("j,k,gjkw->gw", bcol, ccol, t2[:, 0])
    return out


def _sumfac_bwd_prism(sb: ShapeBasis, x: np.ndarray, dmode):
    g, _, w = x.shape
    q1, q2, q3 = sb.qcounts
    p1 = sb.order + 1
    a1 = _pick(sb.tables.a[0], dmode == 0)
    a2 = _pick(sb.tables.a[1], dmode == 1)
    segs = _segments(Shape.PRISM, sb.order)
    t2 = np.empty((g, p1, q2, q3, w))
    for p, (off, nq, nr) in enumerate(segs):
        seg = x[:, off : off + nq * nr, :].reshape(g, nq, nr, w)
        cmat = _pick(sb.tables.c3[p], dmode == 2)
        t1 = np.matmul(cmat, seg)  # (g, nq, q3, w)
        t2[:, p] = np.matmul(a2, t1.reshape(g, nq, q3 * w)).reshape(g, q2, q3, w)
    # collapsed-edge modes (0, q, 1): dropped eta_1 factor, psi^a_1 share
    off0, nq0, nr0 = segs[0]
    c0q1 = x[:, off0 : off0 + nq0 * nr0, :].reshape(g, nq0, nr0, w)[:, :, 1, :]
    tmp = np.matmul(a2, c0q1)  # (g, q2, w)
    bcol = _pick(sb.tables.c3[0], dmode == 2)[:, 1]
    t2[:, 1] += tmp[:, :, None, :] * bcol[None, None, :, None]
    u = np.matmul(a1, t2.reshape(g, p1, q2 * q3 * w))
    return u.reshape(g, q1 * q2 * q3, w)


def _sumfac_bwdt_prism(sb: ShapeBasis, y: np.ndarray, dmode):
    g, _, w = y.shape
    q1, q2, q3 = sb.qcounts
    p1 = sb.order + 1
    a1 = _pick(sb.tables.a[0], dmode == 0)
    a2 = _pick(sb.tables.a[1], dmode == 1)
    segs = _segments(Shape.PRISM, sb.order)
    t2 = np.matmul(a1.T, y.reshape(g, q1, q2 * q3 * w)).reshape(g, p1, q2, q3, w)
    out = np.empty((g, sb.n_modes, w))
    for p, (off, nq, nr) in enumerate(segs):
        cmat = _pick(sb.tables.c3[p], dmode == 2)
        t1 = np.matmul(a2.T, t2[:, p].reshape(g, q2, q3 * w)).reshape(g, nq, q3, w)
        res = np.matmul(cmat.T, t1)  # (g, nq, nr, w)
        out[:, off : off + nq * nr, :] = res.reshape(g, nq * nr, w)
    bcol = _pick(sb.tables.c3[0], dmode == 2)[:, 1]
    tmp = np.einsum("k,gjkw->gjw", bcol, t2[:, 1])  # (g, q2, w)
    corr = np.matmul(a2.T, tmp)  # (g, nq0, w)
    off0, nq0, nr0 = segs[0]
    idx = off0 + 1 + nr0 * np.arange(nq0)  # modes (0, q, 1)
    out[:, idx, :] += corr
    return out


def _sumfac_bwd_pyr(sb: ShapeBasis, x: np.ndarray, dmode):
    g, _, w = x.shape
    q1, q2, q3 = sb.qcounts
    p1 = sb.order + 1
    a1 = _pick(sb.tables.a[0], dmode == 0)
    a2 = _pick(sb.tables.a[1], dmode == 1)
    segs = _segments(Shape.PYR, sb.order)
    t2 = np.empty((g, p1, q2, q3, w))
    for p, row in enumerate(segs):
        t1 = np.empty((g, p1, q3, w))
        for q, (off, nr) in enumerate(row):
            cmat = _pick(sb.tables.c3[max(p, q)], dmode == 2)
            t1[:, q] = np.matmul(cmat, x[:, off : off + nr, :])
        t2[:, p] = np.matmul(a2, t1.reshape(g, p1, q3 * w)).reshape(g, q2, q3, w)
    # collapsed apex mode (0, 0, 1): dropped factor is
    # psi^a_0(eta1) psi^a_0(eta2); shares psi^a_1(eta1) and
    # psi^a_0(eta1) psi^a_1(eta2) are added here.
    u001 = x[:, 1, :]
    ccol = _pick(sb.tables.c3[0], dmode == 2)[:, 1]
    ones2 = np.zeros(q2) if dmode == 1 else np.ones(q2)
    acol1 = a2[:, 1]
    t2[:, 1] += (
        ones2[None, :, None, None]
        * ccol[None, None, :, None]
        * u001[:, None, None, :]
    )
    t2[:, 0] += (
        acol1[None, :, None, None] * ccol[None, None, :, None] * u001[:, None, None, :]
    )
    u = np.matmul(a1, t2.reshape(g, p1, q2 * q3 * w))
    return u.reshape(g, q1 * q2 * q3, w)


def _sumfac_bwdt_pyr(sb: ShapeBasis, y: np.ndarray, dmode):
    g, _, w = y.shape
    q1, q2, q3 = sb.qcounts
    p1 = sb.order + 1
    a1 = _pick(sb.tables.a[0], dmode == 0)
    a2 = _pick(sb.tables.a[1], dmode == 1)
    segs = _segments(Shape.PYR, sb.order)
    t2 = np.matmul(a1.T, y.reshape(g, q1, q2 * q3 * w)).reshape(g, p1, q2, q3, w)
    out = np.empty((g, sb.n_modes, w))
    for p, row in enumerate(segs):
        t1 = np.matmul(a2.T, t2[:, p].reshape(g, q2, q3 * w)).reshape(g, p1, q3, w)
        for q, (off, nr) in enumerate(row):
            cmat = _pick(sb.tables.c3[max(p, q)], dmode == 2)
            out[:, off : off + nr, :] = np.matmul(cmat.T, t1[:, q])
    ccol = _pick(sb.tables.c3[0], dmode == 2)[:, 1]
    ones2 = np.zeros(q2) if dmode == 1 else np.ones(q2)
    acol1 = a2[:, 1]
    out[:, 1, :] += np.einsum("j,k,gjkw->gw", ones2, ccol, t2[:, 1])
    out[:, 1, :] += np.einsum("j,k,gjkw->gw", acol1, ccol, t2[:, 0])
    return out


_SUMFAC_BWD = {
    Shape.QUAD: _sumfac_bwd_quad,
    Shape.TRI: _sumfac_bwd_tri,
    Shape.HEX: _sumfac_bwd_hex,
    Shape.PRISM: _sumfac_bwd_prism,
    Shape.PYR: _sumfac_bwd_pyr,
    Shape.TET: _sumfac_bwd_tet,
}
_SUMFAC_BWDT = {
    Shape.QUAD: _sumfac_bwdt_quad,
    Shape.TRI: _sumfac_bwdt_tri,
    Shape.HEX: _sumfac_bwdt_hex,
    Shape.PRISM: _sumfac_bwdt_prism,
    Shape.PYR: _sumfac_bwdt_pyr,
    Shape.TET: _sumfac_bwdt_tet,
}


# ---------------------------------------------------------------------------
# Strategy dispatch at the array level


def _stdmat_apply(
    mat: np.ndarray, x: np.ndarray, n_elements: int, width: int, transpose: bool
) -> np.ndarray:
    """Algorithm-style single GEMM over plain element-major operands."""
    g, n, w = x.shape
    cols = x.transpose(1, 0, 2).reshape(n, g * w)[:, :n_elements]
    y = (mat.T if transpose else mat) @ cols
    return interleave_array(np.ascontiguousarray(y), width)


def _basis_apply(
    block: Block,
    x: np.ndarray,
    strategy: Strategy,
    transpose: bool = False,
    dmode: int | None = None,
) -> np.ndarray:
    sb = block.basis
    if strategy is Strategy.SUM_FAC_TOP:
        raise UnsupportedStrategyError(
            "the work-group-threaded sum-factorisation strategy is reserved "
            "but not implemented in this build"
        )
    if strategy is Strategy.STD_MAT:
        mat = sb.bmat if dmode is None else sb.dbmats[dmode]
        return _stdmat_apply(
            mat, x, block.n_elements, block.interleave_width, transpose
        )
    if strategy is Strategy.STD_MAT_GROUPED:
        mat = sb.bmat if dmode is None else sb.dbmats[dmode]
        return np.matmul(mat.T if transpose else mat, x)
    if strategy is Strategy.SUM_FAC:
        fn = _SUMFAC_BWDT[sb.shape] if transpose else _SUMFAC_BWD[sb.shape]
        return fn(sb, x, dmode)
    raise UnsupportedStrategyError(f"unknown strategy: {strategy!r}")


@lru_cache(maxsize=None)
def _lane_kron(
    shape: Shape, order: int, qcounts: tuple, d: int, width: int, transpose: bool
) -> np.ndarray:
    """``kron(D_d, I_width)^T`` so the trailing-direction sweep over
    lane-adjacent data runs as one large matrix product instead of many tiny
    batched ones."""
    from speckern.shapes import build_shape_basis

    basis = build_shape_basis(shape, order, qcounts)
    mat = basis.dmats[d].T if transpose else basis.dmats[d]
    return np.ascontiguousarray(np.kron(mat, np.eye(width)).T)


def _colloc_deriv(
    sb: ShapeBasis, u: np.ndarray, d: int, transpose: bool = False
) -> np.ndarray:
    """Collocation differentiation sweep along tensor direction ``d``."""
    g, _, w = u.shape
    qc = sb.qcounts
    if d == sb.ndim - 1:
        kron = _lane_kron(sb.shape, sb.order, sb.qcounts, d, w, transpose)
        pre = g * int(np.prod(qc[:d], initial=1))
        out = u.reshape(pre, qc[d] * w) @ kron
        return out.reshape(g, sb.n_points, w)
    pre = int(np.prod(qc[:d], initial=1))
    post = int(np.prod(qc[d + 1 :], initial=1)) * w
    mat = sb.dmats[d].T if transpose else sb.dmats[d]
    out = np.matmul(mat, u.reshape(g, pre, qc[d], post))
    return out.reshape(g, sb.n_points, w)


# ---------------------------------------------------------------------------
# Pointwise metric application


def _g_apply(block: Block, v: list[np.ndarray], transpose: bool) -> list[np.ndarray]:
    """Chain-rule factors of the Duffy map, forward or transposed."""
    gmap = block.basis.gmap
    if gmap.identity:
        return v
    d = len(v)
    out = []
    for i in range(d):
        acc = None
        for j in range(d):
            ent = gmap.entries[j][i] if transpose else gmap.entries[i][j]
            if ent is None:
                continue
            if isinstance(ent, float):
                term = v[j] if ent == 1.0 else v[j] * ent
            else:
                term = v[j] * ent[None, :, None]
            acc = term if acc is None else acc + term
        out.append(acc if acc is not None else np.zeros_like(v[0]))
    return out


def _apply_w(block: Block, u: np.ndarray) -> np.ndarray:
    """Diagonal W: quadrature weights times Jacobian."""
    if block.geometry_class is GeometryClass.DEFORMED:
        return u * block.payload("wj")
    out = u * block.basis.ref_weights[None, :, None]
    out *= block.payload("jac")
    return out


def _apply_metric(block: Block, v: list[np.ndarray]) -> list[np.ndarray]:
    """Weighted Laplacian metric: v' = G^T (Lam (G v)) with W folded in.

    ``Lam`` carries the ``dxi_dx`` products and the Jacobian; for Regular
    blocks it is constant per element and the reference weights are applied
    pointwise here, for Deformed blocks the full ``w|J|`` is baked into the
    stored payload.
    """
    d = block.basis.ndim
    t = _g_apply(block, v, transpose=False)
    lam = block.payload("lam")
    w = []
    for j in range(d):
        acc = lam[0][j] * t[0]
        for i in range(1, d):
            acc += lam[i][j] * t[i]
        w.append(acc)
    if block.geometry_class is GeometryClass.REGULAR:
        refw = block.basis.ref_weights[None, :, None]
        for wj in w:
            wj *= refw
    return _g_apply(block, w, transpose=True)


# ---------------------------------------------------------------------------
# Block-level operators


def _require_state(block: Block, state: FieldState, op: str) -> None:
    if block.state is not state:
        raise FieldStateError(
            f"{op} expects a {state.value}-state block, got {block.state.value}"
        )


def _out_block(
    block: Block, out: Block | None, state: FieldState, n_components: int
) -> Block:
    if out is None:
        return block.like(state, n_components)
    if out.state is not state or out.n_components != n_components:
        raise FieldStateError(
            f"output block must be {state.value}-state with {n_components} component(s)"
        )
    if out.basis is not block.basis or out.interleave_width != block.interleave_width:
        raise ValueError("output block layout does not match the input block")
    return out


def bwd_trans(
    block: Block, strategy: Strategy = Strategy.SUM_FAC, out: Block | None = None
) -> Block:
    """Backward transform u = B uhat: coefficient space to quadrature points."""
    _require_state(block, FieldState.COEFF, "bwd_trans")
    out = _out_block(block, out, FieldState.PHYS, block.n_components)
    xin = block.host(AccessQualifier.READ_ONLY)
    xout = out.host(AccessQualifier.WRITE_ONLY)
    for c in range(block.n_components):
        xout[c] = _basis_apply(block, xin[c], strategy)
    return out


def iproduct_wrt_base(
    block: Block, strategy: Strategy = Strategy.SUM_FAC, out: Block | None = None
) -> Block:
    """Inner product against the basis: fhat = B^T W u."""
    _require_state(block, FieldState.PHYS, "iproduct_wrt_base")
    out = _out_block(block, out, FieldState.COEFF, block.n_components)
    xin = block.host(AccessQualifier.READ_ONLY)
    xout = out.host(AccessQualifier.WRITE_ONLY)
    for c in range(block.n_components):
        xout[c] = _basis_apply(block, _apply_w(block, xin[c]), strategy, transpose=True)
    return out


def phys_deriv(block: Block, out: Block | None = None) -> Block:
    """Cartesian derivatives at quadrature points, one output component per
    space dimension: collocation differentiation, chain-rule factors on
    collapsed shapes, then the inverse-Jacobian metric."""
    _require_state(block, FieldState.PHYS, "phys_deriv")
    if block.n_components != 1:
        raise ValueError("phys_deriv expects a single-component block")
    d = block.basis.ndim
    out = _out_block(block, out, FieldState.PHYS, d)
    u = block.host(AccessQualifier.READ_ONLY)[0]
    v = [_colloc_deriv(block.basis, u, k) for k in range(d)]
    t = _g_apply(block, v, transpose=False)
    dxi = block.payload("dxi")
    xout = out.host(AccessQualifier.WRITE_ONLY)
    for j in range(d):
        acc = dxi[0][j] * t[0]
        for i in range(1, d):
            acc += dxi[i][j] * t[i]
        xout[j] = acc
    return out


def iproduct_wrt_deriv_base(
    block: Block, strategy: Strategy = Strategy.SUM_FAC, out: Block | None = None
) -> Block:
    """Inner product against basis derivatives:
    fhat = sum_d (D_d B)^T W v_d over the d input components."""
    _require_state(block, FieldState.PHYS, "iproduct_wrt_deriv_base")
    d = block.basis.ndim
    if block.n_components != d:
        raise ValueError(
            f"iproduct_wrt_deriv_base expects {d} components, got {block.n_components}"
        )
    out = _out_block(block, out, FieldState.COEFF, 1)
    xin = block.host(AccessQualifier.READ_ONLY)
    acc = None
    for k in range(d):
        term = _basis_apply(
            block, _apply_w(block, xin[k]), strategy, transpose=True, dmode=k
        )
        acc = term if acc is None else acc + term
    out.host(AccessQualifier.WRITE_ONLY)[0] = acc
    return out


def mass_apply(
    block: Block, strategy: Strategy = Strategy.SUM_FAC, out: Block | None = None
) -> Block:
    """Mass operator action M uhat = B^T W B uhat."""
    _require_state(block, FieldState.COEFF, "mass_apply")
    out = _out_block(block, out, FieldState.COEFF, block.n_components)
    xin = block.host(AccessQualifier.READ_ONLY)
    xout = out.host(AccessQualifier.WRITE_ONLY)
    for c in range(block.n_components):
        u = _basis_apply(block, xin[c], strategy)
        xout[c] = _basis_apply(block, _apply_w(block, u), strategy, transpose=True)
    return out


def helmholtz_apply_noncoll(
    block: Block,
    lam: float,
    strategy: Strategy = Strategy.STD_MAT,
    out: Block | None = None,
) -> Block:
    """Helmholtz action by the non-collocated pipeline.

    Steps: backward transform; fused backward-transform-and-derivative per
    direction; pointwise metric products; inner product against the basis
    derivatives; plus ``lam`` times the inner product against the basis.
    """
    _require_state(block, FieldState.COEFF, "helmholtz_apply_noncoll")
    if lam < 0.0:
        raise ValueError(f"reaction coefficient must be nonnegative, got {lam}")
    d = block.basis.ndim
    out = _out_block(block, out, FieldState.COEFF, block.n_components)
    xin = block.host(AccessQualifier.READ_ONLY)
    xout = out.host(AccessQualifier.WRITE_ONLY)
    for c in range(block.n_components):
        uhat = xin[c]
        u = _basis_apply(block, uhat, strategy)
        v = [_basis_apply(block, uhat, strategy, dmode=k) for k in range(d)]
        vp = _apply_metric(block, v)
        acc = _basis_apply(block, vp[0], strategy, transpose=True, dmode=0)
        for k in range(1, d):
            acc += _basis_apply(block, vp[k], strategy, transpose=True, dmode=k)
        acc += lam * _basis_apply(
            block, _apply_w(block, u), strategy, transpose=True
        )
        xout[c] = acc
    return out


def helmholtz_apply_coll(
    block: Block,
    lam: float,
    strategy: Strategy = Strategy.SUM_FAC,
    out: Block | None = None,
) -> Block:
    """Helmholtz action by the collocated pipeline.

    Steps: backward transform; collocation derivatives at the quadrature
    points; pointwise metric products with fused W; transposed collocation
    derivatives summed with ``lam W u``; restriction back to coefficients.
    """
    _require_state(block, FieldState.COEFF, "helmholtz_apply_coll")
    if lam < 0.0:
        raise ValueError(f"reaction coefficient must be nonnegative, got {lam}")
    d = block.basis.ndim
    sb = block.basis
    out = _out_block(block, out, FieldState.COEFF, block.n_components)
    xin = block.host(AccessQualifier.READ_ONLY)
    xout = out.host(AccessQualifier.WRITE_ONLY)
    for c in range(block.n_components):
        u = _basis_apply(block, xin[c], strategy)
        v = [_colloc_deriv(sb, u, k) for k in range(d)]
        vp = _apply_metric(block, v)
        up = _colloc_deriv(sb, vp[0], 0, transpose=True)
        for k in range(1, d):
            up += _colloc_deriv(sb, vp[k], k, transpose=True)
        up += lam * _apply_w(block, u)
        xout[c] = _basis_apply(block, up, strategy, transpose=True)
    return out


def helmholtz_apply(
    block: Block,
    lam: float,
    strategy: Strategy = Strategy.SUM_FAC,
    form: str | None = None,
    out: Block | None = None,
) -> Block:
    """Helmholtz action; ``form`` is ``"coll"``, ``"noncoll"`` or ``None``.

    By default the dense-matrix strategies use the non-collocated pipeline
    (their fused D_d B matrices are cheaper than separate derivative
    sweeps), while sum-factorisation uses the collocated one.
    """
    if form is None:
        form = "coll" if strategy is Strategy.SUM_FAC else "noncoll"
    if form == "coll":
        return helmholtz_apply_coll(block, lam, strategy, out)
    if form == "noncoll":
        return helmholtz_apply_noncoll(block, lam, strategy, out)
    raise ValueError(f"unknown Helmholtz form: {form!r}")


def apply_operator(
    kind: OperatorKind,
    block: Block,
    strategy: Strategy = Strategy.SUM_FAC,
    lam: float = 1.0,
    out: Block | None = None,
) -> Block:
    """Uniform entry point used by the benchmark and verification drivers."""
    if kind is OperatorKind.BWD_TRANS:
        return bwd_trans(block, strategy, out)
    if kind is OperatorKind.IPRODUCT_WRT_BASE:
        return iproduct_wrt_base(block, strategy, out)
    if kind is OperatorKind.PHYS_DERIV:
        return phys_deriv(block, out)
    if kind is OperatorKind.IPRODUCT_WRT_DERIV_BASE:
        return iproduct_wrt_deriv_base(block, strategy, out)
    if kind is OperatorKind.MASS:
        return mass_apply(block, strategy, out)
    if kind is OperatorKind.HELMHOLTZ_NONCOLL:
        return helmholtz_apply_noncoll(block, lam, strategy, out)
    if kind is OperatorKind.HELMHOLTZ_COLL:
        return helmholtz_apply_coll(block, lam, strategy, out)
    raise ValueError(f"unknown operator kind: {kind!r}")


def apply_to_field(
    kind: OperatorKind,
    field: Field,
    strategy: Strategy = Strategy.SUM_FAC,
    lam: float = 1.0,
    outs: list[Block] | None = None,
    threads: int = 1,
) -> Field:
    """Apply an operator to every block of a field.

    Blocks are independent units; with ``threads > 1`` they are processed by
    a thread pool (numpy releases the GIL inside the kernels).
    """
    blocks = field.blocks
    outs = outs if outs is not None else [None] * len(blocks)
    if threads <= 1 or len(blocks) == 1:
        results = [
            apply_operator(kind, b, strategy, lam, o) for b, o in zip(blocks, outs)
        ]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(
                pool.map(
                    lambda pair: apply_operator(kind, pair[0], strategy, lam, pair[1]),
                    zip(blocks, outs),
                )
            )
    return Field(list(results))


# ---------------------------------------------------------------------------
# Analytic floating-point operation counts (multiply-add = 2 flops)


def _sumfac_bwd_flops(shape: Shape, order: int, qc: tuple[int, ...]) -> int:
    p1 = order + 1
    ntri = p1 * (p1 + 1) // 2
    if shape is Shape.QUAD:
        q1, q2 = qc
        return 2 * (q1 * p1 * p1 + q1 * q2 * p1)
    if shape is Shape.TRI:
        q1, q2 = qc
        return 2 * (q2 * ntri + q2 + q1 * q2 * p1)
    if shape is Shape.HEX:
        q1, q2, q3 = qc
        return 2 * (q1 * p1 ** 3 + q1 * q2 * p1 ** 2 + q1 * q2 * q3 * p1)
    if shape is Shape.PRISM:
        q1, q2, q3 = qc
        step1 = 2 * q3 * p1 * ntri
        step2 = 2 * p1 * q2 * p1 * q3
        step3 = 2 * q1 * q2 * q3 * p1
        corr = 2 * q2 * p1 + 2 * q2 * q3
        return step1 + step2 + step3 + corr
    if shape is Shape.PYR:
        q1, q2, q3 = qc
        npyr = (p1 * (p1 + 1) * (2 * p1 + 1)) // 6
        step1 = 2 * q3 * npyr
        step2 = 2 * p1 * q2 * p1 * q3
        step3 = 2 * q1 * q2 * q3 * p1
        corr = 4 * q2 * q3
        return step1 + step2 + step3 + corr
    if shape is Shape.TET:
        q1, q2, q3 = qc
        ntet = p1 * (p1 + 1) * (p1 + 2) // 6
        step1 = 2 * q3 * ntet
        step2 = 2 * q2 * q3 * ntri
        step3 = 2 * q1 * q2 * q3 * p1
        corr = 2 * q3 * order + 2 * q2 * q3 + 8 * q2 * q3
        return step1 + step2 + step3 + corr
    raise ValueError(f"unsupported shape: {shape!r}")


def _metric_flops(shape: Shape, n_points: int) -> int:
    d = shape.ndim
    gmap_nnz = {
        Shape.QUAD: 0,
        Shape.HEX: 0,
        Shape.TRI: 3,
        Shape.PRISM: 4,
        Shape.PYR: 5,
        Shape.TET: 6,
    }[shape]
    # forward G, Lam products, transposed G, plus the W scaling
    return 2 * n_points * (2 * gmap_nnz + d * d) + d * n_points


def operator_flops(
    kind: OperatorKind, shape: Shape, order: int, strategy: Strategy
) -> int:
    """Per-element floating-point operations of a kernel as implemented.

    Multiply-adds count as 2; pointwise scalings as 1 per point.  Used for
    arithmetic-intensity reporting by the benchmark driver.
    """
    from speckern.shapes import mode_count, quad_point_counts

    if strategy is Strategy.SUM_FAC_TOP:
        raise UnsupportedStrategyError("no flop model for an unimplemented strategy")
    qc = quad_point_counts(shape, order)
    nq = int(np.prod(qc))
    np_ = mode_count(shape, order)
    d = shape.ndim

    if strategy in (Strategy.STD_MAT, Strategy.STD_MAT_GROUPED):
        bwd = 2 * nq * np_
    else:
        bwd = _sumfac_bwd_flops(shape, order, qc)
    wscale = nq
    sweep = sum(2 * nq * q for q in qc)

    if kind is OperatorKind.BWD_TRANS:
        return bwd
    if kind is OperatorKind.IPRODUCT_WRT_BASE:
        return bwd + wscale
    if kind is OperatorKind.PHYS_DERIV:
        return sweep + _metric_flops(shape, nq)
    if kind is OperatorKind.IPRODUCT_WRT_DERIV_BASE:
        return d * (bwd + wscale) + (d - 1) * np_
    if kind is OperatorKind.MASS:
        return 2 * bwd + wscale
    if kind is OperatorKind.HELMHOLTZ_NONCOLL:
        # bwd + d fused derivatives + metric + d transposed derivatives
        # + mass term and accumulations
        return (2 * d + 2) * bwd + _metric_flops(shape, nq) + wscale + (d + 1) * np_
    if kind is OperatorKind.HELMHOLTZ_COLL:
        # bwd + restrict + 2d collocation sweeps + metric + lam W u
        return 2 * bwd + 2 * sweep + _metric_flops(shape, nq) + wscale + (d + 2) * nq
    raise ValueError(f"unknown operator kind: {kind!r}")
