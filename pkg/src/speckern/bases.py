"""One-dimensional polynomial bases and Gaussian quadrature rules.

Everything multi-dimensional in this library is tensor-assembled from the
pieces defined here: Jacobi polynomials, Gauss-Lobatto-Legendre and
Gauss-Radau-Jacobi rules, the modified hierarchical basis families
(vertex/bubble functions plus the warped families that absorb powers of
``(1 - z)/2`` on collapsed directions), and collocation differentiation
matrices for Lagrange interpolants through the quadrature points.

All rules and matrices are computed deterministically in 64-bit floating
point; repeated calls are bit-identical.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "QuadKind",
    "QuadratureRule",
    "BasisKind",
    "Basis1D",
    "DiffMatrix",
    "compute_rule",
    "jacobi",
    "jacobi_derivative",
    "modified_a",
    "modified_a_deriv",
    "modified_b",
    "modified_b_deriv",
    "modified_c",
    "modified_c_deriv",
    "eval_modified_basis",
    "build_basis_matrices",
    "warped_family",
    "build_diff_matrix",
    "lagrange_matrix",
]

_NEWTON_TOL = 1e-15
_NEWTON_MAX_ITER = 100


class QuadKind(enum.Enum):
    """Supported Gaussian quadrature families on ``[-1, 1]``."""

    GAUSS_LOBATTO_LEGENDRE = "gll"
    #: weight (1 - z), endpoint z = -1 included, z = +1 excluded
    GAUSS_RADAU_JACOBI_ALPHA1 = "grj1"
    #: weight (1 - z)^2, endpoint z = -1 included, z = +1 excluded
    GAUSS_RADAU_JACOBI_ALPHA2 = "grj2"


#: Jacobi weight exponent alpha for each Radau kind.
_RADAU_ALPHA = {
    QuadKind.GAUSS_RADAU_JACOBI_ALPHA1: 1,
    QuadKind.GAUSS_RADAU_JACOBI_ALPHA2: 2,
}


class BasisKind(enum.Enum):
    """One-dimensional basis families."""

    MODIFIED_A = "modified_a"
    MODIFIED_B = "modified_b"
    MODIFIED_C = "modified_c"
    LAGRANGE = "lagrange"


@dataclass(frozen=True)
class QuadratureRule:
    """A Gaussian quadrature rule on ``[-1, 1]``.

    Attributes
    ----------
    kind : QuadKind
        Rule family.
    npoints : int
        Number of points ``Q``.
    points : ndarray, shape (Q,)
        Strictly increasing abscissae in ``[-1, 1]``.
    weights : ndarray, shape (Q,)
        Positive weights integrating against the rule's Jacobi weight
        function (plain ``dz`` for Gauss-Lobatto-Legendre).
    """

    kind: QuadKind
    npoints: int
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        self.points.setflags(write=False)
        self.weights.setflags(write=False)


@dataclass(frozen=True)
class Basis1D:
    """A one-dimensional basis family evaluated on a quadrature rule.

    ``eval_matrix[i, m]`` holds the value of basis function ``m`` at the
    rule's point ``i``; ``deriv_matrix`` holds its analytic derivative.
    For the warped families (``MODIFIED_B``/``MODIFIED_C``) the columns run
    over pairs ``(p, q)`` with ``p + q <= order``, lexicographic with ``p``
    slowest; ``family_offsets[p]`` gives the first column of block ``p``.
    """

    kind: BasisKind
    order: int
    rule: QuadratureRule
    eval_matrix: np.ndarray
    deriv_matrix: np.ndarray
    family_offsets: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        self.eval_matrix.setflags(write=False)
        self.deriv_matrix.setflags(write=False)


@dataclass(frozen=True)
class DiffMatrix:
    """Collocation differentiation matrix for a quadrature rule.

    ``matrix[i, k]`` is the derivative of the Lagrange polynomial through
    the rule's points associated with node ``k``, evaluated at point ``i``.
    The diagonal is the negated off-diagonal row sum, so rows sum to zero
    (differentiating a constant) to roundoff.
    """

    rule: QuadratureRule
    matrix: np.ndarray

    def __post_init__(self) -> None:
        self.matrix.setflags(write=False)


# ---------------------------------------------------------------------------
# Jacobi polynomials


def jacobi(n: int, alpha: float, beta: float, z) -> np.ndarray:
    """Evaluate the Jacobi polynomial ``P_n^{(alpha, beta)}`` at ``z``.

    Standard three-term recurrence; standard normalisation
    (``P_n^{(a,b)}(1) = binom(n + a, n)``).
    """
    z = np.asarray(z, dtype=float)
    if n < 0:
        raise ValueError(f"polynomial degree must be nonnegative, got {n}")
    p_prev = np.ones_like(z)
    if n == 0:
        return p_prev
    p = 0.5 * ((alpha + beta + 2.0) * z + (alpha - beta))
    for k in range(2, n + 1):
        s = 2.0 * k + alpha + beta
        a1 = 2.0 * k * (k + alpha + beta) * (s - 2.0)
        a2 = (s - 1.0) * (alpha * alpha - beta * beta)
        a3 = (s - 2.0) * (s - 1.0) * s
        a4 = 2.0 * (k + alpha - 1.0) * (k + beta - 1.0) * s
        p, p_prev = ((a2 + a3 * z) * p - a4 * p_prev) / a1, p
    return p


def jacobi_derivative(n: int, alpha: float, beta: float, z) -> np.ndarray:
    """First derivative of ``P_n^{(alpha, beta)}`` at ``z``."""
    z = np.asarray(z, dtype=float)
    if n == 0:
        return np.zeros_like(z)
    return 0.5 * (n + alpha + beta + 1.0) * jacobi(n - 1, alpha + 1.0, beta + 1.0, z)


def _jacobi_roots(n: int, alpha: float, beta: float) -> np.ndarray:
    """Roots of ``P_n^{(alpha, beta)}`` by deflated Newton iteration.

    Roots are found in increasing order from Chebyshev-Gauss initial
    guesses; already-found roots are deflated from the Newton update so
    distinct guesses cannot collapse onto one root.
    """
    if n == 0:
        return np.empty(0)
    roots = np.empty(n)
    for k in range(n):
        x = -math.cos(math.pi * (2.0 * k + 1.0) / (2.0 * n))
        if k > 0:
            x = 0.5 * (x + roots[k - 1])
        for _ in range(_NEWTON_MAX_ITER):
            val = float(jacobi(n, alpha, beta, x))
            der = float(jacobi_derivative(n, alpha, beta, x))
            defl = float(np.sum(1.0 / (x - roots[:k]))) if k else 0.0
            dx = -val / (der - defl * val)
            x += dx
            if abs(dx) < _NEWTON_TOL:
                break
        roots[k] = x
    if (
        np.any(roots <= -1.0)
        or np.any(roots >= 1.0)
        or np.any(np.diff(roots) <= 1e-12)
    ):
        raise RuntimeError(
            f"Newton iteration failed for Jacobi({alpha}, {beta}) roots of degree {n}"
        )
    return roots


# ---------------------------------------------------------------------------
# Quadrature rules


def _legendre_moments_radau(npoints: int, alpha: int) -> np.ndarray:
    """Integrals of Legendre polynomials against ``(1 - z)^alpha`` on [-1, 1]."""
    m = np.zeros(npoints)
    if alpha == 1:
        # (1 - z) = P_0 - P_1
        m[0] = 2.0
        if npoints > 1:
            m[1] = -2.0 / 3.0
    elif alpha == 2:
        # (1 - z)^2 = (4/3) P_0 - 2 P_1 + (2/3) P_2
        m[0] = 8.0 / 3.0
        if npoints > 1:
            m[1] = -4.0 / 3.0
        if npoints > 2:
            m[2] = 4.0 / 15.0
    else:  # pragma: no cover - internal use only
        raise ValueError(f"unsupported Jacobi weight exponent {alpha}")
    return m


@lru_cache(maxsize=None)
def compute_rule(kind: QuadKind, npoints: int) -> QuadratureRule:
    """Compute a quadrature rule with ``npoints`` points.

    Parameters
    ----------
    kind : QuadKind
        Rule family.  The Radau kinds fix ``z = -1`` as a node and exclude
        ``z = +1``, which keeps collapsed-coordinate integrands finite.
    npoints : int
        Number of quadrature points, at least 2.

    Returns
    -------
    QuadratureRule
        Deterministic (bit-identical across runs) points and weights.
    """
    if not isinstance(kind, QuadKind):
        raise ValueError(f"unsupported quadrature kind: {kind!r}")
    if npoints < 2:
        raise ValueError(f"a quadrature rule needs at least 2 points, got {npoints}")
    q = npoints
    if kind is QuadKind.GAUSS_LOBATTO_LEGENDRE:
        interior = _jacobi_roots(q - 2, 1.0, 1.0) if q > 2 else np.empty(0)
        pts = np.concatenate(([-1.0], interior, [1.0]))
        leg = jacobi(q - 1, 0.0, 0.0, pts)
        wts = 2.0 / (q * (q - 1) * leg * leg)
    else:
        alpha = _RADAU_ALPHA[kind]
        interior = _jacobi_roots(q - 1, float(alpha), 1.0)
        pts = np.concatenate(([-1.0], interior))
        # Weights from exactness against Legendre polynomials of degree < Q;
        # the node placement then extends exactness to degree 2Q - 2.
        vand = np.stack([jacobi(k, 0.0, 0.0, pts) for k in range(q)])
        wts = np.linalg.solve(vand, _legendre_moments_radau(q, alpha))
    return QuadratureRule(kind, q, pts, wts)


# ---------------------------------------------------------------------------
# Modified hierarchical basis families


def modified_a(p: int, z) -> np.ndarray:
    """Principal modified function ``psi^a_p``.

    Index 0 and 1 are the two vertex modes ``(1 -+ z)/2``; higher indices
    are interior bubbles of polynomial degree ``p``.
    """
    z = np.asarray(z, dtype=float)
    if p < 0:
        raise ValueError(f"index {p} outside the admissible index set")
    if p == 0:
        return 0.5 * (1.0 - z)
    if p == 1:
        return 0.5 * (1.0 + z)
    return 0.25 * (1.0 - z) * (1.0 + z) * jacobi(p - 2, 1.0, 1.0, z)


def modified_a_deriv(p: int, z) -> np.ndarray:
    """Derivative of ``psi^a_p`` with respect to ``z``."""
    z = np.asarray(z, dtype=float)
    if p < 0:
        raise ValueError(f"index {p} outside the admissible index set")
    if p == 0:
        return np.full_like(z, -0.5)
    if p == 1:
        return np.full_like(z, 0.5)
    jac = jacobi(p - 2, 1.0, 1.0, z)
    djac = jacobi_derivative(p - 2, 1.0, 1.0, z)
    return -0.5 * z * jac + 0.25 * (1.0 - z) * (1.0 + z) * djac


def modified_b(p: int, q: int, z) -> np.ndarray:
    """Warped modified function ``psi^b_{pq}``.

    The ``p = 0`` plane coincides with the ``psi^a`` family; for ``p >= 1``
    the leading factor ``((1 - z)/2)^p`` absorbs the Duffy denominator of
    the paired collapsed direction.
    """
    z = np.asarray(z, dtype=float)
    if p < 0 or q < 0:
        raise ValueError(f"index ({p}, {q}) outside the admissible index set")
    if p == 0:
        return modified_a(q, z)
    lead = (0.5 * (1.0 - z)) ** p
    if q == 0:
        return lead
    return lead * 0.5 * (1.0 + z) * jacobi(q - 1, 2.0 * p - 1.0, 1.0, z)


def modified_b_deriv(p: int, q: int, z) -> np.ndarray:
    """Derivative of ``psi^b_{pq}`` with respect to ``z``."""
    z = np.asarray(z, dtype=float)
    if p < 0 or q < 0:
        raise ValueError(f"index ({p}, {q}) outside the admissible index set")
    if p == 0:
        return modified_a_deriv(q, z)
    lead = (0.5 * (1.0 - z)) ** p
    dlead = -0.5 * p * (0.5 * (1.0 - z)) ** (p - 1)
    if q == 0:
        return dlead
    jac = jacobi(q - 1, 2.0 * p - 1.0, 1.0, z)
    djac = jacobi_derivative(q - 1, 2.0 * p - 1.0, 1.0, z)
    tail = 0.5 * (1.0 + z) * jac
    dtail = 0.5 * jac + 0.5 * (1.0 + z) * djac
    return dlead * tail + lead * dtail


def modified_c(p: int, q: int, r: int, z) -> np.ndarray:
    """Doubly-warped modified function ``psi^c_{pqr} = psi^b_{(p+q) r}``."""
    if p < 0 or q < 0 or r < 0:
        raise ValueError(f"index ({p}, {q}, {r}) outside the admissible index set")
    return modified_b(p + q, r, z)


def modified_c_deriv(p: int, q: int, r: int, z) -> np.ndarray:
    """Derivative of ``psi^c_{pqr}`` with respect to ``z``."""
    if p < 0 or q < 0 or r < 0:
        raise ValueError(f"index ({p}, {q}, {r}) outside the admissible index set")
    return modified_b_deriv(p + q, r, z)


def eval_modified_basis(kind: BasisKind, indices: tuple[int, ...], z) -> np.ndarray:
    """Evaluate one member of a modified family at ``z``.

    ``indices`` is ``(p,)`` for ``MODIFIED_A``, ``(p, q)`` for
    ``MODIFIED_B`` and ``(p, q, r)`` for ``MODIFIED_C``.
    """
    if kind is BasisKind.MODIFIED_A:
        (p,) = indices
        return modified_a(p, z)
    if kind is BasisKind.MODIFIED_B:
        p, q = indices
        return modified_b(p, q, z)
    if kind is BasisKind.MODIFIED_C:
        p, q, r = indices
        return modified_c(p, q, r, z)
    raise ValueError(f"kind {kind!r} is not a modified family")


# ---------------------------------------------------------------------------
# Basis matrices


def lagrange_matrix(nodes: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Values of the Lagrange cardinal polynomials through ``nodes`` at ``points``.

    Barycentric evaluation; points coinciding with nodes take the exact
    cardinal values 0/1.
    """
    nodes = np.asarray(nodes, dtype=float)
    points = np.asarray(points, dtype=float)
    lam = _barycentric_weights(nodes)
    diff = points[:, None] - nodes[None, :]
    exact = np.isclose(diff, 0.0, rtol=0.0, atol=1e-14)
    diff_safe = np.where(exact, 1.0, diff)
    terms = lam[None, :] / diff_safe
    denom = np.sum(np.where(exact, 0.0, terms), axis=1)
    out = terms / denom[:, None]
    hit = exact.any(axis=1)
    out[hit] = exact[hit].astype(float)
    return out


def _barycentric_weights(nodes: np.ndarray) -> np.ndarray:
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    return 1.0 / np.prod(diff, axis=1)


def _warped_pairs(order: int) -> list[tuple[int, int]]:
    return [(p, q) for p in range(order + 1) for q in range(order + 1 - p)]


def build_basis_matrices(kind: BasisKind, order: int, rule: QuadratureRule) -> Basis1D:
    """Build the evaluation and derivative matrices of a basis on a rule.

    For ``LAGRANGE`` the basis is collocated on the rule's own points, so the
    evaluation matrix is the identity and the derivative matrix is the
    collocation differentiation matrix.  For the warped families the columns
    run over admissible ``(p, q)`` pairs (``p + q <= order``).
    """
    pts = rule.points
    offsets: tuple[int, ...] | None = None
    if kind is BasisKind.MODIFIED_A:
        cols = [modified_a(p, pts) for p in range(order + 1)]
        dcols = [modified_a_deriv(p, pts) for p in range(order + 1)]
    elif kind in (BasisKind.MODIFIED_B, BasisKind.MODIFIED_C):
        pairs = _warped_pairs(order)
        cols = [modified_b(p, q, pts) for p, q in pairs]
        dcols = [modified_b_deriv(p, q, pts) for p, q in pairs]
        offs = [0]
        for p in range(order + 1):
            offs.append(offs[-1] + order + 1 - p)
        offsets = tuple(offs[:-1])
    elif kind is BasisKind.LAGRANGE:
        if rule.npoints != order + 1:
            raise ValueError(
                "Lagrange basis must be collocated on its rule: "
                f"order {order} needs {order + 1} points, rule has {rule.npoints}"
            )
        eye = np.eye(rule.npoints)
        return Basis1D(kind, order, rule, eye, build_diff_matrix(rule).matrix.copy())
    else:
        raise ValueError(f"unsupported basis kind: {kind!r}")
    return Basis1D(
        kind, order, rule, np.stack(cols, axis=1), np.stack(dcols, axis=1), offsets
    )


def warped_family(
    kind: BasisKind, order: int, rule: QuadratureRule
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-``p`` slices of a warped family: ``[(values, derivatives), ...]``.

    Entry ``p`` has shape ``(Q, order + 1 - p)`` and holds
    ``psi^b_{p q}(points)`` for ``q = 0 .. order - p``.  Used by the
    sum-factorised kernels, whose inner contraction length shrinks with the
    leading index.
    """
    if kind not in (BasisKind.MODIFIED_B, BasisKind.MODIFIED_C):
        raise ValueError(f"{kind!r} is not a warped family")
    pts = rule.points
    out = []
    for p in range(order + 1):
        vals = np.stack([modified_b(p, q, pts) for q in range(order + 1 - p)], axis=1)
        ders = np.stack(
            [modified_b_deriv(p, q, pts) for q in range(order + 1 - p)], axis=1
        )
        out.append((vals, ders))
    return out


def build_diff_matrix(rule: QuadratureRule) -> DiffMatrix:
    """Collocation differentiation matrix of a rule, via barycentric weights."""
    x = rule.points
    lam = _barycentric_weights(x)
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    d = (lam[None, :] / lam[:, None]) / diff
    np.fill_diagonal(d, 0.0)
    np.fill_diagonal(d, -np.sum(d, axis=1))
    return DiffMatrix(rule, d)
