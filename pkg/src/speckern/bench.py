"""Benchmark and verification drivers.

``run_bench`` times operator applications on deterministic synthetic blocks
and reports output-coefficient throughput (DOF/s) per shape, order, element
count, geometry class and strategy; ``run_verify`` checks every fast path
against the dense oracle and analytic invariants; ``run_compare`` reports
throughput ratios between two configurations differing in exactly one axis.

Timings use medians over repeated batches, each batch sized to exceed a
minimum wall-clock window so timer granularity and scheduler jitter do not
dominate.  Results (not timings) are bit-identical across runs for a fixed
seed, including across padding variants of the element count.
"""

from __future__ import annotations

import io
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from speckern import oracle
from speckern.field_block import Block, FieldState, default_interleave_width
from speckern.geometry import (
    GeometryClass,
    make_affine_block,
    make_synthetic_factors,
    synthetic_affine_vertices,
)
from speckern.operators import (
    OperatorKind,
    Strategy,
    apply_operator,
    helmholtz_apply_coll,
    helmholtz_apply_noncoll,
    operator_flops,
)
from speckern.shapes import Shape, build_shape_basis

__all__ = [
    "BenchConfig",
    "BenchRecord",
    "ConfigError",
    "VerificationError",
    "CSV_HEADER",
    "run_bench",
    "records_to_csv",
    "run_verify",
    "VerifyReport",
    "run_compare",
]

#: Stable, machine-parseable CSV schema (one header row, no locale formatting).
CSV_HEADER = "op,shape,P,strategy,geometry,form,nelem,ndof,seconds,dof_per_s,flops_per_elem"

_MIN_TIMED_SECONDS = 0.05
_PAIR_CHECK_TOL = 1e-10

_OP_NAMES = {"mass": OperatorKind.MASS, "helmholtz": None, "bwdtrans": OperatorKind.BWD_TRANS}


class ConfigError(ValueError):
    """Invalid benchmark configuration (CLI exit code 2)."""


class VerificationError(RuntimeError):
    """Numerical disagreement detected before timing (CLI exit code 1)."""


@dataclass(frozen=True)
class BenchConfig:
    """One benchmark sweep: the cross product of the list-valued axes."""

    op: str = "mass"
    shapes: tuple[Shape, ...] = tuple(Shape)
    orders: tuple[int, ...] = (1, 2, 3, 4)
    nelems: tuple[int, ...] = (128,)
    strategies: tuple[Strategy, ...] = (
        Strategy.STD_MAT,
        Strategy.STD_MAT_GROUPED,
        Strategy.SUM_FAC,
    )
    geometry: GeometryClass = GeometryClass.REGULAR
    helmholtz_form: str | None = None  # None: per-strategy default
    lam: float = 1.0
    interleave_width: int | None = None
    qpoints: tuple[int, ...] | None = None
    repetitions: int = 5
    warmup: int = 1
    seed: int = 0
    threads: int = 1

    def validate(self) -> None:
        if self.op not in _OP_NAMES:
            raise ConfigError(f"unknown op {self.op!r}; choose from {sorted(_OP_NAMES)}")
        if not self.shapes or not self.orders or not self.nelems or not self.strategies:
            raise ConfigError("shapes, orders, nelems and strategies must be nonempty")
        if self.repetitions < 3:
            raise ConfigError(f"need at least 3 repetitions, got {self.repetitions}")
        if self.warmup < 1:
            raise ConfigError(f"need at least 1 warmup batch, got {self.warmup}")
        if self.lam < 0.0:
            raise ConfigError(f"lambda must be nonnegative, got {self.lam}")
        if self.helmholtz_form not in (None, "coll", "noncoll"):
            raise ConfigError(f"unknown Helmholtz form {self.helmholtz_form!r}")
        if any(n < 1 for n in self.nelems):
            raise ConfigError("element counts must be positive")
        if any(p < 1 for p in self.orders):
            raise ConfigError("polynomial orders must be at least 1")
        if Strategy.SUM_FAC_TOP in self.strategies:
            raise ConfigError(
                "strategy sumfac_top is reserved but not implemented in this build"
            )


@dataclass(frozen=True)
class BenchRecord:
    """One timed (shape, order, nelem, strategy) combination."""

    op: str
    shape: Shape
    order: int
    strategy: Strategy
    geometry: GeometryClass
    form: str
    n_elements: int
    n_dof_total: int
    median_seconds: float
    throughput_dof_per_s: float
    flops_per_element: int
    bytes_moved_estimate: int
    iterations: int
    raw_seconds: tuple[float, ...]

    def csv_row(self) -> str:
        return ",".join(
            [
                self.op,
                self.shape.value,
                str(self.order),
                self.strategy.value,
                self.geometry.value,
                self.form,
                str(self.n_elements),
                str(self.n_dof_total),
                f"{self.median_seconds:.9e}",
                f"{self.throughput_dof_per_s:.6e}",
                str(self.flops_per_element),
            ]
        )


def _resolve_kind(op: str, strategy: Strategy, form: str | None) -> tuple[OperatorKind, str]:
    if op != "helmholtz":
        return _OP_NAMES[op], "-"
    if form is None:
        form = "coll" if strategy is Strategy.SUM_FAC else "noncoll"
    kind = (
        OperatorKind.HELMHOLTZ_COLL if form == "coll" else OperatorKind.HELMHOLTZ_NONCOLL
    )
    return kind, form


def _fill_random(block: Block, seed_key: list[int]) -> None:
    """Seeded uniform [-1, 1] coefficients, drawn element-major so a given
    element's values do not depend on the total element count."""
    rng = np.random.default_rng(seed_key)
    vals = rng.uniform(-1.0, 1.0, size=(block.n_elements, block.n_data))
    block.set_elements(np.ascontiguousarray(vals.T)[None])


def _bytes_estimate(kind: OperatorKind, block: Block) -> int:
    """Per-application streaming estimate: state in/out plus metric data."""
    sb = block.basis
    d = sb.ndim
    ne = block.n_elements
    nq, npm = sb.n_points, sb.n_modes
    deformed = block.geometry_class is GeometryClass.DEFORMED
    if kind is OperatorKind.BWD_TRANS:
        metric = 0
    elif kind is OperatorKind.MASS:
        metric = nq if deformed else 1
    else:  # Helmholtz: symmetric metric products plus the Jacobian term
        metric = (d * (d + 1) // 2 + 1) * (nq if deformed else 1)
    state = npm + (nq if kind is OperatorKind.BWD_TRANS else npm)
    return 8 * ne * (state + metric)


def _relative_diff(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-300)
    return float(np.max(np.abs(a - b)) / scale)


def _pair_check(
    cfg: BenchConfig, block: Block, shape: Shape, order: int, ne: int
) -> None:
    """Cross-check one strategy pair before timing; abort on disagreement."""
    first = cfg.strategies[0]
    ref = Strategy.STD_MAT if first is not Strategy.STD_MAT else Strategy.SUM_FAC
    results = []
    for strat in (first, ref):
        kind, _ = _resolve_kind(cfg.op, strat, cfg.helmholtz_form)
        results.append(apply_operator(kind, block, strat, cfg.lam).get_elements())
    err = _relative_diff(results[0], results[1])
    if err > _PAIR_CHECK_TOL:
        diff = np.abs(results[0] - results[1])
        where = np.unravel_index(int(np.argmax(diff)), diff.shape)
        raise VerificationError(
            f"strategy disagreement before timing: {cfg.op} {shape.value} P={order} "
            f"nelem={ne} {first.value} vs {ref.value}: max rel err {err:.3e} "
            f"at (component, dof, element)={where}; "
            f"values {results[0][where]:.17g} vs {results[1][where]:.17g}"
        )


def _time_batches(fn, repetitions: int, warmup: int) -> tuple[list[float], int]:
    """Calibrate the batch size to the minimum window, then time batches."""
    t0 = time.perf_counter()
    fn()
    t1 = time.perf_counter() - t0
    iters = max(1, math.ceil(_MIN_TIMED_SECONDS / max(t1, 1e-9)))
    for _ in range(warmup):
        for _ in range(iters):
            fn()
    raw = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        for _ in range(iters):
            fn()
        raw.append(time.perf_counter() - t0)
    return raw, iters


def run_bench(cfg: BenchConfig, progress=None) -> list[BenchRecord]:
    """Run the benchmark sweep and return one record per combination.

    Every combination is verified (one strategy pair at 1e-10) on its random
    input before any timing; a disagreement raises ``VerificationError``.
    """
    cfg.validate()
    width = (
        default_interleave_width()
        if cfg.interleave_width is None
        else cfg.interleave_width
    )
    pool = ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else None
    records: list[BenchRecord] = []
    try:
        for shape in cfg.shapes:
            for order in cfg.orders:
                basis = build_shape_basis(shape, order, cfg.qpoints)
                for ne in cfg.nelems:
                    factors = make_synthetic_factors(
                        basis, cfg.geometry, ne, seed=cfg.seed
                    )
                    block = Block(basis, factors, FieldState.COEFF, 1, width)
                    _fill_random(
                        block, [cfg.seed, list(Shape).index(shape), order, 1]
                    )
                    _pair_check(cfg, block, shape, order, ne)
                    ndof = basis.n_modes * ne
                    for strat in cfg.strategies:
                        kind, form = _resolve_kind(cfg.op, strat, cfg.helmholtz_form)
                        out_state = (
                            FieldState.PHYS
                            if kind is OperatorKind.BWD_TRANS
                            else FieldState.COEFF
                        )
                        out = block.like(out_state)

                        def apply_once():
                            apply_operator(kind, block, strat, cfg.lam, out)

                        # the timed region encloses the full worker dispatch
                        run = (
                            apply_once
                            if pool is None
                            else (lambda: pool.submit(apply_once).result())
                        )
                        raw, iters = _time_batches(run, cfg.repetitions, cfg.warmup)
                        med = float(np.median(raw))
                        rec = BenchRecord(
                            op=cfg.op,
                            shape=shape,
                            order=order,
                            strategy=strat,
                            geometry=cfg.geometry,
                            form=form,
                            n_elements=ne,
                            n_dof_total=ndof,
                            median_seconds=med,
                            throughput_dof_per_s=ndof * iters / med,
                            flops_per_element=operator_flops(
                                kind, shape, order, strat
                            ),
                            bytes_moved_estimate=_bytes_estimate(kind, block),
                            iterations=iters,
                            raw_seconds=tuple(raw),
                        )
                        records.append(rec)
                        if progress is not None:
                            progress(rec)
    finally:
        if pool is not None:
            pool.shutdown()
    return records


def records_to_csv(records: list[BenchRecord]) -> str:
    lines = [CSV_HEADER]
    lines.extend(r.csv_row() for r in records)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Verification driver


#: Measure of each standard region (volume of the reference element).
_REFERENCE_MEASURE = {
    Shape.QUAD: 4.0,
    Shape.TRI: 2.0,
    Shape.HEX: 8.0,
    Shape.PRISM: 4.0,
    Shape.PYR: 8.0 / 3.0,
    Shape.TET: 4.0 / 3.0,
}

_VERIFY_STRATEGIES = (Strategy.STD_MAT, Strategy.STD_MAT_GROUPED, Strategy.SUM_FAC)


@dataclass
class VerifyCase:
    label: str
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance


@dataclass
class VerifyReport:
    cases: list[VerifyCase] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.cases)

    def add(self, label: str, err: float, tol: float) -> None:
        self.cases.append(VerifyCase(label, float(err), tol))

    def format_report(self) -> str:
        out = io.StringIO()
        for c in self.cases:
            status = "PASS" if c.passed else "FAIL"
            out.write(
                f"{status}  {c.label}: max rel err {c.max_rel_err:.3e} "
                f"(tol {c.tolerance:.1e})\n"
            )
        n_fail = sum(not c.passed for c in self.cases)
        out.write(f"{len(self.cases) - n_fail}/{len(self.cases)} verification cases passed\n")
        return out.getvalue()


def run_verify(
    shapes: tuple[Shape, ...] = tuple(Shape),
    ops: tuple[str, ...] = ("mass", "helmholtz"),
    max_order: int = 4,
    lams: tuple[float, ...] = (0.0, 1.0, 2.5),
    n_elements: int = 3,
    seed: int = 0,
    tol: float = 1e-11,
) -> VerifyReport:
    """Oracle-equivalence and formulation-equivalence matrix.

    Per shape and order: every strategy against the dense quadrature-sum
    assembly (Regular and Deformed, each requested reaction coefficient),
    collocated against non-collocated Helmholtz, the two independent dense
    assembly routes, the affine-through-deformed pathway consistency, and
    the Dirichlet energy of linear fields against the exact element measure
    (an analytic check that is independent of the chain-rule factors).
    """
    rng = np.random.default_rng(seed)
    report = VerifyReport()
    for shape in shapes:
        for order in range(1, max_order + 1):
            try:
                _verify_shape_order(
                    report, shape, order, ops, lams, n_elements, seed, tol, rng
                )
            except Exception as exc:  # a broken kernel/metric is a failure, not a crash
                report.add(
                    f"{shape.value} P={order}: execution error ({type(exc).__name__}: {exc})",
                    float("inf"),
                    tol,
                )
    return report


def _verify_shape_order(
    report: VerifyReport,
    shape: Shape,
    order: int,
    ops: tuple[str, ...],
    lams: tuple[float, ...],
    n_elements: int,
    seed: int,
    tol: float,
    rng,
) -> None:
    sb = build_shape_basis(shape, order)
    for gcls in (GeometryClass.REGULAR, GeometryClass.DEFORMED):
        factors = make_synthetic_factors(sb, gcls, n_elements, seed=seed + 1)
        block = Block(sb, factors, FieldState.COEFF, 1, 4)
        coeffs = rng.uniform(-1.0, 1.0, size=(sb.n_modes, n_elements))
        block.set_elements(coeffs[None])
        elem = n_elements - 1
        tag = f"{shape.value} P={order} {gcls.value}"

        if "mass" in ops:
            dense = oracle.assemble_mass(sb, factors, elem).matrix
            ref = dense @ coeffs[:, elem]
            for strat in _VERIFY_STRATEGIES:
                got = apply_operator(
                    OperatorKind.MASS, block, strat
                ).get_elements()[0][:, elem]
                report.add(
                    f"mass {tag} {strat.value} vs oracle",
                    _relative_diff(got, ref),
                    tol,
                )
        if "bwdtrans" in ops:
            ref = sb.bmat @ coeffs[:, elem]
            for strat in _VERIFY_STRATEGIES:
                got = apply_operator(
                    OperatorKind.BWD_TRANS, block, strat
                ).get_elements()[0][:, elem]
                report.add(
                    f"bwdtrans {tag} {strat.value} vs dense",
                    _relative_diff(got, ref),
                    tol,
                )
        if "helmholtz" in ops:
            for lam in lams:
                dense = oracle.assemble_helmholtz(sb, factors, lam, elem).matrix
                ref = dense @ coeffs[:, elem]
                for strat in _VERIFY_STRATEGIES:
                    got = helmholtz_apply_noncoll(block, lam, strat)
                    err = _relative_diff(
                        got.get_elements()[0][:, elem], ref
                    )
                    report.add(
                        f"helmholtz(noncoll, lam={lam}) {tag} "
                        f"{strat.value} vs oracle",
                        err,
                        tol,
                    )
                got = helmholtz_apply_coll(block, lam, Strategy.SUM_FAC)
                report.add(
                    f"helmholtz(coll, lam={lam}) {tag} sumfac vs oracle",
                    _relative_diff(got.get_elements()[0][:, elem], ref),
                    tol,
                )
                if order <= 3:
                    fact = oracle.assemble_helmholtz_factored(
                        sb, factors, lam, elem
                    ).matrix
                    report.add(
                        f"oracle two-route (lam={lam}) {tag}",
                        float(
                            np.max(np.abs(dense - fact))
                            / max(np.max(np.abs(dense)), 1e-300)
                        ),
                        1e-12,
                    )

    if "helmholtz" in ops:
        _verify_geometry_consistency(report, sb, seed, tol)
        _verify_linear_energy(report, sb, tol)


def _verify_geometry_consistency(
    report: VerifyReport, sb, seed: int, tol: float
) -> None:
    """Affine elements pushed through the deformed pathway must match the
    Regular pathway operator-for-operator."""
    shape = sb.shape
    verts = synthetic_affine_vertices(shape, 2, seed=seed + 7)
    reg = make_affine_block(shape, verts)
    # same elements, iso-parametric route
    from speckern.geometry import deformed_factors_from_coords, quadrature_coords

    xi = quadrature_coords(sb)
    coords = np.stack(
        [
            verts[e, 0] + 0.5 * (xi + 1.0) @ _edge_matrix(shape, verts[e]).T
            for e in range(2)
        ]
    )
    def_ = deformed_factors_from_coords(sb, coords)
    rngc = np.random.default_rng(seed + 13)
    coeffs = rngc.uniform(-1.0, 1.0, size=(sb.n_modes, 2))
    b_reg = Block(sb, reg, FieldState.COEFF, 1, 2)
    b_def = Block(sb, def_, FieldState.COEFF, 1, 2)
    b_reg.set_elements(coeffs[None])
    b_def.set_elements(coeffs[None])
    a = helmholtz_apply_coll(b_reg, 1.0, Strategy.SUM_FAC).get_elements()
    b = helmholtz_apply_coll(b_def, 1.0, Strategy.SUM_FAC).get_elements()
    report.add(
        f"regular-vs-deformed pathway {sb.shape.value} P={sb.order}",
        _relative_diff(a, b),
        max(tol, 1e-12),
    )


def _edge_matrix(shape: Shape, verts: np.ndarray) -> np.ndarray:
    from speckern.geometry import _EDGE_VERTICES

    return np.stack([verts[k] - verts[0] for k in _EDGE_VERTICES[shape]], axis=-1)


def _verify_linear_energy(report: VerifyReport, sb, tol: float) -> None:
    """Dirichlet energy of each linear coordinate field on the identity
    element equals the element measure exactly (independent of the
    chain-rule factors, so a corrupted metric is caught here)."""
    from speckern.geometry import REFERENCE_VERTICES, quadrature_coords

    shape = sb.shape
    factors = make_affine_block(shape, REFERENCE_VERTICES[shape])
    block = Block(sb, factors, FieldState.COEFF, 1, 1)
    xi = quadrature_coords(sb)
    mass = oracle.assemble_mass(sb, factors).matrix
    measure = _REFERENCE_MEASURE[shape]
    worst = 0.0
    for i in range(sb.ndim):
        rhs = sb.bmat.T @ (sb.ref_weights * xi[:, i])
        coeff = np.linalg.solve(mass, rhs)
        block.set_elements(coeff[None, :, None])
        out = helmholtz_apply_coll(block, 0.0, Strategy.SUM_FAC).get_elements()
        energy = float(coeff @ out[0][:, 0])
        worst = max(worst, abs(energy - measure) / measure)
    report.add(
        f"linear Dirichlet energy {shape.value} P={sb.order}", worst, max(tol, 1e-11)
    )


# ---------------------------------------------------------------------------
# Configuration comparison


_COMPARE_AXES = ("geometry", "helmholtz_form", "strategies")


@dataclass(frozen=True)
class CompareRow:
    shape: Shape
    order: int
    n_elements: int
    value_a: str
    value_b: str
    throughput_a: float
    throughput_b: float

    @property
    def ratio(self) -> float:
        return self.throughput_b / self.throughput_a


def run_compare(
    cfg_a: BenchConfig, cfg_b: BenchConfig, progress=None
) -> tuple[str, list[CompareRow]]:
    """Benchmark two configurations differing in exactly one axis
    (geometry, Helmholtz form, or strategy) and report B/A throughput ratios
    per (shape, order, element count)."""
    cfg_a.validate()
    cfg_b.validate()
    differing = [
        axis
        for axis in _COMPARE_AXES
        if getattr(cfg_a, axis) != getattr(cfg_b, axis)
    ]
    others = {
        f.name
        for f in cfg_a.__dataclass_fields__.values()
        if f.name not in _COMPARE_AXES
    }
    for name in others:
        if getattr(cfg_a, name) != getattr(cfg_b, name):
            raise ConfigError(
                f"compare configs may only differ in one of {_COMPARE_AXES}; "
                f"field {name!r} also differs"
            )
    if len(differing) != 1:
        raise ConfigError(
            "compare configs must differ in exactly one axis of "
            f"{_COMPARE_AXES}, found {len(differing)} differing"
        )
    axis = differing[0]
    if axis == "strategies" and (
        len(cfg_a.strategies) != 1 or len(cfg_b.strategies) != 1
    ):
        raise ConfigError("strategy comparison needs a single strategy per side")
    rec_a = run_bench(cfg_a, progress)
    rec_b = run_bench(cfg_b, progress)
    key = lambda r: (r.shape, r.order, r.n_elements)
    by_a = {key(r): r for r in rec_a}
    rows = []
    for rb in rec_b:
        ra = by_a[key(rb)]
        label_a, label_b = _axis_labels(axis, cfg_a, cfg_b, ra, rb)
        rows.append(
            CompareRow(
                rb.shape,
                rb.order,
                rb.n_elements,
                label_a,
                label_b,
                ra.throughput_dof_per_s,
                rb.throughput_dof_per_s,
            )
        )
    return axis, rows


def _axis_labels(axis, cfg_a, cfg_b, ra, rb) -> tuple[str, str]:
    if axis == "geometry":
        return cfg_a.geometry.value, cfg_b.geometry.value
    if axis == "helmholtz_form":
        return ra.form, rb.form
    return ra.strategy.value, rb.strategy.value
