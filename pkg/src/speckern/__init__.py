"""Matrix-free spectral/hp element operator kernels for mixed-element meshes.

The package provides one-dimensional quadrature and basis building blocks,
element shape definitions with collapsed tensor-product coordinates, affine
and curvilinear geometric factors, an interleaved block data model with a
dual-space memory region, elemental operator kernels (backward transform,
inner products, derivatives, mass and Helmholtz) under several equivalent
implementation strategies, a dense-assembly oracle, and a benchmark CLI.
"""

from speckern.bases import (
    Basis1D,
    BasisKind,
    DiffMatrix,
    QuadKind,
    QuadratureRule,
    build_basis_matrices,
    build_diff_matrix,
    compute_rule,
    eval_modified_basis,
)
from speckern.field_block import (
    AccessQualifier,
    Block,
    Field,
    FieldState,
    InitialisationError,
    MemoryRegion,
    MemorySpace,
    deinterleave,
    interleave,
    load_field,
    make_field,
    save_field,
)
from speckern.geometry import (
    DegenerateElementError,
    GeometricFactors,
    GeometryClass,
    fuse_weights,
    make_affine_block,
    make_deformed_block,
)
from speckern.operators import (
    FieldStateError,
    OperatorKind,
    Strategy,
    UnsupportedStrategyError,
    apply_operator,
    apply_to_field,
    bwd_trans,
    helmholtz_apply,
    helmholtz_apply_coll,
    helmholtz_apply_noncoll,
    iproduct_wrt_base,
    iproduct_wrt_deriv_base,
    mass_apply,
    operator_flops,
    phys_deriv,
)
from speckern.shapes import (
    Shape,
    ShapeBasis,
    build_collapsed_metric,
    build_shape_basis,
    duffy_forward,
    duffy_inverse,
    index_set,
    mode_count,
    quad_point_counts,
)

__version__ = "0.1.0"

__all__ = [
    "Basis1D",
    "BasisKind",
    "DiffMatrix",
    "QuadKind",
    "QuadratureRule",
    "build_basis_matrices",
    "build_diff_matrix",
    "compute_rule",
    "eval_modified_basis",
    "AccessQualifier",
    "Block",
    "Field",
    "FieldState",
    "InitialisationError",
    "MemoryRegion",
    "MemorySpace",
    "deinterleave",
    "interleave",
    "load_field",
    "make_field",
    "save_field",
    "DegenerateElementError",
    "GeometricFactors",
    "GeometryClass",
    "fuse_weights",
    "make_affine_block",
    "make_deformed_block",
    "FieldStateError",
    "OperatorKind",
    "Strategy",
    "UnsupportedStrategyError",
    "apply_operator",
    "apply_to_field",
    "bwd_trans",
    "helmholtz_apply",
    "helmholtz_apply_coll",
    "helmholtz_apply_noncoll",
    "iproduct_wrt_base",
    "iproduct_wrt_deriv_base",
    "mass_apply",
    "operator_flops",
    "phys_deriv",
    "Shape",
    "ShapeBasis",
    "build_collapsed_metric",
    "build_shape_basis",
    "duffy_forward",
    "duffy_inverse",
    "index_set",
    "mode_count",
    "quad_point_counts",
]
