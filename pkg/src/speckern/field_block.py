"""Field/Block data model, interleaved storage and the dual-space memory region.

A ``MemoryRegion`` owns a host buffer and a simulated-device buffer with
validity flags driven by ``ReadOnly``/``WriteOnly``/``ReadWrite`` access
qualifiers; transfers between the two spaces happen exactly when an access
targets a space whose data is stale.  A ``Block`` is a homogeneous group of
elements (same shape, order, quadrature and geometry class) stored
contiguously with an optional interleaved layout: within each group of
``interleave_width`` elements, the values of one data point of all lanes
are adjacent in memory.  A ``Field`` is an ordered collection of blocks that
all live in the same state (coefficient or physical space).
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

import numpy as np

from speckern.geometry import (
    GeometricFactors,
    GeometryClass,
    make_synthetic_factors,
)
from speckern.shapes import Shape, ShapeBasis, build_shape_basis

__all__ = [
    "MemorySpace",
    "AccessQualifier",
    "InitialisationError",
    "MemoryRegion",
    "FieldState",
    "Block",
    "Field",
    "make_field",
    "interleave",
    "deinterleave",
    "interleave_array",
    "deinterleave_array",
    "default_interleave_width",
    "save_field",
    "load_field",
]


class MemorySpace(enum.Enum):
    HOST = "host"
    DEVICE = "device"


class AccessQualifier(enum.Enum):
    READ_ONLY = "read_only"
    WRITE_ONLY = "write_only"
    READ_WRITE = "read_write"


class InitialisationError(RuntimeError):
    """Read access to a region that was never initialised by a write."""


def _other(space: MemorySpace) -> MemorySpace:
    return MemorySpace.DEVICE if space is MemorySpace.HOST else MemorySpace.HOST


class MemoryRegion:
    """Dual-buffer storage with access-qualifier-driven synchronisation.

    The device space is a second allocation arena with an explicit copy
    step; the transfer counter increments exactly when a ``READ_ONLY`` or
    ``READ_WRITE`` access targets a space whose flag is invalid while the
    other space holds valid data.

    Access semantics:

    ==========  ====================================================
    READ_ONLY   requires prior initialisation; transfer iff target
                invalid; target becomes valid, other flag unchanged;
                returns a read-only view.
    WRITE_ONLY  allocates lazily; no transfer; target becomes valid,
                other becomes invalid; returns a writable view.
    READ_WRITE  requires prior initialisation; transfer iff target
                invalid; target valid, other invalid; writable view.
    ==========  ====================================================

    A region is single-writer: callers must not hold more than one
    writable view at a time, while concurrent read-only views within one
    space are safe.
    """

    def __init__(self, length: int, dtype=np.float64):
        if length < 0:
            raise ValueError(f"region length must be nonnegative, got {length}")
        self.length = int(length)
        self.dtype = np.dtype(dtype)
        self._buffers: dict[MemorySpace, np.ndarray | None] = {
            MemorySpace.HOST: None,
            MemorySpace.DEVICE: None,
        }
        self._valid: dict[MemorySpace, bool] = {
            MemorySpace.HOST: False,
            MemorySpace.DEVICE: False,
        }
        self._initialised = False
        self.transfer_count = 0

    def valid(self, space: MemorySpace) -> bool:
        return self._valid[space]

    def allocated(self, space: MemorySpace) -> bool:
        return self._buffers[space] is not None

    def access(self, space: MemorySpace, qualifier: AccessQualifier) -> np.ndarray:
        """Return a view of the buffer in ``space`` under ``qualifier``."""
        if not isinstance(space, MemorySpace):
            raise ValueError(f"unknown memory space: {space!r}")
        if not isinstance(qualifier, AccessQualifier):
            raise ValueError(f"unknown access qualifier: {qualifier!r}")
        other = _other(space)
        if qualifier is AccessQualifier.WRITE_ONLY:
            self._ensure_allocated(space)
            self._valid[space] = True
            self._valid[other] = False
            self._initialised = True
            return self._view(space, writeable=True)
        if not self._initialised:
            raise InitialisationError(
                "region has not been initialised by a WriteOnly access"
            )
        if not self._valid[space]:
            self._ensure_allocated(space)
            # the other space must hold the live data here
            self._buffers[space][:] = self._buffers[other]
            self.transfer_count += 1
            self._valid[space] = True
        if qualifier is AccessQualifier.READ_WRITE:
            self._valid[other] = False
            return self._view(space, writeable=True)
        return self._view(space, writeable=False)

    def _ensure_allocated(self, space: MemorySpace) -> None:
        if self._buffers[space] is None:
            self._buffers[space] = np.zeros(self.length, dtype=self.dtype)

    def _view(self, space: MemorySpace, writeable: bool) -> np.ndarray:
        view = self._buffers[space].view()
        view.setflags(write=writeable)
        return view


# ---------------------------------------------------------------------------
# Interleaving helpers


def default_interleave_width() -> int:
    """Vector lane count for 64-bit reals of the widest SIMD set advertised
    by the host CPU; falls back to 4 when undetectable."""
    try:
        with open("/proc/cpuinfo") as fh:
            flags = fh.read()
    except OSError:
        return 4
    if "avx512f" in flags:
        return 8
    if "avx2" in flags or "asimd" in flags:
        return 4
    if "sse2" in flags or "neon" in flags:
        return 2
    return 4


def interleave_array(arr: np.ndarray, width: int) -> np.ndarray:
    """Transpose element-major data ``(n, n_elements)`` into lane-major
    groups ``(n_groups, n, width)``, zero-padding the final group."""
    if width < 1:
        raise ValueError(f"interleave width must be at least 1, got {width}")
    n, nelem = arr.shape
    ngroups = -(-nelem // width)
    padded = np.zeros((n, ngroups * width), dtype=arr.dtype)
    padded[:, :nelem] = arr
    return np.ascontiguousarray(
        padded.reshape(n, ngroups, width).transpose(1, 0, 2)
    )


def deinterleave_array(arr: np.ndarray, n_elements: int) -> np.ndarray:
    """Inverse of :func:`interleave_array`, dropping padding lanes."""
    ngroups, n, width = arr.shape
    if n_elements > ngroups * width:
        raise ValueError("more elements requested than the layout holds")
    flat = arr.transpose(1, 0, 2).reshape(n, ngroups * width)
    return np.ascontiguousarray(flat[:, :n_elements])


# ---------------------------------------------------------------------------
# Blocks and fields


class FieldState(enum.Enum):
    COEFF = "coeff"
    PHYS = "phys"


class Block:
    """A homogeneous group of elements with interleave-aware storage.

    The flat storage order, leading (fastest) to trailing, is: lane within a
    group, data point, group, component -- i.e. the logical order data
    point / element / component with ``interleave_width`` elements
    transposed into adjacent lanes.  Padded lanes (when ``n_elements`` is
    not divisible by the width) stay zero and are dropped by
    :meth:`get_elements`.
    """

    def __init__(
        self,
        basis: ShapeBasis,
        factors: GeometricFactors,
        state: FieldState,
        n_components: int = 1,
        interleave_width: int = 1,
    ):
        if factors.shape is not basis.shape:
            raise ValueError(
                f"geometry shape {factors.shape} does not match basis {basis.shape}"
            )
        if n_components < 1:
            raise ValueError(f"need at least one component, got {n_components}")
        if interleave_width < 1:
            raise ValueError(
                f"interleave width must be at least 1, got {interleave_width}"
            )
        self.basis = basis
        self.factors = factors
        self.state = state
        self.n_elements = factors.n_elements
        self.n_components = n_components
        self.interleave_width = interleave_width
        self.n_groups = -(-self.n_elements // interleave_width)
        self.padded_elements = self.n_groups * interleave_width
        self.n_data = basis.n_modes if state is FieldState.COEFF else basis.n_points
        self.region = MemoryRegion(
            self.n_components * self.padded_elements * self.n_data
        )
        # zero-initialise through the front door
        self.region.access(MemorySpace.HOST, AccessQualifier.WRITE_ONLY)
        self._payload_cache: dict = {}

    @property
    def shape(self) -> Shape:
        return self.basis.shape

    @property
    def geometry_class(self) -> GeometryClass:
        return self.factors.geometry_class

    def host(
        self, qualifier: AccessQualifier = AccessQualifier.READ_ONLY
    ) -> np.ndarray:
        """Host view shaped ``(n_components, n_groups, n_data, width)``."""
        flat = self.region.access(MemorySpace.HOST, qualifier)
        return flat.reshape(
            self.n_components, self.n_groups, self.n_data, self.interleave_width
        )

    def set_elements(self, values: np.ndarray) -> None:
        """Fill from canonical element-major data.

        ``values`` has shape ``(n_data, n_elements)`` for single-component
        blocks or ``(n_components, n_data, n_elements)``.
        """
        values = np.asarray(values, dtype=float)
        if values.ndim == 2:
            values = values[None]
        if values.shape != (self.n_components, self.n_data, self.n_elements):
            raise ValueError(
                f"expected {(self.n_components, self.n_data, self.n_elements)}, "
                f"got {values.shape}"
            )
        view = self.host(AccessQualifier.WRITE_ONLY)
        for c in range(self.n_components):
            view[c] = interleave_array(values[c], self.interleave_width)

    def get_elements(self) -> np.ndarray:
        """Canonical element-major copy, padding dropped:
        ``(n_components, n_data, n_elements)``."""
        view = self.host(AccessQualifier.READ_ONLY)
        return np.stack(
            [deinterleave_array(view[c], self.n_elements) for c in range(self.n_components)]
        )

    def component(self, c: int, qualifier=AccessQualifier.READ_ONLY) -> np.ndarray:
        """One component's interleaved view ``(n_groups, n_data, width)``."""
        return self.host(qualifier)[c]

    def like(self, state: FieldState, n_components: int | None = None) -> "Block":
        """A zeroed block over the same elements in the given state."""
        return Block(
            self.basis,
            self.factors,
            state,
            n_components if n_components is not None else self.n_components,
            self.interleave_width,
        )

    # -- interleaved metric payloads (computed once per block) -------------

    def payload(self, key: str) -> object:
        """Metric data in block layout; built lazily, cached per block.

        Keys: ``wj`` (per-point weighted Jacobian, Deformed only), ``jac``
        (per-element scalars in lanes, Regular only), ``dxi`` (nested
        ``d x d`` lists of lane arrays), ``lam`` (weighted metric products
        ``sum_k dxi[i,k] dxi[j,k]``, symmetric entries shared).
        """
        if key in self._payload_cache:
            return self._payload_cache[key]
        value = self._build_payload(key)
        self._payload_cache[key] = value
        return value

    def _lanes(self, per_element: np.ndarray) -> np.ndarray:
        """Interleave per-element data (n_elements, ...) into (G, ..., W)."""
        ne = self.n_elements
        trailing = per_element.shape[1:]
        flat = per_element.reshape(ne, -1).T  # (prod(trailing), ne)
        out = interleave_array(flat, self.interleave_width)
        return out.reshape(self.n_groups, *trailing, self.interleave_width)

    def _build_payload(self, key: str):
        fac = self.factors
        d = self.basis.ndim
        deformed = fac.geometry_class is GeometryClass.DEFORMED
        if key == "wj":
            if not deformed:
                raise KeyError("wj payload only exists for deformed blocks")
            return self._lanes(fac.jac)  # (G, NQ, W)
        if key == "jac":
            if deformed:
                raise KeyError("jac payload only exists for regular blocks")
            return self._lanes(fac.jac[:, None])  # (G, 1, W)
        if key == "dxi":
            def entry(i: int, j: int) -> np.ndarray:
                e = fac.dxi_dx[..., i, j]
                return self._lanes(e if deformed else e[:, None])

            return [[entry(i, j) for j in range(d)] for i in range(d)]
        if key == "lam":
            # lam[i][j] = sum_k dxi[i,k] dxi[j,k], weighted: by w|J| per point
            # (deformed) or by |J| per element (regular, reference weights
            # applied on the fly).  Symmetric: j < i aliases j > i.
            lam: list[list[np.ndarray | None]] = [[None] * d for _ in range(d)]
            for i in range(d):
                for j in range(i, d):
                    prod = np.einsum(
                        "...k,...k->...", fac.dxi_dx[..., i, :], fac.dxi_dx[..., j, :]
                    )
                    prod = prod * fac.jac
                    lam[i][j] = self._lanes(prod if deformed else prod[:, None])
                    lam[j][i] = lam[i][j]
            return lam
        raise KeyError(f"unknown payload {key!r}")


@dataclass
class Field:
    """An ordered collection of blocks, all in the same state."""

    blocks: list[Block] = field(default_factory=list)

    def __post_init__(self) -> None:
        states = {b.state for b in self.blocks}
        if len(states) > 1:
            raise ValueError("all blocks of a field must share one state")

    @property
    def state(self) -> FieldState:
        if not self.blocks:
            raise ValueError("empty field has no state")
        return self.blocks[0].state

    @property
    def n_elements(self) -> int:
        return sum(b.n_elements for b in self.blocks)


def make_field(
    shapes: Shape | list[Shape],
    order: int,
    geometry_class: GeometryClass,
    n_elements: int | list[int],
    state: FieldState = FieldState.COEFF,
    n_components: int = 1,
    interleave_width: int | None = None,
    seed: int = 0,
    qpoints: tuple[int, ...] | None = None,
) -> Field:
    """Build a field of synthetic blocks, one per requested shape.

    Geometry is generated deterministically from ``seed``; storage is
    zero-initialised through a host ``WriteOnly`` access.
    """
    if isinstance(shapes, Shape):
        shapes = [shapes]
    if isinstance(n_elements, int):
        n_elements = [n_elements] * len(shapes)
    if len(n_elements) != len(shapes):
        raise ValueError("need one element count per shape")
    width = default_interleave_width() if interleave_width is None else interleave_width
    blocks = []
    for k, (shp, ne) in enumerate(zip(shapes, n_elements)):
        if ne < 1:
            raise ValueError(f"need at least one element per block, got {ne}")
        basis = build_shape_basis(shp, order, qpoints)
        factors = make_synthetic_factors(basis, geometry_class, ne, seed=seed + k)
        blocks.append(Block(basis, factors, state, n_components, width))
    return Field(blocks)


def interleave(block: Block, width: int) -> Block:
    """Copy of a block with the group layout transposed to ``width`` lanes."""
    out = Block(block.basis, block.factors, block.state, block.n_components, width)
    out.set_elements(block.get_elements())
    return out


def deinterleave(block: Block) -> Block:
    """Copy of a block restored to plain (width-1) element-major layout."""
    return interleave(block, 1)


# ---------------------------------------------------------------------------
# Flat binary serialization (test fixtures)

_MAGIC = b"SPKF"
_VERSION = 1
_SHAPE_IDS = {s: i for i, s in enumerate(Shape)}
_SHAPE_FROM_ID = {i: s for s, i in _SHAPE_IDS.items()}
_STATE_IDS = {FieldState.COEFF: 0, FieldState.PHYS: 1}
_STATE_FROM_ID = {v: k for k, v in _STATE_IDS.items()}


def save_field(fld: Field, path: str) -> None:
    """Serialize a field: fixed header per block, then the payload as 64-bit
    little-endian reals in deinterleaved canonical order."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HH", _VERSION, len(fld.blocks)))
        for b in fld.blocks:
            fh.write(
                struct.pack(
                    "<BBBIIH",
                    _SHAPE_IDS[b.shape],
                    _STATE_IDS[b.state],
                    1 if b.geometry_class is GeometryClass.DEFORMED else 0,
                    b.basis.order,
                    b.n_elements,
                    b.n_components,
                )
            )
            data = b.get_elements()
            fh.write(data.astype("<f8").tobytes())


def load_field(path: str, seed: int = 0, interleave_width: int | None = None) -> Field:
    """Load a field written by :func:`save_field`.

    Geometry is rebuilt deterministically from ``seed`` (the dump stores
    state, not meshes), so fixtures round-trip when seeds agree.
    """
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError("not a field dump")
        version, nblocks = struct.unpack("<HH", fh.read(4))
        if version != _VERSION:
            raise ValueError(f"unsupported dump version {version}")
        width = (
            default_interleave_width() if interleave_width is None else interleave_width
        )
        blocks = []
        for k in range(nblocks):
            shp_id, state_id, deformed, order, ne, ncomp = struct.unpack(
                "<BBBIIH", fh.read(13)
            )
            shp = _SHAPE_FROM_ID[shp_id]
            state = _STATE_FROM_ID[state_id]
            basis = build_shape_basis(shp, order)
            gcls = GeometryClass.DEFORMED if deformed else GeometryClass.REGULAR
            factors = make_synthetic_factors(basis, gcls, ne, seed=seed + k)
            blk = Block(basis, factors, state, ncomp, width)
            n_data = blk.n_data
            raw = fh.read(8 * ncomp * n_data * ne)
            data = np.frombuffer(raw, dtype="<f8").reshape(ncomp, n_data, ne)
            blk.set_elements(data.astype(np.float64))
            blocks.append(blk)
    return Field(blocks)
