"""Implicit-surface geometry of merged TPMS unit cells.

Three cubic-symmetry basis surfaces (Schwarz P, Diamond, Schoen F-RD) are
combined as a weighted sum of their implicit functions; the level-set
offsets thicken or thin the resulting solid. The solid phase is the
region where the merged field is >= 0, so increasing any offset grows
the solid. All functions are pure and vectorized over point arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import UndefinedOverlapError, ValidationError
from .params import ShapeParams

# multiplier balancing P/D against the larger-amplitude F-RD when merging
PD_WEIGHT = 4.0

# a cross-section slice fails validity below this solid fraction
CROSS_SECTION_MIN_FRACTION = 0.02

FACES = ("+x", "-x", "+y", "-y", "+z", "-z")


def basis_p(x, y, z, t=0.0):
    """Schwarz P: cos X + cos Y + cos Z + t, with X = 2*pi*x."""
    X, Y, Z = 2 * np.pi * np.asarray(x), 2 * np.pi * np.asarray(y), 2 * np.pi * np.asarray(z)
    return np.cos(X) + np.cos(Y) + np.cos(Z) + t


def basis_d(x, y, z, t=0.0):
    """Diamond: cos X cos Y cos Z - sin X sin Y sin Z + t."""
    X, Y, Z = 2 * np.pi * np.asarray(x), 2 * np.pi * np.asarray(y), 2 * np.pi * np.asarray(z)
    return np.cos(X) * np.cos(Y) * np.cos(Z) - np.sin(X) * np.sin(Y) * np.sin(Z) + t


def basis_frd(x, y, z, t=0.0):
    """Schoen F-RD: 8 cos X cos Y cos Z + cos 2X cos 2Y cos 2Z
    - (cos 2X cos 2Y + cos 2Y cos 2Z + cos 2Z cos 2X) + t."""
    X, Y, Z = 2 * np.pi * np.asarray(x), 2 * np.pi * np.asarray(y), 2 * np.pi * np.asarray(z)
    cx, cy, cz = np.cos(X), np.cos(Y), np.cos(Z)
    c2x, c2y, c2z = np.cos(2 * X), np.cos(2 * Y), np.cos(2 * Z)
    return 8 * cx * cy * cz + c2x * c2y * c2z - (c2x * c2y + c2y * c2z + c2z * c2x) + t


_BASIS = {"P": basis_p, "D": basis_d, "FRD": basis_frd}


def eval_basis(kind, point, t=0.0):
    """Evaluate one basis surface at a point (or point arrays)."""
    if kind not in _BASIS:
        raise ValidationError(f"unknown TPMS kind {kind!r}, expected one of {sorted(_BASIS)}")
    x, y, z = point
    return _BASIS[kind](x, y, z, t)


def eval_merged(params: ShapeParams, x, y=None, z=None):
    """Weighted merge of the three basis fields.

    P and D carry an extra factor 4 to balance their amplitude against
    F-RD. Accepts either eval_merged(params, (x, y, z)) or separate
    coordinate arrays.
    """
    if y is None:
        x, y, z = x
    return (params.alpha1 * PD_WEIGHT * basis_p(x, y, z, params.t1)
            + params.alpha2 * PD_WEIGHT * basis_d(x, y, z, params.t2)
            + params.alpha3 * basis_frd(x, y, z, params.t3))


@dataclass(frozen=True)
class VoxelGrid:
    """Binary occupancy over the unit cube, indexed [ix, iy, iz].

    Voxel centers sit at ((i + 0.5)/n, (j + 0.5)/n, (k + 0.5)/n); the
    x-fastest flat ordering is occupancy.ravel(order="F").
    """

    resolution: int
    occupancy: np.ndarray

    def __post_init__(self):
        if self.resolution < 1:
            raise ValidationError("resolution must be positive")
        shape = (self.resolution,) * 3
        if self.occupancy.shape != shape or self.occupancy.dtype != bool:
            raise ValidationError(f"occupancy must be bool array of shape {shape}")

    @property
    def volume_fraction(self) -> float:
        return float(np.count_nonzero(self.occupancy)) / self.resolution ** 3


@dataclass(frozen=True)
class FaceMask:
    """Solid pattern on one boundary face, indexed by the two in-plane axes."""

    resolution: int
    pixels: np.ndarray

    def __post_init__(self):
        shape = (self.resolution,) * 2
        if self.pixels.shape != shape or self.pixels.dtype != bool:
            raise ValidationError(f"pixels must be bool array of shape {shape}")

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.pixels))


def voxel_centers(resolution: int) -> np.ndarray:
    return (np.arange(resolution) + 0.5) / resolution


def voxelize(params: ShapeParams, resolution: int) -> VoxelGrid:
    """Sample the merged field at voxel centers; solid where field >= 0."""
    if resolution < 2:
        raise ValidationError("voxelization needs resolution >= 2")
    c = voxel_centers(resolution)
    X, Y, Z = np.meshgrid(c, c, c, indexing="ij")
    occ = eval_merged(params, X, Y, Z) >= 0.0
    return VoxelGrid(resolution, occ)


def volume_fraction(grid: VoxelGrid) -> float:
    return grid.volume_fraction


def extract_face(grid: VoxelGrid, face: str) -> FaceMask:
    """Boundary voxel layer on the named face as a 2-D mask.

    In-plane axes keep their grid order: x faces -> [iy, iz],
    y faces -> [ix, iz], z faces -> [ix, iy].
    """
    if face not in FACES:
        raise ValidationError(f"face must be one of {FACES}, got {face!r}")
    axis = "xyz".index(face[1])
    index = -1 if face[0] == "+" else 0
    layer = np.take(grid.occupancy, index, axis=axis)
    return FaceMask(grid.resolution, np.ascontiguousarray(layer))


def face_overlap(a: FaceMask, b: FaceMask) -> float:
    """Percentage of overlap area: |A & B| / min(|A|, |B|) * 100."""
    if a.resolution != b.resolution:
        raise ValidationError("face masks must share a resolution")
    na, nb = a.area, b.area
    if na == 0 and nb == 0:
        raise UndefinedOverlapError("overlap of two empty faces is undefined")
    if na == 0 or nb == 0:
        return 0.0
    inter = int(np.count_nonzero(a.pixels & b.pixels))
    return 100.0 * inter / min(na, nb)


def blend_cells(a: ShapeParams, b: ShapeParams, axis: str = "x"):
    """Linear transition field between two cells along one axis.

    Returns field(x, y, z) over the transition cell: the blend weight is
    the (clipped) axis coordinate itself, so the returned field equals
    a's merged field on the s=0 plane and b's on the s=1 plane. Both
    cells are evaluated at the same points, so any plane of the blend
    seen from either adjacent cell is bit-identical.
    """
    if axis not in ("x", "y", "z"):
        raise ValidationError(f"axis must be x, y or z, got {axis!r}")
    pick = "xyz".index(axis)

    def field(x, y, z):
        w = np.clip(np.asarray((x, y, z)[pick], dtype=float), 0.0, 1.0)
        return (1.0 - w) * eval_merged(a, x, y, z) + w * eval_merged(b, x, y, z)

    return field


@dataclass(frozen=True)
class ValidityResult:
    passed: bool
    reason: str | None = None

    def __bool__(self):
        return self.passed


def _periodic_component_count(occ: np.ndarray) -> int:
    """Number of 6-connected solid components on the periodic torus."""
    labels, nlab = ndimage.label(occ)
    if nlab <= 1:
        return nlab
    parent = np.arange(nlab + 1)

    def find(i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    for ax in range(3):
        lo = np.take(labels, 0, axis=ax).ravel()
        hi = np.take(labels, -1, axis=ax).ravel()
        both = (lo > 0) & (hi > 0)
        for la, lb in zip(lo[both], hi[both]):
            ra, rb = find(la), find(lb)
            if ra != rb:
                parent[ra] = rb
    return len({find(i) for i in range(1, nlab + 1)})


def validity_check(grid: VoxelGrid,
                   min_cross_fraction: float = CROSS_SECTION_MIN_FRACTION) -> ValidityResult:
    """Reject cells that cannot carry load or connect to neighbors.

    Fails when a boundary face is empty, the solid phase is not a single
    periodic 6-connected component, or any axis-aligned cross-section
    falls below the minimum solid fraction.
    """
    occ = grid.occupancy
    if not occ.any():
        return ValidityResult(False, "empty cell")
    for face in FACES:
        if extract_face(grid, face).area == 0:
            return ValidityResult(False, f"empty boundary face {face}")
    ncomp = _periodic_component_count(occ)
    if ncomp != 1:
        return ValidityResult(False, f"solid phase has {ncomp} disconnected components")
    slice_area = grid.resolution ** 2
    for ax in range(3):
        counts = occ.sum(axis=tuple(d for d in range(3) if d != ax))
        frac = counts.min() / slice_area
        if frac < min_cross_fraction:
            return ValidityResult(
                False, f"cross-section along {'xyz'[ax]} below "
                       f"{min_cross_fraction:.0%} (got {frac:.2%})")
    return ValidityResult(True)


def export_mesh(sampler, resolution: int, path, fmt: str = "stl") -> None:
    """Write the zero isosurface of a field over the unit cube.

    sampler(x, y, z) must accept broadcast arrays. fmt "stl" runs
    marching cubes and writes binary STL; "vtk" writes the voxelized
    field as legacy VTK structured points.
    """
    from . import meshing

    if resolution < 2:
        raise ValidationError("export resolution must be >= 2")
    c = voxel_centers(resolution)
    X, Y, Z = np.meshgrid(c, c, c, indexing="ij")
    values = np.asarray(sampler(X, Y, Z), dtype=float)
    if fmt == "stl":
        verts, faces = meshing.isosurface(values, spacing=1.0 / resolution)
        meshing.write_binary_stl(path, verts, faces)
    elif fmt == "vtk":
        meshing.write_vtk_voxels(path, values >= 0.0, spacing=1.0 / resolution)
    else:
        raise ValidationError(f"unknown mesh format {fmt!r}")
