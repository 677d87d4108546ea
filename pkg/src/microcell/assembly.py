"""From optimized property maps to a concrete multi-cell structure.

Each macro element gets a unit cell drawn from the generative model
conditioned on that element's (E, nu); among the valid candidates the
lowest-density one wins. The global implicit field blends adjacent
cells bilinearly between cell centers (one cell width per transition),
which makes the field continuous across every internal face.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AssignmentFailureError, ValidationError
from .geometry import eval_merged, validity_check, voxel_centers, voxelize
from .model import CellGan
from .params import ShapeParams
from .topopt import DesignField, MacroModel, solve_macro

DEFAULT_CANDIDATES = 10
SELECT_RESOLUTION = 20


@dataclass(frozen=True)
class CellAssignment:
    """One macro element's chosen unit cell."""

    element: tuple[int, int]
    params: ShapeParams
    vf: float
    condition: tuple[float, float]
    candidate_count: int


@dataclass
class AssembledStructure:
    """Grid of cell assignments with the blended global implicit field."""

    nx: int
    ny: int
    assignments: list  # flat, index i * ny + j

    def __post_init__(self):
        if len(self.assignments) != self.nx * self.ny:
            raise ValidationError("assignment grid size mismatch")

    def cell(self, i: int, j: int) -> CellAssignment:
        return self.assignments[i * self.ny + j]

    @property
    def overall_density(self) -> float:
        return float(np.mean([a.vf for a in self.assignments]))

    def cell_field(self, i: int, j: int, x, y, z):
        """Cell (i, j)'s periodic field at global coordinates."""
        return eval_merged(self.cell(i, j).params, np.mod(x, 1.0), np.mod(y, 1.0),
                           np.mod(z, 1.0))

    def field(self, x, y, z, blended: bool = True):
        """Global implicit field; cell units, domain [0,nx]x[0,ny]x[0,1].

        Blended: bilinear hat weights between the four nearest cell
        centers, clamped at the outer boundary so edge cells continue
        unmodified outside their center band.
        """
        xb, yb, zb = np.broadcast_arrays(np.asarray(x, dtype=float),
                                         np.asarray(y, dtype=float),
                                         np.asarray(z, dtype=float))
        shape = xb.shape
        xf, yf, zf = xb.ravel(), yb.ravel(), zb.ravel()
        out = np.zeros(xf.shape)

        if not blended:
            ci = np.clip(np.floor(xf).astype(int), 0, self.nx - 1)
            cj = np.clip(np.floor(yf).astype(int), 0, self.ny - 1)
            for (i, j) in np.unique(np.stack([ci, cj], axis=1), axis=0):
                m = (ci == i) & (cj == j)
                out[m] = self.cell_field(i, j, xf[m], yf[m], zf[m])
            return out.reshape(shape)

        cx = np.clip(xf - 0.5, 0.0, self.nx - 1.0)
        cy = np.clip(yf - 0.5, 0.0, self.ny - 1.0)
        i0 = np.clip(np.floor(cx).astype(int), 0, self.nx - 1)
        j0 = np.clip(np.floor(cy).astype(int), 0, self.ny - 1)
        i1 = np.minimum(i0 + 1, self.nx - 1)
        j1 = np.minimum(j0 + 1, self.ny - 1)
        wx = cx - i0
        wy = cy - j0
        corners = ((i0, j0, (1 - wx) * (1 - wy)), (i1, j0, wx * (1 - wy)),
                   (i0, j1, (1 - wx) * wy), (i1, j1, wx * wy))
        for ii, jj, w in corners:
            nonzero = w != 0
            for (i, j) in np.unique(np.stack([ii[nonzero], jj[nonzero]], axis=1), axis=0):
                m = (ii == i) & (jj == j) & nonzero
                out[m] += w[m] * self.cell_field(i, j, xf[m], yf[m], zf[m])
        return out.reshape(shape)


def select_lowest_density(draws: np.ndarray, resolution: int = SELECT_RESOLUTION):
    """Pick the valid candidate with minimum volume fraction per element.

    draws has shape (nel, n_candidates, 6). Returns a list of
    (vf, ShapeParams) or None where every candidate failed validity.
    """
    chosen = []
    for cand_rows in draws:
        best = None
        for row in cand_rows:
            params = ShapeParams.from_array(row)
            grid = voxelize(params, resolution)
            if not validity_check(grid):
                continue
            vf = grid.volume_fraction
            if best is None or vf < best[0]:
                best = (vf, params)
        chosen.append(best)
    return chosen


def assign_cells(design: DesignField, model: CellGan,
                 n_candidates: int = DEFAULT_CANDIDATES, seed: int = 0,
                 resolution: int = SELECT_RESOLUTION) -> AssembledStructure:
    """Per-element conditional generation with lowest-density selection.

    Invalid candidates (failing the geometric validity check) are
    discarded before the minimum; an element whose candidates all fail
    raises AssignmentFailureError listing the offenders.
    """
    if n_candidates < 1:
        raise ValidationError("need at least one candidate per element")
    nx, ny = design.E.shape
    conditions = np.stack([design.E.reshape(-1), design.nu.reshape(-1)], axis=1)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((conditions.shape[0], n_candidates, model.noise_dim))
    draws = model.sample(conditions, z=z)            # (nel, n, 6)
    draws = draws.reshape(conditions.shape[0], n_candidates, 6)

    chosen = select_lowest_density(draws, resolution)
    assignments = []
    failed = []
    for e, (cond, best) in enumerate(zip(conditions, chosen)):
        if best is None:
            failed.append((e // ny, e % ny))
            continue
        assignments.append(CellAssignment((e // ny, e % ny), best[1], best[0],
                                          (float(cond[0]), float(cond[1])),
                                          n_candidates))
    if failed:
        raise AssignmentFailureError(
            f"all {n_candidates} candidates invalid for elements {failed[:5]}"
            + ("..." if len(failed) > 5 else ""), elements=failed)
    return AssembledStructure(nx, ny, assignments)


def synthesize(structure: AssembledStructure) -> AssembledStructure:
    """The assignment grid already carries the blended field; returned as is.

    Kept as an explicit step so callers can separate generation from
    geometric synthesis.
    """
    return structure


def _face_masks(structure: AssembledStructure, i: int, j: int, axis: str,
                resolution: int, blended: bool):
    """Solid masks of the two sides of one internal interface."""
    c = voxel_centers(resolution)
    if axis == "x":
        plane = float(i + 1)
        V, W = np.meshgrid(j + c, c, indexing="ij")
        X, Y, Z = np.full_like(V, plane), V, W
        a_cells, b_cells = (i, j), (i + 1, j)
    else:
        plane = float(j + 1)
        V, W = np.meshgrid(i + c, c, indexing="ij")
        X, Y, Z = V, np.full_like(V, plane), W
        a_cells, b_cells = (i, j), (i, j + 1)
    if blended:
        vals = structure.field(X, Y, Z, blended=True)
        return vals >= 0, vals >= 0
    mask_a = structure.cell_field(*a_cells, X, Y, Z) >= 0
    mask_b = structure.cell_field(*b_cells, X, Y, Z) >= 0
    return mask_a, mask_b


def connectivity_report(structure: AssembledStructure, blended: bool = False,
                        resolution: int = SELECT_RESOLUTION):
    """Overlap percentage of every internal interface plus summary stats.

    Masks are the cells' solid patterns sampled on the shared face
    plane, so a uniform tiling scores exactly 100 on every face. With
    blended=True the blended field is sampled instead and both sides
    agree by construction.
    """
    rows = []
    for i in range(structure.nx):
        for j in range(structure.ny):
            for axis in ("x", "y"):
                if axis == "x" and i + 1 >= structure.nx:
                    continue
                if axis == "y" and j + 1 >= structure.ny:
                    continue
                a, b = _face_masks(structure, i, j, axis, resolution, blended)
                na, nb = int(a.sum()), int(b.sum())
                if na == 0 and nb == 0:
                    overlap = 0.0
                elif na == 0 or nb == 0:
                    overlap = 0.0
                else:
                    overlap = 100.0 * int((a & b).sum()) / min(na, nb)
                rows.append({"cell_a": (i, j),
                             "cell_b": (i + 1, j) if axis == "x" else (i, j + 1),
                             "axis": axis, "overlap": overlap})
    overlaps = np.array([r["overlap"] for r in rows]) if rows else np.zeros(0)
    hist, edges = np.histogram(overlaps, bins=10, range=(0.0, 100.0))
    summary = {
        "count": len(rows),
        "min": float(overlaps.min()) if len(rows) else np.nan,
        "mean": float(overlaps.mean()) if len(rows) else np.nan,
        "histogram": hist.tolist(),
        "bin_edges": edges.tolist(),
        "blended": blended,
    }
    return rows, summary


def sample_global_field(structure: AssembledStructure, resolution: int,
                        blended: bool = True) -> np.ndarray:
    """Field values at voxel centers, shape (nx*r, ny*r, r)."""
    nxs, nys, nzs = structure.nx * resolution, structure.ny * resolution, resolution
    xs = (np.arange(nxs) + 0.5) / resolution
    ys = (np.arange(nys) + 0.5) / resolution
    zs = (np.arange(nzs) + 0.5) / resolution
    out = np.empty((nxs, nys, nzs))
    for kz, z in enumerate(zs):  # slice-wise to bound memory
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        out[:, :, kz] = structure.field(X, Y, np.full_like(X, z), blended=blended)
    return out


def structure_density(structure: AssembledStructure, resolution: int = SELECT_RESOLUTION,
                      blended: bool = True) -> float:
    """Solid fraction of the voxelized global field."""
    return float((sample_global_field(structure, resolution, blended) >= 0).mean())


def export_structure(structure: AssembledStructure, fmt: str, path,
                     resolution: int = SELECT_RESOLUTION) -> None:
    """Write the blended structure as binary STL or legacy VTK voxels.

    "stl" runs marching cubes on the blended field (closed at the outer
    boundary); "stl-voxel" writes exact voxel boxes; "vtk" writes the
    occupancy grid.
    """
    from . import meshing

    values = sample_global_field(structure, resolution)
    spacing = 1.0 / resolution
    if fmt == "stl":
        verts, faces = meshing.isosurface(values, spacing=spacing)
        meshing.write_binary_stl(path, verts, faces)
    elif fmt == "stl-voxel":
        verts, faces = meshing.voxel_box_mesh(values >= 0, spacing=spacing)
        meshing.write_binary_stl(path, verts, faces)
    elif fmt == "vtk":
        meshing.write_vtk_voxels(path, values >= 0, spacing=spacing)
    else:
        raise ValidationError(f"unknown export format {fmt!r}")


def macro_recheck(structure: AssembledStructure, model: MacroModel,
                  resolution: int = 10):
    """Re-solve the macro problem with each cell's achieved properties.

    Returns (rows, achieved DesignField, u). A desk-scale stand-in for
    re-simulating the assembled lattice: quantifies how far the chosen
    cells drift from the optimized property maps.
    """
    from .homogenization import homogenize

    nx, ny = structure.nx, structure.ny
    E = np.empty((nx, ny))
    nu = np.empty((nx, ny))
    rows = []
    for a in structure.assignments:
        props = homogenize(a.params, resolution=resolution)
        i, j = a.element
        E[i, j] = props.E_H
        nu[i, j] = props.nu_H
        rows.append({
            "element": a.element,
            "E_target": a.condition[0], "nu_target": a.condition[1],
            "E_achieved": props.E_H, "nu_achieved": props.nu_H,
            "eps_E": (props.E_H - a.condition[0]) / a.condition[0],
            "eps_nu": (props.nu_H - a.condition[1]) / a.condition[1],
        })
    achieved = DesignField(E, nu)
    u = solve_macro(model, achieved)
    return rows, achieved, u
