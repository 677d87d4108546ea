"""Surface extraction and mesh export.

Marching cubes comes from scikit-image; the field is padded with a void
border first so every isosurface closes into a watertight shell. STL
output is the 84-byte-header binary layout.
"""
from __future__ import annotations

import os
import struct

import numpy as np
from skimage import measure

from .errors import ValidationError


def isosurface(values: np.ndarray, spacing: float = 1.0, level: float = 0.0):
    """Triangulate the `values >= level` boundary, closed at the domain box.

    Returns (vertices (m, 3), faces (k, 3) int). Vertices are in the same
    units as spacing, with the sample at index (0,0,0) located at
    spacing/2 (cell-centered samples).
    """
    if values.ndim != 3:
        raise ValidationError("isosurface expects a 3-D sample array")
    # close the surface at the domain boundary: the border layer mirrors the
    # edge samples with negated sign, so solid edges cross the level set
    # exactly half a voxel outside the last sample (= the domain face)
    shifted = np.asarray(values, dtype=float) - level
    padded = np.pad(shifted, 1, mode="edge")
    eps = 1e-9 * (1.0 + np.abs(shifted).max())
    for axis in range(3):
        for index in (0, -1):
            border = [slice(None)] * 3
            border[axis] = index
            layer = padded[tuple(border)]
            padded[tuple(border)] = -np.abs(layer) - eps
    if not (padded > 0).any():
        return np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)
    verts, faces, _, _ = measure.marching_cubes(padded, level=0.0)
    verts = (verts - 0.5) * spacing
    faces = faces.astype(np.int64)
    if mesh_volume(verts, faces) < 0:  # enforce outward orientation
        faces = faces[:, ::-1]
    return verts, faces


def write_binary_stl(path, vertices: np.ndarray, faces: np.ndarray) -> None:
    """Write an indexed triangle mesh as binary STL."""
    tri = vertices[faces]  # (k, 3, 3)
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    norms = np.linalg.norm(n, axis=1)
    norms[norms == 0] = 1.0
    n = (n / norms[:, None]).astype("<f4")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"microcell binary stl".ljust(80, b" "))
        fh.write(struct.pack("<I", len(faces)))
        record = np.zeros(len(faces), dtype=[("n", "<f4", 3), ("v", "<f4", (3, 3)),
                                             ("attr", "<u2")])
        record["n"] = n
        record["v"] = tri.astype("<f4")
        fh.write(record.tobytes())
    os.replace(tmp, path)


def read_binary_stl(path):
    """Read a binary STL back as a (k, 3, 3) triangle array."""
    with open(path, "rb") as fh:
        fh.seek(80)
        count = struct.unpack("<I", fh.read(4))[0]
        record = np.frombuffer(fh.read(count * 50),
                               dtype=[("n", "<f4", 3), ("v", "<f4", (3, 3)),
                                      ("attr", "<u2")])
    return record["v"].astype(float)


def voxel_box_mesh(occupancy: np.ndarray, spacing: float = 1.0):
    """Exact boundary of a voxel solid: two triangles per exposed face.

    A single solid voxel yields the 12-triangle closed box.
    """
    occ = np.asarray(occupancy, dtype=bool)
    verts = []
    faces = []
    # (axis, direction, quad corners in CCW order seen from outside)
    quads = {
        (0, +1): [(1, 0, 0), (1, 1, 0), (1, 1, 1), (1, 0, 1)],
        (0, -1): [(0, 0, 0), (0, 0, 1), (0, 1, 1), (0, 1, 0)],
        (1, +1): [(0, 1, 0), (0, 1, 1), (1, 1, 1), (1, 1, 0)],
        (1, -1): [(0, 0, 0), (1, 0, 0), (1, 0, 1), (0, 0, 1)],
        (2, +1): [(0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)],
        (2, -1): [(0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 0, 0)],
    }
    index = {}

    def vid(p):
        if p not in index:
            index[p] = len(verts)
            verts.append(p)
        return index[p]

    padded = np.pad(occ, 1, constant_values=False)
    solid = np.argwhere(occ)
    for (i, j, k) in solid:
        for (axis, sign), corners in quads.items():
            npos = [i + 1, j + 1, k + 1]
            npos[axis] += sign
            if padded[tuple(npos)]:
                continue
            ids = [vid((i + c[0], j + c[1], k + c[2])) for c in corners]
            faces.append([ids[0], ids[1], ids[2]])
            faces.append([ids[0], ids[2], ids[3]])
    v = np.array(verts, dtype=float) * spacing if verts else np.zeros((0, 3))
    f = np.array(faces, dtype=np.int64) if faces else np.zeros((0, 3), dtype=np.int64)
    return v, f


def mesh_volume(vertices: np.ndarray, faces: np.ndarray) -> float:
    """Enclosed volume by the divergence theorem (signed tetrahedra)."""
    tri = vertices[faces]
    return float(np.einsum("ij,ij->", tri[:, 0],
                           np.cross(tri[:, 1], tri[:, 2])) / 6.0)


def edge_manifold(faces: np.ndarray) -> bool:
    """True when every edge is shared by exactly two triangles."""
    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return bool(np.all(counts == 2))


def write_vtk_voxels(path, occupancy: np.ndarray, spacing: float = 1.0,
                     origin=(0.0, 0.0, 0.0)) -> None:
    """Legacy-VTK structured points file of a binary occupancy grid."""
    occ = np.asarray(occupancy)
    nx, ny, nz = occ.shape
    lines = [
        "# vtk DataFile Version 3.0",
        "microcell voxel grid",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {nx} {ny} {nz}",
        f"ORIGIN {origin[0]!r} {origin[1]!r} {origin[2]!r}",
        f"SPACING {spacing!r} {spacing!r} {spacing!r}",
        f"POINT_DATA {nx * ny * nz}",
        "SCALARS occupancy int 1",
        "LOOKUP_TABLE default",
    ]
    flat = occ.astype(int).ravel(order="F")  # x fastest, per VTK convention
    body = "\n".join(" ".join(str(v) for v in flat[i:i + 20])
                     for i in range(0, len(flat), 20))
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n" + body + "\n")
    os.replace(tmp, path)


def write_vtk_vector_field(path, vectors: np.ndarray, spacing: float = 1.0,
                           origin=(0.0, 0.0, 0.0), name: str = "displacement") -> None:
    """Legacy-VTK structured points with one vector per grid point.

    vectors has shape (nx, ny, nz, 3); point order in the file is x
    fastest, matching the structured-points convention.
    """
    nx, ny, nz, comp = vectors.shape
    if comp != 3:
        raise ValidationError("vector field must have 3 components")
    lines = [
        "# vtk DataFile Version 3.0",
        "microcell vector field",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {nx} {ny} {nz}",
        f"ORIGIN {origin[0]!r} {origin[1]!r} {origin[2]!r}",
        f"SPACING {spacing!r} {spacing!r} {spacing!r}",
        f"POINT_DATA {nx * ny * nz}",
        f"VECTORS {name} double",
    ]
    flat = vectors.transpose(2, 1, 0, 3).reshape(-1, 3)  # x fastest
    body = "\n".join(" ".join(repr(float(v)) for v in row) for row in flat)
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n" + body + "\n")
    os.replace(tmp, path)
