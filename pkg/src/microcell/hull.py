"""Convex hull of the property cloud as linear feasibility constraints.

The hull is stored as rows [a, b, c] of hyperplane inequalities
a*E + b*nu + c <= 0 for feasible (E, nu); scipy's Qhull supplies the
facets and the polygon vertices are kept for projections.
"""
from __future__ import annotations

import json
import os

import numpy as np
from scipy.spatial import ConvexHull as _QhullConvexHull
from scipy.spatial import QhullError

from .errors import ValidationError


class PropertyHull:
    """Closed convex feasible region in the (E, nu) plane."""

    def __init__(self, A: np.ndarray, vertices: np.ndarray | None = None):
        self.A = np.asarray(A, dtype=float)
        if self.A.ndim != 2 or self.A.shape[1] != 3:
            raise ValidationError(f"hull coefficient matrix must be (n, 3), got {self.A.shape}")
        if vertices is None:
            vertices = _vertices_from_halfplanes(self.A)
        self.vertices = np.asarray(vertices, dtype=float)

    @classmethod
    def from_points(cls, points) -> "PropertyHull":
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
            raise ValidationError("hull needs at least 3 points of shape (n, 2)")
        try:
            q = _QhullConvexHull(pts)
        except QhullError as exc:
            raise ValidationError(f"degenerate point set for convex hull: {exc}") from exc
        # qhull equations are a*x + b*y + c <= 0 inside, unit normals
        return cls(q.equations.copy(), pts[q.vertices])

    def evaluate(self, E, nu) -> np.ndarray:
        """Signed constraint values; max over rows <= 0 means feasible."""
        E = np.asarray(E, dtype=float)
        nu = np.asarray(nu, dtype=float)
        vals = (self.A[:, 0] * E[..., None] + self.A[:, 1] * nu[..., None]
                + self.A[:, 2])
        return vals.max(axis=-1)

    def contains(self, E, nu, tol: float = 1e-9) -> np.ndarray:
        return self.evaluate(E, nu) <= tol

    def save(self, path) -> None:
        tmp = f"{path}.tmp"
        with open(tmp, "w") as fh:
            json.dump(self.A.tolist(), fh, indent=1)
            fh.write("\n")
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "PropertyHull":
        with open(path) as fh:
            rows = json.load(fh)
        return cls(np.asarray(rows, dtype=float))


def _vertices_from_halfplanes(A: np.ndarray) -> np.ndarray:
    """Enumerate polygon vertices of {p : A (p, 1) <= 0}, CCW order."""
    n = A.shape[0]
    pts = []
    for i in range(n):
        for j in range(i + 1, n):
            M = A[[i, j], :2]
            if abs(np.linalg.det(M)) < 1e-14:
                continue
            p = np.linalg.solve(M, -A[[i, j], 2])
            scale = 1.0 + np.abs(p).max()
            if np.all(A[:, :2] @ p + A[:, 2] <= 1e-9 * scale):
                pts.append(p)
    if not pts:
        raise ValidationError("hull half-planes have an empty intersection")
    pts = np.unique(np.round(np.asarray(pts), 12), axis=0)
    center = pts.mean(axis=0)
    order = np.argsort(np.arctan2(pts[:, 1] - center[1], pts[:, 0] - center[0]))
    return pts[order]


def clip_polygon(vertices: np.ndarray, halfplanes: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of a convex polygon by a*x + b*y + c <= 0 rows."""
    poly = [tuple(v) for v in np.asarray(vertices, dtype=float)]
    for a, b, c in halfplanes:
        if not poly:
            break
        out = []
        m = len(poly)
        for i in range(m):
            p, q = np.array(poly[i]), np.array(poly[(i + 1) % m])
            fp = a * p[0] + b * p[1] + c
            fq = a * q[0] + b * q[1] + c
            if fp <= 0:
                out.append(tuple(p))
            if (fp < 0 < fq) or (fq < 0 < fp):
                s = fp / (fp - fq)
                out.append(tuple(p + s * (q - p)))
        poly = out
    return np.asarray(poly, dtype=float).reshape(-1, 2)


def project_points_to_polygon(points: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Euclidean projection of many points onto one convex CCW polygon."""
    pts = np.asarray(points, dtype=float)
    verts = np.asarray(vertices, dtype=float)
    if len(verts) == 0:
        raise ValidationError("cannot project onto an empty polygon")
    if len(verts) == 1:
        return np.broadcast_to(verts[0], pts.shape).copy()
    a = verts
    b = np.roll(verts, -1, axis=0)
    e = b - a                                        # (m, 2)
    rel = pts[:, None, :] - a[None, :, :]            # (n, m, 2)
    cross = e[None, :, 0] * rel[..., 1] - e[None, :, 1] * rel[..., 0]
    scale = 1.0 + np.abs(pts).max()
    inside = np.all(cross >= -1e-12 * scale, axis=1)
    ee = np.einsum("mj,mj->m", e, e)
    ee = np.where(ee == 0, 1.0, ee)
    s = np.clip(np.einsum("nmj,mj->nm", rel, e) / ee, 0.0, 1.0)
    cand = a[None, :, :] + s[..., None] * e[None, :, :]
    d2 = np.einsum("nmj,nmj->nm", pts[:, None, :] - cand, pts[:, None, :] - cand)
    nearest = cand[np.arange(len(pts)), np.argmin(d2, axis=1)]
    out = pts.copy()
    out[~inside] = nearest[~inside]
    return out


def project_to_polygon(point: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Euclidean projection of a point onto a convex polygon (vertices ordered)."""
    p = np.asarray(point, dtype=float)
    verts = np.asarray(vertices, dtype=float)
    if len(verts) == 0:
        raise ValidationError("cannot project onto an empty polygon")
    if len(verts) == 1:
        return verts[0].copy()
    # inside test via winding of edge cross products
    nv = len(verts)
    inside = True
    best = None
    best_d = np.inf
    for i in range(nv):
        a, b = verts[i], verts[(i + 1) % nv]
        e = b - a
        cross = e[0] * (p[1] - a[1]) - e[1] * (p[0] - a[0])
        if cross < -1e-12 * (1 + np.abs(p).max()):
            inside = False
        ee = e @ e
        s = 0.0 if ee == 0 else np.clip((p - a) @ e / ee, 0.0, 1.0)
        cand = a + s * e
        d = (p - cand) @ (p - cand)
        if d < best_d:
            best_d, best = d, cand
    return p.copy() if inside else best
