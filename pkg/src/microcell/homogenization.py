"""Periodic voxel FE homogenization of unit cells.

Each solid voxel is an eight-node hexahedral element; displacements are
periodic (opposite boundary nodes share degrees of freedom), so the mesh
has exactly resolution^3 independent nodes. Six unit macroscopic strains
are applied through equivalent nodal loads, the fluctuation fields are
solved with a Jacobi-preconditioned conjugate gradient, and the
homogenized constitutive matrix follows from the element-level energy
bilinear form. Voigt order is (xx, yy, zz, yz, xz, xy) throughout.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import (DegenerateCellError, EmptyStructureError,
                     InvalidMaterialError, SolverFailureError, ValidationError)
from .geometry import VoxelGrid, validity_check, voxelize
from .params import ShapeParams

# base material of the cell walls (GPa / dimensionless)
BASE_E = 200.0
BASE_NU = 0.3

PCG_TOL = 1e-8

VOIGT_PAIRS = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))

# local corner order of the trilinear hexahedron, reference coords in {-1, 1}
HEX_CORNERS = np.array([
    [-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
    [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1],
], dtype=float)

_CORNER_OFFSETS = ((HEX_CORNERS + 1) // 2).astype(int)


@dataclass(frozen=True)
class MaterialConstants:
    """Isotropic base material with its Lame parameters."""

    E: float
    nu: float
    lam: float
    mu: float


@dataclass(frozen=True)
class EffectiveProps:
    """Homogenized constitutive matrix and the extracted axial constants."""

    C_H: np.ndarray
    E_H: float
    nu_H: float


def lame_parameters(E: float, nu: float) -> tuple[float, float]:
    """Lame's first and second parameters from (E, nu)."""
    if not np.isfinite(E) or E <= 0:
        raise InvalidMaterialError(f"Young's modulus must be positive, got {E!r}")
    if not (-1.0 < nu < 0.5):
        raise InvalidMaterialError(f"Poisson's ratio must lie in (-1, 0.5), got {nu!r}")
    lam = nu * E / ((1 + nu) * (1 - 2 * nu))
    mu = E / (2 * (1 + nu))
    return lam, mu


def material_constants(E: float = BASE_E, nu: float = BASE_NU) -> MaterialConstants:
    lam, mu = lame_parameters(E, nu)
    return MaterialConstants(E, nu, lam, mu)


def isotropic_constitutive(lam: float, mu: float) -> np.ndarray:
    """6x6 isotropic stiffness in Voigt notation."""
    if mu <= 0 or lam < -2.0 / 3.0 * mu:
        raise InvalidMaterialError(f"(lambda, mu)=({lam!r}, {mu!r}) is not positive definite")
    C = np.zeros((6, 6))
    C[:3, :3] = lam
    C[np.arange(3), np.arange(3)] += 2 * mu
    C[3, 3] = C[4, 4] = C[5, 5] = mu
    return C


def _shape_gradients(xi, eta, zeta, edge):
    """dN/dx (3, 8) for a cube element of the given edge length."""
    dN = np.empty((3, 8))
    for a in range(8):
        xa, ya, za = HEX_CORNERS[a]
        dN[0, a] = xa * (1 + eta * ya) * (1 + zeta * za) / 8.0
        dN[1, a] = (1 + xi * xa) * ya * (1 + zeta * za) / 8.0
        dN[2, a] = (1 + xi * xa) * (1 + eta * ya) * za / 8.0
    return dN * (2.0 / edge)


def _strain_matrix(dN):
    B = np.zeros((6, 24))
    for a in range(8):
        bx, by, bz = dN[:, a]
        c = 3 * a
        B[0, c] = bx
        B[1, c + 1] = by
        B[2, c + 2] = bz
        B[3, c + 1] = bz
        B[3, c + 2] = by
        B[4, c] = bz
        B[4, c + 2] = bx
        B[5, c] = by
        B[5, c + 1] = bx
    return B


def hex8_stiffness(C_e: np.ndarray, edge: float = 1.0):
    """Element stiffness (24x24) and unit-strain load columns (24x6).

    Full 2x2x2 Gauss quadrature; exact for the constant-Jacobian cube.
    """
    g = 1.0 / np.sqrt(3.0)
    detJ = (edge / 2.0) ** 3
    k = np.zeros((24, 24))
    f = np.zeros((24, 6))
    for xi in (-g, g):
        for eta in (-g, g):
            for zeta in (-g, g):
                B = _strain_matrix(_shape_gradients(xi, eta, zeta, edge))
                k += detJ * B.T @ C_e @ B
                f += detJ * B.T @ C_e
    return k, f


def unit_strain_displacements(edge: float = 1.0) -> np.ndarray:
    """Nodal displacements (24x6) imposed by the six unit strains.

    Column i is u = eps_hat^(i) x at the corner coordinates, with
    engineering shears split symmetrically.
    """
    xyz = (HEX_CORNERS + 1.0) * (edge / 2.0)
    chi0 = np.zeros((24, 6))
    for i, (p, q) in enumerate(VOIGT_PAIRS):
        eps = np.zeros((3, 3))
        if p == q:
            eps[p, q] = 1.0
        else:
            eps[p, q] = eps[q, p] = 0.5
        chi0[:, i] = (xyz @ eps.T).ravel()
    return chi0


def periodic_edof(resolution: int) -> np.ndarray:
    """Element DOF table (n^3, 24) on the periodic node set.

    Nodes are numbered x-fastest; element (i, j, k) wraps its +1 corners
    modulo the resolution. Element order matches occupancy.ravel("F").
    """
    n = resolution
    idx = np.arange(n)
    ii, jj, kk = np.meshgrid(idx, idx, idx, indexing="ij")
    nodes = np.empty((n ** 3, 8), dtype=np.int64)
    for a, (di, dj, dk) in enumerate(_CORNER_OFFSETS):
        na = ((ii + di) % n) + ((jj + dj) % n) * n + ((kk + dk) % n) * n * n
        nodes[:, a] = na.ravel(order="F")
    edof = np.repeat(nodes * 3, 3, axis=1)
    edof[:, 1::3] += 1
    edof[:, 2::3] += 2
    return edof


def assemble_stiffness(grid: VoxelGrid, k_e: np.ndarray,
                       chunk: int = 20000) -> tuple[sp.csr_matrix, np.ndarray]:
    """Global periodic stiffness over solid elements and their DOF table."""
    edof = periodic_edof(grid.resolution)[grid.occupancy.ravel(order="F")]
    if edof.shape[0] == 0:
        raise EmptyStructureError("cannot assemble an all-void grid")
    ndof = 3 * grid.resolution ** 3
    K = sp.csr_matrix((ndof, ndof))
    flat_ke = k_e.ravel()
    for start in range(0, edof.shape[0], chunk):
        part = edof[start:start + chunk]
        rows = np.repeat(part, 24, axis=1).ravel()
        cols = np.tile(part, (1, 24)).ravel()
        data = np.tile(flat_ke, part.shape[0])
        K = K + sp.coo_matrix((data, (rows, cols)), shape=(ndof, ndof)).tocsr()
    return K, edof


def assemble_loads(grid: VoxelGrid, C_e: np.ndarray, edge: float) -> np.ndarray:
    """Six unit-strain load vectors (ndof, 6) on periodic DOFs."""
    _, f_e = hex8_stiffness(C_e, edge)
    edof = periodic_edof(grid.resolution)[grid.occupancy.ravel(order="F")]
    if edof.shape[0] == 0:
        raise EmptyStructureError("cannot load an all-void grid")
    F = np.zeros((3 * grid.resolution ** 3, 6))
    np.add.at(F, edof.ravel(), np.tile(f_e, (edof.shape[0], 1)))
    return F


def _pcg_block(K: sp.csr_matrix, B: np.ndarray, tol: float, maxiter: int):
    """Jacobi-PCG for several right-hand sides advanced in lockstep.

    Columns converge independently; a converged column's direction is
    frozen so later updates cannot disturb it. Returns (X, residuals,
    iterations).
    """
    diag = K.diagonal()
    if np.any(diag <= 0):
        raise SolverFailureError("non-positive diagonal in reduced stiffness")
    Minv = 1.0 / diag
    X = np.zeros_like(B)
    R = B.copy()
    bnorm = np.linalg.norm(B, axis=0)
    scale = np.where(bnorm > 0, bnorm, 1.0)
    Z = Minv[:, None] * R
    P = Z.copy()
    rz = np.einsum("ij,ij->j", R, Z)
    it = 0
    res = np.linalg.norm(R, axis=0) / scale
    while np.any(res > tol) and it < maxiter:
        active = res > tol
        KP = K @ P
        pKp = np.einsum("ij,ij->j", P, KP)
        alpha = np.zeros_like(rz)
        ok = active & (pKp > 0)
        alpha[ok] = rz[ok] / pKp[ok]
        X += alpha * P
        R -= alpha * KP
        Z = Minv[:, None] * R
        rz_new = np.einsum("ij,ij->j", R, Z)
        beta = np.zeros_like(rz)
        beta[ok] = rz_new[ok] / rz[ok]
        rz = rz_new
        P = Z + beta * P
        res = np.linalg.norm(R, axis=0) / scale
        it += 1
    if np.any(res > tol):
        raise SolverFailureError(
            f"PCG stalled at relative residual {res.max():.3e} after {it} iterations",
            residual=float(res.max()), iterations=it)
    return X, res, it


class PeriodicCellSystem:
    """Assembled periodic system for one voxel grid and base material.

    Holds the solid-element DOF table, the reduced stiffness with one
    node pinned (the lowest-indexed solid node, removing the rigid
    translations of the fluctuation problem), and solves load cases.
    """

    def __init__(self, grid: VoxelGrid, C_e: np.ndarray, edge: float | None = None):
        self.grid = grid
        self.edge = 1.0 / grid.resolution if edge is None else edge
        self.C_e = C_e
        self.k_e, self.f_e = hex8_stiffness(C_e, self.edge)
        self.chi0 = unit_strain_displacements(self.edge)
        K, self.edof = assemble_stiffness(grid, self.k_e)
        self.ndof = K.shape[0]
        active = np.unique(self.edof.ravel())
        self.free = active[3:]  # first active node's three DOFs pinned
        self.K_ff = K[self.free][:, self.free].tocsr()
        self.maxiter = int(10 * np.sqrt(self.ndof) * 100)

    def loads(self) -> np.ndarray:
        F = np.zeros((self.ndof, 6))
        np.add.at(F, self.edof.ravel(), np.tile(self.f_e, (self.edof.shape[0], 1)))
        return F

    def solve(self, F: np.ndarray, tol: float = PCG_TOL) -> np.ndarray:
        """Fluctuation displacements for load columns F (ndof, m)."""
        single = F.ndim == 1
        B = F[:, None] if single else F
        Xf, _, _ = _pcg_block(self.K_ff, B[self.free], tol, self.maxiter)
        X = np.zeros_like(B)
        X[self.free] = Xf
        return X[:, 0] if single else X


def solve_case(grid: VoxelGrid, C_e: np.ndarray, f: np.ndarray,
               edge: float | None = None, tol: float = PCG_TOL) -> np.ndarray:
    """One periodic load case; assembles, pins, and solves by PCG."""
    return PeriodicCellSystem(grid, C_e, edge).solve(f, tol=tol)


def homogenized_constitutive(grid: VoxelGrid, k_e: np.ndarray, chi: np.ndarray,
                             edge: float, edof: np.ndarray | None = None) -> np.ndarray:
    """Energy-average the six solved cases into the 6x6 homogenized matrix."""
    if edof is None:
        edof = periodic_edof(grid.resolution)[grid.occupancy.ravel(order="F")]
    if not grid.occupancy.any():
        return np.zeros((6, 6))
    chi0 = unit_strain_displacements(edge)
    D = chi0[None, :, :] - chi[edof]          # (nel, 24, 6)
    KD = np.einsum("ab,ebj->eaj", k_e, D)
    volume = (grid.resolution * edge) ** 3
    C = np.einsum("eai,eaj->ij", D, KD) / volume
    return 0.5 * (C + C.T)


def effective_properties(C_H: np.ndarray) -> tuple[float, float]:
    """Axial Young's modulus and Poisson's ratio of a cubic-symmetric cell.

    E_H averages 1/S_11, 1/S_22, 1/S_33 of the compliance matrix and
    nu_H averages -S_ij * E_H over the six axial off-diagonal entries.
    """
    C_H = np.asarray(C_H, dtype=float)
    try:
        cond = np.linalg.cond(C_H)
    except np.linalg.LinAlgError:
        cond = np.inf
    if not np.isfinite(cond) or cond > 1e12:
        raise DegenerateCellError("homogenized matrix is singular")
    S = np.linalg.inv(C_H)
    E_H = float(np.mean([1.0 / S[0, 0], 1.0 / S[1, 1], 1.0 / S[2, 2]]))
    off = [S[0, 1], S[0, 2], S[1, 0], S[1, 2], S[2, 0], S[2, 1]]
    nu_H = float(-np.mean(off) * E_H)
    return E_H, nu_H


def homogenize_grid(grid: VoxelGrid, E: float = BASE_E, nu: float = BASE_NU,
                    tol: float = PCG_TOL, check_validity: bool = True) -> EffectiveProps:
    """Full pipeline for an existing voxel grid."""
    if check_validity:
        result = validity_check(grid)
        if not result:
            raise DegenerateCellError(f"invalid cell: {result.reason}")
    lam, mu = lame_parameters(E, nu)
    C_e = isotropic_constitutive(lam, mu)
    system = PeriodicCellSystem(grid, C_e)
    chi = system.solve(system.loads(), tol=tol)
    C_H = homogenized_constitutive(grid, system.k_e, chi, system.edge, system.edof)
    E_H, nu_H = effective_properties(C_H)
    return EffectiveProps(C_H, E_H, nu_H)


def homogenize(params: ShapeParams, resolution: int = 40, E: float = BASE_E,
               nu: float = BASE_NU, tol: float = PCG_TOL) -> EffectiveProps:
    """Voxelize a shape-parameter vector and homogenize it."""
    grid = voxelize(params, resolution)
    return homogenize_grid(grid, E=E, nu=nu, tol=tol)


class UnitCellHomogenizer(BaseEstimator, TransformerMixin):
    """Batch shape-parameters -> (E_H, nu_H, vf) transformer.

    Stateless apart from configuration; fit only validates input so the
    transformer composes with sklearn pipelines and cloning.
    """

    def __init__(self, resolution: int = 40, E: float = BASE_E, nu: float = BASE_NU,
                 tol: float = PCG_TOL):
        self.resolution = resolution
        self.E = E
        self.nu = nu
        self.tol = tol

    def fit(self, X, y=None):
        self._validate(X)
        return self

    def transform(self, X) -> np.ndarray:
        X = self._validate(X)
        out = np.empty((X.shape[0], 3))
        for i, row in enumerate(X):
            p = ShapeParams.from_array(row)
            grid = voxelize(p, self.resolution)
            props = homogenize_grid(grid, E=self.E, nu=self.nu, tol=self.tol)
            out[i] = (props.E_H, props.nu_H, grid.volume_fraction)
        return out

    @staticmethod
    def _validate(X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != 6:
            raise ValidationError(f"expected (n, 6) shape parameters, got {X.shape}")
        return X
