"""Macro topology optimization over per-element (E, nu) fields.

The macro domain is a plane-stress grid of bilinear quads, one element
per unit cell. Design variables are each element's Young's modulus and
Poisson's ratio; feasibility couples them through the property hull of
the training data, box bounds, and a budget on the modulus sum. The
update is projected gradient descent with cone filtering, a bisected
Lagrange shift that enforces the modulus budget, and step halving as a
monotonicity safeguard.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage

from .errors import (IllPosedModelError, InfeasibleConfigurationError,
                     MicrocellError, ValidationError)
from .hull import PropertyHull, clip_polygon, project_points_to_polygon

# plane-stress constitutive split: C(E, nu) = E/(1-nu^2) (M0 + nu M1)
_M0 = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.5]])
_M1 = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, -0.5]])

_Q4_CORNERS = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)


def _q4_bases(thickness: float):
    """Quadrature-integrated B^T M B blocks; size cancels in plane stress."""
    g = 1.0 / np.sqrt(3.0)
    KA = np.zeros((8, 8))
    KB = np.zeros((8, 8))
    for xi in (-g, g):
        for eta in (-g, g):
            B = np.zeros((3, 8))
            for a in range(4):
                xa, ya = _Q4_CORNERS[a]
                dNx = xa * (1 + eta * ya) / 4.0
                dNy = (1 + xi * xa) * ya / 4.0
                B[0, 2 * a] = dNx
                B[1, 2 * a + 1] = dNy
                B[2, 2 * a] = dNy
                B[2, 2 * a + 1] = dNx
            KA += B.T @ _M0 @ B
            KB += B.T @ _M1 @ B
    return thickness * KA, thickness * KB


def q4_plane_stress_stiffness(E: float, nu: float, size: float = 1.0,
                              thickness: float = 1.0) -> np.ndarray:
    """8x8 bilinear quad stiffness, 2x2 Gauss, plane stress."""
    if E <= 0 or not (-1.0 < nu < 0.5):
        raise ValidationError(f"invalid plane-stress material (E={E}, nu={nu})")
    KA, KB = _q4_bases(thickness)
    return E / (1 - nu ** 2) * (KA + nu * KB)


def q4_stiffness_dnu(E: float, nu: float, thickness: float = 1.0) -> np.ndarray:
    """Analytic derivative of the quad stiffness w.r.t. Poisson's ratio."""
    KA, KB = _q4_bases(thickness)
    c = 1 - nu ** 2
    return E * (2 * nu / c ** 2 * (KA + nu * KB) + KB / c)


@dataclass
class DesignBounds:
    E_min: float = 20.0
    E_max: float = 128.11
    nu_min: float = 0.23
    nu_max: float = 0.33

    def __post_init__(self):
        if not (0 < self.E_min < self.E_max and -1 < self.nu_min < self.nu_max < 0.5):
            raise ValidationError(f"inconsistent design bounds {self}")


@dataclass
class OptimizerConfig:
    E_avg: float = 55.0
    max_iterations: int = 150
    move_limit: float = 0.05          # per-iteration cap in normalized coords
    filter_radius: float = 1.5        # elements; 0 disables filtering
    tolerance: float = 1e-6           # relative objective change
    min_step: float = 1e-7


@dataclass
class DesignField:
    """Per-element modulus and Poisson maps, shape (nx, ny)."""

    E: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        self.E = np.asarray(self.E, dtype=float)
        self.nu = np.asarray(self.nu, dtype=float)
        if self.E.shape != self.nu.shape or self.E.ndim != 2:
            raise ValidationError("E and nu maps must share a 2-D shape")

    def copy(self):
        return DesignField(self.E.copy(), self.nu.copy())


class MacroModel:
    """Plane-stress grid with supports, loads, and prescribed displacements."""

    def __init__(self, nx: int, ny: int, element_size: float = 1.0,
                 thickness: float = 1.0):
        if nx < 1 or ny < 1:
            raise ValidationError("grid must be at least 1x1")
        self.nx = nx
        self.ny = ny
        self.element_size = element_size
        self.thickness = thickness
        self.ndof = 2 * (nx + 1) * (ny + 1)
        self.loads = np.zeros(self.ndof)
        self.fixed_dofs: list[int] = []
        self.prescribed_dofs: list[int] = []
        self.prescribed_values: list[float] = []
        self.KA, self.KB = _q4_bases(thickness)
        self.edof = self._edof_table()

    def node(self, i: int, j: int) -> int:
        if not (0 <= i <= self.nx and 0 <= j <= self.ny):
            raise ValidationError(f"node ({i}, {j}) outside mesh")
        return i * (self.ny + 1) + j

    def dof(self, i: int, j: int, comp: int) -> int:
        return 2 * self.node(i, j) + comp

    def _edof_table(self) -> np.ndarray:
        edof = np.empty((self.nx * self.ny, 8), dtype=np.int64)
        e = 0
        for i in range(self.nx):
            for j in range(self.ny):
                n = [self.node(i, j), self.node(i + 1, j),
                     self.node(i + 1, j + 1), self.node(i, j + 1)]
                edof[e] = [2 * n[0], 2 * n[0] + 1, 2 * n[1], 2 * n[1] + 1,
                           2 * n[2], 2 * n[2] + 1, 2 * n[3], 2 * n[3] + 1]
                e += 1
        return edof

    def edge_nodes(self, edge: str):
        if edge == "left":
            return [(0, j) for j in range(self.ny + 1)]
        if edge == "right":
            return [(self.nx, j) for j in range(self.ny + 1)]
        if edge == "bottom":
            return [(i, 0) for i in range(self.nx + 1)]
        if edge == "top":
            return [(i, self.ny) for i in range(self.nx + 1)]
        raise ValidationError(f"unknown edge {edge!r}")

    def fix(self, i: int, j: int, dofs: str = "xy") -> None:
        for comp, name in enumerate("xy"):
            if name in dofs:
                self.fixed_dofs.append(self.dof(i, j, comp))

    def prescribe(self, i: int, j: int, ux: float | None = None,
                  uy: float | None = None) -> None:
        if ux is not None:
            self.prescribed_dofs.append(self.dof(i, j, 0))
            self.prescribed_values.append(float(ux))
        if uy is not None:
            self.prescribed_dofs.append(self.dof(i, j, 1))
            self.prescribed_values.append(float(uy))

    def add_load(self, i: int, j: int, fx: float = 0.0, fy: float = 0.0) -> None:
        self.loads[self.dof(i, j, 0)] += fx
        self.loads[self.dof(i, j, 1)] += fy

    def constrained(self):
        """(dofs, values) of all constrained DOFs; fixed means zero."""
        dofs = np.array(self.fixed_dofs + self.prescribed_dofs, dtype=np.int64)
        vals = np.concatenate([np.zeros(len(self.fixed_dofs)),
                               np.array(self.prescribed_values)])
        if len(dofs) == 0:
            raise ValidationError("model needs at least one constrained DOF")
        uniq, first = np.unique(dofs, return_index=True)
        return uniq, vals[first]

    # -- FE ------------------------------------------------------------

    def element_stiffnesses(self, design: DesignField) -> np.ndarray:
        E = design.E.reshape(-1)   # element order matches edof (i outer, j inner)
        nu = design.nu.reshape(-1)
        factor = E / (1 - nu ** 2)
        return (factor[:, None, None]
                * (self.KA[None] + nu[:, None, None] * self.KB[None]))

    def assemble(self, design: DesignField) -> sp.csr_matrix:
        ke = self.element_stiffnesses(design)
        rows = np.repeat(self.edof, 8, axis=1).ravel()
        cols = np.tile(self.edof, (1, 8)).ravel()
        return sp.coo_matrix((ke.ravel(), (rows, cols)),
                             shape=(self.ndof, self.ndof)).tocsr()


def solve_macro(model: MacroModel, design: DesignField,
                K: sp.csr_matrix | None = None) -> np.ndarray:
    """Static equilibrium with supports and prescribed displacements."""
    if design.E.shape != (model.nx, model.ny):
        raise ValidationError(
            f"design field shape {design.E.shape} != grid ({model.nx}, {model.ny})")
    if np.any(design.E <= 0):
        raise ValidationError("element moduli must be positive")
    if K is None:
        K = model.assemble(design)
    cdofs, cvals = model.constrained()
    free = np.setdiff1d(np.arange(model.ndof), cdofs)
    u = np.zeros(model.ndof)
    u[cdofs] = cvals
    rhs = model.loads[free] - K[free][:, cdofs] @ cvals
    try:
        u_f = spla.spsolve(K[free][:, free].tocsc(), rhs)
    except RuntimeError as exc:
        raise IllPosedModelError(f"macro solve failed: {exc}") from exc
    if not np.all(np.isfinite(u_f)):
        raise IllPosedModelError("macro stiffness is singular")
    u[free] = u_f
    return u


def compliance(model: MacroModel, design: DesignField, u: np.ndarray) -> float:
    """External work u^T K u (N*mm)."""
    ke = model.element_stiffnesses(design)
    ue = u[model.edof]
    return float(np.einsum("ei,eij,ej->", ue, ke, ue))


def deformation_objective(u: np.ndarray, u_hat: np.ndarray,
                          query_dofs: np.ndarray) -> float:
    """Sum of squared deviations over the selected DOFs."""
    d = u[query_dofs] - u_hat
    return float(d @ d)


def _adjoint_solve(model, K, rhs):
    cdofs, _ = model.constrained()
    free = np.setdiff1d(np.arange(model.ndof), cdofs)
    lam = np.zeros(model.ndof)
    lam[free] = spla.spsolve(K[free][:, free].tocsc(), rhs[free])
    return lam


def sensitivities(model: MacroModel, design: DesignField, u: np.ndarray,
                  objective: str, u_hat: np.ndarray | None = None,
                  query_dofs: np.ndarray | None = None,
                  K: sp.csr_matrix | None = None):
    """(dObj/dE, dObj/dnu) per element, adjoint-exact for both objectives."""
    if K is None:
        K = model.assemble(design)
    E = design.E.reshape(-1)
    nu = design.nu.reshape(-1)
    factor = E / (1 - nu ** 2)
    ke = (factor[:, None, None] * (model.KA[None] + nu[:, None, None] * model.KB[None]))
    c = 1 - nu ** 2
    dke_dnu = (E[:, None, None]
               * ((2 * nu / c ** 2)[:, None, None]
                  * (model.KA[None] + nu[:, None, None] * model.KB[None])
                  + model.KB[None] / c[:, None, None]))
    ue = u[model.edof]

    if objective == "compliance":
        if model.prescribed_dofs:
            mu = _adjoint_solve(model, K, K @ u)
        else:
            mu = u  # self-adjoint: K_ff mu = f_f has the solution u itself
        mue = mu[model.edof]
        dE = (np.einsum("ei,eij,ej->e", ue, ke, ue) / E
              - 2 * np.einsum("ei,eij,ej->e", mue, ke, ue) / E)
        dnu = (np.einsum("ei,eij,ej->e", ue, dke_dnu, ue)
               - 2 * np.einsum("ei,eij,ej->e", mue, dke_dnu, ue))
    elif objective == "deformation":
        if u_hat is None or query_dofs is None:
            raise ValidationError("deformation sensitivities need u_hat and query_dofs")
        rhs = np.zeros(model.ndof)
        rhs[query_dofs] = 2.0 * (u[query_dofs] - u_hat)
        lam = _adjoint_solve(model, K, rhs)
        lame = lam[model.edof]
        dE = -np.einsum("ei,eij,ej->e", lame, ke, ue) / E
        dnu = -np.einsum("ei,eij,ej->e", lame, dke_dnu, ue)
    else:
        raise ValidationError(f"unknown objective {objective!r}")
    shape = (model.nx, model.ny)
    return dE.reshape(shape), dnu.reshape(shape)


def filter_field(values: np.ndarray, radius: float) -> np.ndarray:
    """Cone-weighted neighborhood average; radius 0 is the identity."""
    if radius < 0:
        raise ValidationError("filter radius must be >= 0")
    if radius == 0:
        return np.asarray(values, dtype=float).copy()
    span = max(int(np.ceil(radius)) - 1, 0)  # farther cells carry zero cone weight
    offs = np.arange(-span, span + 1)
    dx, dy = np.meshgrid(offs, offs, indexing="ij")
    kernel = np.maximum(0.0, radius - np.sqrt(dx ** 2 + dy ** 2))
    vals = np.asarray(values, dtype=float)
    num = ndimage.convolve(vals, kernel, mode="constant", cval=0.0)
    den = ndimage.convolve(np.ones_like(vals), kernel, mode="constant", cval=0.0)
    return num / den


class FeasibleRegion:
    """Hull-and-box intersection with projection in normalized coordinates."""

    def __init__(self, hull: PropertyHull, bounds: DesignBounds):
        self.bounds = bounds
        self.scale = np.array([bounds.E_max - bounds.E_min,
                               bounds.nu_max - bounds.nu_min])
        box = np.array([
            [1.0, 0.0, -bounds.E_max],
            [-1.0, 0.0, bounds.E_min],
            [0.0, 1.0, -bounds.nu_max],
            [0.0, -1.0, bounds.nu_min],
        ])
        poly = clip_polygon(hull.vertices, box)
        if len(poly) < 3:
            raise InfeasibleConfigurationError(
                "property hull and box bounds do not intersect")
        self.polygon = poly
        self.polygon_n = poly / self.scale

    def project(self, E: np.ndarray, nu: np.ndarray):
        pts = np.stack([np.asarray(E, dtype=float).ravel() / self.scale[0],
                        np.asarray(nu, dtype=float).ravel() / self.scale[1]], axis=1)
        proj = project_points_to_polygon(pts, self.polygon_n)
        shape = np.asarray(E).shape
        return (proj[:, 0] * self.scale[0]).reshape(shape), \
               (proj[:, 1] * self.scale[1]).reshape(shape)


def project_feasible(E, nu, hull: PropertyHull, bounds: DesignBounds):
    """Project (E, nu) points onto the feasible hull-box intersection."""
    return FeasibleRegion(hull, bounds).project(E, nu)


def _enforce_budget(region: FeasibleRegion, E: np.ndarray, nu: np.ndarray,
                    budget: float, rel_tol: float = 1e-6):
    """Shift E down uniformly (then re-project) until sum(E) <= budget."""
    E0, nu0 = region.project(E, nu)
    if E0.sum() <= budget * (1 + rel_tol):
        return E0, nu0
    lo, hi = 0.0, region.bounds.E_max - region.bounds.E_min
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        Em, num = region.project(E - mid, nu)
        s = Em.sum()
        if abs(s - budget) <= rel_tol * budget:
            return Em, num
        if s > budget:
            lo = mid
        else:
            hi = mid
    return region.project(E - hi, nu)


@dataclass
class OptimizeResult:
    design: DesignField
    history: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0


def optimize(model: MacroModel, hull: PropertyHull,
             bounds: DesignBounds | None = None,
             config: OptimizerConfig | None = None,
             objective: str = "compliance",
             u_hat: np.ndarray | None = None,
             query_dofs: np.ndarray | None = None,
             initial_nu: float = 0.28) -> OptimizeResult:
    """Projected-gradient optimization of the (E, nu) maps.

    Every accepted iterate is feasible (box, hull, modulus budget) and
    the objective history is non-increasing; steps that fail to descend
    are halved until they do or the step collapses, which is treated as
    convergence.
    """
    bounds = bounds or DesignBounds()
    config = config or OptimizerConfig()
    if not (bounds.E_min <= config.E_avg <= bounds.E_max):
        raise InfeasibleConfigurationError(
            f"E_avg {config.E_avg} outside [{bounds.E_min}, {bounds.E_max}]")
    region = FeasibleRegion(hull, bounds)
    nel = model.nx * model.ny
    budget = config.E_avg * nel

    shape = (model.nx, model.ny)
    E, nu = region.project(np.full(shape, config.E_avg), np.full(shape, initial_nu))
    E, nu = _enforce_budget(region, E, nu, budget)
    design = DesignField(E, nu)

    def evaluate(dsn: DesignField):
        K = model.assemble(dsn)
        u = solve_macro(model, dsn, K=K)
        if objective == "compliance":
            return compliance(model, dsn, u), u, K
        return deformation_objective(u, u_hat, query_dofs), u, K

    obj, u, K = evaluate(design)
    history = [{"iteration": 0, "objective": obj, "sum_E": float(design.E.sum()),
                "step": 0.0}]
    if not np.isfinite(obj):
        raise MicrocellError("initial objective is not finite")

    step = config.move_limit
    converged = False
    it = 0
    for it in range(1, config.max_iterations + 1):
        dE, dnu = sensitivities(model, design, u, objective,
                                u_hat=u_hat, query_dofs=query_dofs, K=K)
        # cone-filtered sensitivities (mesh-independence), then steepest
        # descent in normalized design coordinates, each map scaled to a
        # unit max step so both variables keep moving
        if config.filter_radius > 0:
            dE = filter_field(dE, config.filter_radius)
            dnu = filter_field(dnu, config.filter_radius)
        gE = dE * region.scale[0]
        gnu = dnu * region.scale[1]
        if max(np.abs(gE).max(), np.abs(gnu).max()) == 0:
            converged = True
            break
        if np.abs(gE).max() > 0:
            gE = gE / np.abs(gE).max()
        if np.abs(gnu).max() > 0:
            gnu = gnu / np.abs(gnu).max()

        accepted = False
        while step >= config.min_step:
            E_t = design.E - step * gE * region.scale[0]
            nu_t = design.nu - step * gnu * region.scale[1]
            E_t, nu_t = _enforce_budget(region, E_t, nu_t, budget)
            trial = DesignField(E_t, nu_t)
            obj_t, u_t, K_t = evaluate(trial)
            if not np.isfinite(obj_t):
                raise MicrocellError(f"objective diverged at iteration {it}")
            if obj_t <= obj:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            converged = True
            break

        rel_change = abs(obj - obj_t) / max(abs(obj), 1e-30)
        design, obj, u, K = trial, obj_t, u_t, K_t
        history.append({"iteration": it, "objective": obj,
                        "sum_E": float(design.E.sum()), "step": step})
        step = min(step * 2.0, config.move_limit)
        if rel_change < config.tolerance:
            converged = True
            break

    return OptimizeResult(design, history, converged, it)


# ---------------------------------------------------------------------------
# problem files
# ---------------------------------------------------------------------------

def load_problem(source) -> dict:
    """Parse a problem.json dict into model, bounds, config, and objective."""
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source) as fh:
            payload = json.load(fh)
    else:
        payload = dict(source)
    try:
        model = MacroModel(int(payload["nx"]), int(payload["ny"]),
                           float(payload.get("element_size", 1.0)),
                           float(payload.get("thickness", 1.0)))
    except KeyError as exc:
        raise ValidationError(f"problem file missing key {exc}") from exc

    for entry in payload.get("fixed", []):
        dofs = entry.get("dofs", "xy")
        if "edge" in entry:
            for (i, j) in model.edge_nodes(entry["edge"]):
                model.fix(i, j, dofs)
        else:
            i, j = entry["node"]
            model.fix(int(i), int(j), dofs)
    for entry in payload.get("loads", []):
        i, j = entry["node"]
        fx, fy = entry["f"]
        model.add_load(int(i), int(j), float(fx), float(fy))
    for entry in payload.get("prescribed", []):
        nodes = (model.edge_nodes(entry["edge"]) if "edge" in entry
                 else [tuple(entry["node"])])
        for (i, j) in nodes:
            model.prescribe(int(i), int(j), entry.get("ux"), entry.get("uy"))

    bounds = DesignBounds(**payload.get("bounds", {}))
    opt = {k: v for k, v in payload.get("optimizer", {}).items() if k != "E_avg"}
    config = OptimizerConfig(E_avg=float(payload.get("E_avg", 55.0)), **opt)

    objective = payload.get("objective", "compliance")
    u_hat = None
    query_dofs = None
    if objective == "deformation":
        curve = payload.get("target_curve")
        if not curve:
            raise ValidationError("deformation problems need a target_curve")
        edge = payload.get("query_edge", "bottom")
        j = 0 if edge == "bottom" else model.ny
        dofs, vals = [], []
        for x, uy in curve:
            i = x / model.element_size
            if abs(i - round(i)) > 1e-9 or not (0 <= round(i) <= model.nx):
                raise ValidationError(f"query x={x} does not hit a mesh node")
            dofs.append(model.dof(int(round(i)), j, 1))
            vals.append(float(uy))
        query_dofs = np.asarray(dofs, dtype=np.int64)
        u_hat = np.asarray(vals)
    elif objective != "compliance":
        raise ValidationError(f"unknown objective {objective!r}")

    return {"model": model, "bounds": bounds, "config": config,
            "objective": objective, "u_hat": u_hat, "query_dofs": query_dofs,
            "initial_nu": float(payload.get("initial_nu", 0.28)), "raw": payload}
