"""Inverse design toolkit for functionally graded TPMS cellular structures.

Pipeline: generate merged TPMS unit cells, homogenize their effective
elastic properties, learn the property-to-shape inverse map with a
conditional GAN plus auxiliary regressor, optimize macro (E, nu) fields
by topology optimization, and assemble graded structures with blended
transitions.
"""

from .assembly import (AssembledStructure, CellAssignment, assign_cells,
                       connectivity_report, export_structure, structure_density,
                       synthesize)
from .dataset import (DatasetRecord, convex_hull, generate_dataset,
                      latin_hypercube_t, sample_alphas, split)
from .geometry import (FaceMask, VoxelGrid, blend_cells, eval_basis, eval_merged,
                       extract_face, face_overlap, validity_check, volume_fraction,
                       voxelize)
from .homogenization import (EffectiveProps, UnitCellHomogenizer,
                             effective_properties, hex8_stiffness, homogenize,
                             homogenize_grid, isotropic_constitutive,
                             lame_parameters)
from .hull import PropertyHull
from .model import (CellGan, PropertyScaler, evaluate_model,
                    noise_robustness_report, property_error)
from .params import ShapeParams
from .topopt import (DesignBounds, DesignField, MacroModel, OptimizerConfig,
                     compliance, deformation_objective, filter_field, optimize,
                     project_feasible, q4_plane_stress_stiffness, sensitivities,
                     solve_macro)

__version__ = "0.1.0"

__all__ = [
    "AssembledStructure", "CellAssignment", "CellGan", "DatasetRecord",
    "DesignBounds", "DesignField", "EffectiveProps", "FaceMask", "MacroModel",
    "OptimizerConfig", "PropertyHull", "PropertyScaler", "ShapeParams",
    "UnitCellHomogenizer", "VoxelGrid", "assign_cells", "blend_cells",
    "compliance", "connectivity_report", "convex_hull", "deformation_objective",
    "effective_properties", "eval_basis", "eval_merged", "evaluate_model",
    "export_structure", "extract_face", "face_overlap", "filter_field",
    "generate_dataset", "hex8_stiffness", "homogenize", "homogenize_grid",
    "isotropic_constitutive", "lame_parameters", "latin_hypercube_t",
    "noise_robustness_report", "optimize", "project_feasible", "property_error",
    "q4_plane_stress_stiffness", "sample_alphas", "sensitivities", "solve_macro",
    "split", "structure_density", "synthesize", "validity_check",
    "volume_fraction", "voxelize",
]
