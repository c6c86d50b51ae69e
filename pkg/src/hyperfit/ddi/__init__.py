"""Finite-strain data-driven identification of stress-strain databases."""
from .core import (
    Database,
    DdiResult,
    ddi_loss,
    init_mapping,
    pointwise_distance,
    reassign_mapping,
    recover_unknown_forces,
    run_ddi,
    update_material_strain,
    update_mechanical_stress,
)
from .io import DatabaseTable, read_database, read_mechanical_states, write_database, write_mechanical_states, \
    write_zeta
from .problem import FORMULATIONS, DdiConfig, DdiError, DdiProblem, setup_problem, voigt_metric
from .solver import SaddleSolution, assemble_dense, coupling_matrices, equilibrium_residual, solve_saddle_system

__all__ = [
    "Database",
    "DdiConfig",
    "DdiError",
    "DdiProblem",
    "DdiResult",
    "DatabaseTable",
    "FORMULATIONS",
    "SaddleSolution",
    "assemble_dense",
    "coupling_matrices",
    "ddi_loss",
    "equilibrium_residual",
    "init_mapping",
    "pointwise_distance",
    "reassign_mapping",
    "recover_unknown_forces",
    "run_ddi",
    "setup_problem",
    "solve_saddle_system",
    "update_material_strain",
    "update_mechanical_stress",
    "voigt_metric",
    "read_database",
    "read_mechanical_states",
    "write_database",
    "write_mechanical_states",
    "write_zeta",
]
