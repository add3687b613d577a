"""Volume-filling multiphase cross-diffusion: simulation and certification."""

from .model import (
    ConstantDrag,
    ConstantPressure,
    DegenerateDrag,
    ModelError,
    ModelSpec,
    PerturbedDrag,
    PressureLaw,
    SimplexPoint,
    SKTPressure,
    TumorPressure,
    UnitDrag,
    preset,
    pressure_q,
    pressure_r,
    tumor_entropy_threshold,
)
from .grid import Mesh1D, StateField
from .matrices import (
    AssembledMatrices,
    assemble_all,
    boltzmann_hessian,
    diffusion_matrix,
    drag_matrix,
    drag_perturbation_matrix,
    entropy_weighted_diffusion,
    invert_drag_matrix,
)
from .solver import (
    NewtonError,
    SolverConfig,
    initial_profile,
    newton_solve,
    recover_fluxes,
    run,
    simplex_project,
)
from .diagnostics import (
    boltzmann_dissipation,
    boltzmann_entropy,
    convergence_study,
    decay_fit,
    l1_error,
    rao_entropy,
    relative_boltzmann,
    relative_rao,
    steady_state,
)
from .analysis import (
    drag_case_certificate,
    entropy_coercivity_constant,
    min_symmetric_eigenvalue,
    perturbation_threshold,
    positively_stable,
    quadratic_form_decomposition,
    scan_simplex,
    tumor_trace_det,
)

__version__ = "0.1.0"
