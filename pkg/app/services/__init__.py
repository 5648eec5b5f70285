# 服務模塊
# 依賴順序導入：geometry -> dynamics -> ocp -> solver，避免循環導入

from app.services.geometry import (
    AdaptedState,
    ControlMode,
    MechanicalModel,
    bracket_coefficients,
    check_chart,
    christoffel,
    complementary_projector,
    grad_potential,
    induced_metric,
    kinetic_energy,
    lie_bracket,
    mechanical_energy,
    nonholonomic_bracket,
    orthogonal_projector,
)
from app.services.dynamics import (
    admissibility_residual,
    controlled_rhs,
    free_rhs,
    integrate_free,
    inverse_dynamics,
)
from app.services.ocp import (
    CostModel,
    ExtremalState,
    SecondOrderPoint,
    SigmaPoint,
    hamilton_rhs,
    hamiltonian,
    invert_legendre,
    lagrangian_extremal_residual,
    lagrangian_partials,
    legendre_transform,
    ocp_lagrangian,
    quadratic_cost,
    regularity_check,
    sigma_point_from_extremal,
    sigma_residual,
)
from app.services.solver import (
    BoundaryConditions,
    ShootingConfig,
    Trajectory,
    detour_costates,
    integrate,
    kappa_continuation,
    monodromy_matrix,
    shoot,
    sweep,
    symplectic_defect,
)

__all__ = [
    'AdaptedState',
    'ControlMode',
    'MechanicalModel',
    'bracket_coefficients',
    'check_chart',
    'christoffel',
    'complementary_projector',
    'grad_potential',
    'induced_metric',
    'kinetic_energy',
    'lie_bracket',
    'mechanical_energy',
    'nonholonomic_bracket',
    'orthogonal_projector',
    'admissibility_residual',
    'controlled_rhs',
    'free_rhs',
    'integrate_free',
    'inverse_dynamics',
    'CostModel',
    'ExtremalState',
    'SecondOrderPoint',
    'SigmaPoint',
    'hamilton_rhs',
    'hamiltonian',
    'invert_legendre',
    'lagrangian_extremal_residual',
    'lagrangian_partials',
    'legendre_transform',
    'ocp_lagrangian',
    'quadratic_cost',
    'regularity_check',
    'sigma_point_from_extremal',
    'sigma_residual',
    'BoundaryConditions',
    'ShootingConfig',
    'Trajectory',
    'detour_costates',
    'integrate',
    'kappa_continuation',
    'monodromy_matrix',
    'shoot',
    'sweep',
    'symplectic_defect',
]
