# 內建模型
from app.models.sleigh import (
    SleighParams,
    chaplygin_sleigh,
    sleigh_analytic_extremal,
    sleigh_extremal_costates,
    sleigh_extremal_initial_state,
    sleigh_regularity,
)
from app.models.cvt import CvtParams, cvt, cvt_coefficients, cvt_regularity
from app.models.obstacle import ObstacleParams, collision_check, navigation_potential, sleigh_with_obstacle

__all__ = [
    'SleighParams',
    'chaplygin_sleigh',
    'sleigh_analytic_extremal',
    'sleigh_extremal_costates',
    'sleigh_extremal_initial_state',
    'sleigh_regularity',
    'CvtParams',
    'cvt',
    'cvt_coefficients',
    'cvt_regularity',
    'ObstacleParams',
    'collision_check',
    'navigation_potential',
    'sleigh_with_obstacle',
]
