"""Numerical companion for the spatially periodic quantum Boltzmann equation
with soft potentials: equilibria, collision quadrature, linearized operators,
an iterative mild-form solver and checks of the a priori estimates."""

from .core import (
    BoundViolation,
    ConfigError,
    DistributionField,
    EvenNodeCount,
    ModelParams,
    SpatialGrid,
    SphereQuadrature,
    VelocityGrid,
    build_grids,
    linf_x_l1_v_norm,
    load_config,
    weight_w_beta,
    weighted_sup_norm,
)
from .equilibrium import EquilibriumTables, build_tables, eval_mu, eval_mu_bar_sqrt, rho_constants

__version__ = "0.1.0"
