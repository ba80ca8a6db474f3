"""Logistic branching process conditioned on non-extinction: exact
simulation, the dual Wright-Fisher diffusion, conditioned transition
rates, sample genealogies, and the Yaglom limit."""

from .conditioning import (
    RateTable,
    StationaryPMF,
    q_stationary,
    r_star_weak,
    rate_table_Q,
    rate_table_T,
    scaling_check,
    survival_moments,
)
from .dual import (
    DensityGrid,
    DiffusionPath,
    MoranRealization,
    asg_trace,
    conditioned_stationary_density,
    moran_simulate,
    sde_simulate,
    sde_simulate_conditioned,
    speed_scale,
    yaglom_density,
)
from .genealogy import (
    CoalescentState,
    MRCASample,
    ReconstructedTree,
    coalescent_step_rates,
    gamma_scan,
    gamma_statistic,
    mrca_experiment,
    reconstruct_tree,
    simulate_coalescent,
)
from .model import (
    GenealogyLog,
    ModelParams,
    Trajectory,
    extinction_time,
    jump_rates,
    simulate,
    simulate_endpoints,
    simulate_with_genealogy,
)
from .yaglom import YaglomSolution, yaglom_empirical, yaglom_feynman_kac, yaglom_recursion

__version__ = "0.1.0"

__all__ = [
    "CoalescentState",
    "DensityGrid",
    "DiffusionPath",
    "GenealogyLog",
    "MRCASample",
    "ModelParams",
    "MoranRealization",
    "RateTable",
    "ReconstructedTree",
    "StationaryPMF",
    "Trajectory",
    "YaglomSolution",
    "asg_trace",
    "coalescent_step_rates",
    "conditioned_stationary_density",
    "extinction_time",
    "gamma_scan",
    "gamma_statistic",
    "jump_rates",
    "moran_simulate",
    "mrca_experiment",
    "q_stationary",
    "r_star_weak",
    "rate_table_Q",
    "rate_table_T",
    "reconstruct_tree",
    "scaling_check",
    "sde_simulate",
    "sde_simulate_conditioned",
    "simulate",
    "simulate_coalescent",
    "simulate_endpoints",
    "simulate_with_genealogy",
    "speed_scale",
    "survival_moments",
    "yaglom_density",
    "yaglom_empirical",
    "yaglom_feynman_kac",
    "yaglom_recursion",
    "__version__",
]
