"""Capacity bounds for EV charging facilities under service-level and deadline pricing."""

from .bounds import (
    BoundCurve,
    QueueParameters,
    active_occupancy_bound,
    bound_curve,
    occupancy_bound,
    poisson_tail_bound,
    power_bound,
)
from .config import ScenarioConfig, load_config
from .distributions import (
    BoundedDistribution,
    UserPopulation,
    expect,
    make_custom,
    make_point,
    make_uniform,
    ratio_distribution,
    sample,
    with_atom_at_zero,
)
from .dsl import (
    DslFacility,
    DslModel,
    RatePmf,
    conditional_choice_probabilities,
    dsl_cost,
    dsl_moments,
    rate_pmf,
    rate_pmf_free_parking,
    select_level,
)
from .errors import ModelError, NumericalError
from .pd import (
    ConvexPricing,
    PdModel,
    QuadraticPricing,
    min_surge_price,
    optimal_deadline,
    pd_moments,
    safe_surge_price,
    validate_rate_cap,
)
from .simulator import EnsembleStats, empirical_exceedance, run_ensemble, simulate

__version__ = "0.1.0"
