"""Dynamic portfolio selection with smoothing."""
from .market import (
    MarketError,
    MarketModel,
    SmoothingSpec,
    excess_returns,
    smoothing_quadratic,
    smoothing_value,
    wealth_maps,
    wealth_paths,
    wealth_trajectory,
)
from .mv import (
    AuxiliaryAdapter,
    AuxiliaryQp,
    LambdaSearchResult,
    MvPolicy,
    MvsSpec,
    aux_augmented_optimum,
    build_auxiliary,
    lambda_bounds,
    lambda_search,
    mv_analytical_policy,
    mv_K,
    smoothing_weights,
    tilde_u_value,
)
from .stats import bankruptcy_rate, wealth_statistics
from .utility import (
    UtilityAdapter,
    UtilitySpec,
    beta_residual,
    reverse_beta,
    utility_scenario_objective,
)

__all__ = [name for name in dir() if not name.startswith("_")]
