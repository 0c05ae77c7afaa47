"""Multi-dimensional recombinator dynamics."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"

from .dynamics import (
    IntegratorOptions,
    Trajectory,
    combinator_field,
    expand_support,
    integrate,
    recombinator_field,
    replicator_field,
    support_closure,
    trait_growth,
)
from .errors import RecombError
from .game import (
    GameSpec,
    PopulationState,
    TraitSpace,
    build_game,
    fitness,
    fitness_vector,
    mean_payoff,
    r_payoff,
    r_payoff_vector,
    supports,
    trait_payoff,
    trait_payoffs,
)
from .general import (
    RegularPair,
    audit_pair,
    classify_general,
    g_family_pair,
    general_field,
    get_pair,
    integrate_general,
    recombinator_pair,
    single_dim_imitation_pair,
)
from .scenario import Scenario, load_scenario
from .stability import (
    Definiteness,
    StabilityReport,
    Verdict,
    basin_sample,
    classify_stability,
    internal_stability,
    invading_trait_payoff,
    pure_state_classify,
    r_jacobian,
    stable_partner_distribution,
)
from .stationarity import certify, refine_stationary, stationarity_residual

__all__ = [name for name in dir() if not name.startswith("_") and name not in {"version", "PackageNotFoundError"}]
