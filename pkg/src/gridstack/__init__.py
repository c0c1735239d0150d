"""Equilibria of storage users under real-time pricing, and the leader's price search."""

__version__ = "0.1.0"

from ._validation import InvalidGameError, StateSpaceTooLarge, Violation  # noqa: E402
from .analysis import (  # noqa: E402
    DominanceReport,
    check_storage_dominance,
    nashconv,
    verify_potential_property,
)
from .config import example_game, game_from_dict, game_to_dict, load_game  # noqa: E402
from .ingest import ForecastChainEstimator, GenerationRecord, estimate_forecast_and_chain  # noqa: E402
from .learning import AggregateEstimate, FictitiousPlayLearner, Trajectory, fp_mdp_solve, simulate_episode  # noqa: E402
from .mdp import FiniteMDP, MDPSolution, backward_induction, build_br_mdp, full_info_best_response  # noqa: E402
from .model import (  # noqa: E402
    ForecastChain,
    GameG1,
    GameG2,
    LeaderParams,
    PricingParams,
    UserSpec,
    build_reduced_game,
    chain_marginals,
    validate_game,
)
from .mpg import (  # noqa: E402
    EquilibriumResult,
    FIPSolver,
    NotConverged,
    accelerated_best_response,
    best_response_policy,
    fip_solve,
    improvement_delta,
    lift_to_pme,
)
from .payoff import leader_payoff, price, stage_potential, stage_reward_g, stage_reward_r, value_g2  # noqa: E402
from .policies import PMSProfile, PurePublicPolicy  # noqa: E402
from .pricing import PricingGrid, PricingGridSearch, PricingResult, grid_search_pricing  # noqa: E402
