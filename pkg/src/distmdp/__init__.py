"""Distributed control of factored Markov decision processes.

Nodes each observe one component of the state and send compressed messages
so that every node can compute the common control action.
"""

from ._backend import backend_name
from .coding import (
    CharacteristicGraph,
    EncoderVec,
    ProductDistribution,
    argmax_mdp,
    build_characteristic_graph,
    decodable,
    huffman_code,
    mis_partition,
    noninteractive_min_rate,
    noninteractive_rate,
)
from .errors import (
    BudgetExceededError,
    DistMdpError,
    InfeasiblePairError,
    ModelValidationError,
    NumericError,
    StructuralError,
)
from .interactive import interactive_rate_bound, optimal_scalar_protocol
from .joint import (
    AugmentedModel,
    JointSolution,
    alternate_optimize,
    augmented_expected_reward,
    exhaustive_joint_search,
    nash_check,
    tradeoff_sweep,
)
from .mdp import (
    CandidateSet,
    FactoredMdp,
    LocalStateSpace,
    candidate_control_set,
    discounted_occupancy,
    policy_iteration,
    policy_value,
    value_iteration,
)
from .modelspec import ModelSpec, load_spec, parse_spec
from .sim import RolloutStats, estimate, rollout
from .wireless import WirelessConfig, build_mdp, recurrent_class

__version__ = "0.1.0"
