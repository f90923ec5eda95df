"""Statistical provability lab: goal-measure MDPs, exact Bellman tables,
certificates, score-guided planners and bound-verification experiments."""
from .certificates import (CertificateResult, CertificateSequence, bellman_apply, certify_sandwich,
                           exact_certificates, score_certificate, trivial_certificates, validate_certificate)
from .environments import EnvSpec, InstanceDistribution, generate, random_mdp
from .goal_measure import GoalMeasure, bl_distance, is_solved, mass
from .mdp import MdpModel, PolicyTable, ValueTables, evaluate_policy, load_model, dump_model, simulate, solve_exact
from .metric_space import EpsNet, MetricSpace, build_greedy_net, covering_number, fit_doubling_dimension
from .planners import (ScoreFunction, beam_search, greedy_policy, margin_stats, measure_regret, occupancy,
                       perturbed_scores, regret, topk_policy)
from .truncation import overflow_probability, truncate, verify_truncation_bound

__version__ = "0.1.0"
