"""Feasible distributed resource allocation with inverse barriers."""

from .model import (AffineConstraint, Allocation, CallbackConstraint,
                    CallbackCost, Graph, NodeLocal, ProblemSpec,
                    QuadraticConstraint, QuadraticCost, SigmoidUtilityCost,
                    allocation, box_constraints, coupling_residual,
                    evaluate_objective, objective_gradient, surrogate_value,
                    validate_problem)
from .barrier import (BarrierEval, barrier_eval, barrier_value,
                      local_smoothness_residual, smoothness_constant_LB)
from .subproblem import (ReallocationPlan, SubproblemNotConverged,
                         fraction_to_boundary, newton_kkt_step,
                         solve_subproblem)
from .engine import (StepSizes, Trace, dfm_round, kkt_metric, run, step_sizes,
                     theory_report)
from .reachability import (ReachabilityVerdict, SubspaceBasis, WeightingMatrix,
                           check_lemma1_shortcut, check_reachability,
                           local_subspace_basis, weighting_matrix)
from .baselines import PairPlan, pairwise_update, run_baseline
from .benchmarks import (RateNetwork, ResourceUser, derive_generator_graph,
                         example_problems, feasible_initialization,
                         fig1_chain_network, gen_economic_dispatch,
                         gen_multi_resource, gen_rate_control,
                         rho_for_accuracy)
from .matpower import CaseData, parse_matpower_case

__version__ = "0.1.0"
