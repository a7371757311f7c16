"""structpen: structured penalized multivariate regression.

Joint prediction of correlated responses from heterogeneous feature blocks
with lasso, elastic net, tree-guided group lasso and their integrative
penalty factor (IPF) variants, plus GP-surrogate hyperparameter tuning and a
simulation benchmark engine.
"""

__version__ = "0.1.0"

from .data import (Dataset, FitResult, PenaltyConfig, Standardization,
                   assemble_dataset, destandardize_fit, predict, standardize)
from .cd import CdOptions, PathSpec, fit_elastic_net, fit_lasso, fit_path, \
    lambda_max, make_path, soft_threshold
from .ipf import (AugmentedProblem, GroupSpec, PenaltyGroup, back_transform,
                  group_penalty, ipf_en_augment, ipf_lasso_augment,
                  prop1_augment)
from .tree import TreeNode, TreeStructure, build_tree, node_weights, tree_penalty
from .spg import FlatGroups, SpgOptions, fit_tree_lasso, smoothed_penalty_grad, \
    tree_lambda_max
from .fitting import fit_on_dataset, fit_penalized, fit_with_unpenalized, \
    objective_value, penalty_value
from .tuner import (SearchDim, SearchSpace, TunerState, expected_improvement,
                    epsgo_minimize, gp_posterior)
from .selection import (CvResult, FoldPlan, TuneOptions, cv_loss, make_folds,
                        tune_and_fit)
from .simulation import (ScenarioSpec, SimMetrics, build_sigma, evaluate,
                         load_scenario, run_study, simulate_dataset,
                         summarize_study)
