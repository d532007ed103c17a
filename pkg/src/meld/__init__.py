"""Method-of-moments estimation for Dirichlet mixed-membership models over mixed data."""

from .data import (
    Dataset,
    Schema,
    VariableSpec,
    encode_value,
    load_dataset,
    parse_schema,
)
from .estimator import (
    FitConfig,
    FitReport,
    fit,
    gradient_block,
    init_params,
    objective,
    project_to_simplex,
    project_to_simplex_weighted,
    update_block_q2,
    update_block_q3,
)
from .evaluation import align_components, ave_kl, marginal_frequency, param_mse, rank_variables_by_kl
from .gmm import MomentVectorLayout, estimate_diag_S, stack_moment_vector, weights_from_S
from .moments import (
    DirichletPrior,
    MomentStats,
    compute_stats,
    lambda_diagonals,
    population_mean,
    population_pair_moment,
    population_triple_moment,
)
from .params import ModelParams
from .selection import fitness_index, sweep_k
from .simulate import GenerativeSpec, contaminate, sample_dataset, sample_two_group_dataset

__version__ = "0.1.0"
