"""Neural stand-ins for discrete Bayesian networks.

Exact network machinery (sampling, variable elimination, MLE fitting,
d-separation) plus a masked feed-forward model trained to answer the same
conditional queries, with two ways of injecting DAG-derived independence
relations during training, and a seeded evaluation/experiment harness.
"""

from .bn import (
    Cpt,
    Dag,
    Dataset,
    DiscreteBayesNet,
    Distribution,
    NetworkError,
    VariableSpec,
    ZeroEvidenceError,
    bn_predict,
    build_network,
    fit_mle_k2,
    forward_sample,
    free_parameter_count,
    joint_probability,
    load_network,
    save_network,
    topological_order,
    variable_elimination,
)
from .dsep import IndependenceRelation, enumerate_relations, is_d_separated
from .evaluation import (
    BnPredictor,
    MaeReport,
    NnPredictor,
    Query,
    build_sample_query_set,
    build_total_query_set,
    evaluate,
    query_mae,
)
from .model import (
    LayoutSpec,
    MaskedInstance,
    ModelParams,
    OptimizerState,
    adam_step,
    compute_v0,
    finite_difference_check,
    forward,
    init_model,
    load_model,
    loss_and_grads,
    predict_distributions,
    save_model,
)
from .training import (
    MaskSplit,
    TrainConfig,
    TrainHistory,
    applicable_relations,
    corruption_passes,
    encode,
    independence_violation,
    reg_term,
    sample_mask,
    train,
)
from .experiments import (
    ExperimentConfig,
    RunRecord,
    emit_reports,
    load_experiment_config,
    perturb_dag,
    run_robustness,
    run_sweep,
)

__version__ = "0.1.0"
