"""Representation learners: hindsight classification and optimistic self-prediction."""

from latent_rl_lab.replearn.expweights import (
    ClassificationTracker,
    expweights_dr_step,
    expweights_weights,
    label_marginals,
    mode_decoder,
    regret_bound,
)
from latent_rl_lab.replearn.selfpredict import (
    SelfPredError,
    SelfPredictOpt,
    SelfPredReport,
    TransitionCounts,
    expected_self_pred_error,
    optimistic_regret,
    run_selfpredict_rounds,
    self_pred_error,
    selfpredict_beta,
    selfpredict_opt_step,
)

__all__ = [
    "ClassificationTracker",
    "SelfPredError",
    "SelfPredReport",
    "SelfPredictOpt",
    "TransitionCounts",
    "expected_self_pred_error",
    "expweights_dr_step",
    "expweights_weights",
    "label_marginals",
    "mode_decoder",
    "optimistic_regret",
    "regret_bound",
    "run_selfpredict_rounds",
    "self_pred_error",
    "selfpredict_beta",
    "selfpredict_opt_step",
]
