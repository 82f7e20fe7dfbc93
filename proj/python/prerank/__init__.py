"""Pre-ranking models, losses and metrics on a simulated marketplace."""

import json

from ._core import (
    ConfigError,
    ContractViolation,
    Error,
    EvaluationError,
    IoError,
    LabelingError,
    LookupError,
    NumericalFault,
    ablation_variants,
    combine_scores,
    config_digest,
    distill_loss,
    hitrate_at_k,
    listwise_softmax_loss,
    logsumexp,
    multi_positive_listwise_loss,
    normalize_config,
    rank_items,
    request_auc,
    sign_test_p,
    simulate,
    train,
    train_baseline,
    true_probabilities,
)


def default_config(seed, **overrides):
    """Full config dict for a seed, with top-level overrides applied."""
    config = json.loads(normalize_config(json.dumps({"seed": seed})))
    config.update(overrides)
    return config


def metric(record, name, k):
    """Value of a metric at k from a run record returned by train()."""
    for report in record["reports"]:
        if report["metric"] == name and k in report["ks"]:
            return report["values"][report["ks"].index(k)]
    raise KeyError(f"{name}@{k}")
