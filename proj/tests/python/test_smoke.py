import json
import math

import pytest

import prerank

SMALL = {
    "name": "smoke",
    "seed": 5,
    "data": {
        "n_users": 60,
        "n_queries": 30,
        "n_items": 600,
        "simulator": {"n_categories": 6, "query_vocab": 60, "title_vocab": 80, "n_sellers": 10,
                      "behaviors_per_user": 12},
        "cascade": {"matching_size": 100, "prerank_size": 20, "exposure_size": 5},
        "train_requests": 240,
        "test_requests": 120,
    },
    "samples": {"rc": 5, "prc": 10},
    "model": {"term_dim": 4, "proj_dim": 4, "profile_dim": 3, "item_id_dim": 4, "item_cat_dim": 3,
              "query_freq_dim": 2, "query_cat_dim": 3, "price_dim": 2, "seller_dim": 2, "title_dim": 4,
              "hidden": [16, 8], "output_dim": 8},
    "teacher": {"hidden": [16], "epochs": 2},
    "optimizer": {"epochs": 2, "batch_size": 32},
    "eval": {"k_grid": [1, 5, 10, 20], "k_eval": 20},
}


def test_single_positive_losses_agree():
    z = [0.3, -1.2, 2.0, 0.5]
    a = prerank.listwise_softmax_loss(z, [2])
    b = prerank.multi_positive_listwise_loss(z, [2])
    assert abs(a["value"] - b["value"]) < 1e-12
    assert all(abs(x - y) < 1e-12 for x, y in zip(a["grad"], b["grad"]))


def test_separated_positives():
    z = [20.0, 20.0, -20.0, -20.0, -20.0]
    assert abs(prerank.listwise_softmax_loss(z, [0, 1])["value"] - 2 * math.log(2)) < 1e-3
    assert prerank.multi_positive_listwise_loss(z, [0, 1])["value"] < 1e-3


def test_distill_loss_matches_definition():
    z, p = [1.0, 0.0, -1.0], [0.5, 0.2, 0.1]
    lse = prerank.logsumexp(z)
    expected = sum(pi * (lse - zi) for zi, pi in zip(z, p))
    assert abs(prerank.distill_loss(z, p)["value"] - expected) < 1e-12


def test_metrics():
    assert prerank.rank_items([7, 3, 5], [1.0, 1.0, 2.0]) == [5, 3, 7]
    assert prerank.hitrate_at_k([5, 3, 7], [3, 7], 2) == 0.5
    assert prerank.request_auc([0.9, 0.1, 0.5], [1, 0, 0]) == 1.0
    assert prerank.request_auc([0.5, 0.5], [1, 0]) == 0.5


def test_combine_scores():
    assert abs(prerank.combine_scores("ctr_x_cvr", ctr=0.1, cvr=0.2) - 0.02) < 1e-15
    assert abs(prerank.combine_scores("ctr_x_cvr_x_er", ctr=0.1, cvr=0.2, er=0.5) - 0.01) < 1e-15
    assert prerank.combine_scores("one_model", ctr=0.3, logit=-2.0) == -2.0
    with pytest.raises(prerank.ContractViolation):
        prerank.combine_scores("ctr_x_cvr", ctr=0.1)


def test_config_validation():
    with pytest.raises(prerank.ConfigError):
        prerank.config_digest(json.dumps({"name": "no seed"}))
    with pytest.raises(prerank.ConfigError):
        prerank.config_digest(json.dumps({"seed": 1, "unknown": 0}))
    config = prerank.default_config(3)
    assert config["seed"] == 3
    assert config["eval"]["k_eval"] == 50
    assert prerank.config_digest(json.dumps(config)) == prerank.config_digest(json.dumps({"seed": 3}))


def test_ablation_rows():
    rows = prerank.ablation_variants("distill", json.dumps({"seed": 1}))
    assert rows == ["Ex", "Ex+RC", "no distillation"]


def test_oracle_probabilities_in_range():
    click, purchase = prerank.true_probabilities(7, 20, 10, 200, 3, 4, 5)
    assert 0.0 <= click <= 1.0
    assert 0.0 <= purchase <= 1.0


def test_train_is_reproducible():
    text = json.dumps(SMALL)
    summary = prerank.simulate(text)
    assert summary["train_requests"] == 240
    a = prerank.train(text)
    b = prerank.train(text)
    assert a["reports"] == b["reports"]
    assert a["config_digest"] == prerank.config_digest(text)
    assert 0.0 <= prerank.metric(a, "ASPH", 20) <= 1.0
    assert 0.0 <= prerank.metric(a, "PAUC@10", 10) <= 1.0


def test_baseline_runs():
    config = dict(SMALL, strategy="ctr_x_cvr")
    record = prerank.train_baseline(json.dumps(config))
    assert len(record["epoch_loss"]) == 2
