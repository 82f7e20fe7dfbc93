#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "prerank/experiments.hpp"

namespace py = pybind11;
using namespace prerank;
using nlohmann::json;

namespace {

py::dict loss_dict(const LossResult& r) {
  py::dict d;
  d["value"] = r.value;
  d["grad"] = r.grad;
  return d;
}

py::list reports_list(std::span<const MetricReport> reports) {
  py::list out;
  for (const auto& r : reports) {
    py::dict d;
    d["model"] = r.model;
    d["metric"] = r.metric;
    d["ks"] = r.ks;
    d["values"] = r.values;
    d["count"] = r.count;
    d["dataset_digest"] = r.dataset_digest;
    d["config_digest"] = r.config_digest;
    out.append(d);
  }
  return out;
}

py::dict record_dict(const RunRecord& r) {
  py::dict d;
  d["name"] = r.name;
  d["config_digest"] = r.config_digest;
  d["seed"] = r.seed;
  d["epoch_loss"] = r.epoch_loss;
  d["reports"] = reports_list(r.reports);
  d["wall_clock_seconds"] = r.wall_clock_seconds;
  return d;
}

ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return experiment_from_json(j);
}

std::optional<double> opt(const py::object& o) {
  if (o.is_none()) return std::nullopt;
  return o.cast<double>();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Pre-ranking models, losses and metrics on a simulated marketplace.";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<LookupError>(m, "LookupError", base.ptr());
  py::register_exception<LabelingError>(m, "LabelingError", base.ptr());
  py::register_exception<NumericalFault>(m, "NumericalFault", base.ptr());
  py::register_exception<ContractViolation>(m, "ContractViolation", base.ptr());
  py::register_exception<EvaluationError>(m, "EvaluationError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  m.def("logsumexp", [](const std::vector<double>& x, double gamma) { return logsumexp(x, gamma); }, py::arg("x"),
        py::arg("gamma") = 1.0);
  m.def(
      "listwise_softmax_loss",
      [](const std::vector<double>& z, const std::vector<std::size_t>& pos) {
        return loss_dict(listwise_softmax_loss(z, pos));
      },
      py::arg("logits"), py::arg("positives"), "Vanilla list-wise softmax loss and its gradient.");
  m.def(
      "multi_positive_listwise_loss",
      [](const std::vector<double>& z, const std::vector<std::size_t>& pos) {
        return loss_dict(multi_positive_listwise_loss(z, pos));
      },
      py::arg("logits"), py::arg("positives"), "Multi-positive list-wise loss and its gradient.");
  m.def(
      "distill_loss",
      [](const std::vector<double>& z, const std::vector<double>& p) { return loss_dict(distill_ctr_loss(z, p)); },
      py::arg("logits"), py::arg("teacher"), "Soft-label cross entropy against teacher probabilities.");

  m.def(
      "rank_items",
      [](const std::vector<ItemId>& items, const std::vector<double>& scores) { return rank_items(items, scores); },
      py::arg("items"), py::arg("scores"), "Items by descending score, ties by ascending id.");
  m.def(
      "hitrate_at_k",
      [](const std::vector<ItemId>& ranked, const std::vector<ItemId>& targets, std::size_t k) {
        return hitrate_at_k(ranked, targets, k);
      },
      py::arg("ranked"), py::arg("targets"), py::arg("k"));
  m.def(
      "request_auc",
      [](const std::vector<double>& scores, const std::vector<int>& labels) { return request_auc(scores, labels); },
      py::arg("scores"), py::arg("labels"));
  m.def(
      "combine_scores",
      [](const std::string& strategy, const py::object& ctr, const py::object& cvr, const py::object& er,
         const py::object& logit) {
        return combine_scores(strategy_from_name(strategy), {opt(ctr), opt(cvr), opt(er), opt(logit)});
      },
      py::arg("strategy"), py::arg("ctr") = py::none(), py::arg("cvr") = py::none(), py::arg("er") = py::none(),
      py::arg("logit") = py::none());
  m.def(
      "sign_test_p", [](std::size_t wins, std::size_t losses) { return sign_test_p(wins, losses); },
      py::arg("wins"), py::arg("losses"));

  m.def(
      "true_probabilities",
      [](std::uint64_t seed, int n_users, int n_queries, int n_items, UserId u, QueryId q, ItemId p) {
        const Catalog c = gen_catalog(seed, n_users, n_queries, n_items);
        const auto t = true_probabilities(c, u, q, p);
        return py::make_tuple(t.click, t.purchase_given_click);
      },
      py::arg("seed"), py::arg("n_users"), py::arg("n_queries"), py::arg("n_items"), py::arg("user"),
      py::arg("query"), py::arg("item"), "Ground-truth click and purchase-given-click probabilities.");

  m.def(
      "normalize_config", [](const std::string& text) { return experiment_to_json(parse_config(text)).dump(); },
      py::arg("config_json"), "Validated config with every default filled in, as JSON.");
  m.def(
      "config_digest", [](const std::string& text) { return config_digest(parse_config(text)); },
      py::arg("config_json"));
  m.def(
      "simulate",
      [](const std::string& text) {
        ExperimentConfig c = parse_config(text);
        c.teacher_mode = TeacherMode::kOracle;
        py::gil_scoped_release release;
        const World w = build_world(c);
        py::gil_scoped_acquire acquire;
        py::dict d;
        d["train_requests"] = w.train_logs.size();
        d["test_requests"] = w.test_logs.size();
        d["attached_purchases"] = w.attached_purchases.size();
        d["asph_triples"] = w.asph_triples.size();
        d["isph_triples"] = w.isph_triples.size();
        d["relevance_digest"] = w.catalog.relevance_digest();
        return d;
      },
      py::arg("config_json"), "Builds the marketplace and logs; returns summary counts.");
  m.def(
      "train",
      [](const std::string& text) {
        const ExperimentConfig c = parse_config(text);
        RunRecord rec;
        {
          py::gil_scoped_release release;
          rec = train(c).record;
        }
        return record_dict(rec);
      },
      py::arg("config_json"), "Trains the one-model pre-ranker and returns its run record.");
  m.def(
      "train_baseline",
      [](const std::string& text) {
        const ExperimentConfig c = parse_config(text);
        RunRecord rec;
        {
          py::gil_scoped_release release;
          rec = train_baseline(c).record;
        }
        return record_dict(rec);
      },
      py::arg("config_json"), "Trains the CTR/CVR(/ER) baseline and returns its run record.");
  m.def(
      "ablation_variants",
      [](const std::string& suite, const std::string& text) {
        std::vector<std::string> names;
        for (const auto& v : ablation_variants(suite, parse_config(text))) names.push_back(v.name);
        return names;
      },
      py::arg("suite"), py::arg("config_json"));
}
