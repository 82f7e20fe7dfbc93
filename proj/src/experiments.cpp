#include "prerank/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>

#include "prerank/config_json.hpp"
#include "prerank/io.hpp"

namespace prerank {

namespace {

using nlohmann::json;

constexpr std::uint64_t kCatalogSeedStream = 0xe1;
constexpr std::uint64_t kLoggingSeedStream = 0xe2;
constexpr std::uint64_t kSampleSeedStream = 0xe3;
constexpr std::uint64_t kTeacherSeedStream = 0xe4;
constexpr std::uint64_t kInitSeedStream = 0xe5;
constexpr std::uint64_t kShuffleStream = 0xe6;
constexpr std::uint64_t kBaselineStream = 0xe7;

template <typename T>
void read_key(const json& j, const char* key, T& out, const char* where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string(where) + "." + key + ": " + e.what());
  }
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(known.begin(), known.end(), [&](const char* k) { return key == k; }) == known.end()) {
      throw ConfigError("unknown key '" + key + "' in " + where);
    }
  }
}

double bce(double z, double y) { return softplus(z) - y * z; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<const QuerySample*> pointers(std::span<const QuerySample> samples) {
  std::vector<const QuerySample*> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(&s);
  return out;
}

// Pointwise log-loss over the items of a sample, averaged, with optional soft
// teacher targets.
LogitLoss pointwise_loss(std::function<double(const LabeledItem&)> label,
                         std::function<double(const LabeledItem&)> soft_label) {
  return [label = std::move(label), soft_label = std::move(soft_label)](const QuerySample& s,
                                                                        std::span<const double> z) {
    LossResult r;
    r.grad.assign(z.size(), 0.0);
    if (z.empty()) return r;
    const double inv = 1.0 / static_cast<double>(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double y = label(s.items[i]);
      r.value += bce(z[i], y) * inv;
      r.grad[i] += (sigmoid(z[i]) - y) * inv;
      if (soft_label) {
        const double t = soft_label(s.items[i]);
        r.value += bce(z[i], t) * inv;
        r.grad[i] += (sigmoid(z[i]) - t) * inv;
      }
    }
    return r;
  };
}

const TeacherScores& require_teacher(const LabeledItem& it) {
  if (!it.teacher) throw LabelingError("missing teacher scores for item " + std::to_string(it.item));
  return *it.teacher;
}

std::vector<std::size_t> merged_grid(const EvalConfig& e) {
  std::vector<std::size_t> ks = e.k_grid;
  ks.push_back(e.k_eval);
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  return ks;
}

}  // namespace

std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kOneModel:
      return "one_model";
    case Strategy::kCtrXCvr:
      return "ctr_x_cvr";
    case Strategy::kCtrXCvrXEr:
      return "ctr_x_cvr_x_er";
  }
  return "?";
}

Strategy strategy_from_name(std::string_view name) {
  if (name == "one_model") return Strategy::kOneModel;
  if (name == "ctr_x_cvr") return Strategy::kCtrXCvr;
  if (name == "ctr_x_cvr_x_er") return Strategy::kCtrXCvrXEr;
  throw ConfigError("unknown combination strategy '" + std::string(name) + "'");
}

std::string_view teacher_mode_name(TeacherMode m) { return m == TeacherMode::kOracle ? "oracle" : "learned"; }

TeacherMode teacher_mode_from_name(std::string_view name) {
  if (name == "oracle") return TeacherMode::kOracle;
  if (name == "learned") return TeacherMode::kLearned;
  throw ConfigError("unknown teacher mode '" + std::string(name) + "'");
}

void ExperimentConfig::validate() const {
  if (data.n_users <= 0 || data.n_queries <= 0 || data.n_items <= 0) throw ConfigError("catalog sizes must be positive");
  if (data.train_requests <= 0 || data.test_requests <= 0) throw ConfigError("request counts must be positive");
  if (samples.rc < 0 || samples.prc < 0) throw ConfigError("candidate sample sizes must be >= 0");
  model.validate();
  loss.weights.validate();
  teacher.validate();
  if (optimizer.batch_size <= 0 || optimizer.epochs < 0 || !(optimizer.learning_rate > 0.0)) {
    throw ConfigError("invalid optimizer settings");
  }
  if (eval.k_eval == 0) throw ConfigError("k_eval must be positive");
  for (std::size_t i = 1; i < eval.k_grid.size(); ++i) {
    if (eval.k_grid[i] <= eval.k_grid[i - 1]) throw ConfigError("k grid must be strictly increasing");
  }
  if (!eval.k_grid.empty() && eval.k_grid.front() == 0) throw ConfigError("k grid values must be positive");
}

json experiment_to_json(const ExperimentConfig& c) {
  json data = {{"n_users", c.data.n_users},
               {"n_queries", c.data.n_queries},
               {"n_items", c.data.n_items},
               {"simulator", c.data.simulator},
               {"cascade", c.data.cascade},
               {"train_requests", c.data.train_requests},
               {"test_requests", c.data.test_requests},
               {"borderline", c.data.borderline}};
  return json{{"name", c.name},
              {"seed", c.seed},
              {"data", data},
              {"samples", c.samples},
              {"model", c.model},
              {"loss", c.loss},
              {"teacher_mode", std::string(teacher_mode_name(c.teacher_mode))},
              {"teacher", c.teacher},
              {"strategy", std::string(strategy_name(c.strategy))},
              {"baseline", {{"distill", c.baseline.distill}}},
              {"optimizer",
               {{"learning_rate", c.optimizer.learning_rate},
                {"batch_size", c.optimizer.batch_size},
                {"epochs", c.optimizer.epochs}}},
              {"eval",
               {{"k_grid", c.eval.k_grid}, {"k_eval", c.eval.k_eval}, {"inject_targets", c.eval.inject_targets}}},
              {"deterministic", c.deterministic}};
}

ExperimentConfig experiment_from_json(const json& j) {
  reject_unknown(j,
                 {"name", "seed", "data", "samples", "model", "loss", "teacher_mode", "teacher", "strategy", "baseline",
                  "optimizer", "eval", "deterministic"},
                 "experiment");
  if (!j.contains("seed")) throw ConfigError("experiment config needs a seed");
  ExperimentConfig c;
  read_key(j, "name", c.name, "experiment");
  read_key(j, "seed", c.seed, "experiment");
  try {
    if (j.contains("data")) {
      const json& d = j.at("data");
      reject_unknown(d,
                     {"n_users", "n_queries", "n_items", "simulator", "cascade", "train_requests", "test_requests",
                      "borderline"},
                     "data");
      read_key(d, "n_users", c.data.n_users, "data");
      read_key(d, "n_queries", c.data.n_queries, "data");
      read_key(d, "n_items", c.data.n_items, "data");
      if (d.contains("simulator")) c.data.simulator = d.at("simulator").get<SimConfig>();
      if (d.contains("cascade")) c.data.cascade = d.at("cascade").get<CascadePolicy>();
      read_key(d, "train_requests", c.data.train_requests, "data");
      read_key(d, "test_requests", c.data.test_requests, "data");
      read_key(d, "borderline", c.data.borderline, "data");
    }
    if (j.contains("samples")) c.samples = j.at("samples").get<SampleConfig>();
    if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
    if (j.contains("loss")) c.loss = j.at("loss").get<LossConfig>();
    if (j.contains("teacher")) c.teacher = j.at("teacher").get<TeacherConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(e.what());
  }
  std::string mode(teacher_mode_name(c.teacher_mode)), strategy(strategy_name(c.strategy));
  read_key(j, "teacher_mode", mode, "experiment");
  read_key(j, "strategy", strategy, "experiment");
  c.teacher_mode = teacher_mode_from_name(mode);
  c.strategy = strategy_from_name(strategy);
  if (j.contains("baseline")) {
    const json& b = j.at("baseline");
    reject_unknown(b, {"distill"}, "baseline");
    read_key(b, "distill", c.baseline.distill, "baseline");
  }
  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    reject_unknown(o, {"learning_rate", "batch_size", "epochs"}, "optimizer");
    read_key(o, "learning_rate", c.optimizer.learning_rate, "optimizer");
    read_key(o, "batch_size", c.optimizer.batch_size, "optimizer");
    read_key(o, "epochs", c.optimizer.epochs, "optimizer");
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    reject_unknown(e, {"k_grid", "k_eval", "inject_targets"}, "eval");
    read_key(e, "k_grid", c.eval.k_grid, "eval");
    read_key(e, "k_eval", c.eval.k_eval, "eval");
    read_key(e, "inject_targets", c.eval.inject_targets, "eval");
  }
  read_key(j, "deterministic", c.deterministic, "experiment");
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return experiment_from_json(j);
}

void save_experiment_config(const ExperimentConfig& config, const std::filesystem::path& path) {
  write_file(path, experiment_to_json(config).dump(2) + "\n");
}

std::string config_digest(const ExperimentConfig& config) { return hex_digest(experiment_to_json(config).dump()); }

std::uint64_t catalog_seed(const ExperimentConfig& c) { return derive_seed(c.seed, kCatalogSeedStream); }
std::uint64_t logging_seed(const ExperimentConfig& c) { return derive_seed(c.seed, kLoggingSeedStream); }
std::uint64_t sample_seed(const ExperimentConfig& c) { return derive_seed(c.seed, kSampleSeedStream); }
std::uint64_t teacher_seed(const ExperimentConfig& c) { return derive_seed(c.seed, kTeacherSeedStream); }
std::uint64_t init_seed(const ExperimentConfig& c) { return derive_seed(c.seed, kInitSeedStream); }

TeacherFn World::teacher_fn() const {
  if (teacher_mode == TeacherMode::kOracle) {
    return [this](UserId u, QueryId q, ItemId p) { return oracle_teacher(catalog, u, q, p); };
  }
  if (!teacher) throw ContractViolation("learned teacher requested before training");
  return [this](UserId u, QueryId q, ItemId p) { return teacher_predict(*teacher, catalog, u, q, p); };
}

World build_world(const ExperimentConfig& config) {
  config.validate();
  const DataConfig& d = config.data;
  World w;
  w.catalog = gen_catalog(catalog_seed(config), d.n_users, d.n_queries, d.n_items, d.simulator);
  auto logs = run_cascade_logging(w.catalog, d.cascade, d.train_requests + d.test_requests, logging_seed(config));
  w.train_logs.assign(logs.begin(), logs.begin() + d.train_requests);
  w.test_logs.assign(logs.begin() + d.train_requests, logs.end());
  w.attached_purchases = attach_from_logs(logs, w.catalog, EventKind::kPurchase, d.borderline);
  w.attached_clicks = attach_from_logs(logs, w.catalog, EventKind::kClick, d.borderline);
  w.asph_triples =
      build_eval_triples(w.test_logs, w.attached_purchases, EvalMode::kAllScenario, config.eval.inject_targets);
  w.isph_triples =
      build_eval_triples(w.test_logs, w.attached_purchases, EvalMode::kInScenario, config.eval.inject_targets);
  w.teacher_mode = config.teacher_mode;
  if (config.teacher_mode == TeacherMode::kLearned) {
    TeacherConfig tc = config.teacher;
    tc.seed = teacher_seed(config);
    const auto records = exposure_records(w.train_logs);
    w.teacher = train_learned_teacher(w.catalog, records, tc, &w.teacher_report);
  }
  return w;
}

std::vector<QuerySample> training_samples(const World& world, const ExperimentConfig& config, SampleStats* stats) {
  SampleConfig sc = config.samples;
  sc.seed = sample_seed(config);
  return build_query_samples(world.train_logs, world.attached_purchases, world.attached_clicks, sc,
                             world.teacher_fn(), stats);
}

double RunRecord::metric(std::string_view metric, std::size_t k) const {
  for (const auto& r : reports) {
    if (r.metric != metric) continue;
    for (std::size_t i = 0; i < r.ks.size(); ++i) {
      if (r.ks[i] == k) return r.values[i];
    }
  }
  throw EvaluationError("run '" + name + "' has no " + std::string(metric) + "@" + std::to_string(k));
}

PrerankParams optimize(const ExperimentConfig& config, const Catalog& catalog, std::span<const QuerySample> samples,
                       const LogitLoss& loss, std::uint64_t seed, std::vector<double>* epoch_loss,
                       TaskCounters* counters, const Progress& progress) {
  if (samples.empty()) throw ConfigError("no training samples");
  PrerankParams params = init_params(config.model, Vocab::from_catalog(catalog), seed);
  PrerankParams grads = params.zeros_like();
  nn::Adam adam({config.optimizer.learning_rate});
  auto p_list = params.tensors();
  auto order = pointers(samples);
  const auto batch = static_cast<std::size_t>(config.optimizer.batch_size);
  auto last_good = std::make_shared<const PrerankParams>(params);
  for (int epoch = 0; epoch < config.optimizer.epochs; ++epoch) {
    Rng rng = make_rng(seed, kShuffleStream, static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const std::span<const QuerySample* const> b(order.data() + start, end - start);
      BatchResult r;
      try {
        r = forward_backward(params, catalog, b, loss, grads);
      } catch (const NumericalFault& e) {
        throw TrainingDiverged(std::string("training diverged in epoch ") + std::to_string(epoch) + ": " + e.what(),
                               epoch, last_good);
      }
      auto g_list = grads.tensors();
      if (!std::isfinite(r.loss) || !nn::all_finite(g_list)) {
        throw TrainingDiverged("training diverged in epoch " + std::to_string(epoch), epoch, last_good);
      }
      adam.step(p_list, g_list);
      sum += r.loss;
      ++n_batches;
    }
    const double mean = sum / static_cast<double>(n_batches);
    if (epoch_loss) epoch_loss->push_back(mean);
    last_good = std::make_shared<const PrerankParams>(params);
    if (progress) progress("epoch " + std::to_string(epoch + 1) + " loss " + format_double(mean));
  }
  if (counters) {
    // One pass of task bookkeeping over the data, independent of the batching.
    for (const auto& s : samples) {
      const std::vector<double> z(s.items.size(), 0.0);
      rank_loss(s, z, config.loss.weights, config.loss.variant, counters);
    }
  }
  return params;
}

TrainResult train(const ExperimentConfig& config, const World& world, std::span<const QuerySample> samples,
                  const Progress& progress) {
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult out;
  const LossConfig lc = config.loss;
  const LogitLoss loss = [lc](const QuerySample& s, std::span<const double> z) { return total_loss(s, z, lc); };
  out.params = optimize(config, world.catalog, samples, loss, init_seed(config), &out.record.epoch_loss,
                        &out.record.counters, progress);
  out.record.name = config.name;
  out.record.config_digest = config_digest(config);
  out.record.seed = config.seed;
  out.record.reports = evaluate(config.name, model_scorer(out.params, world.catalog), world, config);
  out.record.wall_clock_seconds = seconds_since(t0);
  return out;
}

TrainResult train(const ExperimentConfig& config, const Progress& progress) {
  const World world = build_world(config);
  const auto samples = training_samples(world, config);
  return train(config, world, samples, progress);
}

double combine_scores(Strategy strategy, const ScoreInputs& in) {
  const auto need = [](const std::optional<double>& v, const char* what) {
    if (!v) throw ContractViolation(std::string("combination strategy needs ") + what);
    return *v;
  };
  const auto prob = [&](const std::optional<double>& v, const char* what) {
    const double p = need(v, what);
    if (!(p >= 0.0 && p <= 1.0)) throw ContractViolation(std::string(what) + " outside [0, 1]");
    return p;
  };
  switch (strategy) {
    case Strategy::kOneModel:
      return need(in.logit, "a logit");
    case Strategy::kCtrXCvr:
      return prob(in.ctr, "pCTR") * prob(in.cvr, "pCVR");
    case Strategy::kCtrXCvrXEr:
      return prob(in.ctr, "pCTR") * prob(in.cvr, "pCVR") * prob(in.er, "pER");
  }
  throw ContractViolation("unknown strategy");
}

std::vector<QuerySample> ctr_training_view(std::span<const QuerySample> samples) {
  std::vector<QuerySample> out;
  for (const auto& s : samples) {
    QuerySample v = s;
    v.items.clear();
    for (const auto& it : s.items) {
      if (it.origin == Origin::kEx) v.items.push_back(it);
    }
    if (!v.items.empty()) out.push_back(std::move(v));
  }
  return out;
}

std::vector<QuerySample> cvr_training_view(std::span<const QuerySample> samples) {
  std::vector<QuerySample> out;
  for (const auto& s : samples) {
    QuerySample v = s;
    v.items.clear();
    for (const auto& it : s.items) {
      if (it.origin == Origin::kEx && it.ascl) v.items.push_back(it);
    }
    if (!v.items.empty()) out.push_back(std::move(v));
  }
  return out;
}

BaselineResult train_baseline(const ExperimentConfig& config, const World& world,
                              std::span<const QuerySample> samples, const Progress& progress) {
  config.validate();
  if (config.strategy == Strategy::kOneModel) throw ConfigError("the baseline needs a multi-model strategy");
  const auto t0 = std::chrono::steady_clock::now();
  BaselineResult out;
  out.params.strategy = config.strategy;
  const bool distill = config.baseline.distill;
  const std::uint64_t seed = derive_seed(config.seed, kBaselineStream);
  const auto say = [&](const std::string& who) {
    return Progress(progress ? Progress([&, who](const std::string& m) { progress(who + ": " + m); }) : Progress());
  };

  const auto ctr_view = ctr_training_view(samples);
  const auto cvr_view = cvr_training_view(samples);
  if (ctr_view.empty()) throw ConfigError("no exposures to train the CTR model on");
  if (cvr_view.empty()) throw ConfigError("no clicked exposures to train the CVR model on");

  std::vector<double> history;
  out.params.ctr = optimize(
      config, world.catalog, ctr_view,
      pointwise_loss([](const LabeledItem& it) { return it.ascl ? 1.0 : 0.0; },
                     distill ? std::function<double(const LabeledItem&)>(
                                   [](const LabeledItem& it) { return require_teacher(it).ctr; })
                             : nullptr),
      derive_seed(seed, 1), &history, nullptr, say("ctr"));
  out.record.epoch_loss = history;
  history.clear();
  out.params.cvr = optimize(
      config, world.catalog, cvr_view,
      pointwise_loss([](const LabeledItem& it) { return it.aspl ? 1.0 : 0.0; },
                     distill ? std::function<double(const LabeledItem&)>(
                                   [](const LabeledItem& it) { return require_teacher(it).cvr; })
                             : nullptr),
      derive_seed(seed, 2), &history, nullptr, say("cvr"));
  for (std::size_t i = 0; i < history.size(); ++i) out.record.epoch_loss[i] += history[i];
  if (config.strategy == Strategy::kCtrXCvrXEr) {
    history.clear();
    out.params.er = optimize(config, world.catalog, samples,
                             pointwise_loss([](const LabeledItem& it) { return it.origin == Origin::kEx ? 1.0 : 0.0; },
                                            nullptr),
                             derive_seed(seed, 3), &history, nullptr, say("er"));
    for (std::size_t i = 0; i < history.size(); ++i) out.record.epoch_loss[i] += history[i];
  }
  out.record.name = config.name;
  out.record.config_digest = config_digest(config);
  out.record.seed = config.seed;
  out.record.reports = evaluate(config.name, baseline_scorer(out.params, world.catalog), world, config);
  out.record.wall_clock_seconds = seconds_since(t0);
  return out;
}

BaselineResult train_baseline(const ExperimentConfig& config, const Progress& progress) {
  const World world = build_world(config);
  const auto samples = training_samples(world, config);
  return train_baseline(config, world, samples, progress);
}

void save_baseline(const BaselineParams& params, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file(dir / "strategy.txt", std::string(strategy_name(params.strategy)) + "\n");
  save_params(params.ctr, dir / "ctr.ckpt");
  save_params(params.cvr, dir / "cvr.ckpt");
  if (params.er) save_params(*params.er, dir / "er.ckpt");
}

BaselineParams load_baseline(const std::filesystem::path& dir) {
  BaselineParams p;
  std::string s = read_file(dir / "strategy.txt");
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  p.strategy = strategy_from_name(s);
  p.ctr = load_params(dir / "ctr.ckpt");
  p.cvr = load_params(dir / "cvr.ckpt");
  if (p.strategy == Strategy::kCtrXCvrXEr) p.er = load_params(dir / "er.ckpt");
  return p;
}

namespace {

struct TowerScorer {
  std::shared_ptr<const PrerankParams> params;
  const Catalog* catalog;
  std::shared_ptr<const Matrix> items;

  std::vector<double> logits(UserId u, QueryId q, std::span<const ItemId> pool) const {
    const auto f = user_query_features(*catalog, u, q, params->config.category_filter);
    const RowVector h = user_query_embed(*params, *catalog, f);
    std::vector<double> z;
    z.reserve(pool.size());
    for (ItemId p : pool) z.push_back(items->row(p).dot(h) / params->config.temperature);
    return z;
  }
};

TowerScorer make_tower(const PrerankParams& params, const Catalog& catalog) {
  return {std::make_shared<const PrerankParams>(params), &catalog,
          std::make_shared<const Matrix>(embed_all_items(params, catalog))};
}

}  // namespace

Scorer model_scorer(const PrerankParams& params, const Catalog& catalog) {
  const TowerScorer t = make_tower(params, catalog);
  return [t](UserId u, QueryId q, std::span<const ItemId> pool) { return t.logits(u, q, pool); };
}

Scorer baseline_scorer(const BaselineParams& params, const Catalog& catalog) {
  const TowerScorer ctr = make_tower(params.ctr, catalog);
  const TowerScorer cvr = make_tower(params.cvr, catalog);
  std::optional<TowerScorer> er;
  if (params.er) er = make_tower(*params.er, catalog);
  const Strategy strategy = params.strategy;
  return [ctr, cvr, er, strategy](UserId u, QueryId q, std::span<const ItemId> pool) {
    const auto zc = ctr.logits(u, q, pool);
    const auto zv = cvr.logits(u, q, pool);
    std::vector<double> ze;
    if (er) ze = er->logits(u, q, pool);
    std::vector<double> out(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
      ScoreInputs in;
      in.ctr = sigmoid(zc[i]);
      in.cvr = sigmoid(zv[i]);
      if (er) in.er = sigmoid(ze[i]);
      out[i] = combine_scores(strategy, in);
    }
    return out;
  };
}

Scorer teacher_scorer(const TeacherParams& params, const Catalog& catalog) {
  auto owned = std::make_shared<const TeacherParams>(params);
  return [owned, &catalog](UserId u, QueryId q, std::span<const ItemId> pool) {
    std::vector<double> out;
    out.reserve(pool.size());
    for (ItemId p : pool) out.push_back(teacher_predict(*owned, catalog, u, q, p).ctcvr());
    return out;
  };
}

Scorer oracle_scorer(const Catalog& catalog) {
  return [&catalog](UserId u, QueryId q, std::span<const ItemId> pool) {
    std::vector<double> out;
    out.reserve(pool.size());
    for (ItemId p : pool) out.push_back(oracle_teacher(catalog, u, q, p).ctcvr());
    return out;
  };
}

std::vector<MetricReport> evaluate(const std::string& model, const Scorer& scorer, const World& world,
                                   const ExperimentConfig& config) {
  const auto ks = merged_grid(config.eval);
  const std::string digest = config_digest(config);
  std::vector<MetricReport> out;
  out.push_back(hitrate_report(model, EvalMode::kAllScenario, scorer, world.asph_triples, ks, digest));
  out.push_back(hitrate_report(model, EvalMode::kInScenario, scorer, world.isph_triples, ks, digest));
  const PaucResult pauc = pauc_at_10(scorer, world.test_logs);
  MetricReport p;
  p.model = model;
  p.metric = "PAUC@10";
  p.ks = {10};
  p.values = {pauc.value};
  p.count = pauc.valid_requests;
  std::string bytes;
  for (const auto& l : world.test_logs) bytes += std::to_string(l.request_id) + ',';
  p.dataset_digest = hex_digest(bytes);
  p.config_digest = digest;
  out.push_back(std::move(p));
  return out;
}

double sign_test_p(std::size_t wins, std::size_t losses) {
  const std::size_t n = wins + losses;
  if (n == 0) return 1.0;
  const std::size_t k = std::min(wins, losses);
  // P(X <= k) for X ~ Binomial(n, 1/2), doubled and capped at 1.
  double tail = 0.0;
  for (std::size_t i = 0; i <= k; ++i) {
    tail += std::exp(std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(i) + 1.0) -
                     std::lgamma(static_cast<double>(n - i) + 1.0) - static_cast<double>(n) * std::log(2.0));
  }
  return std::min(1.0, 2.0 * tail);
}

std::vector<AblationVariant> ablation_variants(std::string_view suite, const ExperimentConfig& base) {
  std::vector<AblationVariant> out;
  const auto add = [&](const std::string& name, auto&& edit, bool multi_model = false) {
    AblationVariant v;
    v.name = name;
    v.config = base;
    v.config.name = name;
    v.config.strategy = Strategy::kOneModel;
    edit(v.config);
    v.multi_model = multi_model;
    out.push_back(std::move(v));
  };
  const auto same = [](ExperimentConfig&) {};
  if (suite == "samples") {
    add("ASMOL", same);
    add("w/o PRC", [](ExperimentConfig& c) { c.samples.prc = 0; });
    add("w/o RC", [](ExperimentConfig& c) { c.samples.rc = 0; });
    add("w/o RC&PRC", [](ExperimentConfig& c) { c.samples.rc = c.samples.prc = 0; });
  } else if (suite == "labels") {
    add("ASMOL", same);
    add("w/o AEL", [](ExperimentConfig& c) { c.loss.weights.exposure = 0.0; });
    add("w/o ASCL", [](ExperimentConfig& c) { c.loss.weights.click = 0.0; });
    add("w/o ASPL", [](ExperimentConfig& c) { c.loss.weights.purchase = 0.0; });
    add("ASPL->ISPL", [](ExperimentConfig& c) { c.samples.labels.purchase = LabelSource::kInScenario; });
    add("ASCL->ISCL", [](ExperimentConfig& c) { c.samples.labels.click = LabelSource::kInScenario; });
    add("ASL->ISL", [](ExperimentConfig& c) {
      c.samples.labels.purchase = LabelSource::kInScenario;
      c.samples.labels.click = LabelSource::kInScenario;
    });
  } else if (suite == "loss") {
    add("multi_positive", [](ExperimentConfig& c) { c.loss.variant = LossVariant::kMultiPositive; });
    add("vanilla", [](ExperimentConfig& c) { c.loss.variant = LossVariant::kVanilla; });
  } else if (suite == "distill") {
    add("Ex", [](ExperimentConfig& c) { c.loss.distill = DistillSet::kEx; });
    add("Ex+RC", [](ExperimentConfig& c) { c.loss.distill = DistillSet::kExRc; });
    add("no distillation", [](ExperimentConfig& c) { c.loss.distill = DistillSet::kNone; });
  } else if (suite == "combination") {
    add("ASMOL", same);
    add("ASMOL w/o RC&PRC", [](ExperimentConfig& c) { c.samples.rc = c.samples.prc = 0; });
    add(
        "baseline",
        [](ExperimentConfig& c) {
          c.samples.rc = c.samples.prc = 0;
          c.samples.labels = {LabelSource::kInScenario, LabelSource::kInScenario};
          c.strategy = Strategy::kCtrXCvr;
          c.baseline.distill = false;
        },
        true);
    add(
        "baseline w/ ASL&distill",
        [](ExperimentConfig& c) {
          c.samples.rc = c.samples.prc = 0;
          c.strategy = Strategy::kCtrXCvr;
          c.baseline.distill = true;
        },
        true);
    add(
        "baseline w/ ASL&distill&ER",
        [](ExperimentConfig& c) {
          c.strategy = Strategy::kCtrXCvrXEr;
          c.baseline.distill = true;
        },
        true);
  } else {
    throw ConfigError("unknown ablation suite '" + std::string(suite) + "'");
  }
  return out;
}

AblationResult run_ablation(std::string_view suite, const ExperimentConfig& base, std::span<const std::uint64_t> seeds,
                            const Progress& progress) {
  if (seeds.size() < 5) throw ConfigError("an ablation needs at least 5 seeds");
  const auto variants = ablation_variants(suite, base);
  AblationResult result;
  result.suite = std::string(suite);
  result.seeds.assign(seeds.begin(), seeds.end());
  result.k_eval = base.eval.k_eval;
  std::vector<std::vector<RunRecord>> by_variant(variants.size());
  for (std::uint64_t seed : seeds) {
    ExperimentConfig world_config = base;
    world_config.seed = seed;
    if (progress) progress("seed " + std::to_string(seed) + ": building data");
    const World world = build_world(world_config);
    std::map<std::string, std::vector<QuerySample>> sample_cache;
    for (std::size_t v = 0; v < variants.size(); ++v) {
      ExperimentConfig c = variants[v].config;
      c.seed = seed;
      const std::string key = json(c.samples).dump();
      auto it = sample_cache.find(key);
      if (it == sample_cache.end()) it = sample_cache.emplace(key, training_samples(world, c)).first;
      const Progress inner = progress ? Progress([&](const std::string& m) {
        progress("seed " + std::to_string(seed) + " " + variants[v].name + ": " + m);
      })
                                      : Progress();
      RunRecord rec = variants[v].multi_model ? train_baseline(c, world, it->second, inner).record
                                              : train(c, world, it->second, inner).record;
      if (progress) {
        progress("seed " + std::to_string(seed) + " " + variants[v].name + ": ASPH@" + std::to_string(base.eval.k_eval) +
                 " " + format_double(rec.metric("ASPH", base.eval.k_eval)) + " PAUC@10 " +
                 format_double(rec.metric("PAUC@10", 10)));
      }
      by_variant[v].push_back(std::move(rec));
    }
  }
  for (std::size_t v = 0; v < variants.size(); ++v) {
    AblationSummary s;
    s.variant = variants[v].name;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      const double a = by_variant[v][i].metric("ASPH", base.eval.k_eval);
      const double p = by_variant[v][i].metric("PAUC@10", 10);
      s.asph.push_back(a);
      s.pauc.push_back(p);
      if (v > 0) {
        const double ra = by_variant[0][i].metric("ASPH", base.eval.k_eval);
        const double rp = by_variant[0][i].metric("PAUC@10", 10);
        s.asph_wins += a > ra ? 1 : 0;
        s.asph_losses += a < ra ? 1 : 0;
        s.pauc_wins += p > rp ? 1 : 0;
        s.pauc_losses += p < rp ? 1 : 0;
      }
    }
    s.mean_asph = std::accumulate(s.asph.begin(), s.asph.end(), 0.0) / static_cast<double>(s.asph.size());
    s.mean_pauc = std::accumulate(s.pauc.begin(), s.pauc.end(), 0.0) / static_cast<double>(s.pauc.size());
    s.asph_sign_p = sign_test_p(s.asph_wins, s.asph_losses);
    s.pauc_sign_p = sign_test_p(s.pauc_wins, s.pauc_losses);
    result.summaries.push_back(std::move(s));
  }
  for (auto& runs : by_variant) {
    for (auto& r : runs) result.records.push_back(std::move(r));
  }
  return result;
}

std::string ablation_to_tsv(const AblationResult& r) {
  const std::string asph = "ASPH@" + std::to_string(r.k_eval);
  std::string out = "suite\tvariant\tseed\t" + asph + "\tPAUC@10\tconfig_digest\n";
  for (const auto& rec : r.records) {
    out += r.suite + '\t' + rec.name + '\t' + std::to_string(rec.seed) + '\t' +
           format_double(rec.metric("ASPH", r.k_eval)) + '\t' + format_double(rec.metric("PAUC@10", 10)) + '\t' +
           rec.config_digest + '\n';
  }
  out += "\nsuite\tvariant\tmean_" + asph +
         "\tmean_PAUC@10\tasph_wins\tasph_losses\tasph_sign_p\tpauc_wins\tpauc_losses\tpauc_sign_p\n";
  for (const auto& s : r.summaries) {
    out += r.suite + '\t' + s.variant + '\t' + format_double(s.mean_asph) + '\t' + format_double(s.mean_pauc) + '\t' +
           std::to_string(s.asph_wins) + '\t' + std::to_string(s.asph_losses) + '\t' + format_double(s.asph_sign_p) +
           '\t' + std::to_string(s.pauc_wins) + '\t' + std::to_string(s.pauc_losses) + '\t' +
           format_double(s.pauc_sign_p) + '\n';
  }
  return out;
}

void emit_report(std::span<const RunRecord> records, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<MetricReport> reports;
  std::string manifest;
  for (const auto& r : records) {
    for (MetricReport m : r.reports) {
      m.model = r.name;
      m.config_digest = r.config_digest;
      reports.push_back(std::move(m));
    }
    json line = {{"name", r.name},
                 {"config_digest", r.config_digest},
                 {"seed", r.seed},
                 {"epoch_loss", r.epoch_loss},
                 {"task_used", {r.counters.used[0], r.counters.used[1], r.counters.used[2]}},
                 {"task_dropped", {r.counters.dropped[0], r.counters.dropped[1], r.counters.dropped[2]}},
                 {"wall_clock_seconds", r.wall_clock_seconds}};
    manifest += line.dump() + "\n";
  }
  write_reports(reports, dir / "reports.tsv");
  write_file(dir / "runs.jsonl", manifest);
}

}  // namespace prerank
