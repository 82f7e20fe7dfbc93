#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prerank/losses.hpp"
#include "prerank/marketplace.hpp"
#include "prerank/metrics.hpp"
#include "prerank/samples.hpp"
#include "prerank/teacher.hpp"
#include "prerank/two_tower.hpp"

namespace prerank {

enum class Strategy { kOneModel, kCtrXCvr, kCtrXCvrXEr };

std::string_view strategy_name(Strategy s);
Strategy strategy_from_name(std::string_view name);

enum class TeacherMode { kOracle, kLearned };

std::string_view teacher_mode_name(TeacherMode m);
TeacherMode teacher_mode_from_name(std::string_view name);

struct DataConfig {
  int n_users = 1000;
  int n_queries = 300;
  int n_items = 2000;
  SimConfig simulator;
  CascadePolicy cascade;
  int train_requests = 3000;
  int test_requests = 1500;
  double borderline = 0.5;  // query-item relevance needed to attach a purchase
};

struct OptimizerConfig {
  double learning_rate = 1e-3;
  int batch_size = 64;
  int epochs = 10;
};

struct EvalConfig {
  std::vector<std::size_t> k_grid = {1, 2, 5, 10, 20, 50, 100, 200};
  std::size_t k_eval = 50;
  bool inject_targets = true;
};

// Options of the multi-model baseline.
struct BaselineOptions {
  bool distill = false;  // pointwise soft-label terms from the teacher
};

struct ExperimentConfig {
  std::string name = "asmol";
  std::uint64_t seed = 0;
  DataConfig data;
  SampleConfig samples;
  ModelConfig model;
  LossConfig loss;
  TeacherMode teacher_mode = TeacherMode::kLearned;
  TeacherConfig teacher;
  Strategy strategy = Strategy::kOneModel;
  BaselineOptions baseline;
  OptimizerConfig optimizer;
  EvalConfig eval;
  bool deterministic = true;

  void validate() const;
};

// The seed key is mandatory; every other key falls back to its default.
nlohmann::json experiment_to_json(const ExperimentConfig& config);
ExperimentConfig experiment_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
void save_experiment_config(const ExperimentConfig& config, const std::filesystem::path& path);
std::string config_digest(const ExperimentConfig& config);

// Simulated marketplace, logs split in time, attachments, evaluation triples
// and the teacher, all derived from the experiment seed.
struct World {
  Catalog catalog;
  std::vector<RequestLog> train_logs;
  std::vector<RequestLog> test_logs;
  std::vector<AttachedPurchase> attached_purchases;
  std::vector<AttachedPurchase> attached_clicks;
  std::vector<EvalTriple> asph_triples;
  std::vector<EvalTriple> isph_triples;
  TeacherMode teacher_mode = TeacherMode::kOracle;
  std::optional<TeacherParams> teacher;
  TeacherTrainReport teacher_report;

  TeacherFn teacher_fn() const;
};

// Seeds used inside a run; all derived from the experiment seed.
std::uint64_t catalog_seed(const ExperimentConfig& c);
std::uint64_t logging_seed(const ExperimentConfig& c);
std::uint64_t sample_seed(const ExperimentConfig& c);
std::uint64_t teacher_seed(const ExperimentConfig& c);
std::uint64_t init_seed(const ExperimentConfig& c);

World build_world(const ExperimentConfig& config);
// Query samples of the training logs, with teacher scores on every item.
std::vector<QuerySample> training_samples(const World& world, const ExperimentConfig& config,
                                          SampleStats* stats = nullptr);

struct RunRecord {
  std::string name;
  std::string config_digest;
  std::uint64_t seed = 0;
  std::vector<double> epoch_loss;
  std::vector<MetricReport> reports;
  TaskCounters counters;
  double wall_clock_seconds = 0.0;

  // Value of `metric` at k; throws EvaluationError when absent.
  double metric(std::string_view metric, std::size_t k) const;
};

class TrainingDiverged : public NumericalFault {
 public:
  TrainingDiverged(const std::string& what, int epoch, std::shared_ptr<const PrerankParams> last_good)
      : NumericalFault(what), epoch(epoch), last_good(std::move(last_good)) {}
  int epoch;
  std::shared_ptr<const PrerankParams> last_good;  // parameters after the last finished epoch
};

using Progress = std::function<void(const std::string&)>;

// Optimizes a two-tower model with the per-sample loss, mean over batches of
// query samples, Adam, deterministic shuffling per epoch.
PrerankParams optimize(const ExperimentConfig& config, const Catalog& catalog, std::span<const QuerySample> samples,
                       const LogitLoss& loss, std::uint64_t seed, std::vector<double>* epoch_loss,
                       TaskCounters* counters = nullptr, const Progress& progress = {});

struct TrainResult {
  PrerankParams params;
  RunRecord record;
};

// One-model training with the configured total loss, then evaluation.
TrainResult train(const ExperimentConfig& config, const World& world, std::span<const QuerySample> samples,
                  const Progress& progress = {});
TrainResult train(const ExperimentConfig& config, const Progress& progress = {});

struct ScoreInputs {
  std::optional<double> ctr;
  std::optional<double> cvr;
  std::optional<double> er;
  std::optional<double> logit;
};

// one_model: the logit; ctr_x_cvr: pCTR * pCVR; ctr_x_cvr_x_er: pCTR * pCVR * pER.
double combine_scores(Strategy strategy, const ScoreInputs& in);

struct BaselineParams {
  Strategy strategy = Strategy::kCtrXCvr;
  PrerankParams ctr;
  PrerankParams cvr;
  std::optional<PrerankParams> er;
};

struct BaselineResult {
  BaselineParams params;
  RunRecord record;
};

// Samples each pointwise model is trained on: CTR on exposures (label: click),
// CVR on clicked exposures (label: purchase), ER on every item (label: exposed).
std::vector<QuerySample> ctr_training_view(std::span<const QuerySample> samples);
std::vector<QuerySample> cvr_training_view(std::span<const QuerySample> samples);

BaselineResult train_baseline(const ExperimentConfig& config, const World& world,
                              std::span<const QuerySample> samples, const Progress& progress = {});
BaselineResult train_baseline(const ExperimentConfig& config, const Progress& progress = {});

void save_baseline(const BaselineParams& params, const std::filesystem::path& dir);
BaselineParams load_baseline(const std::filesystem::path& dir);

// Scorers over a catalog; item embeddings are computed once. Scorers copy the
// parameters and keep a reference to the catalog.
Scorer model_scorer(const PrerankParams& params, const Catalog& catalog);
Scorer baseline_scorer(const BaselineParams& params, const Catalog& catalog);
Scorer teacher_scorer(const TeacherParams& params, const Catalog& catalog);  // pCTR * pCVR
Scorer oracle_scorer(const Catalog& catalog);

// ASPH and ISPH curves on the k grid (k_eval always included) and PAUC@10.
std::vector<MetricReport> evaluate(const std::string& model, const Scorer& scorer, const World& world,
                                   const ExperimentConfig& config);

// Two-sided exact binomial sign test; ties are dropped.
double sign_test_p(std::size_t wins, std::size_t losses);

struct AblationVariant {
  std::string name;
  ExperimentConfig config;
  bool multi_model = false;
};

inline constexpr const char* kAblationSuites[] = {"samples", "labels", "loss", "distill", "combination"};

// The first variant is the reference row.
std::vector<AblationVariant> ablation_variants(std::string_view suite, const ExperimentConfig& base);

struct AblationSummary {
  std::string variant;
  std::vector<double> asph;  // per seed
  std::vector<double> pauc;
  double mean_asph = 0.0;
  double mean_pauc = 0.0;
  std::size_t asph_wins = 0;  // seeds where the variant beats the reference
  std::size_t asph_losses = 0;
  std::size_t pauc_wins = 0;
  std::size_t pauc_losses = 0;
  double asph_sign_p = 1.0;
  double pauc_sign_p = 1.0;
};

struct AblationResult {
  std::string suite;
  std::vector<std::uint64_t> seeds;
  std::size_t k_eval = 0;
  std::vector<RunRecord> records;  // variant-major, then seed
  std::vector<AblationSummary> summaries;
};

AblationResult run_ablation(std::string_view suite, const ExperimentConfig& base, std::span<const std::uint64_t> seeds,
                            const Progress& progress = {});

// Per-seed rows then summary rows, tab separated.
std::string ablation_to_tsv(const AblationResult& result);

// Writes reports.tsv (every metric report, loadable by read_reports) and
// runs.jsonl (one manifest line per record). Same records, same bytes.
void emit_report(std::span<const RunRecord> records, const std::filesystem::path& dir);

}  // namespace prerank
