#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "prerank/marketplace.hpp"
#include "prerank/samples.hpp"

namespace prerank {

enum class EvalMode { kInScenario, kAllScenario };

std::string_view eval_mode_name(EvalMode m);

struct EvalTriple {
  std::int64_t request_id = 0;
  UserId user_id = 0;
  QueryId query_id = 0;
  std::vector<ItemId> pool;     // candidate pool
  std::vector<ItemId> targets;  // sorted, unique

  bool operator==(const EvalTriple&) const = default;
};

struct EvalBuildStats {
  std::size_t requests = 0;
  std::size_t dropped_empty_targets = 0;
  std::size_t injected_targets = 0;
};

// One triple per request with a nonempty target set. In-scenario targets are
// the request's search purchases; all-scenario targets add the purchases
// attached to this request. The pool is matching_out, plus out-of-pool targets
// when `inject_targets` is set.
std::vector<EvalTriple> build_eval_triples(std::span<const RequestLog> logs,
                                           std::span<const AttachedPurchase> attached, EvalMode mode,
                                           bool inject_targets, EvalBuildStats* stats = nullptr);

// Orders items by descending score; equal scores by ascending item id.
std::vector<ItemId> rank_items(std::span<const ItemId> items, std::span<const double> scores);

// |top-k of ranked ∩ targets| / |targets|
double hitrate_at_k(std::span<const ItemId> ranked, std::span<const ItemId> targets, std::size_t k);

// Scores a list of items for one (user, query).
using Scorer = std::function<std::vector<double>(UserId, QueryId, std::span<const ItemId>)>;

struct HitrateResult {
  std::vector<std::size_t> ks;  // after clamping
  std::vector<double> values;   // macro average over triples
  std::size_t triples = 0;
  std::size_t clamped = 0;      // triples whose pool was smaller than some k
};

// Per-triple hitrate at every k of the grid, macro-averaged. k larger than a
// pool is clamped to that pool's size and counted; the first clamp in a process
// prints a warning.
HitrateResult hitrate_curve_values(const Scorer& scorer, std::span<const EvalTriple> triples,
                                   std::span<const std::size_t> ks);

// Macro-averaged hitrate@k over all-scenario (ASPH) or in-scenario (ISPH) triples.
double asph_at_k(const Scorer& scorer, std::span<const EvalTriple> triples, std::size_t k);
double isph_at_k(const Scorer& scorer, std::span<const EvalTriple> triples, std::size_t k);

// Pairwise AUC with ties counted 0.5; NaN when there is no positive or no negative.
double request_auc(std::span<const double> scores, std::span<const int> labels);

struct PaucResult {
  double value = 0.0;
  std::size_t valid_requests = 0;
  std::size_t skipped_requests = 0;
};

// Per-request AUC of purchases among exposures, averaged over requests with at
// least one purchased and one non-purchased exposure.
PaucResult pauc_at_10(std::span<const std::vector<double>> scores, std::span<const std::vector<int>> labels);
PaucResult pauc_at_10(const Scorer& scorer, std::span<const RequestLog> logs);

struct MetricReport {
  std::string model;
  std::string metric;  // ASPH, ISPH or PAUC@10
  std::vector<std::size_t> ks;
  std::vector<double> values;
  std::size_t count = 0;
  std::string dataset_digest;
  std::string config_digest;

  bool operator==(const MetricReport&) const = default;
};

// Throws ContractViolation unless ks strictly increase, values lie in [0, 1]
// and hitrate curves are nondecreasing in k.
void check_report(const MetricReport& report);

std::string triples_digest(std::span<const EvalTriple> triples);

MetricReport hitrate_report(const std::string& model, EvalMode mode, const Scorer& scorer,
                            std::span<const EvalTriple> triples, std::span<const std::size_t> ks,
                            const std::string& config_digest = "");

// Flat table: model, metric, k, value, count, dataset digest, config digest.
std::string reports_to_tsv(std::span<const MetricReport> reports);
std::vector<MetricReport> reports_from_tsv(std::string_view text);
void write_reports(std::span<const MetricReport> reports, const std::filesystem::path& path);
std::vector<MetricReport> read_reports(const std::filesystem::path& path);

}  // namespace prerank
