#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "prerank/common.hpp"

namespace prerank {

enum class BehaviorKind : std::uint8_t { kClick = 0, kCollect = 1, kPurchase = 2, kCart = 3 };

struct Behavior {
  ItemId item = 0;
  BehaviorKind kind = BehaviorKind::kClick;
  ScenarioId scenario = 0;
  Timestamp timestamp = 0;  // negative: before the logging window opens at t = 0
};

// Profile fields: gender, age bucket, purchase power.
inline constexpr int kProfileFields = 3;
inline constexpr int kProfileCardinality[kProfileFields] = {2, 6, 5};
inline constexpr int kPurchasePowerField = 2;

struct UserProfile {
  UserId id = 0;
  std::vector<int> profile;            // one bucket per profile field
  std::vector<Behavior> realtime;      // B_r: within one day of t = 0
  std::vector<Behavior> short_term;    // B_s: days 2..10
  std::vector<Behavior> long_term;     // B_l: days 11..30
  std::vector<double> latent;
  std::vector<double> category_interest;  // sums to 1

  std::vector<Behavior> all_behaviors() const;
};

struct QueryDef {
  QueryId id = 0;
  std::vector<TermId> terms;
  CategoryId category = 0;                      // primary category
  std::vector<CategoryId> relevant_categories;  // contains `category`
  int frequency_bucket = 0;
  std::vector<double> latent;

  bool is_relevant_category(CategoryId c) const;
};

struct ItemDef {
  ItemId id = 0;
  CategoryId category = 0;
  std::vector<TermId> title;
  int price_bucket = 0;
  int seller = 0;
  double quality = 0.0;
  std::vector<double> latent;
};

struct SimConfig {
  int n_categories = 20;
  int latent_dim = 8;
  int query_vocab = 400;
  int title_vocab = 600;
  int price_buckets = 5;
  int n_sellers = 50;
  int frequency_buckets = 5;
  int behaviors_per_user = 40;
  int history_days = 30;
  // Ground-truth response model. All scores are logits.
  double click_bias = -5.5;
  double click_pref = 1.0;
  double click_match = 1.2;
  double click_semantic = 0.4;
  double click_quality = 0.5;
  double cvr_bias = -4.5;
  double cvr_pref = 0.6;
  double cvr_price = 0.8;
  double cvr_match = 0.6;
  double relevance_match = 2.0;
  double query_relevance_match = 2.5;
  double interest_sharpness = 2.0;
  double category_spread = 0.6;  // within-category item latent spread
  // Out-of-search activity per user per day.
  double other_purchase_rate = 0.5;
  double other_click_rate = 1.5;
  double intent_carryover = 0.7;
  int n_other_scenarios = 3;  // scenario ids 1..n
};

struct TrueProbabilities {
  double click = 0.0;
  double purchase_given_click = 0.0;
};

class Catalog {
 public:
  SimConfig config;
  std::uint64_t seed = 0;
  std::vector<UserProfile> users;
  std::vector<QueryDef> queries;
  std::vector<ItemDef> items;
  std::vector<std::vector<double>> category_centroids;
  std::vector<std::vector<ItemId>> items_by_category;
  std::vector<std::vector<QueryId>> queries_by_category;

  const UserProfile& user(UserId u) const;
  const QueryDef& query(QueryId q) const;
  const ItemDef& item(ItemId p) const;

  // User-item affinity through the latent factors.
  double preference(UserId u, ItemId p) const;
  // Query-item semantic affinity.
  double semantic(QueryId q, ItemId p) const;
  bool category_match(QueryId q, ItemId p) const;
  // User-independent query-item relevance in [0, 1]; 0.5 is the borderline.
  double query_relevance(QueryId q, ItemId p) const;
  // Ground-truth relevance of an item for a user issuing a query, in [0, 1].
  double relevance(UserId u, QueryId q, ItemId p) const;
  double relevance_logit(UserId u, QueryId q, ItemId p) const;
  TrueProbabilities true_probabilities(UserId u, QueryId q, ItemId p) const;

  // Digest over the relevance table (all user x query x item cells are too
  // many; a fixed deterministic probe set of cells is hashed instead).
  std::string relevance_digest() const;

  void rebuild_indexes();
};

Catalog gen_catalog(std::uint64_t seed, int n_users, int n_queries, int n_items,
                    const SimConfig& config = {});

TrueProbabilities true_probabilities(const Catalog& catalog, UserId u, QueryId q, ItemId p);

struct ScenarioEvent {
  ItemId item = 0;
  ScenarioId scenario = 0;
  Timestamp timestamp = 0;

  bool operator==(const ScenarioEvent&) const = default;
};

struct RequestLog {
  std::int64_t request_id = 0;
  UserId user_id = 0;
  QueryId query_id = 0;
  Timestamp timestamp = 0;
  std::vector<ItemId> matching_out;
  std::vector<ItemId> prerank_out;
  std::vector<ItemId> exposures;
  std::vector<ItemId> clicks;
  std::vector<ItemId> purchases;
  std::vector<ScenarioEvent> other_scenario_purchases;
  std::vector<ScenarioEvent> other_scenario_clicks;

  bool operator==(const RequestLog&) const = default;
};

struct CascadePolicy {
  int matching_size = 500;
  int prerank_size = 50;  // |R|
  int exposure_size = 10;
  double matching_noise = 1.0;
  double prerank_noise = 0.8;
  double ranking_noise = 0.3;
  int n_days = 30;
};

struct UserResponse {
  bool click = false;
  bool purchase = false;
};

// The user event model: click ~ Bernoulli(pClick), purchase | click ~ Bernoulli(pCVR).
UserResponse sample_user_response(const TrueProbabilities& t, Rng& rng);

// Checks RequestLog invariants; throws ContractViolation with a description.
void validate_log(const RequestLog& log, const Catalog& catalog, const CascadePolicy& policy);

std::vector<RequestLog> run_cascade_logging(const Catalog& catalog, const CascadePolicy& policy,
                                            int n_requests, std::uint64_t seed);

// Score the logging pre-ranking policy assigns to an item for a request.
// Re-applying it to matching_out reproduces prerank_out.
double logging_prerank_score(const Catalog& catalog, const CascadePolicy& policy, std::uint64_t seed,
                             std::int64_t request_id, UserId u, QueryId q, ItemId p);

// Serialization. Catalog: one versioned JSON document. Logs: one JSON object
// per line with the RequestLog field names.
std::string serialize_catalog(const Catalog& catalog);
Catalog parse_catalog(std::string_view text);
void save_catalog(const Catalog& catalog, const std::filesystem::path& path);
Catalog load_catalog(const std::filesystem::path& path);

std::string log_to_line(const RequestLog& log);
RequestLog log_from_line(std::string_view line);
void save_logs(std::span<const RequestLog> logs, const std::filesystem::path& path);
std::vector<RequestLog> load_logs(const std::filesystem::path& path);

}  // namespace prerank
