#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prerank/common.hpp"
#include "prerank/marketplace.hpp"

namespace prerank {

// Calibrated CTR/CVR from a teacher; CTCVR is their product.
struct TeacherScores {
  double ctr = 0.0;
  double cvr = 0.0;

  double ctcvr() const { return ctr * cvr; }
  bool operator==(const TeacherScores&) const = default;
};

enum class Origin : std::uint8_t { kEx = 0, kRc = 1, kPrc = 2 };

std::string_view origin_name(Origin o);
Origin origin_from_name(std::string_view name);

struct LabeledItem {
  ItemId item = 0;
  Origin origin = Origin::kEx;
  bool aspl = false;
  bool ascl = false;
  bool ael = false;
  // In-scenario facts for this request; kept for conservation checks.
  bool in_scenario_click = false;
  bool in_scenario_purchase = false;
  std::optional<TeacherScores> teacher;

  bool operator==(const LabeledItem&) const = default;
};

struct QuerySample {
  std::int64_t request_id = 0;
  UserId user_id = 0;
  QueryId query_id = 0;
  Timestamp timestamp = 0;
  std::vector<LabeledItem> items;  // Ex first, then RC, then PRC
  bool rc_truncated = false;
  bool prc_truncated = false;

  std::size_t count(Origin o) const;
  bool operator==(const QuerySample&) const = default;
};

// One search or out-of-search action of a user on an item.
struct UserEvent {
  UserId user = 0;
  ItemId item = 0;
  Timestamp timestamp = 0;
  ScenarioId scenario = 0;
};

// One search request as seen by the attachment procedure.
struct QueryEvent {
  UserId user = 0;
  QueryId query = 0;
  Timestamp timestamp = 0;
  std::int64_t request_id = 0;
};

struct AttachedPurchase {
  UserId user_id = 0;
  QueryId query_id = 0;
  ItemId item_id = 0;
  Timestamp purchase_timestamp = 0;
  Timestamp query_timestamp = 0;
  ScenarioId scenario_id = 0;
  std::int64_t request_id = 0;  // the request that issued the related query

  bool operator==(const AttachedPurchase&) const = default;
};

struct AttachStats {
  std::size_t events = 0;
  std::size_t attached = 0;
  std::size_t dropped_no_related_query = 0;
  std::size_t merged_duplicates = 0;
};

using QueryItemRelevance = std::function<double(QueryId, ItemId)>;

// Pairs each (user, item) with the latest earlier query of that user whose
// relevance to the item clears the borderline. One output per (user, item),
// sorted by (user, item).
std::vector<AttachedPurchase> attach_related_queries(std::span<const UserEvent> events,
                                                     std::span<const QueryEvent> sessions,
                                                     const QueryItemRelevance& relevance, double borderline,
                                                     AttachStats* stats = nullptr);

enum class EventKind { kPurchase, kClick };

// Convenience over logs: out-of-search events of the given kind, attached
// with the catalog's query-item relevance.
std::vector<AttachedPurchase> attach_from_logs(std::span<const RequestLog> logs, const Catalog& catalog,
                                               EventKind kind, double borderline = 0.5,
                                               AttachStats* stats = nullptr);

struct CandidateDraw {
  std::vector<ItemId> rc;
  std::vector<ItemId> prc;
  bool rc_truncated = false;
  bool prc_truncated = false;
};

// Uniform draws without replacement: RC from prerank_out \ exposures, PRC from
// matching_out \ prerank_out. Items in `forced_rc` / `forced_prc` that lie in
// the respective pool are taken first.
CandidateDraw sample_candidates(const RequestLog& log, int m, int l, std::uint64_t seed,
                                std::span<const ItemId> forced_rc = {}, std::span<const ItemId> forced_prc = {});

enum class LabelSource { kAllScenario, kInScenario };

struct LabelRules {
  LabelSource purchase = LabelSource::kAllScenario;
  LabelSource click = LabelSource::kAllScenario;
};

struct ItemLabels {
  bool aspl = false;
  bool ascl = false;
  bool ael = false;
  bool in_scenario_click = false;
  bool in_scenario_purchase = false;
};

// `attached_purchases` / `attached_clicks` hold the attachments pointing at
// this request. Throws LabelingError for items outside matching_out.
std::vector<ItemLabels> assign_labels(const RequestLog& log, std::span<const AttachedPurchase> attached_purchases,
                                      std::span<const AttachedPurchase> attached_clicks,
                                      std::span<const ItemId> items, const LabelRules& rules = {});

using TeacherFn = std::function<TeacherScores(UserId, QueryId, ItemId)>;

struct SampleConfig {
  int rc = 10;   // M
  int prc = 40;  // L
  std::uint64_t seed = 0;
  LabelRules labels;
  // Attached positives found in the candidate pools always enter the sample.
  bool include_attached = true;
};

struct SampleStats {
  std::size_t requests = 0;
  std::size_t emitted = 0;
  std::size_t skipped_no_exposure = 0;
  std::size_t rc_truncated = 0;
  std::size_t prc_truncated = 0;
};

std::vector<QuerySample> build_query_samples(std::span<const RequestLog> logs,
                                             std::span<const AttachedPurchase> attached_purchases,
                                             std::span<const AttachedPurchase> attached_clicks,
                                             const SampleConfig& config, const TeacherFn& teacher = {},
                                             SampleStats* stats = nullptr);

// Groups attachments by the request they point at.
std::vector<std::vector<AttachedPurchase>> group_by_request(std::span<const AttachedPurchase> attached,
                                                            std::int64_t n_requests);

std::string sample_to_line(const QuerySample& sample);
QuerySample sample_from_line(std::string_view line);
void save_samples(std::span<const QuerySample> samples, const std::filesystem::path& path);
std::vector<QuerySample> load_samples(const std::filesystem::path& path);

std::string attached_to_line(const AttachedPurchase& a);
AttachedPurchase attached_from_line(std::string_view line);

}  // namespace prerank
