#include <algorithm>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "prerank/samples.hpp"

using namespace prerank;

namespace {

RequestLog toy_log() {
  RequestLog log;
  log.request_id = 0;
  log.user_id = 1;
  log.query_id = 2;
  log.timestamp = 100;
  for (ItemId p = 0; p < 30; ++p) log.matching_out.push_back(p);
  for (ItemId p = 0; p < 12; ++p) log.prerank_out.push_back(p);
  log.exposures = {0, 1, 2, 3, 4};
  log.clicks = {1, 2};
  log.purchases = {2};
  return log;
}

double always(QueryId, ItemId) { return 1.0; }

}  // namespace

TEST_CASE("attachment keeps the latest relevant query before the purchase") {
  const std::vector<QueryEvent> sessions = {{7, 1, 1, 0}, {7, 2, 5, 1}};
  const std::vector<UserEvent> buy = {{7, 40, 7, 1}};
  const auto out = attach_related_queries(buy, sessions, always, 0.5);
  REQUIRE(out.size() == 1);
  CHECK(out[0].query_id == 2);
  CHECK(out[0].query_timestamp == 5);
  CHECK(out[0].request_id == 1);
  CHECK(out[0].query_timestamp < out[0].purchase_timestamp);

  // only q1 relevant
  const auto only_q1 = attach_related_queries(
      buy, sessions, [](QueryId q, ItemId) { return q == 1 ? 0.9 : 0.1; }, 0.5);
  REQUIRE(only_q1.size() == 1);
  CHECK(only_q1[0].query_id == 1);
}

TEST_CASE("attachment drops purchases without a relevant earlier query") {
  const std::vector<QueryEvent> sessions = {{7, 1, 10, 0}};
  const std::vector<UserEvent> events = {{7, 40, 7, 1}, {7, 41, 10, 1}, {8, 40, 20, 2}};
  AttachStats stats;
  const auto out = attach_related_queries(events, sessions, always, 0.5, &stats);
  CHECK(out.empty());
  CHECK(stats.dropped_no_related_query == 3);
  const auto irrelevant = attach_related_queries(
      std::vector<UserEvent>{{7, 40, 20, 1}}, sessions, [](QueryId, ItemId) { return 0.49; }, 0.5);
  CHECK(irrelevant.empty());
}

TEST_CASE("repeat purchases collapse to one attachment per user and item") {
  const std::vector<QueryEvent> sessions = {{7, 1, 1, 0}, {7, 2, 5, 1}};
  const std::vector<UserEvent> events = {{7, 40, 7, 1}, {7, 40, 9, 2}};
  AttachStats stats;
  const auto out = attach_related_queries(events, sessions, always, 0.5, &stats);
  REQUIRE(out.size() == 1);
  CHECK(out[0].purchase_timestamp == 7);
  CHECK(stats.merged_duplicates == 1);
}

TEST_CASE("candidate sampling is disjoint and truncates small pools") {
  const RequestLog log = toy_log();
  const auto d = sample_candidates(log, 10, 40, 3);
  CHECK(d.rc.size() == 7);
  CHECK(d.rc_truncated);
  CHECK(d.prc.size() == 18);
  CHECK(d.prc_truncated);
  std::set<ItemId> seen(log.exposures.begin(), log.exposures.end());
  for (ItemId p : d.rc) CHECK(seen.insert(p).second);
  for (ItemId p : d.prc) CHECK(seen.insert(p).second);
  const auto small = sample_candidates(log, 3, 4, 3);
  CHECK(small.rc.size() == 3);
  CHECK(!small.rc_truncated);
  CHECK(small.prc.size() == 4);
  CHECK(small.rc == sample_candidates(log, 3, 4, 3).rc);
  CHECK_THROWS_AS(sample_candidates(log, -1, 4, 3), ConfigError);
  SampleConfig defaults;
  CHECK(defaults.rc == 10);
  CHECK(defaults.prc == 40);
}

TEST_CASE("candidate draws are uniform over the pool") {
  RequestLog log = toy_log();
  std::vector<int> hits(30, 0);
  const int trials = 4000;
  for (int s = 0; s < trials; ++s) {
    for (ItemId p : sample_candidates(log, 2, 0, static_cast<std::uint64_t>(s)).rc) ++hits[p];
  }
  // 7 pool items, 2 picks each: expected 2/7 of trials
  const double expected = trials * 2.0 / 7.0;
  for (ItemId p = 5; p < 12; ++p) CHECK(std::abs(hits[p] - expected) < 5 * std::sqrt(expected));
}

TEST_CASE("labels follow the cascade") {
  const RequestLog log = toy_log();
  const std::vector<AttachedPurchase> bought = {{1, 2, 20, 150, 100, 2, 0}};
  const std::vector<AttachedPurchase> clicked = {{1, 2, 21, 150, 100, 1, 0}};
  const std::vector<ItemId> items = {20, 1, 25, 2, 21, 4};
  const auto labels = assign_labels(log, bought, clicked, items);
  auto tuple = [](const ItemLabels& l) { return std::array<bool, 3>{l.aspl, l.ascl, l.ael}; };
  CHECK(tuple(labels[0]) == std::array<bool, 3>{true, true, true});
  CHECK(tuple(labels[1]) == std::array<bool, 3>{false, true, true});
  CHECK(tuple(labels[2]) == std::array<bool, 3>{false, false, false});
  CHECK(tuple(labels[3]) == std::array<bool, 3>{true, true, true});
  CHECK(tuple(labels[4]) == std::array<bool, 3>{false, true, true});
  CHECK(tuple(labels[5]) == std::array<bool, 3>{false, false, true});
  const auto in_only = assign_labels(log, bought, clicked, items, {LabelSource::kInScenario, LabelSource::kInScenario});
  CHECK(tuple(in_only[0]) == std::array<bool, 3>{false, false, false});
  CHECK(tuple(in_only[4]) == std::array<bool, 3>{false, false, false});
  CHECK_THROWS_AS(assign_labels(log, bought, clicked, std::vector<ItemId>{99}), LabelingError);
}

TEST_CASE("query samples on simulated logs") {
  const Catalog c = gen_catalog(12, 80, 30, 900);
  const auto logs = run_cascade_logging(c, CascadePolicy{}, 600, 4);
  const auto bought = attach_from_logs(logs, c, EventKind::kPurchase);
  const auto clicked = attach_from_logs(logs, c, EventKind::kClick);
  for (const auto& a : bought) CHECK(a.query_timestamp < a.purchase_timestamp);
  std::set<std::pair<UserId, ItemId>> pairs;
  for (const auto& a : bought) CHECK(pairs.insert({a.user_id, a.item_id}).second);

  SampleConfig cfg;
  cfg.seed = 5;
  SampleStats stats;
  const auto teacher = [&c](UserId u, QueryId q, ItemId p) {
    const auto t = c.true_probabilities(u, q, p);
    return TeacherScores{t.click, t.purchase_given_click};
  };
  const auto samples = build_query_samples(logs, bought, clicked, cfg, teacher, &stats);
  CHECK(stats.requests == 600);
  CHECK(samples.size() + stats.skipped_no_exposure == 600);
  std::size_t in_scenario_purchases = 0, sampled_in_scenario = 0;
  for (const auto& log : logs) in_scenario_purchases += log.purchases.size();
  for (const auto& s : samples) {
    const auto& log = logs[static_cast<std::size_t>(s.request_id)];
    CHECK(s.count(Origin::kEx) == log.exposures.size());
    CHECK(s.count(Origin::kRc) <= 10);
    CHECK(s.count(Origin::kPrc) <= 40);
    std::set<ItemId> ids;
    bool any_exposure = false;
    for (std::size_t i = 0; i < s.items.size(); ++i) {
      const auto& it = s.items[i];
      CHECK(ids.insert(it.item).second);
      CHECK((!it.aspl || it.ascl));
      CHECK((!it.ascl || it.ael));
      CHECK(it.teacher.has_value());
      if (i > 0) CHECK(static_cast<int>(s.items[i - 1].origin) <= static_cast<int>(it.origin));
      if (it.origin != Origin::kEx && it.ael) CHECK(it.ascl);
      any_exposure = any_exposure || it.ael;
      sampled_in_scenario += it.in_scenario_purchase ? 1 : 0;
    }
    CHECK(any_exposure);
  }
  CHECK(sampled_in_scenario == in_scenario_purchases);
  CHECK(build_query_samples(logs, bought, clicked, cfg, teacher) == samples);
}

TEST_CASE("samples and attachments serialize line by line") {
  const Catalog c = gen_catalog(13, 20, 10, 300);
  const auto logs = run_cascade_logging(c, CascadePolicy{.matching_size = 200}, 40, 6);
  const auto bought = attach_from_logs(logs, c, EventKind::kPurchase);
  const auto samples = build_query_samples(logs, bought, {}, SampleConfig{});
  for (const auto& s : samples) CHECK(sample_from_line(sample_to_line(s)) == s);
  for (const auto& a : bought) CHECK(attached_from_line(attached_to_line(a)) == a);
  const auto dir = std::filesystem::temp_directory_path() / "prerank_test_samples";
  save_samples(samples, dir / "samples.jsonl");
  CHECK(load_samples(dir / "samples.jsonl") == samples);
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(sample_from_line("{not json"), IoError);
}
