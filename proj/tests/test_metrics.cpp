#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <random>

#include "doctest.h"
#include "prerank/metrics.hpp"

using namespace prerank;

namespace {

// Rank of an item = number of items that beat it under (score desc, id asc).
double brute_hitrate(const std::vector<ItemId>& pool, const std::vector<double>& scores,
                     const std::vector<ItemId>& targets, std::size_t k) {
  std::size_t hits = 0;
  for (ItemId t : targets) {
    const auto ti = static_cast<std::size_t>(std::find(pool.begin(), pool.end(), t) - pool.begin());
    if (ti == pool.size()) continue;
    std::size_t better = 0;
    for (std::size_t j = 0; j < pool.size(); ++j) {
      if (scores[j] > scores[ti] || (scores[j] == scores[ti] && pool[j] < pool[ti])) ++better;
    }
    if (better < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(targets.size());
}

// Mann-Whitney statistic with mid-ranks.
double rank_auc(const std::vector<double>& s, const std::vector<int>& y) {
  const std::size_t n = s.size();
  double pos = 0, neg = 0, rank_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (s[j] < s[i]) less += 1;
      if (s[j] == s[i]) equal += 1;
    }
    const double mid = less + (equal + 1) / 2.0;
    if (y[i]) {
      rank_sum += mid;
      pos += 1;
    } else {
      neg += 1;
    }
  }
  return (rank_sum - pos * (pos + 1) / 2) / (pos * neg);
}

Scorer table_scorer(const std::map<ItemId, double>& table) {
  return [table](UserId, QueryId, std::span<const ItemId> items) {
    std::vector<double> out;
    for (ItemId p : items) out.push_back(table.at(p));
    return out;
  };
}

}  // namespace

TEST_CASE("hitrate examples") {
  const std::vector<ItemId> ranked = {1, 2, 3, 4};
  CHECK(hitrate_at_k(ranked, std::vector<ItemId>{2, 4}, 3) == 0.5);
  CHECK(hitrate_at_k(ranked, std::vector<ItemId>{1, 3}, 3) == 1.0);
  CHECK(hitrate_at_k(ranked, std::vector<ItemId>{1}, 0) == 0.0);
  CHECK_THROWS_AS(hitrate_at_k(ranked, std::vector<ItemId>{}, 2), EvaluationError);
}

TEST_CASE("single target placement") {
  std::map<ItemId, double> table;
  for (ItemId p = 0; p < 6; ++p) table[p] = 10.0 - p;
  const std::vector<EvalTriple> triples = {{0, 0, 0, {0, 1, 2, 3, 4, 5}, {3}}};
  CHECK(asph_at_k(table_scorer(table), triples, 3) == 0.0);
  CHECK(asph_at_k(table_scorer(table), triples, 5) == 1.0);
  CHECK(asph_at_k(table_scorer(table), triples, 50) == 1.0);  // clamped
}

TEST_CASE("PAUC examples") {
  const std::vector<std::vector<double>> s = {{0.9, 0.1, 0.5}};
  const std::vector<std::vector<int>> y = {{0, 1, 0}};
  CHECK(pauc_at_10(s, y).value == 0.0);
  const std::vector<std::vector<double>> best = {{0.2, 0.9, 0.5}};
  CHECK(pauc_at_10(best, y).value == 1.0);
  const std::vector<std::vector<double>> tied = {{0.4, 0.4, 0.4}};
  CHECK(pauc_at_10(tied, y).value == 0.5);
  const std::vector<std::vector<int>> none = {{0, 0, 0}};
  CHECK_THROWS_AS(pauc_at_10(s, none), EvaluationError);
}

TEST_CASE("metrics agree with brute force on random tiny instances") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 12);
    std::vector<ItemId> pool;
    for (int i = 0; i < n; ++i) pool.push_back(static_cast<ItemId>(rng() % 40));
    std::sort(pool.begin(), pool.end());
    pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<double> scores;
    std::map<ItemId, double> table;
    for (ItemId p : pool) {
      const double v = static_cast<double>(rng() % 5);  // frequent ties
      scores.push_back(v);
      table[p] = v;
    }
    std::vector<ItemId> targets;
    for (ItemId p : pool) {
      if (rng() % 3 == 0) targets.push_back(p);
    }
    if (targets.empty()) targets.push_back(pool[0]);
    std::sort(targets.begin(), targets.end());
    const std::size_t k = rng() % (pool.size() + 2);

    const auto ranked = rank_items(pool, scores);
    CHECK(hitrate_at_k(ranked, targets, k) == brute_hitrate(pool, scores, targets, k));
    const std::vector<EvalTriple> triple = {{trial, 0, 0, pool, targets}};
    const double expected = brute_hitrate(pool, scores, targets, k);
    CHECK(asph_at_k(table_scorer(table), triple, k) == expected);
    CHECK(isph_at_k(table_scorer(table), triple, k) == expected);

    std::vector<int> labels;
    for (std::size_t i = 0; i < pool.size(); ++i) labels.push_back(rng() % 2 ? 1 : 0);
    const bool valid = std::count(labels.begin(), labels.end(), 1) > 0 && std::count(labels.begin(), labels.end(), 0) > 0;
    if (valid && pool.size() <= 10) {
      const std::vector<std::vector<double>> s = {scores};
      const std::vector<std::vector<int>> y = {labels};
      CHECK(pauc_at_10(s, y).value == rank_auc(scores, labels));
    }
    // the ranking depends only on scores and ids, not on input order
    auto perm = pool;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> perm_scores;
    for (ItemId p : perm) perm_scores.push_back(table[p]);
    CHECK(rank_items(perm, perm_scores) == ranked);
  }
}

TEST_CASE("random scores hit k over pool size") {
  std::mt19937_64 rng(5);
  std::vector<EvalTriple> triples;
  for (int i = 0; i < 10000; ++i) {
    EvalTriple t;
    t.request_id = i;
    for (ItemId p = 0; p < 500; ++p) t.pool.push_back(p);
    t.targets = {static_cast<ItemId>(rng() % 500)};
    triples.push_back(std::move(t));
  }
  std::uint64_t counter = 0;
  const Scorer random = [&counter](UserId, QueryId, std::span<const ItemId> items) {
    std::vector<double> s;
    for (std::size_t i = 0; i < items.size(); ++i) s.push_back(hash_uniform(derive_seed(77, counter, i, 0)));
    ++counter;
    return s;
  };
  CHECK(std::abs(asph_at_k(random, triples, 50) - 0.1) <= 0.01);
}

TEST_CASE("evaluation triples by mode") {
  RequestLog a;
  a.request_id = 0;
  a.user_id = 1;
  a.query_id = 2;
  a.matching_out = {1, 2, 3, 4, 5, 6};
  a.prerank_out = {1, 2, 3};
  a.exposures = {1, 2};
  a.clicks = {1};
  a.purchases = {1};
  RequestLog b = a;
  b.request_id = 1;
  b.purchases.clear();
  b.clicks.clear();
  const std::vector<RequestLog> logs = {a, b};
  const std::vector<AttachedPurchase> attached = {{1, 2, 9, 50, 10, 2, 1}, {1, 2, 1, 60, 10, 2, 0}};
  EvalBuildStats stats;
  const auto in = build_eval_triples(logs, attached, EvalMode::kInScenario, false, &stats);
  CHECK(stats.dropped_empty_targets == 1);
  REQUIRE(in.size() == 1);
  const auto all = build_eval_triples(logs, attached, EvalMode::kAllScenario, false);
  REQUIRE(all.size() == 2);
  CHECK(all[0] == in[0]);  // duplicate purchase of item 1 collapses
  CHECK(all[1].targets == std::vector<ItemId>{9});
  CHECK(all[1].pool == a.matching_out);
  const auto injected = build_eval_triples(logs, attached, EvalMode::kAllScenario, true, &stats);
  CHECK(injected[1].pool.back() == 9);
  CHECK(stats.injected_targets == 1);
}

TEST_CASE("logging policy recovers every in-scenario purchase at the output size") {
  const Catalog c = gen_catalog(21, 150, 50, 1200);
  const CascadePolicy policy;
  const std::uint64_t seed = 8;
  const auto logs = run_cascade_logging(c, policy, 800, seed);
  const auto triples = build_eval_triples(logs, {}, EvalMode::kInScenario, false);
  REQUIRE(!triples.empty());
  std::map<std::pair<UserId, QueryId>, std::int64_t> unused;
  std::size_t at = 0;
  const Scorer logging = [&](UserId u, QueryId q, std::span<const ItemId> items) {
    const auto id = triples[at++].request_id;
    std::vector<double> s;
    for (ItemId p : items) s.push_back(logging_prerank_score(c, policy, seed, id, u, q, p));
    return s;
  };
  const std::size_t ks[] = {10, 50};
  const auto r = hitrate_curve_values(logging, triples, ks);
  CHECK(r.values[1] == 1.0);
  CHECK(r.values[0] <= r.values[1]);
}

TEST_CASE("curves are monotone and reports round-trip") {
  const std::vector<EvalTriple> triples = {{0, 0, 0, {1, 2, 3, 4, 5}, {2, 5}}, {1, 0, 0, {1, 2, 3, 4}, {4}}};
  const std::map<ItemId, double> table = {{1, 0.5}, {2, 0.1}, {3, 0.9}, {4, 0.3}, {5, 0.2}};
  const std::size_t ks[] = {1, 2, 3, 4};
  const auto a = hitrate_report("model_a", EvalMode::kAllScenario, table_scorer(table), triples, ks, "abc");
  const auto b = hitrate_report("model_b", EvalMode::kAllScenario, table_scorer(table), triples, ks, "def");
  for (std::size_t i = 1; i < a.values.size(); ++i) CHECK(a.values[i] >= a.values[i - 1]);
  CHECK(a.dataset_digest == b.dataset_digest);
  const std::vector<MetricReport> reports = {a, b};
  const auto dir = std::filesystem::temp_directory_path() / "prerank_test_metrics";
  write_reports(reports, dir / "report.tsv");
  CHECK(read_reports(dir / "report.tsv") == reports);
  std::filesystem::remove_all(dir);
  const std::size_t bad[] = {3, 2};
  CHECK_THROWS_AS(hitrate_curve_values(table_scorer(table), triples, bad), EvaluationError);
}

TEST_CASE("report checks reject broken curves") {
  MetricReport r{"m", "ASPH", {1, 5, 10}, {0.1, 0.3, 0.3}, 4, "", ""};
  CHECK_NOTHROW(check_report(r));
  auto down = r;
  down.values[2] = 0.2;
  CHECK_THROWS_AS(check_report(down), ContractViolation);
  auto grid = r;
  grid.ks[2] = 5;
  CHECK_THROWS_AS(check_report(grid), ContractViolation);
  auto range = r;
  range.values[0] = -0.1;
  CHECK_THROWS_AS(check_report(range), ContractViolation);
  MetricReport pauc{"m", "PAUC@10", {10}, {0.6}, 4, "", ""};
  CHECK_NOTHROW(check_report(pauc));
}
