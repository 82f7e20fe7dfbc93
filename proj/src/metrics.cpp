#include "prerank/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "prerank/io.hpp"

namespace prerank {

namespace {

std::vector<std::size_t> target_positions(const std::vector<ItemId>& ranked, std::span<const ItemId> targets) {
  std::vector<std::size_t> pos;
  for (ItemId t : targets) {
    const auto it = std::find(ranked.begin(), ranked.end(), t);
    pos.push_back(it == ranked.end() ? std::numeric_limits<std::size_t>::max()
                                     : static_cast<std::size_t>(it - ranked.begin()));
  }
  return pos;
}

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto at = line.find(sep, start);
    out.emplace_back(line.substr(start, at == std::string_view::npos ? std::string_view::npos : at - start));
    if (at == std::string_view::npos) break;
    start = at + 1;
  }
  return out;
}

}  // namespace

std::string_view eval_mode_name(EvalMode m) { return m == EvalMode::kInScenario ? "ISPH" : "ASPH"; }

std::vector<EvalTriple> build_eval_triples(std::span<const RequestLog> logs,
                                           std::span<const AttachedPurchase> attached, EvalMode mode,
                                           bool inject_targets, EvalBuildStats* stats) {
  std::int64_t max_id = -1;
  for (const auto& l : logs) max_id = std::max(max_id, l.request_id);
  const auto by_request = group_by_request(attached, max_id + 1);
  EvalBuildStats local;
  std::vector<EvalTriple> out;
  for (const auto& log : logs) {
    ++local.requests;
    EvalTriple t;
    t.request_id = log.request_id;
    t.user_id = log.user_id;
    t.query_id = log.query_id;
    t.targets = log.purchases;
    if (mode == EvalMode::kAllScenario) {
      for (const auto& a : by_request[static_cast<std::size_t>(log.request_id)]) {
        if (a.user_id == log.user_id) t.targets.push_back(a.item_id);
      }
    }
    std::sort(t.targets.begin(), t.targets.end());
    t.targets.erase(std::unique(t.targets.begin(), t.targets.end()), t.targets.end());
    if (t.targets.empty()) {
      ++local.dropped_empty_targets;
      continue;
    }
    t.pool = log.matching_out;
    if (inject_targets) {
      for (ItemId p : t.targets) {
        if (std::find(t.pool.begin(), t.pool.end(), p) == t.pool.end()) {
          t.pool.push_back(p);
          ++local.injected_targets;
        }
      }
    }
    out.push_back(std::move(t));
  }
  if (stats) *stats = local;
  return out;
}

std::vector<ItemId> rank_items(std::span<const ItemId> items, std::span<const double> scores) {
  if (items.size() != scores.size()) throw EvaluationError("one score per item required");
  std::vector<std::size_t> idx(items.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return items[a] < items[b];
  });
  std::vector<ItemId> out;
  out.reserve(items.size());
  for (std::size_t i : idx) out.push_back(items[i]);
  return out;
}

double hitrate_at_k(std::span<const ItemId> ranked, std::span<const ItemId> targets, std::size_t k) {
  if (targets.empty()) throw EvaluationError("hitrate over an empty target set");
  const std::size_t limit = std::min(k, ranked.size());
  std::size_t hits = 0;
  for (ItemId t : targets) {
    if (std::find(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(limit), t) !=
        ranked.begin() + static_cast<std::ptrdiff_t>(limit)) {
      ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(targets.size());
}

HitrateResult hitrate_curve_values(const Scorer& scorer, std::span<const EvalTriple> triples,
                                   std::span<const std::size_t> ks) {
  for (std::size_t i = 1; i < ks.size(); ++i) {
    if (ks[i] <= ks[i - 1]) throw EvaluationError("k grid must be strictly increasing");
  }
  if (triples.empty()) throw EvaluationError("no evaluation triples");
  HitrateResult r;
  r.ks.assign(ks.begin(), ks.end());
  r.triples = triples.size();
  // Per-k sums of hit fractions; each fraction is hits/|T| with small integers,
  // accumulated in triple order.
  std::vector<double> sums(ks.size(), 0.0);
  for (const auto& t : triples) {
    if (t.pool.empty()) throw EvaluationError("empty candidate pool");
    if (t.targets.empty()) throw EvaluationError("empty target set");
    const auto scores = scorer(t.user_id, t.query_id, t.pool);
    const auto ranked = rank_items(t.pool, scores);
    const auto pos = target_positions(ranked, t.targets);
    bool clamped = false;
    for (std::size_t j = 0; j < ks.size(); ++j) {
      const std::size_t k = std::min(ks[j], ranked.size());
      clamped = clamped || ks[j] > ranked.size();
      const auto hits = static_cast<std::size_t>(std::count_if(pos.begin(), pos.end(), [k](std::size_t p) { return p < k; }));
      sums[j] += static_cast<double>(hits) / static_cast<double>(t.targets.size());
    }
    r.clamped += clamped ? 1 : 0;
  }
  static bool warned = false;
  if (r.clamped > 0 && !warned) {
    warned = true;
    std::fprintf(stderr, "warning: k exceeds the candidate pool for %zu triples; clamped to the pool size\n",
                 r.clamped);
  }
  for (double s : sums) r.values.push_back(s / static_cast<double>(triples.size()));
  return r;
}

double asph_at_k(const Scorer& scorer, std::span<const EvalTriple> triples, std::size_t k) {
  const std::size_t ks[] = {k};
  return hitrate_curve_values(scorer, triples, ks).values[0];
}

double isph_at_k(const Scorer& scorer, std::span<const EvalTriple> triples, std::size_t k) {
  return asph_at_k(scorer, triples, k);
}

double request_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw EvaluationError("one label per score required");
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      ++pairs;
      if (scores[i] > scores[j]) {
        wins += 1.0;
      } else if (scores[i] == scores[j]) {
        wins += 0.5;
      }
    }
  }
  if (pairs == 0) return std::numeric_limits<double>::quiet_NaN();
  return wins / static_cast<double>(pairs);
}

PaucResult pauc_at_10(std::span<const std::vector<double>> scores, std::span<const std::vector<int>> labels) {
  if (scores.size() != labels.size()) throw EvaluationError("one label list per request required");
  PaucResult r;
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].size() > 10) throw EvaluationError("more than 10 exposures in a request");
    const double auc = request_auc(scores[i], labels[i]);
    if (std::isnan(auc)) {
      ++r.skipped_requests;
      continue;
    }
    sum += auc;
    ++r.valid_requests;
  }
  if (r.valid_requests == 0) throw EvaluationError("PAUC@10 undefined: no request has both a purchase and a non-purchase");
  r.value = sum / static_cast<double>(r.valid_requests);
  return r;
}

PaucResult pauc_at_10(const Scorer& scorer, std::span<const RequestLog> logs) {
  std::vector<std::vector<double>> scores;
  std::vector<std::vector<int>> labels;
  for (const auto& log : logs) {
    if (log.purchases.empty() || log.purchases.size() == log.exposures.size()) continue;
    scores.push_back(scorer(log.user_id, log.query_id, log.exposures));
    std::vector<int> l;
    for (ItemId p : log.exposures) {
      l.push_back(std::find(log.purchases.begin(), log.purchases.end(), p) != log.purchases.end() ? 1 : 0);
    }
    labels.push_back(std::move(l));
  }
  return pauc_at_10(scores, labels);
}

void check_report(const MetricReport& report) {
  const std::string where = report.model + " " + report.metric;
  if (report.ks.size() != report.values.size() || report.ks.empty()) {
    throw ContractViolation(where + ": ks and values differ in length");
  }
  const bool curve = report.metric == "ASPH" || report.metric == "ISPH";
  for (std::size_t i = 0; i < report.ks.size(); ++i) {
    if (!(report.values[i] >= 0.0 && report.values[i] <= 1.0)) {
      throw ContractViolation(where + ": value outside [0, 1]");
    }
    if (i == 0) continue;
    if (report.ks[i] <= report.ks[i - 1]) throw ContractViolation(where + ": k grid not increasing");
    if (curve && report.values[i] < report.values[i - 1]) {
      throw ContractViolation(where + ": hitrate curve decreases in k");
    }
  }
}

std::string triples_digest(std::span<const EvalTriple> triples) {
  std::string bytes;
  for (const auto& t : triples) {
    bytes += std::to_string(t.request_id) + ':' + std::to_string(t.user_id) + ':' + std::to_string(t.query_id) + '|';
    for (ItemId p : t.pool) bytes += std::to_string(p) + ',';
    bytes += '|';
    for (ItemId p : t.targets) bytes += std::to_string(p) + ',';
    bytes += '\n';
  }
  return hex_digest(bytes);
}

MetricReport hitrate_report(const std::string& model, EvalMode mode, const Scorer& scorer,
                            std::span<const EvalTriple> triples, std::span<const std::size_t> ks,
                            const std::string& config_digest) {
  const auto r = hitrate_curve_values(scorer, triples, ks);
  MetricReport rep;
  rep.model = model;
  rep.metric = std::string(eval_mode_name(mode));
  rep.ks = r.ks;
  rep.values = r.values;
  rep.count = r.triples;
  rep.dataset_digest = triples_digest(triples);
  rep.config_digest = config_digest;
  return rep;
}

std::string reports_to_tsv(std::span<const MetricReport> reports) {
  std::string out = "model\tmetric\tk\tvalue\tcount\tdataset_digest\tconfig_digest\n";
  for (const auto& r : reports) {
    if (r.ks.size() != r.values.size()) throw EvaluationError("report grid and values differ in length");
    for (std::size_t i = 0; i < r.ks.size(); ++i) {
      out += r.model + '\t' + r.metric + '\t' + std::to_string(r.ks[i]) + '\t' + format_double(r.values[i]) + '\t' +
             std::to_string(r.count) + '\t' + r.dataset_digest + '\t' + r.config_digest + '\n';
    }
  }
  return out;
}

std::vector<MetricReport> reports_from_tsv(std::string_view text) {
  std::vector<MetricReport> out;
  std::istringstream in{std::string(text)};
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line.rfind("model\t", 0) == 0) continue;
    }
    const auto f = split(line, '\t');
    if (f.size() != 7) throw IoError("malformed report row: " + line);
    const bool same = !out.empty() && out.back().model == f[0] && out.back().metric == f[1] &&
                      out.back().dataset_digest == f[5] && out.back().config_digest == f[6];
    if (!same) {
      MetricReport r;
      r.model = f[0];
      r.metric = f[1];
      r.count = std::stoull(f[4]);
      r.dataset_digest = f[5];
      r.config_digest = f[6];
      out.push_back(std::move(r));
    }
    out.back().ks.push_back(std::stoull(f[2]));
    out.back().values.push_back(std::stod(f[3]));
  }
  return out;
}

void write_reports(std::span<const MetricReport> reports, const std::filesystem::path& path) {
  write_file(path, reports_to_tsv(reports));
}

std::vector<MetricReport> read_reports(const std::filesystem::path& path) { return reports_from_tsv(read_file(path)); }

}  // namespace prerank
