#include "prerank/samples.hpp"

#include <algorithm>
#include <map>

#include <nlohmann/json.hpp>

#include "prerank/io.hpp"

namespace prerank {

namespace {

using nlohmann::json;

constexpr std::uint64_t kCandidateStream = 0x41;

bool contains(const std::vector<ItemId>& v, ItemId x) { return std::find(v.begin(), v.end(), x) != v.end(); }

std::vector<ItemId> sorted_difference(std::vector<ItemId> a, std::vector<ItemId> b) {
  std::sort(a.begin(), a.end());
  a.erase(std::unique(a.begin(), a.end()), a.end());
  std::sort(b.begin(), b.end());
  std::vector<ItemId> out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

// Forced members first, then a uniform draw without replacement from the rest.
std::vector<ItemId> draw(const std::vector<ItemId>& pool, std::span<const ItemId> forced, int want, Rng& rng,
                         bool& truncated) {
  std::vector<ItemId> chosen;
  std::vector<ItemId> rest;
  for (ItemId p : pool) {
    const bool is_forced = std::find(forced.begin(), forced.end(), p) != forced.end();
    (is_forced ? chosen : rest).push_back(p);
  }
  const auto target = static_cast<std::size_t>(std::max(want, 0));
  truncated = pool.size() < target;
  if (chosen.size() > target) chosen.resize(target);
  const std::size_t need = std::min(target - chosen.size(), rest.size());
  for (std::size_t i = 0; i < need; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, rest.size() - 1);
    std::swap(rest[i], rest[pick(rng)]);
    chosen.push_back(rest[i]);
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

json attached_json(const AttachedPurchase& a) {
  return json{{"user_id", a.user_id},
              {"query_id", a.query_id},
              {"item_id", a.item_id},
              {"purchase_timestamp", a.purchase_timestamp},
              {"query_timestamp", a.query_timestamp},
              {"scenario_id", a.scenario_id},
              {"request_id", a.request_id}};
}

}  // namespace

std::string_view origin_name(Origin o) {
  switch (o) {
    case Origin::kEx:
      return "Ex";
    case Origin::kRc:
      return "RC";
    case Origin::kPrc:
      return "PRC";
  }
  return "?";
}

Origin origin_from_name(std::string_view name) {
  if (name == "Ex") return Origin::kEx;
  if (name == "RC") return Origin::kRc;
  if (name == "PRC") return Origin::kPrc;
  throw IoError("unknown origin '" + std::string(name) + "'");
}

std::size_t QuerySample::count(Origin o) const {
  return static_cast<std::size_t>(
      std::count_if(items.begin(), items.end(), [o](const LabeledItem& it) { return it.origin == o; }));
}

std::vector<AttachedPurchase> attach_related_queries(std::span<const UserEvent> events,
                                                     std::span<const QueryEvent> sessions,
                                                     const QueryItemRelevance& relevance, double borderline,
                                                     AttachStats* stats) {
  AttachStats local;
  local.events = events.size();

  std::map<UserId, std::vector<QueryEvent>> by_user;
  for (const auto& s : sessions) by_user[s.user].push_back(s);
  for (auto& [u, list] : by_user) {
    std::stable_sort(list.begin(), list.end(), [](const QueryEvent& a, const QueryEvent& b) {
      if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
      return a.request_id < b.request_id;
    });
  }

  std::map<std::pair<UserId, ItemId>, AttachedPurchase> best;
  for (const auto& ev : events) {
    const auto it = by_user.find(ev.user);
    const QueryEvent* related = nullptr;
    if (it != by_user.end()) {
      const auto& list = it->second;
      // Queries strictly before the event, scanned from the latest.
      auto end = std::lower_bound(list.begin(), list.end(), ev.timestamp,
                                  [](const QueryEvent& q, Timestamp t) { return q.timestamp < t; });
      for (auto q = end; q != list.begin();) {
        --q;
        if (relevance(q->query, ev.item) >= borderline) {
          related = &*q;
          break;
        }
      }
    }
    if (related == nullptr) {
      ++local.dropped_no_related_query;
      continue;
    }
    AttachedPurchase a{ev.user, related->query, ev.item, ev.timestamp, related->timestamp, ev.scenario,
                       related->request_id};
    const auto key = std::make_pair(ev.user, ev.item);
    auto [slot, inserted] = best.try_emplace(key, a);
    if (!inserted) {
      ++local.merged_duplicates;
      auto& cur = slot->second;
      const bool later_query = a.query_timestamp > cur.query_timestamp ||
                               (a.query_timestamp == cur.query_timestamp && a.request_id > cur.request_id);
      const bool same_query_earlier_event =
          a.request_id == cur.request_id && a.purchase_timestamp < cur.purchase_timestamp;
      if (later_query || same_query_earlier_event) cur = a;
    }
  }
  std::vector<AttachedPurchase> out;
  out.reserve(best.size());
  for (auto& [key, a] : best) out.push_back(a);
  local.attached = out.size();
  if (stats) *stats = local;
  return out;
}

std::vector<AttachedPurchase> attach_from_logs(std::span<const RequestLog> logs, const Catalog& catalog,
                                               EventKind kind, double borderline, AttachStats* stats) {
  std::vector<UserEvent> events;
  std::vector<QueryEvent> sessions;
  for (const auto& log : logs) {
    sessions.push_back({log.user_id, log.query_id, log.timestamp, log.request_id});
    const auto& src = kind == EventKind::kPurchase ? log.other_scenario_purchases : log.other_scenario_clicks;
    for (const auto& e : src) events.push_back({log.user_id, e.item, e.timestamp, e.scenario});
  }
  return attach_related_queries(
      events, sessions, [&catalog](QueryId q, ItemId p) { return catalog.query_relevance(q, p); }, borderline,
      stats);
}

CandidateDraw sample_candidates(const RequestLog& log, int m, int l, std::uint64_t seed,
                                std::span<const ItemId> forced_rc, std::span<const ItemId> forced_prc) {
  if (m < 0 || l < 0) throw ConfigError("candidate sample sizes must be >= 0");
  Rng rng = make_rng(seed, kCandidateStream, static_cast<std::uint64_t>(log.request_id));
  const auto rc_pool = sorted_difference(log.prerank_out, log.exposures);
  const auto prc_pool = sorted_difference(log.matching_out, log.prerank_out);
  CandidateDraw out;
  out.rc = draw(rc_pool, forced_rc, m, rng, out.rc_truncated);
  out.prc = draw(prc_pool, forced_prc, l, rng, out.prc_truncated);
  return out;
}

std::vector<ItemLabels> assign_labels(const RequestLog& log, std::span<const AttachedPurchase> attached_purchases,
                                      std::span<const AttachedPurchase> attached_clicks,
                                      std::span<const ItemId> items, const LabelRules& rules) {
  std::vector<ItemId> universe(log.matching_out.begin(), log.matching_out.end());
  std::sort(universe.begin(), universe.end());
  auto attached_to_here = [&](std::span<const AttachedPurchase> att, ItemId p) {
    return std::any_of(att.begin(), att.end(), [&](const AttachedPurchase& a) {
      return a.item_id == p && a.request_id == log.request_id && a.user_id == log.user_id;
    });
  };
  std::vector<ItemLabels> out;
  out.reserve(items.size());
  for (ItemId p : items) {
    if (!std::binary_search(universe.begin(), universe.end(), p)) {
      throw LabelingError("item " + std::to_string(p) + " is not a candidate of request " +
                          std::to_string(log.request_id));
    }
    ItemLabels lab;
    lab.in_scenario_purchase = contains(log.purchases, p);
    lab.in_scenario_click = contains(log.clicks, p);
    lab.aspl = lab.in_scenario_purchase ||
               (rules.purchase == LabelSource::kAllScenario && attached_to_here(attached_purchases, p));
    lab.ascl = lab.in_scenario_click || lab.aspl ||
               (rules.click == LabelSource::kAllScenario && attached_to_here(attached_clicks, p));
    lab.ael = contains(log.exposures, p) || lab.ascl;
    out.push_back(lab);
  }
  return out;
}

std::vector<std::vector<AttachedPurchase>> group_by_request(std::span<const AttachedPurchase> attached,
                                                            std::int64_t n_requests) {
  std::vector<std::vector<AttachedPurchase>> out(static_cast<std::size_t>(std::max<std::int64_t>(n_requests, 0)));
  for (const auto& a : attached) {
    if (a.request_id >= 0 && a.request_id < n_requests) out[static_cast<std::size_t>(a.request_id)].push_back(a);
  }
  return out;
}

std::vector<QuerySample> build_query_samples(std::span<const RequestLog> logs,
                                             std::span<const AttachedPurchase> attached_purchases,
                                             std::span<const AttachedPurchase> attached_clicks,
                                             const SampleConfig& config, const TeacherFn& teacher,
                                             SampleStats* stats) {
  std::int64_t max_id = -1;
  for (const auto& l : logs) max_id = std::max(max_id, l.request_id);
  const auto purchases_by_req = group_by_request(attached_purchases, max_id + 1);
  const auto clicks_by_req = group_by_request(attached_clicks, max_id + 1);

  SampleStats local;
  std::vector<QuerySample> out;
  out.reserve(logs.size());
  for (const auto& log : logs) {
    ++local.requests;
    if (log.exposures.empty()) {
      ++local.skipped_no_exposure;
      continue;
    }
    const auto& att_p = purchases_by_req[static_cast<std::size_t>(log.request_id)];
    const auto& att_c = clicks_by_req[static_cast<std::size_t>(log.request_id)];

    std::vector<ItemId> forced;
    if (config.include_attached) {
      if (config.labels.purchase == LabelSource::kAllScenario) {
        for (const auto& a : att_p) forced.push_back(a.item_id);
      }
      if (config.labels.click == LabelSource::kAllScenario) {
        for (const auto& a : att_c) forced.push_back(a.item_id);
      }
    }
    const auto draw = sample_candidates(log, config.rc, config.prc, config.seed, forced, forced);

    QuerySample s;
    s.request_id = log.request_id;
    s.user_id = log.user_id;
    s.query_id = log.query_id;
    s.timestamp = log.timestamp;
    s.rc_truncated = draw.rc_truncated;
    s.prc_truncated = draw.prc_truncated;
    local.rc_truncated += draw.rc_truncated ? 1 : 0;
    local.prc_truncated += draw.prc_truncated ? 1 : 0;

    std::vector<ItemId> ids(log.exposures.begin(), log.exposures.end());
    std::vector<Origin> origins(ids.size(), Origin::kEx);
    for (ItemId p : draw.rc) {
      ids.push_back(p);
      origins.push_back(Origin::kRc);
    }
    for (ItemId p : draw.prc) {
      ids.push_back(p);
      origins.push_back(Origin::kPrc);
    }
    const auto labels = assign_labels(log, att_p, att_c, ids, config.labels);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      LabeledItem li;
      li.item = ids[i];
      li.origin = origins[i];
      li.aspl = labels[i].aspl;
      li.ascl = labels[i].ascl;
      li.ael = labels[i].ael;
      li.in_scenario_click = labels[i].in_scenario_click;
      li.in_scenario_purchase = labels[i].in_scenario_purchase;
      if (teacher) li.teacher = teacher(log.user_id, log.query_id, ids[i]);
      s.items.push_back(li);
    }
    out.push_back(std::move(s));
    ++local.emitted;
  }
  if (stats) *stats = local;
  return out;
}

std::string sample_to_line(const QuerySample& s) {
  json items = json::array();
  for (const auto& it : s.items) {
    json ji{{"item_id", it.item},
            {"origin", origin_name(it.origin)},
            {"aspl", it.aspl ? 1 : 0},
            {"ascl", it.ascl ? 1 : 0},
            {"ael", it.ael ? 1 : 0},
            {"in_scenario_click", it.in_scenario_click ? 1 : 0},
            {"in_scenario_purchase", it.in_scenario_purchase ? 1 : 0}};
    if (it.teacher) {
      ji["pctr"] = it.teacher->ctr;
      ji["pcvr"] = it.teacher->cvr;
    }
    items.push_back(std::move(ji));
  }
  json j{{"request_id", s.request_id},   {"user_id", s.user_id},           {"query_id", s.query_id},
         {"timestamp", s.timestamp},     {"rc_truncated", s.rc_truncated}, {"prc_truncated", s.prc_truncated},
         {"items", std::move(items)}};
  return j.dump();
}

QuerySample sample_from_line(std::string_view line) {
  try {
    const json j = json::parse(line);
    QuerySample s;
    s.request_id = j.at("request_id").get<std::int64_t>();
    s.user_id = j.at("user_id").get<UserId>();
    s.query_id = j.at("query_id").get<QueryId>();
    s.timestamp = j.at("timestamp").get<Timestamp>();
    s.rc_truncated = j.at("rc_truncated").get<bool>();
    s.prc_truncated = j.at("prc_truncated").get<bool>();
    for (const auto& ji : j.at("items")) {
      LabeledItem it;
      it.item = ji.at("item_id").get<ItemId>();
      it.origin = origin_from_name(ji.at("origin").get<std::string>());
      it.aspl = ji.at("aspl").get<int>() != 0;
      it.ascl = ji.at("ascl").get<int>() != 0;
      it.ael = ji.at("ael").get<int>() != 0;
      it.in_scenario_click = ji.value("in_scenario_click", 0) != 0;
      it.in_scenario_purchase = ji.value("in_scenario_purchase", 0) != 0;
      if (ji.contains("pctr")) it.teacher = TeacherScores{ji.at("pctr").get<double>(), ji.at("pcvr").get<double>()};
      s.items.push_back(it);
    }
    return s;
  } catch (const json::exception& e) {
    throw IoError(std::string("sample parse error: ") + e.what());
  }
}

void save_samples(std::span<const QuerySample> samples, const std::filesystem::path& path) {
  std::string out;
  for (const auto& s : samples) {
    out += sample_to_line(s);
    out += '\n';
  }
  write_file(path, out);
}

std::vector<QuerySample> load_samples(const std::filesystem::path& path) {
  std::vector<QuerySample> out;
  for (const auto& line : read_lines(path)) out.push_back(sample_from_line(line));
  return out;
}

std::string attached_to_line(const AttachedPurchase& a) { return attached_json(a).dump(); }

AttachedPurchase attached_from_line(std::string_view line) {
  try {
    const json j = json::parse(line);
    return AttachedPurchase{j.at("user_id").get<UserId>(),
                            j.at("query_id").get<QueryId>(),
                            j.at("item_id").get<ItemId>(),
                            j.at("purchase_timestamp").get<Timestamp>(),
                            j.at("query_timestamp").get<Timestamp>(),
                            j.at("scenario_id").get<ScenarioId>(),
                            j.at("request_id").get<std::int64_t>()};
  } catch (const json::exception& e) {
    throw IoError(std::string("attachment parse error: ") + e.what());
  }
}

}  // namespace prerank
