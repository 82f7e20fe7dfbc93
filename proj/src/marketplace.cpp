#include "prerank/marketplace.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "prerank/config_json.hpp"
#include "prerank/io.hpp"

namespace prerank {

namespace {

using nlohmann::json;

constexpr std::uint64_t kCatalogStream = 0x11;
constexpr std::uint64_t kScheduleStream = 0x21;
constexpr std::uint64_t kRequestStream = 0x22;
constexpr std::uint64_t kPrerankNoise = 0x31;
constexpr int kCatalogFormatVersion = 1;

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<double> gaussian_vector(Rng& rng, int n, double scale) {
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = normal(rng);
  return v;
}

// Draws an index with probability proportional to exp(logits[i]).
std::size_t sample_softmax(std::span<const double> logits, double u) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double l : logits) total += std::exp(l - mx);
  double acc = 0.0;
  const double target = u * total;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    acc += std::exp(logits[i] - mx);
    if (target < acc) return i;
  }
  return logits.size() - 1;
}

std::size_t sample_discrete(std::span<const double> probs, double u) {
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  return probs.size() - 1;
}

// Top-k of `ids` by descending score, ties by ascending id.
std::vector<ItemId> top_k(std::vector<std::pair<double, ItemId>> scored, std::size_t k) {
  k = std::min(k, scored.size());
  auto cmp = [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  };
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(), cmp);
  std::vector<ItemId> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = scored[i].second;
  return out;
}

struct ScheduledRequest {
  UserId user = 0;
  QueryId query = 0;
  Timestamp timestamp = 0;
  Timestamp window_end = 0;  // next request of the same user, or the horizon
};

std::vector<ScheduledRequest> build_schedule(const Catalog& catalog, const CascadePolicy& policy,
                                             int n_requests, std::uint64_t seed) {
  std::vector<ScheduledRequest> schedule(static_cast<std::size_t>(n_requests));
  const Timestamp horizon = static_cast<Timestamp>(policy.n_days) * kSecondsPerDay;
  const double span = static_cast<double>(horizon) / n_requests;
  const auto n_users = static_cast<std::uint64_t>(catalog.users.size());
  for (int i = 0; i < n_requests; ++i) {
    const auto idx = static_cast<std::uint64_t>(i);
    auto& r = schedule[idx];
    r.timestamp = static_cast<Timestamp>((i + hash_uniform(derive_seed(seed, kScheduleStream, idx, 0))) * span);
    r.user = static_cast<UserId>(derive_seed(seed, kScheduleStream, idx, 1) % n_users);
    const auto& profile = catalog.users[static_cast<std::size_t>(r.user)];
    const auto c = static_cast<std::size_t>(
        sample_discrete(profile.category_interest, hash_uniform(derive_seed(seed, kScheduleStream, idx, 2))));
    const auto& pool = catalog.queries_by_category[c];
    const std::uint64_t pick = derive_seed(seed, kScheduleStream, idx, 3);
    r.query = pool.empty() ? static_cast<QueryId>(pick % catalog.queries.size())
                           : pool[pick % pool.size()];
  }
  std::vector<Timestamp> next_seen(catalog.users.size(), horizon);
  for (int i = n_requests - 1; i >= 0; --i) {
    auto& r = schedule[static_cast<std::size_t>(i)];
    r.window_end = std::max(next_seen[static_cast<std::size_t>(r.user)], r.timestamp + 1);
    next_seen[static_cast<std::size_t>(r.user)] = r.timestamp;
  }
  return schedule;
}

ItemId sample_item_in_category(const Catalog& catalog, UserId u, CategoryId c, const QueryId* q, double uniform) {
  const auto& pool = catalog.items_by_category[static_cast<std::size_t>(c)];
  std::vector<double> logits;
  logits.reserve(pool.size());
  for (ItemId p : pool) {
    double l = catalog.preference(u, p) + catalog.items[static_cast<std::size_t>(p)].quality;
    if (q != nullptr) l += catalog.semantic(*q, p);
    logits.push_back(l);
  }
  return pool[sample_softmax(logits, uniform)];
}

std::vector<ScenarioEvent> sample_other_events(const Catalog& catalog, const RequestLog& log,
                                               Timestamp window_end, double rate_per_day, Rng& rng) {
  std::vector<ScenarioEvent> events;
  const double window_days = static_cast<double>(window_end - log.timestamp) / kSecondsPerDay;
  if (rate_per_day <= 0 || window_days <= 0) return events;
  std::poisson_distribution<int> count(rate_per_day * window_days);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const auto& cfg = catalog.config;
  const auto& user = catalog.user(log.user_id);
  const auto& query = catalog.query(log.query_id);
  const int n = count(rng);
  for (int e = 0; e < n; ++e) {
    ScenarioEvent ev;
    const Timestamp span = std::max<Timestamp>(window_end - log.timestamp - 1, 1);
    ev.timestamp = log.timestamp + 1 + static_cast<Timestamp>(unif(rng) * static_cast<double>(span));
    ev.timestamp = std::min(ev.timestamp, window_end - 1 > log.timestamp ? window_end - 1 : log.timestamp + 1);
    ev.scenario = 1 + static_cast<ScenarioId>(rng() % static_cast<std::uint64_t>(cfg.n_other_scenarios));
    const bool carry = unif(rng) < cfg.intent_carryover;
    CategoryId c;
    if (carry) {
      c = query.relevant_categories[rng() % query.relevant_categories.size()];
    } else {
      c = static_cast<CategoryId>(sample_discrete(user.category_interest, unif(rng)));
    }
    if (catalog.items_by_category[static_cast<std::size_t>(c)].empty()) continue;
    ev.item = sample_item_in_category(catalog, log.user_id, c, carry ? &log.query_id : nullptr, unif(rng));
    events.push_back(ev);
  }
  std::sort(events.begin(), events.end(), [](const ScenarioEvent& a, const ScenarioEvent& b) {
    if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
    return a.item < b.item;
  });
  return events;
}

RequestLog generate_request(const Catalog& catalog, const CascadePolicy& policy, std::uint64_t seed,
                            std::int64_t index, const ScheduledRequest& sched) {
  RequestLog log;
  log.request_id = index;
  log.user_id = sched.user;
  log.query_id = sched.query;
  log.timestamp = sched.timestamp;
  Rng rng = make_rng(seed, kRequestStream, static_cast<std::uint64_t>(index));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  const UserId u = log.user_id;
  const QueryId q = log.query_id;

  // Matching: one relevance-ranked pool mixing text and personalized signals.
  std::vector<std::pair<double, ItemId>> scored;
  scored.reserve(catalog.items.size());
  for (const auto& item : catalog.items) {
    const double m = 2.0 * (catalog.category_match(q, item.id) ? 1.0 : 0.0) + 0.5 * catalog.semantic(q, item.id) +
                     0.3 * catalog.preference(u, item.id) + policy.matching_noise * normal(rng);
    scored.emplace_back(m, item.id);
  }
  log.matching_out = top_k(std::move(scored), static_cast<std::size_t>(policy.matching_size));

  scored.clear();
  for (ItemId p : log.matching_out) {
    scored.emplace_back(logging_prerank_score(catalog, policy, seed, index, u, q, p), p);
  }
  log.prerank_out = top_k(scored, static_cast<std::size_t>(policy.prerank_size));

  scored.clear();
  std::vector<TrueProbabilities> truth;
  for (ItemId p : log.prerank_out) {
    const auto t = catalog.true_probabilities(u, q, p);
    scored.emplace_back(std::log(t.click) + std::log(t.purchase_given_click) + policy.ranking_noise * normal(rng), p);
  }
  log.exposures = top_k(std::move(scored), static_cast<std::size_t>(policy.exposure_size));

  for (ItemId p : log.exposures) {
    const UserResponse r = sample_user_response(catalog.true_probabilities(u, q, p), rng);
    if (r.click) log.clicks.push_back(p);
    if (r.purchase) log.purchases.push_back(p);
  }

  log.other_scenario_purchases =
      sample_other_events(catalog, log, sched.window_end, catalog.config.other_purchase_rate, rng);
  log.other_scenario_clicks =
      sample_other_events(catalog, log, sched.window_end, catalog.config.other_click_rate, rng);
  return log;
}

// --- JSON helpers -----------------------------------------------------------

json behaviors_to_json(const std::vector<Behavior>& bs) {
  json arr = json::array();
  for (const auto& b : bs) {
    arr.push_back({b.item, static_cast<int>(b.kind), b.scenario, b.timestamp});
  }
  return arr;
}

std::vector<Behavior> behaviors_from_json(const json& arr) {
  std::vector<Behavior> out;
  for (const auto& e : arr) {
    Behavior b;
    b.item = e.at(0).get<ItemId>();
    b.kind = static_cast<BehaviorKind>(e.at(1).get<int>());
    b.scenario = e.at(2).get<ScenarioId>();
    b.timestamp = e.at(3).get<Timestamp>();
    out.push_back(b);
  }
  return out;
}

json events_to_json(const std::vector<ScenarioEvent>& events) {
  json arr = json::array();
  for (const auto& e : events) {
    arr.push_back({{"item_id", e.item}, {"scenario_id", e.scenario}, {"timestamp", e.timestamp}});
  }
  return arr;
}

std::vector<ScenarioEvent> events_from_json(const json& arr) {
  std::vector<ScenarioEvent> out;
  for (const auto& e : arr) {
    out.push_back({e.at("item_id").get<ItemId>(), e.at("scenario_id").get<ScenarioId>(),
                   e.at("timestamp").get<Timestamp>()});
  }
  return out;
}

}  // namespace

// --- Catalog ------------------------------------------------------------------

std::vector<Behavior> UserProfile::all_behaviors() const {
  std::vector<Behavior> all;
  all.insert(all.end(), long_term.begin(), long_term.end());
  all.insert(all.end(), short_term.begin(), short_term.end());
  all.insert(all.end(), realtime.begin(), realtime.end());
  return all;
}

bool QueryDef::is_relevant_category(CategoryId c) const {
  return std::find(relevant_categories.begin(), relevant_categories.end(), c) != relevant_categories.end();
}

const UserProfile& Catalog::user(UserId u) const {
  if (u < 0 || static_cast<std::size_t>(u) >= users.size()) throw LookupError("unknown user id " + std::to_string(u));
  return users[static_cast<std::size_t>(u)];
}

const QueryDef& Catalog::query(QueryId q) const {
  if (q < 0 || static_cast<std::size_t>(q) >= queries.size())
    throw LookupError("unknown query id " + std::to_string(q));
  return queries[static_cast<std::size_t>(q)];
}

const ItemDef& Catalog::item(ItemId p) const {
  if (p < 0 || static_cast<std::size_t>(p) >= items.size()) throw LookupError("unknown item id " + std::to_string(p));
  return items[static_cast<std::size_t>(p)];
}

double Catalog::preference(UserId u, ItemId p) const {
  return dot(user(u).latent, item(p).latent) / std::sqrt(static_cast<double>(config.latent_dim));
}

double Catalog::semantic(QueryId q, ItemId p) const {
  return dot(query(q).latent, item(p).latent) / static_cast<double>(config.latent_dim);
}

bool Catalog::category_match(QueryId q, ItemId p) const { return query(q).is_relevant_category(item(p).category); }

double Catalog::query_relevance(QueryId q, ItemId p) const {
  const double m = category_match(q, p) ? 1.0 : -1.0;
  return sigmoid(config.query_relevance_match * m + semantic(q, p) - 0.5);
}

double Catalog::relevance_logit(UserId u, QueryId q, ItemId p) const {
  const double m = category_match(q, p) ? 1.0 : -1.0;
  return preference(u, p) + config.relevance_match * m + semantic(q, p) + item(p).quality;
}

double Catalog::relevance(UserId u, QueryId q, ItemId p) const { return sigmoid(relevance_logit(u, q, p)); }

TrueProbabilities Catalog::true_probabilities(UserId u, QueryId q, ItemId p) const {
  const auto& usr = user(u);
  const auto& it = item(p);
  const double m = category_match(q, p) ? 1.0 : -1.0;
  const double pref = preference(u, p);
  const double power = static_cast<double>(usr.profile[kPurchasePowerField]) / (kProfileCardinality[kPurchasePowerField] - 1);
  const double price = config.price_buckets > 1 ? static_cast<double>(it.price_bucket) / (config.price_buckets - 1) : 0.0;
  const double price_fit = 1.0 - 2.0 * std::abs(power - price);
  TrueProbabilities t;
  t.click = sigmoid(config.click_bias + config.click_pref * pref + config.click_match * m +
                    config.click_semantic * semantic(q, p) + config.click_quality * it.quality);
  t.purchase_given_click = sigmoid(config.cvr_bias + config.cvr_pref * pref + config.cvr_price * price_fit +
                                   config.cvr_match * m);
  return t;
}

std::string Catalog::relevance_digest() const {
  std::ostringstream os;
  os.precision(17);
  const std::size_t probes = 1024;
  for (std::size_t i = 0; i < probes; ++i) {
    const auto u = static_cast<UserId>((i * 7919) % users.size());
    const auto q = static_cast<QueryId>((i * 104729) % queries.size());
    const auto p = static_cast<ItemId>((i * 1299709) % items.size());
    os << relevance(u, q, p) << ';';
  }
  return hex_digest(os.str());
}

void Catalog::rebuild_indexes() {
  items_by_category.assign(static_cast<std::size_t>(config.n_categories), {});
  queries_by_category.assign(static_cast<std::size_t>(config.n_categories), {});
  for (const auto& it : items) items_by_category[static_cast<std::size_t>(it.category)].push_back(it.id);
  for (const auto& q : queries) queries_by_category[static_cast<std::size_t>(q.category)].push_back(q.id);
}

Catalog gen_catalog(std::uint64_t seed, int n_users, int n_queries, int n_items, const SimConfig& config) {
  if (n_users < 1 || n_queries < 1 || n_items < 1) {
    throw ConfigError("catalog cardinalities must all be >= 1");
  }
  if (config.n_categories < 1 || config.latent_dim < 1 || config.query_vocab < 1 || config.title_vocab < 1 ||
      config.price_buckets < 1 || config.n_sellers < 1 || config.frequency_buckets < 1 ||
      config.n_other_scenarios < 1 || config.history_days < 1 || config.behaviors_per_user < 0) {
    throw ConfigError("simulator configuration has a non-positive size");
  }
  Catalog cat;
  cat.config = config;
  cat.seed = seed;
  Rng rng = make_rng(seed, kCatalogStream);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int k = config.latent_dim;
  const int n_cat = config.n_categories;

  for (int c = 0; c < n_cat; ++c) cat.category_centroids.push_back(gaussian_vector(rng, k, 1.0));

  const int query_block = std::max(1, config.query_vocab / n_cat);
  const int title_block = std::max(1, config.title_vocab / n_cat);
  auto term_from_block = [&](int block, int vocab, CategoryId c, double in_block_prob) -> TermId {
    if (unif(rng) < in_block_prob) {
      const int base = (c * block) % vocab;
      return static_cast<TermId>((base + static_cast<int>(rng() % static_cast<std::uint64_t>(block))) % vocab);
    }
    return static_cast<TermId>(rng() % static_cast<std::uint64_t>(vocab));
  };

  cat.items.resize(static_cast<std::size_t>(n_items));
  for (int i = 0; i < n_items; ++i) {
    auto& it = cat.items[static_cast<std::size_t>(i)];
    it.id = i;
    it.category = static_cast<CategoryId>(rng() % static_cast<std::uint64_t>(n_cat));
    it.latent = gaussian_vector(rng, k, config.category_spread);
    const auto& mu = cat.category_centroids[static_cast<std::size_t>(it.category)];
    for (int d = 0; d < k; ++d) it.latent[static_cast<std::size_t>(d)] += mu[static_cast<std::size_t>(d)];
    it.quality = 0.5 * normal(rng);
    it.price_bucket = static_cast<int>(rng() % static_cast<std::uint64_t>(config.price_buckets));
    it.seller = static_cast<int>(rng() % static_cast<std::uint64_t>(config.n_sellers));
    const int title_len = 3 + static_cast<int>(rng() % 4);
    for (int t = 0; t < title_len; ++t) {
      it.title.push_back(term_from_block(title_block, config.title_vocab, it.category, 0.8));
    }
  }

  cat.queries.resize(static_cast<std::size_t>(n_queries));
  for (int i = 0; i < n_queries; ++i) {
    auto& q = cat.queries[static_cast<std::size_t>(i)];
    q.id = i;
    q.category = i < n_cat ? static_cast<CategoryId>(i) : static_cast<CategoryId>(rng() % static_cast<std::uint64_t>(n_cat));
    q.relevant_categories.push_back(q.category);
    if (n_cat > 1 && unif(rng) < 0.3) {
      CategoryId other = static_cast<CategoryId>(rng() % static_cast<std::uint64_t>(n_cat - 1));
      if (other >= q.category) ++other;
      q.relevant_categories.push_back(other);
    }
    const int n_terms = 1 + static_cast<int>(rng() % 4);
    for (int t = 0; t < n_terms; ++t) {
      q.terms.push_back(term_from_block(query_block, config.query_vocab, q.category, 0.85));
    }
    q.frequency_bucket = static_cast<int>(rng() % static_cast<std::uint64_t>(config.frequency_buckets));
    q.latent = gaussian_vector(rng, k, 0.5);
    const auto& mu = cat.category_centroids[static_cast<std::size_t>(q.category)];
    for (int d = 0; d < k; ++d) q.latent[static_cast<std::size_t>(d)] += mu[static_cast<std::size_t>(d)];
  }
  cat.rebuild_indexes();

  cat.users.resize(static_cast<std::size_t>(n_users));
  const Timestamp day = kSecondsPerDay;
  for (int i = 0; i < n_users; ++i) {
    auto& u = cat.users[static_cast<std::size_t>(i)];
    u.id = i;
    for (int f = 0; f < kProfileFields; ++f) {
      u.profile.push_back(static_cast<int>(rng() % static_cast<std::uint64_t>(kProfileCardinality[f])));
    }
    u.latent = gaussian_vector(rng, k, 1.0);
    std::vector<double> logits;
    for (int c = 0; c < n_cat; ++c) {
      logits.push_back(config.interest_sharpness * dot(u.latent, cat.category_centroids[static_cast<std::size_t>(c)]) /
                       std::sqrt(static_cast<double>(k)));
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (auto& l : logits) total += (l = std::exp(l - mx));
    for (auto& l : logits) l /= total;
    u.category_interest = logits;

    std::vector<Behavior> history;
    for (int b = 0; b < config.behaviors_per_user; ++b) {
      Behavior beh;
      beh.timestamp = -1 - static_cast<Timestamp>(unif(rng) * static_cast<double>(config.history_days * day - 2));
      const auto c = static_cast<CategoryId>(sample_discrete(u.category_interest, unif(rng)));
      if (cat.items_by_category[static_cast<std::size_t>(c)].empty()) continue;
      beh.item = sample_item_in_category(cat, u.id, c, nullptr, unif(rng));
      const double r = unif(rng);
      beh.kind = r < 0.6 ? BehaviorKind::kClick
                         : r < 0.7 ? BehaviorKind::kCollect : r < 0.85 ? BehaviorKind::kCart : BehaviorKind::kPurchase;
      beh.scenario = static_cast<ScenarioId>(rng() % static_cast<std::uint64_t>(config.n_other_scenarios + 1));
      history.push_back(beh);
    }
    std::sort(history.begin(), history.end(), [](const Behavior& a, const Behavior& b) {
      if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
      return a.item < b.item;
    });
    for (const auto& b : history) {
      const Timestamp age = -b.timestamp;
      if (age <= day) {
        u.realtime.push_back(b);
      } else if (age <= 10 * day) {
        u.short_term.push_back(b);
      } else {
        u.long_term.push_back(b);
      }
    }
  }
  return cat;
}

TrueProbabilities true_probabilities(const Catalog& catalog, UserId u, QueryId q, ItemId p) {
  return catalog.true_probabilities(u, q, p);
}

double logging_prerank_score(const Catalog& catalog, const CascadePolicy& policy, std::uint64_t seed,
                             std::int64_t request_id, UserId u, QueryId q, ItemId p) {
  return catalog.relevance_logit(u, q, p) +
         policy.prerank_noise * hash_gaussian(seed ^ kPrerankNoise, static_cast<std::uint64_t>(request_id),
                                              static_cast<std::uint64_t>(p));
}

UserResponse sample_user_response(const TrueProbabilities& t, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  UserResponse r;
  r.click = unif(rng) < t.click;
  if (r.click) r.purchase = unif(rng) < t.purchase_given_click;
  return r;
}

void validate_log(const RequestLog& log, const Catalog& catalog, const CascadePolicy& policy) {
  auto subset = [](const std::vector<ItemId>& a, const std::vector<ItemId>& b) {
    std::vector<ItemId> sb(b);
    std::sort(sb.begin(), sb.end());
    return std::all_of(a.begin(), a.end(), [&](ItemId x) { return std::binary_search(sb.begin(), sb.end(), x); });
  };
  const std::string where = "request " + std::to_string(log.request_id) + ": ";
  if (!subset(log.prerank_out, log.matching_out)) throw ContractViolation(where + "prerank_out not within matching_out");
  if (!subset(log.exposures, log.prerank_out)) throw ContractViolation(where + "exposures not within prerank_out");
  if (!subset(log.clicks, log.exposures)) throw ContractViolation(where + "clicks not within exposures");
  if (!subset(log.purchases, log.clicks)) throw ContractViolation(where + "purchases not within clicks");
  if (log.exposures.size() > 10 || static_cast<int>(log.exposures.size()) > policy.exposure_size) {
    throw ContractViolation(where + "too many exposures");
  }
  for (const auto* events : {&log.other_scenario_purchases, &log.other_scenario_clicks}) {
    for (const auto& e : *events) {
      catalog.item(e.item);
      if (e.scenario == kSearchScenario || e.scenario < 0 || e.scenario > catalog.config.n_other_scenarios) {
        throw ContractViolation(where + "other-scenario event with invalid scenario id");
      }
    }
  }
}

std::vector<RequestLog> run_cascade_logging(const Catalog& catalog, const CascadePolicy& policy, int n_requests,
                                            std::uint64_t seed) {
  if (n_requests < 0) throw ConfigError("n_requests must be >= 0");
  if (policy.prerank_size > policy.matching_size) {
    throw ConfigError("pre-ranking output size exceeds matching pool size");
  }
  if (policy.exposure_size > policy.prerank_size) throw ConfigError("exposure count exceeds pre-ranking output size");
  if (policy.exposure_size > 10) throw ConfigError("at most 10 exposures per request");
  if (policy.matching_size > static_cast<int>(catalog.items.size())) {
    throw ConfigError("matching pool larger than the catalog");
  }
  if (policy.exposure_size < 0 || policy.prerank_size < 1 || policy.n_days < 1) {
    throw ConfigError("invalid cascade policy sizes");
  }
  std::vector<RequestLog> logs;
  if (n_requests == 0) return logs;
  const auto schedule = build_schedule(catalog, policy, n_requests, seed);
  logs.reserve(static_cast<std::size_t>(n_requests));
  for (int i = 0; i < n_requests; ++i) {
    logs.push_back(generate_request(catalog, policy, seed, i, schedule[static_cast<std::size_t>(i)]));
  }
  return logs;
}

// --- Serialization ------------------------------------------------------------

std::string serialize_catalog(const Catalog& catalog) {
  json j;
  j["format"] = "prerank-catalog";
  j["version"] = kCatalogFormatVersion;
  j["seed"] = catalog.seed;
  j["config"] = catalog.config;
  j["category_centroids"] = catalog.category_centroids;
  json users = json::array();
  for (const auto& u : catalog.users) {
    users.push_back({{"id", u.id},
                     {"profile", u.profile},
                     {"latent", u.latent},
                     {"category_interest", u.category_interest},
                     {"realtime", behaviors_to_json(u.realtime)},
                     {"short_term", behaviors_to_json(u.short_term)},
                     {"long_term", behaviors_to_json(u.long_term)}});
  }
  j["users"] = std::move(users);
  json queries = json::array();
  for (const auto& q : catalog.queries) {
    queries.push_back({{"id", q.id},
                       {"terms", q.terms},
                       {"category", q.category},
                       {"relevant_categories", q.relevant_categories},
                       {"frequency_bucket", q.frequency_bucket},
                       {"latent", q.latent}});
  }
  j["queries"] = std::move(queries);
  json items = json::array();
  for (const auto& it : catalog.items) {
    items.push_back({{"id", it.id},
                     {"category", it.category},
                     {"title", it.title},
                     {"price_bucket", it.price_bucket},
                     {"seller", it.seller},
                     {"quality", it.quality},
                     {"latent", it.latent}});
  }
  j["items"] = std::move(items);
  return j.dump();
}

Catalog parse_catalog(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("catalog parse error: ") + e.what());
  }
  if (j.value("format", std::string{}) != "prerank-catalog") throw IoError("not a catalog file");
  if (j.at("version").get<int>() != kCatalogFormatVersion) throw IoError("unsupported catalog version");
  Catalog cat;
  cat.seed = j.at("seed").get<std::uint64_t>();
  cat.config = j.at("config").get<SimConfig>();
  cat.category_centroids = j.at("category_centroids").get<std::vector<std::vector<double>>>();
  for (const auto& ju : j.at("users")) {
    UserProfile u;
    u.id = ju.at("id").get<UserId>();
    u.profile = ju.at("profile").get<std::vector<int>>();
    u.latent = ju.at("latent").get<std::vector<double>>();
    u.category_interest = ju.at("category_interest").get<std::vector<double>>();
    u.realtime = behaviors_from_json(ju.at("realtime"));
    u.short_term = behaviors_from_json(ju.at("short_term"));
    u.long_term = behaviors_from_json(ju.at("long_term"));
    cat.users.push_back(std::move(u));
  }
  for (const auto& jq : j.at("queries")) {
    QueryDef q;
    q.id = jq.at("id").get<QueryId>();
    q.terms = jq.at("terms").get<std::vector<TermId>>();
    q.category = jq.at("category").get<CategoryId>();
    q.relevant_categories = jq.at("relevant_categories").get<std::vector<CategoryId>>();
    q.frequency_bucket = jq.at("frequency_bucket").get<int>();
    q.latent = jq.at("latent").get<std::vector<double>>();
    cat.queries.push_back(std::move(q));
  }
  for (const auto& ji : j.at("items")) {
    ItemDef it;
    it.id = ji.at("id").get<ItemId>();
    it.category = ji.at("category").get<CategoryId>();
    it.title = ji.at("title").get<std::vector<TermId>>();
    it.price_bucket = ji.at("price_bucket").get<int>();
    it.seller = ji.at("seller").get<int>();
    it.quality = ji.at("quality").get<double>();
    it.latent = ji.at("latent").get<std::vector<double>>();
    cat.items.push_back(std::move(it));
  }
  cat.rebuild_indexes();
  return cat;
}


void save_catalog(const Catalog& catalog, const std::filesystem::path& path) {
  write_file(path, serialize_catalog(catalog) + "\n");
}

Catalog load_catalog(const std::filesystem::path& path) { return parse_catalog(read_file(path)); }

std::string log_to_line(const RequestLog& log) {
  json j{{"request_id", log.request_id},
         {"user_id", log.user_id},
         {"query_id", log.query_id},
         {"timestamp", log.timestamp},
         {"matching_out", log.matching_out},
         {"prerank_out", log.prerank_out},
         {"exposures", log.exposures},
         {"clicks", log.clicks},
         {"purchases", log.purchases},
         {"other_scenario_purchases", events_to_json(log.other_scenario_purchases)},
         {"other_scenario_clicks", events_to_json(log.other_scenario_clicks)}};
  return j.dump();
}

RequestLog log_from_line(std::string_view line) {
  try {
    const json j = json::parse(line);
    RequestLog log;
    log.request_id = j.at("request_id").get<std::int64_t>();
    log.user_id = j.at("user_id").get<UserId>();
    log.query_id = j.at("query_id").get<QueryId>();
    log.timestamp = j.at("timestamp").get<Timestamp>();
    log.matching_out = j.at("matching_out").get<std::vector<ItemId>>();
    log.prerank_out = j.at("prerank_out").get<std::vector<ItemId>>();
    log.exposures = j.at("exposures").get<std::vector<ItemId>>();
    log.clicks = j.at("clicks").get<std::vector<ItemId>>();
    log.purchases = j.at("purchases").get<std::vector<ItemId>>();
    log.other_scenario_purchases = events_from_json(j.at("other_scenario_purchases"));
    if (j.contains("other_scenario_clicks")) log.other_scenario_clicks = events_from_json(j.at("other_scenario_clicks"));
    return log;
  } catch (const json::exception& e) {
    throw IoError(std::string("log parse error: ") + e.what());
  }
}

void save_logs(std::span<const RequestLog> logs, const std::filesystem::path& path) {
  std::string out;
  for (const auto& l : logs) {
    out += log_to_line(l);
    out += '\n';
  }
  write_file(path, out);
}

std::vector<RequestLog> load_logs(const std::filesystem::path& path) {
  std::vector<RequestLog> logs;
  for (const auto& line : read_lines(path)) logs.push_back(log_from_line(line));
  return logs;
}

}  // namespace prerank
