#include "prerank/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "prerank/losses.hpp"

namespace prerank {

namespace {

constexpr std::uint64_t kAffinityStream = 0x7e;
constexpr std::uint64_t kTeacherInitStream = 0x7f;
constexpr std::uint64_t kTeacherShuffleStream = 0x80;
constexpr std::uint64_t kTeacherSplitStream = 0x81;

void init_table(nn::Matrix& m, int rows, int cols, Rng& rng) {
  m.resize(rows, cols);
  nn::init_uniform(m, 1.0 / std::sqrt(static_cast<double>(cols)), rng);
}

double behavior_share(const Catalog& catalog, const UserProfile& user, CategoryId c) {
  std::size_t total = 0, hits = 0;
  for (const auto* part : {&user.realtime, &user.short_term, &user.long_term}) {
    for (const auto& b : *part) {
      ++total;
      hits += catalog.item(b.item).category == c ? 1 : 0;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

struct Layout {
  int profile, terms, qcat, qfreq, id, icat, price, seller, title, dense;
};

Layout layout(const TeacherConfig& c) {
  Layout l{};
  int at = 0;
  l.profile = at;
  at += 3 * c.profile_dim;
  l.terms = at;
  at += c.term_dim;
  l.qcat = at;
  at += c.query_cat_dim;
  l.qfreq = at;
  at += c.query_freq_dim;
  l.id = at;
  at += c.item_id_dim;
  l.icat = at;
  at += c.item_cat_dim;
  l.price = at;
  at += c.price_dim;
  l.seller = at;
  at += c.seller_dim;
  l.title = at;
  at += c.title_dim;
  l.dense = at;
  return l;
}

nn::RowVector teacher_input(const TeacherParams& t, const Catalog& catalog, UserId u, QueryId q, ItemId p) {
  const TeacherConfig& c = t.config;
  const Layout l = layout(c);
  const UserProfile& user = catalog.user(u);
  const QueryDef& query = catalog.query(q);
  const ItemDef& item = catalog.item(p);
  nn::RowVector x(c.input_width());
  for (int k = 0; k < kProfileFields; ++k) {
    x.segment(l.profile + k * c.profile_dim, c.profile_dim) = t.profile[k].row(user.profile[k]);
  }
  nn::RowVector terms = nn::RowVector::Zero(c.term_dim);
  for (TermId w : query.terms) terms += t.query_terms.row(w);
  x.segment(l.terms, c.term_dim) = terms / static_cast<double>(std::max<std::size_t>(query.terms.size(), 1));
  x.segment(l.qcat, c.query_cat_dim) = t.query_cats.row(query.category);
  x.segment(l.qfreq, c.query_freq_dim) = t.query_freq.row(query.frequency_bucket);
  x.segment(l.id, c.item_id_dim) = t.item_ids.row(p);
  x.segment(l.icat, c.item_cat_dim) = t.item_cats.row(item.category);
  x.segment(l.price, c.price_dim) = t.price.row(item.price_bucket);
  x.segment(l.seller, c.seller_dim) = t.seller.row(item.seller);
  nn::RowVector title = nn::RowVector::Zero(c.title_dim);
  for (TermId w : item.title) title += t.title_terms.row(w);
  x.segment(l.title, c.title_dim) = title / static_cast<double>(std::max<std::size_t>(item.title.size(), 1));
  x(l.dense) = behavior_share(catalog, user, item.category);
  if (c.affinity_noise >= 0.0) {
    x(l.dense + 1) = catalog.preference(u, p) +
                     c.affinity_noise * hash_gaussian(c.seed ^ kAffinityStream, static_cast<std::uint64_t>(u),
                                                      static_cast<std::uint64_t>(p), 0);
  }
  return x;
}

void teacher_input_backward(const TeacherParams& t, const Catalog& catalog, const ExposureRecord& r,
                            const nn::RowVector& dx, TeacherParams& g) {
  const TeacherConfig& c = t.config;
  const Layout l = layout(c);
  const UserProfile& user = catalog.user(r.user);
  const QueryDef& query = catalog.query(r.query);
  const ItemDef& item = catalog.item(r.item);
  for (int k = 0; k < kProfileFields; ++k) {
    g.profile[k].row(user.profile[k]) += dx.segment(l.profile + k * c.profile_dim, c.profile_dim);
  }
  if (!query.terms.empty()) {
    const nn::RowVector share = dx.segment(l.terms, c.term_dim) / static_cast<double>(query.terms.size());
    for (TermId w : query.terms) g.query_terms.row(w) += share;
  }
  g.query_cats.row(query.category) += dx.segment(l.qcat, c.query_cat_dim);
  g.query_freq.row(query.frequency_bucket) += dx.segment(l.qfreq, c.query_freq_dim);
  g.item_ids.row(r.item) += dx.segment(l.id, c.item_id_dim);
  g.item_cats.row(item.category) += dx.segment(l.icat, c.item_cat_dim);
  g.price.row(item.price_bucket) += dx.segment(l.price, c.price_dim);
  g.seller.row(item.seller) += dx.segment(l.seller, c.seller_dim);
  if (!item.title.empty()) {
    const nn::RowVector share = dx.segment(l.title, c.title_dim) / static_cast<double>(item.title.size());
    for (TermId w : item.title) g.title_terms.row(w) += share;
  }
}

double bce(double z, bool y) { return softplus(z) - (y ? z : 0.0); }

}  // namespace

TeacherScores oracle_teacher(const Catalog& catalog, UserId u, QueryId q, ItemId p) {
  const auto t = catalog.true_probabilities(u, q, p);
  return {t.click, t.purchase_given_click};
}

void TeacherConfig::validate() const {
  if (profile_dim <= 0 || term_dim <= 0 || query_cat_dim <= 0 || query_freq_dim <= 0 || item_id_dim <= 0 ||
      item_cat_dim <= 0 || price_dim <= 0 || seller_dim <= 0 || title_dim <= 0) {
    throw ConfigError("teacher dimensions must be positive");
  }
  for (int h : hidden) {
    if (h <= 0) throw ConfigError("teacher hidden widths must be positive");
  }
  if (epochs < 0 || batch_size <= 0 || !(learning_rate > 0.0)) throw ConfigError("invalid teacher optimizer settings");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("teacher validation fraction must be in [0, 1)");
  }
}

nn::TensorList TeacherParams::tensors() {
  nn::TensorList out;
  for (int k = 0; k < kProfileFields; ++k) out.emplace_back("profile" + std::to_string(k), &profile[k]);
  out.emplace_back("query_terms", &query_terms);
  out.emplace_back("query_cats", &query_cats);
  out.emplace_back("query_freq", &query_freq);
  out.emplace_back("item_ids", &item_ids);
  out.emplace_back("item_cats", &item_cats);
  out.emplace_back("price", &price);
  out.emplace_back("seller", &seller);
  out.emplace_back("title_terms", &title_terms);
  mlp.append_tensors("mlp", out);
  return out;
}

TeacherParams TeacherParams::zeros_like() const {
  TeacherParams z = *this;
  nn::zero(z.tensors());
  return z;
}

namespace {

TeacherParams allocate_teacher(const TeacherConfig& config, int n_items, int n_categories, int query_vocab,
                               int title_vocab, int price_buckets, int sellers, int freq_buckets) {
  config.validate();
  TeacherParams t;
  t.config = config;
  t.n_items = n_items;
  t.n_categories = n_categories;
  t.query_terms_vocab = query_vocab;
  t.title_terms_vocab = title_vocab;
  t.price_buckets = price_buckets;
  t.sellers = sellers;
  t.frequency_buckets = freq_buckets;
  Rng rng = make_rng(config.seed, kTeacherInitStream, 0);
  for (int k = 0; k < kProfileFields; ++k) init_table(t.profile[k], kProfileCardinality[k], config.profile_dim, rng);
  init_table(t.query_terms, query_vocab, config.term_dim, rng);
  init_table(t.query_cats, n_categories, config.query_cat_dim, rng);
  init_table(t.query_freq, freq_buckets, config.query_freq_dim, rng);
  init_table(t.item_ids, n_items, config.item_id_dim, rng);
  init_table(t.item_cats, n_categories, config.item_cat_dim, rng);
  init_table(t.price, price_buckets, config.price_dim, rng);
  init_table(t.seller, sellers, config.seller_dim, rng);
  init_table(t.title_terms, title_vocab, config.title_dim, rng);
  t.mlp.init(config.input_width(), config.hidden, 2, rng);
  return t;
}

}  // namespace

TeacherParams init_teacher(const TeacherConfig& config, const Catalog& catalog) {
  const SimConfig& s = catalog.config;
  return allocate_teacher(config, static_cast<int>(catalog.items.size()), s.n_categories, s.query_vocab,
                          s.title_vocab, s.price_buckets, s.n_sellers, s.frequency_buckets);
}

std::vector<ExposureRecord> exposure_records(std::span<const RequestLog> logs) {
  std::vector<ExposureRecord> out;
  for (const auto& log : logs) {
    for (ItemId p : log.exposures) {
      const bool click = std::find(log.clicks.begin(), log.clicks.end(), p) != log.clicks.end();
      const bool buy = std::find(log.purchases.begin(), log.purchases.end(), p) != log.purchases.end();
      out.push_back({log.user_id, log.query_id, p, click, buy});
    }
  }
  return out;
}

std::vector<CalibrationBin> calibration_deciles(std::vector<std::pair<double, double>> pairs) {
  std::stable_sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<CalibrationBin> bins;
  if (pairs.empty()) return bins;
  const std::size_t n = pairs.size();
  for (std::size_t d = 0; d < 10; ++d) {
    const std::size_t lo = d * n / 10, hi = (d + 1) * n / 10;
    if (hi <= lo) continue;
    CalibrationBin b;
    for (std::size_t i = lo; i < hi; ++i) {
      b.mean_predicted += pairs[i].first;
      b.mean_observed += pairs[i].second;
    }
    b.count = hi - lo;
    b.mean_predicted /= static_cast<double>(b.count);
    b.mean_observed /= static_cast<double>(b.count);
    bins.push_back(b);
  }
  return bins;
}

TeacherParams train_learned_teacher(const Catalog& catalog, std::span<const ExposureRecord> records,
                                    const TeacherConfig& config, TeacherTrainReport* report) {
  config.validate();
  if (records.empty()) throw ConfigError("teacher training needs exposure records");
  const auto clicked = std::count_if(records.begin(), records.end(), [](const auto& r) { return r.click; });
  if (clicked == 0) throw ConfigError("no clicked exposures: the conversion head cannot be trained");

  // Deterministic hash split of the records into fit and held-out parts.
  std::vector<ExposureRecord> fit, held_out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const bool hold = hash_uniform(derive_seed(config.seed, kTeacherSplitStream, i)) < config.validation_fraction;
    (hold ? held_out : fit).push_back(records[i]);
  }
  if (fit.empty()) throw ConfigError("teacher validation split left no training records");
  const auto fit_clicked = std::count_if(fit.begin(), fit.end(), [](const auto& r) { return r.click; });
  if (fit_clicked == 0) throw ConfigError("no clicked exposures: the conversion head cannot be trained");

  TeacherParams t = init_teacher(config, catalog);
  TeacherParams best = t;
  double best_loss = std::numeric_limits<double>::infinity();
  TeacherParams g = t.zeros_like();
  auto p_list = t.tensors();
  auto g_list = g.tensors();
  nn::Adam adam({config.learning_rate});
  const nn::MlpOptions opts{config.leaky_slope, config.ln_eps};
  TeacherTrainReport rep;

  std::vector<std::size_t> order(fit.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng = make_rng(config.seed, kTeacherShuffleStream, static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), rng);
    double ctr_sum = 0.0, cvr_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const auto n = static_cast<Eigen::Index>(end - start);
      nn::Matrix x(n, config.input_width());
      for (std::size_t i = start; i < end; ++i) {
        const auto& r = fit[order[i]];
        x.row(static_cast<Eigen::Index>(i - start)) = teacher_input(t, catalog, r.user, r.query, r.item);
      }
      nn::MlpCache cache;
      const nn::Matrix z = nn::mlp_forward(t.mlp, x, opts, &cache);
      nn::Matrix dz = nn::Matrix::Zero(n, 2);
      const double inv = 1.0 / static_cast<double>(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto& r = fit[order[start + static_cast<std::size_t>(i)]];
        ctr_sum += bce(z(i, 0), r.click);
        dz(i, 0) = (sigmoid(z(i, 0)) - (r.click ? 1.0 : 0.0)) * inv;
        if (r.click) {
          cvr_sum += bce(z(i, 1), r.purchase);
          dz(i, 1) = (sigmoid(z(i, 1)) - (r.purchase ? 1.0 : 0.0)) * inv;
        }
      }
      nn::zero(g_list);
      const nn::Matrix dx = nn::mlp_backward(t.mlp, cache, dz, opts, g.mlp);
      for (Eigen::Index i = 0; i < n; ++i) {
        teacher_input_backward(t, catalog, fit[order[start + static_cast<std::size_t>(i)]], dx.row(i), g);
      }
      if (!nn::all_finite(g_list)) throw NumericalFault("teacher training diverged at epoch " + std::to_string(epoch));
      adam.step(p_list, g_list);
    }
    rep.epoch_loss.push_back(ctr_sum / static_cast<double>(fit.size()) + cvr_sum / static_cast<double>(fit_clicked));
    if (!held_out.empty()) {
      const double v = ctr_log_loss(t, catalog, held_out);
      rep.validation_loss.push_back(v);
      if (v < best_loss) {
        best_loss = v;
        best = t;
        rep.best_epoch = epoch;
      }
    }
  }
  if (held_out.empty() || rep.best_epoch < 0) {
    rep.best_epoch = config.epochs - 1;
  } else {
    t = std::move(best);
  }

  std::vector<std::pair<double, double>> ctr_pairs, cvr_pairs;
  double clicks = 0.0;
  for (const auto& r : records) {
    const auto s = teacher_predict(t, catalog, r.user, r.query, r.item);
    ctr_pairs.emplace_back(s.ctr, r.click ? 1.0 : 0.0);
    if (r.click) cvr_pairs.emplace_back(s.cvr, r.purchase ? 1.0 : 0.0);
    rep.mean_pctr += s.ctr;
    clicks += r.click ? 1.0 : 0.0;
  }
  rep.mean_pctr /= static_cast<double>(records.size());
  rep.click_rate = clicks / static_cast<double>(records.size());
  rep.ctr_deciles = calibration_deciles(std::move(ctr_pairs));
  rep.cvr_deciles = calibration_deciles(std::move(cvr_pairs));
  if (report) *report = std::move(rep);
  return t;
}

TeacherScores teacher_predict(const TeacherParams& params, const Catalog& catalog, UserId u, QueryId q, ItemId p) {
  const nn::Matrix x = teacher_input(params, catalog, u, q, p);
  const nn::Matrix z = nn::mlp_forward(params.mlp, x, {params.config.leaky_slope, params.config.ln_eps});
  return {sigmoid(z(0, 0)), sigmoid(z(0, 1))};
}

double ctr_log_loss(const TeacherParams& params, const Catalog& catalog, std::span<const ExposureRecord> records) {
  if (records.empty()) throw EvaluationError("log-loss over an empty record set");
  double sum = 0.0;
  for (const auto& r : records) {
    const nn::Matrix x = teacher_input(params, catalog, r.user, r.query, r.item);
    const nn::Matrix z = nn::mlp_forward(params.mlp, x, {params.config.leaky_slope, params.config.ln_eps});
    sum += bce(z(0, 0), r.click);
  }
  return sum / static_cast<double>(records.size());
}

nn::Checkpoint teacher_checkpoint(TeacherParams& params) {
  const TeacherConfig& c = params.config;
  std::map<std::string, double> h = {
      {"profile_dim", c.profile_dim},
      {"term_dim", c.term_dim},
      {"query_cat_dim", c.query_cat_dim},
      {"query_freq_dim", c.query_freq_dim},
      {"item_id_dim", c.item_id_dim},
      {"item_cat_dim", c.item_cat_dim},
      {"price_dim", c.price_dim},
      {"seller_dim", c.seller_dim},
      {"title_dim", c.title_dim},
      {"leaky_slope", c.leaky_slope},
      {"ln_eps", c.ln_eps},
      {"affinity_noise", c.affinity_noise},
      {"seed_hi", static_cast<double>(c.seed >> 32)},
      {"seed_lo", static_cast<double>(c.seed & 0xffffffffULL)},
      {"n_hidden", static_cast<double>(c.hidden.size())},
      {"vocab_items", params.n_items},
      {"vocab_categories", params.n_categories},
      {"vocab_query_terms", params.query_terms_vocab},
      {"vocab_title_terms", params.title_terms_vocab},
      {"vocab_price_buckets", params.price_buckets},
      {"vocab_sellers", params.sellers},
      {"vocab_frequency_buckets", params.frequency_buckets},
  };
  for (std::size_t i = 0; i < c.hidden.size(); ++i) h["hidden_" + std::to_string(i)] = c.hidden[i];
  return nn::make_checkpoint(kTeacherModelType, std::move(h), params.tensors());
}

TeacherParams teacher_from_checkpoint(const nn::Checkpoint& ckpt) {
  if (ckpt.model_type != kTeacherModelType) {
    throw IoError("checkpoint holds a '" + ckpt.model_type + "' model, expected '" + kTeacherModelType + "'");
  }
  const auto get = [&](const std::string& key) {
    auto it = ckpt.header.find(key);
    if (it == ckpt.header.end()) throw IoError("checkpoint header is missing '" + key + "'");
    return it->second;
  };
  const auto geti = [&](const std::string& key) { return static_cast<int>(get(key)); };
  TeacherConfig c;
  c.profile_dim = geti("profile_dim");
  c.term_dim = geti("term_dim");
  c.query_cat_dim = geti("query_cat_dim");
  c.query_freq_dim = geti("query_freq_dim");
  c.item_id_dim = geti("item_id_dim");
  c.item_cat_dim = geti("item_cat_dim");
  c.price_dim = geti("price_dim");
  c.seller_dim = geti("seller_dim");
  c.title_dim = geti("title_dim");
  c.leaky_slope = get("leaky_slope");
  c.ln_eps = get("ln_eps");
  c.affinity_noise = get("affinity_noise");
  c.seed = (static_cast<std::uint64_t>(get("seed_hi")) << 32) | static_cast<std::uint64_t>(get("seed_lo"));
  c.hidden.clear();
  for (int i = 0; i < geti("n_hidden"); ++i) c.hidden.push_back(geti("hidden_" + std::to_string(i)));
  TeacherParams t = allocate_teacher(c, geti("vocab_items"), geti("vocab_categories"), geti("vocab_query_terms"),
                                     geti("vocab_title_terms"), geti("vocab_price_buckets"), geti("vocab_sellers"),
                                     geti("vocab_frequency_buckets"));
  nn::restore_tensors(ckpt, t.tensors());
  return t;
}

void save_teacher(const TeacherParams& params, const std::filesystem::path& path) {
  TeacherParams copy = params;
  nn::save_checkpoint(teacher_checkpoint(copy), path);
}

TeacherParams load_teacher(const std::filesystem::path& path) {
  return teacher_from_checkpoint(nn::load_checkpoint(path));
}

}  // namespace prerank
