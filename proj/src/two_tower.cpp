#include "prerank/two_tower.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace prerank {

namespace {

constexpr const char* kPartitionNames[3] = {"realtime", "short_term", "long_term"};

Matrix gather_rows(const Matrix& table, std::span<const int> ids) {
  Matrix out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = table.row(ids[i]);
  return out;
}

void check_index(int id, Eigen::Index limit, const char* what) {
  if (id < 0 || id >= limit) throw LookupError(std::string(what) + " id " + std::to_string(id) + " out of range");
}

RowVector concat(std::initializer_list<const RowVector*> parts) {
  Eigen::Index n = 0;
  for (const auto* p : parts) n += p->size();
  RowVector out(n);
  Eigen::Index at = 0;
  for (const auto* p : parts) {
    out.segment(at, p->size()) = *p;
    at += p->size();
  }
  return out;
}

// Pieces of the user-query tower that the backward pass needs.
struct UserQueryState {
  UserQueryFeatures features;
  RowVector user;
  RowVector query_side;
  RowVector q_o;
  RowVector attention_input;
  std::array<Matrix, 3> partitions;
  QueryUnitCache query_cache;
  AttentionCache attention_cache;
};

RowVector user_vector(const PrerankParams& p, const UserQueryFeatures& f) {
  RowVector u(p.config.user_width());
  for (int k = 0; k < kProfileFields; ++k) {
    check_index(f.profile[k], p.profile[k].rows(), "profile");
    u.segment(k * p.config.profile_dim, p.config.profile_dim) = p.profile[k].row(f.profile[k]);
  }
  return u;
}

RowVector query_side_vector(const PrerankParams& p, const UserQueryFeatures& f) {
  check_index(f.frequency_bucket, p.query_freq.rows(), "frequency bucket");
  RowVector cats = RowVector::Zero(p.config.query_cat_dim);
  for (CategoryId c : f.relevant_categories) {
    check_index(c, p.query_cats.rows(), "category");
    cats += p.query_cats.row(c);
  }
  if (!f.relevant_categories.empty()) cats /= static_cast<double>(f.relevant_categories.size());
  RowVector freq = p.query_freq.row(f.frequency_bucket);
  return concat({&freq, &cats});
}

Matrix behavior_matrix(const PrerankParams& p, std::span<const ItemId> items, const Catalog& catalog) {
  Matrix b(static_cast<Eigen::Index>(items.size()), p.config.behavior_width());
  for (std::size_t i = 0; i < items.size(); ++i) {
    check_index(items[i], p.item_ids.rows(), "item");
    const auto row = static_cast<Eigen::Index>(i);
    b.row(row).head(p.config.item_id_dim) = p.item_ids.row(items[i]);
    b.row(row).tail(p.config.item_cat_dim) = p.item_cats.row(catalog.item(items[i]).category);
  }
  return b;
}

RowVector user_query_input(const PrerankParams& p, const Catalog& catalog, const UserQueryFeatures& f,
                           UserQueryState* state) {
  UserQueryState local;
  UserQueryState& s = state ? *state : local;
  s.features = f;
  if (f.terms.empty()) throw ContractViolation("query has no terms");
  for (TermId t : f.terms) check_index(t, p.query_terms.rows(), "query term");
  s.user = user_vector(p, f);
  s.query_side = query_side_vector(p, f);
  const Matrix terms = gather_rows(p.query_terms, f.terms);
  s.q_o = query_semantic_unit(terms, s.user, p.w1, &s.query_cache);
  s.attention_input = concat({&s.q_o, &s.query_side, &s.user});
  for (int r = 0; r < 3; ++r) s.partitions[r] = behavior_matrix(p, f.behaviors[r], catalog);
  const RowVector h_b = behavior_attention(s.q_o, s.query_side, s.user,
                                           {&s.partitions[0], &s.partitions[1], &s.partitions[2]},
                                           p.attention, &s.attention_cache);
  return concat({&s.user, &s.query_side, &s.q_o, &h_b});
}

RowVector item_input(const PrerankParams& p, const ItemFeatures& f) {
  const ModelConfig& c = p.config;
  check_index(f.item, p.item_ids.rows(), "item");
  check_index(f.category, p.item_cats.rows(), "category");
  check_index(f.price_bucket, p.price.rows(), "price bucket");
  check_index(f.seller, p.seller.rows(), "seller");
  RowVector x(c.item_width());
  Eigen::Index at = 0;
  x.segment(at, c.item_id_dim) = p.item_ids.row(f.item);
  at += c.item_id_dim;
  x.segment(at, c.item_cat_dim) = p.item_cats.row(f.category);
  at += c.item_cat_dim;
  x.segment(at, c.price_dim) = p.price.row(f.price_bucket);
  at += c.price_dim;
  x.segment(at, c.seller_dim) = p.seller.row(f.seller);
  at += c.seller_dim;
  RowVector title = RowVector::Zero(c.title_dim);
  for (TermId t : f.title) {
    check_index(t, p.title_terms.rows(), "title term");
    title += p.title_terms.row(t);
  }
  if (!f.title.empty()) title /= static_cast<double>(f.title.size());
  x.segment(at, c.title_dim) = title;
  return x;
}

void item_input_backward(const PrerankParams& p, const ItemFeatures& f, const RowVector& dx, PrerankParams& g) {
  const ModelConfig& c = p.config;
  Eigen::Index at = 0;
  g.item_ids.row(f.item) += dx.segment(at, c.item_id_dim);
  at += c.item_id_dim;
  g.item_cats.row(f.category) += dx.segment(at, c.item_cat_dim);
  at += c.item_cat_dim;
  g.price.row(f.price_bucket) += dx.segment(at, c.price_dim);
  at += c.price_dim;
  g.seller.row(f.seller) += dx.segment(at, c.seller_dim);
  at += c.seller_dim;
  if (!f.title.empty()) {
    const RowVector share = dx.segment(at, c.title_dim) / static_cast<double>(f.title.size());
    for (TermId t : f.title) g.title_terms.row(t) += share;
  }
}

void query_unit_backward(const PrerankParams& p, const QueryUnitCache& cache, const RowVector& user,
                         const RowVector& dq_o, Matrix& d_terms, RowVector& d_user, PrerankParams& g) {
  const int d = p.config.term_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const Matrix& e = cache.terms;
  const auto n = e.rows();
  d_terms = Matrix::Zero(n, d);

  // mean pooling
  const RowVector dq_m = dq_o.segment(0, d);
  for (Eigen::Index i = 0; i < n; ++i) d_terms.row(i) += dq_m / static_cast<double>(n);

  // max-pooled self attention
  const RowVector dq_s = dq_o.segment(d, d);
  Matrix d_att = Matrix::Zero(n, d);
  for (int col = 0; col < d; ++col) d_att(cache.argmax[col], col) = dq_s(col);
  const Matrix d_a = d_att * e.transpose();
  d_terms += cache.self_attn.transpose() * d_att;
  Matrix d_s(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d_s.row(i) = nn::softmax_backward(cache.self_attn.row(i), d_a.row(i));
  }
  d_terms += (d_s + d_s.transpose()) * e * scale;

  // user-conditioned attention
  const RowVector dq_p = dq_o.segment(2 * d, d);
  d_terms += cache.personal.transpose() * dq_p;
  const RowVector d_weights = dq_p * e.transpose();
  const RowVector d_logits = nn::softmax_backward(cache.personal, d_weights);
  d_terms += d_logits.transpose() * cache.projected * scale;
  const Matrix d_proj = d_logits * e * scale;
  const Matrix user_m = user;
  const Matrix dx = p.w1.backward(user_m, d_proj, g.w1);
  d_user += dx.row(0);
}

void user_query_backward(const PrerankParams& p, const Catalog& catalog, const UserQueryState& s,
                         const RowVector& d_in, PrerankParams& g) {
  const ModelConfig& c = p.config;
  const int uw = c.user_width();
  const int qw = c.query_side_width();
  const int ow = 3 * c.term_dim;
  const int bw = c.behavior_width();
  const double scale = 1.0 / std::sqrt(static_cast<double>(bw));

  RowVector d_user = d_in.segment(0, uw);
  RowVector d_side = d_in.segment(uw, qw);
  RowVector d_qo = d_in.segment(uw + qw, ow);
  const RowVector d_hb = d_in.segment(uw + qw + ow, 3 * bw);

  RowVector d_att_in = RowVector::Zero(c.attention_input_width());
  const Matrix att_in = s.attention_input;
  for (int r = 0; r < 3; ++r) {
    const Matrix& b = s.partitions[r];
    if (b.rows() == 0) continue;
    const RowVector dh = d_hb.segment(r * bw, bw);
    const RowVector& a = s.attention_cache.weights[r];
    const RowVector& q = s.attention_cache.query[r];
    const RowVector da = dh * b.transpose();
    const RowVector ds = nn::softmax_backward(a, da);
    const Matrix dq = ds * b * scale;
    Matrix db = a.transpose() * dh + ds.transpose() * q * scale;
    d_att_in += p.attention[r].backward(att_in, dq, g.attention[r]).row(0);
    const auto& items = s.features.behaviors[r];
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      g.item_ids.row(items[i]) += db.row(row).head(c.item_id_dim);
      g.item_cats.row(catalog.item(items[i]).category) += db.row(row).tail(c.item_cat_dim);
    }
  }
  d_qo += d_att_in.segment(0, ow);
  d_side += d_att_in.segment(ow, qw);
  d_user += d_att_in.segment(ow + qw, uw);

  Matrix d_terms;
  query_unit_backward(p, s.query_cache, s.user, d_qo, d_terms, d_user, g);
  for (std::size_t i = 0; i < s.features.terms.size(); ++i) {
    g.query_terms.row(s.features.terms[i]) += d_terms.row(static_cast<Eigen::Index>(i));
  }

  g.query_freq.row(s.features.frequency_bucket) += d_side.segment(0, c.query_freq_dim);
  if (!s.features.relevant_categories.empty()) {
    const RowVector share = d_side.segment(c.query_freq_dim, c.query_cat_dim) /
                            static_cast<double>(s.features.relevant_categories.size());
    for (CategoryId cat : s.features.relevant_categories) g.query_cats.row(cat) += share;
  }
  for (int k = 0; k < kProfileFields; ++k) {
    g.profile[k].row(s.features.profile[k]) += d_user.segment(k * c.profile_dim, c.profile_dim);
  }
}

void init_table(Matrix& m, int rows, int cols, Rng& rng) {
  m.resize(rows, cols);
  nn::init_uniform(m, 1.0 / std::sqrt(static_cast<double>(cols)), rng);
}

}  // namespace

void ModelConfig::validate() const {
  if (term_dim <= 0 || proj_dim <= 0 || profile_dim <= 0 || item_id_dim <= 0 || item_cat_dim <= 0 ||
      query_freq_dim <= 0 || query_cat_dim <= 0 || price_dim <= 0 || seller_dim <= 0 || title_dim <= 0 ||
      output_dim <= 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (proj_dim != term_dim) throw ConfigError("projection width must equal the term embedding width");
  for (int h : hidden) {
    if (h <= 0) throw ConfigError("hidden widths must be positive");
  }
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(ln_eps > 0.0)) throw ConfigError("layer norm epsilon must be positive");
}

Vocab Vocab::from_catalog(const Catalog& catalog) {
  Vocab v;
  v.n_items = static_cast<int>(catalog.items.size());
  v.n_categories = catalog.config.n_categories;
  v.query_terms = catalog.config.query_vocab;
  v.title_terms = catalog.config.title_vocab;
  v.price_buckets = catalog.config.price_buckets;
  v.sellers = catalog.config.n_sellers;
  v.frequency_buckets = catalog.config.frequency_buckets;
  for (int k = 0; k < kProfileFields; ++k) v.profile[k] = kProfileCardinality[k];
  return v;
}

nn::TensorList PrerankParams::tensors() {
  nn::TensorList out = {
      {"query_terms", &query_terms}, {"title_terms", &title_terms}, {"item_ids", &item_ids},
      {"item_cats", &item_cats},     {"query_cats", &query_cats},   {"query_freq", &query_freq},
      {"price", &price},             {"seller", &seller},
  };
  for (int k = 0; k < kProfileFields; ++k) out.emplace_back("profile" + std::to_string(k), &profile[k]);
  w1.append_tensors("w1", out);
  for (int r = 0; r < 3; ++r) attention[r].append_tensors(std::string("attention_") + kPartitionNames[r], out);
  mlp_uq.append_tensors("mlp_uq", out);
  mlp_p.append_tensors("mlp_p", out);
  return out;
}

PrerankParams PrerankParams::zeros_like() const {
  PrerankParams z = *this;
  nn::zero(z.tensors());
  return z;
}

void PrerankParams::validate() const {
  config.validate();
  auto self = const_cast<PrerankParams*>(this);
  if (!nn::all_finite(self->tensors())) throw NumericalFault("parameters contain non-finite values");
  if (mlp_uq.output_width() != mlp_p.output_width()) throw ContractViolation("tower output widths differ");
  if (mlp_uq.input_width() != config.user_query_width() || mlp_p.input_width() != config.item_width()) {
    throw ContractViolation("tower input widths do not match the configuration");
  }
}

PrerankParams init_params(const ModelConfig& config, const Vocab& vocab, std::uint64_t seed) {
  config.validate();
  if (vocab.n_items <= 0 || vocab.n_categories <= 0 || vocab.query_terms <= 0 || vocab.title_terms <= 0) {
    throw ConfigError("vocabulary sizes must be positive");
  }
  PrerankParams p;
  p.config = config;
  p.vocab = vocab;
  Rng rng = make_rng(seed, 0x77, 0);
  init_table(p.query_terms, vocab.query_terms, config.term_dim, rng);
  init_table(p.title_terms, vocab.title_terms, config.title_dim, rng);
  init_table(p.item_ids, vocab.n_items, config.item_id_dim, rng);
  init_table(p.item_cats, vocab.n_categories, config.item_cat_dim, rng);
  init_table(p.query_cats, vocab.n_categories, config.query_cat_dim, rng);
  init_table(p.query_freq, vocab.frequency_buckets, config.query_freq_dim, rng);
  init_table(p.price, vocab.price_buckets, config.price_dim, rng);
  init_table(p.seller, vocab.sellers, config.seller_dim, rng);
  for (int k = 0; k < kProfileFields; ++k) init_table(p.profile[k], vocab.profile[k], config.profile_dim, rng);
  p.w1.init(config.user_width(), config.proj_dim, rng);
  for (auto& a : p.attention) a.init(config.attention_input_width(), config.behavior_width(), rng);
  p.mlp_uq.init(config.user_query_width(), config.hidden, config.output_dim, rng);
  p.mlp_p.init(config.item_width(), config.hidden, config.output_dim, rng);
  return p;
}

std::vector<Behavior> category_filter(std::span<const Behavior> behaviors, const Catalog& catalog,
                                      std::span<const CategoryId> relevant) {
  std::vector<Behavior> out;
  for (const Behavior& b : behaviors) {
    const CategoryId c = catalog.item(b.item).category;
    if (std::find(relevant.begin(), relevant.end(), c) != relevant.end()) out.push_back(b);
  }
  return out;
}

RowVector query_semantic_unit(const Matrix& terms, const RowVector& user_vec, const nn::Linear& w1,
                              QueryUnitCache* cache) {
  const auto n = terms.rows();
  const auto d = terms.cols();
  if (n == 0) throw ContractViolation("query has no terms");
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  const RowVector q_m = terms.colwise().mean();

  Matrix self_attn = terms * terms.transpose() * scale;
  for (Eigen::Index i = 0; i < n; ++i) self_attn.row(i) = nn::softmax(self_attn.row(i));
  const Matrix attended = self_attn * terms;
  RowVector q_s(d);
  std::vector<int> argmax(static_cast<std::size_t>(d));
  for (Eigen::Index c = 0; c < d; ++c) {
    Eigen::Index at = 0;
    q_s(c) = attended.col(c).maxCoeff(&at);
    argmax[static_cast<std::size_t>(c)] = static_cast<int>(at);
  }

  const Matrix user_m = user_vec;
  const RowVector projected = w1.forward(user_m).row(0);
  if (projected.size() != d) throw ContractViolation("projection width must equal the term width");
  const RowVector personal = nn::softmax(projected * terms.transpose() * scale);
  const RowVector q_p = personal * terms;

  if (cache) {
    cache->terms = terms;
    cache->self_attn = self_attn;
    cache->attended = attended;
    cache->argmax = std::move(argmax);
    cache->projected = projected;
    cache->personal = personal;
  }
  return concat({&q_m, &q_s, &q_p});
}

RowVector behavior_attention(const RowVector& q_o, const RowVector& query_side, const RowVector& user_vec,
                             const std::array<const Matrix*, 3>& partitions,
                             const std::array<nn::Linear, 3>& projections, AttentionCache* cache) {
  const Matrix x = concat({&q_o, &query_side, &user_vec});
  const auto width = projections[0].weight.cols();
  const double scale = 1.0 / std::sqrt(static_cast<double>(width));
  RowVector out = RowVector::Zero(3 * width);
  for (int r = 0; r < 3; ++r) {
    const Matrix& b = *partitions[r];
    const RowVector q = projections[r].forward(x).row(0);
    RowVector a;
    if (b.rows() > 0) {
      if (b.cols() != width) throw ContractViolation("behavior width does not match the attention projection");
      a = nn::softmax(q * b.transpose() * scale);
      out.segment(r * width, width) = a * b;
    }
    if (cache) {
      cache->query[r] = q;
      cache->weights[r] = a;
    }
  }
  return out;
}

UserQueryFeatures user_query_features(const Catalog& catalog, UserId u, QueryId q, bool filter) {
  const UserProfile& user = catalog.user(u);
  const QueryDef& query = catalog.query(q);
  UserQueryFeatures f;
  for (int k = 0; k < kProfileFields; ++k) f.profile[k] = user.profile[k];
  f.terms = query.terms;
  f.frequency_bucket = query.frequency_bucket;
  f.relevant_categories = query.relevant_categories;
  const std::vector<Behavior>* parts[3] = {&user.realtime, &user.short_term, &user.long_term};
  for (int r = 0; r < 3; ++r) {
    for (const Behavior& b : *parts[r]) {
      if (!filter || query.is_relevant_category(catalog.item(b.item).category)) f.behaviors[r].push_back(b.item);
    }
  }
  return f;
}

ItemFeatures item_features(const Catalog& catalog, ItemId p) {
  const ItemDef& item = catalog.item(p);
  return {item.id, item.category, item.price_bucket, item.seller, item.title};
}

RowVector user_query_embed(const PrerankParams& params, const Catalog& catalog, const UserQueryFeatures& f) {
  const Matrix x = user_query_input(params, catalog, f, nullptr);
  return nn::l2_normalize_rows(nn::mlp_forward(params.mlp_uq, x, params.config.mlp_options())).row(0);
}

RowVector item_embed(const PrerankParams& params, const ItemFeatures& f) {
  const Matrix x = item_input(params, f);
  return nn::l2_normalize_rows(nn::mlp_forward(params.mlp_p, x, params.config.mlp_options())).row(0);
}

Matrix embed_all_items(const PrerankParams& params, const Catalog& catalog) {
  Matrix x(static_cast<Eigen::Index>(catalog.items.size()), params.config.item_width());
  for (std::size_t i = 0; i < catalog.items.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = item_input(params, item_features(catalog, static_cast<ItemId>(i)));
  }
  return nn::l2_normalize_rows(nn::mlp_forward(params.mlp_p, x, params.config.mlp_options()));
}

double score(const RowVector& h_uq, const RowVector& h_p, double temperature) {
  if (h_uq.size() != h_p.size()) throw ContractViolation("score: embedding widths differ");
  if (std::abs(h_uq.norm() - 1.0) > 1e-6 || std::abs(h_p.norm() - 1.0) > 1e-6) {
    throw ContractViolation("score: inputs must be unit vectors");
  }
  if (!(temperature > 0.0)) throw ContractViolation("score: temperature must be positive");
  return h_uq.dot(h_p) / temperature;
}

BatchResult forward_backward(const PrerankParams& params, const Catalog& catalog,
                             std::span<const QuerySample* const> batch, const LogitLoss& loss, PrerankParams& grads) {
  if (batch.empty()) throw ContractViolation("forward_backward: empty batch");
  const ModelConfig& c = params.config;
  const auto opts = c.mlp_options();
  const auto n_batch = static_cast<Eigen::Index>(batch.size());
  grads = params.zeros_like();

  std::vector<UserQueryState> states(batch.size());
  Matrix x_uq(n_batch, c.user_query_width());
  std::vector<Eigen::Index> offsets(batch.size() + 1, 0);
  std::vector<ItemFeatures> item_feats;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const QuerySample& s = *batch[b];
    const auto f = user_query_features(catalog, s.user_id, s.query_id, c.category_filter);
    x_uq.row(static_cast<Eigen::Index>(b)) = user_query_input(params, catalog, f, &states[b]);
    for (const auto& it : s.items) item_feats.push_back(item_features(catalog, it.item));
    offsets[b + 1] = offsets[b] + static_cast<Eigen::Index>(s.items.size());
  }
  Matrix x_p(static_cast<Eigen::Index>(item_feats.size()), c.item_width());
  for (std::size_t i = 0; i < item_feats.size(); ++i) {
    x_p.row(static_cast<Eigen::Index>(i)) = item_input(params, item_feats[i]);
  }

  nn::MlpCache cache_uq, cache_p;
  const Matrix y_uq = nn::mlp_forward(params.mlp_uq, x_uq, opts, &cache_uq);
  const Matrix y_p = nn::mlp_forward(params.mlp_p, x_p, opts, &cache_p);
  Eigen::VectorXd norm_uq, norm_p;
  const Matrix h_uq = nn::l2_normalize_rows(y_uq, &norm_uq);
  const Matrix h_p = nn::l2_normalize_rows(y_p, &norm_p);

  Matrix dh_uq = Matrix::Zero(h_uq.rows(), h_uq.cols());
  Matrix dh_p = Matrix::Zero(h_p.rows(), h_p.cols());
  BatchResult result;
  const double inv_tau = 1.0 / c.temperature;
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto row = static_cast<Eigen::Index>(b);
    const auto n = offsets[b + 1] - offsets[b];
    const Eigen::VectorXd z = h_p.middleRows(offsets[b], n) * h_uq.row(row).transpose() * inv_tau;
    const std::vector<double> logits(z.data(), z.data() + z.size());
    const LossResult lr = loss(*batch[b], logits);
    if (!std::isfinite(lr.value)) {
      throw NumericalFault("non-finite loss at request " + std::to_string(batch[b]->request_id));
    }
    result.loss += lr.value * inv_batch;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double g = lr.grad[static_cast<std::size_t>(i)] * inv_batch * inv_tau;
      if (g == 0.0) continue;
      dh_uq.row(row) += g * h_p.row(offsets[b] + i);
      dh_p.row(offsets[b] + i) += g * h_uq.row(row);
    }
  }

  const Matrix dy_uq = nn::l2_normalize_rows_backward(h_uq, norm_uq, dh_uq);
  const Matrix dy_p = nn::l2_normalize_rows_backward(h_p, norm_p, dh_p);
  const Matrix dx_uq = nn::mlp_backward(params.mlp_uq, cache_uq, dy_uq, opts, grads.mlp_uq);
  const Matrix dx_p = nn::mlp_backward(params.mlp_p, cache_p, dy_p, opts, grads.mlp_p);

  for (std::size_t i = 0; i < item_feats.size(); ++i) {
    item_input_backward(params, item_feats[i], dx_p.row(static_cast<Eigen::Index>(i)), grads);
  }
  for (std::size_t b = 0; b < batch.size(); ++b) {
    user_query_backward(params, catalog, states[b], dx_uq.row(static_cast<Eigen::Index>(b)), grads);
  }
  if (!nn::all_finite(grads.tensors())) throw NumericalFault("non-finite gradient");
  return result;
}

BatchResult forward_backward(const PrerankParams& params, const Catalog& catalog,
                             std::span<const QuerySample* const> batch, const LossConfig& config,
                             PrerankParams& grads) {
  TaskCounters counters;
  const LogitLoss loss = [&](const QuerySample& s, std::span<const double> z) {
    return total_loss(s, z, config, &counters);
  };
  BatchResult r = forward_backward(params, catalog, batch, loss, grads);
  r.counters = counters;
  return r;
}

std::vector<double> sample_logits(const PrerankParams& params, const Catalog& catalog, const QuerySample& sample) {
  const auto f = user_query_features(catalog, sample.user_id, sample.query_id, params.config.category_filter);
  const RowVector h_uq = user_query_embed(params, catalog, f);
  std::vector<double> z;
  z.reserve(sample.items.size());
  for (const auto& it : sample.items) {
    const RowVector h_p = item_embed(params, item_features(catalog, it.item));
    z.push_back(h_uq.dot(h_p) / params.config.temperature);
  }
  return z;
}

nn::Checkpoint params_checkpoint(PrerankParams& params) {
  const ModelConfig& c = params.config;
  std::map<std::string, double> h = {
      {"term_dim", c.term_dim},
      {"proj_dim", c.proj_dim},
      {"profile_dim", c.profile_dim},
      {"item_id_dim", c.item_id_dim},
      {"item_cat_dim", c.item_cat_dim},
      {"query_freq_dim", c.query_freq_dim},
      {"query_cat_dim", c.query_cat_dim},
      {"price_dim", c.price_dim},
      {"seller_dim", c.seller_dim},
      {"title_dim", c.title_dim},
      {"output_dim", c.output_dim},
      {"temperature", c.temperature},
      {"leaky_slope", c.leaky_slope},
      {"ln_eps", c.ln_eps},
      {"category_filter", c.category_filter ? 1.0 : 0.0},
      {"n_hidden", static_cast<double>(c.hidden.size())},
      {"vocab_items", params.vocab.n_items},
      {"vocab_categories", params.vocab.n_categories},
      {"vocab_query_terms", params.vocab.query_terms},
      {"vocab_title_terms", params.vocab.title_terms},
      {"vocab_price_buckets", params.vocab.price_buckets},
      {"vocab_sellers", params.vocab.sellers},
      {"vocab_frequency_buckets", params.vocab.frequency_buckets},
  };
  for (std::size_t i = 0; i < c.hidden.size(); ++i) h["hidden_" + std::to_string(i)] = c.hidden[i];
  for (int k = 0; k < kProfileFields; ++k) h["vocab_profile_" + std::to_string(k)] = params.vocab.profile[k];
  return nn::make_checkpoint(kTwoTowerModelType, std::move(h), params.tensors());
}

PrerankParams params_from_checkpoint(const nn::Checkpoint& ckpt) {
  if (ckpt.model_type != kTwoTowerModelType) {
    throw IoError("checkpoint holds a '" + ckpt.model_type + "' model, expected '" + kTwoTowerModelType + "'");
  }
  const auto get = [&](const std::string& key) {
    auto it = ckpt.header.find(key);
    if (it == ckpt.header.end()) throw IoError("checkpoint header is missing '" + key + "'");
    return it->second;
  };
  const auto geti = [&](const std::string& key) { return static_cast<int>(get(key)); };
  ModelConfig c;
  c.term_dim = geti("term_dim");
  c.proj_dim = geti("proj_dim");
  c.profile_dim = geti("profile_dim");
  c.item_id_dim = geti("item_id_dim");
  c.item_cat_dim = geti("item_cat_dim");
  c.query_freq_dim = geti("query_freq_dim");
  c.query_cat_dim = geti("query_cat_dim");
  c.price_dim = geti("price_dim");
  c.seller_dim = geti("seller_dim");
  c.title_dim = geti("title_dim");
  c.output_dim = geti("output_dim");
  c.temperature = get("temperature");
  c.leaky_slope = get("leaky_slope");
  c.ln_eps = get("ln_eps");
  c.category_filter = get("category_filter") != 0.0;
  c.hidden.clear();
  for (int i = 0; i < geti("n_hidden"); ++i) c.hidden.push_back(geti("hidden_" + std::to_string(i)));
  Vocab v;
  v.n_items = geti("vocab_items");
  v.n_categories = geti("vocab_categories");
  v.query_terms = geti("vocab_query_terms");
  v.title_terms = geti("vocab_title_terms");
  v.price_buckets = geti("vocab_price_buckets");
  v.sellers = geti("vocab_sellers");
  v.frequency_buckets = geti("vocab_frequency_buckets");
  for (int k = 0; k < kProfileFields; ++k) v.profile[k] = geti("vocab_profile_" + std::to_string(k));
  PrerankParams p = init_params(c, v, 0);
  nn::restore_tensors(ckpt, p.tensors());
  p.validate();
  return p;
}

void save_params(const PrerankParams& params, const std::filesystem::path& path) {
  PrerankParams copy = params;
  nn::save_checkpoint(params_checkpoint(copy), path);
}

PrerankParams load_params(const std::filesystem::path& path) {
  return params_from_checkpoint(nn::load_checkpoint(path));
}

}  // namespace prerank
