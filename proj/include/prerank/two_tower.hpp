#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "prerank/losses.hpp"
#include "prerank/marketplace.hpp"
#include "prerank/nn.hpp"
#include "prerank/samples.hpp"

namespace prerank {

using nn::Matrix;
using nn::RowVector;

struct ModelConfig {
  int term_dim = 16;        // d
  int proj_dim = 16;        // d'
  int profile_dim = 8;      // per profile field; e_u width = 3 * profile_dim
  int item_id_dim = 16;     // behavior width d_i = item_id_dim + item_cat_dim
  int item_cat_dim = 8;
  int query_freq_dim = 8;   // query side width = query_freq_dim + query_cat_dim
  int query_cat_dim = 8;
  int price_dim = 8;
  int seller_dim = 8;
  int title_dim = 16;
  std::vector<int> hidden = {128, 64, 32};
  int output_dim = 32;
  double temperature = 0.05;
  double leaky_slope = 0.01;
  double ln_eps = 1e-5;
  bool category_filter = true;

  int user_width() const { return 3 * profile_dim; }
  int behavior_width() const { return item_id_dim + item_cat_dim; }
  int query_side_width() const { return query_freq_dim + query_cat_dim; }
  int attention_input_width() const { return 3 * term_dim + query_side_width() + user_width(); }
  int user_query_width() const {
    return user_width() + query_side_width() + 3 * term_dim + 3 * behavior_width();
  }
  int item_width() const { return item_id_dim + item_cat_dim + price_dim + seller_dim + title_dim; }
  nn::MlpOptions mlp_options() const { return {leaky_slope, ln_eps}; }
  void validate() const;
};

// Vocabulary sizes taken from the catalog the model is built for.
struct Vocab {
  int n_items = 0;
  int n_categories = 0;
  int query_terms = 0;
  int title_terms = 0;
  int price_buckets = 0;
  int sellers = 0;
  int frequency_buckets = 0;
  std::array<int, kProfileFields> profile{};

  static Vocab from_catalog(const Catalog& catalog);
  bool operator==(const Vocab&) const = default;
};

struct PrerankParams {
  ModelConfig config;
  Vocab vocab;
  Matrix query_terms;
  Matrix title_terms;
  Matrix item_ids;
  Matrix item_cats;
  Matrix query_cats;
  Matrix query_freq;
  Matrix price;
  Matrix seller;
  std::array<Matrix, kProfileFields> profile;
  nn::Linear w1;
  std::array<nn::Linear, 3> attention;  // realtime, short-term, long-term
  nn::Mlp mlp_uq;
  nn::Mlp mlp_p;

  nn::TensorList tensors();
  PrerankParams zeros_like() const;
  void validate() const;
};

PrerankParams init_params(const ModelConfig& config, const Vocab& vocab, std::uint64_t seed);

// Keeps the behaviors whose item category is in `relevant`, preserving order.
std::vector<Behavior> category_filter(std::span<const Behavior> behaviors, const Catalog& catalog,
                                      std::span<const CategoryId> relevant);

struct QueryUnitCache {
  Matrix terms;        // |q| x d
  Matrix self_attn;    // |q| x |q|
  Matrix attended;     // |q| x d
  std::vector<int> argmax;  // per column of attended
  RowVector projected; // e_u W1 + b1
  RowVector personal;  // attention weights over terms
};

// Q_o = concat(mean, max-pooled self attention, user-conditioned attention).
RowVector query_semantic_unit(const Matrix& terms, const RowVector& user_vec, const nn::Linear& w1,
                              QueryUnitCache* cache = nullptr);

struct AttentionCache {
  std::array<RowVector, 3> query;
  std::array<RowVector, 3> weights;  // empty when the partition is empty
};

RowVector behavior_attention(const RowVector& q_o, const RowVector& query_side, const RowVector& user_vec,
                             const std::array<const Matrix*, 3>& partitions,
                             const std::array<nn::Linear, 3>& projections, AttentionCache* cache = nullptr);

struct UserQueryFeatures {
  std::array<int, kProfileFields> profile{};
  std::vector<TermId> terms;
  int frequency_bucket = 0;
  std::vector<CategoryId> relevant_categories;
  std::array<std::vector<ItemId>, 3> behaviors;  // after category filtering
};

struct ItemFeatures {
  ItemId item = 0;
  CategoryId category = 0;
  int price_bucket = 0;
  int seller = 0;
  std::vector<TermId> title;
};

UserQueryFeatures user_query_features(const Catalog& catalog, UserId u, QueryId q, bool filter = true);
ItemFeatures item_features(const Catalog& catalog, ItemId p);

// Unit-norm tower outputs.
RowVector user_query_embed(const PrerankParams& params, const Catalog& catalog, const UserQueryFeatures& f);
RowVector item_embed(const PrerankParams& params, const ItemFeatures& f);
// All catalog items, one unit row per item id.
Matrix embed_all_items(const PrerankParams& params, const Catalog& catalog);

// cos(h_uq, h_p) / tau; both inputs must be unit vectors.
double score(const RowVector& h_uq, const RowVector& h_p, double temperature);

// Per-sample loss on the item logits: returns value and d value / d logit.
using LogitLoss = std::function<LossResult(const QuerySample&, std::span<const double>)>;

struct BatchResult {
  double loss = 0.0;
  TaskCounters counters;
};

// Mean loss over the batch; gradients are written (not accumulated) into grads.
BatchResult forward_backward(const PrerankParams& params, const Catalog& catalog,
                             std::span<const QuerySample* const> batch, const LogitLoss& loss, PrerankParams& grads);
BatchResult forward_backward(const PrerankParams& params, const Catalog& catalog,
                             std::span<const QuerySample* const> batch, const LossConfig& config,
                             PrerankParams& grads);

// Logits for every item in a sample, in sample order.
std::vector<double> sample_logits(const PrerankParams& params, const Catalog& catalog, const QuerySample& sample);

inline constexpr const char* kTwoTowerModelType = "two_tower";

void save_params(const PrerankParams& params, const std::filesystem::path& path);
PrerankParams load_params(const std::filesystem::path& path);
nn::Checkpoint params_checkpoint(PrerankParams& params);
PrerankParams params_from_checkpoint(const nn::Checkpoint& ckpt);

}  // namespace prerank
