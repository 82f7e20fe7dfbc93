#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <vector>

#include "prerank/marketplace.hpp"
#include "prerank/samples.hpp"
#include "prerank/two_tower.hpp"

namespace prerank::testing {

inline SimConfig tiny_sim_config() {
  SimConfig c;
  c.n_categories = 4;
  c.latent_dim = 3;
  c.query_vocab = 12;
  c.title_vocab = 14;
  c.price_buckets = 3;
  c.n_sellers = 4;
  c.frequency_buckets = 2;
  c.behaviors_per_user = 9;
  return c;
}

inline ModelConfig tiny_model_config(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> dim(2, 4);
  ModelConfig m;
  m.term_dim = dim(rng);
  m.proj_dim = m.term_dim;
  m.profile_dim = dim(rng);
  m.item_id_dim = dim(rng);
  m.item_cat_dim = dim(rng);
  m.query_freq_dim = dim(rng);
  m.query_cat_dim = dim(rng);
  m.price_dim = dim(rng);
  m.seller_dim = dim(rng);
  m.title_dim = dim(rng);
  m.hidden = {dim(rng) + 2, dim(rng) + 1, dim(rng)};
  m.output_dim = dim(rng);
  m.temperature = std::uniform_real_distribution<double>(0.2, 1.0)(rng);
  return m;
}

// A labeled sample over random catalog items with random labels and teacher scores.
inline QuerySample random_sample(const Catalog& catalog, std::mt19937_64& rng, int n_items) {
  QuerySample s;
  s.request_id = static_cast<std::int64_t>(rng() % 1000);
  s.user_id = static_cast<UserId>(rng() % catalog.users.size());
  s.query_id = static_cast<QueryId>(rng() % catalog.queries.size());
  std::vector<ItemId> ids(catalog.items.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<ItemId>(i);
  std::shuffle(ids.begin(), ids.end(), rng);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < n_items; ++i) {
    LabeledItem it;
    it.item = ids[static_cast<std::size_t>(i)];
    it.origin = i < n_items / 3 ? Origin::kEx : (i < 2 * n_items / 3 ? Origin::kRc : Origin::kPrc);
    it.aspl = u(rng) < 0.2;
    it.ascl = it.aspl || u(rng) < 0.3;
    it.ael = it.ascl || it.origin == Origin::kEx;
    it.teacher = TeacherScores{u(rng), u(rng)};
    s.items.push_back(it);
  }
  s.items[0].ael = s.items[0].ascl = s.items[0].aspl = true;
  return s;
}

}  // namespace prerank::testing

namespace prerank::testing {

struct GradientCheck {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

// Central differences over every parameter coordinate against the analytic gradient.
// Relative error is |a - n| / max(|a|, |n|, floor * max(10, |loss|)).
inline GradientCheck check_gradients(PrerankParams params, const Catalog& catalog,
                                     const std::vector<QuerySample>& samples, const LossConfig& loss,
                                     double h = 1e-5, double floor = 1e-6) {
  std::vector<const QuerySample*> batch;
  for (const auto& s : samples) batch.push_back(&s);
  PrerankParams grads = params.zeros_like();
  const double value = forward_backward(params, catalog, batch, loss, grads).loss;
  const double scaled_floor = floor * std::max(10.0, std::abs(value));
  PrerankParams scratch = params.zeros_like();
  auto p_list = params.tensors();
  auto g_list = grads.tensors();
  GradientCheck out;
  for (std::size_t t = 0; t < p_list.size(); ++t) {
    auto& p = *p_list[t].second;
    const auto& g = *g_list[t].second;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double orig = p.data()[i];
      p.data()[i] = orig + h;
      const double up = forward_backward(params, catalog, batch, loss, scratch).loss;
      p.data()[i] = orig - h;
      const double down = forward_backward(params, catalog, batch, loss, scratch).loss;
      p.data()[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double analytic = g.data()[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), scaled_floor});
      if (std::abs(analytic - numeric) / denom > 1e-4 && std::getenv("FD_DEBUG"))
        std::fprintf(stderr, "%s[%ld] a=%.12g n=%.12g\n", p_list[t].first.c_str(), (long)i, analytic, numeric);
      out.max_rel_error = std::max(out.max_rel_error, std::abs(analytic - numeric) / denom);
      ++out.coordinates;
    }
  }
  return out;
}

}  // namespace prerank::testing
