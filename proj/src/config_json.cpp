#include "prerank/config_json.hpp"

#include <set>
#include <string>

namespace prerank {

namespace {

using nlohmann::json;

// Reads every field a struct exposes through `visit` and rejects the rest.
class Reader {
 public:
  explicit Reader(const json& j, const char* what) : j_(j), what_(what) {
    if (!j.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
  }

  template <typename T>
  void operator()(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string(what_) + "." + key + ": " + e.what());
    }
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown key '" + key + "' in " + what_);
    }
  }

 private:
  const json& j_;
  const char* what_;
  std::set<std::string> seen_;
};

class Writer {
 public:
  explicit Writer(json& j) : j_(j) { j_ = json::object(); }
  template <typename T>
  void operator()(const char* key, const T& v) {
    j_[key] = v;
  }

 private:
  json& j_;
};

template <typename F>
void visit_sim(SimConfig& c, F& f) {
  f("n_categories", c.n_categories);
  f("latent_dim", c.latent_dim);
  f("query_vocab", c.query_vocab);
  f("title_vocab", c.title_vocab);
  f("price_buckets", c.price_buckets);
  f("n_sellers", c.n_sellers);
  f("frequency_buckets", c.frequency_buckets);
  f("behaviors_per_user", c.behaviors_per_user);
  f("history_days", c.history_days);
  f("click_bias", c.click_bias);
  f("click_pref", c.click_pref);
  f("click_match", c.click_match);
  f("click_semantic", c.click_semantic);
  f("click_quality", c.click_quality);
  f("cvr_bias", c.cvr_bias);
  f("cvr_pref", c.cvr_pref);
  f("cvr_price", c.cvr_price);
  f("cvr_match", c.cvr_match);
  f("relevance_match", c.relevance_match);
  f("query_relevance_match", c.query_relevance_match);
  f("interest_sharpness", c.interest_sharpness);
  f("category_spread", c.category_spread);
  f("other_purchase_rate", c.other_purchase_rate);
  f("other_click_rate", c.other_click_rate);
  f("intent_carryover", c.intent_carryover);
  f("n_other_scenarios", c.n_other_scenarios);
}

template <typename F>
void visit_policy(CascadePolicy& c, F& f) {
  f("matching_size", c.matching_size);
  f("prerank_size", c.prerank_size);
  f("exposure_size", c.exposure_size);
  f("matching_noise", c.matching_noise);
  f("prerank_noise", c.prerank_noise);
  f("ranking_noise", c.ranking_noise);
  f("n_days", c.n_days);
}

template <typename F>
void visit_model(ModelConfig& c, F& f) {
  f("term_dim", c.term_dim);
  f("proj_dim", c.proj_dim);
  f("profile_dim", c.profile_dim);
  f("item_id_dim", c.item_id_dim);
  f("item_cat_dim", c.item_cat_dim);
  f("query_freq_dim", c.query_freq_dim);
  f("query_cat_dim", c.query_cat_dim);
  f("price_dim", c.price_dim);
  f("seller_dim", c.seller_dim);
  f("title_dim", c.title_dim);
  f("hidden", c.hidden);
  f("output_dim", c.output_dim);
  f("temperature", c.temperature);
  f("leaky_slope", c.leaky_slope);
  f("ln_eps", c.ln_eps);
  f("category_filter", c.category_filter);
}

template <typename F>
void visit_teacher(TeacherConfig& c, F& f) {
  f("profile_dim", c.profile_dim);
  f("term_dim", c.term_dim);
  f("query_cat_dim", c.query_cat_dim);
  f("query_freq_dim", c.query_freq_dim);
  f("item_id_dim", c.item_id_dim);
  f("item_cat_dim", c.item_cat_dim);
  f("price_dim", c.price_dim);
  f("seller_dim", c.seller_dim);
  f("title_dim", c.title_dim);
  f("hidden", c.hidden);
  f("leaky_slope", c.leaky_slope);
  f("ln_eps", c.ln_eps);
  f("affinity_noise", c.affinity_noise);
  f("epochs", c.epochs);
  f("validation_fraction", c.validation_fraction);
  f("batch_size", c.batch_size);
  f("learning_rate", c.learning_rate);
  f("seed", c.seed);
}

const char* source_name(LabelSource s) { return s == LabelSource::kAllScenario ? "all_scenario" : "in_scenario"; }

LabelSource source_from_name(const std::string& s) {
  if (s == "all_scenario") return LabelSource::kAllScenario;
  if (s == "in_scenario") return LabelSource::kInScenario;
  throw ConfigError("unknown label source '" + s + "'");
}

}  // namespace

void to_json(json& j, const SimConfig& c) {
  Writer w(j);
  visit_sim(const_cast<SimConfig&>(c), w);
}

void from_json(const json& j, SimConfig& c) {
  Reader r(j, "simulator");
  visit_sim(c, r);
  r.finish();
}

void to_json(json& j, const CascadePolicy& c) {
  Writer w(j);
  visit_policy(const_cast<CascadePolicy&>(c), w);
}

void from_json(const json& j, CascadePolicy& c) {
  Reader r(j, "cascade");
  visit_policy(c, r);
  r.finish();
}

void to_json(json& j, const SampleConfig& c) {
  j = json{{"rc", c.rc},
           {"prc", c.prc},
           {"seed", c.seed},
           {"purchase_label", source_name(c.labels.purchase)},
           {"click_label", source_name(c.labels.click)},
           {"include_attached", c.include_attached}};
}

void from_json(const json& j, SampleConfig& c) {
  Reader r(j, "samples");
  std::string purchase = source_name(c.labels.purchase), click = source_name(c.labels.click);
  r("rc", c.rc);
  r("prc", c.prc);
  r("seed", c.seed);
  r("purchase_label", purchase);
  r("click_label", click);
  r("include_attached", c.include_attached);
  r.finish();
  c.labels.purchase = source_from_name(purchase);
  c.labels.click = source_from_name(click);
}

void to_json(json& j, const ModelConfig& c) {
  Writer w(j);
  visit_model(const_cast<ModelConfig&>(c), w);
}

void from_json(const json& j, ModelConfig& c) {
  Reader r(j, "model");
  visit_model(c, r);
  r.finish();
}

void to_json(json& j, const TeacherConfig& c) {
  Writer w(j);
  visit_teacher(const_cast<TeacherConfig&>(c), w);
}

void from_json(const json& j, TeacherConfig& c) {
  Reader r(j, "teacher");
  visit_teacher(c, r);
  r.finish();
}

void to_json(json& j, const LossConfig& c) {
  j = json{{"alpha_exposure", c.weights.exposure},
           {"alpha_click", c.weights.click},
           {"alpha_purchase", c.weights.purchase},
           {"variant", std::string(loss_variant_name(c.variant))},
           {"distill", std::string(distill_set_name(c.distill))}};
}

void from_json(const json& j, LossConfig& c) {
  Reader r(j, "loss");
  std::string variant(loss_variant_name(c.variant)), distill(distill_set_name(c.distill));
  r("alpha_exposure", c.weights.exposure);
  r("alpha_click", c.weights.click);
  r("alpha_purchase", c.weights.purchase);
  r("variant", variant);
  r("distill", distill);
  r.finish();
  c.variant = loss_variant_from_name(variant);
  c.distill = distill_set_from_name(distill);
  c.weights.validate();
}

}  // namespace prerank
