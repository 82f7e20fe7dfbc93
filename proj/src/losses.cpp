#include "prerank/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace prerank {

namespace {

void check_logits(std::span<const double> logits) {
  for (double z : logits) {
    if (!std::isfinite(z)) throw NumericalFault("non-finite logit");
  }
}

void check_positives(std::span<const double> logits, std::span<const std::size_t> positives) {
  if (positives.empty()) throw ContractViolation("list-wise loss needs at least one positive");
  for (std::size_t i : positives) {
    if (i >= logits.size()) throw ContractViolation("positive index out of range");
  }
}

void accumulate(LossResult& into, const LossResult& part, double weight) {
  into.value += weight * part.value;
  for (std::size_t i = 0; i < into.grad.size(); ++i) into.grad[i] += weight * part.grad[i];
}

}  // namespace

double logsumexp(std::span<const double> x, double gamma) {
  if (x.empty()) throw ContractViolation("logsumexp of an empty list");
  if (!(gamma > 0.0)) throw ContractViolation("logsumexp needs gamma > 0");
  const double mx = *std::max_element(x.begin(), x.end());
  if (std::isinf(mx)) return mx;
  double s = 0.0;
  for (double v : x) s += std::exp(gamma * (v - mx));
  return mx + std::log(s) / gamma;
}

double softplus(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

LossResult listwise_softmax_loss(std::span<const double> logits, std::span<const std::size_t> positives) {
  check_logits(logits);
  check_positives(logits, positives);
  const double lse = logsumexp(logits);
  LossResult r;
  r.grad.assign(logits.size(), 0.0);
  const auto n_pos = static_cast<double>(positives.size());
  for (std::size_t j = 0; j < logits.size(); ++j) r.grad[j] = n_pos * std::exp(logits[j] - lse);
  for (std::size_t i : positives) {
    r.value += lse - logits[i];
    r.grad[i] -= 1.0;
  }
  return r;
}

LossResult multi_positive_listwise_loss(std::span<const double> logits, std::span<const std::size_t> positives) {
  check_logits(logits);
  check_positives(logits, positives);
  std::vector<char> is_pos(logits.size(), 0);
  for (std::size_t i : positives) is_pos[i] = 1;
  std::vector<double> neg;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (!is_pos[j]) neg.push_back(logits[j]);
  }
  LossResult r;
  r.grad.assign(logits.size(), 0.0);
  if (neg.empty()) return r;  // each positive is alone in its softmax
  const double lse_neg = logsumexp(neg);
  // Term i is softplus(lse_neg - z_i); its weight on negative j is
  // softmax_neg(j) * sigmoid(lse_neg - z_i).
  double neg_mass = 0.0;
  for (std::size_t i : positives) {
    const double t = lse_neg - logits[i];
    r.value += softplus(t);
    const double s = sigmoid(t);
    r.grad[i] -= s;
    neg_mass += s;
  }
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (!is_pos[j]) r.grad[j] += neg_mass * std::exp(logits[j] - lse_neg);
  }
  return r;
}

LossResult distill_ctr_loss(std::span<const double> logits, std::span<const double> teacher) {
  if (logits.size() != teacher.size()) throw ContractViolation("distill: logits and teacher sizes differ");
  LossResult r;
  r.grad.assign(logits.size(), 0.0);
  if (logits.empty()) return r;
  check_logits(logits);
  for (double p : teacher) {
    if (!(p >= 0.0 && p <= 1.0)) throw ContractViolation("distill: teacher probability outside [0, 1]");
  }
  const double lse = logsumexp(logits);
  std::vector<double> s(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) s[i] = std::exp(logits[i] - lse);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    r.value += teacher[i] * (lse - logits[i]);
    // sum_j p_j s_i - p_i s_j: cancels exactly when scores and labels are symmetric
    double g = 0.0;
    for (std::size_t j = 0; j < logits.size(); ++j) g += teacher[j] * s[i] - teacher[i] * s[j];
    r.grad[i] = g;
  }
  return r;
}

void LossWeights::validate() const {
  if (!(exposure >= 0.0) || !(click >= 0.0) || !(purchase >= 0.0)) {
    throw ConfigError("loss weights must be nonnegative");
  }
}

std::string_view loss_variant_name(LossVariant v) {
  return v == LossVariant::kVanilla ? "vanilla" : "multi_positive";
}

LossVariant loss_variant_from_name(std::string_view name) {
  if (name == "vanilla") return LossVariant::kVanilla;
  if (name == "multi_positive") return LossVariant::kMultiPositive;
  throw ConfigError("unknown loss variant '" + std::string(name) + "'");
}

std::string_view distill_set_name(DistillSet d) {
  switch (d) {
    case DistillSet::kNone:
      return "none";
    case DistillSet::kEx:
      return "Ex";
    case DistillSet::kExRc:
      return "Ex+RC";
    case DistillSet::kExRcPrc:
      return "Ex+RC+PRC";
  }
  return "?";
}

DistillSet distill_set_from_name(std::string_view name) {
  if (name == "none") return DistillSet::kNone;
  if (name == "Ex") return DistillSet::kEx;
  if (name == "Ex+RC") return DistillSet::kExRc;
  if (name == "Ex+RC+PRC") return DistillSet::kExRcPrc;
  throw ConfigError("unknown distill set '" + std::string(name) + "'");
}

bool is_positive(const LabeledItem& item, Task task) {
  switch (task) {
    case Task::kExposure:
      return item.ael;
    case Task::kClick:
      return item.ascl;
    case Task::kPurchase:
      return item.aspl;
  }
  return false;
}

void TaskCounters::merge(const TaskCounters& o) {
  for (int t = 0; t < 3; ++t) {
    used[t] += o.used[t];
    dropped[t] += o.dropped[t];
  }
  samples_without_tasks += o.samples_without_tasks;
}

LossResult rank_loss(const QuerySample& sample, std::span<const double> logits, const LossWeights& weights,
                     LossVariant variant, TaskCounters* counters) {
  if (logits.size() != sample.items.size()) throw ContractViolation("rank_loss: one logit per item required");
  weights.validate();
  LossResult total;
  total.grad.assign(logits.size(), 0.0);
  const double alpha[3] = {weights.exposure, weights.click, weights.purchase};
  bool any = false;
  for (int t = 0; t < 3; ++t) {
    std::vector<std::size_t> pos;
    for (std::size_t i = 0; i < sample.items.size(); ++i) {
      if (is_positive(sample.items[i], static_cast<Task>(t))) pos.push_back(i);
    }
    if (pos.empty() || pos.size() == sample.items.size()) {
      if (counters) ++counters->dropped[t];
      continue;
    }
    any = true;
    if (counters) ++counters->used[t];
    if (alpha[t] == 0.0) continue;
    const LossResult part = variant == LossVariant::kVanilla ? listwise_softmax_loss(logits, pos)
                                                             : multi_positive_listwise_loss(logits, pos);
    accumulate(total, part, alpha[t]);
  }
  if (!any && counters) ++counters->samples_without_tasks;
  return total;
}

bool in_distill_set(Origin origin, DistillSet set) {
  switch (set) {
    case DistillSet::kNone:
      return false;
    case DistillSet::kEx:
      return origin == Origin::kEx;
    case DistillSet::kExRc:
      return origin == Origin::kEx || origin == Origin::kRc;
    case DistillSet::kExRcPrc:
      return true;
  }
  return false;
}

LossResult distill_loss(const QuerySample& sample, std::span<const double> logits, const LossWeights& weights,
                        DistillSet set) {
  if (logits.size() != sample.items.size()) throw ContractViolation("distill_loss: one logit per item required");
  weights.validate();
  LossResult total;
  total.grad.assign(logits.size(), 0.0);
  if (set == DistillSet::kNone || (weights.click == 0.0 && weights.purchase == 0.0)) return total;
  std::vector<std::size_t> idx;
  std::vector<double> z, ctr, ctcvr;
  for (std::size_t i = 0; i < sample.items.size(); ++i) {
    const auto& it = sample.items[i];
    if (!in_distill_set(it.origin, set)) continue;
    if (!it.teacher) {
      throw LabelingError("missing teacher scores for item " + std::to_string(it.item) + " in request " +
                          std::to_string(sample.request_id));
    }
    idx.push_back(i);
    z.push_back(logits[i]);
    ctr.push_back(it.teacher->ctr);
    ctcvr.push_back(it.teacher->ctcvr());
  }
  if (idx.empty()) return total;
  const LossResult l_ctr = distill_ctr_loss(z, ctr);
  const LossResult l_ctcvr = distill_ctr_loss(z, ctcvr);
  total.value = weights.click * l_ctr.value + weights.purchase * l_ctcvr.value;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    total.grad[idx[k]] = weights.click * l_ctr.grad[k] + weights.purchase * l_ctcvr.grad[k];
  }
  return total;
}

LossResult total_loss(const QuerySample& sample, std::span<const double> logits, const LossConfig& config,
                      TaskCounters* counters) {
  LossResult total = rank_loss(sample, logits, config.weights, config.variant, counters);
  const LossResult d = distill_loss(sample, logits, config.weights, config.distill);
  accumulate(total, d, 1.0);
  return total;
}

}  // namespace prerank
