#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "prerank/samples.hpp"

namespace prerank {

struct LossResult {
  double value = 0.0;
  std::vector<double> grad;  // d value / d logit, one entry per logit
};

// (1/gamma) log sum exp(gamma x_i), max-shifted. Throws on empty input or
// gamma <= 0.
double logsumexp(std::span<const double> x, double gamma = 1.0);

// log(1 + e^x) without overflow.
double softplus(double x);

// Vanilla list-wise softmax loss: sum over positives of -log softmax over the
// whole list.
LossResult listwise_softmax_loss(std::span<const double> logits, std::span<const std::size_t> positives);

// Multi-positive variant: each positive competes only against the negatives.
LossResult multi_positive_listwise_loss(std::span<const double> logits, std::span<const std::size_t> positives);

// Soft-label cross entropy over the distillation set: -sum p_i log softmax(z)_i.
// Empty input yields a zero loss.
LossResult distill_ctr_loss(std::span<const double> logits, std::span<const double> teacher);

struct LossWeights {
  double exposure = 1.0;
  double click = 2.0;
  double purchase = 4.0;

  void validate() const;
  bool all_zero() const { return exposure == 0.0 && click == 0.0 && purchase == 0.0; }
};

enum class LossVariant { kVanilla, kMultiPositive };
enum class DistillSet { kNone, kEx, kExRc, kExRcPrc };

std::string_view loss_variant_name(LossVariant v);
LossVariant loss_variant_from_name(std::string_view name);
std::string_view distill_set_name(DistillSet d);
DistillSet distill_set_from_name(std::string_view name);

enum class Task { kExposure = 0, kClick = 1, kPurchase = 2 };

bool is_positive(const LabeledItem& item, Task task);

struct LossConfig {
  LossWeights weights;
  LossVariant variant = LossVariant::kMultiPositive;
  DistillSet distill = DistillSet::kEx;
};

struct TaskCounters {
  std::size_t used[3] = {0, 0, 0};
  std::size_t dropped[3] = {0, 0, 0};
  std::size_t samples_without_tasks = 0;

  void merge(const TaskCounters& o);
};

// Weighted sum of the exposure/click/purchase list-wise losses over the
// sample's items. A task without positives or without negatives is dropped.
LossResult rank_loss(const QuerySample& sample, std::span<const double> logits, const LossWeights& weights,
                     LossVariant variant = LossVariant::kMultiPositive, TaskCounters* counters = nullptr);

bool in_distill_set(Origin origin, DistillSet set);

// click weight * CTR distill + purchase weight * CTCVR distill over the
// selected origins. Throws LabelingError when a selected item has no teacher.
LossResult distill_loss(const QuerySample& sample, std::span<const double> logits, const LossWeights& weights,
                        DistillSet set = DistillSet::kEx);

LossResult total_loss(const QuerySample& sample, std::span<const double> logits, const LossConfig& config,
                      TaskCounters* counters = nullptr);

}  // namespace prerank
