#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "prerank/marketplace.hpp"
#include "prerank/nn.hpp"
#include "prerank/samples.hpp"

namespace prerank {

// Ground-truth probabilities from the simulator.
TeacherScores oracle_teacher(const Catalog& catalog, UserId u, QueryId q, ItemId p);

struct TeacherConfig {
  int profile_dim = 8;
  int term_dim = 16;
  int query_cat_dim = 8;
  int query_freq_dim = 4;
  int item_id_dim = 16;
  int item_cat_dim = 8;
  int price_dim = 4;
  int seller_dim = 4;
  int title_dim = 16;
  std::vector<int> hidden = {128, 64, 32};
  double leaky_slope = 0.01;
  double ln_eps = 1e-5;
  // Dense user-item statistic available to the ranking stage: the user's
  // latent affinity for the item plus Gaussian noise of this scale. Negative
  // disables it.
  double affinity_noise = 0.3;
  int epochs = 5;
  // Share of the records held out; the epoch with the lowest held-out CTR
  // log-loss is kept. Zero keeps the last epoch.
  double validation_fraction = 0.1;
  int batch_size = 256;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;

  int dense_width() const { return affinity_noise >= 0.0 ? 2 : 1; }
  int input_width() const {
    return 3 * profile_dim + term_dim + query_cat_dim + query_freq_dim + item_id_dim + item_cat_dim + price_dim +
           seller_dim + title_dim + dense_width();
  }
  void validate() const;
};

struct TeacherParams {
  TeacherConfig config;
  int n_items = 0;
  int n_categories = 0;
  int query_terms_vocab = 0;
  int title_terms_vocab = 0;
  int price_buckets = 0;
  int sellers = 0;
  int frequency_buckets = 0;
  std::array<nn::Matrix, kProfileFields> profile;
  nn::Matrix query_terms;
  nn::Matrix query_cats;
  nn::Matrix query_freq;
  nn::Matrix item_ids;
  nn::Matrix item_cats;
  nn::Matrix price;
  nn::Matrix seller;
  nn::Matrix title_terms;
  nn::Mlp mlp;  // two outputs: CTR logit, CVR logit

  nn::TensorList tensors();
  TeacherParams zeros_like() const;
};

TeacherParams init_teacher(const TeacherConfig& config, const Catalog& catalog);

struct ExposureRecord {
  UserId user = 0;
  QueryId query = 0;
  ItemId item = 0;
  bool click = false;
  bool purchase = false;
};

// In-scenario exposure records of the given logs, in log order.
std::vector<ExposureRecord> exposure_records(std::span<const RequestLog> logs);

struct CalibrationBin {
  double mean_predicted = 0.0;
  double mean_observed = 0.0;
  std::size_t count = 0;
};

struct TeacherTrainReport {
  std::vector<double> epoch_loss;      // mean CTR + CVR log-loss per epoch
  std::vector<double> validation_loss;  // held-out CTR log-loss per epoch
  int best_epoch = -1;                  // 0-based epoch kept
  std::vector<CalibrationBin> ctr_deciles;
  std::vector<CalibrationBin> cvr_deciles;  // over clicked exposures
  double mean_pctr = 0.0;
  double click_rate = 0.0;
};

TeacherParams train_learned_teacher(const Catalog& catalog, std::span<const ExposureRecord> records,
                                    const TeacherConfig& config, TeacherTrainReport* report = nullptr);

TeacherScores teacher_predict(const TeacherParams& params, const Catalog& catalog, UserId u, QueryId q, ItemId p);

// Mean binary log-loss of predicted CTR over exposures.
double ctr_log_loss(const TeacherParams& params, const Catalog& catalog, std::span<const ExposureRecord> records);

// Decile calibration of (prediction, outcome) pairs sorted by prediction.
std::vector<CalibrationBin> calibration_deciles(std::vector<std::pair<double, double>> pairs);

inline constexpr const char* kTeacherModelType = "teacher";

nn::Checkpoint teacher_checkpoint(TeacherParams& params);
TeacherParams teacher_from_checkpoint(const nn::Checkpoint& ckpt);
void save_teacher(const TeacherParams& params, const std::filesystem::path& path);
TeacherParams load_teacher(const std::filesystem::path& path);

}  // namespace prerank
