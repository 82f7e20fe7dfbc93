#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "prerank/common.hpp"

namespace prerank::nn {

// Rows are examples; row-major keeps embedding rows and batch rows contiguous.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

using TensorList = std::vector<std::pair<std::string, Matrix*>>;
using ConstTensorList = std::vector<std::pair<std::string, const Matrix*>>;

// Symmetric uniform in [-scale, scale].
void init_uniform(Matrix& m, double scale, Rng& rng);

struct Linear {
  Matrix weight;  // in x out
  Matrix bias;    // 1 x out

  void init(int in, int out, Rng& rng);
  Matrix forward(const Matrix& x) const;
  // Accumulates weight/bias gradients into `grad` and returns dL/dx.
  Matrix backward(const Matrix& x, const Matrix& dy, Linear& grad) const;
  void append_tensors(const std::string& prefix, TensorList& out);
};

struct LayerNorm {
  Matrix gain;   // 1 x n
  Matrix shift;  // 1 x n

  void init(int n);
  void append_tensors(const std::string& prefix, TensorList& out);
};

struct MlpOptions {
  double leaky_slope = 0.01;
  double ln_eps = 1e-5;
};

// {(FC, LN, LReLU) x hidden.size(), FC}
struct Mlp {
  std::vector<Linear> hidden;
  std::vector<LayerNorm> norms;
  Linear output;

  void init(int in, const std::vector<int>& widths, int out, Rng& rng);
  void append_tensors(const std::string& prefix, TensorList& out);
  int input_width() const;
  int output_width() const;
};

struct MlpCache {
  std::vector<Matrix> inputs;   // input to each hidden FC
  std::vector<Matrix> xhat;     // normalized pre-activations
  std::vector<Eigen::VectorXd> inv_std;
  std::vector<Matrix> normed;   // LN output, input to LReLU
  Matrix final_input;
};

Matrix mlp_forward(const Mlp& mlp, const Matrix& x, const MlpOptions& opts, MlpCache* cache = nullptr);
Matrix mlp_backward(const Mlp& mlp, const MlpCache& cache, const Matrix& dy, const MlpOptions& opts, Mlp& grad);

// Row-wise L2 normalization. A zero row raises NumericalFault rather than
// dividing by zero.
Matrix l2_normalize_rows(const Matrix& y, Eigen::VectorXd* norms = nullptr);
Matrix l2_normalize_rows_backward(const Matrix& normalized, const Eigen::VectorXd& norms, const Matrix& dout);

// Softmax of a row vector; empty input returns empty.
RowVector softmax(const RowVector& s);
// Backward through softmax: ds = a .* (da - <a, da>).
RowVector softmax_backward(const RowVector& a, const RowVector& da);

// Adam over a flat list of tensors. State is allocated lazily on first step.
struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}
  void step(const TensorList& params, const TensorList& grads);
  long steps() const { return t_; }

 private:
  AdamConfig config_;
  long t_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

void zero(const TensorList& tensors);
bool all_finite(const TensorList& tensors);
std::size_t scalar_count(const TensorList& tensors);

// Versioned checkpoint container: magic, version, model-type tag, a numeric
// dimension header, then named row-major float64 tensors. Byte-stable.
struct Checkpoint {
  std::string model_type;
  std::map<std::string, double> header;
  std::vector<std::pair<std::string, Matrix>> tensors;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(std::string model_type, std::map<std::string, double> header, const TensorList& tensors);
// Copies tensors by name; shapes must match.
void restore_tensors(const Checkpoint& ckpt, const TensorList& tensors);

}  // namespace prerank::nn
