#include "prerank/nn.hpp"

#include <cmath>
#include <cstring>

#include "prerank/io.hpp"

namespace prerank::nn {

void init_uniform(Matrix& m, double scale, Rng& rng) {
  std::uniform_real_distribution<double> unif(-scale, scale);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = unif(rng);
}

void Linear::init(int in, int out, Rng& rng) {
  weight.resize(in, out);
  init_uniform(weight, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  bias = Matrix::Zero(1, out);
}

Matrix Linear::forward(const Matrix& x) const {
  Matrix y = x * weight;
  y.rowwise() += bias.row(0);
  return y;
}

Matrix Linear::backward(const Matrix& x, const Matrix& dy, Linear& grad) const {
  grad.weight.noalias() += x.transpose() * dy;
  grad.bias += dy.colwise().sum();
  return dy * weight.transpose();
}

void Linear::append_tensors(const std::string& prefix, TensorList& out) {
  out.emplace_back(prefix + ".weight", &weight);
  out.emplace_back(prefix + ".bias", &bias);
}

void LayerNorm::init(int n) {
  gain = Matrix::Ones(1, n);
  shift = Matrix::Zero(1, n);
}

void LayerNorm::append_tensors(const std::string& prefix, TensorList& out) {
  out.emplace_back(prefix + ".gain", &gain);
  out.emplace_back(prefix + ".shift", &shift);
}

void Mlp::init(int in, const std::vector<int>& widths, int out, Rng& rng) {
  hidden.clear();
  norms.clear();
  int prev = in;
  for (int w : widths) {
    Linear l;
    l.init(prev, w, rng);
    hidden.push_back(std::move(l));
    LayerNorm n;
    n.init(w);
    norms.push_back(std::move(n));
    prev = w;
  }
  output.init(prev, out, rng);
}

void Mlp::append_tensors(const std::string& prefix, TensorList& out) {
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    hidden[i].append_tensors(prefix + ".fc" + std::to_string(i), out);
    norms[i].append_tensors(prefix + ".ln" + std::to_string(i), out);
  }
  output.append_tensors(prefix + ".out", out);
}

int Mlp::input_width() const {
  return static_cast<int>(hidden.empty() ? output.weight.rows() : hidden.front().weight.rows());
}

int Mlp::output_width() const { return static_cast<int>(output.weight.cols()); }

Matrix mlp_forward(const Mlp& mlp, const Matrix& x, const MlpOptions& opts, MlpCache* cache) {
  if (cache) {
    cache->inputs.clear();
    cache->xhat.clear();
    cache->inv_std.clear();
    cache->normed.clear();
  }
  Matrix h = x;
  for (std::size_t l = 0; l < mlp.hidden.size(); ++l) {
    Matrix pre = mlp.hidden[l].forward(h);
    const auto n = static_cast<double>(pre.cols());
    Eigen::VectorXd mean = pre.rowwise().sum() / n;
    pre.colwise() -= mean;
    Eigen::VectorXd var = pre.array().square().rowwise().sum() / n;
    Eigen::VectorXd inv = (var.array() + opts.ln_eps).rsqrt();
    Matrix xhat = inv.asDiagonal() * pre;
    Matrix normed = xhat.array().rowwise() * mlp.norms[l].gain.row(0).array();
    normed.rowwise() += mlp.norms[l].shift.row(0);
    Matrix act = normed.unaryExpr([s = opts.leaky_slope](double v) { return v > 0 ? v : s * v; });
    if (cache) {
      cache->inputs.push_back(std::move(h));
      cache->xhat.push_back(std::move(xhat));
      cache->inv_std.push_back(std::move(inv));
      cache->normed.push_back(std::move(normed));
    }
    h = std::move(act);
  }
  Matrix y = mlp.output.forward(h);
  if (cache) cache->final_input = std::move(h);
  return y;
}

Matrix mlp_backward(const Mlp& mlp, const MlpCache& cache, const Matrix& dy, const MlpOptions& opts, Mlp& grad) {
  Matrix d = mlp.output.backward(cache.final_input, dy, grad.output);
  for (std::size_t li = mlp.hidden.size(); li-- > 0;) {
    const Matrix& normed = cache.normed[li];
    const Matrix& xhat = cache.xhat[li];
    // LReLU
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      if (!(normed.data()[i] > 0)) d.data()[i] *= opts.leaky_slope;
    }
    // LN affine
    grad.norms[li].gain += (d.array() * xhat.array()).colwise().sum().matrix();
    grad.norms[li].shift += d.colwise().sum();
    Matrix dxhat = d.array().rowwise() * mlp.norms[li].gain.row(0).array();
    // LN normalization
    const auto n = static_cast<double>(dxhat.cols());
    Eigen::VectorXd sum_d = dxhat.rowwise().sum();
    Eigen::VectorXd sum_dx = (dxhat.array() * xhat.array()).rowwise().sum();
    Matrix dpre = dxhat * n;
    dpre.colwise() -= sum_d;
    dpre -= sum_dx.asDiagonal() * xhat;
    dpre = (cache.inv_std[li] / n).asDiagonal() * dpre;
    d = mlp.hidden[li].backward(cache.inputs[li], dpre, grad.hidden[li]);
  }
  return d;
}

Matrix l2_normalize_rows(const Matrix& y, Eigen::VectorXd* norms) {
  Eigen::VectorXd n = y.rowwise().norm();
  for (Eigen::Index i = 0; i < n.size(); ++i) {
    if (!(n[i] > 0.0) || !std::isfinite(n[i])) {
      throw NumericalFault("cannot normalize a zero or non-finite embedding (row " + std::to_string(i) + ")");
    }
  }
  Matrix out = n.cwiseInverse().asDiagonal() * y;
  if (norms) *norms = std::move(n);
  return out;
}

Matrix l2_normalize_rows_backward(const Matrix& normalized, const Eigen::VectorXd& norms, const Matrix& dout) {
  Eigen::VectorXd proj = (normalized.array() * dout.array()).rowwise().sum();
  Matrix d = dout - proj.asDiagonal() * normalized;
  return norms.cwiseInverse().asDiagonal() * d;
}

RowVector softmax(const RowVector& s) {
  if (s.size() == 0) return s;
  RowVector e = (s.array() - s.maxCoeff()).exp();
  return e / e.sum();
}

RowVector softmax_backward(const RowVector& a, const RowVector& da) {
  const double inner = a.dot(da);
  return a.array() * (da.array() - inner);
}

void Adam::step(const TensorList& params, const TensorList& grads) {
  if (params.size() != grads.size()) throw ContractViolation("adam: parameter/gradient count mismatch");
  if (m_.empty()) {
    for (const auto& [name, p] : params) {
      m_.push_back(Matrix::Zero(p->rows(), p->cols()));
      v_.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  const double lr = config_.learning_rate;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i].second;
    const Matrix& g = *grads[i].second;
    Matrix& m = m_[i];
    Matrix& v = v_[i];
    const Eigen::Index n = p.size();
    double* pd = p.data();
    const double* gd = g.data();
    double* md = m.data();
    double* vd = v.data();
    for (Eigen::Index k = 0; k < n; ++k) {
      const double gk = gd[k];
      if (gk == 0.0 && md[k] == 0.0 && vd[k] == 0.0) continue;
      md[k] = config_.beta1 * md[k] + (1.0 - config_.beta1) * gk;
      vd[k] = config_.beta2 * vd[k] + (1.0 - config_.beta2) * gk * gk;
      pd[k] -= lr * (md[k] / bc1) / (std::sqrt(vd[k] / bc2) + config_.epsilon);
    }
  }
}

void zero(const TensorList& tensors) {
  for (const auto& [name, t] : tensors) t->setZero();
}

bool all_finite(const TensorList& tensors) {
  for (const auto& [name, t] : tensors) {
    if (!t->allFinite()) return false;
  }
  return true;
}

std::size_t scalar_count(const TensorList& tensors) {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors) n += static_cast<std::size_t>(t->size());
  return n;
}

// --- checkpoint container ------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'P', 'R', 'E', 'R', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));  // little-endian hosts only
  out.append(buf, sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  void get_raw(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IoError("truncated checkpoint");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, ckpt.model_type);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.header.size()));
  for (const auto& [k, v] : ckpt.header) {
    put_string(out, k);
    put<double>(out, v);
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, m] : ckpt.tensors) {
    put_string(out, name);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    out.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  char magic[sizeof(kMagic)];
  r.get_raw(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw IoError("not a checkpoint file");
  if (r.get<std::uint32_t>() != kCheckpointVersion) throw IoError("unsupported checkpoint version");
  Checkpoint ckpt;
  ckpt.model_type = r.get_string();
  const auto n_header = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_header; ++i) {
    auto key = r.get_string();
    ckpt.header[key] = r.get<double>();
  }
  const auto n_tensors = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    auto name = r.get_string();
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    r.get_raw(m.data(), static_cast<std::size_t>(rows * cols) * sizeof(double));
    ckpt.tensors.emplace_back(std::move(name), std::move(m));
  }
  if (!r.done()) throw IoError("trailing bytes in checkpoint");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

Checkpoint make_checkpoint(std::string model_type, std::map<std::string, double> header, const TensorList& tensors) {
  Checkpoint c;
  c.model_type = std::move(model_type);
  c.header = std::move(header);
  for (const auto& [name, t] : tensors) c.tensors.emplace_back(name, *t);
  return c;
}

void restore_tensors(const Checkpoint& ckpt, const TensorList& tensors) {
  if (ckpt.tensors.size() != tensors.size()) throw IoError("checkpoint tensor count mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& [name, m] = ckpt.tensors[i];
    if (name != tensors[i].first) throw IoError("checkpoint tensor name mismatch: " + name);
    if (m.rows() != tensors[i].second->rows() || m.cols() != tensors[i].second->cols()) {
      throw IoError("checkpoint tensor shape mismatch: " + name);
    }
    *tensors[i].second = m;
  }
}

}  // namespace prerank::nn
