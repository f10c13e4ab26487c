#pragma once

// Dense tensors with tape-based reverse-mode differentiation.
//
// Every differentiable value is a `Var`: a handle to a graph node holding a
// forward value and, once `backward` has run, an accumulated gradient.
// Parameters are leaf Vars created with `requires_grad = true`; their
// gradients accumulate across `backward` calls until `zero_grad`.
//
// Differentiable ops work on 2-D row-major tensors; vectors are [1, n] and
// scalars are [1, 1]. The value-level helpers (`softmax`, `layer_norm`) accept
// any rank.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace sqgen::nn {

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Tensor row(std::vector<double> data);
  static Tensor scalar(double v) { return matrix(1, 1, {v}); }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // 2-D accessors; a rank-1 tensor is viewed as a single row.
  std::size_t rows() const noexcept { return shape_.size() >= 2 ? shape_[0] : 1; }
  std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }
  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::span<const double> row_values(std::size_t r) const noexcept {
    return std::span<const double>(data_).subspan(r * cols(), cols());
  }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
  bool all_finite() const noexcept;
  void fill(double v);

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

// Value-level numerics (no graph).
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-12);

struct Node;

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  const Tensor& value() const;
  Tensor& mutable_value();
  const Tensor& grad() const;
  bool requires_grad() const;
  bool defined() const noexcept { return node_ != nullptr; }

  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

  void zero_grad();

  // Internal handle; ops use it to link nodes.
  const std::shared_ptr<Node>& node() const noexcept { return node_; }
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad();
};

// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled() noexcept;

// Runs reverse-mode accumulation from a [1,1] loss into every reachable leaf
// that requires a gradient. Throws InvalidLoss for non-scalar losses.
void backward(const Var& loss);

// ---- differentiable ops ----

Var constant(Tensor value);

Var matmul(const Var& a, const Var& b, bool transpose_b = false);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_row(const Var& a, const Var& row);       // broadcast [1,n] over rows
Var mul_col(const Var& a, const Var& col);       // broadcast [r,1] over columns
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var add_constant(const Var& a, const Tensor& c);  // c is not differentiated
Var gelu(const Var& a);
Var sigmoid(const Var& a);
Var log(const Var& a);
Var softmax_rows(const Var& a);
Var layer_norm_rows(const Var& a, const Var& gain, const Var& bias, double eps = 1e-12);
Var embedding(const Var& table, std::span<const int> ids);
Var slice_cols(const Var& a, std::size_t start, std::size_t count);
Var slice_rows(const Var& a, std::size_t start, std::size_t count);
Var concat_cols(const std::vector<Var>& parts);
Var transpose(const Var& a);
Var sum(const Var& a);
// out[r, index[i]] += a[r, i]; result has `width` columns.
Var scatter_cols(const Var& a, std::span<const int> index, std::size_t width);
// out[r, 0] = a[r, index[r]].
Var pick_cols(const Var& a, std::span<const int> index);

// Linear layer weights: y = x W + b, W is [in, out].
struct Linear {
  Var weight;
  Var bias;
  Var operator()(const Var& x) const { return add_row(matmul(x, weight), bias); }
};

struct LayerNormParams {
  Var gain;
  Var bias;
  Var operator()(const Var& x) const { return layer_norm_rows(x, gain, bias); }
};

struct AttentionParams {
  Linear query;
  Linear key;
  Linear value;
  Linear output;
};

struct AttentionResult {
  Var output;         // [q, d]
  Var mean_weights;   // [q, k], attention weights averaged over heads
};

// Additive mask values for hidden key positions.
inline constexpr double kMaskValue = -1e9;

// Lower-triangular additive mask: query t may read keys <= t.
Tensor causal_mask(std::size_t length);

// Scaled dot-product attention with per-head split and output projection.
// `mask` is empty or an additive [q, k] tensor.
AttentionResult multi_head_attention(const Var& queries, const Var& keys, const Var& values,
                                     const AttentionParams& params, std::size_t n_heads,
                                     const Tensor& mask = {});

}  // namespace sqgen::nn
