#include "sqgen/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "sqgen/error.hpp"

namespace sqgen::nn {

namespace {

thread_local bool g_grad_enabled = true;

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorKind::ConfigError, what);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw Error(ErrorKind::ConfigError, std::string(op) + ": shape mismatch " +
                                            shape_string(a.shape()) + " vs " +
                                            shape_string(b.shape()));
  }
}

// Builds a node; graph links are only kept when some input needs a gradient.
Var make_var(Tensor value, std::vector<std::shared_ptr<Node>> parents,
             std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  const bool needs = g_grad_enabled &&
                     std::any_of(parents.begin(), parents.end(),
                                 [](const auto& p) { return p->requires_grad; });
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return Var(std::move(node));
}

Tensor& parent_grad(Node& self, std::size_t i) { return self.parents[i]->ensure_grad(); }
bool parent_needs(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != product(shape_)) {
    throw Error(ErrorKind::ConfigError, "tensor data size " + std::to_string(data_.size()) +
                                            " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return Tensor({rows, cols}, std::move(data));
}

Tensor Tensor::row(std::vector<double> data) {
  const std::size_t n = data.size();
  return Tensor({1, n}, std::move(data));
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw Error(ErrorKind::ConfigError, "softmax axis out of range");
  const auto& shape = x.shape();
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t n = shape[axis];
  const std::size_t outer = x.size() / (n * inner);
  Tensor y(shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = -INFINITY;
      for (std::size_t k = 0; k < n; ++k) {
        const double v = x[base + k * inner];
        if (std::isnan(v)) throw Error(ErrorKind::NumericalError, "softmax input contains NaN");
        mx = std::max(mx, v);
      }
      double total = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double e = std::exp(x[base + k * inner] - mx);
        y[base + k * inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < n; ++k) y[base + k * inner] /= total;
    }
  }
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t d = x.cols();
  if (d < 2) throw Error(ErrorKind::ConfigError, "layer_norm needs a last axis of at least 2");
  if (gain.size() != d || bias.size() != d) {
    throw Error(ErrorKind::ConfigError, "layer_norm gain/bias size mismatch");
  }
  Tensor y(x.shape());
  const std::size_t rows = x.size() / d;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.storage().data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += in[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (in[c] - mean) * (in[c] - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) y[r * d + c] = (in[c] - mean) * inv * gain[c] + bias[c];
  }
  return y;
}

// ---------------------------------------------------------------- graph

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

const Tensor& Var::value() const { return node_->value; }
Tensor& Var::mutable_value() { return node_->value; }

const Tensor& Var::grad() const { return node_->ensure_grad(); }

bool Var::requires_grad() const { return node_->requires_grad; }

void Var::zero_grad() {
  if (!node_->grad.empty()) node_->grad.fill(0.0);
}

Tensor& Node::ensure_grad() {
  if (grad.size() != value.size()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() noexcept { return g_grad_enabled; }

void backward(const Var& loss) {
  if (!loss.defined() || loss.value().size() != 1) {
    throw Error(ErrorKind::InvalidLoss, "backward needs a scalar loss");
  }
  Node* root = loss.node().get();
  if (!root->requires_grad) return;
  if (root->parents.empty()) {
    root->ensure_grad()[0] += 1.0;
    return;
  }

  // Iterative post-order DFS gives a topological order over interior nodes.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !p->parents.empty() && seen.insert(p).second) {
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior gradients are transient; leaves accumulate.
  for (Node* n : order) n->grad = Tensor(n->value.shape(), 0.0);
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
  for (Node* n : order) {
    if (n != root) n->grad = Tensor();
  }
}

// ---------------------------------------------------------------- ops

Var constant(Tensor value) { return Var(std::move(value), false); }

Var matmul(const Var& a, const Var& b, bool transpose_b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const std::size_t m = A.rows();
  const std::size_t k = A.cols();
  const std::size_t n = transpose_b ? B.rows() : B.cols();
  require((transpose_b ? B.cols() : B.rows()) == k,
          "matmul: inner dimension mismatch " + shape_string(A.shape()) + " x " +
              shape_string(B.shape()) + (transpose_b ? "^T" : ""));
  Tensor C({m, n}, 0.0);
  const double* pa = A.storage().data();
  const double* pb = B.storage().data();
  double* pc = C.storage().data();
  if (!transpose_b) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double av = pa[i * k + p];
        if (av == 0.0) continue;
        const double* brow = pb + p * n;
        double* crow = pc + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      const double* arow = pa + i * k;
      for (std::size_t j = 0; j < n; ++j) {
        const double* brow = pb + j * k;
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
        pc[i * n + j] = s;
      }
    }
  }
  return make_var(std::move(C), {a.node(), b.node()}, [m, k, n, transpose_b](Node& self) {
    const double* g = self.grad.storage().data();
    const double* pa = self.parents[0]->value.storage().data();
    const double* pb = self.parents[1]->value.storage().data();
    if (parent_needs(self, 0)) {
      double* ga = parent_grad(self, 0).storage().data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        if (!transpose_b) {
          // dA[i,p] = sum_j dC[i,j] B[p,j]
          for (std::size_t p = 0; p < k; ++p) {
            const double* brow = pb + p * n;
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
            ga[i * k + p] += s;
          }
        } else {
          // dA[i,p] = sum_j dC[i,j] B[j,p]
          for (std::size_t j = 0; j < n; ++j) {
            const double gv = grow[j];
            if (gv == 0.0) continue;
            const double* brow = pb + j * k;
            double* garow = ga + i * k;
            for (std::size_t p = 0; p < k; ++p) garow[p] += gv * brow[p];
          }
        }
      }
    }
    if (parent_needs(self, 1)) {
      double* gb = parent_grad(self, 1).storage().data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        const double* arow = pa + i * k;
        if (!transpose_b) {
          // dB[p,j] += A[i,p] dC[i,j]
          for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* gbrow = gb + p * n;
            for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
          }
        } else {
          // dB[j,p] += dC[i,j] A[i,p]
          for (std::size_t j = 0; j < n; ++j) {
            const double gv = grow[j];
            if (gv == 0.0) continue;
            double* gbrow = gb + j * k;
            for (std::size_t p = 0; p < k; ++p) gbrow[p] += gv * arow[p];
          }
        }
      }
    }
  });
}

namespace {

template <typename Fwd, typename DA, typename DB>
Var binary_elementwise(const Var& a, const Var& b, const char* name, Fwd fwd, DA da, DB db) {
  require_same_shape(a.value(), b.value(), name);
  Tensor out(a.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.value()[i], b.value()[i]);
  return make_var(std::move(out), {a.node(), b.node()}, [da, db](Node& self) {
    const Tensor& x = self.parents[0]->value;
    const Tensor& y = self.parents[1]->value;
    if (parent_needs(self, 0)) {
      Tensor& g = parent_grad(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * da(x[i], y[i]);
    }
    if (parent_needs(self, 1)) {
      Tensor& g = parent_grad(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * db(x[i], y[i]);
    }
  });
}

template <typename Fwd, typename Deriv>
Var unary_elementwise(const Var& a, Fwd fwd, Deriv deriv) {
  Tensor out(a.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.value()[i]);
  return make_var(std::move(out), {a.node()}, [deriv](Node& self) {
    const Tensor& x = self.parents[0]->value;
    Tensor& g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv(x[i], self.value[i]);
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  return binary_elementwise(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
  return binary_elementwise(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
  return binary_elementwise(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var add_row(const Var& a, const Var& row) {
  const Tensor& A = a.value();
  const std::size_t r = A.rows();
  const std::size_t c = A.cols();
  require(row.value().size() == c, "add_row: bias width mismatch");
  Tensor out = A;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += row.value()[j];
  return make_var(std::move(out), {a.node(), row.node()}, [r, c](Node& self) {
    if (parent_needs(self, 0)) {
      Tensor& g = parent_grad(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (parent_needs(self, 1)) {
      Tensor& g = parent_grad(self, 1);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
    }
  });
}

Var mul_col(const Var& a, const Var& col) {
  const Tensor& A = a.value();
  const std::size_t r = A.rows();
  const std::size_t c = A.cols();
  require(col.value().size() == r, "mul_col: column height mismatch");
  Tensor out = A;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] *= col.value()[i];
  return make_var(std::move(out), {a.node(), col.node()}, [r, c](Node& self) {
    const Tensor& x = self.parents[0]->value;
    const Tensor& s = self.parents[1]->value;
    if (parent_needs(self, 0)) {
      Tensor& g = parent_grad(self, 0);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * c + j] * s[i];
    }
    if (parent_needs(self, 1)) {
      Tensor& g = parent_grad(self, 1);
      for (std::size_t i = 0; i < r; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < c; ++j) acc += self.grad[i * c + j] * x[i * c + j];
        g[i] += acc;
      }
    }
  });
}

Var scale(const Var& a, double s) {
  return unary_elementwise(
      a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary_elementwise(
      a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var add_constant(const Var& a, const Tensor& c) {
  require_same_shape(a.value(), c, "add_constant");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += c[i];
  return make_var(std::move(out), {a.node()}, [](Node& self) {
    Tensor& g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var gelu(const Var& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary_elementwise(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) {
        return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
      });
}

Var sigmoid(const Var& a) {
  return unary_elementwise(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var log(const Var& a) {
  static constexpr double kFloor = 1e-300;
  for (double v : a.value().values()) {
    if (!(v >= 0.0)) throw Error(ErrorKind::NumericalError, "log of negative or NaN value");
  }
  return unary_elementwise(
      a, [](double x) { return std::log(std::max(x, kFloor)); },
      [](double x, double) { return 1.0 / std::max(x, kFloor); });
}

Var softmax_rows(const Var& a) {
  Tensor y = softmax(a.value(), a.value().rank() - 1);
  const std::size_t r = y.rows();
  const std::size_t c = y.cols();
  return make_var(std::move(y), {a.node()}, [r, c](Node& self) {
    Tensor& g = parent_grad(self, 0);
    for (std::size_t i = 0; i < r; ++i) {
      const double* yr = self.value.storage().data() + i * c;
      const double* gr = self.grad.storage().data() + i * c;
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += gr[j] * yr[j];
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += yr[j] * (gr[j] - dot);
    }
  });
}

Var layer_norm_rows(const Var& a, const Var& gain, const Var& bias, double eps) {
  const Tensor& X = a.value();
  const std::size_t r = X.rows();
  const std::size_t d = X.cols();
  if (d < 2) throw Error(ErrorKind::ConfigError, "layer_norm needs a last axis of at least 2");
  require(gain.value().size() == d && bias.value().size() == d,
          "layer_norm gain/bias size mismatch");
  // Cache normalized rows and inverse std for the backward pass.
  auto xhat = std::make_shared<std::vector<double>>(r * d);
  auto inv_std = std::make_shared<std::vector<double>>(r);
  Tensor y({r, d});
  for (std::size_t i = 0; i < r; ++i) {
    const double* in = X.storage().data() + i * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += in[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (in[c] - mean) * (in[c] - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = inv;
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (in[c] - mean) * inv;
      (*xhat)[i * d + c] = h;
      y[i * d + c] = h * gain.value()[c] + bias.value()[c];
    }
  }
  return make_var(std::move(y), {a.node(), gain.node(), bias.node()},
                  [r, d, xhat, inv_std](Node& self) {
                    const Tensor& gvec = self.parents[1]->value;
                    const double* G = self.grad.storage().data();
                    if (parent_needs(self, 1)) {
                      Tensor& gg = parent_grad(self, 1);
                      for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t c = 0; c < d; ++c)
                          gg[c] += G[i * d + c] * (*xhat)[i * d + c];
                    }
                    if (parent_needs(self, 2)) {
                      Tensor& gb = parent_grad(self, 2);
                      for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t c = 0; c < d; ++c) gb[c] += G[i * d + c];
                    }
                    if (parent_needs(self, 0)) {
                      Tensor& gx = parent_grad(self, 0);
                      const double inv_d = 1.0 / static_cast<double>(d);
                      for (std::size_t i = 0; i < r; ++i) {
                        double mean_dh = 0.0;
                        double mean_dh_h = 0.0;
                        for (std::size_t c = 0; c < d; ++c) {
                          const double dh = G[i * d + c] * gvec[c];
                          mean_dh += dh;
                          mean_dh_h += dh * (*xhat)[i * d + c];
                        }
                        mean_dh *= inv_d;
                        mean_dh_h *= inv_d;
                        for (std::size_t c = 0; c < d; ++c) {
                          const double dh = G[i * d + c] * gvec[c];
                          gx[i * d + c] += (*inv_std)[i] *
                                           (dh - mean_dh - (*xhat)[i * d + c] * mean_dh_h);
                        }
                      }
                    }
                  });
}

Var embedding(const Var& table, std::span<const int> ids) {
  const Tensor& T = table.value();
  const std::size_t d = T.cols();
  const std::size_t n = ids.size();
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= T.rows()) {
      throw Error(ErrorKind::InvalidTokenId,
                  "embedding id " + std::to_string(ids[i]) + " out of range");
    }
    std::copy_n(T.storage().data() + static_cast<std::size_t>(ids[i]) * d, d,
                out.storage().data() + i * d);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return make_var(std::move(out), {table.node()}, [idx = std::move(idx), d](Node& self) {
    Tensor& g = parent_grad(self, 0);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      double* row = g.storage().data() + static_cast<std::size_t>(idx[i]) * d;
      const double* src = self.grad.storage().data() + i * d;
      for (std::size_t c = 0; c < d; ++c) row[c] += src[c];
    }
  });
}

Var slice_cols(const Var& a, std::size_t start, std::size_t count) {
  const Tensor& A = a.value();
  const std::size_t r = A.rows();
  const std::size_t c = A.cols();
  require(start + count <= c, "slice_cols out of range");
  Tensor out({r, count});
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(A.storage().data() + i * c + start, count, out.storage().data() + i * count);
  return make_var(std::move(out), {a.node()}, [r, c, start, count](Node& self) {
    Tensor& g = parent_grad(self, 0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < count; ++j) g[i * c + start + j] += self.grad[i * count + j];
  });
}

Var slice_rows(const Var& a, std::size_t start, std::size_t count) {
  const Tensor& A = a.value();
  const std::size_t c = A.cols();
  require(start + count <= A.rows(), "slice_rows out of range");
  Tensor out({count, c});
  std::copy_n(A.storage().data() + start * c, count * c, out.storage().data());
  return make_var(std::move(out), {a.node()}, [c, start, count](Node& self) {
    Tensor& g = parent_grad(self, 0);
    for (std::size_t i = 0; i < count * c; ++i) g[start * c + i] += self.grad[i];
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols of nothing");
  const std::size_t r = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  std::vector<std::shared_ptr<Node>> nodes;
  for (const auto& p : parts) {
    require(p.rows() == r, "concat_cols: row count mismatch");
    widths.push_back(p.cols());
    total += p.cols();
    nodes.push_back(p.node());
  }
  Tensor out({r, total});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& P = parts[k].value();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(P.storage().data() + i * widths[k], widths[k],
                  out.storage().data() + i * total + offset);
    offset += widths[k];
  }
  return make_var(std::move(out), std::move(nodes), [r, total, widths](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (parent_needs(self, k)) {
        Tensor& g = parent_grad(self, k);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j)
            g[i * widths[k] + j] += self.grad[i * total + off + j];
      }
      off += widths[k];
    }
  });
}

Var transpose(const Var& a) {
  const Tensor& A = a.value();
  const std::size_t r = A.rows();
  const std::size_t c = A.cols();
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = A[i * c + j];
  return make_var(std::move(out), {a.node()}, [r, c](Node& self) {
    Tensor& g = parent_grad(self, 0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return make_var(Tensor::scalar(s), {a.node()}, [](Node& self) {
    Tensor& g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
  });
}

Var scatter_cols(const Var& a, std::span<const int> index, std::size_t width) {
  const Tensor& A = a.value();
  const std::size_t r = A.rows();
  const std::size_t c = A.cols();
  require(index.size() == c, "scatter_cols: index length mismatch");
  for (int v : index) {
    if (v < 0 || static_cast<std::size_t>(v) >= width) {
      throw Error(ErrorKind::InvalidTokenId, "scatter_cols index out of range");
    }
  }
  Tensor out({r, width}, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      out[i * width + static_cast<std::size_t>(index[j])] += A[i * c + j];
  std::vector<int> idx(index.begin(), index.end());
  return make_var(std::move(out), {a.node()}, [r, c, width, idx = std::move(idx)](Node& self) {
    Tensor& g = parent_grad(self, 0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j)
        g[i * c + j] += self.grad[i * width + static_cast<std::size_t>(idx[j])];
  });
}

Var pick_cols(const Var& a, std::span<const int> index) {
  const Tensor& A = a.value();
  const std::size_t r = A.rows();
  const std::size_t c = A.cols();
  require(index.size() == r, "pick_cols: one index per row required");
  Tensor out({r, 1});
  for (std::size_t i = 0; i < r; ++i) {
    if (index[i] < 0 || static_cast<std::size_t>(index[i]) >= c) {
      throw Error(ErrorKind::InvalidTokenId, "pick_cols index out of range");
    }
    out[i] = A[i * c + static_cast<std::size_t>(index[i])];
  }
  std::vector<int> idx(index.begin(), index.end());
  return make_var(std::move(out), {a.node()}, [c, idx = std::move(idx)](Node& self) {
    Tensor& g = parent_grad(self, 0);
    for (std::size_t i = 0; i < idx.size(); ++i)
      g[i * c + static_cast<std::size_t>(idx[i])] += self.grad[i];
  });
}

// ---------------------------------------------------------------- attention

Tensor causal_mask(std::size_t length) {
  Tensor m({length, length}, 0.0);
  for (std::size_t i = 0; i < length; ++i)
    for (std::size_t j = i + 1; j < length; ++j) m(i, j) = kMaskValue;
  return m;
}

AttentionResult multi_head_attention(const Var& queries, const Var& keys, const Var& values,
                                     const AttentionParams& params, std::size_t n_heads,
                                     const Tensor& mask) {
  const std::size_t d = queries.cols();
  if (n_heads == 0 || d % n_heads != 0) {
    throw Error(ErrorKind::ConfigError, "model dimension " + std::to_string(d) +
                                            " not divisible by " + std::to_string(n_heads) +
                                            " heads");
  }
  const std::size_t q_len = queries.rows();
  const std::size_t k_len = keys.rows();
  if (!mask.empty() && (mask.rows() != q_len || mask.cols() != k_len)) {
    throw Error(ErrorKind::ConfigError, "attention mask shape " + shape_string(mask.shape()) +
                                            " does not match scores");
  }
  const std::size_t head_dim = d / n_heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  const Var q = params.query(queries);
  const Var k = params.key(keys);
  const Var v = params.value(values);

  std::vector<Var> heads;
  heads.reserve(n_heads);
  Var weight_sum;
  for (std::size_t h = 0; h < n_heads; ++h) {
    const Var qh = slice_cols(q, h * head_dim, head_dim);
    const Var kh = slice_cols(k, h * head_dim, head_dim);
    const Var vh = slice_cols(v, h * head_dim, head_dim);
    Var scores = scale(matmul(qh, kh, /*transpose_b=*/true), inv_scale);
    if (!mask.empty()) scores = add_constant(scores, mask);
    const Var weights = softmax_rows(scores);
    heads.push_back(matmul(weights, vh));
    weight_sum = weight_sum.defined() ? add(weight_sum, weights) : weights;
  }
  const Var merged = n_heads == 1 ? heads.front() : concat_cols(heads);
  return {params.output(merged), scale(weight_sum, 1.0 / static_cast<double>(n_heads))};
}

}  // namespace sqgen::nn
