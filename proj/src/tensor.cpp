#include "ebmm/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ebmm/errors.hpp"

namespace ebmm {

namespace detail {
struct TensorImpl {
  std::vector<int> shape;
  std::vector<double> values;
  std::vector<double> grad;  // allocated on demand, same length as values
  // Identity of the tape that tracks this tensor. A serial number rather
  // than a pointer: tapes are stack objects, and a later tape at a recycled
  // address must not mistake another tape's node ids for its own.
  std::uint64_t tape_id = 0;
  int node = -1;
};
}  // namespace detail

using detail::TensorImpl;

namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

std::size_t shape_size(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int e : shape) n *= static_cast<std::size_t>(e);
  return n;
}

void validate_shape(const std::vector<int>& shape) {
  if (shape.empty() || shape.size() > 2)
    throw DimensionError("tensor rank must be 1 or 2");
  for (int e : shape)
    if (e <= 0) throw DimensionError("tensor extents must be positive");
}

double stable_softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Log-sum-exp of one row with addends summed in ascending order, which makes
// the value invariant under permutation of the row. With mean_variant the
// count divides inside the log, so c identical entries reduce to the entry
// exactly. `weights` (optional) receives d(out)/d(a_k), identical for both
// variants.
double row_lse(const double* a, int c, bool mean_variant,
               double* weights = nullptr) {
  double m = a[0];
  for (int k = 1; k < c; ++k) m = std::max(m, a[k]);
  std::vector<double> e(static_cast<std::size_t>(c));
  for (int k = 0; k < c; ++k) e[static_cast<std::size_t>(k)] = a[k] - m;
  std::sort(e.begin(), e.end());
  double s = 0.0;
  for (double v : e) s += std::exp(v);
  if (weights) {
    for (int k = 0; k < c; ++k) weights[k] = std::exp(a[k] - m) / s;
  }
  return m + std::log(mean_variant ? s / static_cast<double>(c) : s);
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() = default;

Tensor::Tensor(std::vector<int> shape) {
  validate_shape(shape);
  impl_ = std::make_shared<TensorImpl>();
  impl_->values.assign(shape_size(shape), 0.0);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values) {
  validate_shape(shape);
  if (values.size() != shape_size(shape))
    throw DimensionError("tensor value count does not match shape");
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<int> shape, double v) {
  Tensor t(std::move(shape));
  std::fill(t.impl_->values.begin(), t.impl_->values.end(), v);
  return t;
}

const std::vector<int>& Tensor::shape() const { return impl_->shape; }

int Tensor::rank() const { return static_cast<int>(impl_->shape.size()); }

int Tensor::rows() const { return rank() == 2 ? impl_->shape[0] : 1; }

int Tensor::cols() const {
  return rank() == 2 ? impl_->shape[1] : impl_->shape[0];
}

std::size_t Tensor::size() const { return impl_->values.size(); }

double* Tensor::data() { return impl_->values.data(); }
const double* Tensor::data() const { return impl_->values.data(); }

double Tensor::at(int i) const { return impl_->values.at(static_cast<std::size_t>(i)); }

double Tensor::at(int r, int c) const {
  return impl_->values.at(static_cast<std::size_t>(r) * cols() + c);
}

double Tensor::value() const {
  if (size() != 1) throw ContractError("value() requires a size-1 tensor");
  return impl_->values[0];
}

bool Tensor::has_grad() const { return defined() && !impl_->grad.empty(); }

double* Tensor::grad_data() {
  if (impl_->grad.empty()) impl_->grad.assign(size(), 0.0);
  return impl_->grad.data();
}

const double* Tensor::grad_data() const {
  return impl_->grad.empty() ? nullptr : impl_->grad.data();
}

Tensor Tensor::grad() const {
  if (impl_->grad.empty()) return Tensor(impl_->shape);
  return Tensor(impl_->shape, impl_->grad);
}

void Tensor::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::clone() const { return Tensor(impl_->shape, impl_->values); }

bool Tensor::all_finite() const {
  for (double v : impl_->values)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < impl_->shape.size(); ++i) {
    if (i) os << " x ";
    os << impl_->shape[i];
  }
  os << "]";
  return os.str();
}

// ---------------------------------------------------------------------------
// Tape

Tape::Tape() : id_([] {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;  // 0 stays "tracked by no tape"
}()) {}

void Tape::watch(Tensor& t) {
  if (!t.defined()) throw ContractError("watch() on empty tensor");
  if (tracked(t)) return;
  t.impl_->tape_id = id_;
  t.impl_->node = next_node_++;
  t.grad_data();  // leaves always carry a gradient buffer
}

bool Tape::tracked(const Tensor& t) const {
  return t.defined() && t.impl_->tape_id == id_ && t.impl_->node >= 0;
}

std::size_t Tape::record_count() const { return records_.size(); }

int Tape::node_of(const Tensor& t) const {
  return tracked(t) ? t.impl_->node : -1;
}

Tensor Tape::make_node(std::vector<int> shape, std::vector<double> values) {
  Tensor t(std::move(shape), std::move(values));
  t.impl_->tape_id = id_;
  t.impl_->node = next_node_++;
  return t;
}

void Tape::push(Record rec) { records_.push_back(std::move(rec)); }

Tensor Tape::matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw DimensionError("matmul requires rank-2 operands, got " +
                         a.shape_str() + " and " + b.shape_str());
  const int inner_b = transpose_b ? b.shape()[1] : b.shape()[0];
  if (a.shape()[1] != inner_b)
    throw DimensionError("matmul shape mismatch: " + a.shape_str() +
                         (transpose_b ? " * transpose " : " * ") +
                         b.shape_str());
  const int r = a.shape()[0];
  const int c = transpose_b ? b.shape()[0] : b.shape()[1];
  std::vector<double> out(static_cast<std::size_t>(r) * c);
  {
    ConstMatMap A(a.data(), a.shape()[0], a.shape()[1]);
    ConstMatMap B(b.data(), b.shape()[0], b.shape()[1]);
    MatMap C(out.data(), r, c);
    if (transpose_b)
      C.noalias() = A * B.transpose();
    else
      C.noalias() = A * B;
  }
  if (!any_tracked(a, b)) return Tensor({r, c}, std::move(out));
  Tensor t = make_node({r, c}, std::move(out));
  push({Op::Matmul, a, b, {}, {}, t, 0.0, transpose_b});
  return t;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  const bool bias = a.rank() == 2 && b.rank() == 1 && a.shape()[1] == b.shape()[0];
  if (!bias && a.shape() != b.shape())
    throw DimensionError("add shape mismatch: " + a.shape_str() + " + " +
                         b.shape_str());
  std::vector<double> out(a.size());
  if (bias) {
    const int r = a.shape()[0], c = a.shape()[1];
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        out[static_cast<std::size_t>(i) * c + j] = a.at(i, j) + b.at(j);
  } else {
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  }
  if (!any_tracked(a, b)) return Tensor(a.shape(), std::move(out));
  Tensor t = make_node(a.shape(), std::move(out));
  push({bias ? Op::AddBias : Op::Add, a, b, {}, {}, t});
  return t;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError("mul shape mismatch: " + a.shape_str() + " * " +
                         b.shape_str());
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  if (!any_tracked(a, b)) return Tensor(a.shape(), std::move(out));
  Tensor t = make_node(a.shape(), std::move(out));
  push({Op::Mul, a, b, {}, {}, t});
  return t;
}

Tensor Tape::scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a.data()[i] * c;
  if (!tracked(a)) return Tensor(a.shape(), std::move(out));
  Tensor t = make_node(a.shape(), std::move(out));
  push({Op::Scale, a, {}, {}, {}, t, c});
  return t;
}

Tensor Tape::add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a.data()[i] + c;
  if (!tracked(a)) return Tensor(a.shape(), std::move(out));
  Tensor t = make_node(a.shape(), std::move(out));
  push({Op::AddScalar, a, {}, {}, {}, t, c});
  return t;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor Tape::neg(const Tensor& a) { return scale(a, -1.0); }

Tensor Tape::activation(const Tensor& a, Activation kind) {
  if (kind == Activation::Identity) return a;
  std::vector<double> out(a.size());
  Op op;
  switch (kind) {
    case Activation::Tanh:
      op = Op::Tanh;
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::tanh(a.data()[i]);
      break;
    case Activation::Softplus:
      op = Op::Softplus;
      for (std::size_t i = 0; i < a.size(); ++i)
        out[i] = stable_softplus(a.data()[i]);
      break;
    case Activation::Relu:
      op = Op::Relu;
      for (std::size_t i = 0; i < a.size(); ++i)
        out[i] = a.data()[i] > 0 ? a.data()[i] : 0.0;
      break;
    default:
      throw ContractError("unknown activation");
  }
  if (!tracked(a)) return Tensor(a.shape(), std::move(out));
  Tensor t = make_node(a.shape(), std::move(out));
  push({op, a, {}, {}, {}, t});
  return t;
}

Tensor Tape::exp(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::exp(a.data()[i]);
  if (!tracked(a)) return Tensor(a.shape(), std::move(out));
  Tensor t = make_node(a.shape(), std::move(out));
  push({Op::Exp, a, {}, {}, {}, t});
  return t;
}

Tensor Tape::sum(const Tensor& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i];
  if (!tracked(a)) return Tensor::scalar(s);
  Tensor t = make_node({1}, {s});
  push({Op::Sum, a, {}, {}, {}, t});
  return t;
}

Tensor Tape::mean(const Tensor& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i];
  s /= static_cast<double>(a.size());
  if (!tracked(a)) return Tensor::scalar(s);
  Tensor t = make_node({1}, {s});
  push({Op::Mean, a, {}, {}, {}, t});
  return t;
}

Tensor Tape::sum_rows(const Tensor& a) {
  if (a.rank() != 2)
    throw DimensionError("sum_rows requires a rank-2 tensor, got " +
                         a.shape_str());
  const int r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(static_cast<std::size_t>(r), 0.0);
  for (int i = 0; i < r; ++i) {
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += a.at(i, j);
    out[static_cast<std::size_t>(i)] = s;
  }
  if (!tracked(a)) return Tensor({r}, std::move(out));
  Tensor t = make_node({r}, std::move(out));
  push({Op::SumRows, a, {}, {}, {}, t});
  return t;
}

Tensor Tape::gaussian_log_density(const Tensor& x, const Tensor& mean,
                                  const Tensor& var) {
  const int r = x.rows(), c = x.cols();
  auto operand_ok = [&](const Tensor& t) {
    return t.size() == 1 || (t.rows() == r && t.cols() == c);
  };
  if (!operand_ok(mean) || !operand_ok(var))
    throw DimensionError("gaussian_log_density operands " + x.shape_str() +
                         ", " + mean.shape_str() + ", " + var.shape_str() +
                         " are incompatible");
  for (std::size_t i = 0; i < var.size(); ++i)
    if (!(var.data()[i] > 0.0))
      throw DomainError("gaussian_log_density requires positive variance");

  const bool mean_scalar = mean.size() == 1;
  const bool var_scalar = var.size() == 1;
  std::vector<double> out(static_cast<std::size_t>(r), 0.0);
  for (int i = 0; i < r; ++i) {
    double s = 0.0;
    for (int j = 0; j < c; ++j) {
      const double xv = x.data()[static_cast<std::size_t>(i) * c + j];
      const double mv = mean_scalar ? mean.data()[0]
                                    : mean.data()[static_cast<std::size_t>(i) * c + j];
      const double vv = var_scalar ? var.data()[0]
                                   : var.data()[static_cast<std::size_t>(i) * c + j];
      const double d = xv - mv;
      s += -0.5 * (kLog2Pi + std::log(vv)) - 0.5 * d * d / vv;
    }
    out[static_cast<std::size_t>(i)] = s;
  }
  std::vector<int> out_shape =
      x.rank() == 1 ? std::vector<int>{1} : std::vector<int>{r};
  if (!(tracked(x) || tracked(mean) || tracked(var)))
    return Tensor(out_shape, std::move(out));
  Tensor t = make_node(out_shape, std::move(out));
  push({Op::GaussLogDensity, x, mean, var, {}, t});
  return t;
}

Tensor Tape::lse_impl(const Tensor& a, bool mean_variant) {
  const int r = a.rows(), c = a.cols();
  std::vector<double> out(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i)
    out[static_cast<std::size_t>(i)] =
        row_lse(a.data() + static_cast<std::size_t>(i) * c, c, mean_variant);
  std::vector<int> out_shape =
      a.rank() == 1 ? std::vector<int>{1} : std::vector<int>{r};
  if (!tracked(a)) return Tensor(out_shape, std::move(out));
  Tensor t = make_node(out_shape, std::move(out));
  push({Op::LogSumExp, a, {}, {}, {}, t, 0.0, mean_variant});
  return t;
}

Tensor Tape::logsumexp(const Tensor& a) { return lse_impl(a, false); }

Tensor Tape::log_mean_exp(const Tensor& a) { return lse_impl(a, true); }

Tensor Tape::stack_cols(const std::vector<Tensor>& cols) {
  if (cols.empty()) throw ContractError("stack_cols on empty list");
  const int r = cols[0].cols();
  for (const Tensor& t : cols)
    if (t.rank() != 1 || t.cols() != r)
      throw DimensionError("stack_cols requires equal-length rank-1 inputs");
  const int m = static_cast<int>(cols.size());
  std::vector<double> out(static_cast<std::size_t>(r) * m);
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < r; ++i)
      out[static_cast<std::size_t>(i) * m + j] = cols[static_cast<std::size_t>(j)].at(i);
  bool track = false;
  for (const Tensor& t : cols) track = track || tracked(t);
  if (!track) return Tensor({r, m}, std::move(out));
  Tensor t = make_node({r, m}, std::move(out));
  Record rec{Op::StackCols, {}, {}, {}, cols, t};
  push(std::move(rec));
  return t;
}

Tensor Tape::concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[0] != b.shape()[0])
    throw DimensionError("concat_cols requires rank-2 inputs with equal rows, got " +
                         a.shape_str() + " and " + b.shape_str());
  const int r = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
  std::vector<double> out(static_cast<std::size_t>(r) * (ca + cb));
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < ca; ++j)
      out[static_cast<std::size_t>(i) * (ca + cb) + j] = a.at(i, j);
    for (int j = 0; j < cb; ++j)
      out[static_cast<std::size_t>(i) * (ca + cb) + ca + j] = b.at(i, j);
  }
  if (!any_tracked(a, b)) return Tensor({r, ca + cb}, std::move(out));
  Tensor t = make_node({r, ca + cb}, std::move(out));
  push({Op::ConcatCols, a, b, {}, {}, t});
  return t;
}

Tensor Tape::reshape(const Tensor& a, std::vector<int> shape) {
  validate_shape(shape);
  if (shape_size(shape) != a.size())
    throw DimensionError("reshape size mismatch: " + a.shape_str());
  std::vector<double> out(a.data(), a.data() + a.size());
  if (!tracked(a)) return Tensor(std::move(shape), std::move(out));
  Tensor t = make_node(std::move(shape), std::move(out));
  push({Op::Reshape, a, {}, {}, {}, t});
  return t;
}

void Tape::backward(const Tensor& output) {
  if (!output.defined() || output.size() != 1)
    throw ContractError("backward requires a size-1 output tensor");
  if (!tracked(output))
    throw ContractError("backward output is not tracked on this tape");

  // Fresh per-call adjoints; they fold into persistent grads at the end, so
  // repeated backward calls accumulate without double-counting stale state.
  std::vector<std::vector<double>> adj(static_cast<std::size_t>(next_node_));
  auto adj_of = [&](const Tensor& t) -> std::vector<double>& {
    auto& buf = adj[static_cast<std::size_t>(t.impl_->node)];
    if (buf.empty()) buf.assign(t.size(), 0.0);
    return buf;
  };
  adj_of(output)[0] = 1.0;

  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    const Record& rec = *it;
    const auto& go = adj[static_cast<std::size_t>(rec.out.impl_->node)];
    if (go.empty()) continue;
    switch (rec.op) {
      case Op::Matmul: {
        const Tensor &a = rec.a, &b = rec.b;
        ConstMatMap A(a.data(), a.shape()[0], a.shape()[1]);
        ConstMatMap B(b.data(), b.shape()[0], b.shape()[1]);
        ConstMatMap G(go.data(), rec.out.shape()[0], rec.out.shape()[1]);
        if (tracked(a)) {
          MatMap dA(adj_of(a).data(), a.shape()[0], a.shape()[1]);
          if (rec.flag)
            dA.noalias() += G * B;
          else
            dA.noalias() += G * B.transpose();
        }
        if (tracked(b)) {
          MatMap dB(adj_of(b).data(), b.shape()[0], b.shape()[1]);
          if (rec.flag)
            dB.noalias() += G.transpose() * A;
          else
            dB.noalias() += A.transpose() * G;
        }
        break;
      }
      case Op::Add: {
        if (tracked(rec.a)) {
          auto& da = adj_of(rec.a);
          for (std::size_t i = 0; i < da.size(); ++i) da[i] += go[i];
        }
        if (tracked(rec.b)) {
          auto& db = adj_of(rec.b);
          for (std::size_t i = 0; i < db.size(); ++i) db[i] += go[i];
        }
        break;
      }
      case Op::AddBias: {
        const int r = rec.a.shape()[0], c = rec.a.shape()[1];
        if (tracked(rec.a)) {
          auto& da = adj_of(rec.a);
          for (std::size_t i = 0; i < da.size(); ++i) da[i] += go[i];
        }
        if (tracked(rec.b)) {
          auto& db = adj_of(rec.b);
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j)
              db[static_cast<std::size_t>(j)] += go[static_cast<std::size_t>(i) * c + j];
        }
        break;
      }
      case Op::Mul: {
        if (tracked(rec.a)) {
          auto& da = adj_of(rec.a);
          for (std::size_t i = 0; i < da.size(); ++i)
            da[i] += go[i] * rec.b.data()[i];
        }
        if (tracked(rec.b)) {
          auto& db = adj_of(rec.b);
          for (std::size_t i = 0; i < db.size(); ++i)
            db[i] += go[i] * rec.a.data()[i];
        }
        break;
      }
      case Op::Scale: {
        auto& da = adj_of(rec.a);
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += rec.k * go[i];
        break;
      }
      case Op::AddScalar:
      case Op::Reshape: {
        auto& da = adj_of(rec.a);
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += go[i];
        break;
      }
      case Op::Tanh: {
        auto& da = adj_of(rec.a);
        for (std::size_t i = 0; i < da.size(); ++i) {
          const double y = rec.out.data()[i];
          da[i] += go[i] * (1.0 - y * y);
        }
        break;
      }
      case Op::Softplus: {
        auto& da = adj_of(rec.a);
        for (std::size_t i = 0; i < da.size(); ++i)
          da[i] += go[i] * sigmoid(rec.a.data()[i]);
        break;
      }
      case Op::Relu: {
        auto& da = adj_of(rec.a);
        for (std::size_t i = 0; i < da.size(); ++i)
          if (rec.a.data()[i] > 0) da[i] += go[i];
        break;
      }
      case Op::Exp: {
        auto& da = adj_of(rec.a);
        for (std::size_t i = 0; i < da.size(); ++i)
          da[i] += go[i] * rec.out.data()[i];
        break;
      }
      case Op::Sum: {
        auto& da = adj_of(rec.a);
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += go[0];
        break;
      }
      case Op::Mean: {
        auto& da = adj_of(rec.a);
        const double g = go[0] / static_cast<double>(rec.a.size());
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += g;
        break;
      }
      case Op::SumRows: {
        auto& da = adj_of(rec.a);
        const int r = rec.a.shape()[0], c = rec.a.shape()[1];
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j)
            da[static_cast<std::size_t>(i) * c + j] += go[static_cast<std::size_t>(i)];
        break;
      }
      case Op::GaussLogDensity: {
        const Tensor &x = rec.a, &mu = rec.b, &va = rec.c;
        const int r = x.rows(), c = x.cols();
        const bool ms = mu.size() == 1, vs = va.size() == 1;
        const bool tx = tracked(x), tm = tracked(mu), tv = tracked(va);
        double* dx = tx ? adj_of(x).data() : nullptr;
        double* dm = tm ? adj_of(mu).data() : nullptr;
        double* dv = tv ? adj_of(va).data() : nullptr;
        for (int i = 0; i < r; ++i) {
          const double g = go[static_cast<std::size_t>(i)];
          if (g == 0.0) continue;
          for (int j = 0; j < c; ++j) {
            const std::size_t idx = static_cast<std::size_t>(i) * c + j;
            const double xv = x.data()[idx];
            const double mv = ms ? mu.data()[0] : mu.data()[idx];
            const double vv = vs ? va.data()[0] : va.data()[idx];
            const double d = xv - mv;
            if (tx) dx[idx] += g * (-d / vv);
            if (tm) dm[ms ? 0 : idx] += g * (d / vv);
            if (tv) dv[vs ? 0 : idx] += g * (-0.5 / vv + 0.5 * d * d / (vv * vv));
          }
        }
        break;
      }
      case Op::LogSumExp: {
        auto& da = adj_of(rec.a);
        const int r = rec.a.rows(), c = rec.a.cols();
        std::vector<double> w(static_cast<std::size_t>(c));
        for (int i = 0; i < r; ++i) {
          const double g = go[static_cast<std::size_t>(i)];
          if (g == 0.0) continue;
          row_lse(rec.a.data() + static_cast<std::size_t>(i) * c, c, rec.flag,
                  w.data());
          for (int j = 0; j < c; ++j)
            da[static_cast<std::size_t>(i) * c + j] += g * w[static_cast<std::size_t>(j)];
        }
        break;
      }
      case Op::StackCols: {
        const int m = static_cast<int>(rec.list.size());
        const int r = rec.out.shape()[0];
        for (int j = 0; j < m; ++j) {
          const Tensor& col = rec.list[static_cast<std::size_t>(j)];
          if (!tracked(col)) continue;
          auto& dc = adj_of(col);
          for (int i = 0; i < r; ++i)
            dc[static_cast<std::size_t>(i)] += go[static_cast<std::size_t>(i) * m + j];
        }
        break;
      }
      case Op::ConcatCols: {
        const int r = rec.a.shape()[0];
        const int ca = rec.a.shape()[1], cb = rec.b.shape()[1];
        if (tracked(rec.a)) {
          auto& da = adj_of(rec.a);
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < ca; ++j)
              da[static_cast<std::size_t>(i) * ca + j] +=
                  go[static_cast<std::size_t>(i) * (ca + cb) + j];
        }
        if (tracked(rec.b)) {
          auto& db = adj_of(rec.b);
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < cb; ++j)
              db[static_cast<std::size_t>(i) * cb + j] +=
                  go[static_cast<std::size_t>(i) * (ca + cb) + ca + j];
        }
        break;
      }
    }
  }

  // Fold adjoints into persistent gradients for every tracked tensor that
  // received one. Leaves keep accumulating across backward calls.
  auto fold = [&](const Tensor& t) {
    const auto& buf = adj[static_cast<std::size_t>(t.impl_->node)];
    if (buf.empty()) return;
    Tensor handle = t;
    double* g = handle.grad_data();
    for (std::size_t i = 0; i < buf.size(); ++i) g[i] += buf[i];
  };
  // Watched leaves have no producing record; walk records for interior nodes
  // and operands.
  std::vector<bool> folded(static_cast<std::size_t>(next_node_), false);
  auto fold_once = [&](const Tensor& t) {
    if (!tracked(t)) return;
    auto id = static_cast<std::size_t>(t.impl_->node);
    if (folded[id]) return;
    folded[id] = true;
    fold(t);
  };
  fold_once(output);
  for (const Record& rec : records_) {
    fold_once(rec.a);
    fold_once(rec.b);
    fold_once(rec.c);
    for (const Tensor& t : rec.list) fold_once(t);
    fold_once(rec.out);
  }
}

// ---------------------------------------------------------------------------

double finite_difference_check(
    const std::function<Tensor(Tape&, Tensor&)>& f, const Tensor& point,
    double step) {
  Tensor p = point.clone();
  Tape tape;
  tape.watch(p);
  Tensor y = f(tape, p);
  if (y.size() != 1)
    throw ContractError("finite_difference_check requires a scalar function");
  // A function that never touches p yields an untracked output; its gradient
  // is identically zero, which p.grad() already reports.
  if (tape.tracked(y)) tape.backward(y);
  Tensor analytic = p.grad();

  auto eval = [&](const Tensor& at) {
    Tensor q = at.clone();
    Tape t;
    t.watch(q);
    return f(t, q).value();
  };

  double worst = 0.0;
  for (std::size_t i = 0; i < point.size(); ++i) {
    Tensor hi = point.clone();
    Tensor lo = point.clone();
    hi.data()[i] += step;
    lo.data()[i] -= step;
    const double numeric = (eval(hi) - eval(lo)) / (2.0 * step);
    const double a = analytic.data()[i];
    const double denom =
        std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace ebmm
