#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace ebmm {

class Tape;

enum class Activation { Identity, Tanh, Softplus, Relu };

namespace detail {
struct TensorImpl;
}

/// Dense row-major tensor of doubles with an optional gradient buffer.
///
/// Copies are handles onto shared storage, so a parameter held by a model and
/// the same parameter seen inside a tape record are one object. Use clone()
/// for an independent deep copy. Rank is 1 or 2; extents are positive.
///
/// A tensor becomes *tracked* on a tape either by Tape::watch (leaves) or by
/// being produced by a tape operation. Tape::backward accumulates d(output)/
/// d(tensor) into grad() for every tracked tensor; repeated backward calls
/// keep accumulating until zero_grad().
class Tensor {
 public:
  Tensor();  // empty handle; most operations reject it
  explicit Tensor(std::vector<int> shape);  // zero-filled
  Tensor(std::vector<int> shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double v);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const;
  int rank() const;
  /// Row/column view: rank-1 tensors count as a single row.
  int rows() const;
  int cols() const;
  std::size_t size() const;

  double* data();
  const double* data() const;
  double at(int i) const;
  double at(int r, int c) const;
  /// Value of a size-1 tensor.
  double value() const;

  bool has_grad() const;
  double* grad_data();
  const double* grad_data() const;
  /// Gradient as a tensor of the same shape (zeros if never written).
  Tensor grad() const;
  void zero_grad();

  /// Deep copy; the clone is untracked.
  Tensor clone() const;
  /// True if all values are finite.
  bool all_finite() const;

  std::string shape_str() const;

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
  friend class Tape;
};

/// Records primitive operations for reverse-mode differentiation.
///
/// Records live in creation order, which is already a topological order of
/// the value graph. A tape is a single-owner unit: build a graph, call
/// backward, then discard it. Operations whose inputs are all untracked
/// return plain tensors and leave no record, so the same entry points serve
/// gradient-free evaluation. Mutating a tracked tensor's values between the
/// forward pass and backward invalidates the gradients.
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Mark a leaf whose gradient should be accumulated.
  void watch(Tensor& t);
  bool tracked(const Tensor& t) const;
  std::size_t record_count() const;

  /// Matrix product of rank-2 tensors; transpose_b computes a * b^T.
  Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);
  /// Elementwise sum; also accepts [r x c] + [c] (bias row broadcast).
  Tensor add(const Tensor& a, const Tensor& b);
  /// Elementwise product of same-shape tensors.
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& a, double c);
  Tensor add_scalar(const Tensor& a, double c);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor neg(const Tensor& a);
  /// Elementwise nonlinearity; Identity passes through without a record.
  Tensor activation(const Tensor& a, Activation kind);
  Tensor exp(const Tensor& a);
  /// Sum of all entries -> scalar.
  Tensor sum(const Tensor& a);
  /// Mean of all entries -> scalar.
  Tensor mean(const Tensor& a);
  /// Row sums: [r x c] -> [r].
  Tensor sum_rows(const Tensor& a);

  /// Log density of a diagonal Gaussian, summed over coordinates:
  /// sum_k [ -0.5*log(2*pi*var_k) - 0.5*(x_k - mean_k)^2 / var_k ].
  /// Rank-1 inputs give a scalar; rank-2 [r x c] inputs give per-row sums
  /// [r]. mean and var may each be a 1-element tensor, broadcast to every
  /// coordinate. Differentiable in x, mean, and var. Rejects var <= 0.
  Tensor gaussian_log_density(const Tensor& x, const Tensor& mean,
                              const Tensor& var);

  /// log sum_i exp(a_i) over a rank-1 tensor -> scalar, or per row of a
  /// rank-2 tensor -> [r]. Addends are summed in ascending order, so the
  /// result is invariant under entry permutation.
  Tensor logsumexp(const Tensor& a);
  /// log( (1/c) * sum exp ), same shapes as logsumexp. Folding the count in
  /// keeps log_mean_exp of c identical entries bitwise equal to the entry.
  Tensor log_mean_exp(const Tensor& a);

  /// Stack m rank-1 tensors of length r into [r x m] (input i -> column i).
  Tensor stack_cols(const std::vector<Tensor>& cols);
  /// Concatenate [r x c1] and [r x c2] into [r x (c1+c2)].
  Tensor concat_cols(const Tensor& a, const Tensor& b);
  /// Same data, new shape (sizes must match).
  Tensor reshape(const Tensor& a, std::vector<int> shape);

  /// Accumulate d(output)/d(t) into grad() of every tracked tensor.
  /// `output` must be a size-1 tensor tracked on this tape.
  void backward(const Tensor& output);

 private:
  enum class Op {
    Matmul,
    Add,
    AddBias,
    Mul,
    Scale,
    AddScalar,
    Tanh,
    Softplus,
    Relu,
    Exp,
    Sum,
    Mean,
    SumRows,
    GaussLogDensity,
    LogSumExp,
    StackCols,
    ConcatCols,
    Reshape,
  };
  struct Record {
    Op op;
    Tensor a, b, c;            // operand handles (b, c optional)
    std::vector<Tensor> list;  // StackCols operands
    Tensor out;
    double k = 0.0;      // Scale / AddScalar constant
    bool flag = false;   // Matmul transpose_b; LogSumExp mean variant
  };

  int node_of(const Tensor& t) const;
  Tensor make_node(std::vector<int> shape, std::vector<double> values);
  void push(Record rec);
  bool any_tracked(const Tensor& a) const { return tracked(a); }
  bool any_tracked(const Tensor& a, const Tensor& b) const {
    return tracked(a) || tracked(b);
  }
  Tensor lse_impl(const Tensor& a, bool mean_variant);

  std::vector<Record> records_;
  int next_node_ = 0;
  const std::uint64_t id_;  // process-unique; see Tape::Tape
};

/// Compares the tape gradient of `f` at `point` against central finite
/// differences, coordinate by coordinate. Returns the maximum relative
/// discrepancy, with denominator max(|analytic|, |numeric|, 1e-8). `f` must
/// build a size-1 tensor from the watched input and be deterministic.
double finite_difference_check(
    const std::function<Tensor(Tape&, Tensor&)>& f, const Tensor& point,
    double step = 1e-5);

}  // namespace ebmm
