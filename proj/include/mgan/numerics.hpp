#pragma once

// Dense float64 tensors, a reverse-mode tape, seeded randomness and a
// central-difference gradient checker. Every model component is built from
// the operations declared here.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "mgan/errors.hpp"

namespace mgan {

using Shape = std::vector<std::size_t>;
using Mask = std::vector<bool>;

std::string shape_str(const Shape& shape);

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Rank-1 tensors behave as column vectors: rows() == length, cols() == 1.
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double item() const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  MatrixMap mat() { return {data_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())}; }
  ConstMatrixMap mat() const {
    return {data_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())};
  }
  VectorMap vec() { return {data_.data(), static_cast<Eigen::Index>(data_.size())}; }
  ConstVectorMap vec() const { return {data_.data(), static_cast<Eigen::Index>(data_.size())}; }

  void fill(double value);
  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

// xoshiro256** seeded through splitmix64. The sequence depends only on the
// seed, so runs reproduce across platforms and standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer in [0, n), unbiased.
  std::size_t below(std::size_t n);
  bool bernoulli(double p);

  // Fisher-Yates; used instead of std::shuffle whose output is library-specific.
  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
};

inline constexpr double kInitScale = 0.01;

// Entries drawn from U(-scale, scale).
Tensor init_uniform(const Shape& shape, Rng& rng, double scale = kInitScale);

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

// Ordered, named collection of trainable arrays. References returned by
// add()/get() stay valid for the lifetime of the set.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet& other);
  ParameterSet& operator=(const ParameterSet& other);
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  Parameter& add(std::string name, Tensor init);
  Parameter& get(std::string_view name);
  const Parameter& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();

  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  template <typename F>
  void for_each(F&& f) {
    for (auto& p : params_) f(*p);
  }
  template <typename F>
  void for_each(F&& f) const {
    for (const auto& p : params_) f(static_cast<const Parameter&>(*p));
  }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Tape;

// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Append-only record of a computation. Nodes are created in topological
// order, so backward() walks the ids in reverse and visits each node once.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad, const Tensor& out_value)>;

  // With grad_enabled == false nothing is recorded for backward and
  // parameters are read without gradient tracking.
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor value);
  // Parameters are registered once per tape; the node reads the parameter
  // value in place without copying it.
  Var param(Parameter& p);
  // Read a parameter as a constant even on a grad-enabled tape.
  Var frozen(const Parameter& p);

  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

  const Tensor& value(const Var& v) const;
  bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }
  // Gradient buffer of a node, zero-initialized on first access.
  Tensor& grad(const Var& v);
  // Like grad() but nullptr for nodes that do not require a gradient.
  Tensor* grad_if(const Var& v);

  // Seeds d(root)/d(root) = 1 and accumulates into Parameter::grad of every
  // parameter registered on this tape.
  void backward(const Var& root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
    bool has_grad = false;
  };

  bool any_requires_grad(std::span<const Var> inputs) const;

  bool grad_enabled_;
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  std::unordered_map<const Parameter*, std::size_t> frozen_nodes_;
};

// --- primitive operations (each with an exact backward rule) ---

Var matmul(Var a, Var b);          // [n×k]·[k×m]
Var matvec(Var a, Var x);          // [n×k]·[k]
Var transpose(Var a);
Var reshape(Var a, Shape shape);  // same row-major data, new shape
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var elementwise_mul(Var a, Var b);
Var add_rowwise(Var m, Var row);   // m[n×d] + row[d] broadcast over rows
Var add_scalar_var(Var x, Var s);  // x + s, s of size 1
Var scale(Var x, double factor);
Var add_constant(Var x, double c);
Var mul_constant(Var x, const Tensor& c);
Var tanh_op(Var x);
Var sigmoid_op(Var x);
Var hinge(Var x);                  // max(0, x); subgradient 0 at x == 0
Var concat(const std::vector<Var>& parts);   // rank-1 parts
Var concat_cols(Var a, Var b);     // [n×p] ++ [n×q] -> [n×(p+q)]
Var slice(Var x, std::size_t begin, std::size_t length);            // rank-1
Var slice_cols(Var m, std::size_t begin, std::size_t length);       // rank-2
Var repeat_rows(Var row, std::size_t n);
Var outer_sum(Var a, Var b);       // out(i,j) = a_i + b_j
Var gather_rows(Var table, std::span<const int> ids);
Var stack_rows(const std::vector<Var>& rows);
Var weighted_sum_rows(Var weights, Var m);  // Σ_i w_i m_i
Var sum(Var x);
Var mean(Var x);
Var sum_squares(Var x);
Var sq_euclidean(Var u, Var v);
Var add_n(const std::vector<Var>& scalars);

// Softmax over entries with mask[i] == true; masked entries are exactly 0.
Var masked_softmax(Var logits, const Mask& mask);
// Row-wise masked softmax over the columns of a matrix.
Var masked_softmax_rows(Var m, const Mask& col_mask);
// Mean of the rows selected by row_mask.
Var masked_mean_rows(Var m, const Mask& row_mask);

// Plain-tensor helpers for code paths that do not need a tape.
Tensor softmax_values(std::span<const double> logits, const Mask& mask);

// --- gradient checking ---

struct GradCheckReport {
  // Largest relative error over all checked entries.
  double max_rel_error = 0.0;
  // Largest relative error over entries whose |analytic − numeric| exceeds
  // noise_floor; the worst_* fields describe this entry.
  double max_resolved_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t entries_checked = 0;
  // Entries over tolerance whose disagreement is within noise_floor.
  std::size_t roundoff_limited = 0;
  // 16·u·max|f| / ε: the round-off resolution of the central difference.
  double noise_floor = 0.0;
  double tolerance = 0.0;

  bool passed() const { return max_resolved_rel_error < tolerance; }
};

using ScalarObjective = std::function<Var(Tape&)>;
// Selects which entries to check; returning false skips the entry.
using EntryFilter = std::function<bool(const Parameter&, std::size_t)>;

// Compares tape gradients of `objective` with central differences
// (f(θ+ε) − f(θ−ε)) / 2ε for every entry of every parameter in `params`.
// Relative error uses the denominator max(|analytic|, |numeric|, 1e-8).
// An entry counts as verified when its relative error is below tolerance or
// its absolute disagreement is within the round-off floor of the difference
// quotient. epsilon must lie in [1e-6, 1e-3].
GradCheckReport grad_check(ParameterSet& params, const ScalarObjective& objective, double epsilon,
                           double tolerance, const EntryFilter& filter = {});

double relative_error(double analytic, double numeric);

}  // namespace mgan
