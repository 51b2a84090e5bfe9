#include "mgan/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace mgan {

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

std::size_t shape_product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(a.shape()));
  }
}

}  // namespace

// --- Tensor ---

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (auto d : shape_) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_str(shape_));
  }
  data_.assign(shape_product(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_str(shape_));
  }
  if (shape_product(shape_) != data_.size()) {
    throw DimensionError("tensor shape " + shape_str(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::scalar(double value) { return Tensor({1}, std::vector<double>{value}); }

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

std::size_t Tensor::rows() const { return shape_.empty() ? 0 : shape_[0]; }

std::size_t Tensor::cols() const {
  if (shape_.size() < 2) return shape_.empty() ? 0 : 1;
  return data_.size() / shape_[0];
}

double Tensor::item() const {
  if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

// --- Rng ---

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t state = seed;
  for (auto& s : s_) s = splitmix64(state);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::size_t Rng::below(std::size_t n) {
  if (n == 0) throw DomainError("Rng::below(0)");
  const std::uint64_t bound = n;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return static_cast<std::size_t>(x % bound);
}

bool Rng::bernoulli(double p) { return uniform() < p; }

Tensor init_uniform(const Shape& shape, Rng& rng, double scale) {
  Tensor t(shape);
  for (auto& v : t.data()) v = rng.uniform(-scale, scale);
  return t;
}

// --- ParameterSet ---

ParameterSet::ParameterSet(const ParameterSet& other) { *this = other; }

ParameterSet& ParameterSet::operator=(const ParameterSet& other) {
  if (this == &other) return *this;
  params_.clear();
  index_.clear();
  for (const auto& p : other.params_) {
    params_.push_back(std::make_unique<Parameter>(*p));
    index_.emplace(p->name, params_.size() - 1);
  }
  return *this;
}

Parameter& ParameterSet::add(std::string name, Tensor init) {
  if (index_.count(name)) throw ValidationError("duplicate parameter name: " + name);
  Tensor grad(init.shape());
  index_.emplace(name, params_.size());
  params_.push_back(std::make_unique<Parameter>(Parameter{std::move(name), std::move(init), std::move(grad)}));
  return *params_.back();
}

Parameter& ParameterSet::get(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw IndexError("unknown parameter: " + std::string(name));
  return *params_[it->second];
}

const Parameter& ParameterSet::get(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw IndexError("unknown parameter: " + std::string(name));
  return *params_[it->second];
}

bool ParameterSet::contains(std::string_view name) const { return index_.count(std::string(name)) > 0; }

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p->grad.fill(0.0);
}

// --- Tape ---

const Tensor& Var::value() const { return tape_->value(*this); }

Var Tape::constant(Tensor value) {
  Node node;
  node.owned = std::move(value);
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

Var Tape::param(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return {this, it->second};
  Node node;
  node.external = &p.value;
  if (grad_enabled_) {
    node.param = &p;
    node.requires_grad = true;
  }
  nodes_.push_back(std::move(node));
  param_nodes_.emplace(&p, nodes_.size() - 1);
  return {this, nodes_.size() - 1};
}

Var Tape::frozen(const Parameter& p) {
  auto it = frozen_nodes_.find(&p);
  if (it != frozen_nodes_.end()) return {this, it->second};
  Node node;
  node.external = &p.value;
  nodes_.push_back(std::move(node));
  frozen_nodes_.emplace(&p, nodes_.size() - 1);
  return {this, nodes_.size() - 1};
}

bool Tape::any_requires_grad(std::span<const Var> inputs) const {
  return std::any_of(inputs.begin(), inputs.end(), [this](const Var& v) { return nodes_[v.id()].requires_grad; });
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
  Node node;
  node.owned = std::move(value);
  if (grad_enabled_ && any_requires_grad(inputs)) {
    node.requires_grad = true;
    node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

const Tensor& Tape::value(const Var& v) const {
  const Node& node = nodes_[v.id()];
  return node.external ? *node.external : node.owned;
}

Tensor& Tape::grad(const Var& v) {
  Node& node = nodes_[v.id()];
  if (!node.has_grad) {
    node.grad = Tensor(value(v).shape());
    node.has_grad = true;
  }
  return node.grad;
}

Tensor* Tape::grad_if(const Var& v) {
  if (!nodes_[v.id()].requires_grad) return nullptr;
  return &grad(v);
}

void Tape::backward(const Var& root) {
  if (root.value().size() != 1) {
    throw DimensionError("backward() needs a scalar root, got " + shape_str(root.shape()));
  }
  if (!nodes_[root.id()].requires_grad) return;
  grad(root)[0] = 1.0;
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.has_grad) continue;
    if (node.backward) {
      node.backward(*this, node.grad, node.external ? *node.external : node.owned);
    } else if (node.param) {
      node.param->grad.vec() += node.grad.vec();
    }
  }
}

// --- operations ---

Var matmul(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_rank("matmul", x, 2);
  require_rank("matmul", y, 2);
  if (x.cols() != y.rows()) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  }
  Tensor out({x.rows(), y.cols()});
  out.mat().noalias() = x.mat() * y.mat();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* ga = t.grad_if(a)) ga->mat().noalias() += g.mat() * b.value().mat().transpose();
    if (Tensor* gb = t.grad_if(b)) gb->mat().noalias() += a.value().mat().transpose() * g.mat();
  });
}

Var matvec(Var a, Var x) {
  const Tensor& m = a.value();
  const Tensor& v = x.value();
  require_rank("matvec", m, 2);
  require_rank("matvec", v, 1);
  if (m.cols() != v.size()) {
    throw DimensionError("matvec: inner dimensions differ " + shape_str(m.shape()) + " vs " + shape_str(v.shape()));
  }
  Tensor out({m.rows()});
  out.vec().noalias() = m.mat() * v.vec();
  return a.tape().record(std::move(out), {a, x}, [a, x](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* ga = t.grad_if(a)) ga->mat().noalias() += g.vec() * x.value().vec().transpose();
    if (Tensor* gx = t.grad_if(x)) gx->vec().noalias() += a.value().mat().transpose() * g.vec();
  });
}

Var transpose(Var a) {
  const Tensor& m = a.value();
  require_rank("transpose", m, 2);
  Tensor out({m.cols(), m.rows()});
  out.mat() = m.mat().transpose();
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* ga = t.grad_if(a)) ga->mat() += g.mat().transpose();
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out(std::move(shape), a.value().values());
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* ga = t.grad_if(a)) ga->vec() += g.vec();
  });
}

Var add(Var a, Var b) {
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  out.vec() += b.value().vec();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* ga = t.grad_if(a)) ga->vec() += g.vec();
    if (Tensor* gb = t.grad_if(b)) gb->vec() += g.vec();
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  out.vec() -= b.value().vec();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* ga = t.grad_if(a)) ga->vec() += g.vec();
    if (Tensor* gb = t.grad_if(b)) gb->vec() -= g.vec();
  });
}

Var elementwise_mul(Var a, Var b) {
  require_same_shape("elementwise_mul", a.value(), b.value());
  Tensor out = a.value();
  out.vec().array() *= b.value().vec().array();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* ga = t.grad_if(a)) ga->vec().array() += g.vec().array() * b.value().vec().array();
    if (Tensor* gb = t.grad_if(b)) gb->vec().array() += g.vec().array() * a.value().vec().array();
  });
}

Var add_rowwise(Var m, Var row) {
  const Tensor& x = m.value();
  const Tensor& r = row.value();
  require_rank("add_rowwise", x, 2);
  require_rank("add_rowwise", r, 1);
  if (x.cols() != r.size()) {
    throw DimensionError("add_rowwise: " + shape_str(x.shape()) + " vs " + shape_str(r.shape()));
  }
  Tensor out = x;
  out.mat().rowwise() += r.vec().transpose();
  return m.tape().record(std::move(out), {m, row}, [m, row](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* gm = t.grad_if(m)) gm->vec() += g.vec();
    if (Tensor* gr = t.grad_if(row)) gr->vec() += g.mat().colwise().sum().transpose();
  });
}

Var add_scalar_var(Var x, Var s) {
  if (s.value().size() != 1) throw DimensionError("add_scalar_var: scalar operand has shape " + shape_str(s.shape()));
  Tensor out = x.value();
  out.vec().array() += s.value()[0];
  return x.tape().record(std::move(out), {x, s}, [x, s](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* gx = t.grad_if(x)) gx->vec() += g.vec();
    if (Tensor* gs = t.grad_if(s)) (*gs)[0] += g.vec().sum();
  });
}

Var scale(Var x, double factor) {
  Tensor out = x.value();
  out.vec() *= factor;
  return x.tape().record(std::move(out), {x}, [x, factor](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* gx = t.grad_if(x)) gx->vec() += factor * g.vec();
  });
}

Var add_constant(Var x, double c) {
  Tensor out = x.value();
  out.vec().array() += c;
  return x.tape().record(std::move(out), {x}, [x](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* gx = t.grad_if(x)) gx->vec() += g.vec();
  });
}

Var mul_constant(Var x, const Tensor& c) {
  require_same_shape("mul_constant", x.value(), c);
  Tensor out = x.value();
  out.vec().array() *= c.vec().array();
  return x.tape().record(std::move(out), {x}, [x, c](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* gx = t.grad_if(x)) gx->vec().array() += g.vec().array() * c.vec().array();
  });
}

Var tanh_op(Var x) {
  Tensor out = x.value();
  out.vec() = out.vec().array().tanh().matrix();
  return x.tape().record(std::move(out), {x}, [x](Tape& t, const Tensor& g, const Tensor& y) {
    if (Tensor* gx = t.grad_if(x)) gx->vec().array() += g.vec().array() * (1.0 - y.vec().array().square());
  });
}

namespace {
double sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}
}  // namespace

Var sigmoid_op(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = sigmoid(v);
  return x.tape().record(std::move(out), {x}, [x](Tape& t, const Tensor& g, const Tensor& y) {
    if (Tensor* gx = t.grad_if(x)) gx->vec().array() += g.vec().array() * y.vec().array() * (1.0 - y.vec().array());
  });
}

Var hinge(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return x.tape().record(std::move(out), {x}, [x](Tape& t, const Tensor& g, const Tensor&) {
    Tensor* gx = t.grad_if(x);
    if (!gx) return;
    const Tensor& in = x.value();
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (in[i] > 0.0) (*gx)[i] += g[i];
    }
  });
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat: no operands");
  std::vector<double> data;
  for (const auto& p : parts) {
    require_rank("concat", p.value(), 1);
    data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  }
  return parts.front().tape().record(Tensor::vector(std::move(data)), parts,
                                     [parts](Tape& t, const Tensor& g, const Tensor&) {
                                       std::size_t offset = 0;
                                       for (const auto& p : parts) {
                                         const std::size_t n = p.value().size();
                                         if (Tensor* gp = t.grad_if(p)) {
                                           gp->vec() += g.vec().segment(static_cast<Eigen::Index>(offset),
                                                                        static_cast<Eigen::Index>(n));
                                         }
                                         offset += n;
                                       }
                                     });
}

Var concat_cols(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_rank("concat_cols", x, 2);
  require_rank("concat_cols", y, 2);
  if (x.rows() != y.rows()) {
    throw DimensionError("concat_cols: row counts differ " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  }
  const auto p = static_cast<Eigen::Index>(x.cols());
  const auto q = static_cast<Eigen::Index>(y.cols());
  Tensor out({x.rows(), x.cols() + y.cols()});
  out.mat().leftCols(p) = x.mat();
  out.mat().rightCols(q) = y.mat();
  return a.tape().record(std::move(out), {a, b}, [a, b, p, q](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* ga = t.grad_if(a)) ga->mat() += g.mat().leftCols(p);
    if (Tensor* gb = t.grad_if(b)) gb->mat() += g.mat().rightCols(q);
  });
}

Var slice(Var x, std::size_t begin, std::size_t length) {
  const Tensor& v = x.value();
  require_rank("slice", v, 1);
  if (length == 0 || begin + length > v.size()) {
    throw DimensionError("slice [" + std::to_string(begin) + ", +" + std::to_string(length) + ") out of " +
                         shape_str(v.shape()));
  }
  std::vector<double> data(v.data().begin() + static_cast<std::ptrdiff_t>(begin),
                           v.data().begin() + static_cast<std::ptrdiff_t>(begin + length));
  return x.tape().record(Tensor::vector(std::move(data)), {x}, [x, begin, length](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* gx = t.grad_if(x)) {
      gx->vec().segment(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(length)) += g.vec();
    }
  });
}

Var slice_cols(Var m, std::size_t begin, std::size_t length) {
  const Tensor& v = m.value();
  require_rank("slice_cols", v, 2);
  if (length == 0 || begin + length > v.cols()) {
    throw DimensionError("slice_cols [" + std::to_string(begin) + ", +" + std::to_string(length) + ") out of " +
                         shape_str(v.shape()));
  }
  const auto b = static_cast<Eigen::Index>(begin);
  const auto l = static_cast<Eigen::Index>(length);
  Tensor out({v.rows(), length});
  out.mat() = v.mat().middleCols(b, l);
  return m.tape().record(std::move(out), {m}, [m, b, l](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* gm = t.grad_if(m)) gm->mat().middleCols(b, l) += g.mat();
  });
}

Var repeat_rows(Var row, std::size_t n) {
  const Tensor& r = row.value();
  require_rank("repeat_rows", r, 1);
  Tensor out({n, r.size()});
  out.mat().rowwise() = r.vec().transpose();
  return row.tape().record(std::move(out), {row}, [row](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* gr = t.grad_if(row)) gr->vec() += g.mat().colwise().sum().transpose();
  });
}

Var outer_sum(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_rank("outer_sum", x, 1);
  require_rank("outer_sum", y, 1);
  Tensor out({x.size(), y.size()});
  out.mat() = x.vec().replicate(1, static_cast<Eigen::Index>(y.size()));
  out.mat().rowwise() += y.vec().transpose();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* ga = t.grad_if(a)) ga->vec() += g.mat().rowwise().sum();
    if (Tensor* gb = t.grad_if(b)) gb->vec() += g.mat().colwise().sum().transpose();
  });
}

Var gather_rows(Var table, std::span<const int> ids) {
  const Tensor& tab = table.value();
  require_rank("gather_rows", tab, 2);
  if (ids.empty()) throw DimensionError("gather_rows: no ids");
  const std::size_t d = tab.cols();
  Tensor out({ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= tab.rows()) {
      throw IndexError("gather_rows: id " + std::to_string(ids[r]) + " outside table of " +
                       std::to_string(tab.rows()) + " rows");
    }
    out.mat().row(static_cast<Eigen::Index>(r)) = tab.mat().row(ids[r]);
  }
  std::vector<int> rows(ids.begin(), ids.end());
  return table.tape().record(std::move(out), {table}, [table, rows = std::move(rows)](Tape& t, const Tensor& g, const Tensor&) {
    Tensor* gt = t.grad_if(table);
    if (!gt) return;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      gt->mat().row(rows[r]) += g.mat().row(static_cast<Eigen::Index>(r));
    }
  });
}

Var stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw DimensionError("stack_rows: no operands");
  const std::size_t d = rows.front().value().size();
  Tensor out({rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require_rank("stack_rows", rows[r].value(), 1);
    if (rows[r].value().size() != d) {
      throw DimensionError("stack_rows: row " + std::to_string(r) + " has shape " + shape_str(rows[r].shape()));
    }
    out.mat().row(static_cast<Eigen::Index>(r)) = rows[r].value().vec().transpose();
  }
  return rows.front().tape().record(std::move(out), rows, [rows](Tape& t, const Tensor& g, const Tensor&) {
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (Tensor* gr = t.grad_if(rows[r])) gr->vec() += g.mat().row(static_cast<Eigen::Index>(r)).transpose();
    }
  });
}

Var weighted_sum_rows(Var weights, Var m) {
  const Tensor& w = weights.value();
  const Tensor& x = m.value();
  require_rank("weighted_sum_rows", w, 1);
  require_rank("weighted_sum_rows", x, 2);
  if (w.size() != x.rows()) {
    throw DimensionError("weighted_sum_rows: " + shape_str(w.shape()) + " vs " + shape_str(x.shape()));
  }
  Tensor out({x.cols()});
  out.vec().noalias() = x.mat().transpose() * w.vec();
  return weights.tape().record(std::move(out), {weights, m}, [weights, m](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* gw = t.grad_if(weights)) gw->vec().noalias() += m.value().mat() * g.vec();
    if (Tensor* gm = t.grad_if(m)) gm->mat().noalias() += weights.value().vec() * g.vec().transpose();
  });
}

Var sum(Var x) {
  return x.tape().record(Tensor::scalar(x.value().vec().sum()), {x}, [x](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* gx = t.grad_if(x)) gx->vec().array() += g[0];
  });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  return x.tape().record(Tensor::scalar(x.value().vec().sum() / n), {x}, [x, n](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* gx = t.grad_if(x)) gx->vec().array() += g[0] / n;
  });
}

Var sum_squares(Var x) {
  return x.tape().record(Tensor::scalar(x.value().vec().squaredNorm()), {x}, [x](Tape& t, const Tensor& g, const Tensor&) {
    if (Tensor* gx = t.grad_if(x)) gx->vec() += 2.0 * g[0] * x.value().vec();
  });
}

Var sq_euclidean(Var u, Var v) {
  require_same_shape("sq_euclidean", u.value(), v.value());
  const double d = (u.value().vec() - v.value().vec()).squaredNorm();
  return u.tape().record(Tensor::scalar(d), {u, v}, [u, v](Tape& t, const Tensor& g, const Tensor&) {
    Eigen::VectorXd diff = u.value().vec() - v.value().vec();
    if (Tensor* gu = t.grad_if(u)) gu->vec() += 2.0 * g[0] * diff;
    if (Tensor* gv = t.grad_if(v)) gv->vec() -= 2.0 * g[0] * diff;
  });
}

Var add_n(const std::vector<Var>& scalars) {
  if (scalars.empty()) throw DimensionError("add_n: no operands");
  double total = 0.0;
  for (const auto& s : scalars) {
    if (s.value().size() != 1) throw DimensionError("add_n: operand of shape " + shape_str(s.shape()));
    total += s.value()[0];
  }
  return scalars.front().tape().record(Tensor::scalar(total), scalars, [scalars](Tape& t, const Tensor& g, const Tensor&) {
    for (const auto& s : scalars) {
      if (Tensor* gs = t.grad_if(s)) (*gs)[0] += g[0];
    }
  });
}

namespace {

// Masked softmax of one contiguous row, written into out.
void softmax_row(const double* logits, const Mask& mask, double* out, std::size_t n) {
  double max = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    if (mask[i]) max = std::max(max, logits[i]);
  }
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = mask[i] ? std::exp(logits[i] - max) : 0.0;
    z += out[i];
  }
  for (std::size_t i = 0; i < n; ++i) out[i] /= z;
}

void require_mask(const char* op, const Mask& mask, std::size_t n) {
  if (mask.size() != n) {
    throw DimensionError(std::string(op) + ": mask of length " + std::to_string(mask.size()) + " for " +
                         std::to_string(n) + " entries");
  }
  if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; })) {
    throw DomainError(std::string(op) + ": mask selects no entries");
  }
}

// dL/dz_i = y_i (g_i − Σ_j g_j y_j); masked entries have y_i = 0 and receive 0.
void softmax_row_backward(const double* y, const double* g, double* gx, std::size_t n) {
  double dot = 0.0;
  for (std::size_t i = 0; i < n; ++i) dot += g[i] * y[i];
  for (std::size_t i = 0; i < n; ++i) gx[i] += y[i] * (g[i] - dot);
}

}  // namespace

Tensor softmax_values(std::span<const double> logits, const Mask& mask) {
  require_mask("masked_softmax", mask, logits.size());
  Tensor out({logits.size()});
  softmax_row(logits.data(), mask, out.data().data(), logits.size());
  return out;
}

Var masked_softmax(Var logits, const Mask& mask) {
  const Tensor& z = logits.value();
  require_rank("masked_softmax", z, 1);
  Tensor out = softmax_values(z.data(), mask);
  return logits.tape().record(std::move(out), {logits}, [logits](Tape& t, const Tensor& g, const Tensor& y) {
    if (Tensor* gz = t.grad_if(logits)) softmax_row_backward(y.data().data(), g.data().data(), gz->data().data(), y.size());
  });
}

Var masked_softmax_rows(Var m, const Mask& col_mask) {
  const Tensor& z = m.value();
  require_rank("masked_softmax_rows", z, 2);
  require_mask("masked_softmax_rows", col_mask, z.cols());
  const std::size_t rows = z.rows();
  const std::size_t cols = z.cols();
  Tensor out({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    softmax_row(z.data().data() + r * cols, col_mask, out.data().data() + r * cols, cols);
  }
  return m.tape().record(std::move(out), {m}, [m, rows, cols](Tape& t, const Tensor& g, const Tensor& y) {
    Tensor* gm = t.grad_if(m);
    if (!gm) return;
    for (std::size_t r = 0; r < rows; ++r) {
      softmax_row_backward(y.data().data() + r * cols, g.data().data() + r * cols, gm->data().data() + r * cols, cols);
    }
  });
}

Var masked_mean_rows(Var m, const Mask& row_mask) {
  const Tensor& x = m.value();
  require_rank("masked_mean_rows", x, 2);
  require_mask("masked_mean_rows", row_mask, x.rows());
  const double count = static_cast<double>(std::count(row_mask.begin(), row_mask.end(), true));
  Tensor out({x.cols()});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    if (row_mask[r]) out.vec() += x.mat().row(static_cast<Eigen::Index>(r)).transpose();
  }
  out.vec() /= count;
  return m.tape().record(std::move(out), {m}, [m, row_mask, count](Tape& t, const Tensor& g, const Tensor&) {
    Tensor* gm = t.grad_if(m);
    if (!gm) return;
    for (std::size_t r = 0; r < row_mask.size(); ++r) {
      if (row_mask[r]) gm->mat().row(static_cast<Eigen::Index>(r)) += g.vec().transpose() / count;
    }
  });
}

// --- gradient checking ---

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(ParameterSet& params, const ScalarObjective& objective, double epsilon, double tolerance,
                           const EntryFilter& filter) {
  if (!(epsilon >= 1e-6 && epsilon <= 1e-3)) {
    throw DomainError("grad_check: epsilon " + std::to_string(epsilon) + " outside [1e-6, 1e-3]");
  }
  auto evaluate = [&objective]() {
    Tape tape(false);
    const double v = objective(tape).value().item();
    if (!std::isfinite(v)) throw EvaluationError("grad_check: objective evaluated to a non-finite value");
    return v;
  };

  params.zero_grad();
  double f0 = 0.0;
  {
    Tape tape(true);
    Var root = objective(tape);
    f0 = root.value().item();
    if (!std::isfinite(f0)) throw EvaluationError("grad_check: objective evaluated to a non-finite value");
    tape.backward(root);
  }

  struct Entry {
    std::size_t param;
    std::size_t index;
    double analytic;
    double numeric;
  };
  std::vector<Entry> entries;
  double f_scale = std::abs(f0);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = params[pi];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      if (filter && !filter(p, i)) continue;
      const double saved = p.value[i];
      p.value[i] = saved + epsilon;
      const double plus = evaluate();
      p.value[i] = saved - epsilon;
      const double minus = evaluate();
      p.value[i] = saved;
      f_scale = std::max({f_scale, std::abs(plus), std::abs(minus)});
      entries.push_back({pi, i, p.grad[i], (plus - minus) / (2.0 * epsilon)});
    }
  }

  GradCheckReport report;
  report.tolerance = tolerance;
  report.entries_checked = entries.size();
  report.noise_floor = 16.0 * std::numeric_limits<double>::epsilon() * std::max(f_scale, 1.0) / epsilon;
  bool have_resolved = false;
  for (const Entry& e : entries) {
    const double err = relative_error(e.analytic, e.numeric);
    report.max_rel_error = std::max(report.max_rel_error, err);
    if (std::abs(e.analytic - e.numeric) <= report.noise_floor) {
      if (err >= tolerance) ++report.roundoff_limited;
      continue;
    }
    if (!have_resolved || err > report.max_resolved_rel_error) {
      have_resolved = true;
      report.max_resolved_rel_error = err;
      report.worst_param = params[e.param].name;
      report.worst_index = e.index;
      report.analytic_at_worst = e.analytic;
      report.numeric_at_worst = e.numeric;
    }
  }
  return report;
}

}  // namespace mgan
