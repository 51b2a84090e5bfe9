#include "mgan/encoder.hpp"

#include <cmath>

namespace mgan {

void add_encoder_params(ParameterSet& params, std::size_t vocab_size, std::size_t d_w, std::size_t d_h, Rng& rng,
                        const Tensor* embeddings) {
  if (embeddings) {
    if (embeddings->shape() != Shape{vocab_size, d_w}) {
      throw DimensionError("embedding table " + shape_str(embeddings->shape()) + " does not match vocabulary " +
                           shape_str({vocab_size, d_w}));
    }
    params.add("embedding", *embeddings);
  } else {
    Tensor table = init_uniform({vocab_size, d_w}, rng);
    for (std::size_t c = 0; c < d_w; ++c) table.at(0, c) = 0.0;
    params.add("embedding", std::move(table));
  }
  for (const char* dir : {"encoder.fw", "encoder.bw"}) {
    const std::string prefix(dir);
    params.add(prefix + ".w_x", init_uniform({4 * d_h, d_w}, rng));
    params.add(prefix + ".w_h", init_uniform({4 * d_h, d_h}, rng));
    params.add(prefix + ".b", init_uniform({4 * d_h}, rng));
  }
}

namespace {
Var bind(Tape& tape, Parameter& p, bool trainable) { return trainable ? tape.param(p) : tape.frozen(p); }
}  // namespace

EncoderWeights bind_encoder(Tape& tape, ParameterSet& params, bool trainable) {
  auto dir = [&](const std::string& prefix) {
    return LstmWeights{bind(tape, params.get(prefix + ".w_x"), trainable),
                       bind(tape, params.get(prefix + ".w_h"), trainable),
                       bind(tape, params.get(prefix + ".b"), trainable)};
  };
  return EncoderWeights{bind(tape, params.get("embedding"), trainable), dir("encoder.fw"), dir("encoder.bw")};
}

Var embed(Var table, std::span<const int> ids, const Mask& mask, const DropoutSpec& dropout) {
  if (mask.size() != ids.size()) {
    throw DimensionError("embed: " + std::to_string(ids.size()) + " ids but mask of length " +
                         std::to_string(mask.size()));
  }
  Var rows = gather_rows(table, ids);
  if (!dropout.enabled || dropout.rate <= 0.0) return rows;
  if (!dropout.rng) throw DomainError("embed: dropout enabled without a random generator");
  const double keep = 1.0 - dropout.rate;
  Tensor keep_mask(rows.shape(), 0.0);
  const std::size_t d = keep_mask.cols();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (!mask[r]) continue;
    for (std::size_t c = 0; c < d; ++c) {
      keep_mask.at(r, c) = dropout.rng->bernoulli(keep) ? 1.0 / keep : 0.0;
    }
  }
  return mul_constant(rows, keep_mask);
}

namespace {

double sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

Var lstm(Var x, const LstmWeights& w, const Mask& mask, bool reverse) {
  const Tensor& in = x.value();
  const Tensor& wx = w.w_x.value();
  const Tensor& wh = w.w_h.value();
  const Tensor& bias = w.b.value();
  if (in.rank() != 2 || wx.rank() != 2 || wh.rank() != 2 || bias.rank() != 1) {
    throw DimensionError("lstm: expected matrices for x, w_x, w_h and a vector bias");
  }
  const std::size_t n = in.rows();
  const std::size_t h = wh.cols();
  if (wx.rows() != 4 * h || wh.rows() != 4 * h || bias.size() != 4 * h || wx.cols() != in.cols()) {
    throw DimensionError("lstm: inconsistent weights x" + shape_str(in.shape()) + " w_x" + shape_str(wx.shape()) +
                         " w_h" + shape_str(wh.shape()) + " b" + shape_str(bias.shape()));
  }
  if (mask.size() != n) throw DimensionError("lstm: mask length differs from sequence length");

  const auto H = static_cast<Eigen::Index>(h);
  // Order in which positions are consumed; masked positions are skipped.
  std::vector<std::size_t> steps;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t t = reverse ? n - 1 - k : k;
    if (mask[t]) steps.push_back(t);
  }

  // Cached per-step activations: gates (after nonlinearity) [n × 4h], cell c and tanh(c) [n × h].
  auto gates = std::make_shared<RowMatrix>(RowMatrix::Zero(static_cast<Eigen::Index>(n), 4 * H));
  auto cells = std::make_shared<RowMatrix>(RowMatrix::Zero(static_cast<Eigen::Index>(n), H));
  auto tanh_cells = std::make_shared<RowMatrix>(RowMatrix::Zero(static_cast<Eigen::Index>(n), H));
  Tensor out({n, h});

  RowMatrix pre = in.mat() * wx.mat().transpose();
  pre.rowwise() += bias.vec().transpose();
  Eigen::VectorXd h_prev = Eigen::VectorXd::Zero(H);
  Eigen::VectorXd c_prev = Eigen::VectorXd::Zero(H);
  Eigen::VectorXd g(4 * H);
  for (std::size_t t : steps) {
    const auto row = static_cast<Eigen::Index>(t);
    g = pre.row(row).transpose();
    g.noalias() += wh.mat() * h_prev;
    for (Eigen::Index j = 0; j < H; ++j) {
      g[j] = sigmoid(g[j]);
      g[H + j] = sigmoid(g[H + j]);
      g[2 * H + j] = std::tanh(g[2 * H + j]);
      g[3 * H + j] = sigmoid(g[3 * H + j]);
    }
    Eigen::VectorXd c = g.segment(H, H).cwiseProduct(c_prev) + g.segment(0, H).cwiseProduct(g.segment(2 * H, H));
    Eigen::VectorXd tc = c.array().tanh().matrix();
    Eigen::VectorXd hv = g.segment(3 * H, H).cwiseProduct(tc);
    gates->row(row) = g.transpose();
    cells->row(row) = c.transpose();
    tanh_cells->row(row) = tc.transpose();
    out.mat().row(row) = hv.transpose();
    h_prev = hv;
    c_prev = c;
  }

  return x.tape().record(
      std::move(out), {x, w.w_x, w.w_h, w.b},
      [x, w, steps = std::move(steps), gates, cells, tanh_cells, H, n](Tape& tape, const Tensor& gy, const Tensor& y) {
        const Tensor& wh_v = w.w_h.value();
        RowMatrix d_pre = RowMatrix::Zero(static_cast<Eigen::Index>(n), 4 * H);
        Eigen::VectorXd dh_next = Eigen::VectorXd::Zero(H);
        Eigen::VectorXd dc_next = Eigen::VectorXd::Zero(H);
        Tensor* g_wh = tape.grad_if(w.w_h);
        for (std::size_t k = steps.size(); k-- > 0;) {
          const auto row = static_cast<Eigen::Index>(steps[k]);
          const auto gate = gates->row(row);
          Eigen::VectorXd dh = gy.mat().row(row).transpose() + dh_next;
          const auto tc = tanh_cells->row(row).transpose();
          Eigen::VectorXd c_prev = Eigen::VectorXd::Zero(H);
          Eigen::VectorXd h_prev = Eigen::VectorXd::Zero(H);
          if (k > 0) {
            const auto prev = static_cast<Eigen::Index>(steps[k - 1]);
            c_prev = cells->row(prev).transpose();
            h_prev = y.mat().row(prev).transpose();
          }
          Eigen::VectorXd dc = dc_next + dh.cwiseProduct(gate.segment(3 * H, H).transpose())
                                             .cwiseProduct((1.0 - tc.array().square()).matrix());
          auto dg = d_pre.row(row);
          for (Eigen::Index j = 0; j < H; ++j) {
            const double i_g = gate[j];
            const double f_g = gate[H + j];
            const double c_g = gate[2 * H + j];
            const double o_g = gate[3 * H + j];
            dg[j] = dc[j] * c_g * i_g * (1.0 - i_g);
            dg[H + j] = dc[j] * c_prev[j] * f_g * (1.0 - f_g);
            dg[2 * H + j] = dc[j] * i_g * (1.0 - c_g * c_g);
            dg[3 * H + j] = dh[j] * tc[j] * o_g * (1.0 - o_g);
          }
          if (g_wh) g_wh->mat().noalias() += dg.transpose() * h_prev.transpose();
          dh_next.noalias() = wh_v.mat().transpose() * dg.transpose();
          dc_next = dc.cwiseProduct(gate.segment(H, H).transpose());
        }
        if (Tensor* g_wx = tape.grad_if(w.w_x)) g_wx->mat().noalias() += d_pre.transpose() * x.value().mat();
        if (Tensor* g_b = tape.grad_if(w.b)) g_b->vec() += d_pre.colwise().sum().transpose();
        if (Tensor* g_x = tape.grad_if(x)) g_x->mat().noalias() += d_pre * w.w_x.value().mat();
      });
}

Var bilstm(Var x, const EncoderWeights& w, const Mask& mask) {
  return concat_cols(lstm(x, w.forward, mask, false), lstm(x, w.backward, mask, true));
}

}  // namespace mgan
