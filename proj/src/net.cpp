#include "auctioncert/net.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace auctioncert::net {

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Identity: return "identity";
    case Activation::Sparsemax: return "sparsemax";
    case Activation::HardSigmoid: return "hard_sigmoid";
    case Activation::Softmax: return "softmax";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "?";
}

Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::ReLU;
  if (name == "identity") return Activation::Identity;
  if (name == "sparsemax") return Activation::Sparsemax;
  if (name == "hard_sigmoid") return Activation::HardSigmoid;
  if (name == "softmax") return Activation::Softmax;
  if (name == "sigmoid") return Activation::Sigmoid;
  throw ConfigError("unknown activation tag: " + name);
}

void AuctionConfig::validate() const {
  if (n_agents < 1) throw ConfigError("n_agents must be >= 1");
  if (n_items < 1) throw ConfigError("n_items must be >= 1");
  if (trunk_widths.empty()) throw ConfigError("trunk_widths must be nonempty");
  for (int w : trunk_widths)
    if (w < 1) throw ConfigError("trunk widths must be positive");
  if (smooth_heads && ir_mode != IrMode::Fractional)
    throw ConfigError("smooth heads (teacher) require Fractional mode");
}

void AuctionNet::validate() const {
  config.validate();
  if (payments_clipped && config.ir_mode != IrMode::PenaltyFree)
    throw ConfigError("payment clipping only applies to PenaltyFree networks");
  int in = config.input_dim();
  if (static_cast<int>(trunk.size()) != static_cast<int>(config.trunk_widths.size()))
    throw ConfigError("trunk layer count does not match config");
  for (size_t t = 0; t < trunk.size(); ++t) {
    if (trunk[t].in_dim() != in || trunk[t].out_dim() != config.trunk_widths[t])
      throw ConfigError("trunk layer " + std::to_string(t) + " has wrong shape");
    if (trunk[t].biases.size() != trunk[t].out_dim())
      throw ConfigError("bias length mismatch in trunk layer " + std::to_string(t));
    in = trunk[t].out_dim();
  }
  if (alloc_head.in_dim() != in || alloc_head.out_dim() != config.alloc_dim())
    throw ConfigError("allocation head has wrong shape");
  if (pay_head.in_dim() != in || pay_head.out_dim() != config.n_agents)
    throw ConfigError("payment head has wrong shape");
}

int NeuronBounds::unstable_relu_count() const {
  int count = 0;
  for (size_t t = 0; t < trunk_lo.size(); ++t)
    for (int i = 0; i < trunk_lo[t].size(); ++i)
      if (!(trunk_lo[t][i] >= 1e-9 || trunk_hi[t][i] <= -1e-9)) ++count;
  return count;
}

double sparsemax_tau(const VectorXd& x) {
  const int d = static_cast<int>(x.size());
  std::vector<double> sorted(x.data(), x.data() + d);
  std::sort(sorted.begin(), sorted.end(), std::greater<double>());
  double cumsum = 0.0, cumsum_k = 0.0;
  int k = 0;
  for (int i = 0; i < d; ++i) {
    cumsum += sorted[i];
    if (1.0 + (i + 1) * sorted[i] > cumsum) {
      k = i + 1;
      cumsum_k = cumsum;
    }
  }
  return (cumsum_k - 1.0) / k;
}

VectorXd sparsemax(const VectorXd& x) {
  double tau = sparsemax_tau(x);
  return (x.array() - tau).max(0.0);
}

MatrixXd sparsemax_jacobian(const VectorXd& x) {
  const int d = static_cast<int>(x.size());
  double tau = sparsemax_tau(x);
  std::vector<int> support;
  for (int i = 0; i < d; ++i)
    if (x[i] >= tau) support.push_back(i);  // >= keeps boundary ties in the support
  MatrixXd jac = MatrixXd::Zero(d, d);
  const double inv = 1.0 / static_cast<double>(support.size());
  for (int a : support)
    for (int b : support) jac(a, b) = (a == b ? 1.0 : 0.0) - inv;
  return jac;
}

double hard_sigmoid(double x) { return std::clamp(0.25 * x + 0.5, 0.0, 1.0); }

double hard_sigmoid_grad(double x) { return (x >= -2.0 && x <= 2.0) ? 0.25 : 0.0; }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

VectorXd softmax(const VectorXd& x) {
  VectorXd e = (x.array() - x.maxCoeff()).exp();
  return e / e.sum();
}

AuctionNet make_auction_net(const AuctionConfig& config, std::uint64_t seed) {
  config.validate();
  AuctionNet net;
  net.config = config;
  net.seed = seed;
  Rng rng(seed);
  auto init_layer = [&](int out, int in, Activation act) {
    DenseLayer layer;
    layer.weights.resize(out, in);
    double bound = std::sqrt(6.0 / (in + out));
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) layer.weights(r, c) = rng.uniform(-bound, bound);
    layer.biases = VectorXd::Zero(out);
    layer.activation = act;
    return layer;
  };
  int in = config.input_dim();
  for (int w : config.trunk_widths) {
    net.trunk.push_back(init_layer(w, in, Activation::ReLU));
    in = w;
  }
  net.alloc_head = init_layer(config.alloc_dim(), in,
                              config.smooth_heads ? Activation::Softmax : Activation::Sparsemax);
  Activation pay_act = config.ir_mode == IrMode::Fractional
                           ? (config.smooth_heads ? Activation::Sigmoid : Activation::HardSigmoid)
                           : Activation::Identity;
  net.pay_head = init_layer(config.n_agents, in, pay_act);
  return net;
}

Outcome forward(const AuctionNet& net, const MatrixXd& bids, ForwardTrace* trace) {
  const auto& cfg = net.config;
  if (bids.rows() != cfg.n_agents || bids.cols() != cfg.n_items)
    throw ConfigError("bid profile shape does not match network config");

  thread_local ForwardTrace scratch;
  ForwardTrace& tr = trace ? *trace : scratch;

  const int n = cfg.n_agents, k = cfg.n_items;
  tr.input.resize(cfg.input_dim());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) tr.input[i * k + j] = bids(i, j);

  const size_t depth = net.trunk.size();
  tr.trunk_pre.resize(depth);
  tr.trunk_post.resize(depth);
  const VectorXd* h = &tr.input;
  for (size_t t = 0; t < depth; ++t) {
    tr.trunk_pre[t] = net.trunk[t].weights * (*h) + net.trunk[t].biases;
    tr.trunk_post[t] = net.trunk[t].activation == Activation::ReLU
                           ? tr.trunk_pre[t].cwiseMax(0.0)
                           : tr.trunk_pre[t];
    h = &tr.trunk_post[t];
  }

  tr.alloc_scores = net.alloc_head.weights * (*h) + net.alloc_head.biases;
  const int rows = cfg.alloc_rows();
  tr.alloc_full.resize(rows, k);
  VectorXd col(rows);
  for (int j = 0; j < k; ++j) {
    for (int r = 0; r < rows; ++r) col[r] = tr.alloc_scores[r * k + j];
    VectorXd z = net.alloc_head.activation == Activation::Softmax ? softmax(col) : sparsemax(col);
    for (int r = 0; r < rows; ++r) tr.alloc_full(r, j) = z[r];
  }

  tr.pay_pre = net.pay_head.weights * (*h) + net.pay_head.biases;

  tr.alloc_value.resize(n);
  for (int i = 0; i < n; ++i) {
    double y = 0.0;
    for (int j = 0; j < k; ++j) y += bids(i, j) * tr.alloc_full(i, j);
    tr.alloc_value[i] = y;
  }

  tr.payment.resize(n);
  if (cfg.ir_mode == IrMode::Fractional) {
    tr.frac_payment.resize(n);
    for (int i = 0; i < n; ++i) {
      double frac = net.pay_head.activation == Activation::Sigmoid ? sigmoid(tr.pay_pre[i])
                                                                   : hard_sigmoid(tr.pay_pre[i]);
      tr.frac_payment[i] = frac;
      tr.payment[i] = frac * tr.alloc_value[i];
    }
  } else {
    tr.frac_payment.resize(0);
    for (int i = 0; i < n; ++i) {
      double p = tr.pay_pre[i];
      if (net.payments_clipped) p = std::clamp(p, 0.0, tr.alloc_value[i]);
      tr.payment[i] = p;
    }
  }

  Outcome out;
  out.allocation = tr.alloc_full.topRows(n);
  if (cfg.ir_mode == IrMode::Fractional) out.frac_payment = tr.frac_payment;
  out.payment = tr.payment;
  out.utility = tr.alloc_value - tr.payment;
  return out;
}

double utility(const Outcome& outcome, const MatrixXd& valuation, int agent) {
  double value = 0.0;
  for (int j = 0; j < outcome.allocation.cols(); ++j)
    value += outcome.allocation(agent, j) * valuation(agent, j);
  return value - outcome.payment[agent];
}

ParamLayout param_layout(const AuctionNet& net) {
  ParamLayout layout;
  int offset = 0;
  auto add = [&](const DenseLayer& l) {
    ParamLayout::Slice s;
    s.w_offset = offset;
    s.rows = l.out_dim();
    s.cols = l.in_dim();
    offset += s.rows * s.cols;
    s.b_offset = offset;
    offset += s.rows;
    layout.layers.push_back(s);
  };
  for (const auto& l : net.trunk) add(l);
  add(net.alloc_head);
  add(net.pay_head);
  layout.total = offset;
  return layout;
}

namespace {

void pack_layer(const DenseLayer& l, const ParamLayout::Slice& s, VectorXd& flat) {
  for (int r = 0; r < s.rows; ++r)
    for (int c = 0; c < s.cols; ++c) flat[s.w_offset + r * s.cols + c] = l.weights(r, c);
  for (int r = 0; r < s.rows; ++r) flat[s.b_offset + r] = l.biases[r];
}

void unpack_layer(DenseLayer& l, const ParamLayout::Slice& s, const VectorXd& flat) {
  for (int r = 0; r < s.rows; ++r)
    for (int c = 0; c < s.cols; ++c) l.weights(r, c) = flat[s.w_offset + r * s.cols + c];
  for (int r = 0; r < s.rows; ++r) l.biases[r] = flat[s.b_offset + r];
}

}  // namespace

VectorXd pack_params(const AuctionNet& net) {
  ParamLayout layout = param_layout(net);
  VectorXd flat(layout.total);
  size_t idx = 0;
  for (const auto& l : net.trunk) pack_layer(l, layout.layers[idx++], flat);
  pack_layer(net.alloc_head, layout.layers[idx++], flat);
  pack_layer(net.pay_head, layout.layers[idx++], flat);
  return flat;
}

void unpack_params(AuctionNet& net, const VectorXd& flat) {
  ParamLayout layout = param_layout(net);
  if (flat.size() != layout.total) throw ConfigError("parameter vector size mismatch");
  size_t idx = 0;
  for (auto& l : net.trunk) unpack_layer(l, layout.layers[idx++], flat);
  unpack_layer(net.alloc_head, layout.layers[idx++], flat);
  unpack_layer(net.pay_head, layout.layers[idx++], flat);
}

Gradients backward(const AuctionNet& net, const ForwardTrace& trace, const MatrixXd& d_alloc,
                   const VectorXd& d_payment) {
  const auto& cfg = net.config;
  const int n = cfg.n_agents, k = cfg.n_items, rows = cfg.alloc_rows();
  if (d_alloc.rows() != n || d_alloc.cols() != k || d_payment.size() != n)
    throw ConfigError("adjoint shapes do not match network config");

  ParamLayout layout = param_layout(net);
  Gradients g;
  g.params = VectorXd::Zero(layout.total);
  g.bids = MatrixXd::Zero(n, k);

  // dL/d alloc_full including dummy row (zero adjoint there), plus the
  // payment-chain contributions that route through the allocation.
  MatrixXd dA = MatrixXd::Zero(rows, k);
  dA.topRows(n) = d_alloc;
  VectorXd d_pay_pre = VectorXd::Zero(n);

  if (cfg.ir_mode == IrMode::Fractional) {
    for (int i = 0; i < n; ++i) {
      double dp = d_payment[i];
      double d_frac = dp * trace.alloc_value[i];
      double dy = dp * trace.frac_payment[i];
      double act_grad = net.pay_head.activation == Activation::Sigmoid
                            ? trace.frac_payment[i] * (1.0 - trace.frac_payment[i])
                            : hard_sigmoid_grad(trace.pay_pre[i]);
      d_pay_pre[i] = d_frac * act_grad;
      for (int j = 0; j < k; ++j) {
        double b = trace.input[i * k + j];
        dA(i, j) += dy * b;
        g.bids(i, j) += dy * trace.alloc_full(i, j);
      }
    }
  } else {
    for (int i = 0; i < n; ++i) {
      double dp = d_payment[i];
      if (net.payments_clipped) {
        double q = trace.pay_pre[i], y = trace.alloc_value[i];
        if (q < 0.0) {
          // clipped at 0: no gradient
        } else if (q > y) {
          // clipped at the allocation value: gradient flows into y
          for (int j = 0; j < k; ++j) {
            double b = trace.input[i * k + j];
            dA(i, j) += dp * b;
            g.bids(i, j) += dp * trace.alloc_full(i, j);
          }
        } else {
          d_pay_pre[i] = dp;
        }
      } else {
        d_pay_pre[i] = dp;
      }
    }
  }

  // Allocation squash, column by column.
  VectorXd d_scores(rows * k);
  VectorXd zcol(rows), dz(rows);
  for (int j = 0; j < k; ++j) {
    for (int r = 0; r < rows; ++r) {
      zcol[r] = trace.alloc_full(r, j);
      dz[r] = dA(r, j);
    }
    if (net.alloc_head.activation == Activation::Softmax) {
      double dot = zcol.dot(dz);
      for (int r = 0; r < rows; ++r) d_scores[r * k + j] = zcol[r] * (dz[r] - dot);
    } else {
      VectorXd scores(rows);
      for (int r = 0; r < rows; ++r) scores[r] = trace.alloc_scores[r * k + j];
      double tau = sparsemax_tau(scores);
      double sum = 0.0;
      int count = 0;
      for (int r = 0; r < rows; ++r)
        if (scores[r] >= tau) {
          sum += dz[r];
          ++count;
        }
      double mean = sum / count;
      for (int r = 0; r < rows; ++r)
        d_scores[r * k + j] = (scores[r] >= tau) ? dz[r] - mean : 0.0;
    }
  }

  const VectorXd& h_last = net.trunk.empty() ? trace.input : trace.trunk_post.back();

  auto accumulate_head = [&](const DenseLayer& head, const ParamLayout::Slice& slice,
                             const VectorXd& d_out, VectorXd& d_h) {
    for (int r = 0; r < slice.rows; ++r) {
      double d = d_out[r];
      if (d == 0.0) continue;
      for (int c = 0; c < slice.cols; ++c)
        g.params[slice.w_offset + r * slice.cols + c] += d * h_last[c];
      g.params[slice.b_offset + r] += d;
    }
    d_h.noalias() += head.weights.transpose() * d_out;
  };

  VectorXd d_h = VectorXd::Zero(h_last.size());
  const size_t depth = net.trunk.size();
  accumulate_head(net.alloc_head, layout.layers[depth], d_scores, d_h);
  accumulate_head(net.pay_head, layout.layers[depth + 1], d_pay_pre, d_h);

  for (int t = static_cast<int>(depth) - 1; t >= 0; --t) {
    const DenseLayer& layer = net.trunk[t];
    const ParamLayout::Slice& slice = layout.layers[t];
    VectorXd d_pre = d_h;
    if (layer.activation == Activation::ReLU)
      for (int r = 0; r < d_pre.size(); ++r)
        if (trace.trunk_pre[t][r] <= 0.0) d_pre[r] = 0.0;
    const VectorXd& prev = (t == 0) ? trace.input : trace.trunk_post[t - 1];
    for (int r = 0; r < slice.rows; ++r) {
      double d = d_pre[r];
      if (d == 0.0) continue;
      for (int c = 0; c < slice.cols; ++c)
        g.params[slice.w_offset + r * slice.cols + c] += d * prev[c];
      g.params[slice.b_offset + r] += d;
    }
    d_h.resize(prev.size());
    d_h.noalias() = layer.weights.transpose() * d_pre;
  }

  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) g.bids(i, j) += d_h[i * k + j];
  return g;
}

}  // namespace auctioncert::net
