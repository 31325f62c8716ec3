#include "auctioncert/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace auctioncert::train {

using net::Activation;
using net::ConfigError;
using net::ForwardTrace;
using net::Gradients;
using net::IrMode;
using net::Outcome;

void TrainConfig::validate() const {
  if (batch_size < 1 || epochs < 0) throw ConfigError("batch_size/epochs must be positive");
  if (lr <= 0 || misreport_lr <= 0) throw ConfigError("learning rates must be positive");
  if (misreport_steps_train < 0 || misreport_steps_eval < 0)
    throw ConfigError("misreport step counts must be nonnegative");
  if (lambda_update_period < 1 || mu_update_period < 1)
    throw ConfigError("multiplier update periods must be >= 1");
  if (rho_rgt_init <= 0 || rho_irv <= 0) throw ConfigError("rho values must be positive");
}

Dataset generate_dataset(int n_agents, int n_items, int count, std::uint64_t seed) {
  Dataset data;
  data.seed = seed;
  data.profiles.reserve(count);
  Rng rng(seed);
  for (int p = 0; p < count; ++p) {
    MatrixXd profile(n_agents, n_items);
    for (int i = 0; i < n_agents; ++i)
      for (int j = 0; j < n_items; ++j) profile(i, j) = rng.uniform01();
    data.profiles.push_back(std::move(profile));
  }
  return data;
}

MisreportResult misreport_search(const AuctionNet& net, const MatrixXd& profile, int agent,
                                 int steps, double lr) {
  return misreport_search_from(net, profile, agent, profile.row(agent), steps, lr);
}

MisreportResult misreport_search_from(const AuctionNet& net, const MatrixXd& profile, int agent,
                                      const Eigen::RowVectorXd& init, int steps, double lr) {
  const int n = net.config.n_agents, k = net.config.n_items;
  if (agent < 0 || agent >= n) throw ConfigError("agent index out of range");
  if (init.size() != k) throw ConfigError("misreport row has wrong length");

  MatrixXd bids = profile;
  for (int j = 0; j < k; ++j) bids(agent, j) = std::clamp(init[j], 0.0, 1.0);
  MatrixXd d_alloc = MatrixXd::Zero(n, k);
  for (int j = 0; j < k; ++j) d_alloc(agent, j) = profile(agent, j);
  VectorXd d_payment = VectorXd::Zero(n);
  d_payment[agent] = -1.0;

  ForwardTrace trace;
  Outcome out = net::forward(net, bids, &trace);
  MisreportResult best;
  best.bid = bids.row(agent);
  best.utility = net::utility(out, profile, agent);

  for (int s = 0; s < steps; ++s) {
    Gradients g = net::backward(net, trace, d_alloc, d_payment);
    for (int j = 0; j < k; ++j)
      bids(agent, j) = std::clamp(bids(agent, j) + lr * g.bids(agent, j), 0.0, 1.0);
    out = net::forward(net, bids, &trace);
    double u = net::utility(out, profile, agent);
    if (u > best.utility) {
      best.utility = u;
      best.bid = bids.row(agent);
    }
  }
  return best;
}

double regret_hat(const AuctionNet& net, const MatrixXd& profile, int agent, int steps,
                  double lr) {
  Outcome truthful = net::forward(net, profile);
  double u_truth = net::utility(truthful, profile, agent);
  MisreportResult mis = misreport_search(net, profile, agent, steps, lr);
  return std::max(0.0, mis.utility - u_truth);
}

double irv(const AuctionNet& net, const MatrixXd& profile, int agent) {
  ForwardTrace trace;
  net::forward(net, profile, &trace);
  return std::max(0.0, trace.payment[agent] - trace.alloc_value[agent]);
}

MultiplierState MultiplierState::init(int n_agents, const TrainConfig& cfg) {
  MultiplierState s;
  s.lambda = VectorXd::Constant(n_agents, cfg.lambda_init);
  s.rho_rgt = cfg.rho_rgt_init;
  s.mu = VectorXd::Constant(n_agents, cfg.mu_init);
  s.rho_irv = cfg.rho_irv;
  return s;
}

double lagrangian_loss(const MatrixXd& payments, const MatrixXd& regrets, const MatrixXd& irvs,
                       const MultiplierState& m) {
  const int batch = static_cast<int>(payments.rows());
  double total = 0.0;
  for (int b = 0; b < batch; ++b) {
    double sum_rgt = regrets.row(b).sum();
    total += -payments.row(b).sum() + regrets.row(b).dot(m.lambda) +
             0.5 * m.rho_rgt * sum_rgt * sum_rgt + irvs.row(b).cwiseAbs2().dot(m.mu);
  }
  return total / batch;
}

void update_multipliers_regret(MultiplierState& state, const VectorXd& batch_mean_regret,
                               const TrainConfig& cfg) {
  state.lambda += state.rho_rgt * batch_mean_regret;
  state.rho_rgt += cfg.rho_rgt_inc;
}

void update_multipliers_irv(MultiplierState& state, const VectorXd& batch_mean_irv,
                            const TrainConfig& cfg) {
  state.mu += state.rho_irv * batch_mean_irv;
  state.rho_irv += cfg.rho_irv_inc;
}

namespace {

// Interval state carried through the trunk; mid/rad form keeps the affine
// step a pair of matvecs.
struct IbpTrace {
  std::vector<VectorXd> pre_lo, pre_hi;
  std::vector<VectorXd> mid, rad;  // post-activation, per layer; entry 0 is the input box
};

IbpTrace ibp_trunk(const AuctionNet& net, const VectorXd& in_lo, const VectorXd& in_hi) {
  if (in_lo.size() != net.config.input_dim() || in_hi.size() != net.config.input_dim())
    throw ConfigError("input box does not match network input dimension");
  IbpTrace t;
  t.mid.push_back(0.5 * (in_lo + in_hi));
  t.rad.push_back(0.5 * (in_hi - in_lo));
  for (const auto& layer : net.trunk) {
    VectorXd c = layer.weights * t.mid.back() + layer.biases;
    VectorXd r = layer.weights.cwiseAbs() * t.rad.back();
    VectorXd lo = c - r, hi = c + r;
    t.pre_lo.push_back(lo);
    t.pre_hi.push_back(hi);
    if (layer.activation == Activation::ReLU) {
      lo = lo.cwiseMax(0.0);
      hi = hi.cwiseMax(0.0);
    }
    t.mid.push_back(0.5 * (lo + hi));
    t.rad.push_back(0.5 * (hi - lo));
  }
  return t;
}

}  // namespace

NeuronBounds ibp_bounds(const AuctionNet& net, const VectorXd& in_lo, const VectorXd& in_hi) {
  IbpTrace t = ibp_trunk(net, in_lo, in_hi);
  NeuronBounds b;
  b.input_lo = in_lo;
  b.input_hi = in_hi;
  b.trunk_lo = t.pre_lo;
  b.trunk_hi = t.pre_hi;
  b.trunk_tight.resize(net.trunk.size());
  for (size_t i = 0; i < net.trunk.size(); ++i)
    b.trunk_tight[i].assign(net.trunk[i].out_dim(), 0);

  const VectorXd& mid = t.mid.back();
  const VectorXd& rad = t.rad.back();
  VectorXd c = net.alloc_head.weights * mid + net.alloc_head.biases;
  VectorXd r = net.alloc_head.weights.cwiseAbs() * rad;
  b.alloc_lo = c - r;
  b.alloc_hi = c + r;
  c = net.pay_head.weights * mid + net.pay_head.biases;
  r = net.pay_head.weights.cwiseAbs() * rad;
  b.pay_lo = c - r;
  b.pay_hi = c + r;
  return b;
}

double stability_penalty(const NeuronBounds& bounds) {
  double total = 0.0;
  for (size_t t = 0; t < bounds.trunk_lo.size(); ++t)
    for (int i = 0; i < bounds.trunk_lo[t].size(); ++i)
      total += -std::tanh(1.0 + bounds.trunk_lo[t][i] * bounds.trunk_hi[t][i]);
  return total;
}

VectorXd stability_penalty_grad(const AuctionNet& net, const VectorXd& in_lo,
                                const VectorXd& in_hi) {
  IbpTrace t = ibp_trunk(net, in_lo, in_hi);
  net::ParamLayout layout = net::param_layout(net);
  VectorXd grad = VectorXd::Zero(layout.total);

  const int depth = static_cast<int>(net.trunk.size());
  // Adjoints of the penalty w.r.t. each layer's pre-activation bounds.
  std::vector<VectorXd> d_lo(depth), d_hi(depth);
  for (int l = 0; l < depth; ++l) {
    const VectorXd& lo = t.pre_lo[l];
    const VectorXd& hi = t.pre_hi[l];
    d_lo[l] = VectorXd::Zero(lo.size());
    d_hi[l] = VectorXd::Zero(lo.size());
    if (net.trunk[l].activation != Activation::ReLU) continue;
    for (int i = 0; i < lo.size(); ++i) {
      double th = std::tanh(1.0 + lo[i] * hi[i]);
      double sech2 = 1.0 - th * th;
      d_lo[l][i] = -sech2 * hi[i];
      d_hi[l][i] = -sech2 * lo[i];
    }
  }

  for (int l = depth - 1; l >= 0; --l) {
    const auto& layer = net.trunk[l];
    const auto& slice = layout.layers[l];
    VectorXd dc = d_lo[l] + d_hi[l];
    VectorXd dr = d_hi[l] - d_lo[l];
    const VectorXd& mid_prev = t.mid[l];
    const VectorXd& rad_prev = t.rad[l];
    for (int rr = 0; rr < slice.rows; ++rr) {
      for (int cc = 0; cc < slice.cols; ++cc) {
        double w = layer.weights(rr, cc);
        double sign = (w > 0) - (w < 0);
        grad[slice.w_offset + rr * slice.cols + cc] +=
            dc[rr] * mid_prev[cc] + dr[rr] * rad_prev[cc] * sign;
      }
      grad[slice.b_offset + rr] += dc[rr];
    }
    if (l == 0) break;
    VectorXd d_mid = layer.weights.transpose() * dc;
    VectorXd d_rad = layer.weights.cwiseAbs().transpose() * dr;
    VectorXd d_post_lo = 0.5 * d_mid - 0.5 * d_rad;
    VectorXd d_post_hi = 0.5 * d_mid + 0.5 * d_rad;
    if (net.trunk[l - 1].activation == Activation::ReLU) {
      for (int i = 0; i < d_post_lo.size(); ++i) {
        if (t.pre_lo[l - 1][i] > 0.0) d_lo[l - 1][i] += d_post_lo[i];
        if (t.pre_hi[l - 1][i] > 0.0) d_hi[l - 1][i] += d_post_hi[i];
      }
    } else {
      d_lo[l - 1] += d_post_lo;
      d_hi[l - 1] += d_post_hi;
    }
  }
  return grad;
}

double distill_loss(const AuctionNet& teacher, const AuctionNet& student,
                    const std::vector<MatrixXd>& profiles, double weight) {
  if (teacher.config.n_agents != student.config.n_agents ||
      teacher.config.n_items != student.config.n_items)
    throw ConfigError("teacher and student auction dimensions differ");
  const int n = student.config.n_agents, k = student.config.n_items;
  const double coords = static_cast<double>(n * k + n);
  double total = 0.0;
  for (const auto& profile : profiles) {
    Outcome s = net::forward(student, profile);
    Outcome t = net::forward(teacher, profile);
    double sq = (s.allocation - t.allocation).squaredNorm() + (s.payment - t.payment).squaredNorm();
    total += weight * sq / coords;
  }
  return profiles.empty() ? 0.0 : total / profiles.size();
}

AuctionNet clip_payments(const AuctionNet& net) {
  if (net.config.ir_mode != IrMode::PenaltyFree)
    throw ConfigError("clip_payments applies to PenaltyFree networks only");
  AuctionNet clipped = net;
  clipped.payments_clipped = true;
  return clipped;
}

namespace {

struct ItemResult {
  VectorXd grad;
  double revenue = 0.0;
  double loss = 0.0;
  VectorXd regret;
  VectorXd irv;
};

}  // namespace

TrainResult train(const AuctionConfig& config, const TrainConfig& tc, const Dataset& data,
                  const TrainOptions& opts) {
  config.validate();
  tc.validate();
  if (data.size() == 0) throw ConfigError("empty dataset");
  if (opts.teacher) {
    if (config.ir_mode != IrMode::PenaltyFree)
      throw ConfigError("distillation trains a PenaltyFree student");
    opts.teacher->validate();
  }

  AuctionNet net = net::make_auction_net(config, tc.seed);
  const net::ParamLayout layout = net::param_layout(net);
  const int n = config.n_agents, k = config.n_items;
  const double coords = static_cast<double>(n * k + n);

  VectorXd params = net::pack_params(net);
  VectorXd adam_m = VectorXd::Zero(layout.total);
  VectorXd adam_v = VectorXd::Zero(layout.total);
  const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  long adam_t = 0;

  MultiplierState mult = MultiplierState::init(n, tc);
  const bool penalty_free = config.ir_mode == IrMode::PenaltyFree;

  VectorXd box_lo = VectorXd::Zero(config.input_dim());
  VectorXd box_hi = VectorXd::Ones(config.input_dim());

  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<ItemResult> items(tc.batch_size);
  TrainResult result;
  long batch_counter = 0;

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    Rng shuffle_rng(Rng::derive(tc.seed, 0xE90C0000ULL + epoch));
    for (int i = data.size() - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.below(i + 1)]);

    double ep_revenue = 0.0, ep_loss = 0.0, ep_rgt = 0.0, ep_irv = 0.0, ep_max_rgt = 0.0;
    long ep_points = 0;
    int ep_batches = 0;

    for (int start = 0; start < data.size(); start += tc.batch_size) {
      const int bsize = std::min(tc.batch_size, data.size() - start);
      const VectorXd lambda = mult.lambda;
      const double rho = mult.rho_rgt;
      const VectorXd mu = mult.mu;

      for_each_index(
          bsize,
          [&](std::int64_t bi) {
            const MatrixXd& profile = data.profiles[order[start + bi]];
            ItemResult& item = items[bi];
            item.grad = VectorXd::Zero(layout.total);
            item.regret = VectorXd::Zero(n);
            item.irv = VectorXd::Zero(n);

            std::vector<MisreportResult> mis(n);
            for (int a = 0; a < n; ++a)
              mis[a] = misreport_search(net, profile, a, tc.misreport_steps_train,
                                        tc.misreport_lr);

            ForwardTrace trace;
            Outcome truthful = net::forward(net, profile, &trace);
            for (int a = 0; a < n; ++a) {
              item.regret[a] = std::max(0.0, mis[a].utility - truthful.utility[a]);
              if (penalty_free)
                item.irv[a] = std::max(0.0, trace.payment[a] - trace.alloc_value[a]);
            }
            item.revenue = truthful.payment.sum();
            double sum_rgt = item.regret.sum();

            MatrixXd d_alloc = MatrixXd::Zero(n, k);
            VectorXd d_pay = VectorXd::Constant(n, -1.0);
            VectorXd coeff(n);
            for (int a = 0; a < n; ++a) {
              coeff[a] = item.regret[a] > 0.0 ? lambda[a] + rho * sum_rgt : 0.0;
              d_pay[a] += coeff[a];
              for (int j = 0; j < k; ++j) d_alloc(a, j) -= coeff[a] * profile(a, j);
              if (penalty_free && item.irv[a] > 0.0) {
                d_pay[a] += 2.0 * mu[a] * item.irv[a];
                for (int j = 0; j < k; ++j)
                  d_alloc(a, j) -= 2.0 * mu[a] * item.irv[a] * profile(a, j);
              }
            }

            double loss = -item.revenue + item.regret.dot(lambda) + 0.5 * rho * sum_rgt * sum_rgt +
                          item.irv.cwiseAbs2().dot(mu);

            if (opts.teacher) {
              Outcome t_out = net::forward(*opts.teacher, profile);
              MatrixXd alloc_diff = truthful.allocation - t_out.allocation;
              VectorXd pay_diff = truthful.payment - t_out.payment;
              loss += tc.distill_weight *
                      (alloc_diff.squaredNorm() + pay_diff.squaredNorm()) / coords;
              double scale = 2.0 * tc.distill_weight / coords;
              d_alloc += scale * alloc_diff;
              d_pay += scale * pay_diff;
            }
            item.loss = loss;

            Gradients g = net::backward(net, trace, d_alloc, d_pay);
            item.grad = g.params;

            for (int a = 0; a < n; ++a) {
              if (coeff[a] == 0.0) continue;
              MatrixXd bids = profile;
              bids.row(a) = mis[a].bid;
              ForwardTrace mis_trace;
              net::forward(net, bids, &mis_trace);
              MatrixXd d_alloc_mis = MatrixXd::Zero(n, k);
              VectorXd d_pay_mis = VectorXd::Zero(n);
              for (int j = 0; j < k; ++j) d_alloc_mis(a, j) = coeff[a] * profile(a, j);
              d_pay_mis[a] = -coeff[a];
              Gradients gm = net::backward(net, mis_trace, d_alloc_mis, d_pay_mis);
              item.grad += gm.params;
            }
          },
          opts.policy);

      // Index-ordered reduction keeps training bit-identical across thread
      // counts.
      VectorXd grad = VectorXd::Zero(layout.total);
      double batch_loss = 0.0, batch_revenue = 0.0;
      VectorXd batch_rgt = VectorXd::Zero(n), batch_irv = VectorXd::Zero(n);
      for (int bi = 0; bi < bsize; ++bi) {
        grad += items[bi].grad;
        batch_loss += items[bi].loss;
        batch_revenue += items[bi].revenue;
        batch_rgt += items[bi].regret;
        batch_irv += items[bi].irv;
        ep_max_rgt = std::max(ep_max_rgt, items[bi].regret.maxCoeff());
      }
      grad /= bsize;
      batch_loss /= bsize;
      batch_rgt /= bsize;
      batch_irv /= bsize;

      if (tc.stability_weight > 0.0) {
        net::NeuronBounds bounds = ibp_bounds(net, box_lo, box_hi);
        batch_loss += tc.stability_weight * stability_penalty(bounds);
        grad += tc.stability_weight * stability_penalty_grad(net, box_lo, box_hi);
      }

      if (!std::isfinite(batch_loss))
        throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                 std::to_string(epoch) + ", batch " +
                                 std::to_string(batch_counter) + " (loss=" +
                                 std::to_string(batch_loss) + ")");

      ++adam_t;
      for (int p = 0; p < layout.total; ++p) {
        adam_m[p] = beta1 * adam_m[p] + (1 - beta1) * grad[p];
        adam_v[p] = beta2 * adam_v[p] + (1 - beta2) * grad[p] * grad[p];
        double mhat = adam_m[p] / (1 - std::pow(beta1, adam_t));
        double vhat = adam_v[p] / (1 - std::pow(beta2, adam_t));
        params[p] -= tc.lr * mhat / (std::sqrt(vhat) + adam_eps);
      }
      net::unpack_params(net, params);

      ++batch_counter;
      if (batch_counter % tc.lambda_update_period == 0)
        update_multipliers_regret(mult, batch_rgt, tc);
      if (penalty_free && batch_counter % tc.mu_update_period == 0)
        update_multipliers_irv(mult, batch_irv, tc);

      ep_revenue += batch_revenue;
      ep_loss += batch_loss;
      ep_rgt += batch_rgt.sum() * bsize / n;
      ep_irv += batch_irv.sum() * bsize / n;
      ep_points += bsize;
      ++ep_batches;
    }

    EpochLog log;
    log.epoch = epoch;
    log.revenue = ep_revenue / ep_points;
    log.mean_regret = ep_rgt / ep_points;
    log.max_regret = ep_max_rgt;
    log.mean_irv = ep_irv / ep_points;
    log.loss = ep_loss / ep_batches;
    log.lambda_bar = mult.lambda.mean();
    log.rho_rgt = mult.rho_rgt;
    result.log.push_back(log);
    if (opts.on_epoch) opts.on_epoch(log);
  }

  result.net = std::move(net);
  result.multipliers = mult;
  return result;
}

std::vector<EvalRow> evaluate(const AuctionNet& net, const Dataset& data, int steps, double lr,
                              const ExecPolicy& policy) {
  const int n = net.config.n_agents;
  std::vector<EvalRow> rows(data.size());
  for_each_index(
      data.size(),
      [&](std::int64_t p) {
        const MatrixXd& profile = data.profiles[p];
        EvalRow& row = rows[p];
        row.point = static_cast<int>(p);
        row.regret = VectorXd::Zero(n);
        row.irv = VectorXd::Zero(n);
        net::ForwardTrace trace;
        Outcome out = net::forward(net, profile, &trace);
        row.revenue = out.payment.sum();
        for (int a = 0; a < n; ++a) {
          MisreportResult mis = misreport_search(net, profile, a, steps, lr);
          row.regret[a] = std::max(0.0, mis.utility - out.utility[a]);
          row.irv[a] = std::max(0.0, trace.payment[a] - trace.alloc_value[a]);
        }
      },
      policy);
  return rows;
}

}  // namespace auctioncert::train
