#include <algorithm>
#include <chrono>
#include <cmath>
#include <queue>
#include <stdexcept>

#include "auctioncert/certify.hpp"
#include "auctioncert/train.hpp"

namespace auctioncert::certify {

using net::Activation;
using net::IrMode;

namespace {

bool finite_range(double lo, double hi) { return std::isfinite(lo) && std::isfinite(hi); }

// ReLU of an affine expression. Stable pieces fold away; unstable ones get an
// Eq-4 block (output var, binary, big-M rows) plus the triangle facet.
struct ReluBlock {
  Expr post;
  double lo, hi;
};

ReluBlock relu_block(MipModel& m, const Expr& pre, double lo, double hi) {
  if (!finite_range(lo, hi))
    throw std::runtime_error("encode: refusing to encode neuron with unbounded pre-activation");
  if (lo >= kStableTol) return {pre, lo, hi};
  if (hi <= -kStableTol) return {Expr::value(0.0), 0.0, 0.0};
  int id = static_cast<int>(m.gadget_pre.size());
  m.gadget_pre.push_back(pre);
  double post_hi = std::max(hi, 0.0);
  int x = m.add_var(VarKind::GadgetPost, id, 0, 0.0, post_hi);
  int d = m.add_var(VarKind::GadgetBinary, id, 0, 0.0, 1.0);
  m.binaries.push_back(d);
  // x >= pre
  m.add_expr_row(Expr::var(x).plus(pre.scaled(-1.0)), lp::Relation::GreaterEqual, 0.0);
  // x <= hi * delta
  m.add_expr_row(Expr::var(x).plus(Expr{{{d, -hi}}, 0.0}), lp::Relation::LessEqual, 0.0);
  // x <= pre - lo (1 - delta)
  m.add_expr_row(Expr::var(x).plus(pre.scaled(-1.0)).plus(Expr{{{d, -lo}}, 0.0}),
                 lp::Relation::LessEqual, -lo);
  // triangle facet: (hi - lo) x <= hi (pre - lo)
  m.add_expr_row(Expr{{{x, hi - lo}}, 0.0}.plus(pre.scaled(-hi)), lp::Relation::LessEqual,
                 -hi * lo);
  return {Expr::var(x), 0.0, post_hi};
}

void add_mccormick(std::vector<std::vector<std::pair<int, double>>>& rows,
                   std::vector<lp::Relation>& rels, std::vector<double>& rhs, int w, int x, int y,
                   double xl, double xu, double yl, double yu) {
  // w >= xl y + yl x - xl yl ; w >= xu y + yu x - xu yu
  rows.push_back({{w, 1.0}, {y, -xl}, {x, -yl}});
  rels.push_back(lp::Relation::GreaterEqual);
  rhs.push_back(-xl * yl);
  rows.push_back({{w, 1.0}, {y, -xu}, {x, -yu}});
  rels.push_back(lp::Relation::GreaterEqual);
  rhs.push_back(-xu * yu);
  // w <= xu y + yl x - xu yl ; w <= xl y + yu x - xl yu
  rows.push_back({{w, 1.0}, {y, -xu}, {x, -yl}});
  rels.push_back(lp::Relation::LessEqual);
  rhs.push_back(-xu * yl);
  rows.push_back({{w, 1.0}, {y, -xl}, {x, -yu}});
  rels.push_back(lp::Relation::LessEqual);
  rhs.push_back(-xl * yu);
}

void add_mccormick_model(MipModel& m, int w, int x, int y) {
  add_mccormick(m.rows, m.relations, m.rhs, w, x, y, m.vars[x].lo, m.vars[x].hi, m.vars[y].lo,
                m.vars[y].hi);
  for (size_t i = m.relations.size() - 4; i < m.relations.size(); ++i) (void)i;
}

}  // namespace

MipModel encode(const AuctionNet& net, const MatrixXd& profile, int agent,
                const NeuronBounds& bounds, bool elide_stable) {
  net.validate();
  const auto& cfg = net.config;
  if (cfg.smooth_heads)
    throw net::ConfigError("smooth-head (teacher) networks cannot be encoded exactly");
  if (agent < 0 || agent >= cfg.n_agents) throw net::ConfigError("agent index out of range");
  if (profile.rows() != cfg.n_agents || profile.cols() != cfg.n_items)
    throw net::ConfigError("profile shape does not match network config");

  const int n = cfg.n_agents, k = cfg.n_items, arows = cfg.alloc_rows();
  MipModel m;
  m.agent = agent;

  for (int j = 0; j < k; ++j)
    m.bid_vars.push_back(m.add_var(VarKind::Bid, j, 0, 0.0, 1.0));

  std::vector<Expr> post(cfg.input_dim());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j)
      post[i * k + j] = (i == agent) ? Expr::var(m.bid_vars[j]) : Expr::value(profile(i, j));

  for (size_t l = 0; l < net.trunk.size(); ++l) {
    const auto& layer = net.trunk[l];
    std::vector<Expr> next(layer.out_dim());
    for (int i = 0; i < layer.out_dim(); ++i) {
      Expr pre_expr = Expr::value(layer.biases[i]);
      for (int c = 0; c < layer.in_dim(); ++c) {
        double w = layer.weights(i, c);
        if (w != 0.0) pre_expr = pre_expr.plus(post[c].scaled(w));
      }
      double lo = bounds.trunk_lo[l][i], hi = bounds.trunk_hi[l][i];
      if (!finite_range(lo, hi))
        throw std::runtime_error("encode: unbounded trunk neuron, Planet/IBP bounds required");
      int pre = m.add_var(VarKind::TrunkPre, static_cast<int>(l), i, lo, hi);
      m.add_expr_row(pre_expr.plus(Expr{{{pre, -1.0}}, 0.0}), lp::Relation::Equal, 0.0);
      if (layer.activation != Activation::ReLU) {
        next[i] = Expr::var(pre);
        continue;
      }
      if (elide_stable && lo >= kStableTol) {
        next[i] = Expr::var(pre);
      } else if (elide_stable && hi <= -kStableTol) {
        next[i] = Expr::value(0.0);
      } else {
        int id = static_cast<int>(m.gadget_pre.size());
        m.gadget_pre.push_back(Expr::var(pre));
        int x = m.add_var(VarKind::TrunkPost, static_cast<int>(l), i, 0.0, std::max(hi, 0.0));
        int d = m.add_var(VarKind::ReluBinary, static_cast<int>(l), i, 0.0, 1.0);
        (void)id;
        m.binaries.push_back(d);
        m.add_row({{x, 1.0}, {pre, -1.0}}, lp::Relation::GreaterEqual, 0.0);
        m.add_row({{x, 1.0}, {d, -hi}}, lp::Relation::LessEqual, 0.0);
        m.add_row({{x, 1.0}, {pre, -1.0}, {d, -lo}}, lp::Relation::LessEqual, -lo);
        if (lo < 0.0 && hi > 0.0)
          m.add_row({{x, hi - lo}, {pre, -hi}}, lp::Relation::LessEqual, -hi * lo);
        next[i] = Expr::var(x);
      }
    }
    post = std::move(next);
  }

  // Allocation head scores.
  std::vector<int> score_var(cfg.alloc_dim());
  for (int idx = 0; idx < cfg.alloc_dim(); ++idx) {
    Expr e = Expr::value(net.alloc_head.biases[idx]);
    for (int c = 0; c < net.alloc_head.in_dim(); ++c) {
      double w = net.alloc_head.weights(idx, c);
      if (w != 0.0) e = e.plus(post[c].scaled(w));
    }
    double lo = bounds.alloc_lo[idx], hi = bounds.alloc_hi[idx];
    if (!finite_range(lo, hi)) throw std::runtime_error("encode: unbounded allocation score");
    score_var[idx] = m.add_var(VarKind::AllocScore, idx, 0, lo, hi);
    m.add_expr_row(e.plus(Expr{{{score_var[idx], -1.0}}, 0.0}), lp::Relation::Equal, 0.0);
  }

  // Sparsemax KKT per item column: stationarity, simplex feasibility, and
  // complementary slackness as branchable pairs. Every KKT system here admits
  // a witness with mu1 = 0 and lambda equal to the projection threshold tau,
  // so z_r = max(s_r - lambda, 0) holds at that witness; the triangle cuts
  // below encode that ReLU shape and tighten the relaxation without cutting
  // off any reachable network output.
  std::vector<std::vector<int>> z_var(arows, std::vector<int>(k));
  for (int j = 0; j < k; ++j) {
    double score_lo_max = -lp::kInf, score_hi_max = -lp::kInf;
    for (int r = 0; r < arows; ++r) {
      score_lo_max = std::max(score_lo_max, bounds.alloc_lo[r * k + j]);
      score_hi_max = std::max(score_hi_max, bounds.alloc_hi[r * k + j]);
    }
    const double lam_lo = score_lo_max - 1.0, lam_hi = score_hi_max;
    int lam = m.add_var(VarKind::AllocLambda, j, 0, lam_lo, lam_hi);
    std::vector<std::pair<int, double>> simplex_row;
    for (int r = 0; r < arows; ++r) {
      int s = score_var[r * k + j];
      double s_lo = bounds.alloc_lo[r * k + j], s_hi = bounds.alloc_hi[r * k + j];
      // range of d_r = s_r - lambda
      double d_lo = s_lo - lam_hi, d_hi = s_hi - lam_lo;
      double z_lo = std::clamp(d_lo, 0.0, 1.0);
      double z_hi = std::clamp(d_hi, 0.0, 1.0);
      int z = m.add_var(VarKind::AllocZ, r, j, z_lo, z_hi);
      int s1 = m.add_var(VarKind::AllocSlack, r, j, 0.0, 1.0);
      double mu1_hi = std::max(0.0, s_hi - score_lo_max + 1.0);
      double mu2_hi = std::max(0.0, score_hi_max - s_lo + 1.0);
      int mu1 = m.add_var(VarKind::AllocMu1, r, j, 0.0, mu1_hi);
      int mu2 = m.add_var(VarKind::AllocMu2, r, j, 0.0, mu2_hi);
      z_var[r][j] = z;
      // (z - s) + mu1 - mu2 + lambda = 0
      m.add_row({{z, 1.0}, {s, -1.0}, {mu1, 1.0}, {mu2, -1.0}, {lam, 1.0}}, lp::Relation::Equal,
                0.0);
      // s1 = 1 - z
      m.add_row({{s1, 1.0}, {z, 1.0}}, lp::Relation::Equal, 1.0);
      m.compl_pairs.emplace_back(mu1, s1);
      m.compl_pairs.emplace_back(mu2, z);
      simplex_row.emplace_back(z, 1.0);
      // lambda >= s_r - 1 (tau never drops below the top score minus one)
      m.add_row({{lam, 1.0}, {s, -1.0}}, lp::Relation::GreaterEqual, -1.0);
      // z_r >= s_r - lambda
      m.add_row({{z, 1.0}, {s, -1.0}, {lam, 1.0}}, lp::Relation::GreaterEqual, 0.0);
      // triangle upper facet of z_r = max(d_r, 0) over [d_lo, d_hi]
      if (d_hi <= 0.0) {
        // z_r = 0 (already forced by its bounds)
      } else if (d_lo >= 0.0) {
        m.add_row({{z, 1.0}, {s, -1.0}, {lam, 1.0}}, lp::Relation::LessEqual, 0.0);
      } else {
        m.add_row({{z, d_hi - d_lo}, {s, -d_hi}, {lam, d_hi}}, lp::Relation::LessEqual,
                  -d_hi * d_lo);
      }
    }
    m.add_row(std::move(simplex_row), lp::Relation::Equal, 1.0);
  }

  // Payment head row for the certified agent only; other agents' payments
  // cannot influence this agent's utility.
  Expr q_expr = Expr::value(net.pay_head.biases[agent]);
  for (int c = 0; c < net.pay_head.in_dim(); ++c) {
    double w = net.pay_head.weights(agent, c);
    if (w != 0.0) q_expr = q_expr.plus(post[c].scaled(w));
  }
  double q_lo = bounds.pay_lo[agent], q_hi = bounds.pay_hi[agent];
  if (!finite_range(q_lo, q_hi)) throw std::runtime_error("encode: unbounded payment neuron");
  int q = m.add_var(VarKind::PayPre, agent, 0, q_lo, q_hi);
  m.add_expr_row(q_expr.plus(Expr{{{q, -1.0}}, 0.0}), lp::Relation::Equal, 0.0);

  auto add_alloc_value = [&]() {
    // w_j = z_{agent,j} * b_j and y = sum_j w_j
    std::vector<std::pair<int, double>> y_row;
    std::vector<int> wvars;
    for (int j = 0; j < k; ++j) {
      int w = m.add_var(VarKind::ProdW, j, 0, 0.0, 1.0);
      add_mccormick_model(m, w, z_var[agent][j], m.bid_vars[j]);
      m.bilinears.push_back({w, z_var[agent][j], m.bid_vars[j]});
      y_row.emplace_back(w, -1.0);
      wvars.push_back(w);
    }
    int y = m.add_var(VarKind::AllocValue, 0, 0, 0.0, static_cast<double>(k));
    y_row.emplace_back(y, 1.0);
    m.add_row(std::move(y_row), lp::Relation::Equal, 0.0);
    return y;
  };

  Expr p_expr;
  double p_lo = 0.0, p_hi = 0.0;
  if (cfg.ir_mode == IrMode::Fractional) {
    // hard_sigmoid(q) as two chained ReLU pieces: t = max(0.25 q + 0.5, 0),
    // frac = 1 - max(1 - t, 0).
    Expr g = Expr{{{q, 0.25}}, 0.5};
    double g_lo = 0.25 * q_lo + 0.5, g_hi = 0.25 * q_hi + 0.5;
    ReluBlock t = relu_block(m, g, g_lo, g_hi);
    ReluBlock r2 = relu_block(m, t.post.scaled(-1.0).plus_const(1.0), 1.0 - t.hi, 1.0 - t.lo);
    Expr frac_expr = r2.post.scaled(-1.0).plus_const(1.0);
    double frac_lo = std::clamp(1.0 - r2.hi, 0.0, 1.0);
    double frac_hi = std::clamp(1.0 - r2.lo, 0.0, 1.0);
    int frac = m.add_var(VarKind::FracPay, agent, 0, frac_lo, frac_hi);
    m.add_expr_row(frac_expr.plus(Expr{{{frac, -1.0}}, 0.0}), lp::Relation::Equal, 0.0);

    int y = add_alloc_value();
    p_lo = 0.0;
    p_hi = frac_hi * static_cast<double>(k);
    int p = m.add_var(VarKind::Payment, agent, 0, p_lo, p_hi);
    add_mccormick_model(m, p, frac, y);
    m.bilinears.push_back({p, frac, y});
    // p = frac * y with frac <= 1 implies p <= y
    m.add_row({{p, 1.0}, {y, -1.0}}, lp::Relation::LessEqual, 0.0);
    p_expr = Expr::var(p);
  } else if (net.payments_clipped) {
    // p = clamp(q, 0, y) = y - max(y - max(q, 0), 0)
    ReluBlock t = relu_block(m, Expr::var(q), q_lo, q_hi);
    int y = add_alloc_value();
    Expr d = Expr::var(y).plus(t.post.scaled(-1.0));
    ReluBlock r = relu_block(m, d, 0.0 - t.hi, static_cast<double>(k) - t.lo);
    p_expr = Expr::var(y).plus(r.post.scaled(-1.0));
    p_lo = 0.0;
    p_hi = static_cast<double>(k);
  } else {
    p_expr = Expr::var(q);
    p_lo = q_lo;
    p_hi = q_hi;
  }

  // Objective: u = sum_j v_{agent,j} z_{agent,j} - p, maximized over the bid box.
  double value_hi = 0.0;
  for (int j = 0; j < k; ++j) value_hi += std::max(0.0, profile(agent, j));
  int u = m.add_var(VarKind::Utility, agent, 0, -p_hi, value_hi - p_lo);
  Expr u_row = Expr{{{u, 1.0}}, 0.0}.plus(p_expr);
  for (int j = 0; j < k; ++j)
    u_row = u_row.plus(Expr{{{z_var[agent][j], -profile(agent, j)}}, 0.0});
  m.add_expr_row(u_row, lp::Relation::Equal, 0.0);
  m.objective_var = u;
  return m;
}

lp::LinearProgram root_relaxation(const MipModel& model) {
  lp::LinearProgram lp;
  lp.sense = lp::Sense::Maximize;
  for (const auto& v : model.vars) lp.add_variable(v.lo, v.hi);
  lp.set_objective(model.objective_var, 1.0);
  for (size_t i = 0; i < model.rows.size(); ++i)
    lp.add_constraint(model.rows[i], model.relations[i], model.rhs[i]);
  return lp;
}

double consistency_residual(const MipModel& model, const AuctionNet& net, const MatrixXd& profile,
                            int agent, const VectorXd& bid) {
  const auto& cfg = net.config;
  const int k = cfg.n_items;
  MatrixXd bids = profile;
  for (int j = 0; j < k; ++j) bids(agent, j) = std::clamp(bid[j], 0.0, 1.0);
  net::ForwardTrace trace;
  net::forward(net, bids, &trace);

  std::vector<double> tau(k);
  Eigen::VectorXd col(cfg.alloc_rows());
  for (int j = 0; j < k; ++j) {
    for (int r = 0; r < cfg.alloc_rows(); ++r) col[r] = trace.alloc_scores[r * k + j];
    tau[j] = net::sparsemax_tau(col);
  }

  VectorXd x(model.num_vars());
  auto eval_expr = [&](const Expr& e) {
    double v = e.constant;
    for (const auto& [idx, c] : e.terms) v += c * x[idx];
    return v;
  };
  for (int i = 0; i < model.num_vars(); ++i) {
    const VarInfo& v = model.vars[i];
    switch (v.kind) {
      case VarKind::Bid: x[i] = bids(agent, v.a); break;
      case VarKind::TrunkPre: x[i] = trace.trunk_pre[v.a][v.b]; break;
      case VarKind::TrunkPost: x[i] = trace.trunk_post[v.a][v.b]; break;
      case VarKind::ReluBinary: x[i] = trace.trunk_pre[v.a][v.b] > 0.0 ? 1.0 : 0.0; break;
      case VarKind::AllocScore: x[i] = trace.alloc_scores[v.a]; break;
      case VarKind::AllocZ: x[i] = trace.alloc_full(v.a, v.b); break;
      case VarKind::AllocSlack: x[i] = 1.0 - trace.alloc_full(v.a, v.b); break;
      case VarKind::AllocMu1: x[i] = 0.0; break;
      case VarKind::AllocMu2:
        x[i] = trace.alloc_full(v.a, v.b) - trace.alloc_scores[v.a * k + v.b] + tau[v.b];
        break;
      case VarKind::AllocLambda: x[i] = tau[v.a]; break;
      case VarKind::PayPre: x[i] = trace.pay_pre[v.a]; break;
      case VarKind::GadgetPost: x[i] = std::max(0.0, eval_expr(model.gadget_pre[v.a])); break;
      case VarKind::GadgetBinary: x[i] = eval_expr(model.gadget_pre[v.a]) > 0.0 ? 1.0 : 0.0; break;
      case VarKind::FracPay: x[i] = trace.frac_payment[v.a]; break;
      case VarKind::ProdW: x[i] = trace.alloc_full(agent, v.a) * bids(agent, v.a); break;
      case VarKind::AllocValue: x[i] = trace.alloc_value[agent]; break;
      case VarKind::Payment: x[i] = trace.payment[v.a]; break;
      case VarKind::Utility: x[i] = net::utility(net::forward(net, bids), profile, agent); break;
    }
  }

  double residual = 0.0;
  for (int i = 0; i < model.num_vars(); ++i) {
    residual = std::max(residual, model.vars[i].lo - x[i]);
    residual = std::max(residual, x[i] - model.vars[i].hi);
  }
  for (size_t r = 0; r < model.rows.size(); ++r) {
    double v = -model.rhs[r];
    for (const auto& [idx, c] : model.rows[r]) v += c * x[idx];
    switch (model.relations[r]) {
      case lp::Relation::Equal: residual = std::max(residual, std::abs(v)); break;
      case lp::Relation::LessEqual: residual = std::max(residual, v); break;
      case lp::Relation::GreaterEqual: residual = std::max(residual, -v); break;
    }
  }
  for (const auto& [a, b] : model.compl_pairs)
    residual = std::max(residual, std::abs(x[a] * x[b]));
  for (const auto& t : model.bilinears)
    residual = std::max(residual, std::abs(x[t.w] - x[t.x] * x[t.y]));
  return std::max(residual, 0.0);
}

namespace {

struct Range {
  double lo, hi;
};

struct ExtraRow {
  std::vector<std::pair<int, double>> coeffs;
  lp::Relation rel;
  double rhs;
};

struct Node {
  double estimate = lp::kInf;
  long id = 0;
  std::vector<std::pair<int, Range>> overrides;
  std::vector<ExtraRow> extra;
  std::vector<lp::VarStatus> hint;
};

Range effective_bounds(const MipModel& model, const Node& node, int var) {
  for (auto it = node.overrides.rbegin(); it != node.overrides.rend(); ++it)
    if (it->first == var) return it->second;
  return {model.vars[var].lo, model.vars[var].hi};
}

}  // namespace

BnbResult branch_and_bound(const MipModel& model, double tolerance, const IncumbentOracle& oracle,
                           long node_limit, const lp::SimplexSolver::Options& lp_opts,
                           const VectorXd* warm_bid) {
  lp::SimplexSolver solver(lp_opts);
  const int nv = model.num_vars();
  const int k = static_cast<int>(model.bid_vars.size());

  BnbResult result;
  result.incumbent_objective = -lp::kInf;
  double closed_cap = -lp::kInf;

  auto try_incumbent = [&](const VectorXd& bid) {
    auto [u, better] = oracle(bid);
    if (u > result.incumbent_objective) {
      result.incumbent_objective = u;
      result.incumbent_bid = better;
    }
  };
  if (warm_bid) try_incumbent(*warm_bid);

  std::vector<Node> storage;
  using QEntry = std::pair<double, long>;  // (estimate, node id); max estimate, FIFO on ties
  auto cmp = [](const QEntry& a, const QEntry& b) {
    if (a.first != b.first) return a.first < b.first;
    return a.second > b.second;
  };
  std::priority_queue<QEntry, std::vector<QEntry>, decltype(cmp)> queue(cmp);

  storage.push_back(Node{});
  queue.push({lp::kInf, 0});
  long next_id = 1;

  bool hit_limit = false;
  double frontier = -lp::kInf;

  while (!queue.empty()) {
    auto [estimate, id] = queue.top();
    queue.pop();
    Node node = std::move(storage[id]);
    storage[id] = Node{};

    if (estimate <= result.incumbent_objective + tolerance) {
      closed_cap = std::max(closed_cap, estimate);
      continue;
    }
    if (result.nodes >= node_limit) {
      frontier = std::max(frontier, estimate);
      hit_limit = true;
      continue;  // keep draining to collect the frontier cap
    }
    ++result.nodes;

    // Build and solve the node relaxation.
    lp::LinearProgram lp;
    lp.sense = lp::Sense::Maximize;
    for (int v = 0; v < nv; ++v) {
      Range r = effective_bounds(model, node, v);
      lp.add_variable(r.lo, r.hi);
    }
    lp.set_objective(model.objective_var, 1.0);
    for (size_t i = 0; i < model.rows.size(); ++i)
      lp.add_constraint(model.rows[i], model.relations[i], model.rhs[i]);
    for (const auto& row : node.extra) lp.add_constraint(row.coeffs, row.rel, row.rhs);

    std::vector<lp::VarStatus> hint = node.hint;
    if (!hint.empty())
      hint.resize(static_cast<size_t>(nv) + lp.num_rows(), lp::VarStatus::Basic);
    lp::LpSolution sol;
    try {
      sol = solver.solve(lp, hint.empty() ? nullptr : &hint);
    } catch (const std::runtime_error&) {
      sol = solver.solve(lp);  // retry cold before giving up
    }
    if (sol.status == lp::LpStatus::Infeasible) continue;
    if (sol.status == lp::LpStatus::Unbounded)
      throw std::runtime_error("branch_and_bound: relaxation unbounded; encode() bounds missing");
    double ub = sol.objective;

    VectorXd bid(k);
    for (int j = 0; j < k; ++j) bid[j] = std::clamp(sol.primal[model.bid_vars[j]], 0.0, 1.0);
    try_incumbent(bid);

    if (ub <= result.incumbent_objective + tolerance) {
      closed_cap = std::max(closed_cap, ub);
      continue;
    }

    // Branch selection: most fractional binary, then most violated
    // complementarity pair, then worst bilinear envelope violation.
    int branch_binary = -1;
    double best_frac = 1e-6;
    for (int b : model.binaries) {
      double v = sol.primal[b];
      double f = std::min(v, 1.0 - v);
      if (f > best_frac) {
        best_frac = f;
        branch_binary = b;
      }
    }
    int branch_pair = -1;
    if (branch_binary < 0) {
      double best_viol = 1e-8;
      for (size_t i = 0; i < model.compl_pairs.size(); ++i) {
        double v = sol.primal[model.compl_pairs[i].first] * sol.primal[model.compl_pairs[i].second];
        if (v > best_viol) {
          best_viol = v;
          branch_pair = static_cast<int>(i);
        }
      }
    }
    int branch_tri = -1;
    if (branch_binary < 0 && branch_pair < 0) {
      double best_err = 1e-7;
      for (size_t i = 0; i < model.bilinears.size(); ++i) {
        const auto& t = model.bilinears[i];
        double err = std::abs(sol.primal[t.w] - sol.primal[t.x] * sol.primal[t.y]);
        if (err > best_err) {
          best_err = err;
          branch_tri = static_cast<int>(i);
        }
      }
    }

    auto push_child = [&](Node&& child) {
      child.estimate = ub;
      child.id = next_id++;
      child.hint = sol.basis;
      storage.resize(std::max<size_t>(storage.size(), child.id + 1));
      double est = child.estimate;
      long cid = child.id;
      storage[cid] = std::move(child);
      queue.push({est, cid});
    };
    auto child_with_bounds = [&](int var, double lo, double hi) {
      Node child;
      child.overrides = node.overrides;
      child.extra = node.extra;
      Range cur = effective_bounds(model, node, var);
      Range merged{std::max(cur.lo, lo), std::min(cur.hi, hi)};
      if (merged.lo > merged.hi) return;  // empty region
      child.overrides.emplace_back(var, merged);
      push_child(std::move(child));
    };

    if (branch_binary >= 0) {
      child_with_bounds(branch_binary, 0.0, 0.0);
      child_with_bounds(branch_binary, 1.0, 1.0);
    } else if (branch_pair >= 0) {
      child_with_bounds(model.compl_pairs[branch_pair].first, 0.0, 0.0);
      child_with_bounds(model.compl_pairs[branch_pair].second, 0.0, 0.0);
    } else if (branch_tri >= 0) {
      const auto& t = model.bilinears[branch_tri];
      Range rx = effective_bounds(model, node, t.x);
      Range ry = effective_bounds(model, node, t.y);
      int var = (rx.hi - rx.lo >= ry.hi - ry.lo) ? t.x : t.y;
      Range rv = (var == t.x) ? rx : ry;
      double mid = 0.5 * (rv.lo + rv.hi);
      for (int side = 0; side < 2; ++side) {
        Node child;
        child.overrides = node.overrides;
        child.extra = node.extra;
        Range split = side == 0 ? Range{rv.lo, mid} : Range{mid, rv.hi};
        child.overrides.emplace_back(var, split);
        Range nx = (var == t.x) ? split : rx;
        Range ny = (var == t.y) ? split : ry;
        ExtraRow rows4[4];
        {
          std::vector<std::vector<std::pair<int, double>>> rws;
          std::vector<lp::Relation> rls;
          std::vector<double> rh;
          add_mccormick(rws, rls, rh, t.w, t.x, t.y, nx.lo, nx.hi, ny.lo, ny.hi);
          for (int i = 0; i < 4; ++i) rows4[i] = ExtraRow{rws[i], rls[i], rh[i]};
        }
        for (int i = 0; i < 4; ++i) child.extra.push_back(rows4[i]);
        // Tighten w to the product range of the split box.
        double corners[4] = {nx.lo * ny.lo, nx.lo * ny.hi, nx.hi * ny.lo, nx.hi * ny.hi};
        double wlo = *std::min_element(corners, corners + 4);
        double whi = *std::max_element(corners, corners + 4);
        Range cw = effective_bounds(model, node, t.w);
        Range mw{std::max(cw.lo, wlo), std::min(cw.hi, whi)};
        if (mw.lo > mw.hi) continue;
        child.overrides.emplace_back(t.w, mw);
        push_child(std::move(child));
      }
    } else {
      // Exact leaf: the relaxation is tight here, its value caps the region.
      closed_cap = std::max(closed_cap, ub);
    }
  }

  result.upper_bound = std::max(result.incumbent_objective, std::max(closed_cap, frontier));
  result.gap = result.upper_bound - result.incumbent_objective;
  result.status = (!hit_limit && result.gap <= tolerance + 1e-12) ? BnbStatus::Complete
                                                                  : BnbStatus::Incomplete;
  if (hit_limit) result.status = BnbStatus::Incomplete;
  return result;
}

Certificate certify_regret(const AuctionNet& net, const MatrixXd& profile, int agent,
                           const CertifyOptions& opts) {
  auto t0 = std::chrono::steady_clock::now();
  const auto& cfg = net.config;
  const int k = cfg.n_items;

  VectorXd in_lo(cfg.input_dim()), in_hi(cfg.input_dim());
  for (int i = 0; i < cfg.n_agents; ++i)
    for (int j = 0; j < k; ++j) {
      int idx = i * k + j;
      if (i == agent) {
        in_lo[idx] = 0.0;
        in_hi[idx] = 1.0;
      } else {
        in_lo[idx] = profile(i, j);
        in_hi[idx] = profile(i, j);
      }
    }

  NeuronBounds bounds = planet_bounds(net, in_lo, in_hi, opts);
  MipModel model = encode(net, profile, agent, bounds, opts.elide_stable);

  net::Outcome truthful = net::forward(net, profile);
  double u_truth = net::utility(truthful, profile, agent);

  IncumbentOracle oracle = [&](const VectorXd& bid) {
    Eigen::RowVectorXd row(k);
    for (int j = 0; j < k; ++j) row[j] = bid[j];
    train::MisreportResult mis =
        train::misreport_search_from(net, profile, agent, row, opts.polish_steps, opts.polish_lr);
    VectorXd out(k);
    for (int j = 0; j < k; ++j) out[j] = mis.bid[j];
    return std::make_pair(mis.utility, out);
  };

  VectorXd truth_bid(k);
  for (int j = 0; j < k; ++j) truth_bid[j] = profile(agent, j);
  BnbResult bnb = branch_and_bound(model, opts.tolerance, oracle, opts.node_limit,
                                   opts.lp_options, &truth_bid);

  Certificate cert;
  cert.agent = agent;
  cert.truthful_utility = u_truth;
  cert.certified_max_utility = bnb.upper_bound;
  double raw = bnb.upper_bound - u_truth;
  cert.certified_regret = std::max(0.0, raw);
  cert.incumbent_misreport = bnb.incumbent_bid;
  cert.gap = bnb.gap;
  cert.nodes_explored = bnb.nodes;
  cert.complete = bnb.status == BnbStatus::Complete;
  cert.unstable_relus = bounds.unstable_relu_count();
  cert.consistency_residual = consistency_residual(model, net, profile, agent, bnb.incumbent_bid);
  cert.solve_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return cert;
}

}  // namespace auctioncert::certify
