#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "auctioncert/certify.hpp"
#include "auctioncert/train.hpp"

namespace auctioncert::certify {

using net::Activation;

Expr Expr::scaled(double f) const {
  Expr out;
  out.constant = constant * f;
  out.terms.reserve(terms.size());
  for (const auto& [idx, c] : terms) out.terms.emplace_back(idx, c * f);
  return out;
}

Expr Expr::plus(const Expr& other) const {
  Expr out = *this;
  out.constant += other.constant;
  for (const auto& t : other.terms) out.terms.push_back(t);
  return out;
}

Expr Expr::plus_const(double c) const {
  Expr out = *this;
  out.constant += c;
  return out;
}

int MipModel::add_var(VarKind kind, int a, int b, double lo, double hi) {
  vars.push_back(VarInfo{kind, a, b, lo, hi});
  return static_cast<int>(vars.size()) - 1;
}

void MipModel::add_row(std::vector<std::pair<int, double>> coeffs, lp::Relation rel,
                       double rhs_val) {
  rows.push_back(std::move(coeffs));
  relations.push_back(rel);
  rhs.push_back(rhs_val);
}

void MipModel::add_expr_row(const Expr& e, lp::Relation rel, double rhs_val) {
  // Merge duplicate indices so the LP rows stay canonical.
  std::vector<std::pair<int, double>> coeffs = e.terms;
  std::sort(coeffs.begin(), coeffs.end());
  std::vector<std::pair<int, double>> merged;
  for (const auto& [idx, c] : coeffs) {
    if (!merged.empty() && merged.back().first == idx)
      merged.back().second += c;
    else
      merged.emplace_back(idx, c);
  }
  add_row(std::move(merged), rel, rhs_val - e.constant);
}

namespace {

// Growing LP over the already-processed prefix of the network. Post-activation
// values are affine expressions: a variable for unstable ReLUs, the
// pre-activation variable for stable-positive ones, zero for stable-negative.
struct Prefix {
  lp::LinearProgram lp;
  std::vector<Expr> post;
};

struct Range {
  double lo, hi;
};

// Solve min and max of an affine expression over the prefix. `hint` chains
// bases across neurons of one chunk. Throws on numerical failure.
Range optimize_expr(const Prefix& prefix, const Expr& e, const lp::SimplexSolver& solver,
                    std::vector<lp::VarStatus>* hint) {
  lp::LinearProgram lp = prefix.lp;
  std::fill(lp.objective.begin(), lp.objective.end(), 0.0);
  for (const auto& [idx, c] : e.terms) lp.objective[idx] += c;

  lp.sense = lp::Sense::Minimize;
  lp::LpSolution lo_sol = solver.solve(lp, hint && !hint->empty() ? hint : nullptr);
  if (lo_sol.status != lp::LpStatus::Optimal)
    throw std::runtime_error("planet: relaxation LP not optimal (min)");
  if (hint) *hint = lo_sol.basis;

  lp.sense = lp::Sense::Maximize;
  lp::LpSolution hi_sol = solver.solve(lp, hint && !hint->empty() ? hint : nullptr);
  if (hi_sol.status != lp::LpStatus::Optimal)
    throw std::runtime_error("planet: relaxation LP not optimal (max)");
  if (hint) *hint = hi_sol.basis;

  return Range{lo_sol.objective + e.constant, hi_sol.objective + e.constant};
}

Expr affine_of_posts(const Eigen::MatrixXd& weights, const Eigen::VectorXd& biases, int row,
                     const std::vector<Expr>& post) {
  Expr e = Expr::value(biases[row]);
  for (int c = 0; c < weights.cols(); ++c) {
    double w = weights(row, c);
    if (w == 0.0) continue;
    e = e.plus(post[c].scaled(w));
  }
  return e;
}

}  // namespace

NeuronBounds planet_bounds(const AuctionNet& net, const VectorXd& in_lo, const VectorXd& in_hi,
                           const CertifyOptions& opts) {
  NeuronBounds bounds = train::ibp_bounds(net, in_lo, in_hi);
  lp::SimplexSolver solver(opts.lp_options);

  Prefix prefix;
  prefix.lp.sense = lp::Sense::Maximize;
  for (int i = 0; i < in_lo.size(); ++i) {
    int v = prefix.lp.add_variable(in_lo[i], in_hi[i]);
    prefix.post.push_back(Expr::var(v));
  }

  const int depth = static_cast<int>(net.trunk.size());
  constexpr int kChunk = 16;  // fixed chunk size keeps results thread-count independent

  for (int l = 0; l < depth; ++l) {
    const auto& layer = net.trunk[l];
    const int width = layer.out_dim();
    std::vector<Expr> pre_exprs(width);
    for (int i = 0; i < width; ++i)
      pre_exprs[i] = affine_of_posts(layer.weights, layer.biases, i, prefix.post);

    // Layer 0 is affine over the input box, where interval arithmetic is
    // already exact; LPs start paying off one layer in.
    if (l > 0) {
      const int chunks = (width + kChunk - 1) / kChunk;
      std::vector<Range> tightened(width);
      std::vector<std::uint8_t> ok(width, 0);
      for_each_index(
          chunks,
          [&](std::int64_t ci) {
            std::vector<lp::VarStatus> hint;
            for (int i = static_cast<int>(ci) * kChunk;
                 i < std::min(width, static_cast<int>(ci + 1) * kChunk); ++i) {
              try {
                tightened[i] = optimize_expr(prefix, pre_exprs[i], solver, &hint);
                ok[i] = 1;
              } catch (const std::runtime_error&) {
                ok[i] = 0;
                hint.clear();
              }
            }
          },
          opts.policy);
      for (int i = 0; i < width; ++i) {
        if (!ok[i]) {
          ++bounds.lp_fallbacks;
          continue;
        }
        double lo = std::max(bounds.trunk_lo[l][i], tightened[i].lo);
        double hi = std::min(bounds.trunk_hi[l][i], tightened[i].hi);
        if (lo <= hi) {
          bounds.trunk_lo[l][i] = lo;
          bounds.trunk_hi[l][i] = hi;
          bounds.trunk_tight[l][i] = 1;
        } else {
          ++bounds.lp_fallbacks;  // crossed interval: numeric noise, keep IBP
        }
      }
    } else {
      for (int i = 0; i < width; ++i) bounds.trunk_tight[l][i] = 1;  // exact already
    }

    // Extend the prefix with this layer.
    std::vector<Expr> next_post(width);
    for (int i = 0; i < width; ++i) {
      double lo = bounds.trunk_lo[l][i], hi = bounds.trunk_hi[l][i];
      int pre = prefix.lp.add_variable(lo, hi);
      Expr def = pre_exprs[i];
      def.terms.emplace_back(pre, -1.0);
      std::vector<std::pair<int, double>> coeffs = def.terms;
      prefix.lp.add_constraint(std::move(coeffs), lp::Relation::Equal, -def.constant);
      if (layer.activation != Activation::ReLU) {
        next_post[i] = Expr::var(pre);
      } else if (lo >= kStableTol) {
        next_post[i] = Expr::var(pre);
      } else if (hi <= -kStableTol) {
        next_post[i] = Expr::value(0.0);
      } else {
        int x = prefix.lp.add_variable(0.0, std::max(hi, 0.0));
        prefix.lp.add_constraint({{x, 1.0}, {pre, -1.0}}, lp::Relation::GreaterEqual, 0.0);
        // Triangle upper facet: (hi-lo) x <= hi (pre - lo)
        prefix.lp.add_constraint({{x, hi - lo}, {pre, -hi}}, lp::Relation::LessEqual, -hi * lo);
        next_post[i] = Expr::var(x);
      }
    }
    prefix.post = std::move(next_post);
  }

  // Head pre-activations: bounds only, nothing is appended to the prefix.
  auto tighten_head = [&](const net::DenseLayer& head, VectorXd& lo_vec, VectorXd& hi_vec) {
    const int width = head.out_dim();
    if (depth == 0) return;  // affine over the box, IBP exact
    const int chunks = (width + kChunk - 1) / kChunk;
    std::vector<Range> tightened(width);
    std::vector<std::uint8_t> ok(width, 0);
    for_each_index(
        chunks,
        [&](std::int64_t ci) {
          std::vector<lp::VarStatus> hint;
          for (int i = static_cast<int>(ci) * kChunk;
               i < std::min(width, static_cast<int>(ci + 1) * kChunk); ++i) {
            Expr e = affine_of_posts(head.weights, head.biases, i, prefix.post);
            try {
              tightened[i] = optimize_expr(prefix, e, solver, &hint);
              ok[i] = 1;
            } catch (const std::runtime_error&) {
              ok[i] = 0;
              hint.clear();
            }
          }
        },
        opts.policy);
    for (int i = 0; i < width; ++i) {
      if (!ok[i]) {
        ++bounds.lp_fallbacks;
        continue;
      }
      double lo = std::max(lo_vec[i], tightened[i].lo);
      double hi = std::min(hi_vec[i], tightened[i].hi);
      if (lo <= hi) {
        lo_vec[i] = lo;
        hi_vec[i] = hi;
      } else {
        ++bounds.lp_fallbacks;
      }
    }
  };
  tighten_head(net.alloc_head, bounds.alloc_lo, bounds.alloc_hi);
  tighten_head(net.pay_head, bounds.pay_lo, bounds.pay_hi);
  return bounds;
}

}  // namespace auctioncert::certify
