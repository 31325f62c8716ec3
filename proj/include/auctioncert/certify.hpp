#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "auctioncert/lp.hpp"
#include "auctioncert/net.hpp"
#include "auctioncert/parallel.hpp"

namespace auctioncert::certify {

using net::AuctionNet;
using net::MatrixXd;
using net::NeuronBounds;
using net::VectorXd;

// Neuron is treated as sign-stable iff lo >= kStableTol or hi <= -kStableTol.
constexpr double kStableTol = 1e-9;

// Affine expression over model variables; used wherever a quantity collapses
// to a linear form (stable ReLUs, payments, saturated pieces).
struct Expr {
  std::vector<std::pair<int, double>> terms;
  double constant = 0.0;

  static Expr var(int idx) { return Expr{{{idx, 1.0}}, 0.0}; }
  static Expr value(double c) { return Expr{{}, c}; }
  Expr scaled(double f) const;
  Expr plus(const Expr& other) const;
  Expr plus_const(double c) const;
};

// What each model variable means in network terms; drives the consistency
// check that replays a forward trace through the constraint system.
enum class VarKind : std::uint8_t {
  Bid,          // a = item index
  TrunkPre,     // a = layer, b = neuron
  TrunkPost,
  ReluBinary,
  AllocScore,   // a = flat score index
  AllocZ,       // a = row, b = item
  AllocSlack,   // 1 - z
  AllocMu1,
  AllocMu2,
  AllocLambda,  // a = item
  PayPre,
  GadgetPost,   // a = gadget id; max(pre, 0) of an auxiliary ReLU piece
  GadgetBinary,
  FracPay,
  ProdW,        // a = item; w_j = z_{agent,j} * b_j
  AllocValue,   // y = sum_j w_j
  Payment,
  Utility,
};

struct VarInfo {
  VarKind kind;
  int a = 0, b = 0;
  double lo = 0.0, hi = 0.0;
};

struct MipModel {
  std::vector<VarInfo> vars;
  std::vector<std::vector<std::pair<int, double>>> rows;
  std::vector<lp::Relation> relations;
  std::vector<double> rhs;
  std::vector<int> binaries;                   // var indices restricted to {0,1}
  std::vector<std::pair<int, int>> compl_pairs;  // x*y = 0 with x, y >= 0
  struct Bilinear {
    int w, x, y;  // w = x * y, all box-bounded
  };
  std::vector<Bilinear> bilinears;
  std::vector<Expr> gadget_pre;  // pre-activation expression per auxiliary ReLU piece
  int objective_var = -1;  // maximize this variable
  std::vector<int> bid_vars;  // the certified agent's bid row
  int agent = 0;

  int num_vars() const { return static_cast<int>(vars.size()); }
  int add_var(VarKind kind, int a, int b, double lo, double hi);
  void add_row(std::vector<std::pair<int, double>> coeffs, lp::Relation rel, double rhs_val);
  // expr (relation) rhs
  void add_expr_row(const Expr& e, lp::Relation rel, double rhs_val);
};

struct CertifyOptions {
  double tolerance = 1e-4;   // absolute, on utility
  long node_limit = 200000;
  int polish_steps = 50;     // PGD steps applied to rounded relaxation points
  double polish_lr = 0.02;
  bool elide_stable = true;  // substitute stable ReLUs instead of encoding Eq-4 blocks
  ExecPolicy policy;
  lp::SimplexSolver::Options lp_options;
};

// LP-based bound tightening, layer by layer, seeded by interval propagation:
// per neuron two LPs over the triangle relaxation of everything before it.
// Resulting intervals are intersected with the IBP ones, so they only ever
// shrink; an LP failure falls back to the IBP interval and is flagged.
NeuronBounds planet_bounds(const AuctionNet& net, const VectorXd& in_lo, const VectorXd& in_hi,
                           const CertifyOptions& opts = {});

// Encodes max_{b_agent in [0,1]^k} u_agent(b_agent, profile_-agent) over the
// exact network: big-M ReLUs (binaries omitted for stable neurons), sparsemax
// KKT with complementarity pairs, hard-sigmoid as chained piecewise blocks,
// products as bilinear triples. Bounds must be finite and sound for the box.
MipModel encode(const AuctionNet& net, const MatrixXd& profile, int agent,
                const NeuronBounds& bounds, bool elide_stable = true);

enum class BnbStatus { Complete, Incomplete };

struct BnbResult {
  double upper_bound = 0.0;
  double incumbent_objective = 0.0;
  VectorXd incumbent_bid;
  double gap = 0.0;
  long nodes = 0;
  BnbStatus status = BnbStatus::Complete;
};

// Evaluates a candidate bid row exactly; returns (objective, improved bid).
// Lets the search polish rounded relaxation points with a few PGD steps.
using IncumbentOracle = std::function<std::pair<double, VectorXd>(const VectorXd&)>;

// Best-first search: node relaxation drops complementarity, relaxes binaries
// to [0,1] and McCormick-envelopes the bilinear triples. Branches on the most
// fractional binary, then the most violated complementarity pair (fix either
// side to zero), then bisects the bilinear variable with the largest envelope
// violation.
BnbResult branch_and_bound(const MipModel& model, double tolerance,
                           const IncumbentOracle& oracle, long node_limit = 200000,
                           const lp::SimplexSolver::Options& lp_opts = {},
                           const VectorXd* warm_bid = nullptr);

struct Certificate {
  int profile_id = 0;
  int agent = 0;
  double truthful_utility = 0.0;
  double certified_max_utility = 0.0;
  double certified_regret = 0.0;
  VectorXd incumbent_misreport;
  double gap = 0.0;
  long nodes_explored = 0;
  double solve_seconds = 0.0;
  double consistency_residual = 0.0;
  bool complete = true;
  int unstable_relus = 0;  // at the certified box, from Planet bounds
};

Certificate certify_regret(const AuctionNet& net, const MatrixXd& profile, int agent,
                           const CertifyOptions& opts = {});

// Max constraint violation of the model at the assignment induced by running
// the network forward at `bid` (KKT multipliers reconstructed in closed form).
double consistency_residual(const MipModel& model, const AuctionNet& net, const MatrixXd& profile,
                            int agent, const VectorXd& bid);

// Node relaxation of the model with no branching decisions applied.
lp::LinearProgram root_relaxation(const MipModel& model);

}  // namespace auctioncert::certify
