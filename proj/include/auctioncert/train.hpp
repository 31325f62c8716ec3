#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

#include "auctioncert/net.hpp"
#include "auctioncert/parallel.hpp"

namespace auctioncert::train {

using net::AuctionConfig;
using net::AuctionNet;
using net::MatrixXd;
using net::NeuronBounds;
using net::VectorXd;

struct TrainConfig {
  int batch_size = 500;
  int epochs = 80;
  double lr = 1e-3;
  int misreport_steps_train = 25;
  double misreport_lr = 0.02;
  int misreport_steps_eval = 1000;
  double lambda_init = 5.0;
  double rho_rgt_init = 1.0;      // constant rho^rgt, picked from [0.5, 2]
  double rho_rgt_inc = 0.25;
  int lambda_update_period = 6;   // batches
  double mu_init = 5.0;
  double rho_irv = 1.0;
  double rho_irv_inc = 0.0;
  int mu_update_period = 5;       // batches
  double stability_weight = 0.0;  // 0 disables the ReLU-stability regularizer
  double distill_weight = 1.0 / 400.0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct Dataset {
  std::vector<MatrixXd> profiles;  // each n_agents x n_items, entries in [0, 1]
  std::uint64_t seed = 0;

  int size() const { return static_cast<int>(profiles.size()); }
};

// i.i.d. uniform on [0,1]^(n x k); regenerating with the same seed is
// bit-identical.
Dataset generate_dataset(int n_agents, int n_items, int count, std::uint64_t seed);

struct MisreportResult {
  Eigen::RowVectorXd bid;  // the best misreport row found
  double utility = 0.0;    // agent's utility at that misreport (true valuation)
};

// Projected gradient ascent on agent's bid row, others held at truth.
// Initialized at the truthful row; returns the best iterate seen.
MisreportResult misreport_search(const AuctionNet& net, const MatrixXd& profile, int agent,
                                 int steps, double lr);

// Same ascent started from an arbitrary bid row (used to polish certifier
// incumbents). The initial point is always a candidate.
MisreportResult misreport_search_from(const AuctionNet& net, const MatrixXd& profile, int agent,
                                      const Eigen::RowVectorXd& init, int steps, double lr);

double regret_hat(const AuctionNet& net, const MatrixXd& profile, int agent, int steps, double lr);

// max(p_i - sum_j a_ij b_ij, 0) at truthful bids. Zero by construction in
// Fractional mode and for clipped payments.
double irv(const AuctionNet& net, const MatrixXd& profile, int agent);

struct MultiplierState {
  VectorXd lambda;   // per agent
  double rho_rgt = 0.0;
  VectorXd mu;       // per agent
  double rho_irv = 0.0;

  static MultiplierState init(int n_agents, const TrainConfig& cfg);
};

// Augmented Lagrangian over one batch, averaged: -sum_i p_i
// + sum_i lambda_i rgt_i + (rho/2)(sum_i rgt_i)^2 + sum_i mu_i irv_i^2.
// Rows of the matrices are batch entries, columns agents.
double lagrangian_loss(const MatrixXd& payments, const MatrixXd& regrets, const MatrixXd& irvs,
                       const MultiplierState& multipliers);

// lambda_i += rho_rgt * mean rgt_i; rho_rgt += rho_rgt_inc (same shape for
// mu / rho_irv). Call every lambda_update_period / mu_update_period batches.
void update_multipliers_regret(MultiplierState& state, const VectorXd& batch_mean_regret,
                               const TrainConfig& cfg);
void update_multipliers_irv(MultiplierState& state, const VectorXd& batch_mean_irv,
                            const TrainConfig& cfg);

// Interval bound propagation through the network for an axis-aligned input
// box; sound pre-activation intervals for trunk layers and both heads.
NeuronBounds ibp_bounds(const AuctionNet& net, const VectorXd& in_lo, const VectorXd& in_hi);

// sum over trunk ReLU pre-activations of -tanh(1 + lo * hi).
double stability_penalty(const NeuronBounds& bounds);

// d stability_penalty / d params, differentiated through the IBP recursion.
VectorXd stability_penalty_grad(const AuctionNet& net, const VectorXd& in_lo,
                                const VectorXd& in_hi);

// Pooled MSE over allocation and payment coordinates between student and
// teacher outputs, times `weight`, averaged over the profiles.
double distill_loss(const AuctionNet& teacher, const AuctionNet& student,
                    const std::vector<MatrixXd>& profiles, double weight);

// Returns a copy with the payment clamp p_i <- clamp(p_i, 0, sum_j a_ij b_ij)
// baked in (PenaltyFree networks only); the flag travels with the model file.
AuctionNet clip_payments(const AuctionNet& net);

struct EpochLog {
  int epoch = 0;
  double revenue = 0.0;
  double mean_regret = 0.0;
  double max_regret = 0.0;
  double mean_irv = 0.0;
  double loss = 0.0;
  double lambda_bar = 0.0;
  double rho_rgt = 0.0;
};

struct TrainOptions {
  const AuctionNet* teacher = nullptr;  // enables the distillation term
  ExecPolicy policy;
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  AuctionNet net;
  std::vector<EpochLog> log;
  MultiplierState multipliers;
};

// Augmented-Lagrangian training with Adam, per-batch PGD misreports and
// periodic multiplier updates. Throws on non-finite loss. Results are
// independent of the thread count: every parallel kernel writes per-index
// slots and reductions run in index order.
TrainResult train(const AuctionConfig& config, const TrainConfig& tc, const Dataset& data,
                  const TrainOptions& opts = {});

struct EvalRow {
  int point = 0;
  double revenue = 0.0;
  VectorXd regret;  // per agent, misreport_steps_eval PGD
  VectorXd irv;     // per agent
};

std::vector<EvalRow> evaluate(const AuctionNet& net, const Dataset& data, int steps, double lr,
                              const ExecPolicy& policy = {});

}  // namespace auctioncert::train
