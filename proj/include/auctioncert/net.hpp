#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "auctioncert/rng.hpp"

namespace auctioncert::net {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Raised on shape/config mismatches between a network and its inputs.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

enum class IrMode { Fractional, PenaltyFree };

enum class Activation : std::uint8_t {
  ReLU,
  Identity,
  Sparsemax,
  HardSigmoid,
  // Smooth variants used only by the distillation teacher; the certifier
  // rejects them.
  Softmax,
  Sigmoid,
};

const char* activation_name(Activation a);
Activation activation_from_name(const std::string& name);

struct AuctionConfig {
  int n_agents = 1;
  int n_items = 2;
  std::vector<int> trunk_widths = {64, 64};
  IrMode ir_mode = IrMode::Fractional;
  bool allow_dummy_agent = true;
  // Teacher variant: softmax allocation + true sigmoid fractional payment.
  bool smooth_heads = false;

  int input_dim() const { return n_agents * n_items; }
  int alloc_rows() const { return n_agents + (allow_dummy_agent ? 1 : 0); }
  int alloc_dim() const { return alloc_rows() * n_items; }
  void validate() const;
};

struct DenseLayer {
  MatrixXd weights;  // out x in
  VectorXd biases;   // out
  Activation activation = Activation::ReLU;

  int in_dim() const { return static_cast<int>(weights.cols()); }
  int out_dim() const { return static_cast<int>(weights.rows()); }
};

struct Outcome {
  MatrixXd allocation;     // n_agents x n_items, entries in [0, 1]
  VectorXd frac_payment;   // n_agents, Fractional mode only (empty otherwise)
  VectorXd payment;        // n_agents
  VectorXd utility;        // n_agents, valuations taken equal to the bids
};

// Everything the backward pass and the MIP consistency check need.
struct ForwardTrace {
  VectorXd input;                       // flattened bids, agent-major
  std::vector<VectorXd> trunk_pre;      // pre-activation per trunk layer
  std::vector<VectorXd> trunk_post;
  VectorXd alloc_scores;                // alloc head pre-activation
  MatrixXd alloc_full;                  // alloc_rows x n_items (includes dummy row)
  VectorXd pay_pre;                     // payment head pre-activation
  VectorXd frac_payment;                // Fractional: squashed payment fractions
  VectorXd alloc_value;                 // per agent: sum_j b_ij a_ij
  VectorXd payment;                     // final payments
};

struct AuctionNet {
  AuctionConfig config;
  std::vector<DenseLayer> trunk;
  DenseLayer alloc_head;
  DenseLayer pay_head;
  bool payments_clipped = false;  // PenaltyFree export flag; forward applies the clamp
  std::uint64_t seed = 0;
  std::string config_hash;

  void validate() const;
};

// Pre-activation intervals for a given axis-aligned input box; sound for
// every concrete input inside the box. `tight` marks neurons whose interval
// came from an LP solve rather than plain interval arithmetic.
struct NeuronBounds {
  VectorXd input_lo, input_hi;
  std::vector<VectorXd> trunk_lo, trunk_hi;
  VectorXd alloc_lo, alloc_hi;
  VectorXd pay_lo, pay_hi;
  std::vector<std::vector<std::uint8_t>> trunk_tight;
  int lp_fallbacks = 0;

  // Unstable = sign not decided at the certifier's threshold.
  int unstable_relu_count() const;
};

// Euclidean projection onto the probability simplex via the sort-and-threshold
// closed form.
VectorXd sparsemax(const VectorXd& x);
// Threshold tau such that sparsemax(x) = max(x - tau, 0).
double sparsemax_tau(const VectorXd& x);
// Jacobian with boundary ties included in the support (fixed subgradient).
MatrixXd sparsemax_jacobian(const VectorXd& x);

// clamp(0.25 x + 0.5, 0, 1); linear pieces break at x = -2 and x = 2.
double hard_sigmoid(double x);
double hard_sigmoid_grad(double x);

double sigmoid(double x);
VectorXd softmax(const VectorXd& x);

AuctionNet make_auction_net(const AuctionConfig& config, std::uint64_t seed);

Outcome forward(const AuctionNet& net, const MatrixXd& bids, ForwardTrace* trace = nullptr);

// Additive utility of `agent` under `valuation`, which may differ from the
// bids that produced `outcome` (that difference is what regret measures).
double utility(const Outcome& outcome, const MatrixXd& valuation, int agent);

// Flat parameter addressing: [trunk layers..., alloc head, pay head], each
// layer as row-major weights then biases.
struct ParamLayout {
  struct Slice {
    int w_offset, b_offset, rows, cols;
  };
  std::vector<Slice> layers;  // trunk..., alloc, pay
  int total = 0;
};
ParamLayout param_layout(const AuctionNet& net);
VectorXd pack_params(const AuctionNet& net);
void unpack_params(AuctionNet& net, const VectorXd& flat);

struct Gradients {
  VectorXd params;   // flat, matching param_layout
  MatrixXd bids;     // n_agents x n_items input gradient
};

// Reverse-mode gradients of a scalar loss given its adjoints on the outcome:
// d_alloc is dL/d allocation (n_agents x n_items, dummy row excluded) and
// d_payment is dL/d payment. Valid at the trace produced by forward().
Gradients backward(const AuctionNet& net, const ForwardTrace& trace, const MatrixXd& d_alloc,
                   const VectorXd& d_payment);

}  // namespace auctioncert::net
