#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "auctioncert/net.hpp"
#include "auctioncert/rng.hpp"
#include "auctioncert/train.hpp"

using namespace auctioncert;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using net::AuctionConfig;
using net::AuctionNet;
using net::IrMode;
using train::Dataset;
using train::TrainConfig;

namespace {

AuctionNet seeded_net(int n, int k, std::vector<int> widths, IrMode mode, std::uint64_t seed,
                      bool smooth = false) {
  AuctionConfig cfg;
  cfg.n_agents = n;
  cfg.n_items = k;
  cfg.trunk_widths = std::move(widths);
  cfg.ir_mode = mode;
  cfg.smooth_heads = smooth;
  return net::make_auction_net(cfg, seed);
}

AuctionNet zeroed(AuctionNet n) {
  for (auto& l : n.trunk) {
    l.weights.setZero();
    l.biases.setZero();
  }
  n.alloc_head.weights.setZero();
  n.alloc_head.biases.setZero();
  n.pay_head.weights.setZero();
  n.pay_head.biases.setZero();
  return n;
}

}  // namespace

TEST_CASE("dataset regeneration is bit-identical and in [0,1]") {
  Dataset a = train::generate_dataset(2, 3, 50, 1234);
  Dataset b = train::generate_dataset(2, 3, 50, 1234);
  REQUIRE(a.size() == 50);
  for (int p = 0; p < 50; ++p) {
    CHECK((a.profiles[p] - b.profiles[p]).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.profiles[p].minCoeff() >= 0.0);
    CHECK(a.profiles[p].maxCoeff() < 1.0);
  }
  Dataset c = train::generate_dataset(2, 3, 50, 1235);
  CHECK((a.profiles[0] - c.profiles[0]).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("misreport search on a constant mechanism returns the truth") {
  // PenaltyFree zero net: allocation and payment are constant in the bids,
  // so the utility gradient vanishes and the ascent never moves.
  AuctionNet n = zeroed(seeded_net(1, 2, {4}, IrMode::PenaltyFree, 9));
  MatrixXd profile(1, 2);
  profile << 0.3, 0.8;
  train::MisreportResult mis = train::misreport_search(n, profile, 0, 25, 0.02);
  CHECK((mis.bid - profile.row(0)).cwiseAbs().maxCoeff() == 0.0);
  CHECK(train::regret_hat(n, profile, 0, 25, 0.02) == 0.0);
}

TEST_CASE("misreport search with zero steps returns the truthful row") {
  AuctionNet n = seeded_net(2, 2, {8}, IrMode::Fractional, 4);
  MatrixXd profile(2, 2);
  profile << 0.2, 0.9, 0.5, 0.1;
  train::MisreportResult mis = train::misreport_search(n, profile, 1, 0, 0.02);
  CHECK((mis.bid - profile.row(1)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("ascent never returns a worse-than-truth utility; monotone in steps") {
  Rng rng(42);
  AuctionNet n = seeded_net(1, 2, {8}, IrMode::Fractional, 77);
  for (int trial = 0; trial < 10; ++trial) {
    MatrixXd profile(1, 2);
    profile << rng.uniform01(), rng.uniform01();
    net::Outcome truthful = net::forward(n, profile);
    double u_truth = truthful.utility[0];
    double prev = -1e100;
    for (int steps : {0, 5, 25, 100}) {
      train::MisreportResult mis = train::misreport_search(n, profile, 0, steps, 0.02);
      CHECK(mis.utility >= u_truth - 1e-12);
      CHECK(mis.utility >= prev - 1e-12);  // best-iterate tracking
      prev = mis.utility;
    }
  }
}

TEST_CASE("irv arithmetic and Fractional guarantee") {
  // direct formula checks
  CHECK(std::max(0.2 - 0.5, 0.0) == 0.0);
  CHECK(std::max(0.5 - 0.2, 0.0) == doctest::Approx(0.3));

  Rng rng(11);
  AuctionNet frac = seeded_net(2, 2, {6}, IrMode::Fractional, 8);
  AuctionNet raw = seeded_net(2, 2, {6}, IrMode::PenaltyFree, 8);
  for (int trial = 0; trial < 20; ++trial) {
    MatrixXd profile(2, 2);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) profile(i, j) = rng.uniform01();
    CHECK(train::irv(frac, profile, 0) == 0.0);  // by construction
    CHECK(train::irv(raw, profile, 0) >= 0.0);
  }
  AuctionNet clipped = train::clip_payments(raw);
  for (int trial = 0; trial < 20; ++trial) {
    MatrixXd profile(2, 2);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) profile(i, j) = rng.uniform01();
    CHECK(train::irv(clipped, profile, 1) == 0.0);
  }
}

TEST_CASE("lagrangian loss arithmetic") {
  train::MultiplierState m;
  m.lambda = VectorXd::Constant(1, 5.0);
  m.rho_rgt = 1.0;
  m.mu = VectorXd::Constant(1, 0.0);
  m.rho_irv = 1.0;

  MatrixXd pay(1, 1), rgt(1, 1), irv(1, 1);
  pay << 0.5;
  rgt << 0.1;
  irv << 0.0;
  // -0.5 + 5*0.1 + 0.5*1*0.01 = 0.005
  CHECK(train::lagrangian_loss(pay, rgt, irv, m) == doctest::Approx(0.005));

  // zero regret, zero irv -> minus mean revenue
  rgt << 0.0;
  CHECK(train::lagrangian_loss(pay, rgt, irv, m) == doctest::Approx(-0.5));

  // doubling rho adds exactly (rho/2)(sum rgt)^2
  rgt << 0.1;
  double base = train::lagrangian_loss(pay, rgt, irv, m);
  m.rho_rgt = 2.0;
  CHECK(train::lagrangian_loss(pay, rgt, irv, m) - base == doctest::Approx(0.005));

  // irv enters squared, weighted by mu
  m.rho_rgt = 1.0;
  m.mu << 3.0;
  irv << 0.2;
  CHECK(train::lagrangian_loss(pay, rgt, irv, m) == doctest::Approx(0.005 + 3.0 * 0.04));
}

TEST_CASE("multiplier updates follow the published rules and never decrease") {
  TrainConfig tc;
  tc.lambda_init = 5.0;
  tc.rho_rgt_init = 1.0;
  tc.rho_rgt_inc = 0.5;
  train::MultiplierState s = train::MultiplierState::init(1, tc);

  VectorXd rgt = VectorXd::Constant(1, 0.0);
  train::update_multipliers_regret(s, rgt, tc);
  CHECK(s.lambda[0] == doctest::Approx(5.0));  // zero regret leaves lambda unchanged
  CHECK(s.rho_rgt == doctest::Approx(1.5));

  s = train::MultiplierState::init(1, tc);
  rgt << 0.02;
  train::update_multipliers_regret(s, rgt, tc);
  CHECK(s.lambda[0] == doctest::Approx(5.02));

  // after T updates rho = rho_init + inc * T
  s = train::MultiplierState::init(1, tc);
  for (int t = 0; t < 7; ++t) train::update_multipliers_regret(s, rgt, tc);
  CHECK(s.rho_rgt == doctest::Approx(1.0 + 0.5 * 7));

  double lam_prev = 0.0;
  s = train::MultiplierState::init(1, tc);
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    rgt << rng.uniform01() * 0.1;
    train::update_multipliers_regret(s, rgt, tc);
    CHECK(s.lambda[0] >= lam_prev);
    lam_prev = s.lambda[0];
  }

  VectorXd irv = VectorXd::Constant(1, 0.3);
  train::update_multipliers_irv(s, irv, tc);
  CHECK(s.mu[0] == doctest::Approx(tc.mu_init + tc.rho_irv * 0.3));
}

TEST_CASE("interval propagation on pinned examples") {
  // identity layer on [0,1]
  AuctionConfig cfg;
  cfg.n_agents = 1;
  cfg.n_items = 1;
  cfg.trunk_widths = {1};
  cfg.ir_mode = IrMode::PenaltyFree;
  AuctionNet n = net::make_auction_net(cfg, 1);
  n.trunk[0].weights << 1.0;
  n.trunk[0].biases << 0.0;
  net::NeuronBounds b =
      train::ibp_bounds(n, VectorXd::Zero(1), VectorXd::Ones(1));
  CHECK(b.trunk_lo[0][0] == doctest::Approx(0.0));
  CHECK(b.trunk_hi[0][0] == doctest::Approx(1.0));

  // W = [1, -1], b = 0.5 on [0,1]^2 -> [-0.5, 1.5]
  AuctionConfig cfg2;
  cfg2.n_agents = 1;
  cfg2.n_items = 2;
  cfg2.trunk_widths = {1};
  cfg2.ir_mode = IrMode::PenaltyFree;
  AuctionNet n2 = net::make_auction_net(cfg2, 1);
  n2.trunk[0].weights << 1.0, -1.0;
  n2.trunk[0].biases << 0.5;
  net::NeuronBounds b2 = train::ibp_bounds(n2, VectorXd::Zero(2), VectorXd::Ones(2));
  CHECK(b2.trunk_lo[0][0] == doctest::Approx(-0.5));
  CHECK(b2.trunk_hi[0][0] == doctest::Approx(1.5));
}

TEST_CASE("interval propagation is sound under heavy sampling") {
  Rng rng(24601);
  AuctionNet n = seeded_net(2, 2, {12, 12}, IrMode::Fractional, 500);
  VectorXd lo = VectorXd::Zero(4), hi = VectorXd::Ones(4);
  net::NeuronBounds b = train::ibp_bounds(n, lo, hi);
  const double eps = 1e-9;
  for (int trial = 0; trial < 100000; ++trial) {
    MatrixXd bids(2, 2);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) bids(i, j) = rng.uniform01();
    net::ForwardTrace tr;
    net::forward(n, bids, &tr);
    for (size_t l = 0; l < tr.trunk_pre.size(); ++l) {
      CHECK((tr.trunk_pre[l] - b.trunk_lo[l]).minCoeff() >= -eps);
      CHECK((b.trunk_hi[l] - tr.trunk_pre[l]).minCoeff() >= -eps);
    }
    CHECK((tr.alloc_scores - b.alloc_lo).minCoeff() >= -eps);
    CHECK((b.alloc_hi - tr.alloc_scores).minCoeff() >= -eps);
    CHECK((tr.pay_pre - b.pay_lo).minCoeff() >= -eps);
    CHECK((b.pay_hi - tr.pay_pre).minCoeff() >= -eps);
  }
}

TEST_CASE("stability penalty values and gradient") {
  net::NeuronBounds b;
  b.trunk_lo.push_back(VectorXd::Constant(1, -1.0));
  b.trunk_hi.push_back(VectorXd::Constant(1, 1.0));
  CHECK(train::stability_penalty(b) == doctest::Approx(-std::tanh(0.0)));  // 0

  b.trunk_lo[0][0] = 2.0;
  b.trunk_hi[0][0] = 2.0;
  CHECK(train::stability_penalty(b) == doctest::Approx(-std::tanh(5.0)));

  // gradient vs finite differences through the IBP recursion; biases are
  // moved off zero, otherwise pre-activation lower bounds sit exactly on the
  // max(.,0) kink of the interval arithmetic and central differences straddle
  // the subgradient
  AuctionNet n = seeded_net(2, 2, {6, 5}, IrMode::Fractional, 88);
  {
    Rng brng(414);
    for (auto& l : n.trunk)
      for (int r = 0; r < l.biases.size(); ++r) l.biases[r] = brng.uniform(-0.3, 0.3);
  }
  VectorXd lo = VectorXd::Zero(4), hi = VectorXd::Ones(4);
  VectorXd grad = train::stability_penalty_grad(n, lo, hi);
  VectorXd params = net::pack_params(n);
  Rng rng(17);
  const double h = 1e-6;
  for (int dir = 0; dir < 6; ++dir) {
    VectorXd d(params.size());
    for (int p = 0; p < d.size(); ++p) d[p] = rng.uniform(-1, 1);
    d /= d.norm();
    AuctionNet np = n, nm = n;
    net::unpack_params(np, params + h * d);
    net::unpack_params(nm, params - h * d);
    double fp = train::stability_penalty(train::ibp_bounds(np, lo, hi));
    double fm = train::stability_penalty(train::ibp_bounds(nm, lo, hi));
    double fd = (fp - fm) / (2 * h);
    double an = grad.dot(d);
    CHECK(std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-4}) <= 1e-4);
  }
}

TEST_CASE("distillation term: zero at equality, delta^2/400 for a uniform offset") {
  AuctionNet teacher = seeded_net(1, 2, {5}, IrMode::PenaltyFree, 3);
  Dataset data = train::generate_dataset(1, 2, 10, 77);
  CHECK(train::distill_loss(teacher, teacher, data.profiles, 1.0 / 400.0) ==
        doctest::Approx(0.0));

  // Constant-output nets: student differs from teacher by delta on every
  // output coordinate.
  AuctionNet a = zeroed(seeded_net(1, 1, {2}, IrMode::PenaltyFree, 1));
  AuctionNet b = a;
  const double delta = 0.12;
  // allocation: zero net gives column sparsemax([s,s]) = 1/2 each; shifting
  // the agent score by +2*delta moves the agent share up by delta.
  b.alloc_head.biases[0] = 2 * delta;
  b.pay_head.biases[0] = a.pay_head.biases[0] + delta;
  Dataset d1 = train::generate_dataset(1, 1, 8, 5);
  double term = train::distill_loss(a, b, d1.profiles, 1.0 / 400.0);
  CHECK(term == doctest::Approx(delta * delta / 400.0).epsilon(1e-9));

  AuctionNet wrong = seeded_net(2, 2, {5}, IrMode::PenaltyFree, 3);
  CHECK_THROWS_AS(train::distill_loss(teacher, wrong, data.profiles, 1.0 / 400.0),
                  net::ConfigError);
}

TEST_CASE("payment clipping examples and flag") {
  AuctionNet raw = seeded_net(1, 2, {4}, IrMode::PenaltyFree, 21);
  // Force a negative payment: p = -0.1 regardless of input.
  raw.pay_head.weights.setZero();
  raw.pay_head.biases << -0.1;
  AuctionNet clipped = train::clip_payments(raw);
  CHECK(clipped.payments_clipped);
  MatrixXd bids(1, 2);
  bids << 0.5, 0.5;
  CHECK(net::forward(clipped, bids).payment[0] == doctest::Approx(0.0));

  // p = 0.9 against an allocation value of ~0.5: clamp to the value.
  raw.pay_head.biases << 0.9;
  clipped = train::clip_payments(raw);
  net::ForwardTrace tr;
  net::Outcome out = net::forward(clipped, bids, &tr);
  CHECK(out.payment[0] == doctest::Approx(tr.alloc_value[0]));

  AuctionNet frac = seeded_net(1, 2, {4}, IrMode::Fractional, 2);
  CHECK_THROWS_AS(train::clip_payments(frac), net::ConfigError);
}

TEST_CASE("training is deterministic and thread-count independent") {
  AuctionConfig cfg;
  cfg.n_agents = 1;
  cfg.n_items = 2;
  cfg.trunk_widths = {8};
  cfg.ir_mode = IrMode::Fractional;
  TrainConfig tc;
  tc.batch_size = 16;
  tc.epochs = 2;
  tc.misreport_steps_train = 5;
  tc.seed = 99;
  Dataset data = train::generate_dataset(1, 2, 64, 1);

  train::TrainOptions serial;
  serial.policy = ExecPolicy::serial();
  train::TrainOptions parallel;
  parallel.policy.threads = 2;

  train::TrainResult a = train::train(cfg, tc, data, serial);
  train::TrainResult b = train::train(cfg, tc, data, serial);
  train::TrainResult c = train::train(cfg, tc, data, parallel);
  CHECK((net::pack_params(a.net) - net::pack_params(b.net)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((net::pack_params(a.net) - net::pack_params(c.net)).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(a.log.size() == b.log.size());
  for (size_t e = 0; e < a.log.size(); ++e) {
    CHECK(a.log[e].loss == b.log[e].loss);
    CHECK(a.log[e].loss == c.log[e].loss);
    CHECK(a.log[e].revenue == c.log[e].revenue);
  }
}

TEST_CASE("a huge lambda forces the no-trade mechanism") {
  AuctionConfig cfg;
  cfg.n_agents = 1;
  cfg.n_items = 2;
  cfg.trunk_widths = {8};
  cfg.ir_mode = IrMode::Fractional;
  TrainConfig tc;
  tc.batch_size = 32;
  tc.epochs = 60;
  tc.lr = 3e-3;
  tc.misreport_steps_train = 10;
  tc.lambda_init = 5000.0;  // regret dominates: revenue collapses toward zero
  tc.rho_rgt_init = 1.0;
  tc.rho_rgt_inc = 0.0;
  tc.seed = 5;
  Dataset data = train::generate_dataset(1, 2, 256, 17);
  train::TrainResult r = train::train(cfg, tc, data, {});
  CHECK(r.log.back().mean_regret <= 0.005);
  CHECK(r.log.back().revenue <= 0.1);
}

TEST_CASE("multiplier state evolves during a short run and logs are finite") {
  AuctionConfig cfg;
  cfg.n_agents = 2;
  cfg.n_items = 2;
  cfg.trunk_widths = {8};
  cfg.ir_mode = IrMode::PenaltyFree;
  TrainConfig tc;
  tc.batch_size = 16;
  tc.epochs = 3;
  tc.misreport_steps_train = 5;
  tc.lambda_update_period = 2;
  tc.mu_update_period = 2;
  tc.seed = 31;
  Dataset data = train::generate_dataset(2, 2, 64, 23);
  train::TrainResult r = train::train(cfg, tc, data, {});
  CHECK(r.multipliers.lambda.minCoeff() >= tc.lambda_init);
  CHECK(r.multipliers.rho_rgt > tc.rho_rgt_init);
  for (const auto& log : r.log) {
    CHECK(std::isfinite(log.loss));
    CHECK(std::isfinite(log.revenue));
  }
}
