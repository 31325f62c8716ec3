#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "auctioncert/certify.hpp"
#include "auctioncert/net.hpp"
#include "auctioncert/rng.hpp"
#include "auctioncert/train.hpp"
#include "oracles.hpp"

using namespace auctioncert;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using net::AuctionConfig;
using net::AuctionNet;
using net::IrMode;

namespace {

AuctionNet seeded_net(int n, int k, std::vector<int> widths, IrMode mode, std::uint64_t seed) {
  AuctionConfig cfg;
  cfg.n_agents = n;
  cfg.n_items = k;
  cfg.trunk_widths = std::move(widths);
  cfg.ir_mode = mode;
  AuctionNet model = net::make_auction_net(cfg, seed);
  // Nudge biases off zero so bounds do not sit exactly on kinks.
  Rng rng(seed ^ 0xB1A5);
  for (auto& l : model.trunk)
    for (int r = 0; r < l.biases.size(); ++r) l.biases[r] = rng.uniform(-0.2, 0.2);
  return model;
}

MatrixXd random_profile(Rng& rng, int n, int k) {
  MatrixXd p(n, k);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) p(i, j) = rng.uniform01();
  return p;
}

VectorXd box_lo(const AuctionNet& m, const MatrixXd& profile, int agent) {
  VectorXd lo(m.config.input_dim());
  for (int i = 0; i < m.config.n_agents; ++i)
    for (int j = 0; j < m.config.n_items; ++j)
      lo[i * m.config.n_items + j] = (i == agent) ? 0.0 : profile(i, j);
  return lo;
}

VectorXd box_hi(const AuctionNet& m, const MatrixXd& profile, int agent) {
  VectorXd hi(m.config.input_dim());
  for (int i = 0; i < m.config.n_agents; ++i)
    for (int j = 0; j < m.config.n_items; ++j)
      hi[i * m.config.n_items + j] = (i == agent) ? 1.0 : profile(i, j);
  return hi;
}

}  // namespace

TEST_CASE("planet equals interval bounds for a single affine layer") {
  AuctionNet m = seeded_net(1, 2, {5}, IrMode::PenaltyFree, 71);
  VectorXd lo = VectorXd::Zero(2), hi = VectorXd::Ones(2);
  net::NeuronBounds ibp = train::ibp_bounds(m, lo, hi);
  net::NeuronBounds planet = certify::planet_bounds(m, lo, hi);
  // First layer pre-activations are affine over the box: intervals are exact
  // already and the LP pass must not change them.
  CHECK((planet.trunk_lo[0] - ibp.trunk_lo[0]).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((planet.trunk_hi[0] - ibp.trunk_hi[0]).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("stable ReLUs pass through the relaxation unchanged") {
  AuctionNet m = seeded_net(1, 2, {4, 4}, IrMode::PenaltyFree, 72);
  // Make every first-layer neuron stably active.
  for (int r = 0; r < 4; ++r) m.trunk[0].biases[r] = 3.0;
  VectorXd lo = VectorXd::Zero(2), hi = VectorXd::Ones(2);
  net::NeuronBounds ibp = train::ibp_bounds(m, lo, hi);
  REQUIRE(ibp.trunk_lo[0].minCoeff() > 0.0);
  net::NeuronBounds planet = certify::planet_bounds(m, lo, hi);
  // With the whole first layer stably active the network up to layer two is
  // the composed affine map W2 (W1 x + b1) + b2 over the input box; the
  // relaxation of a stable ReLU is an equality, so planet must recover the
  // exact interval of that map (plain IBP does not: it drops the correlation
  // between first-layer neurons).
  Eigen::MatrixXd w = m.trunk[1].weights * m.trunk[0].weights;
  VectorXd b = m.trunk[1].weights * m.trunk[0].biases + m.trunk[1].biases;
  VectorXd mid = w * VectorXd::Constant(2, 0.5) + b;
  VectorXd rad = w.cwiseAbs() * VectorXd::Constant(2, 0.5);
  CHECK((planet.trunk_lo[1] - (mid - rad)).cwiseAbs().maxCoeff() <= 1e-8);
  CHECK((planet.trunk_hi[1] - (mid + rad)).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("planet is contained in interval bounds and remains sound") {
  Rng rng(314);
  for (std::uint64_t seed : {101, 102}) {
    AuctionNet m = seeded_net(2, 2, {10, 10}, IrMode::Fractional, seed);
    VectorXd lo = VectorXd::Zero(4), hi = VectorXd::Ones(4);
    net::NeuronBounds ibp = train::ibp_bounds(m, lo, hi);
    net::NeuronBounds planet = certify::planet_bounds(m, lo, hi);
    CHECK(planet.lp_fallbacks == 0);
    double shrink = 0.0;
    for (size_t l = 0; l < planet.trunk_lo.size(); ++l)
      for (int i = 0; i < planet.trunk_lo[l].size(); ++i) {
        CHECK(planet.trunk_lo[l][i] >= ibp.trunk_lo[l][i] - 1e-9);
        CHECK(planet.trunk_hi[l][i] <= ibp.trunk_hi[l][i] + 1e-9);
        shrink += (ibp.trunk_hi[l][i] - ibp.trunk_lo[l][i]) -
                  (planet.trunk_hi[l][i] - planet.trunk_lo[l][i]);
      }
    CHECK(shrink > 0.0);  // the LP pass actually tightens something

    const double eps = 1e-7;
    for (int trial = 0; trial < 10000; ++trial) {
      MatrixXd bids = random_profile(rng, 2, 2);
      net::ForwardTrace tr;
      net::forward(m, bids, &tr);
      for (size_t l = 0; l < tr.trunk_pre.size(); ++l) {
        CHECK((tr.trunk_pre[l] - planet.trunk_lo[l]).minCoeff() >= -eps);
        CHECK((planet.trunk_hi[l] - tr.trunk_pre[l]).minCoeff() >= -eps);
      }
      CHECK((tr.alloc_scores - planet.alloc_lo).minCoeff() >= -eps);
      CHECK((planet.alloc_hi - tr.alloc_scores).minCoeff() >= -eps);
    }
  }
}

TEST_CASE("zero network certifies zero regret") {
  AuctionNet m = seeded_net(1, 2, {4}, IrMode::Fractional, 5);
  for (auto& l : m.trunk) {
    l.weights.setZero();
    l.biases.setZero();
  }
  m.alloc_head.weights.setZero();
  m.alloc_head.biases.setZero();
  m.pay_head.weights.setZero();
  m.pay_head.biases.setZero();
  // Constant allocation and payment fraction: the only bid influence is the
  // payment product, and lowering the bid only lowers the payment, so maximal
  // utility is at bid zero. For PenaltyFree-zero nets regret is exactly zero.
  AuctionNet pf = seeded_net(1, 2, {4}, IrMode::PenaltyFree, 5);
  for (auto& l : pf.trunk) {
    l.weights.setZero();
    l.biases.setZero();
  }
  pf.alloc_head.weights.setZero();
  pf.alloc_head.biases.setZero();
  pf.pay_head.weights.setZero();
  pf.pay_head.biases.setZero();
  MatrixXd profile(1, 2);
  profile << 0.6, 0.4;
  certify::Certificate cert = certify::certify_regret(pf, profile, 0);
  CHECK(cert.complete);
  CHECK(cert.certified_regret <= 1e-9);
  CHECK(cert.consistency_residual <= 1e-9);
}

TEST_CASE("closed-form sparsemax KKT point satisfies the encoded constraints") {
  Rng rng(88);
  AuctionNet m = seeded_net(2, 2, {6}, IrMode::Fractional, 42);
  MatrixXd profile = random_profile(rng, 2, 2);
  VectorXd lo = box_lo(m, profile, 0), hi = box_hi(m, profile, 0);
  net::NeuronBounds bounds = certify::planet_bounds(m, lo, hi);
  certify::MipModel model = certify::encode(m, profile, 0, bounds);

  // Any bid in the box: the forward-derived assignment (with closed-form
  // multipliers, e.g. for sparsemax([1.5, 0.3])-like columns) must satisfy
  // every row, bound, complementarity pair and bilinear triple.
  for (int trial = 0; trial < 25; ++trial) {
    VectorXd bid(2);
    bid << rng.uniform01(), rng.uniform01();
    double residual = certify::consistency_residual(model, m, profile, 0, bid);
    CHECK(residual <= 1e-8);
  }
}

TEST_CASE("branch and bound matches the activation-pattern enumeration oracle") {
  Rng rng(2718);
  for (std::uint64_t seed : {11, 12, 13}) {
    AuctionNet m = seeded_net(1, 2, {6}, IrMode::PenaltyFree, seed);
    MatrixXd profile = random_profile(rng, 1, 2);
    double oracle = testing::enumerate_exact_max(m, profile);

    certify::CertifyOptions opts;
    opts.tolerance = 1e-7;
    certify::Certificate cert = certify::certify_regret(m, profile, 0, opts);
    REQUIRE(cert.complete);
    CHECK(std::abs(cert.certified_max_utility - oracle) <= 1e-6);
  }
}

TEST_CASE("certified bound dominates random bids and the PGD attack") {
  Rng rng(161803);
  std::vector<AuctionNet> nets;
  nets.push_back(seeded_net(1, 2, {6}, IrMode::Fractional, 21));
  nets.push_back(seeded_net(2, 2, {6}, IrMode::PenaltyFree, 22));
  for (const auto& m : nets) {
    MatrixXd profile = random_profile(rng, m.config.n_agents, m.config.n_items);
    certify::CertifyOptions opts;
    opts.tolerance = 1e-4;
    certify::Certificate cert = certify::certify_regret(m, profile, 0, opts);
    REQUIRE(cert.complete);
    CHECK(cert.consistency_residual <= 1e-6);

    MatrixXd bids = profile;
    for (int trial = 0; trial < 10000; ++trial) {
      for (int j = 0; j < m.config.n_items; ++j) bids(0, j) = rng.uniform01();
      double u = net::utility(net::forward(m, bids), profile, 0);
      CHECK(u <= cert.certified_max_utility + opts.tolerance + 1e-9);
    }
    double pgd_regret =
        train::regret_hat(m, profile, 0, 1000, 0.02);
    CHECK(cert.certified_regret >= pgd_regret - 1e-6);
  }
}

TEST_CASE("stable-neuron elision does not change the optimum") {
  Rng rng(55);
  AuctionNet m = seeded_net(1, 2, {6}, IrMode::PenaltyFree, 31);
  MatrixXd profile = random_profile(rng, 1, 2);
  VectorXd lo = box_lo(m, profile, 0), hi = box_hi(m, profile, 0);
  net::NeuronBounds bounds = certify::planet_bounds(m, lo, hi);

  certify::MipModel with = certify::encode(m, profile, 0, bounds, /*elide_stable=*/true);
  certify::MipModel without = certify::encode(m, profile, 0, bounds, /*elide_stable=*/false);
  CHECK(without.binaries.size() >= with.binaries.size());

  auto oracle = [&](const VectorXd& bid) {
    MatrixXd bids = profile;
    for (int j = 0; j < 2; ++j) bids(0, j) = std::clamp(bid[j], 0.0, 1.0);
    return std::make_pair(net::utility(net::forward(m, bids), profile, 0), bid);
  };
  certify::BnbResult a = certify::branch_and_bound(with, 1e-7, oracle);
  certify::BnbResult b = certify::branch_and_bound(without, 1e-7, oracle);
  CHECK(std::abs(a.upper_bound - b.upper_bound) <= 1e-6);
}

TEST_CASE("tighter bounds never raise the root relaxation value") {
  Rng rng(99);
  lp::SimplexSolver solver;
  for (std::uint64_t seed : {61, 62, 63}) {
    AuctionNet m = seeded_net(1, 2, {8}, IrMode::PenaltyFree, seed);
    MatrixXd profile = random_profile(rng, 1, 2);
    VectorXd lo = box_lo(m, profile, 0), hi = box_hi(m, profile, 0);
    net::NeuronBounds loose = train::ibp_bounds(m, lo, hi);
    net::NeuronBounds tight = certify::planet_bounds(m, lo, hi);
    double root_loose =
        solver.solve(certify::root_relaxation(certify::encode(m, profile, 0, loose))).objective;
    double root_tight =
        solver.solve(certify::root_relaxation(certify::encode(m, profile, 0, tight))).objective;
    CHECK(root_tight <= root_loose + 1e-8);
  }
}

TEST_CASE("clipped payments are encoded and certified") {
  Rng rng(747);
  AuctionNet raw = seeded_net(1, 2, {6}, IrMode::PenaltyFree, 77);
  AuctionNet clipped = train::clip_payments(raw);
  MatrixXd profile = random_profile(rng, 1, 2);
  certify::CertifyOptions opts;
  opts.tolerance = 1e-4;
  certify::Certificate cert = certify::certify_regret(clipped, profile, 0, opts);
  REQUIRE(cert.complete);
  CHECK(cert.consistency_residual <= 1e-6);
  MatrixXd bids = profile;
  for (int trial = 0; trial < 5000; ++trial) {
    for (int j = 0; j < 2; ++j) bids(0, j) = rng.uniform01();
    double u = net::utility(net::forward(clipped, bids), profile, 0);
    CHECK(u <= cert.certified_max_utility + opts.tolerance + 1e-9);
  }
}

TEST_CASE("teacher networks are refused by the encoder") {
  AuctionConfig cfg;
  cfg.n_agents = 1;
  cfg.n_items = 2;
  cfg.trunk_widths = {4};
  cfg.ir_mode = IrMode::Fractional;
  cfg.smooth_heads = true;
  AuctionNet teacher = net::make_auction_net(cfg, 1);
  MatrixXd profile(1, 2);
  profile << 0.5, 0.5;
  VectorXd lo = box_lo(teacher, profile, 0), hi = box_hi(teacher, profile, 0);
  net::NeuronBounds bounds = train::ibp_bounds(teacher, lo, hi);
  CHECK_THROWS_AS(certify::encode(teacher, profile, 0, bounds), net::ConfigError);
}

TEST_CASE("certificates for the second agent use that agent's utility") {
  Rng rng(31415);
  AuctionNet m = seeded_net(2, 2, {6}, IrMode::Fractional, 3);
  MatrixXd profile = random_profile(rng, 2, 2);
  certify::CertifyOptions opts;
  opts.tolerance = 1e-3;
  certify::Certificate c0 = certify::certify_regret(m, profile, 0, opts);
  certify::Certificate c1 = certify::certify_regret(m, profile, 1, opts);
  CHECK(c0.complete);
  CHECK(c1.complete);
  net::Outcome out = net::forward(m, profile);
  CHECK(c0.truthful_utility == doctest::Approx(out.utility[0]));
  CHECK(c1.truthful_utility == doctest::Approx(out.utility[1]));
}
