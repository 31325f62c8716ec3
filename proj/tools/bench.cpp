// Times the OpenMP batch kernels against their serial reference twins and
// checks that both produce identical bits.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "auctioncert/certify.hpp"
#include "auctioncert/net.hpp"
#include "auctioncert/parallel.hpp"
#include "auctioncert/train.hpp"

namespace ac = auctioncert;

namespace {

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

template <typename Fn>
double timed(Fn&& fn) {
  double t0 = now_seconds();
  fn();
  return now_seconds() - t0;
}

void report(const std::string& name, double serial_s, double parallel_s, double max_delta) {
  std::printf("%-28s serial %8.3fs  parallel %8.3fs  speedup %5.2fx  max|delta| %.1e\n",
              name.c_str(), serial_s, parallel_s, serial_s / std::max(parallel_s, 1e-12),
              max_delta);
}

}  // namespace

int main(int argc, char** argv) {
  bool quick = argc > 1 && std::string(argv[1]) == "--quick";
  const int batch = quick ? 64 : 512;
  const int mis_steps = 25;

  ac::net::AuctionConfig config;
  config.n_agents = 2;
  config.n_items = 2;
  config.trunk_widths = {64, 64};
  config.ir_mode = ac::net::IrMode::Fractional;
  ac::net::AuctionNet net = ac::net::make_auction_net(config, 42);
  ac::train::Dataset data = ac::train::generate_dataset(2, 2, batch, 7);

  ac::ExecPolicy serial = ac::ExecPolicy::serial();
  ac::ExecPolicy parallel;  // all hardware threads

  std::printf("kernels over %d profiles, %d thread(s) available\n", batch,
              parallel.effective_threads());

  {  // batch misreport search (PGD), the training hot loop
    std::vector<double> us(batch), up(batch);
    auto run = [&](std::vector<double>& out, const ac::ExecPolicy& policy) {
      ac::for_each_index(
          batch,
          [&](std::int64_t i) {
            out[i] =
                ac::train::misreport_search(net, data.profiles[i], 0, mis_steps, 0.02).utility;
          },
          policy);
    };
    double ts = timed([&] { run(us, serial); });
    double tp = timed([&] { run(up, parallel); });
    double delta = 0;
    for (int i = 0; i < batch; ++i) delta = std::max(delta, std::abs(us[i] - up[i]));
    report("misreport_search x" + std::to_string(batch), ts, tp, delta);
  }

  {  // long-attack evaluation
    auto rs = ac::train::evaluate(net, data, quick ? 100 : 250, 0.02, serial);
    double ts = timed([&] { rs = ac::train::evaluate(net, data, quick ? 100 : 250, 0.02, serial); });
    auto rp = rs;
    double tp = timed([&] { rp = ac::train::evaluate(net, data, quick ? 100 : 250, 0.02, parallel); });
    double delta = 0;
    for (size_t i = 0; i < rs.size(); ++i)
      delta = std::max(delta, (rs[i].regret - rp[i].regret).cwiseAbs().maxCoeff());
    report("evaluate (long PGD)", ts, tp, delta);
  }

  {  // Planet bound tightening, parallel across neurons
    ac::net::VectorXd lo = ac::net::VectorXd::Zero(config.input_dim());
    ac::net::VectorXd hi = ac::net::VectorXd::Ones(config.input_dim());
    ac::certify::CertifyOptions os;
    os.policy = serial;
    ac::certify::CertifyOptions op;
    op.policy = parallel;
    ac::net::NeuronBounds bs, bp;
    double ts = timed([&] { bs = ac::certify::planet_bounds(net, lo, hi, os); });
    double tp = timed([&] { bp = ac::certify::planet_bounds(net, lo, hi, op); });
    double delta = 0;
    for (size_t l = 0; l < bs.trunk_lo.size(); ++l) {
      delta = std::max(delta, (bs.trunk_lo[l] - bp.trunk_lo[l]).cwiseAbs().maxCoeff());
      delta = std::max(delta, (bs.trunk_hi[l] - bp.trunk_hi[l]).cwiseAbs().maxCoeff());
    }
    report("planet_bounds 2x64", ts, tp, delta);
  }

  {  // per-point certification, parallel across points
    const int points = quick ? 2 : 6;
    ac::certify::CertifyOptions copts;
    copts.policy = serial;
    copts.node_limit = 20000;
    std::vector<double> cs(points), cp(points);
    auto run = [&](std::vector<double>& out, const ac::ExecPolicy& policy) {
      ac::for_each_index(
          points,
          [&](std::int64_t i) {
            out[i] =
                ac::certify::certify_regret(net, data.profiles[i], 0, copts).certified_regret;
          },
          policy);
    };
    double ts = timed([&] { run(cs, serial); });
    double tp = timed([&] { run(cp, parallel); });
    double delta = 0;
    for (int i = 0; i < points; ++i) delta = std::max(delta, std::abs(cs[i] - cp[i]));
    report("certify_regret x" + std::to_string(points), ts, tp, delta);
  }

  return 0;
}
