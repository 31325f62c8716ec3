#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "auctioncert/certify.hpp"
#include "auctioncert/harness.hpp"
#include "auctioncert/io.hpp"
#include "auctioncert/net.hpp"
#include "auctioncert/train.hpp"

namespace ac = auctioncert;
namespace fs = std::filesystem;

namespace {

std::string basename_of(const std::string& path) { return fs::path(path).filename().string(); }

ac::ExecPolicy policy_from(int threads, bool deterministic) {
  ac::ExecPolicy p;
  p.threads = deterministic ? 1 : threads;
  return p;
}

std::vector<int> parse_widths(const std::string& arch) {
  std::vector<int> widths;
  std::istringstream is(arch);
  std::string tok;
  while (std::getline(is, tok, ',')) widths.push_back(std::stoi(tok));
  return widths;
}

int cmd_gen_data(int n, int k, int count, std::uint64_t seed, const std::string& out) {
  ac::train::Dataset data = ac::train::generate_dataset(n, k, count, seed);
  ac::io::save_dataset(data, n, k, out);
  ac::io::RunManifest manifest;
  manifest.command = "gen-data";
  manifest.config = {{"n", std::to_string(n)},
                     {"k", std::to_string(k)},
                     {"count", std::to_string(count)}};
  manifest.seed = seed;
  manifest.outputs = {out};
  ac::io::write_manifest(manifest, out + ".manifest.json");
  std::cout << "wrote " << count << " profiles to " << out << "\n";
  return 0;
}

struct TrainArgs {
  std::string data, out, log, config_file, ir_mode = "fractional", arch;
  std::uint64_t seed = 1;
  bool seed_set = false;
  int epochs = -1;
  double stability_weight = -1.0;
  int threads = 0;
  bool deterministic = false;
};

int cmd_train(const TrainArgs& args) {
  int n = 0, k = 0;
  ac::train::Dataset data = ac::io::load_dataset(args.data, &n, &k);

  ac::train::TrainConfig tc;
  ac::io::KeyValues kv;
  if (!args.config_file.empty()) {
    kv = ac::io::read_key_values(args.config_file);
    ac::io::apply_train_keys(kv, tc);
  }
  if (args.seed_set) tc.seed = args.seed;
  if (args.epochs >= 0) tc.epochs = args.epochs;
  if (args.stability_weight >= 0) tc.stability_weight = args.stability_weight;

  ac::net::AuctionConfig config;
  config.n_agents = n;
  config.n_items = k;
  config.ir_mode = args.ir_mode == "penalty-free" || args.ir_mode == "penalty_free"
                       ? ac::net::IrMode::PenaltyFree
                       : ac::net::IrMode::Fractional;
  if (const std::string* v = ac::io::find_key(kv, "trunk_widths"))
    config.trunk_widths = parse_widths(*v);
  if (!args.arch.empty()) config.trunk_widths = parse_widths(args.arch);

  ac::train::TrainOptions opts;
  opts.policy = policy_from(args.threads, args.deterministic);
  opts.on_epoch = [](const ac::train::EpochLog& log) {
    std::printf("epoch %3d  revenue %.4f  regret %.5f (max %.5f)  irv %.6f  loss %.5f\n",
                log.epoch, log.revenue, log.mean_regret, log.max_regret, log.mean_irv, log.loss);
  };
  ac::train::TrainResult result = ac::train::train(config, tc, data, opts);
  result.net.config_hash = ac::io::content_hash_hex(args.config_file.empty()
                                                        ? std::to_string(tc.seed)
                                                        : ac::io::read_file(args.config_file));
  ac::io::save_model(result.net, args.out);

  std::string manifest_name = basename_of(args.out) + ".manifest.json";
  if (!args.log.empty()) ac::io::write_training_log_csv(args.log, result.log, manifest_name);

  ac::io::RunManifest manifest;
  manifest.command = "train";
  manifest.config = kv;
  manifest.seed = tc.seed;
  manifest.input_hashes = {{args.data, ac::io::file_hash_hex(args.data)}};
  manifest.outputs = {args.out};
  if (!args.log.empty()) manifest.outputs.push_back(args.log);
  ac::io::write_manifest(manifest, args.out + ".manifest.json");
  return 0;
}

struct DistillArgs {
  std::string data, out, log, teacher_in, teacher_out, config_file, arch;
  std::uint64_t seed = 1;
  bool seed_set = false;
  bool clip = true;
  int threads = 0;
  bool deterministic = false;
};

int cmd_distill(const DistillArgs& args) {
  int n = 0, k = 0;
  ac::train::Dataset data = ac::io::load_dataset(args.data, &n, &k);

  ac::train::TrainConfig tc;
  ac::io::KeyValues kv;
  if (!args.config_file.empty()) {
    kv = ac::io::read_key_values(args.config_file);
    ac::io::apply_train_keys(kv, tc);
  }
  if (args.seed_set) tc.seed = args.seed;

  ac::net::AuctionConfig config;
  config.n_agents = n;
  config.n_items = k;
  config.ir_mode = ac::net::IrMode::PenaltyFree;
  if (const std::string* v = ac::io::find_key(kv, "trunk_widths"))
    config.trunk_widths = parse_widths(*v);
  if (!args.arch.empty()) config.trunk_widths = parse_widths(args.arch);

  ac::train::TrainOptions opts;
  opts.policy = policy_from(args.threads, args.deterministic);

  ac::net::AuctionNet teacher;
  if (!args.teacher_in.empty()) {
    teacher = ac::io::load_model(args.teacher_in);
  } else {
    ac::net::AuctionConfig teacher_cfg = config;
    teacher_cfg.ir_mode = ac::net::IrMode::Fractional;
    teacher_cfg.smooth_heads = true;
    std::cout << "training teacher (softmax + sigmoid heads)\n";
    teacher = ac::train::train(teacher_cfg, tc, data, opts).net;
  }
  if (!args.teacher_out.empty()) ac::io::save_model(teacher, args.teacher_out);

  std::cout << "training student (PenaltyFree + distillation)\n";
  ac::train::TrainOptions student_opts = opts;
  student_opts.teacher = &teacher;
  student_opts.on_epoch = [](const ac::train::EpochLog& log) {
    std::printf("epoch %3d  revenue %.4f  regret %.5f  irv %.6f  loss %.5f\n", log.epoch,
                log.revenue, log.mean_regret, log.mean_irv, log.loss);
  };
  ac::train::TrainResult result = ac::train::train(config, tc, data, student_opts);
  if (args.clip) result.net = ac::train::clip_payments(result.net);
  ac::io::save_model(result.net, args.out);

  std::string manifest_name = basename_of(args.out) + ".manifest.json";
  if (!args.log.empty()) ac::io::write_training_log_csv(args.log, result.log, manifest_name);
  ac::io::RunManifest manifest;
  manifest.command = "distill";
  manifest.config = kv;
  manifest.seed = tc.seed;
  manifest.input_hashes = {{args.data, ac::io::file_hash_hex(args.data)}};
  manifest.outputs = {args.out};
  ac::io::write_manifest(manifest, args.out + ".manifest.json");
  return 0;
}

int cmd_evaluate(const std::string& model_path, const std::string& data_path,
                 const std::string& out, int steps, int count, int threads, bool deterministic) {
  ac::net::AuctionNet net = ac::io::load_model(model_path);
  int n = 0, k = 0;
  ac::train::Dataset data = ac::io::load_dataset(data_path, &n, &k);
  if (count > 0 && count < data.size()) data.profiles.resize(count);

  std::vector<ac::train::EvalRow> rows = ac::train::evaluate(
      net, data, steps, 0.02, policy_from(threads, deterministic));
  std::vector<ac::io::EvalCsvRow> csv;
  for (const auto& row : rows)
    for (int a = 0; a < net.config.n_agents; ++a)
      csv.push_back({row.point, a, row.revenue, row.regret[a], row.irv[a]});

  std::string manifest_name = basename_of(out) + ".manifest.json";
  ac::io::write_eval_csv(out, csv, manifest_name);
  ac::io::RunManifest manifest;
  manifest.command = "evaluate";
  manifest.config = {{"steps", std::to_string(steps)}};
  manifest.seed = data.seed;
  manifest.input_hashes = {{model_path, ac::io::file_hash_hex(model_path)},
                           {data_path, ac::io::file_hash_hex(data_path)}};
  manifest.outputs = {out};
  ac::io::write_manifest(manifest, out + ".manifest.json");

  ac::io::ReportSummary s = ac::io::aggregate_report(csv, {});
  std::printf("revenue %.4f (%.4f)  empirical regret %.5f (%.5f)  irv rate %.4f\n",
              s.revenue_mean, s.revenue_std, s.emp_regret_mean, s.emp_regret_std, s.irv_rate);
  return 0;
}

int cmd_certify(const std::string& model_path, const std::string& data_path,
                const std::string& out, int count, int agent, double tolerance, long node_limit,
                int eval_steps, int threads, bool deterministic) {
  ac::net::AuctionNet net = ac::io::load_model(model_path);
  int n = 0, k = 0;
  ac::train::Dataset data = ac::io::load_dataset(data_path, &n, &k);
  count = std::min(count > 0 ? count : data.size(), data.size());

  std::vector<int> agents;
  if (agent >= 0)
    agents = {agent};
  else
    for (int a = 0; a < n; ++a) agents.push_back(a);

  ac::certify::CertifyOptions copts;
  copts.tolerance = tolerance;
  copts.node_limit = node_limit;
  copts.policy = ac::ExecPolicy::serial();

  const int tasks = count * static_cast<int>(agents.size());
  std::vector<ac::io::CertCsvRow> rows(tasks);
  ac::for_each_index(
      tasks,
      [&](std::int64_t t) {
        int point = static_cast<int>(t) / static_cast<int>(agents.size());
        int a = agents[t % agents.size()];
        ac::certify::Certificate cert =
            ac::certify::certify_regret(net, data.profiles[point], a, copts);
        ac::train::MisreportResult mis =
            ac::train::misreport_search(net, data.profiles[point], a, eval_steps, 0.02);
        double u_truth = cert.truthful_utility;
        ac::io::CertCsvRow row;
        row.profile = point;
        row.agent = a;
        row.truthful_utility = u_truth;
        row.certified_regret = cert.certified_regret;
        row.empirical_regret = std::max(0.0, mis.utility - u_truth);
        row.gap = cert.gap;
        row.nodes = cert.nodes_explored;
        row.seconds = deterministic ? 0.0 : cert.solve_seconds;
        row.residual = cert.consistency_residual;
        row.unstable = cert.unstable_relus;
        row.complete = cert.complete ? 1 : 0;
        rows[t] = row;
      },
      policy_from(threads, deterministic));

  std::string manifest_name = basename_of(out) + ".manifest.json";
  ac::io::write_cert_csv(out, rows, manifest_name);
  ac::io::RunManifest manifest;
  manifest.command = "certify";
  manifest.config = {{"count", std::to_string(count)},
                     {"tolerance", ac::io::format_double(tolerance)}};
  manifest.seed = data.seed;
  manifest.input_hashes = {{model_path, ac::io::file_hash_hex(model_path)},
                           {data_path, ac::io::file_hash_hex(data_path)}};
  manifest.outputs = {out};
  ac::io::write_manifest(manifest, out + ".manifest.json");

  ac::io::ReportSummary s = ac::io::aggregate_report({}, rows);
  std::printf("certified regret %.5f (%.5f)  mean solve %.3fs  max residual %.2e\n",
              s.cert_regret_mean, s.cert_regret_std, s.solve_mean, s.max_residual);
  return 0;
}

int cmd_report(const std::string& eval_path, const std::string& cert_path,
               const std::string& label, const std::string& out) {
  std::vector<ac::io::EvalCsvRow> eval_rows;
  std::vector<ac::io::CertCsvRow> cert_rows;
  if (!eval_path.empty()) eval_rows = ac::io::read_eval_csv(eval_path);
  if (!cert_path.empty()) cert_rows = ac::io::read_cert_csv(cert_path);
  ac::io::ReportSummary s = ac::io::aggregate_report(eval_rows, cert_rows);
  std::string row = ac::io::format_report_row(label, s);
  std::cout << row << "\n";
  if (s.irv_rate > 0.0)
    std::printf("irv: rate %.4f, mean violation %.6f\n", s.irv_rate, s.irv_mean_violation);
  if (!out.empty()) ac::io::write_file(out, row + "\n");
  return 0;
}

int cmd_run_suite(const std::string& spec_path, const std::string& outdir, int threads,
                  bool deterministic) {
  ac::harness::ExperimentSpec spec = ac::harness::ExperimentSpec::from_file(spec_path);
  ac::harness::SuiteResult result =
      ac::harness::run_suite(spec, outdir, policy_from(threads, deterministic), deterministic);
  std::cout << ac::io::format_report_row(spec.name, result.summary) << "\n";
  std::printf("train %.1fs, certify %.1fs; outputs in %s\n", result.train_seconds,
              result.certify_seconds, outdir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train sparsemax auction networks and certify per-profile regret bounds"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Sample a seeded valuation dataset");
  int gd_n = 1, gd_k = 2, gd_count = 1000;
  std::uint64_t gd_seed = 1;
  std::string gd_out = "data.txt";
  gen->add_option("--n", gd_n, "agents")->required();
  gen->add_option("--k", gd_k, "items")->required();
  gen->add_option("--count", gd_count, "profiles")->required();
  gen->add_option("--seed", gd_seed, "rng seed");
  gen->add_option("--out", gd_out, "output path")->required();

  // train
  auto* tr = app.add_subcommand("train", "Augmented-Lagrangian training");
  TrainArgs ta;
  tr->add_option("--data", ta.data)->required();
  tr->add_option("--out", ta.out)->required();
  tr->add_option("--log", ta.log);
  tr->add_option("--config", ta.config_file);
  tr->add_option("--ir-mode", ta.ir_mode)->check(CLI::IsMember({"fractional", "penalty-free"}));
  tr->add_option("--arch", ta.arch, "trunk widths, e.g. 64,64");
  auto* tr_seed = tr->add_option("--seed", ta.seed);
  tr->add_option("--epochs", ta.epochs);
  tr->add_option("--stability-weight", ta.stability_weight);
  tr->add_option("--threads", ta.threads);
  tr->add_flag("--deterministic", ta.deterministic);

  // distill
  auto* di = app.add_subcommand("distill", "Teacher-student training for the PenaltyFree head");
  DistillArgs da;
  di->add_option("--data", da.data)->required();
  di->add_option("--out", da.out)->required();
  di->add_option("--log", da.log);
  di->add_option("--config", da.config_file);
  di->add_option("--arch", da.arch);
  di->add_option("--teacher", da.teacher_in, "reuse an existing teacher model");
  di->add_option("--teacher-out", da.teacher_out);
  auto* di_seed = di->add_option("--seed", da.seed);
  di->add_flag("!--no-clip", da.clip, "skip payment clipping at export");
  di->add_option("--threads", da.threads);
  di->add_flag("--deterministic", da.deterministic);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Revenue + empirical regret (long PGD attack)");
  std::string ev_model, ev_data, ev_out = "eval.csv";
  int ev_steps = 1000, ev_count = 0, ev_threads = 0;
  bool ev_det = false;
  ev->add_option("--model", ev_model)->required();
  ev->add_option("--data", ev_data)->required();
  ev->add_option("--out", ev_out);
  ev->add_option("--steps", ev_steps);
  ev->add_option("--count", ev_count, "limit the number of points (0 = all)");
  ev->add_option("--threads", ev_threads);
  ev->add_flag("--deterministic", ev_det);

  // certify
  auto* ce = app.add_subcommand("certify", "Certified regret bounds over a point set");
  std::string ce_model, ce_data, ce_out = "cert.csv";
  int ce_count = 100, ce_agent = -1, ce_steps = 1000, ce_threads = 0;
  double ce_tol = 1e-4;
  long ce_nodes = 200000;
  bool ce_det = false;
  ce->add_option("--model", ce_model)->required();
  ce->add_option("--data", ce_data)->required();
  ce->add_option("--out", ce_out);
  ce->add_option("--count", ce_count);
  ce->add_option("--agent", ce_agent, "certify one agent only (-1 = all)");
  ce->add_option("--tolerance", ce_tol);
  ce->add_option("--node-limit", ce_nodes);
  ce->add_option("--eval-steps", ce_steps, "PGD steps for the empirical column");
  ce->add_option("--threads", ce_threads);
  ce->add_flag("--deterministic", ce_det);

  // report
  auto* re = app.add_subcommand("report", "Aggregate CSVs into a summary row");
  std::string re_eval, re_cert, re_label = "run", re_out;
  re->add_option("--eval", re_eval);
  re->add_option("--cert", re_cert);
  re->add_option("--label", re_label);
  re->add_option("--out", re_out);

  // run-suite
  auto* su = app.add_subcommand("run-suite", "Full experiment row: train, evaluate, certify");
  std::string su_spec, su_outdir = "runs";
  int su_threads = 0;
  bool su_det = false;
  su->add_option("--spec", su_spec)->required();
  su->add_option("--outdir", su_outdir);
  su->add_option("--threads", su_threads);
  su->add_flag("--deterministic", su_det);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen) return cmd_gen_data(gd_n, gd_k, gd_count, gd_seed, gd_out);
    if (*tr) {
      ta.seed_set = tr_seed->count() > 0;
      return cmd_train(ta);
    }
    if (*di) {
      da.seed_set = di_seed->count() > 0;
      return cmd_distill(da);
    }
    if (*ev) return cmd_evaluate(ev_model, ev_data, ev_out, ev_steps, ev_count, ev_threads, ev_det);
    if (*ce)
      return cmd_certify(ce_model, ce_data, ce_out, ce_count, ce_agent, ce_tol, ce_nodes, ce_steps,
                         ce_threads, ce_det);
    if (*re) return cmd_report(re_eval, re_cert, re_label, re_out);
    if (*su) return cmd_run_suite(su_spec, su_outdir, su_threads, su_det);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
