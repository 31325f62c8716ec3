#include "auctioncert/harness.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <stdexcept>

#include "auctioncert/certify.hpp"

namespace auctioncert::harness {

using net::AuctionConfig;
using net::AuctionNet;
using net::IrMode;

ExperimentSpec ExperimentSpec::from_file(const std::string& path) {
  io::KeyValues kv = io::read_key_values(path);
  ExperimentSpec spec;
  if (const std::string* v = io::find_key(kv, "name")) spec.name = *v;
  if (spec.name.empty()) spec.name = std::filesystem::path(path).stem().string();
  auto geti = [&](const char* key, int& out) {
    if (const std::string* v = io::find_key(kv, key)) out = std::stoi(*v);
  };
  auto getb = [&](const char* key, bool& out) {
    if (const std::string* v = io::find_key(kv, key)) out = std::stoi(*v) != 0;
  };
  geti("n_agents", spec.n_agents);
  geti("n_items", spec.n_items);
  if (const std::string* v = io::find_key(kv, "ir_mode")) {
    if (*v == "fractional")
      spec.ir_mode = IrMode::Fractional;
    else if (*v == "penalty_free")
      spec.ir_mode = IrMode::PenaltyFree;
    else
      throw io::ParseError(path + ": unknown ir_mode '" + *v + "'");
  }
  getb("relu_reg", spec.relu_reg);
  getb("clip", spec.clip);
  if (const std::string* v = io::find_key(kv, "trunk_widths")) {
    spec.trunk_widths.clear();
    std::istringstream is(*v);
    std::string tok;
    while (std::getline(is, tok, ',')) spec.trunk_widths.push_back(std::stoi(tok));
  }
  geti("train_count", spec.train_count);
  geti("test_count", spec.test_count);
  geti("evaluate_points", spec.evaluate_points);
  geti("certify_points", spec.certify_points);
  if (const std::string* v = io::find_key(kv, "tolerance")) spec.tolerance = std::stod(*v);
  if (const std::string* v = io::find_key(kv, "node_limit")) spec.node_limit = std::stol(*v);
  io::apply_train_keys(kv, spec.tc);
  return spec;
}

ReferenceRow reference_row(int n_agents, int n_items, net::IrMode ir_mode, bool relu_reg) {
  const bool ir = ir_mode == IrMode::Fractional;
  if (n_agents == 1 && n_items == 2) {
    if (ir && !relu_reg) return {25.6, 0.593, 0.014, 0.019, 0.731, true};
    if (ir && relu_reg) return {7.2, 0.569, 0.003, 0.004, 0.700, true};
    if (!ir && relu_reg) return {0.034, 0.568, 0.009, 0.011, 0.839, true};
  }
  if (n_agents == 2 && n_items == 2) {
    if (ir && !relu_reg) return {13.9, 0.876, 0.009, 0.014, 0.637, true};
    if (ir && relu_reg) return {5.8, 0.874, 0.008, 0.013, 0.626, true};
    if (!ir && relu_reg) return {5.480, 0.882, 0.006, 0.011, 0.533, true};
  }
  return {0, 0, 0, 0, 0, false};
}

SuiteResult run_suite(const ExperimentSpec& spec, const std::string& outdir,
                      const ExecPolicy& policy, bool deterministic) {
  namespace fs = std::filesystem;
  fs::create_directories(outdir);
  auto path_for = [&](const std::string& suffix) {
    return (fs::path(outdir) / (spec.name + suffix)).string();
  };
  if (spec.certify_points > spec.evaluate_points)
    throw std::runtime_error("run_suite: certify_points must not exceed evaluate_points");

  SuiteResult result;
  train::Dataset train_data =
      train::generate_dataset(spec.n_agents, spec.n_items, spec.train_count, spec.tc.seed);
  train::Dataset test_data = train::generate_dataset(
      spec.n_agents, spec.n_items, spec.test_count, Rng::derive(spec.tc.seed, 0x7E57));

  AuctionConfig config;
  config.n_agents = spec.n_agents;
  config.n_items = spec.n_items;
  config.trunk_widths = spec.trunk_widths;
  config.ir_mode = spec.ir_mode;

  train::TrainConfig tc = spec.tc;
  tc.stability_weight = spec.relu_reg ? spec.tc.stability_weight : 0.0;

  train::TrainOptions topts;
  topts.policy = policy;

  auto t0 = std::chrono::steady_clock::now();
  train::TrainResult trained;
  if (spec.ir_mode == IrMode::Fractional) {
    trained = train::train(config, tc, train_data, topts);
  } else {
    // Teacher with the original smooth heads, then a PenaltyFree student
    // distilled from it, payments clipped at export.
    AuctionConfig teacher_cfg = config;
    teacher_cfg.ir_mode = IrMode::Fractional;
    teacher_cfg.smooth_heads = true;
    train::TrainConfig teacher_tc = tc;
    teacher_tc.stability_weight = 0.0;  // the teacher is never certified
    train::TrainResult teacher = train::train(teacher_cfg, teacher_tc, train_data, topts);
    io::save_model(teacher.net, path_for("_teacher.model"));

    train::TrainOptions student_opts = topts;
    student_opts.teacher = &teacher.net;
    trained = train::train(config, tc, train_data, student_opts);
    if (spec.clip) trained.net = train::clip_payments(trained.net);
  }
  result.train_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  result.model_path = path_for(".model");
  io::save_model(trained.net, result.model_path);
  std::string manifest_name = spec.name + ".manifest.json";
  result.log_csv = path_for("_train.csv");
  io::write_training_log_csv(result.log_csv, trained.log, manifest_name);

  // Long-attack evaluation.
  train::Dataset eval_slice;
  eval_slice.seed = test_data.seed;
  eval_slice.profiles.assign(test_data.profiles.begin(),
                             test_data.profiles.begin() + spec.evaluate_points);
  std::vector<train::EvalRow> eval = train::evaluate(trained.net, eval_slice,
                                                     spec.tc.misreport_steps_eval,
                                                     spec.tc.misreport_lr, policy);
  for (const auto& row : eval)
    for (int a = 0; a < spec.n_agents; ++a)
      result.eval_rows.push_back(
          {row.point, a, row.revenue, row.regret[a], row.irv[a]});
  result.eval_csv = path_for("_eval.csv");
  io::write_eval_csv(result.eval_csv, result.eval_rows, manifest_name);

  // Certification over the point set, every agent separately.
  certify::CertifyOptions copts;
  copts.tolerance = spec.tolerance;
  copts.node_limit = spec.node_limit;
  copts.policy = ExecPolicy::serial();  // inner solves stay serial; points run in parallel
  const int tasks = spec.certify_points * spec.n_agents;
  std::vector<certify::Certificate> certs(tasks);
  t0 = std::chrono::steady_clock::now();
  for_each_index(
      tasks,
      [&](std::int64_t t) {
        int point = static_cast<int>(t) / spec.n_agents;
        int agent = static_cast<int>(t) % spec.n_agents;
        certs[t] = certify::certify_regret(trained.net, test_data.profiles[point], agent, copts);
        certs[t].profile_id = point;
      },
      policy);
  result.certify_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::ostringstream points;
  points << "# manifest=" << manifest_name << "\npoint,agent";
  for (int j = 0; j < spec.n_items; ++j) points << ",bid_true_" << j;
  for (int j = 0; j < spec.n_items; ++j) points << ",bid_misreport_" << j;
  points << ",certified_regret\n";

  for (int t = 0; t < tasks; ++t) {
    const auto& c = certs[t];
    io::CertCsvRow row;
    row.profile = c.profile_id;
    row.agent = c.agent;
    row.truthful_utility = c.truthful_utility;
    row.certified_regret = c.certified_regret;
    for (const auto& er : result.eval_rows)
      if (er.point == c.profile_id && er.agent == c.agent) {
        row.empirical_regret = er.regret;
        break;
      }
    row.gap = c.gap;
    row.nodes = c.nodes_explored;
    row.seconds = deterministic ? 0.0 : c.solve_seconds;
    row.residual = c.consistency_residual;
    row.unstable = c.unstable_relus;
    row.complete = c.complete ? 1 : 0;
    result.cert_rows.push_back(row);

    points << c.profile_id << "," << c.agent;
    for (int j = 0; j < spec.n_items; ++j)
      points << "," << io::format_double(test_data.profiles[c.profile_id](c.agent, j));
    for (int j = 0; j < spec.n_items; ++j)
      points << "," << io::format_double(c.incumbent_misreport[j]);
    points << "," << io::format_double(c.certified_regret) << "\n";
  }
  result.cert_csv = path_for("_cert.csv");
  io::write_cert_csv(result.cert_csv, result.cert_rows, manifest_name);
  result.points_csv = path_for("_points.csv");
  io::write_file(result.points_csv, points.str());

  result.summary = io::aggregate_report(result.eval_rows, result.cert_rows);
  ReferenceRow ref = reference_row(spec.n_agents, spec.n_items, spec.ir_mode, spec.relu_reg);
  std::ostringstream summary;
  summary << "# manifest=" << manifest_name << "\n";
  summary << "# desk-scale run: train_count=" << spec.train_count << " epochs=" << spec.tc.epochs
          << " evaluate_points=" << spec.evaluate_points
          << " certify_points=" << spec.certify_points << "\n";
  if (ref.known)
    summary << "# paper-scale reference (not a pass/fail target): solve=" << ref.solve_mean
            << " revenue=" << ref.revenue << " emp_regret=" << ref.emp_regret
            << " cert_regret=" << ref.cert_regret << " ratio=" << ref.ratio << "\n";
  summary << "name,n_agents,n_items,ir,relu_reg,revenue_mean,revenue_std,emp_regret_mean,"
             "emp_regret_std,cert_regret_mean,cert_regret_std,ratio,solve_mean,solve_std,"
             "irv_rate,irv_mean_violation,max_residual\n";
  const auto& s = result.summary;
  summary << spec.name << "," << spec.n_agents << "," << spec.n_items << ","
          << (spec.ir_mode == IrMode::Fractional ? "yes" : "no") << ","
          << (spec.relu_reg ? "yes" : "no") << "," << io::format_double(s.revenue_mean) << ","
          << io::format_double(s.revenue_std) << "," << io::format_double(s.emp_regret_mean) << ","
          << io::format_double(s.emp_regret_std) << "," << io::format_double(s.cert_regret_mean)
          << "," << io::format_double(s.cert_regret_std) << "," << io::format_double(s.ratio)
          << "," << io::format_double(s.solve_mean) << "," << io::format_double(s.solve_std) << ","
          << io::format_double(s.irv_rate) << "," << io::format_double(s.irv_mean_violation)
          << "," << io::format_double(s.max_residual) << "\n";
  result.summary_csv = path_for("_summary.csv");
  io::write_file(result.summary_csv, summary.str());

  io::RunManifest manifest;
  manifest.command = "run-suite " + spec.name;
  manifest.config.emplace_back("n_agents", std::to_string(spec.n_agents));
  manifest.config.emplace_back("n_items", std::to_string(spec.n_items));
  manifest.config.emplace_back("ir_mode",
                               spec.ir_mode == IrMode::Fractional ? "fractional" : "penalty_free");
  manifest.config.emplace_back("relu_reg", spec.relu_reg ? "1" : "0");
  manifest.config.emplace_back("epochs", std::to_string(spec.tc.epochs));
  manifest.config.emplace_back("train_count", std::to_string(spec.train_count));
  manifest.seed = spec.tc.seed;
  manifest.input_hashes.emplace_back(result.model_path, io::file_hash_hex(result.model_path));
  manifest.outputs = {result.log_csv, result.eval_csv, result.cert_csv, result.points_csv,
                      result.summary_csv};
  io::write_manifest(manifest, (std::filesystem::path(outdir) / manifest_name).string());

  result.net = std::move(trained.net);
  return result;
}

}  // namespace auctioncert::harness
