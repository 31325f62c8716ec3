#pragma once

#include <string>
#include <vector>

#include "auctioncert/io.hpp"
#include "auctioncert/net.hpp"
#include "auctioncert/parallel.hpp"
#include "auctioncert/train.hpp"

namespace auctioncert::harness {

// One table row: auction setting, architecture variant, training knobs and
// the evaluation/certification budgets. Checked-in spec files under
// experiments/ hold one of these per row.
struct ExperimentSpec {
  std::string name;
  int n_agents = 1;
  int n_items = 2;
  net::IrMode ir_mode = net::IrMode::Fractional;
  bool relu_reg = false;
  bool clip = true;  // PenaltyFree export: clamp payments into the IR range
  std::vector<int> trunk_widths = {64, 64};
  train::TrainConfig tc;
  int train_count = 20000;
  int test_count = 1000;
  int evaluate_points = 1000;
  int certify_points = 100;
  double tolerance = 1e-4;
  long node_limit = 200000;

  static ExperimentSpec from_file(const std::string& path);
};

// Paper-scale reference numbers quoted in summaries (never used as pass/fail
// thresholds; desk-scale runs cannot reproduce them).
struct ReferenceRow {
  double solve_mean, revenue, emp_regret, cert_regret, ratio;
  bool known = false;
};
ReferenceRow reference_row(int n_agents, int n_items, net::IrMode ir_mode, bool relu_reg);

struct SuiteResult {
  net::AuctionNet net;
  io::ReportSummary summary;
  std::vector<io::EvalCsvRow> eval_rows;
  std::vector<io::CertCsvRow> cert_rows;
  std::string model_path, log_csv, eval_csv, cert_csv, points_csv, summary_csv;
  double train_seconds = 0.0;
  double certify_seconds = 0.0;
};

// Trains (teacher+distill+clip for PenaltyFree rows), evaluates with the
// long PGD attack, certifies the point set and writes the summary row plus
// per-point files. `deterministic` zeroes wall-clock columns so repeated runs
// are byte-identical.
SuiteResult run_suite(const ExperimentSpec& spec, const std::string& outdir,
                      const ExecPolicy& policy = {}, bool deterministic = false);

}  // namespace auctioncert::harness
