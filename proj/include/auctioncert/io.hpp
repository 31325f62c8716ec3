#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "auctioncert/certify.hpp"
#include "auctioncert/net.hpp"
#include "auctioncert/train.hpp"

namespace auctioncert::io {

// Parse failures carry the line and byte offset of the offending token.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- model files (versioned structured text, bit-exact round trip) ----

void save_model(const net::AuctionNet& net, const std::string& path);
net::AuctionNet load_model(const std::string& path);

// ---- datasets ----

void save_dataset(const train::Dataset& data, int n_agents, int n_items, const std::string& path);
train::Dataset load_dataset(const std::string& path, int* n_agents = nullptr,
                            int* n_items = nullptr);

// ---- key-value config files ("key value" per line, '#' comments) ----

using KeyValues = std::vector<std::pair<std::string, std::string>>;

KeyValues read_key_values(const std::string& path);
const std::string* find_key(const KeyValues& kv, const std::string& key);
// Applies recognized TrainConfig keys; unknown keys are left to the caller.
void apply_train_keys(const KeyValues& kv, train::TrainConfig& config);

// ---- run manifests (JSON, no timestamps: reruns must be bit-identical) ----

struct RunManifest {
  std::string command;
  KeyValues config;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> input_hashes;  // path -> hash
  std::vector<std::string> outputs;
};

std::string content_hash_hex(const std::string& bytes);
std::string file_hash_hex(const std::string& path);
void write_manifest(const RunManifest& manifest, const std::string& path);

// ---- CSV outputs; the first line names the manifest ----

void write_training_log_csv(const std::string& path, const std::vector<train::EpochLog>& log,
                            const std::string& manifest_name);

struct EvalCsvRow {
  int point = 0;
  int agent = 0;
  double revenue = 0.0;
  double regret = 0.0;
  double irv = 0.0;
};
void write_eval_csv(const std::string& path, const std::vector<EvalCsvRow>& rows,
                    const std::string& manifest_name);
std::vector<EvalCsvRow> read_eval_csv(const std::string& path);

struct CertCsvRow {
  int profile = 0;
  int agent = 0;
  double truthful_utility = 0.0;
  double certified_regret = 0.0;
  double empirical_regret = 0.0;
  double gap = 0.0;
  long nodes = 0;
  double seconds = 0.0;
  double residual = 0.0;
  int unstable = 0;
  int complete = 1;
};
void write_cert_csv(const std::string& path, const std::vector<CertCsvRow>& rows,
                    const std::string& manifest_name);
std::vector<CertCsvRow> read_cert_csv(const std::string& path);

// ---- Table-1-style aggregation ----

struct ReportSummary {
  int points_eval = 0;
  int points_cert = 0;
  double revenue_mean = 0.0, revenue_std = 0.0;
  double emp_regret_mean = 0.0, emp_regret_std = 0.0;
  double cert_regret_mean = 0.0, cert_regret_std = 0.0;
  double ratio = 0.0;  // emp_regret_mean / cert_regret_mean
  double solve_mean = 0.0, solve_std = 0.0;
  double irv_rate = 0.0;           // share of (point, agent) with irv > 0
  double irv_mean_violation = 0.0; // mean over violating entries
  double max_residual = 0.0;
};

// Standard deviations are population (divide by N), matching the reference
// tables this mirrors.
ReportSummary aggregate_report(const std::vector<EvalCsvRow>& eval_rows,
                               const std::vector<CertCsvRow>& cert_rows);
std::string format_report_row(const std::string& label, const ReportSummary& s);

// ---- misc ----

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);
std::string format_double(double v);  // %.17g, round-trip exact

}  // namespace auctioncert::io
