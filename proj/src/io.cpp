#include "auctioncert/io.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace auctioncert::io {

using net::AuctionNet;
using net::IrMode;

namespace {

constexpr const char* kModelMagic = "auctionnet-model";
constexpr const char* kDatasetMagic = "auctionnet-dataset";
constexpr int kFormatVersion = 1;

// Tokenizing reader that remembers where it is for error messages.
class Reader {
 public:
  Reader(std::string text, std::string origin)
      : text_(std::move(text)), origin_(std::move(origin)) {}

  std::string token() {
    skip_space();
    if (pos_ >= text_.size()) fail("unexpected end of file");
    size_t start = pos_;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    return text_.substr(start, pos_ - start);
  }

  void expect(const std::string& want) {
    size_t at = pos_;
    std::string got = token();
    if (got != want) fail("expected '" + want + "', got '" + got + "'", at);
  }

  long expect_int() {
    size_t at = pos_;
    std::string tok = token();
    char* end = nullptr;
    long v = std::strtol(tok.c_str(), &end, 10);
    if (end == tok.c_str() || *end != '\0') fail("expected integer, got '" + tok + "'", at);
    return v;
  }

  double expect_double() {
    size_t at = pos_;
    std::string tok = token();
    char* end = nullptr;
    double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') fail("expected number, got '" + tok + "'", at);
    return v;
  }

  [[noreturn]] void fail(const std::string& message) { fail(message, pos_); }

  [[noreturn]] void fail(const std::string& message, size_t at) {
    int line = 1;
    for (size_t i = 0; i < at && i < text_.size(); ++i)
      if (text_[i] == '\n') ++line;
    throw ParseError(origin_ + ": " + message + " at line " + std::to_string(line) + " (byte " +
                     std::to_string(at) + ")");
  }

 private:
  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  std::string text_;
  std::string origin_;
  size_t pos_ = 0;
};

}  // namespace

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed for " + path);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void save_model(const AuctionNet& net, const std::string& path) {
  net.validate();
  std::ostringstream os;
  os << kModelMagic << " v" << kFormatVersion << "\n";
  os << "n_agents " << net.config.n_agents << "\n";
  os << "n_items " << net.config.n_items << "\n";
  os << "ir_mode " << (net.config.ir_mode == IrMode::Fractional ? "fractional" : "penalty_free")
     << "\n";
  os << "allow_dummy_agent " << (net.config.allow_dummy_agent ? 1 : 0) << "\n";
  os << "smooth_heads " << (net.config.smooth_heads ? 1 : 0) << "\n";
  os << "payments_clipped " << (net.payments_clipped ? 1 : 0) << "\n";
  os << "seed " << net.seed << "\n";
  os << "config_hash " << (net.config_hash.empty() ? "-" : net.config_hash) << "\n";
  os << "layers " << (net.trunk.size() + 2) << "\n";
  auto dump_layer = [&os](const net::DenseLayer& l) {
    os << "layer " << net::activation_name(l.activation) << " " << l.out_dim() << " " << l.in_dim()
       << "\n";
    for (int r = 0; r < l.out_dim(); ++r) {
      os << "w";
      for (int c = 0; c < l.in_dim(); ++c) os << " " << format_double(l.weights(r, c));
      os << "\n";
    }
    os << "b";
    for (int r = 0; r < l.out_dim(); ++r) os << " " << format_double(l.biases[r]);
    os << "\n";
  };
  for (const auto& l : net.trunk) dump_layer(l);
  dump_layer(net.alloc_head);
  dump_layer(net.pay_head);
  os << "end\n";
  write_file(path, os.str());
}

AuctionNet load_model(const std::string& path) {
  Reader r(read_file(path), path);
  r.expect(kModelMagic);
  std::string version = r.token();
  if (version != "v" + std::to_string(kFormatVersion))
    r.fail("unsupported model format version '" + version + "'");

  AuctionNet net;
  r.expect("n_agents");
  net.config.n_agents = static_cast<int>(r.expect_int());
  r.expect("n_items");
  net.config.n_items = static_cast<int>(r.expect_int());
  r.expect("ir_mode");
  std::string mode = r.token();
  if (mode == "fractional")
    net.config.ir_mode = IrMode::Fractional;
  else if (mode == "penalty_free")
    net.config.ir_mode = IrMode::PenaltyFree;
  else
    r.fail("unknown ir_mode '" + mode + "'");
  r.expect("allow_dummy_agent");
  net.config.allow_dummy_agent = r.expect_int() != 0;
  r.expect("smooth_heads");
  net.config.smooth_heads = r.expect_int() != 0;
  r.expect("payments_clipped");
  net.payments_clipped = r.expect_int() != 0;
  r.expect("seed");
  net.seed = static_cast<std::uint64_t>(r.expect_int());
  r.expect("config_hash");
  net.config_hash = r.token();
  if (net.config_hash == "-") net.config_hash.clear();
  r.expect("layers");
  long layers = r.expect_int();
  if (layers < 2) r.fail("model needs at least the two head layers");

  auto read_layer = [&r]() {
    r.expect("layer");
    net::DenseLayer l;
    l.activation = net::activation_from_name(r.token());
    int out = static_cast<int>(r.expect_int());
    int in = static_cast<int>(r.expect_int());
    if (out < 1 || in < 1) r.fail("layer dimensions must be positive");
    l.weights.resize(out, in);
    for (int row = 0; row < out; ++row) {
      r.expect("w");
      for (int c = 0; c < in; ++c) l.weights(row, c) = r.expect_double();
    }
    r.expect("b");
    l.biases.resize(out);
    for (int row = 0; row < out; ++row) l.biases[row] = r.expect_double();
    return l;
  };

  net.config.trunk_widths.clear();
  for (long i = 0; i < layers - 2; ++i) {
    net.trunk.push_back(read_layer());
    net.config.trunk_widths.push_back(net.trunk.back().out_dim());
  }
  net.alloc_head = read_layer();
  net.pay_head = read_layer();
  r.expect("end");
  net.validate();
  return net;
}

void save_dataset(const train::Dataset& data, int n_agents, int n_items,
                  const std::string& path) {
  std::ostringstream os;
  os << kDatasetMagic << " v" << kFormatVersion << "\n";
  os << "n_agents " << n_agents << "\n";
  os << "n_items " << n_items << "\n";
  os << "count " << data.profiles.size() << "\n";
  os << "seed " << data.seed << "\n";
  for (const auto& p : data.profiles) {
    bool first = true;
    for (int i = 0; i < p.rows(); ++i)
      for (int j = 0; j < p.cols(); ++j) {
        if (!first) os << " ";
        os << format_double(p(i, j));
        first = false;
      }
    os << "\n";
  }
  os << "end\n";
  write_file(path, os.str());
}

train::Dataset load_dataset(const std::string& path, int* n_agents_out, int* n_items_out) {
  Reader r(read_file(path), path);
  r.expect(kDatasetMagic);
  std::string version = r.token();
  if (version != "v" + std::to_string(kFormatVersion))
    r.fail("unsupported dataset format version '" + version + "'");
  r.expect("n_agents");
  int n = static_cast<int>(r.expect_int());
  r.expect("n_items");
  int k = static_cast<int>(r.expect_int());
  r.expect("count");
  long count = r.expect_int();
  r.expect("seed");
  train::Dataset data;
  data.seed = static_cast<std::uint64_t>(r.expect_int());
  data.profiles.reserve(count);
  for (long p = 0; p < count; ++p) {
    Eigen::MatrixXd profile(n, k);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < k; ++j) profile(i, j) = r.expect_double();
    data.profiles.push_back(std::move(profile));
  }
  r.expect("end");
  if (n_agents_out) *n_agents_out = n;
  if (n_items_out) *n_items_out = k;
  return data;
}

KeyValues read_key_values(const std::string& path) {
  std::string text = read_file(path);
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    size_t start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos || line[start] == '#') continue;
    std::istringstream ls(line);
    std::string key, value;
    ls >> key;
    std::getline(ls, value);
    size_t vstart = value.find_first_not_of(" \t");
    value = vstart == std::string::npos ? "" : value.substr(vstart);
    size_t vend = value.find_last_not_of(" \t\r");
    if (vend != std::string::npos) value = value.substr(0, vend + 1);
    if (value.empty())
      throw ParseError(path + ": key '" + key + "' has no value at line " +
                       std::to_string(lineno));
    kv.emplace_back(key, value);
  }
  return kv;
}

const std::string* find_key(const KeyValues& kv, const std::string& key) {
  for (const auto& [k, v] : kv)
    if (k == key) return &v;
  return nullptr;
}

void apply_train_keys(const KeyValues& kv, train::TrainConfig& config) {
  auto geti = [&](const char* key, int& out) {
    if (const std::string* v = find_key(kv, key)) out = std::stoi(*v);
  };
  auto getd = [&](const char* key, double& out) {
    if (const std::string* v = find_key(kv, key)) out = std::stod(*v);
  };
  geti("batch_size", config.batch_size);
  geti("epochs", config.epochs);
  getd("lr", config.lr);
  geti("misreport_steps_train", config.misreport_steps_train);
  getd("misreport_lr", config.misreport_lr);
  geti("misreport_steps_eval", config.misreport_steps_eval);
  getd("lambda_init", config.lambda_init);
  getd("rho_rgt_init", config.rho_rgt_init);
  getd("rho_rgt_inc", config.rho_rgt_inc);
  geti("lambda_update_period", config.lambda_update_period);
  getd("mu_init", config.mu_init);
  getd("rho_irv", config.rho_irv);
  getd("rho_irv_inc", config.rho_irv_inc);
  geti("mu_update_period", config.mu_update_period);
  getd("stability_weight", config.stability_weight);
  getd("distill_weight", config.distill_weight);
  if (const std::string* v = find_key(kv, "seed"))
    config.seed = static_cast<std::uint64_t>(std::stoll(*v));
}

std::string content_hash_hex(const std::string& bytes) {
  // FNV-1a, 64 bit; stable content fingerprint for manifests.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, h);
  return buf;
}

std::string file_hash_hex(const std::string& path) { return content_hash_hex(read_file(path)); }

void write_manifest(const RunManifest& manifest, const std::string& path) {
  nlohmann::ordered_json j;
  j["command"] = manifest.command;
  nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
  for (const auto& [k, v] : manifest.config) cfg[k] = v;
  j["config"] = cfg;
  j["seed"] = manifest.seed;
  nlohmann::ordered_json inputs = nlohmann::ordered_json::object();
  for (const auto& [p, h] : manifest.input_hashes) inputs[p] = h;
  j["inputs"] = inputs;
  j["outputs"] = manifest.outputs;
  write_file(path, j.dump(2) + "\n");
}

namespace {

std::string csv_header(const std::string& manifest_name, const std::string& columns) {
  return "# manifest=" + manifest_name + "\n" + columns + "\n";
}

std::vector<std::vector<std::string>> read_csv_rows(const std::string& path) {
  std::string text = read_file(path);
  std::vector<std::vector<std::string>> rows;
  std::istringstream is(text);
  std::string line;
  bool header_skipped = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_skipped) {  // column header
      header_skipped = true;
      continue;
    }
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string field;
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (!fields.empty()) rows.push_back(std::move(fields));
  }
  return rows;
}

}  // namespace

void write_training_log_csv(const std::string& path, const std::vector<train::EpochLog>& log,
                            const std::string& manifest_name) {
  std::ostringstream os;
  os << csv_header(manifest_name,
                   "epoch,revenue,mean_regret,max_regret,mean_irv,loss,lambda_bar,rho_rgt");
  for (const auto& row : log)
    os << row.epoch << "," << format_double(row.revenue) << "," << format_double(row.mean_regret)
       << "," << format_double(row.max_regret) << "," << format_double(row.mean_irv) << ","
       << format_double(row.loss) << "," << format_double(row.lambda_bar) << ","
       << format_double(row.rho_rgt) << "\n";
  write_file(path, os.str());
}

void write_eval_csv(const std::string& path, const std::vector<EvalCsvRow>& rows,
                    const std::string& manifest_name) {
  std::ostringstream os;
  os << csv_header(manifest_name, "point,agent,revenue,regret,irv");
  for (const auto& r : rows)
    os << r.point << "," << r.agent << "," << format_double(r.revenue) << ","
       << format_double(r.regret) << "," << format_double(r.irv) << "\n";
  write_file(path, os.str());
}

std::vector<EvalCsvRow> read_eval_csv(const std::string& path) {
  std::vector<EvalCsvRow> rows;
  for (const auto& f : read_csv_rows(path)) {
    if (f.size() != 5) throw ParseError(path + ": evaluate CSV row needs 5 fields");
    EvalCsvRow r;
    r.point = std::stoi(f[0]);
    r.agent = std::stoi(f[1]);
    r.revenue = std::stod(f[2]);
    r.regret = std::stod(f[3]);
    r.irv = std::stod(f[4]);
    rows.push_back(r);
  }
  return rows;
}

void write_cert_csv(const std::string& path, const std::vector<CertCsvRow>& rows,
                    const std::string& manifest_name) {
  std::ostringstream os;
  os << csv_header(manifest_name,
                   "profile,agent,truthful_utility,certified_regret,empirical_regret,gap,nodes,"
                   "seconds,residual,unstable,complete");
  for (const auto& r : rows)
    os << r.profile << "," << r.agent << "," << format_double(r.truthful_utility) << ","
       << format_double(r.certified_regret) << "," << format_double(r.empirical_regret) << ","
       << format_double(r.gap) << "," << r.nodes << "," << format_double(r.seconds) << ","
       << format_double(r.residual) << "," << r.unstable << "," << r.complete << "\n";
  write_file(path, os.str());
}

std::vector<CertCsvRow> read_cert_csv(const std::string& path) {
  std::vector<CertCsvRow> rows;
  for (const auto& f : read_csv_rows(path)) {
    if (f.size() < 9) throw ParseError(path + ": certificate CSV row needs at least 9 fields");
    CertCsvRow r;
    r.profile = std::stoi(f[0]);
    r.agent = std::stoi(f[1]);
    r.truthful_utility = std::stod(f[2]);
    r.certified_regret = std::stod(f[3]);
    r.empirical_regret = std::stod(f[4]);
    r.gap = std::stod(f[5]);
    r.nodes = std::stol(f[6]);
    r.seconds = std::stod(f[7]);
    r.residual = std::stod(f[8]);
    if (f.size() > 9) r.unstable = std::stoi(f[9]);
    if (f.size() > 10) r.complete = std::stoi(f[10]);
    rows.push_back(r);
  }
  return rows;
}

namespace {

struct MeanStd {
  double mean = 0.0, std = 0.0;
};

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd ms;
  if (xs.empty()) return ms;
  for (double x : xs) ms.mean += x;
  ms.mean /= xs.size();
  for (double x : xs) ms.std += (x - ms.mean) * (x - ms.mean);
  ms.std = std::sqrt(ms.std / xs.size());
  return ms;
}

}  // namespace

ReportSummary aggregate_report(const std::vector<EvalCsvRow>& eval_rows,
                               const std::vector<CertCsvRow>& cert_rows) {
  ReportSummary s;
  std::vector<double> revenue, emp, cert, solve;
  int violations = 0;
  double violation_sum = 0.0;
  for (const auto& r : eval_rows) {
    if (r.agent == 0) revenue.push_back(r.revenue);  // revenue is a per-point quantity
    emp.push_back(r.regret);
    if (r.irv > 0.0) {
      ++violations;
      violation_sum += r.irv;
    }
  }
  for (const auto& r : cert_rows) {
    cert.push_back(r.certified_regret);
    solve.push_back(r.seconds);
    s.max_residual = std::max(s.max_residual, r.residual);
  }
  s.points_eval = static_cast<int>(revenue.size());
  s.points_cert = static_cast<int>(cert.size());
  MeanStd ms = mean_std(revenue);
  s.revenue_mean = ms.mean;
  s.revenue_std = ms.std;
  ms = mean_std(emp);
  s.emp_regret_mean = ms.mean;
  s.emp_regret_std = ms.std;
  ms = mean_std(cert);
  s.cert_regret_mean = ms.mean;
  s.cert_regret_std = ms.std;
  ms = mean_std(solve);
  s.solve_mean = ms.mean;
  s.solve_std = ms.std;
  s.ratio = s.cert_regret_mean > 0.0 ? s.emp_regret_mean / s.cert_regret_mean : 0.0;
  s.irv_rate = eval_rows.empty() ? 0.0 : static_cast<double>(violations) / eval_rows.size();
  s.irv_mean_violation = violations > 0 ? violation_sum / violations : 0.0;
  return s;
}

std::string format_report_row(const std::string& label, const ReportSummary& s) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%s | solve %.3f (%.3f) | revenue %.3f (%.3f) | emp regret %.3f (%.3f) | "
                "cert regret %.3f (%.3f) | emp/cert %.3f",
                label.c_str(), s.solve_mean, s.solve_std, s.revenue_mean, s.revenue_std,
                s.emp_regret_mean, s.emp_regret_std, s.cert_regret_mean, s.cert_regret_std,
                s.ratio);
  return buf;
}

}  // namespace auctioncert::io
