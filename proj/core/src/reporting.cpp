#include "fedmrl/reporting.hpp"

#include <charconv>
#include <cmath>
#include <ctime>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "fedmrl/errors.hpp"

namespace fedmrl {

std::string format_real(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::vector<std::string> metrics_header(std::size_t clients) {
  std::vector<std::string> h{"round", "global_acc", "global_loss", "reward"};
  for (const char* block : {"loss", "acc", "mu", "alpha"}) {
    for (std::size_t c = 0; c < clients; ++c) h.push_back(std::string(block) + "_" + std::to_string(c));
  }
  h.push_back("loss_variance");
  return h;
}

std::vector<double> metrics_row(const RoundRecord& r) {
  std::vector<double> row{static_cast<double>(r.round), r.global_acc, r.global_loss, r.reward};
  for (const auto* block : {&r.client_loss, &r.client_acc, &r.mu, &r.alpha}) {
    row.insert(row.end(), block->begin(), block->end());
  }
  row.push_back(r.loss_variance);
  return row;
}

namespace {

void write_csv_line(std::ostream& out, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
  out << '\n';
}

std::string row_text(const RoundRecord& r, std::size_t clients) {
  if (r.client_loss.size() != clients || r.client_acc.size() != clients || r.mu.size() != clients ||
      r.alpha.size() != clients) {
    throw ConfigError("round record does not match the metrics column layout");
  }
  const auto row = metrics_row(r);
  std::string s = std::to_string(r.round);
  for (std::size_t i = 1; i < row.size(); ++i) s += "," + format_real(row[i]);
  return s;
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

}  // namespace

MetricsWriter::MetricsWriter(const std::filesystem::path& path, std::size_t clients)
    : path_(path), out_(open_for_write(path)), clients_(clients) {
  write_csv_line(out_, metrics_header(clients));
  out_.flush();
}

void MetricsWriter::write(const RoundRecord& r) {
  out_ << row_text(r, clients_) << '\n';
  out_.flush();
  if (!out_) throw IoError("failed writing " + path_.string());
}

RoundLogWriter::RoundLogWriter(const std::filesystem::path& path) : path_(path), out_(open_for_write(path)) {}

void RoundLogWriter::write(const RoundRecord& r) {
  out_ << record_to_json(r).dump() << '\n';
  out_.flush();
  if (!out_) throw IoError("failed writing " + path_.string());
}

void write_metrics(std::span<const RoundRecord> records, const std::filesystem::path& path) {
  if (records.empty()) throw InputError("no rounds to write");
  MetricsWriter w(path, records.front().client_loss.size());
  for (const auto& r : records) w.write(r);
}

MetricsTable read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  MetricsTable t;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (t.header.empty()) {
      t.header = cells;
      continue;
    }
    if (cells.size() != t.header.size()) throw ParseError("row width differs from header", line_no);
    std::vector<double> row;
    for (const auto& c : cells) {
      double v = 0.0;
      auto [p, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
      if (ec != std::errc() || p != c.data() + c.size()) throw ParseError("invalid number '" + c + "'", line_no);
      row.push_back(v);
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

ClassificationSummary summarize(const Evaluation& ev) {
  ClassificationSummary s;
  s.accuracy = ev.accuracy;
  // Macro averages over classes present in the evaluation data.
  std::size_t present = 0;
  for (std::size_t m = 0; m < ev.class_support.size(); ++m) {
    if (ev.class_support[m] == 0) continue;
    ++present;
    s.precision += ev.per_class_precision[m];
    s.recall += ev.per_class_recall[m];
  }
  if (present > 0) {
    s.precision /= static_cast<double>(present);
    s.recall /= static_cast<double>(present);
  }
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

nlohmann::json summary_json(const ExperimentConfig& cfg, const ExperimentResult& result) {
  const ClassificationSummary s = summarize(result.final_eval);
  nlohmann::json mean_alpha = nlohmann::json::array();
  nlohmann::json mean_mu = nlohmann::json::array();
  for (const auto& r : result.records) {
    double a = 0.0, m = 0.0;
    for (double v : r.alpha) a += v;
    for (double v : r.mu) m += v;
    mean_alpha.push_back(a / static_cast<double>(r.alpha.size()));
    mean_mu.push_back(m / static_cast<double>(r.mu.size()));
  }
  const RoundRecord* last = result.records.empty() ? nullptr : &result.records.back();
  return {{"algo", std::string(to_string(cfg.algo))},
          {"seed", cfg.seed},
          {"rounds", result.records.size()},
          {"clients", cfg.clients},
          {"ACC", s.accuracy},
          {"Pre", s.precision},
          {"Recall", s.recall},
          {"F1", s.f1},
          {"final_loss", result.final_eval.loss},
          {"per_class_recall", result.final_eval.per_class_recall},
          {"per_class_precision", result.final_eval.per_class_precision},
          {"final_loss_variance", last ? last->loss_variance : 0.0},
          {"mean_alpha_by_round", mean_alpha},
          {"mean_mu_by_round", mean_mu}};
}

void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_summary(const ExperimentConfig& cfg, const ExperimentResult& result, const std::filesystem::path& path) {
  write_json(summary_json(cfg, result), path);
}

std::string git_blob_hash(std::string_view content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw Error("cannot allocate digest context");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error("SHA-1 digest failed");
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

namespace {

std::string iso8601(std::chrono::system_clock::time_point tp) {
  const std::time_t t = std::chrono::system_clock::to_time_t(tp);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

}  // namespace

RunManifest make_manifest(const ExperimentConfig& cfg, std::chrono::system_clock::time_point start,
                          std::chrono::system_clock::time_point end) {
  RunManifest m;
  m.config_text = to_config_text(cfg);
  m.config_hash = git_blob_hash(m.config_text);
  m.seed = cfg.seed;
  m.started_at = iso8601(start);
  m.finished_at = iso8601(end);
  return m;
}

void write_manifest(const RunManifest& m, const std::filesystem::path& path) {
  write_json({{"config", m.config_text},
              {"config_hash", m.config_hash},
              {"seed", m.seed},
              {"started_at", m.started_at},
              {"finished_at", m.finished_at},
              {"version", m.version}},
             path);
}

void emit_landscape(double total_loss, std::size_t grid_n, const std::filesystem::path& path) {
  const auto curve = fairness_landscape(total_loss, grid_n);
  auto out = open_for_write(path);
  out << "F1,L_fair\n";
  for (const auto& [f1, lf] : curve) out << format_real(f1) << ',' << format_real(lf) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

ExperimentResult run_to_directory(Experiment& experiment, const std::filesystem::path& out_dir) {
  const auto start = std::chrono::system_clock::now();
  const ExperimentConfig& cfg = experiment.config();
  MetricsWriter metrics(out_dir / "metrics.csv", cfg.clients);
  RoundLogWriter rounds(out_dir / "rounds.jsonl");
  // Rounds restored from a checkpoint are re-emitted so the files cover the whole run.
  for (const auto& r : experiment.records()) {
    metrics.write(r);
    rounds.write(r);
  }
  ExperimentResult result = run_experiment(experiment, [&](const RoundRecord& r) {
    metrics.write(r);
    rounds.write(r);
  });
  write_summary(cfg, result, out_dir / "summary.json");
  write_json(experiment.checkpoint(), out_dir / "checkpoint.json");
  write_manifest(make_manifest(cfg, start, std::chrono::system_clock::now()), out_dir / "manifest.json");
  return result;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& base, std::span<const Algorithm> algos, std::size_t seeds,
                                const std::filesystem::path& out_dir) {
  if (algos.empty()) throw ConfigError("algos: at least one algorithm is required");
  if (seeds == 0) throw ConfigError("seeds: must be positive");
  std::vector<SweepRow> table;
  for (Algorithm algo : algos) {
    SweepRow row;
    row.algo = std::string(to_string(algo));
    row.seeds = seeds;
    std::vector<double> accs;
    for (std::size_t k = 0; k < seeds; ++k) {
      ExperimentConfig cfg = base;
      cfg.algo = algo;
      cfg.seed = base.seed + k;
      Experiment experiment(cfg);
      const auto dir = out_dir / row.algo / ("seed_" + std::to_string(cfg.seed));
      const ExperimentResult result = run_to_directory(experiment, dir);
      const ClassificationSummary s = summarize(result.final_eval);
      accs.push_back(s.accuracy);
      row.mean_precision += s.precision;
      row.mean_recall += s.recall;
      row.mean_f1 += s.f1;
      row.mean_loss_variance += result.records.back().loss_variance;
    }
    const double n = static_cast<double>(seeds);
    for (double a : accs) row.mean_acc += a;
    row.mean_acc /= n;
    row.std_acc = std::sqrt(variance(accs));
    row.mean_precision /= n;
    row.mean_recall /= n;
    row.mean_f1 /= n;
    row.mean_loss_variance /= n;
    table.push_back(row);
  }
  auto out = open_for_write(out_dir / "comparison.csv");
  out << "algo,seeds,ACC,ACC_std,Pre,Recall,F1,loss_variance\n";
  for (const auto& r : table) {
    out << r.algo << ',' << r.seeds << ',' << format_real(r.mean_acc) << ',' << format_real(r.std_acc) << ','
        << format_real(r.mean_precision) << ',' << format_real(r.mean_recall) << ',' << format_real(r.mean_f1) << ','
        << format_real(r.mean_loss_variance) << '\n';
  }
  if (!out) throw IoError("failed writing comparison table");
  return table;
}

}  // namespace fedmrl
