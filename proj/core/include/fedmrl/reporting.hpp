#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fedmrl/config.hpp"
#include "fedmrl/orchestrator.hpp"

namespace fedmrl {

inline constexpr const char* kVersion = "0.1.0";

/// round, global_acc, global_loss, reward, loss_0..loss_{H-1}, acc_*, mu_*,
/// alpha_*, loss_variance.
std::vector<std::string> metrics_header(std::size_t clients);
std::vector<double> metrics_row(const RoundRecord& r);

/// Shortest text that parses back to the same double.
std::string format_real(double v);

/// Streams one CSV row per round, flushed immediately.
class MetricsWriter {
 public:
  MetricsWriter(const std::filesystem::path& path, std::size_t clients);
  void write(const RoundRecord& r);

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::size_t clients_;
};

/// Streams full round records (including SOM best-matching units) as JSON lines.
class RoundLogWriter {
 public:
  explicit RoundLogWriter(const std::filesystem::path& path);
  void write(const RoundRecord& r);

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

void write_metrics(std::span<const RoundRecord> records, const std::filesystem::path& path);

struct MetricsTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};
MetricsTable read_metrics(const std::filesystem::path& path);

struct ClassificationSummary {
  double accuracy = 0.0;
  double precision = 0.0;  // macro average over classes
  double recall = 0.0;     // macro average over classes
  double f1 = 0.0;         // harmonic mean of macro precision and recall
};
ClassificationSummary summarize(const Evaluation& ev);

nlohmann::json summary_json(const ExperimentConfig& cfg, const ExperimentResult& result);
void write_summary(const ExperimentConfig& cfg, const ExperimentResult& result, const std::filesystem::path& path);

/// Git blob hash (SHA-1 of "blob <len>\0<content>") as lowercase hex.
std::string git_blob_hash(std::string_view content);

struct RunManifest {
  std::string config_text;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string started_at;
  std::string finished_at;
  std::string version = kVersion;
};
RunManifest make_manifest(const ExperimentConfig& cfg, std::chrono::system_clock::time_point start,
                          std::chrono::system_clock::time_point end);
void write_manifest(const RunManifest& m, const std::filesystem::path& path);

/// Two-column CSV (F1, L_fair).
void emit_landscape(double total_loss, std::size_t grid_n, const std::filesystem::path& path);

void write_json(const nlohmann::json& j, const std::filesystem::path& path);
nlohmann::json read_json(const std::filesystem::path& path);

/// Runs a configured experiment writing metrics.csv, rounds.jsonl,
/// summary.json, manifest.json and checkpoint.json into `out_dir`. Metrics
/// are flushed every round.
ExperimentResult run_to_directory(Experiment& experiment, const std::filesystem::path& out_dir);

struct SweepRow {
  std::string algo;
  std::size_t seeds = 0;
  double mean_acc = 0.0;
  double std_acc = 0.0;
  double mean_precision = 0.0;
  double mean_recall = 0.0;
  double mean_f1 = 0.0;
  double mean_loss_variance = 0.0;
};

/// Every algorithm on seeds base.seed .. base.seed + seeds - 1; per-run
/// outputs land in out_dir/<algo>/seed_<n>/ and the table in
/// out_dir/comparison.csv.
std::vector<SweepRow> run_sweep(const ExperimentConfig& base, std::span<const Algorithm> algos, std::size_t seeds,
                                const std::filesystem::path& out_dir);

}  // namespace fedmrl
