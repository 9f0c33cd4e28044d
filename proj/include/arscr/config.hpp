#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "arscr/dataset.hpp"
#include "arscr/training.hpp"

namespace arscr {

/// One system of an `experiment` invocation: the base TrainConfig with a
/// different regime, mapping or augmentation switch.
struct SystemSpec {
  std::string name;
  Regime regime = Regime::Baseline;
  std::optional<MappingKind> mapping;
  std::optional<bool> augment;
  bool operator==(const SystemSpec&) const = default;
};

struct SynthConfig {
  /// "source" or "target".
  std::string kind = "source";
  std::uint64_t seed = 0;
  std::optional<double> noise;
  std::optional<double> pitch_jitter;
  std::vector<int> planted{4, 1, 3};
  double shift = kDefaultTargetShift;
  std::optional<std::size_t> train_per_class;
  std::optional<std::size_t> validation_per_class;
  std::optional<std::size_t> test_per_class;

  SynthSpec spec() const;
};

struct CliConfig {
  TrainConfig train;
  std::string dataset;
  std::string source_dataset;
  std::string checkpoint;
  std::string output = "out";
  std::size_t runs = 10;
  std::vector<SystemSpec> systems;
  /// Name of the system that relative improvements are measured against.
  std::string reference = "baseline";
  SynthConfig synth;
};

/// Fills defaults for absent fields and validates. Errors carry the JSON
/// pointer of the offending field.
CliConfig parse_config(const nlohmann::json& doc);
CliConfig parse_config_file(const std::filesystem::path& path);

enum class ReportFormat { Json, Csv };
ReportFormat parse_report_format(const std::string& s);

nlohmann::json report_to_json(const ExperimentReport& r);
ExperimentReport report_from_json(const nlohmann::json& j);

/// Table layout: system, limit, avg_acc_pct, rel_imp_pct, std_pct, n_runs, trainable_params.
std::string reports_to_csv(const std::vector<ExperimentReport>& reports);
std::string csv_row(const ExperimentReport& r);

void write_report(const ExperimentReport& report, const std::filesystem::path& path, ReportFormat format);
void write_reports(const std::vector<ExperimentReport>& reports, const std::filesystem::path& path,
                   ReportFormat format);
/// Reads a JSON report file written by `write_report(s)`.
std::vector<ExperimentReport> read_reports(const std::filesystem::path& path);

/// Writes `text` to `path`, creating parent directories.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace arscr
