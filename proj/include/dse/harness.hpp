#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dse/cvgae.hpp"
#include "dse/explainers.hpp"
#include "dse/frontdoor.hpp"
#include "dse/predictor.hpp"
#include "dse/tr3.hpp"

namespace dse {

struct SweepConfig {
  bool enabled = true;
  std::vector<double> lambdas = {0.1, 1.0, 5.0, 10.0};
  std::vector<double> gammas = {0.1, 1.0, 3.0, 10.0};
  /// "grid" trains every (lambda, gamma) cell; "axes" varies one weight at a
  /// time around the base config.
  std::string mode = "grid";
  int max_epochs = 0;      // 0: same as the generator section
  int train_graphs = 0;    // 0: same as the generator section
  int eval_graphs = 100;
  int num_surrogates = 20;
};

/// Everything run_experiment needs, read from an INI file with the sections
/// [run], [data], [predictor], [generator], [explainers], [dse] and [sweep].
struct ExperimentConfig {
  std::filesystem::path run_dir = "run";
  bool resume = true;

  std::filesystem::path data_path;  // empty: generate from `data`
  Tr3Config data;
  PredictorConfig predictor;

  GeneratorConfig generator;
  std::vector<std::uint64_t> generator_seeds = {1, 2, 3};
  int generator_train_graphs = 0;  // 0: whole training split

  std::vector<ExplainerKind> explainers = {kExplainers.begin(), kExplainers.end()};
  ExplainerConfig explainer;

  DseConfig dse;
  int eval_graphs = 200;
  int fid_masks = 3;
  int ood_graphs = 0;  // 0: whole test split

  SweepConfig sweep;

  void validate() const;
  nlohmann::json to_json() const;
};

/// Parses INI text. Relative paths are resolved against `base_dir`.
/// Throws ConfigError on unknown sections or keys and malformed values.
ExperimentConfig parse_experiment_config(std::string_view ini_text, const std::filesystem::path& base_dir = {});
/// Throws MissingArtifactError when the file does not exist.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Git blob hash: SHA-1 of "blob <size>\0" followed by the bytes.
std::string git_blob_sha1(std::string_view bytes);

/// Reads a whole file; throws MissingArtifactError naming the path and, when
/// given, the command that produces it.
std::string read_artifact(const std::filesystem::path& path, std::string_view produced_by = {});

void write_text_file(const std::filesystem::path& path, std::string_view text);

std::vector<MaskRecord> load_masks(const std::filesystem::path& path);
void save_masks(const std::filesystem::path& path, const std::vector<MaskRecord>& masks);
std::vector<ImportanceRecord> load_records(const std::filesystem::path& path);
void save_records(const std::filesystem::path& path, const std::vector<ImportanceRecord>& records);

/// Bar chart of rho_re and rho_dse per explainer; undefined values are drawn as gaps.
std::string fig2_svg(const std::vector<std::string>& explainers, const std::vector<double>& rho_re,
                     const std::vector<double>& rho_dse);

/// Runs (or resumes) data -> predictor -> explanations -> generators ->
/// evaluation -> metrics and writes report.json, table2.csv, table3.csv,
/// table4.csv, ablation.csv, sensitivity.csv, fig2.svg, fig2.csv,
/// losses.csv, manifest.json and timings.json under cfg.run_dir.
/// Stages whose artifact and input stamp already exist are reused when
/// cfg.resume is set. Returns the report.
nlohmann::json run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr);

}  // namespace dse
