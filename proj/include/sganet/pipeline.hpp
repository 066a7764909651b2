// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "sganet/metrics.hpp"
#include "sganet/scoring.hpp"
#include "sganet/training.hpp"

namespace sganet {

struct ExperimentConfig {
  std::filesystem::path data;       // dataset root holding train/ and test/
  std::filesystem::path train_dir;  // defaults to data/train
  std::filesystem::path test_dir;   // defaults to data/test
  std::filesystem::path out;        // run directory
  std::uint64_t seed = 0;
  int threads = 1;
  bool force = false;

  ExtractorSpec extractor;
  TrainConfig train;

  double coreset_ratio = 1.0;
  scoring::MapOptions map;
  scoring::BankModalities bank = scoring::BankModalities::kFused;
  bool pgm = false;

  metrics::EvalOptions eval;

  // Fills derived paths and pushes the seed into the training config.
  ExperimentConfig resolved() const;
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& c);
// Keys absent from `j` keep the values already in `base`.
ExperimentConfig experiment_from_json(const nlohmann::json& j, ExperimentConfig base = {});

std::vector<ViewSet> load_split(const std::filesystem::path& dir);

struct TrainSummary {
  double l_mvga_init = 0.0;   // mean over training samples
  double l_mvga_final = 0.0;
  double total_init = 0.0;
  double total_final = 0.0;
  int steps = 0;
  bool optimized = true;
  std::vector<std::string> warnings;
};

nlohmann::json to_json(const TrainSummary& s);

// Each stage reads and writes under config.out:
//   train -> params/, train_log.jsonl, train_summary.json
//   score -> bank/, maps/<sample>/view_<kk>.ft32, scores.json
//   eval  -> report.json, curves.csv
// and drops a <stage>.config.json snapshot. Existing outputs are an error
// unless config.force is set.
TrainSummary run_train(const ExperimentConfig& config);
nlohmann::json run_score(const ExperimentConfig& config);
metrics::EvalReport run_eval(const ExperimentConfig& config);
metrics::EvalReport run_all(const ExperimentConfig& config);

enum class SweepAxis { kK, kN, kLosses };

SweepAxis parse_sweep_axis(const std::string& name);
std::string sweep_axis_name(SweepAxis axis);

struct SweepRow {
  std::string label;
  TrainConfig train;
  metrics::EvalReport report;
  TrainSummary summary;
};

// Grid points for an axis, applied on top of `base`.
std::vector<std::pair<std::string, TrainConfig>> sweep_grid(SweepAxis axis, const TrainConfig& base);

// Runs one full pipeline per grid point under out/sweep_<axis>/<label>/ and
// writes out/sweep_<axis>.csv and .json.
std::vector<SweepRow> run_sweep(const ExperimentConfig& config, SweepAxis axis);

}  // namespace sganet
