#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "ddr/corpus/corpus.hpp"
#include "ddr/training/training.hpp"

namespace ddr {

enum class ExperimentMode { dr, ddr, ddr_no_df, ddr_no_si, ddr_no_d };

std::string to_string(ExperimentMode mode);
ExperimentMode parse_mode(std::string_view name);
const std::vector<ExperimentMode>& all_modes();

/// Everything a run depends on. Stage seeds are derived from `seed` and a
/// per-stage label, so each stage's randomness is independent of which
/// other stages run.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  // The synthetic bundle is generated from its own seed so that training
  // seeds vary the models but not the data.
  std::uint64_t data_seed = 7;
  BenchmarkSpec benchmark = default_benchmark_spec();
  EncoderConfig encoder;
  RemConfig rem{16, 16, 0.0, 1.0};
  // Optional masked-LM warm-up of the base backbone on the source corpus
  // before anything else; 0 keeps the random init.
  TrainingConfig base_pretrain;
  TrainingConfig source_dam;
  TrainingConfig target_dam;
  TrainingConfig rem_training;
  TrainingConfig full_training;
  std::size_t curve_every = 250;
  std::vector<ExperimentMode> modes{ExperimentMode::dr, ExperimentMode::ddr};
  bool bm25_baseline = true;
  bool save_checkpoints = true;
  std::size_t run_depth = 100;  // ranks written to run files and used for metrics
};

/// Desk-scale defaults.
ExperimentConfig default_experiment_config();

void validate(const ExperimentConfig& cfg);

nlohmann::json to_json(const ExperimentConfig& cfg);
/// Keys absent from `j` keep the values already in `base`; unknown keys are
/// an error.
ExperimentConfig from_json(const nlohmann::json& j, ExperimentConfig base = default_experiment_config());

nlohmann::json to_json(const EncoderConfig& cfg);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RemConfig& cfg);
RemConfig rem_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainingConfig& cfg);
nlohmann::json to_json(const DomainSpec& spec);
nlohmann::json to_json(const BenchmarkSpec& spec);

ExperimentConfig load_experiment_config(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace ddr
