#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ddr/app/config.hpp"
#include "ddr/retrieval/retrieval.hpp"

namespace ddr {

struct MetricRow {
  std::string method;
  std::string domain;
  std::string metric;
  double value = 0.0;
};

struct CurveRow {
  std::string method;
  std::string domain;
  std::size_t step = 0;
  double recall_at_10 = 0.0;
};

struct TimingRow {
  std::string stage;
  double seconds = 0.0;
};

// Which backbone and REM a method evaluated a domain with.
struct AssemblyRow {
  std::string method;
  std::string domain;
  std::string backbone_checksum;
  std::string rem_checksum;  // "-" without a REM
};

struct ExperimentResult {
  std::vector<MetricRow> metrics;
  std::vector<CurveRow> curves;
  std::vector<TimingRow> timings;
  std::vector<AssemblyRow> assemblies;
  std::map<std::string, std::size_t> supervised_invocations;  // per method

  /// Mean of `metric` over the target domains; throws when absent.
  double target_mean(const std::string& method, const std::string& metric) const;
  const std::vector<CurveRow> curve(const std::string& method, const std::string& domain) const;
};

struct ExperimentOptions {
  std::function<void(const std::string&)> log;  // progress lines; may be empty
};

/// Generates the bundle described by `cfg.benchmark` from `cfg.data_seed`.
BenchmarkBundle make_bundle(const ExperimentConfig& cfg);

/// Runs every mode in `cfg.modes`. With a non-empty `out_dir` it writes
/// resolved-config.json, metrics.csv, curves.csv, assemblies.csv,
/// timings.csv, report.md, runs/<method>/<domain>.trec and checkpoints/.
/// metrics.csv and curves.csv are appended and flushed as results arrive,
/// so an aborted run leaves its partial results behind.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const BenchmarkBundle& bundle,
                                const std::filesystem::path& out_dir = {}, const ExperimentOptions& options = {});

/// Dense retrieval of `queries` over `docs` with the given model.
RunFile dense_run(const AssembledModel& model, const std::vector<Document>& docs, const std::vector<Query>& queries,
                  const Vocabulary& vocab, std::size_t depth);

std::string format_metric(double value);

}  // namespace ddr
