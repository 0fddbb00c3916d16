#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "ddr/app/experiment.hpp"

namespace ddr {

class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path);
std::vector<CurveRow> read_curves_csv(const std::filesystem::path& path);

/// Markdown summary of a results directory: one table per metric with
/// domains as rows and methods as columns, plus the relative improvement
/// (ddr - dr) / dr when both ran. Throws ReportError naming every missing
/// input file.
std::string render_report(const std::filesystem::path& results_dir);

/// Writes report.md into the directory and returns its path.
std::filesystem::path write_report(const std::filesystem::path& results_dir);

}  // namespace ddr
