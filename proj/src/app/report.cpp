#include "ddr/app/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace ddr {

namespace fs = std::filesystem;

namespace {

std::vector<std::vector<std::string>> read_csv(const fs::path& path, std::size_t columns) {
  std::ifstream in(path);
  if (!in) throw ReportError("cannot read " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    if (++line_no == 1 || line.empty()) continue;  // header
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() != columns) {
      throw ReportError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(columns) +
                        " columns");
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

double to_double(const std::string& s, const fs::path& path) {
  try {
    return std::stod(s);
  } catch (const std::exception&) {
    throw ReportError(path.string() + ": bad number '" + s + "'");
  }
}

std::string cell(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.1f%%", 100.0 * v);
  return buf;
}

// Known methods first in a fixed order, then anything else alphabetically.
std::vector<std::string> order_methods(const std::set<std::string>& present) {
  static const std::vector<std::string> preferred{"bm25", "dr", "ddr", "ddr_no_si", "ddr_no_df", "ddr_no_d"};
  std::vector<std::string> out;
  for (const auto& m : preferred) {
    if (present.count(m)) out.push_back(m);
  }
  for (const auto& m : present) {
    if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
  }
  return out;
}

}  // namespace

std::vector<MetricRow> read_metrics_csv(const fs::path& path) {
  std::vector<MetricRow> out;
  for (auto& r : read_csv(path, 4)) out.push_back({r[0], r[1], r[2], to_double(r[3], path)});
  return out;
}

std::vector<CurveRow> read_curves_csv(const fs::path& path) {
  std::vector<CurveRow> out;
  for (auto& r : read_csv(path, 4)) {
    out.push_back({r[0], r[1], static_cast<std::size_t>(to_double(r[2], path)), to_double(r[3], path)});
  }
  return out;
}

std::string render_report(const fs::path& dir) {
  std::vector<std::string> missing;
  for (const char* name : {"metrics.csv", "curves.csv", "resolved-config.json"}) {
    if (!fs::is_regular_file(dir / name)) missing.push_back(name);
  }
  if (!missing.empty()) {
    std::string msg = "results directory " + dir.string() + " is missing:";
    for (const auto& m : missing) msg += " " + m;
    throw ReportError(msg);
  }
  const std::vector<MetricRow> rows = read_metrics_csv(dir / "metrics.csv");
  const std::vector<CurveRow> curves = read_curves_csv(dir / "curves.csv");
  if (rows.empty()) throw ReportError(dir.string() + "/metrics.csv holds no results");

  std::map<std::tuple<std::string, std::string, std::string>, double> value;  // (metric, domain, method)
  std::set<std::string> methods_present;
  std::vector<std::string> metrics, domains;
  std::map<std::string, double> invocations;
  for (const auto& r : rows) {
    if (r.metric == "supervised_invocations") {
      invocations[r.method] = r.value;
      methods_present.insert(r.method);
      continue;
    }
    value[{r.metric, r.domain, r.method}] = r.value;
    methods_present.insert(r.method);
    if (std::find(metrics.begin(), metrics.end(), r.metric) == metrics.end()) metrics.push_back(r.metric);
    if (std::find(domains.begin(), domains.end(), r.domain) == domains.end()) domains.push_back(r.domain);
  }
  const std::vector<std::string> methods = order_methods(methods_present);
  const bool imp = methods_present.count("dr") && methods_present.count("ddr");

  std::ostringstream md;
  md << "# Retrieval results\n\n";
  for (const auto& metric : metrics) {
    md << "## " << metric << "\n\n| domain |";
    for (const auto& m : methods) md << ' ' << m << " |";
    if (imp) md << " imp. |";
    md << "\n|---|";
    for (std::size_t i = 0; i < methods.size() + (imp ? 1 : 0); ++i) md << "---:|";
    md << '\n';
    std::map<std::string, std::pair<double, std::size_t>> sums;
    auto emit_row = [&](const std::string& label, auto lookup) {
      md << "| " << label << " |";
      for (const auto& m : methods) {
        const std::optional<double> v = lookup(m);
        md << ' ' << (v ? cell(*v) : "-") << " |";
      }
      if (imp) {
        const auto dr = lookup("dr"), ddr = lookup("ddr");
        md << ' ' << (dr && ddr && *dr != 0.0 ? percent((*ddr - *dr) / *dr) : "-") << " |";
      }
      md << '\n';
    };
    for (const auto& d : domains) {
      emit_row(d, [&](const std::string& m) -> std::optional<double> {
        auto it = value.find({metric, d, m});
        if (it == value.end()) return std::nullopt;
        sums[m].first += it->second;
        ++sums[m].second;
        return it->second;
      });
    }
    emit_row("mean", [&](const std::string& m) -> std::optional<double> {
      auto it = sums.find(m);
      if (it == sums.end() || it->second.second == 0) return std::nullopt;
      return it->second.first / static_cast<double>(it->second.second);
    });
    md << '\n';
  }

  if (!invocations.empty()) {
    md << "## Supervised training runs\n\n| method | runs |\n|---|---:|\n";
    for (const auto& m : methods) {
      if (invocations.count(m)) md << "| " << m << " | " << static_cast<long long>(invocations[m]) << " |\n";
    }
    md << '\n';
  }

  if (!curves.empty()) {
    md << "## Target adaptation curves (recall@10)\n\n| method | domain | first step | first | last step | last |\n"
          "|---|---|---:|---:|---:|---:|\n";
    std::map<std::pair<std::string, std::string>, std::pair<CurveRow, CurveRow>> ends;
    std::vector<std::pair<std::string, std::string>> order;
    for (const auto& c : curves) {
      const auto key = std::make_pair(c.method, c.domain);
      auto it = ends.find(key);
      if (it == ends.end()) {
        ends.emplace(key, std::make_pair(c, c));
        order.push_back(key);
      } else {
        it->second.second = c;
      }
    }
    for (const auto& key : order) {
      const auto& [first, last] = ends.at(key);
      md << "| " << key.first << " | " << key.second << " | " << first.step << " | " << cell(first.recall_at_10)
         << " | " << last.step << " | " << cell(last.recall_at_10) << " |\n";
    }
    md << "\nFull curves: curves.csv (method, domain, step, recall@10).\n";
  }
  return md.str();
}

fs::path write_report(const fs::path& dir) {
  const std::string text = render_report(dir);
  const fs::path path = dir / "report.md";
  std::ofstream out(path);
  if (!out) throw ReportError("cannot write " + path.string());
  out << text;
  return path;
}

}  // namespace ddr
