#pragma once

#include <string>
#include <vector>

#include "peftlab/train.hpp"

namespace peftlab {

// One CSV row per run, doubles carrying full precision.
std::string csv_header();
std::string csv_row(const RunResult& r);

// Whole-line appends; a missing or empty file gets the header first.
void append_csv(const std::string& path, const std::vector<RunResult>& rows);
std::vector<RunResult> read_csv(const std::string& path);

struct ReportCell {
  std::vector<double> samples;
  double mean = 0.0;
  bool best = false;
};

// methods x tasks pivot of final metrics, averaged over seeds.
struct ReportTable {
  std::vector<std::string> methods;  // sorted row labels
  std::vector<std::string> tasks;    // sorted column labels
  std::vector<std::string> metric_names;  // per task column
  std::vector<std::vector<ReportCell>> cells;
};

// Deterministic in the multiset of rows: label order is sorted and means are
// accumulated in seed order, so shuffled input produces an identical table.
// Duplicate (method, task, seed) rows are ambiguous and rejected.
ReportTable build_report(const std::vector<RunResult>& rows);
std::string render_report(const ReportTable& table);

// Aligned mean+-std grid for sweep results, two decimals per cell.
std::string render_sweep(const SweepTable& table);

std::string format_g17(double x);
std::string format_millions(long long count);

}  // namespace peftlab
