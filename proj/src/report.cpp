#include "peftlab/report.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace peftlab {

namespace {

constexpr const char* kCsvHeader =
    "method,task,seed,fraction,lr,trainable_upstream,trainable_total,metric_name,metric_value,"
    "diverged";

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(current);
      current.clear();
    } else {
      current += c;
    }
  }
  fields.push_back(current);
  return fields;
}

[[noreturn]] void row_error(const std::string& path, int line_no, const std::string& what) {
  throw IoError("csv \"" + path + "\" line " + std::to_string(line_no) + ": " + what);
}

double parse_double(const std::string& path, int line_no, const std::string& field,
                    const std::string& text) {
  try {
    std::size_t used = 0;
    const double x = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return x;
  } catch (const std::exception&) {
    row_error(path, line_no, field + " is not a number: \"" + text + "\"");
  }
}

long long parse_ll(const std::string& path, int line_no, const std::string& field,
                   const std::string& text) {
  try {
    std::size_t used = 0;
    const long long x = std::stoll(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return x;
  } catch (const std::exception&) {
    row_error(path, line_no, field + " is not an integer: \"" + text + "\"");
  }
}

std::size_t display_len(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) {
    if ((static_cast<unsigned char>(c) & 0xc0) != 0x80) ++n;  // skip UTF-8 continuations
  }
  return n;
}

std::string pad(const std::string& s, std::size_t width) {
  std::string out = s;
  for (std::size_t n = display_len(s); n < width; ++n) out += ' ';
  return out;
}

std::string format_2f(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", x);
  return buf;
}

std::string format_4f(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", x);
  return buf;
}

std::string format_g(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", x);
  return buf;
}

std::string render_grid(const std::vector<std::string>& header,
                        const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> widths(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) widths[c] = display_len(header[c]);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      widths[c] = std::max(widths[c], display_len(row[c]));
    }
  }
  std::ostringstream out;
  for (std::size_t c = 0; c < header.size(); ++c) {
    out << (c ? "  " : "") << pad(header[c], widths[c]);
  }
  out << "\n";
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      out << (c ? "  " : "") << pad(row[c], widths[c]);
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace

std::string format_g17(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::string format_millions(long long count) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2fM", static_cast<double>(count) / 1e6);
  return buf;
}

std::string csv_header() { return kCsvHeader; }

std::string csv_row(const RunResult& r) {
  std::ostringstream out;
  out << r.method << ',' << r.task << ',' << r.seed << ',' << format_g17(r.fraction) << ','
      << format_g17(r.lr) << ',' << r.trainable_upstream << ',' << r.trainable_total << ','
      << r.metric_name << ',' << format_g17(r.metric_value) << ','
      << (r.diverged ? "true" : "false");
  return out.str();
}

void append_csv(const std::string& path, const std::vector<RunResult>& rows) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("csv: cannot open \"" + path + "\" for appending");
  if (fresh) out << kCsvHeader << "\n";
  for (const RunResult& r : rows) out << csv_row(r) << "\n";
  out.flush();
  if (!out) throw IoError("csv: failed writing \"" + path + "\"");
}

std::vector<RunResult> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("csv: cannot open \"" + path + "\"");
  std::string line;
  int line_no = 0;
  std::vector<RunResult> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line != kCsvHeader) row_error(path, 1, "header does not match the run-result schema");
      continue;
    }
    const std::vector<std::string> f = split_fields(line);
    if (f.size() != 10) {
      row_error(path, line_no, "expected 10 fields, got " + std::to_string(f.size()));
    }
    RunResult r;
    r.method = f[0];
    r.task = f[1];
    r.seed = static_cast<std::uint64_t>(parse_ll(path, line_no, "seed", f[2]));
    r.fraction = parse_double(path, line_no, "fraction", f[3]);
    r.lr = parse_double(path, line_no, "lr", f[4]);
    r.trainable_upstream = parse_ll(path, line_no, "trainable_upstream", f[5]);
    r.trainable_total = parse_ll(path, line_no, "trainable_total", f[6]);
    r.metric_name = f[7];
    r.metric_value = parse_double(path, line_no, "metric_value", f[8]);
    if (f[9] == "true") {
      r.diverged = true;
    } else if (f[9] == "false") {
      r.diverged = false;
    } else {
      row_error(path, line_no, "diverged must be true or false, got \"" + f[9] + "\"");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

ReportTable build_report(const std::vector<RunResult>& rows) {
  if (rows.empty()) throw ConfigError("report: no rows");
  // (method, task) -> seed -> value; maps keep aggregation order-invariant.
  std::map<std::string, std::map<std::string, std::map<std::uint64_t, double>>> pivot;
  std::map<std::string, std::string> task_metric;
  for (const RunResult& r : rows) {
    auto [it, inserted] = pivot[r.method][r.task].emplace(r.seed, r.metric_value);
    if (!inserted) {
      throw IoError("report: duplicate rows for (" + r.method + ", " + r.task + ", seed " +
                    std::to_string(r.seed) + ")");
    }
    auto [mit, fresh] = task_metric.emplace(r.task, r.metric_name);
    if (!fresh && mit->second != r.metric_name) {
      throw IoError("report: task \"" + r.task + "\" mixes metrics \"" + mit->second +
                    "\" and \"" + r.metric_name + "\"");
    }
  }

  ReportTable table;
  for (const auto& [task, metric] : task_metric) {
    table.tasks.push_back(task);
    table.metric_names.push_back(metric);
  }
  for (const auto& [method, _] : pivot) table.methods.push_back(method);
  table.cells.assign(table.methods.size(), std::vector<ReportCell>(table.tasks.size()));
  for (std::size_t mi = 0; mi < table.methods.size(); ++mi) {
    const auto& by_task = pivot.at(table.methods[mi]);
    for (std::size_t ti = 0; ti < table.tasks.size(); ++ti) {
      auto it = by_task.find(table.tasks[ti]);
      if (it == by_task.end()) continue;
      ReportCell& cell = table.cells[mi][ti];
      for (const auto& [seed, value] : it->second) cell.samples.push_back(value);
      cell.mean = mean_of(cell.samples);
    }
  }
  for (std::size_t ti = 0; ti < table.tasks.size(); ++ti) {
    const bool higher = table.metric_names[ti] == "accuracy";
    bool any = false;
    double best = 0.0;
    for (std::size_t mi = 0; mi < table.methods.size(); ++mi) {
      const ReportCell& cell = table.cells[mi][ti];
      if (cell.samples.empty()) continue;
      if (!any || (higher ? cell.mean > best : cell.mean < best)) {
        best = cell.mean;
        any = true;
      }
    }
    for (std::size_t mi = 0; mi < table.methods.size(); ++mi) {
      ReportCell& cell = table.cells[mi][ti];
      if (!cell.samples.empty() && cell.mean == best) cell.best = true;
    }
  }
  return table;
}

std::string render_report(const ReportTable& table) {
  std::vector<std::string> header{"method"};
  for (std::size_t ti = 0; ti < table.tasks.size(); ++ti) {
    header.push_back(table.tasks[ti] + " (" + table.metric_names[ti] + ")");
  }
  std::vector<std::vector<std::string>> rows;
  for (std::size_t mi = 0; mi < table.methods.size(); ++mi) {
    std::vector<std::string> row{table.methods[mi]};
    for (const ReportCell& cell : table.cells[mi]) {
      if (cell.samples.empty()) {
        row.push_back("-");
      } else {
        row.push_back(format_4f(cell.mean) + (cell.best ? "*" : ""));
      }
    }
    rows.push_back(std::move(row));
  }
  return render_grid(header, rows);
}

std::string render_sweep(const SweepTable& table) {
  std::vector<std::string> header{"method"};
  for (double c : table.columns) header.push_back(table.column_label + "=" + format_g(c));
  std::vector<std::vector<std::string>> rows;
  for (std::size_t mi = 0; mi < table.methods.size(); ++mi) {
    std::vector<std::string> row{table.methods[mi]};
    for (const SweepCell& cell : table.cells[mi]) {
      row.push_back(format_2f(cell.mean) + "±" + format_2f(cell.stdev));
    }
    rows.push_back(std::move(row));
  }
  return render_grid(header, rows);
}

}  // namespace peftlab
