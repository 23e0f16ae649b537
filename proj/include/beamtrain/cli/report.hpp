#pragma once

// Tables from a sweep's results.csv: one row per value of the layout's
// attribute, one column per evaluation beam size, cells "mean (std)" in
// accuracy points. Missing cells print as "-".

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "beamtrain/cli/config.hpp"
#include "beamtrain/errors.hpp"

namespace beamtrain::cli {

struct ResultRow {
  std::map<std::string, std::string> fields;
  const std::string& at(const std::string& key) const {
    auto it = fields.find(key);
    if (it == fields.end()) throw DataError("results row has no column '" + key + "'");
    return it->second;
  }
};

inline std::vector<ResultRow> read_results(std::istream& in, const std::string& source = "<results>") {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(source, 1, "empty results file");
  const auto header = split(line, ',');
  std::vector<ResultRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto f = split(line, ',');
    if (f.size() != header.size()) throw ParseError(source, line_no, "column count does not match header");
    ResultRow r;
    for (std::size_t i = 0; i < f.size(); ++i) r.fields[header[i]] = f[i];
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::vector<ResultRow> read_results(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open results file " + path);
  return read_results(in, path);
}

/// Layout name -> results column that indexes the table rows.
inline const std::map<std::string, std::string>& report_layouts() {
  static const std::map<std::string, std::string> layouts = {
      {"strategies_by_k", "strategy"},   {"losses_by_k", "loss"},      {"accumulate_by_k", "accumulate"},
      {"update_mode_by_k", "update_mode"}, {"models_by_k", "model"},
  };
  return layouts;
}

struct Table {
  std::string corner;
  std::vector<std::string> columns;
  std::vector<std::string> rows;
  std::map<std::pair<std::string, std::string>, std::string> cells;

  const std::string& cell(const std::string& row, const std::string& col) const {
    static const std::string kEmpty = "-";
    auto it = cells.find({row, col});
    return it == cells.end() ? kEmpty : it->second;
  }
};

inline std::string format_mean_std(double mean, double std) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.2f (%.2f)", 100.0 * mean, 100.0 * std);
  return buf;
}

inline Table build_table(const std::vector<ResultRow>& results, const std::string& layout) {
  auto lit = report_layouts().find(layout);
  if (lit == report_layouts().end()) throw UsageError("unknown layout '" + layout + "'");
  const std::string& primary = lit->second;
  std::vector<const ResultRow*> means;
  for (const auto& r : results) {
    if (r.at("row_type") == "mean") means.push_back(&r);
  }
  // Attributes other than the primary one that vary across the table are
  // appended to row labels so distinct cells never collide.
  static const std::vector<std::string> kDescriptive = {"model", "strategy", "loss", "accumulate", "update_mode"};
  auto varying = [&](const std::string& key) {
    for (const auto* r : means) {
      if (r->at(key) != means.front()->at(key)) return true;
    }
    return false;
  };
  std::vector<std::string> extra;
  for (const auto& key : kDescriptive) {
    if (key != primary && varying(key)) extra.push_back(key);
  }
  auto label_for = [&](const ResultRow& r, bool with_k) {
    std::string label = r.at(primary);
    for (const auto& key : extra) label += " " + key + "=" + r.at(key);
    if (with_k) label += " k=" + r.at("k");
    return label;
  };
  auto collides = [&](bool with_k) {
    std::map<std::pair<std::string, std::string>, int> seen;
    for (const auto* r : means) {
      if (++seen[{label_for(*r, with_k), r->at("k_eval")}] > 1) return true;
    }
    return false;
  };
  const bool with_k = collides(false);
  if (with_k && collides(true)) throw DataError("results contain duplicate cells for layout '" + layout + "'");

  Table t;
  t.corner = primary;
  std::vector<std::size_t> ks;
  for (const auto* r : means) {
    const auto label = label_for(*r, with_k);
    if (std::find(t.rows.begin(), t.rows.end(), label) == t.rows.end()) t.rows.push_back(label);
    const auto k = detail::parse_number<std::size_t>("k_eval", r->at("k_eval"));
    if (std::find(ks.begin(), ks.end(), k) == ks.end()) ks.push_back(k);
    t.cells[{label, r->at("k_eval")}] = format_mean_std(detail::parse_number<double>("dev_acc", r->at("dev_acc")),
                                                         detail::parse_number<double>("dev_acc_std", r->at("dev_acc_std")));
  }
  std::sort(ks.begin(), ks.end());
  for (auto k : ks) t.columns.push_back(std::to_string(k));
  return t;
}

inline std::string table_to_csv(const Table& t) {
  std::string out = t.corner;
  for (const auto& c : t.columns) out += "," + c;
  out += "\n";
  for (const auto& r : t.rows) {
    out += r;
    for (const auto& c : t.columns) out += "," + t.cell(r, c);
    out += "\n";
  }
  return out;
}

inline std::string table_to_text(const Table& t) {
  std::size_t first = t.corner.size();
  for (const auto& r : t.rows) first = std::max(first, r.size());
  std::vector<std::size_t> widths;
  for (const auto& c : t.columns) {
    std::size_t w = c.size();
    for (const auto& r : t.rows) w = std::max(w, t.cell(r, c).size());
    widths.push_back(w);
  }
  auto pad_right = [](const std::string& s, std::size_t w) { return s + std::string(w - s.size(), ' '); };
  auto pad_left = [](const std::string& s, std::size_t w) { return std::string(w - s.size(), ' ') + s; };
  std::string out = pad_right(t.corner, first);
  for (std::size_t i = 0; i < t.columns.size(); ++i) out += "  " + pad_left(t.columns[i], widths[i]);
  out += "\n";
  for (const auto& r : t.rows) {
    out += pad_right(r, first);
    for (std::size_t i = 0; i < t.columns.size(); ++i) out += "  " + pad_left(t.cell(r, t.columns[i]), widths[i]);
    out += "\n";
  }
  return out;
}

}  // namespace beamtrain::cli
