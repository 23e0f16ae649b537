#pragma once

// Grid sweeps. A sweep file is a config file whose "sweep.<key>=a,b,..." lines
// define axes; every other line is shared by all cells. "seeds=1,2,3" lists the
// seeds each cell is trained with (default 1,2,3).
//
// Completed runs are appended to {out}/journal.csv as they finish, so an
// interrupted sweep resumes by skipping run_ids already present there.
// {out}/results.csv is rebuilt from the journal in a fixed order.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "beamtrain/cli/config.hpp"
#include "beamtrain/cli/run.hpp"

namespace beamtrain::cli {

struct SweepAxis {
  std::string key;
  std::vector<std::string> values;
};

struct SweepCell {
  std::size_t index = 0;
  std::string label;  // "key=value;key=value", or "base" without axes
  FlatConfig config;  // without the seed
};

struct SweepSpec {
  FlatConfig base;
  std::vector<SweepAxis> axes;
  std::vector<std::uint64_t> seeds{1, 2, 3};

  static SweepSpec from_flat(const FlatConfig& flat) {
    SweepSpec spec;
    for (const auto& key : flat.keys()) {
      const auto& value = flat.require(key);
      if (key == "seeds") {
        spec.seeds.clear();
        for (const auto& s : split(value, ',')) spec.seeds.push_back(detail::parse_number<std::uint64_t>("seeds", s));
      } else if (key.starts_with("sweep.")) {
        SweepAxis axis{key.substr(6), split(value, ',')};
        if (axis.key == "seed") throw UsageError("use 'seeds=' rather than a seed axis");
        if (axis.values.empty() || std::any_of(axis.values.begin(), axis.values.end(),
                                               [](const std::string& v) { return v.empty(); })) {
          throw UsageError("sweep axis '" + axis.key + "' has an empty value");
        }
        spec.axes.push_back(std::move(axis));
      } else {
        spec.base.set(key, value);
      }
    }
    if (spec.seeds.empty()) throw UsageError("sweep needs at least one seed");
    for (const auto& a : spec.axes) {
      if (spec.base.has(a.key)) throw UsageError("key '" + a.key + "' is both fixed and swept");
    }
    return spec;
  }

  static SweepSpec load(const std::string& path) { return from_flat(FlatConfig::load(path)); }

  /// Cartesian product, first axis varying slowest.
  std::vector<SweepCell> cells() const {
    std::vector<SweepCell> out;
    std::vector<std::size_t> pos(axes.size(), 0);
    while (true) {
      SweepCell cell;
      cell.index = out.size();
      cell.config = base;
      for (std::size_t a = 0; a < axes.size(); ++a) {
        const auto& v = axes[a].values[pos[a]];
        cell.config.set(axes[a].key, v);
        cell.label += (a ? ";" : "") + axes[a].key + "=" + v;
      }
      if (axes.empty()) cell.label = "base";
      out.push_back(std::move(cell));
      std::size_t a = axes.size();
      while (a > 0) {
        --a;
        if (++pos[a] < axes[a].values.size()) break;
        pos[a] = 0;
        if (a == 0) return out;
      }
      if (axes.empty()) return out;
    }
  }
};

/// One training run of one cell.
struct SweepRun {
  const SweepCell* cell = nullptr;
  std::uint64_t seed = 0;
  ExperimentConfig config;
  std::string run_id;
};

inline std::vector<SweepRun> plan_runs(const SweepSpec& spec, const std::vector<SweepCell>& cells) {
  std::vector<SweepRun> runs;
  for (const auto& cell : cells) {
    for (auto seed : spec.seeds) {
      FlatConfig flat = cell.config;
      flat.set("seed", std::to_string(seed));
      SweepRun r;
      r.cell = &cell;
      r.seed = seed;
      try {
        r.config = experiment_from_flat(flat);
      } catch (const UsageError& e) {
        throw UsageError("sweep cell '" + cell.label + "': " + e.what());
      }
      r.run_id = run_id(r.config);
      runs.push_back(std::move(r));
    }
  }
  return runs;
}

/// Journal line: "run_id,best_epoch,k:acc,k:acc,...,end". Lines without the
/// trailing "end" (a torn write from a killed process) are ignored.
struct JournalEntry {
  std::size_t k_eval = 0;
  double dev_acc = 0.0;
  std::size_t best_epoch = 0;
};

inline constexpr const char* kJournalName = "journal.csv";
inline constexpr const char* kResultsName = "results.csv";

inline std::string format_journal_line(const std::string& id, const RunResult& result) {
  std::string line = id + "," + std::to_string(result.best_epoch);
  for (const auto& [k, acc] : result.final_acc) {
    char buf[64];
    std::snprintf(buf, sizeof buf, ",%zu:%.17g", k, acc);
    line += buf;
  }
  return line + ",end\n";
}

inline std::map<std::string, std::vector<JournalEntry>> read_journal(const fs::path& path) {
  std::map<std::string, std::vector<JournalEntry>> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  while (std::getline(in, line)) {
    auto f = split(line, ',');
    if (f.size() < 4 || f.back() != "end") continue;
    try {
      std::vector<JournalEntry> entries;
      const auto epoch = detail::parse_number<std::size_t>("best_epoch", f[1]);
      for (std::size_t i = 2; i + 1 < f.size(); ++i) {
        auto colon = f[i].find(':');
        if (colon == std::string::npos) throw UsageError("bad journal entry");
        entries.push_back({detail::parse_number<std::size_t>("k_eval", f[i].substr(0, colon)),
                           detail::parse_number<double>("dev_acc", f[i].substr(colon + 1)), epoch});
      }
      out[f[0]] = std::move(entries);
    } catch (const UsageError&) {
    }
  }
  return out;
}

inline std::string format_accuracy(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline constexpr const char* kResultsHeader =
    "row_type,cell,run_id,model,strategy,loss,k,accumulate,update_mode,seed,k_eval,dev_acc,dev_acc_std,n_seeds,best_epoch";

/// Raw rows per (cell, seed, k_eval) followed by one mean row per (cell, k_eval).
/// Aggregates are the mean and population standard deviation over seeds.
inline std::string format_results(const std::vector<SweepCell>& cells, const std::vector<SweepRun>& runs,
                                  const std::map<std::string, std::vector<JournalEntry>>& journal) {
  std::string out = std::string(kResultsHeader) + "\n";
  auto describe = [](const ExperimentConfig& c) {
    const auto& r = c.run;
    return std::string(to_string(r.model)) + "," + std::string(to_string(r.rollout.strategy)) + "," +
           std::string(to_string(r.rollout.loss)) + "," + std::to_string(r.rollout.k) + "," +
           (r.rollout.accumulate ? "true" : "false") + "," + std::string(to_string(r.rollout.update_mode));
  };
  std::vector<std::string> means;
  for (const auto& cell : cells) {
    std::map<std::size_t, std::vector<double>> by_k;
    const ExperimentConfig* first = nullptr;
    for (const auto& run : runs) {
      if (run.cell != &cell) continue;
      auto it = journal.find(run.run_id);
      if (it == journal.end()) continue;
      if (!first) first = &run.config;
      auto entries = it->second;
      std::sort(entries.begin(), entries.end(), [](auto& a, auto& b) { return a.k_eval < b.k_eval; });
      for (const auto& e : entries) {
        out += "run," + cell.label + "," + run.run_id + "," + describe(run.config) + "," + std::to_string(run.seed) +
               "," + std::to_string(e.k_eval) + "," + format_accuracy(e.dev_acc) + ",,1," +
               std::to_string(e.best_epoch) + "\n";
        by_k[e.k_eval].push_back(e.dev_acc);
      }
    }
    for (const auto& [k, accs] : by_k) {
      double mean = 0.0;
      for (double a : accs) mean += a;
      mean /= static_cast<double>(accs.size());
      double var = 0.0;
      for (double a : accs) var += (a - mean) * (a - mean);
      var /= static_cast<double>(accs.size());
      means.push_back("mean," + cell.label + ",," + describe(*first) + ",," + std::to_string(k) + "," +
                      format_accuracy(mean) + "," + format_accuracy(std::sqrt(var)) + "," +
                      std::to_string(accs.size()) + ",\n");
    }
  }
  for (const auto& m : means) out += m;
  return out;
}

struct SweepOptions {
  fs::path out_dir;
  std::size_t workers = 1;
  std::size_t max_runs = 0;  // 0 = no limit; otherwise stop after this many new runs
};

struct SweepSummary {
  std::size_t total = 0;
  std::size_t skipped = 0;
  std::size_t executed = 0;
  std::size_t remaining = 0;
  fs::path results;
};

inline SweepSummary run_sweep(const SweepSpec& spec, const SweepOptions& opt) {
  fs::create_directories(opt.out_dir);
  const auto cells = spec.cells();
  const auto runs = plan_runs(spec, cells);
  const fs::path journal_path = opt.out_dir / kJournalName;
  auto journal = read_journal(journal_path);

  std::vector<const SweepRun*> todo;
  for (const auto& r : runs) {
    if (!journal.contains(r.run_id)) todo.push_back(&r);
  }
  SweepSummary summary;
  summary.total = runs.size();
  summary.skipped = runs.size() - todo.size();
  if (opt.max_runs > 0 && todo.size() > opt.max_runs) todo.resize(opt.max_runs);

  // Cells sharing a data source share the generated corpus.
  std::map<std::string, Dataset> data_cache;
  std::mutex data_mutex;
  auto dataset_for = [&](const ExperimentConfig& cfg) -> const Dataset& {
    const auto canon = canonicalize(cfg);
    std::string key;
    for (const auto& line : split(canon, '\n')) {
      if (line.starts_with("synth.") || line.starts_with("train_path=") || line.starts_with("dev_path=")) {
        key += line + "\n";
      }
    }
    std::lock_guard lock(data_mutex);
    auto it = data_cache.find(key);
    if (it == data_cache.end()) it = data_cache.emplace(key, prepare_data(cfg)).first;
    return it->second;
  };

  // A torn last line must not swallow the next entry.
  bool needs_newline = false;
  if (std::ifstream prev(journal_path, std::ios::binary); prev && prev.seekg(0, std::ios::end).tellg() > 0) {
    prev.seekg(-1, std::ios::end);
    needs_newline = prev.get() != '\n';
  }
  std::ofstream journal_out(journal_path, std::ios::app);
  if (!journal_out) throw DataError("cannot write " + journal_path.string());
  if (needs_newline) journal_out << '\n';
  std::mutex journal_mutex;
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto worker = [&]() {
    while (true) {
      {
        std::lock_guard lock(failure_mutex);
        if (failure) return;
      }
      const std::size_t i = next.fetch_add(1);
      if (i >= todo.size()) return;
      const SweepRun& run = *todo[i];
      try {
        const auto artifacts = execute_run(run.config, opt.out_dir, dataset_for(run.config));
        const auto line = format_journal_line(run.run_id, artifacts.result);
        std::lock_guard lock(journal_mutex);
        journal_out << line << std::flush;
        auto& entries = journal[run.run_id];
        for (const auto& [k, acc] : artifacts.result.final_acc) entries.push_back({k, acc, artifacts.result.best_epoch});
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  const std::size_t n_workers = std::max<std::size_t>(1, std::min(opt.workers, todo.size()));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  journal_out.close();
  if (failure) std::rethrow_exception(failure);

  summary.executed = todo.size();
  summary.remaining = summary.total - summary.skipped - summary.executed;
  summary.results = opt.out_dir / kResultsName;
  write_atomically(summary.results, format_results(cells, runs, journal));
  return summary;
}

}  // namespace beamtrain::cli
