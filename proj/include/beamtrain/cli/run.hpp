#pragma once

// One training run and its on-disk artifacts:
//   {run_id}.best.ckpt    best-dev-epoch parameters
//   {run_id}.vocab        vocabulary used to encode the data
//   {run_id}.metrics.csv  one row per epoch
//   {run_id}.config       canonical configuration

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "beamtrain/cli/config.hpp"
#include "beamtrain/train.hpp"

namespace beamtrain::cli {

namespace fs = std::filesystem;

inline constexpr const char* kMetricsHeader = "run_id,epoch,train_acc,dev_acc,lr_last,seconds";

inline std::string format_metrics_row(const std::string& id, const EpochMetrics& m) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s,%zu,%.6f,%.6f,%.6e,%.3f", id.c_str(), m.epoch, m.train_acc, m.dev_acc, m.lr_last,
                m.seconds);
  return buf;
}

struct RunArtifacts {
  std::string run_id;
  fs::path checkpoint;
  fs::path vocab;
  fs::path metrics;
  RunResult result;
};

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

/// Files are written to a temporary name and renamed, so an interrupted run
/// never leaves a partial checkpoint behind.
inline void write_atomically(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".tmp";
  write_text(tmp, text);
  fs::rename(tmp, path);
}

inline RunArtifacts execute_run(const ExperimentConfig& cfg, const fs::path& out_dir, const Dataset& data) {
  fs::create_directories(out_dir);
  RunArtifacts a;
  a.run_id = run_id(cfg);
  a.checkpoint = out_dir / (a.run_id + ".best.ckpt");
  a.vocab = out_dir / (a.run_id + ".vocab");
  a.metrics = out_dir / (a.run_id + ".metrics.csv");

  std::string metrics = std::string(kMetricsHeader) + "\n";
  auto on_epoch = [&](const EpochMetrics& m) { metrics += format_metrics_row(a.run_id, m) + "\n"; };
  a.result = train_run(cfg.run, data.train, data.dev, model_config(cfg, data.vocab), on_epoch);

  std::ostringstream vocab;
  data.vocab.save(vocab);
  write_atomically(a.vocab, vocab.str());
  std::ostringstream ckpt;
  a.result.best_model.save(ckpt, {{"run_id", a.run_id},
                                  {"accumulate", cfg.run.rollout.accumulate ? "true" : "false"},
                                  {"k_train", std::to_string(cfg.run.rollout.k)},
                                  {"best_epoch", std::to_string(a.result.best_epoch)},
                                  {"vocab", a.vocab.filename().string()}});
  write_atomically(a.checkpoint, ckpt.str());
  write_atomically(out_dir / (a.run_id + ".config"), canonicalize(cfg));
  write_atomically(a.metrics, metrics);
  return a;
}

inline RunArtifacts execute_run(const ExperimentConfig& cfg, const fs::path& out_dir) {
  return execute_run(cfg, out_dir, prepare_data(cfg));
}

/// A checkpoint plus everything needed to decode with it.
struct LoadedModel {
  Scorer scorer;
  Vocab vocab;
  bool accumulate = true;
  std::size_t k_train = 1;
};

inline LoadedModel load_model(const fs::path& checkpoint) {
  std::ifstream in(checkpoint);
  if (!in) throw DataError("cannot open checkpoint " + checkpoint.string());
  auto ck = ndiff::load_checkpoint(in, checkpoint.string());
  LoadedModel m;
  m.scorer = Scorer::from_checkpoint(ck);
  auto meta = [&](const std::string& key) -> std::string {
    auto it = ck.meta.find(key);
    if (it == ck.meta.end()) throw DataError("checkpoint is missing meta '" + key + "'");
    return it->second;
  };
  m.accumulate = meta("accumulate") == "true";
  m.k_train = static_cast<std::size_t>(std::stoull(meta("k_train")));
  m.vocab = Vocab::load((checkpoint.parent_path() / meta("vocab")).string());
  if (m.vocab.word_count() != m.scorer.config().word_count || m.vocab.pos_count() != m.scorer.config().pos_count ||
      m.vocab.label_count() != m.scorer.config().label_count) {
    throw DataError("vocabulary does not match checkpoint " + checkpoint.string());
  }
  return m;
}

inline constexpr const char* kTraceHeader = "step,beam_cost,transition_cost,gold_in_beam,top_score,gold_rank";

inline std::string format_trace_csv(std::span<const TransitionTrace> trace) {
  std::string out = std::string(kTraceHeader) + "\n";
  for (const auto& t : trace) out += format_trace(t) + "\n";
  return out;
}

}  // namespace beamtrain::cli
