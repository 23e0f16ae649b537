// beamtrain command-line tool: synth, train, decode, sweep, report, trace.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <CLI11.hpp>

#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include "beamtrain/cli/config.hpp"
#include "beamtrain/cli/report.hpp"
#include "beamtrain/cli/run.hpp"
#include "beamtrain/cli/sweep.hpp"

namespace bt = beamtrain;
namespace cli = beamtrain::cli;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct Options {
  std::string config;
  std::string sweep;
  std::string out = ".";
  std::string checkpoint;
  std::string input;
  std::string results;
  std::string layout = "strategies_by_k";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> k;
  std::size_t index = 0;
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  std::size_t max_runs = 0;
};

cli::FlatConfig load_config(const Options& o) {
  auto flat = cli::FlatConfig::load(o.config);
  if (o.seed) flat.set("seed", std::to_string(*o.seed));
  return flat;
}

int cmd_synth(const Options& o) {
  auto cfg = cli::experiment_from_flat(load_config(o));
  if (!cfg.uses_synthetic()) throw bt::UsageError("synth needs a config without train_path/dev_path");
  auto raw = bt::generate_synthetic_raw(cfg.synth, cfg.n_train + cfg.n_dev);
  std::span<const bt::RawSentence> all(raw);
  fs::create_directories(o.out);
  const auto train = fs::path(o.out) / "train.tsv";
  const auto dev = fs::path(o.out) / "dev.tsv";
  bt::write_corpus(train.string(), all.first(cfg.n_train));
  bt::write_corpus(dev.string(), all.subspan(cfg.n_train));
  std::cout << "wrote " << train.string() << " (" << cfg.n_train << " sentences)\n"
            << "wrote " << dev.string() << " (" << cfg.n_dev << " sentences)\n";
  return kExitOk;
}

int cmd_train(const Options& o) {
  auto cfg = cli::experiment_from_flat(load_config(o));
  auto a = cli::execute_run(cfg, o.out);
  std::cout << "run_id " << a.run_id << "\n"
            << "best_epoch " << a.result.best_epoch << "\n"
            << "best_dev_acc " << a.result.best_dev_acc << "\n";
  for (const auto& [k, acc] : a.result.final_acc) std::cout << "dev_acc@" << k << " " << acc << "\n";
  std::cout << "checkpoint " << a.checkpoint.string() << "\n"
            << "metrics " << a.metrics.string() << "\n";
  return kExitOk;
}

// Sentences to decode or trace: --input corpus file, else the dev split of --config.
std::vector<bt::RawSentence> input_sentences(const Options& o) {
  if (!o.input.empty()) return bt::read_raw_corpus(o.input);
  if (o.config.empty()) throw bt::UsageError("need --input or --config to choose sentences");
  auto cfg = cli::experiment_from_flat(load_config(o));
  if (!cfg.uses_synthetic()) return bt::read_raw_corpus(*cfg.dev_path);
  auto raw = bt::generate_synthetic_raw(cfg.synth, cfg.n_train + cfg.n_dev);
  return {raw.begin() + static_cast<std::ptrdiff_t>(cfg.n_train), raw.end()};
}

int cmd_decode(const Options& o) {
  if (o.checkpoint.empty()) throw bt::UsageError("decode needs --checkpoint");
  auto model = cli::load_model(o.checkpoint);
  const std::size_t k = o.k.value_or(model.k_train);
  if (k < 1) throw bt::UsageError("--k must be >= 1");
  auto raw = input_sentences(o);
  std::vector<bt::RawSentence> predicted;
  std::size_t correct = 0, total = 0;
  for (const auto& r : raw) {
    auto sent = model.vocab.encode(r);
    auto labels = bt::decode(model.scorer, sent, k, model.accumulate);
    bt::RawSentence p{r.words, r.pos, {}};
    for (std::size_t i = 0; i < labels.size(); ++i) {
      p.labels.push_back(model.vocab.decode_label(labels[i]));
      correct += labels[i] == sent.labels[i];
      ++total;
    }
    predicted.push_back(std::move(p));
  }
  if (o.out == "-") {
    bt::write_corpus(std::cout, predicted);
  } else {
    fs::create_directories(o.out);
    const auto path = fs::path(o.out) / "predictions.tsv";
    bt::write_corpus(path.string(), predicted);
    std::cout << "predictions " << path.string() << "\n";
  }
  std::cerr << "accuracy " << (total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0) << " (k=" << k
            << ", " << raw.size() << " sentences)\n";
  return kExitOk;
}

int cmd_trace(const Options& o) {
  if (o.checkpoint.empty()) throw bt::UsageError("trace needs --checkpoint");
  auto model = cli::load_model(o.checkpoint);
  const std::size_t k = o.k.value_or(model.k_train);
  if (k < 1) throw bt::UsageError("--k must be >= 1");
  auto raw = input_sentences(o);
  if (o.index >= raw.size()) {
    throw bt::UsageError("--index " + std::to_string(o.index) + " out of range (" + std::to_string(raw.size()) +
                         " sentences)");
  }
  auto sent = model.vocab.encode(raw[o.index]);
  auto result = bt::decode_with_trace(model.scorer, sent, k, model.accumulate, sent.labels);
  std::cout << cli::format_trace_csv(result.trace);
  return kExitOk;
}

int cmd_sweep(const Options& o) {
  auto spec = cli::SweepSpec::load(o.sweep);
  cli::SweepOptions opt{o.out, o.workers, o.max_runs};
  auto s = cli::run_sweep(spec, opt);
  std::cout << "runs " << s.total << " (skipped " << s.skipped << ", executed " << s.executed << ", remaining "
            << s.remaining << ")\n"
            << "results " << s.results.string() << "\n";
  return kExitOk;
}

int cmd_report(const Options& o) {
  auto rows = cli::read_results(o.results);
  auto table = cli::build_table(rows, o.layout);
  std::cout << cli::table_to_text(table);
  if (o.out != "-") {
    fs::create_directories(o.out);
    const auto path = fs::path(o.out) / ("report_" + o.layout + ".csv");
    cli::write_text(path, cli::table_to_csv(table));
    std::cerr << "wrote " << path.string() << "\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Beam-aware training for sequence labelling"};
  app.require_subcommand(1);
  Options o;

  auto* synth = app.add_subcommand("synth", "Write synthetic train/dev corpora");
  synth->add_option("--config", o.config, "Config file with synth.* keys")->required();
  synth->add_option("--out", o.out, "Output directory");
  synth->add_option("--seed", o.seed, "Override the run seed");

  auto* train = app.add_subcommand("train", "Train one configuration");
  train->add_option("--config", o.config, "Config file")->required();
  train->add_option("--out", o.out, "Output directory");
  train->add_option("--seed", o.seed, "Override the run seed");

  auto* decode = app.add_subcommand("decode", "Decode sentences with a checkpoint");
  decode->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  decode->add_option("--input", o.input, "Corpus file to decode");
  decode->add_option("--config", o.config, "Config whose dev split is decoded when --input is absent");
  decode->add_option("--k", o.k, "Beam size (default: training beam size)");
  decode->add_option("--out", o.out, "Output directory, or - for stdout");

  auto* trace = app.add_subcommand("trace", "Per-step beam trace for one sentence");
  trace->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  trace->add_option("--input", o.input, "Corpus file");
  trace->add_option("--config", o.config, "Config whose dev split is used when --input is absent");
  trace->add_option("--index", o.index, "0-based sentence index");
  trace->add_option("--k", o.k, "Beam size (default: training beam size)");

  auto* sweep = app.add_subcommand("sweep", "Train every cell of a grid over several seeds");
  sweep->add_option("--sweep", o.sweep, "Sweep file")->required();
  sweep->add_option("--out", o.out, "Output directory");
  sweep->add_option("--workers", o.workers, "Parallel runs")->check(CLI::PositiveNumber);
  sweep->add_option("--max-runs", o.max_runs, "Stop after this many new runs (0 = all)");

  auto* report = app.add_subcommand("report", "Format sweep results as a table");
  report->add_option("results", o.results, "results.csv from a sweep")->required();
  report->add_option("--layout", o.layout, "Table layout")
      ->check(CLI::IsMember({"strategies_by_k", "losses_by_k", "accumulate_by_k", "update_mode_by_k", "models_by_k"}));
  report->add_option("--out", o.out, "Directory for the CSV table, or - to skip it");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(o);
    if (*train) return cmd_train(o);
    if (*decode) return cmd_decode(o);
    if (*trace) return cmd_trace(o);
    if (*sweep) return cmd_sweep(o);
    if (*report) return cmd_report(o);
  } catch (const bt::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const bt::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const bt::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
