#pragma once

// Flat "key=value" experiment configuration.
//
//   model=simplified          # main | simplified
//   loss=log_neighbors
//   strategy=continue
//   k=8
//   k_eval=1,2,4,8            # optional, defaults to k
//   synth.noise_rate=0.05     # synthetic data, or train_path/dev_path
//
// Lines starting with '#' and blank lines are ignored. Unknown keys are rejected.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "beamtrain/corpus.hpp"
#include "beamtrain/errors.hpp"
#include "beamtrain/train.hpp"

namespace beamtrain::cli {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

/// Ordered key=value map as read from a config file.
class FlatConfig {
 public:
  static FlatConfig parse(std::istream& in, const std::string& source = "<config>") {
    FlatConfig cfg;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      auto text = trim(line);
      if (text.empty()) continue;
      auto eq = text.find('=');
      if (eq == std::string::npos) throw UsageError(source + ":" + std::to_string(line_no) + ": expected key=value");
      auto key = trim(std::string_view(text).substr(0, eq));
      auto value = trim(std::string_view(text).substr(eq + 1));
      if (key.empty()) throw UsageError(source + ":" + std::to_string(line_no) + ": empty key");
      if (cfg.values_.contains(key)) {
        throw UsageError(source + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
      }
      cfg.set(key, value);
    }
    return cfg;
  }

  static FlatConfig parse_string(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  static FlatConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file " + path);
    return parse(in, path);
  }

  void set(const std::string& key, const std::string& value) {
    if (!values_.contains(key)) order_.push_back(key);
    values_[key] = value;
  }

  void erase(const std::string& key) {
    values_.erase(key);
    order_.erase(std::remove(order_.begin(), order_.end(), key), order_.end());
  }

  bool has(const std::string& key) const { return values_.contains(key); }

  const std::string& require(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw UsageError("missing config key '" + key + "'");
    return it->second;
  }

  std::optional<std::string> get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  const std::vector<std::string>& keys() const noexcept { return order_; }

  std::string to_string() const {
    std::string out;
    for (const auto& k : order_) out += k + "=" + values_.at(k) + "\n";
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

namespace detail {

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw UsageError("config key '" + key + "': cannot parse '" + text + "'");
  }
  return value;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "on") return true;
  if (text == "false" || text == "0" || text == "off") return false;
  throw UsageError("config key '" + key + "': expected true/false, got '" + text + "'");
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Everything one training run needs: hyperparameters plus the data source.
struct ExperimentConfig {
  RunConfig run;
  std::optional<std::string> train_path;
  std::optional<std::string> dev_path;
  SynthSpec synth;
  std::size_t n_train = 500;
  std::size_t n_dev = 300;

  bool uses_synthetic() const noexcept { return !train_path.has_value(); }
};

inline const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "model", "loss", "strategy", "k", "k_eval", "accumulate", "update_mode", "epochs", "lr_start", "lr_end",
      "seed", "margin_skip_gold", "stop_gradient_prefix", "word_dim", "pos_dim", "label_dim", "hidden_dim",
      "train_path", "dev_path", "synth.vocab_size", "synth.num_modes", "synth.labels_per_token", "synth.min_len",
      "synth.max_len", "synth.reveal_fraction", "synth.noise_rate", "synth.seed", "synth.n_train", "synth.n_dev",
  };
  return keys;
}

inline std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  for (const auto& part : split(text, ',')) out.push_back(detail::parse_number<std::size_t>(key, part));
  return out;
}

inline ExperimentConfig experiment_from_flat(const FlatConfig& flat) {
  using detail::parse_bool;
  using detail::parse_number;
  for (const auto& key : flat.keys()) {
    if (!known_keys().contains(key)) throw UsageError("unknown config key '" + key + "'");
  }
  ExperimentConfig cfg;
  auto& run = cfg.run;
  run.model = parse_model_variant(flat.require("model"));
  run.rollout.loss = parse_loss_kind(flat.require("loss"));
  run.rollout.strategy = parse_strategy(flat.require("strategy"));
  run.rollout.k = parse_number<std::size_t>("k", flat.require("k"));

  auto opt = [&](const std::string& key, auto apply) {
    if (auto v = flat.get(key)) apply(*v);
  };
  opt("k_eval", [&](const std::string& v) { run.k_eval = parse_size_list("k_eval", v); });
  opt("accumulate", [&](const std::string& v) { run.rollout.accumulate = parse_bool("accumulate", v); });
  opt("update_mode", [&](const std::string& v) { run.rollout.update_mode = parse_update_mode(v); });
  opt("epochs", [&](const std::string& v) { run.epochs = parse_number<std::size_t>("epochs", v); });
  opt("lr_start", [&](const std::string& v) { run.lr_start = parse_number<double>("lr_start", v); });
  opt("lr_end", [&](const std::string& v) { run.lr_end = parse_number<double>("lr_end", v); });
  opt("seed", [&](const std::string& v) { run.seed = parse_number<std::uint64_t>("seed", v); });
  opt("margin_skip_gold",
      [&](const std::string& v) { run.rollout.loss_options.margin_skip_gold = parse_bool("margin_skip_gold", v); });
  opt("stop_gradient_prefix",
      [&](const std::string& v) { run.rollout.stop_gradient_prefix = parse_bool("stop_gradient_prefix", v); });
  opt("word_dim", [&](const std::string& v) { run.dims.word_dim = parse_number<std::size_t>("word_dim", v); });
  opt("pos_dim", [&](const std::string& v) { run.dims.pos_dim = parse_number<std::size_t>("pos_dim", v); });
  opt("label_dim", [&](const std::string& v) { run.dims.label_dim = parse_number<std::size_t>("label_dim", v); });
  opt("hidden_dim", [&](const std::string& v) { run.dims.hidden_dim = parse_number<std::size_t>("hidden_dim", v); });

  cfg.train_path = flat.get("train_path");
  cfg.dev_path = flat.get("dev_path");
  if (cfg.train_path && !cfg.dev_path) throw UsageError("missing config key 'dev_path'");
  if (cfg.dev_path && !cfg.train_path) throw UsageError("missing config key 'train_path'");
  auto& s = cfg.synth;
  opt("synth.vocab_size", [&](const std::string& v) { s.vocab_size = parse_number<int>("synth.vocab_size", v); });
  opt("synth.num_modes", [&](const std::string& v) { s.num_modes = parse_number<int>("synth.num_modes", v); });
  opt("synth.labels_per_token",
      [&](const std::string& v) { s.labels_per_token = parse_number<int>("synth.labels_per_token", v); });
  opt("synth.min_len", [&](const std::string& v) { s.min_len = parse_number<int>("synth.min_len", v); });
  opt("synth.max_len", [&](const std::string& v) { s.max_len = parse_number<int>("synth.max_len", v); });
  opt("synth.reveal_fraction",
      [&](const std::string& v) { s.reveal_fraction = parse_number<double>("synth.reveal_fraction", v); });
  opt("synth.noise_rate", [&](const std::string& v) { s.noise_rate = parse_number<double>("synth.noise_rate", v); });
  opt("synth.seed", [&](const std::string& v) { s.seed = parse_number<std::uint64_t>("synth.seed", v); });
  opt("synth.n_train", [&](const std::string& v) { cfg.n_train = parse_number<std::size_t>("synth.n_train", v); });
  opt("synth.n_dev", [&](const std::string& v) { cfg.n_dev = parse_number<std::size_t>("synth.n_dev", v); });
  if (cfg.uses_synthetic()) {
    s.validate();
    if (cfg.n_train < 1 || cfg.n_dev < 1) throw UsageError("synth.n_train and synth.n_dev must be >= 1");
  }
  run.validate();
  return cfg;
}

/// Every effective setting, one "key=value" per line in key order. Equal
/// experiments (including defaults spelled out or not) canonicalize equally.
inline std::string canonicalize(const ExperimentConfig& cfg) {
  const auto& r = cfg.run;
  std::map<std::string, std::string> kv;
  kv["model"] = to_string(r.model);
  kv["loss"] = to_string(r.rollout.loss);
  kv["strategy"] = to_string(r.rollout.strategy);
  kv["k"] = std::to_string(r.rollout.k);
  std::string ks;
  for (auto k : r.eval_beams()) ks += (ks.empty() ? "" : ",") + std::to_string(k);
  kv["k_eval"] = ks;
  kv["accumulate"] = r.rollout.accumulate ? "true" : "false";
  kv["update_mode"] = to_string(r.rollout.update_mode);
  kv["epochs"] = std::to_string(r.epochs);
  kv["lr_start"] = detail::format_double(r.lr_start);
  kv["lr_end"] = detail::format_double(r.lr_end);
  kv["seed"] = std::to_string(r.seed);
  kv["margin_skip_gold"] = r.rollout.loss_options.margin_skip_gold ? "true" : "false";
  kv["stop_gradient_prefix"] = r.rollout.stop_gradient_prefix ? "true" : "false";
  kv["word_dim"] = std::to_string(r.dims.word_dim);
  kv["pos_dim"] = std::to_string(r.dims.pos_dim);
  kv["label_dim"] = std::to_string(r.dims.label_dim);
  kv["hidden_dim"] = std::to_string(r.dims.hidden_dim);
  if (cfg.uses_synthetic()) {
    const auto& s = cfg.synth;
    kv["synth.vocab_size"] = std::to_string(s.vocab_size);
    kv["synth.num_modes"] = std::to_string(s.num_modes);
    kv["synth.labels_per_token"] = std::to_string(s.labels_per_token);
    kv["synth.min_len"] = std::to_string(s.min_len);
    kv["synth.max_len"] = std::to_string(s.max_len);
    kv["synth.reveal_fraction"] = detail::format_double(s.reveal_fraction);
    kv["synth.noise_rate"] = detail::format_double(s.noise_rate);
    kv["synth.seed"] = std::to_string(s.seed);
    kv["synth.n_train"] = std::to_string(cfg.n_train);
    kv["synth.n_dev"] = std::to_string(cfg.n_dev);
  } else {
    kv["train_path"] = *cfg.train_path;
    kv["dev_path"] = *cfg.dev_path;
  }
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

/// 64-bit FNV-1a, hex encoded.
inline std::string stable_hash(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string run_id(const ExperimentConfig& cfg) { return stable_hash(canonicalize(cfg)); }

struct Dataset {
  std::vector<Sentence> train;
  std::vector<Sentence> dev;
  Vocab vocab;
};

/// Synthetic data is generated as one stream and split train-first.
inline Dataset prepare_data(const ExperimentConfig& cfg) {
  Dataset d;
  if (cfg.uses_synthetic()) {
    auto raw = generate_synthetic_raw(cfg.synth, cfg.n_train + cfg.n_dev);
    std::span<const RawSentence> all(raw);
    d.vocab = build_vocab(all.first(cfg.n_train));
    d.train = encode_corpus(all.first(cfg.n_train), d.vocab);
    d.dev = encode_corpus(all.subspan(cfg.n_train), d.vocab);
  } else {
    auto [train, vocab] = load_corpus(*cfg.train_path);
    d.train = std::move(train);
    d.vocab = std::move(vocab);
    d.dev = load_corpus(*cfg.dev_path, d.vocab).first;
  }
  if (d.train.empty() || d.dev.empty()) throw DataError("training and development sets must be nonempty");
  return d;
}

inline ModelConfig model_config(const ExperimentConfig& cfg, const Vocab& vocab) {
  ModelConfig mc;
  mc.variant = cfg.run.model;
  mc.dims = cfg.run.dims;
  mc.word_count = vocab.word_count();
  mc.pos_count = vocab.pos_count();
  mc.label_count = vocab.label_count();
  return mc;
}

}  // namespace beamtrain::cli
