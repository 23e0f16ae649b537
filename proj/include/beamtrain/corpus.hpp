#pragma once

// Sequence-labeling corpora: the three-column TSV format, vocabularies with
// frequency-based UNK replacement, and a synthetic latent-mode task.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "beamtrain/errors.hpp"

namespace beamtrain {

/// An encoded sentence. All three columns have the same length.
struct Sentence {
  std::vector<int> tokens;
  std::vector<int> pos_tags;
  std::vector<int> labels;

  std::size_t size() const noexcept { return tokens.size(); }
};

/// A sentence as read from disk, before encoding.
struct RawSentence {
  std::vector<std::string> words;
  std::vector<std::string> pos;
  std::vector<std::string> labels;

  std::size_t size() const noexcept { return words.size(); }
};

/// Bidirectional symbol <-> id map. Ids are dense and assigned in insertion order.
class SymbolTable {
 public:
  int add(const std::string& symbol) {
    auto [it, inserted] = ids_.try_emplace(symbol, static_cast<int>(symbols_.size()));
    if (inserted) symbols_.push_back(symbol);
    return it->second;
  }

  std::optional<int> find(std::string_view symbol) const {
    auto it = ids_.find(std::string(symbol));
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& symbol(int id) const {
    require(id >= 0 && static_cast<std::size_t>(id) < symbols_.size(), "symbol id out of range");
    return symbols_[static_cast<std::size_t>(id)];
  }

  std::size_t size() const noexcept { return symbols_.size(); }
  const std::vector<std::string>& symbols() const noexcept { return symbols_; }

 private:
  std::unordered_map<std::string, int> ids_;
  std::vector<std::string> symbols_;
};

/// Word, POS and label vocabularies plus the training word-frequency table.
///
/// Words seen at most once in training encode to UNK, as does any word never
/// seen in training. Unseen POS tags map to the POS UNK entry. Labels are kept
/// verbatim and an unseen label is a DataError.
class Vocab {
 public:
  static constexpr int kUnk = 0;
  static constexpr std::string_view kUnkSymbol = "<unk>";

  Vocab() {
    words_.add(std::string(kUnkSymbol));
    pos_.add(std::string(kUnkSymbol));
  }

  static Vocab build(std::span<const RawSentence> train) {
    Vocab vocab;
    std::vector<std::string> order;
    for (const auto& sent : train) {
      for (const auto& w : sent.words) {
        if (vocab.freq_[w]++ == 0) order.push_back(w);
      }
      for (const auto& p : sent.pos) vocab.pos_.add(p);
      for (const auto& l : sent.labels) vocab.labels_.add(l);
    }
    for (const auto& w : order) {
      if (vocab.freq_[w] > 1) vocab.words_.add(w);
    }
    vocab.freq_order_ = std::move(order);
    return vocab;
  }

  int encode_word(std::string_view word) const { return words_.find(word).value_or(kUnk); }
  int encode_pos(std::string_view tag) const { return pos_.find(tag).value_or(kUnk); }

  int encode_label(std::string_view label) const {
    auto id = labels_.find(label);
    if (!id) throw DataError("label '" + std::string(label) + "' does not occur in the training data");
    return *id;
  }

  const std::string& decode_word(int id) const { return words_.symbol(id); }
  const std::string& decode_pos(int id) const { return pos_.symbol(id); }
  const std::string& decode_label(int id) const { return labels_.symbol(id); }

  std::size_t word_count() const noexcept { return words_.size(); }
  std::size_t pos_count() const noexcept { return pos_.size(); }
  std::size_t label_count() const noexcept { return labels_.size(); }

  /// Training-split frequency of a word (0 when unseen).
  std::size_t frequency(std::string_view word) const {
    auto it = freq_.find(std::string(word));
    return it == freq_.end() ? 0 : it->second;
  }

  Sentence encode(const RawSentence& raw) const {
    Sentence s;
    s.tokens.reserve(raw.size());
    s.pos_tags.reserve(raw.size());
    s.labels.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
      s.tokens.push_back(encode_word(raw.words[i]));
      s.pos_tags.push_back(encode_pos(raw.pos[i]));
      s.labels.push_back(encode_label(raw.labels[i]));
    }
    return s;
  }

  /// Records are "kind<TAB>symbol<TAB>id<TAB>frequency". Singleton training
  /// words are written with the UNK id so the frequency table survives a round trip.
  void save(std::ostream& out) const {
    out << "word\t" << kUnkSymbol << '\t' << kUnk << "\t0\n";
    for (const auto& w : freq_order_) {
      out << "word\t" << w << '\t' << encode_word(w) << '\t' << frequency(w) << '\n';
    }
    for (std::size_t i = 0; i < pos_.size(); ++i) {
      out << "pos\t" << pos_.symbol(static_cast<int>(i)) << '\t' << i << "\t0\n";
    }
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      out << "label\t" << labels_.symbol(static_cast<int>(i)) << '\t' << i << "\t0\n";
    }
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write vocab file " + path);
    save(out);
  }

  static Vocab load(std::istream& in, const std::string& source = "<vocab>") {
    Vocab vocab;
    std::string line;
    std::size_t line_no = 0;
    auto expect_id = [&](SymbolTable& table, const std::string& sym, int id) {
      int got = table.add(sym);
      if (got != id) throw ParseError(source, line_no, "non-sequential id for '" + sym + "'");
    };
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      std::vector<std::string> f;
      std::stringstream ss(line);
      for (std::string field; std::getline(ss, field, '\t');) f.push_back(field);
      if (f.size() != 4) throw ParseError(source, line_no, "expected 4 tab-separated fields");
      int id = 0;
      std::size_t freq = 0;
      try {
        id = std::stoi(f[2]);
        freq = std::stoull(f[3]);
      } catch (const std::exception&) {
        throw ParseError(source, line_no, "non-numeric id or frequency");
      }
      if (f[0] == "word") {
        if (f[1] == kUnkSymbol) continue;
        vocab.freq_[f[1]] = freq;
        vocab.freq_order_.push_back(f[1]);
        if (id != kUnk) expect_id(vocab.words_, f[1], id);
      } else if (f[0] == "pos") {
        if (f[1] == kUnkSymbol) continue;
        expect_id(vocab.pos_, f[1], id);
      } else if (f[0] == "label") {
        expect_id(vocab.labels_, f[1], id);
      } else {
        throw ParseError(source, line_no, "unknown record kind '" + f[0] + "'");
      }
    }
    return vocab;
  }

  static Vocab load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open vocab file " + path);
    return load(in, path);
  }

 private:
  SymbolTable words_;
  SymbolTable pos_;
  SymbolTable labels_;
  std::unordered_map<std::string, std::size_t> freq_;
  std::vector<std::string> freq_order_;
};

namespace detail {

inline void rstrip(std::string& s) {
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\n')) {
    s.pop_back();
  }
}

}  // namespace detail

/// Reads "word<TAB>pos<TAB>label" lines; sentences are separated by blank lines.
inline std::vector<RawSentence> read_raw_corpus(std::istream& in, const std::string& source = "<corpus>") {
  std::vector<RawSentence> out;
  RawSentence current;
  std::string line;
  std::size_t line_no = 0;
  auto flush = [&] {
    if (current.size() > 0) out.push_back(std::move(current));
    current = RawSentence{};
  };
  while (std::getline(in, line)) {
    ++line_no;
    detail::rstrip(line);
    if (line.empty()) {
      flush();
      continue;
    }
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 3) {
      throw ParseError(source, line_no, "expected 3 tab-separated fields, got " + std::to_string(fields.size()));
    }
    for (const auto& f : fields) {
      if (f.empty()) throw ParseError(source, line_no, "empty field");
    }
    current.words.push_back(std::move(fields[0]));
    current.pos.push_back(std::move(fields[1]));
    current.labels.push_back(std::move(fields[2]));
  }
  flush();
  return out;
}

inline std::vector<RawSentence> read_raw_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file " + path);
  return read_raw_corpus(in, path);
}

inline void write_corpus(std::ostream& out, std::span<const RawSentence> corpus) {
  bool first = true;
  for (const auto& sent : corpus) {
    if (!first) out << '\n';
    first = false;
    for (std::size_t i = 0; i < sent.size(); ++i) {
      out << sent.words[i] << '\t' << sent.pos[i] << '\t' << sent.labels[i] << '\n';
    }
  }
}

inline void write_corpus(const std::string& path, std::span<const RawSentence> corpus) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write corpus file " + path);
  write_corpus(out, corpus);
}

inline Vocab build_vocab(std::span<const RawSentence> train) { return Vocab::build(train); }

inline std::vector<Sentence> encode_corpus(std::span<const RawSentence> raw, const Vocab& vocab) {
  std::vector<Sentence> out;
  out.reserve(raw.size());
  for (const auto& r : raw) out.push_back(vocab.encode(r));
  return out;
}

/// Loads a corpus file. Without a vocabulary one is built from this file
/// (the training split); with one, the file is encoded against it.
inline std::pair<std::vector<Sentence>, Vocab> load_corpus(const std::string& path,
                                                           const std::optional<Vocab>& vocab = std::nullopt) {
  auto raw = read_raw_corpus(path);
  Vocab v = vocab ? *vocab : build_vocab(raw);
  return {encode_corpus(raw, v), std::move(v)};
}

// ---------------------------------------------------------------------------
// Synthetic latent-mode task

/// Each sentence has a hidden mode. Only the token at the reveal position
/// (a marker word) identifies it, yet every gold label depends on it, so a
/// left-to-right scorer that cannot see ahead has to carry one hypothesis per
/// mode until the marker arrives.
///
/// Regular word w has base label w mod (labels_per_token - 1); marker words
/// have the reserved base labels_per_token - 1, so a label prefix shows
/// whether the marker has been passed.
struct SynthSpec {
  int vocab_size = 50;  // mode-neutral word types; marker words come on top
  int num_modes = 2;
  int labels_per_token = 5;
  int min_len = 8;
  int max_len = 16;
  double reveal_fraction = 0.5;
  double noise_rate = 0.05;
  std::uint64_t seed = 1;

  int label_count() const noexcept { return num_modes * labels_per_token; }
  int marker_base() const noexcept { return labels_per_token - 1; }

  void validate() const {
    if (vocab_size < 1) throw UsageError("synth.vocab_size must be >= 1");
    if (num_modes < 2) throw UsageError("synth.num_modes must be >= 2");
    if (labels_per_token < 2) throw UsageError("synth.labels_per_token must be >= 2");
    if (min_len < 1 || min_len > max_len) throw UsageError("synth length range must satisfy 1 <= min_len <= max_len");
    if (!(reveal_fraction > 0.0 && reveal_fraction <= 1.0)) throw UsageError("synth.reveal_fraction must be in (0,1]");
    if (!(noise_rate >= 0.0 && noise_rate < 1.0)) throw UsageError("synth.noise_rate must be in [0,1)");
  }
};

/// 0-based index of the marker token in a sentence of length h.
inline std::size_t reveal_index(const SynthSpec& spec, std::size_t h) {
  auto pos = static_cast<std::size_t>(std::ceil(spec.reveal_fraction * static_cast<double>(h) - 1e-12));
  return std::clamp<std::size_t>(pos, 1, h) - 1;
}

inline std::string synth_word(int id) { return "w" + std::to_string(id); }
inline std::string synth_marker(int mode) { return "r" + std::to_string(mode); }
inline std::string synth_label(int base, int mode) { return "L" + std::to_string(base) + "_" + std::to_string(mode); }
inline constexpr std::string_view kSynthPos = "X";

/// Generated sentence plus its latent mode (kept for analysis and tests).
struct SynthSentence {
  RawSentence raw;
  int mode = 0;
  std::vector<int> clean_base;  // base label of each position before noise
};

inline std::vector<SynthSentence> generate_synthetic_detailed(const SynthSpec& spec, std::size_t n) {
  spec.validate();
  require(n >= 1, "generate_synthetic needs n >= 1");
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<int> len_dist(spec.min_len, spec.max_len);
  std::uniform_int_distribution<int> mode_dist(0, spec.num_modes - 1);
  std::uniform_int_distribution<int> word_dist(0, spec.vocab_size - 1);
  std::uniform_int_distribution<int> label_dist(0, spec.label_count() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<SynthSentence> out;
  out.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    SynthSentence sent;
    auto h = static_cast<std::size_t>(len_dist(rng));
    sent.mode = mode_dist(rng);
    std::size_t reveal = reveal_index(spec, h);
    for (std::size_t i = 0; i < h; ++i) {
      int base;
      if (i == reveal) {
        base = spec.marker_base();
        sent.raw.words.push_back(synth_marker(sent.mode));
      } else {
        int w = word_dist(rng);
        base = w % spec.marker_base();
        sent.raw.words.push_back(synth_word(w));
      }
      sent.clean_base.push_back(base);
      sent.raw.pos.emplace_back(kSynthPos);
      int label_base = base;
      int label_mode = sent.mode;
      if (spec.noise_rate > 0.0 && unit(rng) < spec.noise_rate) {
        int l = label_dist(rng);
        label_base = l % spec.labels_per_token;
        label_mode = l / spec.labels_per_token;
      }
      sent.raw.labels.push_back(synth_label(label_base, label_mode));
    }
    out.push_back(std::move(sent));
  }
  return out;
}

inline std::vector<RawSentence> generate_synthetic_raw(const SynthSpec& spec, std::size_t n) {
  auto detailed = generate_synthetic_detailed(spec, n);
  std::vector<RawSentence> out;
  out.reserve(detailed.size());
  for (auto& d : detailed) out.push_back(std::move(d.raw));
  return out;
}

/// Vocabulary that contains every symbol the generator can emit, in a fixed order.
inline Vocab synthetic_vocab(const SynthSpec& spec) {
  RawSentence all;
  for (int twice = 0; twice < 2; ++twice) {
    for (int w = 0; w < spec.vocab_size; ++w) all.words.push_back(synth_word(w));
    for (int m = 0; m < spec.num_modes; ++m) all.words.push_back(synth_marker(m));
  }
  for (int m = 0; m < spec.num_modes; ++m)
    for (int b = 0; b < spec.labels_per_token; ++b) all.labels.push_back(synth_label(b, m));
  all.pos.assign(all.labels.size(), std::string(kSynthPos));
  // Vocab::build only reads the columns independently, so ragged columns are fine here.
  return Vocab::build(std::span<const RawSentence>(&all, 1));
}

/// Encoded synthetic corpus, using synthetic_vocab(spec).
inline std::vector<Sentence> generate_synthetic(const SynthSpec& spec, std::size_t n) {
  auto raw = generate_synthetic_raw(spec, n);
  return encode_corpus(raw, synthetic_vocab(spec));
}

}  // namespace beamtrain
