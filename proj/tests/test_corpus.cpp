#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "beamtrain/corpus.hpp"

using namespace beamtrain;

namespace {

std::vector<RawSentence> parse(const std::string& text) {
  std::istringstream in(text);
  return read_raw_corpus(in, "mem");
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("beamtrain_corpus_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Corpus, ReadsBlankLineSeparatedSentences) {
  auto c = parse("the\tDT\tA\ncat\tNN\tB\n\n\n\nsat\tVB\tA\r\n");
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[0].words, (std::vector<std::string>{"the", "cat"}));
  EXPECT_EQ(c[0].labels, (std::vector<std::string>{"A", "B"}));
  EXPECT_EQ(c[1].pos, (std::vector<std::string>{"VB"}));
}

TEST(Corpus, MalformedLinesReportTheirLineNumber) {
  try {
    parse("a\tb\tc\n\nd\te\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  try {
    parse("a\t\tc\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 1u);
  }
  EXPECT_THROW(parse("a\tb\tc\td\n"), ParseError);
}

TEST(Corpus, SingletonWordsMapToUnknown) {
  auto c = parse("x\tP\tA\ny\tP\tB\n\nx\tQ\tA\n");
  auto v = build_vocab(c);
  EXPECT_EQ(v.word_count(), 2u);  // <unk> and x
  EXPECT_NE(v.encode_word("x"), Vocab::kUnk);
  EXPECT_EQ(v.encode_word("y"), Vocab::kUnk);
  EXPECT_EQ(v.encode_word("never"), Vocab::kUnk);
  EXPECT_EQ(v.frequency("x"), 2u);
  EXPECT_EQ(v.frequency("y"), 1u);
  EXPECT_EQ(v.encode_pos("Z"), Vocab::kUnk);
  EXPECT_THROW(v.encode_label("C"), DataError);
}

TEST(Corpus, WriteReadRoundTrip) {
  const std::string text = "a\tP\tA\nb\tQ\tB\n\nc\tP\tA\n";
  auto c = parse(text);
  std::ostringstream out;
  write_corpus(out, c);
  EXPECT_EQ(out.str(), text);
}

TEST(Corpus, VocabRoundTripPreservesIdsAndFrequencies) {
  SynthSpec spec;
  auto raw = generate_synthetic_raw(spec, 50);
  auto v = build_vocab(raw);
  std::stringstream ss;
  v.save(ss);
  auto w = Vocab::load(ss, "mem");
  EXPECT_EQ(w.word_count(), v.word_count());
  EXPECT_EQ(w.pos_count(), v.pos_count());
  EXPECT_EQ(w.label_count(), v.label_count());
  for (const auto& s : raw) {
    EXPECT_EQ(encode_corpus(std::span(&s, 1), w)[0].tokens, encode_corpus(std::span(&s, 1), v)[0].tokens);
    for (const auto& word : s.words) EXPECT_EQ(w.frequency(word), v.frequency(word));
  }
}

TEST(Corpus, LoadCorpusEncodesDevAgainstTrainVocab) {
  auto dir = temp_dir("load");
  const auto train = parse("a\tP\tA\na\tP\tB\nb\tP\tA\n");
  const auto dev = parse("a\tP\tB\nz\tR\tA\n");
  write_corpus((dir / "train.tsv").string(), train);
  write_corpus((dir / "dev.tsv").string(), dev);
  auto [tr, vocab] = load_corpus((dir / "train.tsv").string());
  auto [dv, same] = load_corpus((dir / "dev.tsv").string(), vocab);
  ASSERT_EQ(tr.size(), 1u);
  EXPECT_EQ(tr[0].tokens[0], tr[0].tokens[1]);
  EXPECT_EQ(tr[0].tokens[2], Vocab::kUnk);
  EXPECT_EQ(dv[0].tokens, (std::vector<int>{tr[0].tokens[0], Vocab::kUnk}));
  EXPECT_EQ(dv[0].pos_tags[1], Vocab::kUnk);
  EXPECT_EQ(dv[0].labels, (std::vector<int>{tr[0].labels[1], tr[0].labels[0]}));
  EXPECT_THROW(load_corpus((dir / "missing.tsv").string()), DataError);
  std::filesystem::remove_all(dir);
}

TEST(Synthetic, DeterministicForAFixedSeed) {
  SynthSpec spec;
  auto a = generate_synthetic_raw(spec, 30);
  auto b = generate_synthetic_raw(spec, 30);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].words, b[i].words);
    EXPECT_EQ(a[i].labels, b[i].labels);
  }
  spec.seed = 2;
  auto c = generate_synthetic_raw(spec, 30);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) differs |= a[i].words != c[i].words;
  EXPECT_TRUE(differs);
}

TEST(Synthetic, MarkerSitsAtTheRevealPosition) {
  SynthSpec spec;
  spec.noise_rate = 0.0;
  for (double rf : {0.5, 1.0, 0.05}) {
    spec.reveal_fraction = rf;
    for (const auto& s : generate_synthetic_detailed(spec, 40)) {
      const auto h = s.raw.size();
      ASSERT_GE(h, static_cast<std::size_t>(spec.min_len));
      ASSERT_LE(h, static_cast<std::size_t>(spec.max_len));
      const auto r = reveal_index(spec, h);
      if (rf == 1.0) {
        EXPECT_EQ(r, h - 1);
      }
      for (std::size_t i = 0; i < h; ++i) {
        const bool marker = s.raw.words[i][0] == 'r';
        EXPECT_EQ(marker, i == r);
        EXPECT_EQ(s.raw.labels[i], synth_label(s.clean_base[i], s.mode));
      }
      EXPECT_EQ(s.raw.words[r], synth_marker(s.mode));
    }
  }
}

TEST(Synthetic, PreRevealLabelsAreOnlyPredictableUpToTheMode) {
  // Without the marker, the best per-token guess gets the base right and the
  // mode right half the time: (1 - eps) / modes + eps / |labels|.
  SynthSpec spec;
  std::size_t hits = 0, total = 0;
  for (const auto& s : generate_synthetic_detailed(spec, 4000)) {
    const auto r = reveal_index(spec, s.raw.size());
    for (std::size_t i = 0; i < r; ++i) {
      hits += s.raw.labels[i] == synth_label(s.clean_base[i], 0);
      ++total;
    }
  }
  const double expected = (1 - spec.noise_rate) / spec.num_modes + spec.noise_rate / spec.label_count();
  EXPECT_NEAR(static_cast<double>(hits) / total, expected, 0.01);
}

TEST(Synthetic, VocabularyCoversEveryEmittedSymbol) {
  SynthSpec spec;
  auto v = synthetic_vocab(spec);
  EXPECT_EQ(v.word_count(), static_cast<std::size_t>(1 + spec.vocab_size + spec.num_modes));
  EXPECT_EQ(v.label_count(), static_cast<std::size_t>(spec.label_count()));
  for (const auto& s : generate_synthetic(spec, 100)) {
    for (int t : s.tokens) EXPECT_NE(t, Vocab::kUnk);
  }
}

TEST(Synthetic, SpecValidationRejectsBadSettings) {
  auto bad = [](auto mutate) {
    SynthSpec s;
    mutate(s);
    return s;
  };
  EXPECT_NO_THROW(SynthSpec{}.validate());
  EXPECT_THROW(bad([](SynthSpec& s) { s.num_modes = 1; }).validate(), UsageError);
  EXPECT_THROW(bad([](SynthSpec& s) { s.min_len = 5, s.max_len = 4; }).validate(), UsageError);
  EXPECT_THROW(bad([](SynthSpec& s) { s.reveal_fraction = 0.0; }).validate(), UsageError);
  EXPECT_THROW(bad([](SynthSpec& s) { s.noise_rate = 1.0; }).validate(), UsageError);
  EXPECT_THROW(bad([](SynthSpec& s) { s.labels_per_token = 1; }).validate(), UsageError);
}
