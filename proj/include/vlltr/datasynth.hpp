#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "vlltr/ops.hpp"
#include "vlltr/rng.hpp"
#include "vlltr/tensor.hpp"

namespace vlltr {

using Counts = std::vector<std::size_t>;

// Per-class counts following a power law over class rank:
// counts[c] = round(n_max * (c+1)^-p), floored at n_min, with p chosen so the
// last class lands exactly on n_min. `alpha` is carried as metadata only.
Counts gen_pareto_counts(std::size_t num_classes, std::size_t n_max, std::size_t n_min,
                         double alpha);

// Synthetic stand-in for a long-tailed image set. Feature rows are grouped by
// class in ascending label order, both for the training and the balanced test
// split. Values are representable as float32 so the on-disk form is lossless.
struct LongTailDataset {
  std::size_t num_classes = 0;
  std::size_t dim = 0;
  Counts counts;
  Tensor features;
  std::vector<std::size_t> labels;
  Counts test_counts;
  Tensor test_features;
  std::vector<std::size_t> test_labels;

  std::size_t size() const { return labels.size(); }
  // Index of the first training row of class c.
  std::size_t class_offset(std::size_t c) const;
};

// Attribute structure shared between image prototypes and sentences: each
// class carries two of `num_attributes` attributes.
struct ConceptLayout {
  std::size_t num_classes = 0;
  std::size_t num_attributes = 0;

  explicit ConceptLayout(std::size_t num_classes);
  std::array<std::size_t, 2> attributes_of(std::size_t c) const;
};

// Unit-norm class prototypes (C x d_img), a deterministic function of seed.
Tensor class_prototypes(std::size_t num_classes, std::size_t d_img, std::uint64_t seed);

LongTailDataset gen_synthetic(std::size_t num_classes, const Counts& counts, std::size_t d_img,
                              double noise_sigma, std::uint64_t seed,
                              std::size_t test_per_class = 20);

void write_dataset(const LongTailDataset& ds, const std::filesystem::path& path);
LongTailDataset read_dataset(const std::filesystem::path& path);

// ---- text corpus -----------------------------------------------------------

enum class SentenceSource { Encyclopedia, Prompt };
std::string source_name(SentenceSource s);

struct Sentence {
  std::size_t id = 0;  // position in corpus order
  std::size_t class_id = 0;
  SentenceSource source = SentenceSource::Encyclopedia;
  TokenSeq tokens;
  bool distractor = false;  // generation-time ground truth; not serialized
};

struct ClassCorpus {
  std::size_t num_classes = 0;
  std::vector<Sentence> sentences;
  std::vector<std::vector<std::size_t>> by_class;  // sentence ids per class, corpus order

  const Sentence& at(std::size_t id) const { return sentences.at(id); }
  // Rebuilds ids and by_class from `sentences`; validates invariants.
  void reindex(std::size_t max_tokens = 77);
};

inline constexpr std::int32_t kSos = 0;
inline constexpr std::int32_t kEos = 1;

// Token-id layout of the synthetic vocabulary.
struct VocabLayout {
  static constexpr std::size_t kDescPerClass = 6;
  static constexpr std::size_t kTemplateWords = 12;
  static constexpr std::size_t kMinFiller = 8;

  std::size_t vocab_size = 0;
  std::size_t num_classes = 0;
  std::size_t num_attributes = 0;

  VocabLayout(std::size_t vocab_size, std::size_t num_classes);
  static std::size_t minimum_size(std::size_t num_classes);

  std::int32_t class_name(std::size_t c) const;
  std::int32_t descriptive(std::size_t c, std::size_t k) const;
  std::int32_t attribute(std::size_t a) const;
  std::int32_t template_word(std::size_t k) const;
  std::int32_t filler(std::size_t k) const;
  std::size_t filler_count() const;
  // True for tokens owned by class c (name or descriptive).
  bool owned_by(std::int32_t tok, std::size_t c) const;
};

struct CorpusParams {
  std::size_t num_classes = 20;
  std::size_t sentences_per_class = 40;
  std::size_t prompt_count = 80;
  std::size_t vocab_size = 400;
  double noise_fraction = 0.2;
  std::size_t max_tokens = 77;
  std::uint64_t seed = 0;
};

// Per class: encyclopedia-style sentences built from the class's tokens and
// attributes, a noise_fraction of them replaced by distractors drawn from
// another class, then prompt_count template sentences carrying the class name.
ClassCorpus gen_corpus(const CorpusParams& params);

void write_corpus(const ClassCorpus& corpus, const std::filesystem::path& path);
ClassCorpus read_corpus(const std::filesystem::path& path, std::size_t max_tokens = 77);

struct CorpusStats {
  std::size_t num_classes = 0;
  std::size_t num_sentences = 0;
  std::size_t m_min = 0;
  std::size_t m_max = 0;
  double m_mean = 0.0;
  double m_median = 0.0;
  double l_avg = 0.0;  // tokens per sentence, markers included
};

CorpusStats corpus_stats(const ClassCorpus& corpus);
std::string corpus_stats_json(const CorpusStats& s);

// ---- sampling and bands ----------------------------------------------------

// p(c) proportional to sqrt(counts[c]).
std::vector<double> sqrt_weights(const Counts& counts);

class SqrtSampler {
 public:
  SqrtSampler(Counts counts, std::uint64_t seed);

  std::size_t next_class();
  // Draws a class, then a uniform sample within it; returns the global row index.
  std::size_t next_index();

 private:
  Counts counts_;
  std::vector<std::size_t> offsets_;
  Rng rng_;
  std::discrete_distribution<std::size_t> classes_;
};

enum class Band { Many, Medium, Few };
std::string band_name(Band b);

inline constexpr std::size_t kManyThreshold = 100;
inline constexpr std::size_t kFewThreshold = 20;

Band band_of(std::size_t count);

struct ShotBands {
  std::size_t many_threshold = kManyThreshold;
  std::size_t few_threshold = kFewThreshold;
  std::vector<Band> band;
};

ShotBands split_shots(const Counts& counts);

}  // namespace vlltr
