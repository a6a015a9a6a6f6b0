#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vlltr/datasynth.hpp"
#include "vlltr/encoders.hpp"

namespace vlltr {

inline constexpr std::size_t kProbeCap = 50;
inline constexpr std::size_t kAnchorsPerClass = 64;

// Up to `cap` training rows of one class, chosen by a seed-fixed shuffle.
struct ProbeBatch {
  std::size_t class_id = 0;
  std::vector<std::size_t> rows;
  Tensor images;
};

ProbeBatch build_probe(const LongTailDataset& data, std::size_t class_id,
                       std::size_t cap = kProbeCap, std::uint64_t seed = 0);

// Every class's probe images embedded once; the contrast set for scoring.
struct ProbePool {
  Tensor embeddings;                 // P x D
  std::vector<std::size_t> labels;   // P
  std::vector<std::size_t> per_class;

  static ProbePool build(const std::vector<ProbeBatch>& probes, const VisualEncoder& enc);
};

// Linguistic-side contrastive loss of one sentence against the pooled probe
// images, with the images of `class_id` as its positives. Lower means the
// sentence singles out its own class better.
double score_sentence(const TokenSeq& sentence, std::size_t class_id, const ProbePool& pool,
                      const LinguisticEncoder& enc, double tau);

// Batched form of score_sentence over many sentences.
std::vector<double> score_sentences(const std::vector<TokenSeq>& sentences,
                                    const std::vector<std::size_t>& classes,
                                    const ProbePool& pool, const LinguisticEncoder& enc,
                                    double tau);

enum class SelectionMode { AnSS, CutOff };
std::string mode_name(SelectionMode m);
SelectionMode parse_mode(const std::string& s);

struct AnchorSet {
  SelectionMode mode = SelectionMode::AnSS;
  std::size_t per_class = 0;                    // M
  std::vector<std::vector<std::size_t>> ids;    // C x M (after cyclic padding)
  std::vector<std::vector<double>> scores;      // matching scores
  std::vector<std::size_t> distinct;            // min(M, available) per class
  std::string checkpoint;                       // hex digest of the scoring checkpoint
};

// AnSS: per class the M lowest-scoring sentences, ties to the smaller id,
// listed by ascending score. CutOff: the first M sentences in corpus order.
// Classes with fewer than M sentences are padded by cycling their selection.
// Scoring is parallel over classes, capped by `threads`.
AnchorSet select_anchors(const ClassCorpus& corpus, const LongTailDataset& data,
                         const EncoderPair& enc, std::size_t per_class, SelectionMode mode,
                         std::size_t probe_cap = kProbeCap, std::uint64_t seed = 0,
                         std::size_t threads = 1);

// Header lines: "# mode=<anss|cutoff>", "# M=<n>", "# checkpoint=<hex>", then
// rows "class_id<TAB>rank<TAB>sentence_id<TAB>score".
std::string format_anchors(const AnchorSet& a);
AnchorSet parse_anchors(const std::string& text);
void write_anchors(const AnchorSet& a, const std::filesystem::path& path);
AnchorSet read_anchors(const std::filesystem::path& path);

}  // namespace vlltr
