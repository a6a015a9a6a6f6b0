#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vlltr/datasynth.hpp"
#include "vlltr/encoders.hpp"

namespace vlltr {

struct BandScore {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return static_cast<double>(correct) / static_cast<double>(total); }
};

// Top-1 accuracy overall (micro average over samples) and per shot band.
// A band with no test samples is absent rather than zero.
struct EvalReport {
  BandScore overall;
  std::optional<BandScore> many, medium, few;
  std::vector<BandScore> per_class;  // classes without test samples have total 0
  std::string fingerprint;

  std::optional<BandScore> band(Band b) const;
  // Mean over classes that have test samples.
  double class_macro() const;

  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
};

EvalReport evaluate(const std::vector<std::size_t>& predictions,
                    const std::vector<std::size_t>& labels, const ShotBands& bands,
                    std::string fingerprint = {});

// Sample ids of the k images most similar to the query sentence, by
// descending cosine with ties to the smaller id.
std::vector<std::size_t> concept_retrieval(const TokenSeq& query, const Tensor& images,
                                           const EncoderPair& enc, std::size_t k);
// Same ranking from precomputed embeddings (query: D, images: N x D).
std::vector<std::size_t> rank_by_cosine(std::span<const double> query, const Tensor& images,
                                        std::size_t k);

// Aligned plain-text table, one row per entry in input order; accuracies in
// percent with two decimals, "-" for an absent band.
std::string ablation_report(const std::vector<std::pair<std::string, EvalReport>>& rows);

}  // namespace vlltr
