#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "vlltr/config.hpp"
#include "vlltr/evalkit.hpp"
#include "vlltr/suite.hpp"

namespace vlltr {

// Stage commands. Each reads its inputs from and writes its artifacts to the
// paths in `cfg`, resolved against `out`. Upstream artifacts are checked by
// content hash; a mismatch is a ValidationError.

std::filesystem::path artifact(const RunConfig& cfg, const std::filesystem::path& out,
                               const std::string& rel);

void cmd_gen_data(const RunConfig& cfg, const std::filesystem::path& out);
void cmd_make_teacher(const RunConfig& cfg, const std::filesystem::path& out);
void cmd_pretrain(const RunConfig& cfg, const std::filesystem::path& out);
void cmd_select_anchors(const RunConfig& cfg, const std::filesystem::path& out,
                        std::size_t threads = 1);
void cmd_finetune(const RunConfig& cfg, const std::filesystem::path& out);

// Fine-tuned model on the balanced test split via the anchor cache only;
// writes the report and the prediction dump.
EvalReport cmd_eval(const RunConfig& cfg, const std::filesystem::path& out,
                    std::size_t threads = 1);
// Pre-trained encoders against per-class prompt means, no fine-tuned weights.
EvalReport cmd_eval_zero_shot(const RunConfig& cfg, const std::filesystem::path& out);

// gen-data through eval in one go.
EvalReport run_pipeline(const RunConfig& cfg, const std::filesystem::path& out,
                        std::size_t threads = 1);

std::vector<SuiteResult> cmd_gradcheck(std::size_t instances, std::uint64_t seed,
                                       bool with_fault = false);

struct RetrievalHit {
  std::size_t sample_id = 0;
  std::size_t label = 0;
  double cosine = 0.0;
};

// Test images most similar to corpus sentence `sentence_id` under the
// pre-trained encoders.
std::vector<RetrievalHit> cmd_retrieve(const RunConfig& cfg, const std::filesystem::path& out,
                                       std::size_t sentence_id, std::size_t k);

struct AblationEntry {
  std::string label;
  std::uint64_t seed = 0;
  EvalReport report;
};

struct AblationResult {
  std::vector<std::string> labels;   // row order
  std::vector<AblationEntry> runs;   // every (label, seed)
  std::vector<EvalReport> pooled;    // per label, counts summed over seeds
  std::string table;
};

inline const char* kAblFull = "lgr/anss/lambda=0.5";
inline const char* kAblNoDis = "lgr/anss/lambda=1";
inline const char* kAblFc = "fc/lambda=0.5";
inline const char* kAblKnn = "knn/anss/lambda=0.5";
inline const char* kAblCutoff = "lgr/cutoff/lambda=0.5";

// The ablation grid over cfg.ablate_seeds consecutive seeds starting at
// cfg.seed; writes ablation.txt and ablation.json under `out`.
AblationResult cmd_ablate(const RunConfig& cfg, const std::filesystem::path& out,
                          std::size_t threads = 1);

}  // namespace vlltr
