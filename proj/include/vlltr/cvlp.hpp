#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vlltr/datasynth.hpp"
#include "vlltr/encoders.hpp"
#include "vlltr/optim.hpp"

namespace vlltr {

struct CclLoss {
  Var vis;  // image -> text direction, batch-averaged
  Var lin;  // text -> image direction, batch-averaged
  Var total;
};

// Class-wise contrastive loss over an N x N similarity matrix (rows: images,
// columns: texts). Every text sharing image i's label is a positive for row
// i and symmetrically for columns. Throws ValidationError when some row or
// column has no positive.
CclLoss ccl_loss(const Var& sim, const std::vector<std::size_t>& image_labels,
                 const std::vector<std::size_t>& text_labels, const Var& tau);
CclLoss ccl_loss(const Var& sim, const std::vector<std::size_t>& labels, const Var& tau);

// Distillation: for each i, the teacher's diagonal softmax probability (row
// and column, at the teacher temperature) weights the student's diagonal
// log-probability. Batch-averaged; the teacher matrix is a constant.
Var distill_loss(const Var& sim, const Tensor& teacher_sim, const Var& tau, double teacher_tau);

// Images with one freshly drawn same-class sentence each; text i pairs with
// image i.
struct PairedBatch {
  Tensor images;
  std::vector<TokenSeq> texts;
  std::vector<std::size_t> labels;
};

class PairSampler {
 public:
  PairSampler(const LongTailDataset& data, const ClassCorpus& corpus, std::uint64_t seed);
  PairedBatch next(std::size_t n);

 private:
  const LongTailDataset& data_;
  const ClassCorpus& corpus_;
  SqrtSampler images_;
  Rng text_rng_;
};

struct PretrainConfig {
  double lambda = 0.5;
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double base_lr = 5e-3;
  double min_lr = 0.0;
  AdamWConfig adamw;
  std::uint64_t seed = 0;
};

struct PretrainLoss {
  Var pre;
  double ccl = 0.0;
  double dis = 0.0;
  bool dis_evaluated = false;
};

// lambda * L_ccl + (1 - lambda) * L_dis. With lambda == 1 the teacher is
// never consulted (it may be null); with lambda == 0 the result is L_dis.
PretrainLoss pretrain_loss(const PairedBatch& batch, const EncoderPair& enc,
                           const TeacherPair* teacher, double lambda);

struct TraceRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double ccl = 0.0;
  double dis = 0.0;
  double pre = 0.0;
  double tau = 0.0;
};

std::string format_trace(const std::vector<TraceRow>& rows);
std::vector<TraceRow> parse_trace(const std::string& text);

// Trains `enc` in place; one trace row per epoch holding epoch means.
// Throws NumericError naming the step when the loss stops being finite.
std::vector<TraceRow> run_pretrain(const LongTailDataset& data, const ClassCorpus& corpus,
                                   EncoderPair& enc, const TeacherPair* teacher,
                                   const PretrainConfig& cfg);

}  // namespace vlltr
