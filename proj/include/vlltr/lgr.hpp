#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vlltr/anss.hpp"
#include "vlltr/checkpoint.hpp"
#include "vlltr/datasynth.hpp"
#include "vlltr/encoders.hpp"
#include "vlltr/optim.hpp"

namespace vlltr {

// Language-guided recognition head. Linear layers compute x W + b with W
// stored input-major.
struct LgrParams {
  Var q_gain, q_bias, wq, bq;  // query: Linear(LayerNorm(image))
  Var k_gain, k_bias, wk, bk;  // key:   Linear(LayerNorm(anchor))
  Var mlp_w1, mlp_b1, mlp_w2, mlp_b2;  // D -> D -> C, ReLU between
  Temperature tau;

  static LgrParams init(std::size_t dim, std::size_t classes, double tau, std::uint64_t seed);
  std::size_t dim() const { return wq.shape()[0]; }
  std::size_t classes() const { return mlp_w2.shape()[1]; }

  void append_params(std::vector<ParamRef>& out) const;
  void save(Checkpoint& ck, const std::string& prefix = "lgr.") const;
  static LgrParams load(const Checkpoint& ck, bool trainable, const std::string& prefix = "lgr.");
};

// Frozen C x M x D text embeddings of the selected anchors.
// On disk ("VLAE"): magic, u32 version, u32 C, u32 M, u32 D, 32-byte digest
// of the checkpoint that encoded them, C*M*D float64 values.
struct AnchorEmbeddings {
  std::size_t classes = 0, per_class = 0, dim = 0;
  Tensor values;  // C x M x D
  Digest checkpoint{};

  void write(const std::filesystem::path& path) const;
  static AnchorEmbeddings read(const std::filesystem::path& path);
  static std::size_t file_size(std::size_t c, std::size_t m, std::size_t d);
};

AnchorEmbeddings precompute_anchor_embeddings(const AnchorSet& anchors, const ClassCorpus& corpus,
                                              const LinguisticEncoder& enc,
                                              const Digest& checkpoint);

// Batched head output, one row per image.
struct HeadBatch {
  Var p_image;    // B x C
  Var p_text;     // B x C
  Var attention;  // B x C x M, softmax over each class's M anchors
  Var gather;     // B x C x D
};

// anchors: C x M x D.
HeadBatch lgr_forward(const Var& image_emb, const Var& anchors, const LgrParams& params);
HeadBatch lgr_forward(const Var& image_emb, const AnchorEmbeddings& anchors,
                      const LgrParams& params);

struct HeadOutput {
  std::vector<double> p_image, p_text, p;
  Tensor attention;  // C x M
  Tensor gather;     // C x D
};

HeadOutput head_row(const HeadBatch& batch, std::size_t b);
HeadOutput lgr_forward(std::span<const double> image_emb, const AnchorEmbeddings& anchors,
                       const LgrParams& params);

// Mean over the batch of CE(P^I, y) + CE(P^T, y).
Var rec_loss(const HeadBatch& out, const std::vector<std::size_t>& labels);
double rec_loss(const HeadOutput& out, std::size_t label);

// argmax of P^I + P^T, ties to the smaller class id.
std::size_t predict(std::span<const double> p_image, std::span<const double> p_text);
std::size_t predict(const HeadOutput& out);

// Vision-only baseline head: softmax(x W + b).
struct FcHead {
  Var w, b;
  static FcHead init(std::size_t dim, std::size_t classes, std::uint64_t seed);
  static FcHead zeros(std::size_t dim, std::size_t classes);
  void save(Checkpoint& ck) const;
  static FcHead load(const Checkpoint& ck, bool trainable);
};

Var fc_forward(const Var& image_emb, const FcHead& head);

// Class score = max cosine to that class's anchors, softmaxed over classes at
// temperature tau.
Var knn_forward(const Var& image_emb, const AnchorEmbeddings& anchors, const Var& tau);

// Per-class mean of prompt-sentence embeddings (C x D).
Tensor prompt_class_means(const ClassCorpus& corpus, const LinguisticEncoder& enc);
// argmax over cos(image, class mean), ties to the smaller id.
std::size_t zero_shot_classify(std::span<const double> image_emb, const Tensor& class_means);
// Same, with class means taken over the M anchors of each class.
std::size_t zero_shot_classify(std::span<const double> image_emb, const AnchorEmbeddings& anchors);

// ---- fine-tuning -----------------------------------------------------------

enum class HeadKind { LGR, FC, KNN };
std::string head_name(HeadKind h);
HeadKind parse_head(const std::string& s);

struct FinetuneModel {
  HeadKind head = HeadKind::LGR;
  VisualEncoder visual;
  LgrParams lgr;        // HeadKind::LGR
  FcHead fc;            // HeadKind::FC
  Temperature tau;      // HeadKind::KNN
  Digest pretrain{};    // checkpoint the model was initialized from

  // Fresh head on top of a copy of the pre-trained visual encoder; tau starts
  // from the pre-trained value.
  static FinetuneModel init(HeadKind head, const EncoderPair& pretrained, const Digest& pretrain,
                            std::size_t classes, std::uint64_t seed);
  std::vector<ParamRef> params() const;
  Checkpoint to_checkpoint() const;
  static FinetuneModel from_checkpoint(const Checkpoint& ck);
};

struct FinetuneConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double base_lr = 5e-3;
  double min_lr = 0.0;
  AdamWConfig adamw;
  std::uint64_t seed = 0;
};

struct FinetuneTraceRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss = 0.0;
  double tau = 0.0;
};

std::string format_finetune_trace(const std::vector<FinetuneTraceRow>& rows);

// Trains visual encoder and head in place on square-root sampled batches. The
// anchor embeddings are fixed inputs; their digest must match model.pretrain.
std::vector<FinetuneTraceRow> run_finetune(const LongTailDataset& data,
                                           const AnchorEmbeddings& anchors, FinetuneModel& model,
                                           const FinetuneConfig& cfg);

struct Prediction {
  std::size_t label = 0;
  std::size_t pred = 0;
  double p_image = 0.0;  // P^I[pred]; 0 for heads without an image branch
  double p_text = 0.0;   // P^T[pred]; 0 for heads without a text branch
};

// Batched inference over feature rows; parallel over chunks.
std::vector<Prediction> predict_all(const FinetuneModel& model, const AnchorEmbeddings& anchors,
                                    const Tensor& features, const std::vector<std::size_t>& labels,
                                    std::size_t threads = 1);

std::string format_predictions(const std::vector<Prediction>& preds);

}  // namespace vlltr
