#pragma once

#include <atomic>
#include <cstdint>
#include <string>
#include <vector>

#include "vlltr/checkpoint.hpp"
#include "vlltr/ops.hpp"
#include "vlltr/optim.hpp"

namespace vlltr {

inline constexpr std::size_t kMaxTokens = 77;  // including start/end markers
inline constexpr double kTauInit = 0.07;
inline constexpr double kTauMin = 0.01;
inline constexpr double kTauMax = 1.0;

// d_img -> 2D (tanh) -> D perceptron.
struct VisualEncoder {
  Var w1, b1, w2, b2;

  static VisualEncoder init(std::size_t d_img, std::size_t dim, std::uint64_t seed);
  static VisualEncoder zeros(std::size_t d_img, std::size_t dim);

  std::size_t in_dim() const { return w1.shape()[0]; }
  std::size_t out_dim() const { return w2.shape()[1]; }

  void append_params(std::vector<ParamRef>& out) const;
  void save(Checkpoint& ck, const std::string& prefix = "vis.") const;
  static VisualEncoder load(const Checkpoint& ck, bool trainable,
                            const std::string& prefix = "vis.");
  VisualEncoder clone(bool trainable) const;
};

// Token table, mean pool over every token (markers included), linear
// projection to D.
struct LinguisticEncoder {
  Var table, proj, bias;
  std::size_t max_tokens = kMaxTokens;

  static LinguisticEncoder init(std::size_t vocab, std::size_t dim, std::uint64_t seed);

  std::size_t vocab_size() const { return table.shape()[0]; }
  std::size_t out_dim() const { return proj.shape()[1]; }

  void append_params(std::vector<ParamRef>& out) const;
  void save(Checkpoint& ck, const std::string& prefix = "lin.") const;
  // Every call increments linguistic_load_count().
  static LinguisticEncoder load(const Checkpoint& ck, bool trainable,
                                const std::string& prefix = "lin.");
  LinguisticEncoder clone(bool trainable) const;
};

// Number of times linguistic-encoder weights were materialized from a
// checkpoint in this process.
std::size_t linguistic_load_count();

// Learnable temperature, kept inside [kTauMin, kTauMax].
struct Temperature {
  Var tau;

  static Temperature init(double value = kTauInit, bool trainable = true);
  double value() const { return tau.value()[0]; }
  void clamp();
};

struct EncoderPair {
  VisualEncoder visual;
  LinguisticEncoder linguistic;
  Temperature temperature;

  static EncoderPair init(std::size_t d_img, std::size_t vocab, std::size_t dim,
                          std::uint64_t seed);
  std::vector<ParamRef> params() const;
  Checkpoint to_checkpoint() const;
  static EncoderPair from_checkpoint(const Checkpoint& ck, bool trainable);
  EncoderPair clone(bool trainable) const;
};

// N x d_img -> N x D embeddings; gradients reach the encoder parameters.
Var encode_images(const VisualEncoder& enc, const Var& images);
Var encode_images(const VisualEncoder& enc, const Tensor& images);

// Rejects empty or over-long sequences; never truncates.
Var encode_texts(const LinguisticEncoder& enc, const std::vector<TokenSeq>& texts);

// Frozen encoder pair standing in for a general-domain model. Produces the
// teacher similarity matrix with no graph attached.
class TeacherPair {
 public:
  explicit TeacherPair(const EncoderPair& snapshot);
  static TeacherPair load(const Checkpoint& ck);

  Tensor similarity(const Tensor& images, const std::vector<TokenSeq>& texts) const;
  double temperature() const { return tau_; }
  const EncoderPair& encoders() const { return enc_; }

 private:
  EncoderPair enc_;
  double tau_;
};

}  // namespace vlltr
