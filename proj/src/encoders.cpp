#include "vlltr/encoders.hpp"

#include <algorithm>
#include <cmath>

#include "vlltr/error.hpp"
#include "vlltr/rng.hpp"

namespace vlltr {
namespace {

std::atomic<std::size_t> g_linguistic_loads{0};

Tensor glorot(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-a, a);
  Tensor t({fan_in, fan_out});
  for (auto& v : t.vec()) v = u(rng);
  return t;
}

Var make(Tensor t, bool trainable) { return Var(std::move(t), trainable); }

Var load_var(const Checkpoint& ck, const std::string& name, bool trainable) {
  return make(ck.get(name), trainable);
}

Var copy_var(const Var& v, bool trainable) { return make(v.value(), trainable); }

}  // namespace

std::size_t linguistic_load_count() { return g_linguistic_loads.load(); }

VisualEncoder VisualEncoder::init(std::size_t d_img, std::size_t dim, std::uint64_t seed) {
  if (d_img == 0 || dim == 0) throw ValidationError("VisualEncoder: dimensions must be positive");
  Rng rng = make_rng(seed, stream::kInitVisual);
  const std::size_t hidden = 2 * dim;
  VisualEncoder e;
  e.w1 = Var::parameter(glorot(rng, d_img, hidden));
  e.b1 = Var::parameter(Tensor({hidden}, 0.0));
  e.w2 = Var::parameter(glorot(rng, hidden, dim));
  e.b2 = Var::parameter(Tensor({dim}, 0.0));
  return e;
}

VisualEncoder VisualEncoder::zeros(std::size_t d_img, std::size_t dim) {
  VisualEncoder e;
  e.w1 = Var::parameter(Tensor({d_img, 2 * dim}, 0.0));
  e.b1 = Var::parameter(Tensor({2 * dim}, 0.0));
  e.w2 = Var::parameter(Tensor({2 * dim, dim}, 0.0));
  e.b2 = Var::parameter(Tensor({dim}, 0.0));
  return e;
}

void VisualEncoder::append_params(std::vector<ParamRef>& out) const {
  out.push_back({w1, true});
  out.push_back({b1, false});
  out.push_back({w2, true});
  out.push_back({b2, false});
}

void VisualEncoder::save(Checkpoint& ck, const std::string& p) const {
  ck.put(p + "w1", w1.value());
  ck.put(p + "b1", b1.value());
  ck.put(p + "w2", w2.value());
  ck.put(p + "b2", b2.value());
}

VisualEncoder VisualEncoder::load(const Checkpoint& ck, bool trainable, const std::string& p) {
  VisualEncoder e;
  e.w1 = load_var(ck, p + "w1", trainable);
  e.b1 = load_var(ck, p + "b1", trainable);
  e.w2 = load_var(ck, p + "w2", trainable);
  e.b2 = load_var(ck, p + "b2", trainable);
  if (e.w1.shape()[1] != e.b1.value().size() || e.w2.shape()[0] != e.w1.shape()[1] ||
      e.w2.shape()[1] != e.b2.value().size())
    throw IoError("checkpoint visual encoder sections have inconsistent shapes");
  return e;
}

VisualEncoder VisualEncoder::clone(bool trainable) const {
  return {copy_var(w1, trainable), copy_var(b1, trainable), copy_var(w2, trainable),
          copy_var(b2, trainable)};
}

LinguisticEncoder LinguisticEncoder::init(std::size_t vocab, std::size_t dim, std::uint64_t seed) {
  if (vocab == 0 || dim == 0) throw ValidationError("LinguisticEncoder: dimensions must be positive");
  Rng rng = make_rng(seed, stream::kInitLinguistic);
  std::normal_distribution<double> g(0.0, 1.0);
  LinguisticEncoder e;
  Tensor table({vocab, dim});
  for (auto& v : table.vec()) v = g(rng);
  e.table = Var::parameter(std::move(table));
  e.proj = Var::parameter(glorot(rng, dim, dim));
  e.bias = Var::parameter(Tensor({dim}, 0.0));
  return e;
}

void LinguisticEncoder::append_params(std::vector<ParamRef>& out) const {
  out.push_back({table, true});
  out.push_back({proj, true});
  out.push_back({bias, false});
}

void LinguisticEncoder::save(Checkpoint& ck, const std::string& p) const {
  ck.put(p + "table", table.value());
  ck.put(p + "proj", proj.value());
  ck.put(p + "bias", bias.value());
}

LinguisticEncoder LinguisticEncoder::load(const Checkpoint& ck, bool trainable,
                                          const std::string& p) {
  g_linguistic_loads.fetch_add(1);
  LinguisticEncoder e;
  e.table = load_var(ck, p + "table", trainable);
  e.proj = load_var(ck, p + "proj", trainable);
  e.bias = load_var(ck, p + "bias", trainable);
  if (e.table.shape()[1] != e.proj.shape()[0] || e.proj.shape()[1] != e.bias.value().size())
    throw IoError("checkpoint linguistic encoder sections have inconsistent shapes");
  return e;
}

LinguisticEncoder LinguisticEncoder::clone(bool trainable) const {
  LinguisticEncoder e;
  e.table = copy_var(table, trainable);
  e.proj = copy_var(proj, trainable);
  e.bias = copy_var(bias, trainable);
  e.max_tokens = max_tokens;
  return e;
}

Temperature Temperature::init(double value, bool trainable) {
  if (!(value > 0.0)) throw ValidationError("temperature must be positive");
  return {Var(Tensor::scalar(std::clamp(value, kTauMin, kTauMax)), trainable)};
}

void Temperature::clamp() {
  auto& v = tau.mutable_value()[0];
  v = std::clamp(v, kTauMin, kTauMax);
}

EncoderPair EncoderPair::init(std::size_t d_img, std::size_t vocab, std::size_t dim,
                              std::uint64_t seed) {
  return {VisualEncoder::init(d_img, dim, seed), LinguisticEncoder::init(vocab, dim, seed),
          Temperature::init(kTauInit)};
}

std::vector<ParamRef> EncoderPair::params() const {
  std::vector<ParamRef> out;
  visual.append_params(out);
  linguistic.append_params(out);
  out.push_back({temperature.tau, false});
  return out;
}

Checkpoint EncoderPair::to_checkpoint() const {
  Checkpoint ck;
  visual.save(ck);
  linguistic.save(ck);
  ck.put("tau", temperature.tau.value());
  return ck;
}

EncoderPair EncoderPair::from_checkpoint(const Checkpoint& ck, bool trainable) {
  EncoderPair p{VisualEncoder::load(ck, trainable), LinguisticEncoder::load(ck, trainable),
                {Var(ck.get("tau"), trainable)}};
  if (p.visual.out_dim() != p.linguistic.out_dim())
    throw IoError("checkpoint encoders disagree on embedding width");
  return p;
}

EncoderPair EncoderPair::clone(bool trainable) const {
  return {visual.clone(trainable), linguistic.clone(trainable),
          {copy_var(temperature.tau, trainable)}};
}

Var encode_images(const VisualEncoder& enc, const Var& images) {
  if (images.value().rank() != 2 || images.shape()[1] != enc.in_dim())
    throw ShapeError("encode_images: expected N x " + std::to_string(enc.in_dim()) +
                     " input, got " + shape_str(images.shape()));
  Var h = tanh(add_bias(matmul(images, enc.w1), enc.b1));
  return add_bias(matmul(h, enc.w2), enc.b2);
}

Var encode_images(const VisualEncoder& enc, const Tensor& images) {
  return encode_images(enc, Var::constant(images));
}

Var encode_texts(const LinguisticEncoder& enc, const std::vector<TokenSeq>& texts) {
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (texts[i].empty())
      throw ValidationError("encode_texts: sequence " + std::to_string(i) + " is empty");
    if (texts[i].size() > enc.max_tokens)
      throw ValidationError("encode_texts: sequence " + std::to_string(i) + " has " +
                            std::to_string(texts[i].size()) + " tokens, limit is " +
                            std::to_string(enc.max_tokens));
  }
  Var pooled = embedding_bag_mean(enc.table, texts);
  return add_bias(matmul(pooled, enc.proj), enc.bias);
}

TeacherPair::TeacherPair(const EncoderPair& snapshot)
    : enc_(snapshot.clone(false)), tau_(snapshot.temperature.value()) {}

TeacherPair TeacherPair::load(const Checkpoint& ck) {
  return TeacherPair(EncoderPair::from_checkpoint(ck, false));
}

Tensor TeacherPair::similarity(const Tensor& images, const std::vector<TokenSeq>& texts) const {
  return cosine_sim_matrix(encode_images(enc_.visual, images),
                           encode_texts(enc_.linguistic, texts))
      .value();
}

}  // namespace vlltr
