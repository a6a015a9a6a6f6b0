#include "vlltr/lgr.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "vlltr/error.hpp"
#include "vlltr/parallel.hpp"
#include "vlltr/rng.hpp"

namespace vlltr {
namespace {

constexpr std::uint32_t kVlaeVersion = 1;
constexpr std::size_t kInferChunk = 256;

Tensor glorot(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-a, a);
  Tensor t({fan_in, fan_out});
  for (auto& v : t.vec()) v = u(rng);
  return t;
}

Var param(Tensor t, bool trainable = true) { return Var(std::move(t), trainable); }

std::size_t argmax_first(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

Tensor rows_of(const Tensor& src, std::size_t begin, std::size_t end) {
  const std::size_t d = src.dim(1);
  Tensor out({end - begin, d});
  std::copy(src.vec().begin() + static_cast<std::ptrdiff_t>(begin * d),
            src.vec().begin() + static_cast<std::ptrdiff_t>(end * d), out.vec().begin());
  return out;
}

}  // namespace

LgrParams LgrParams::init(std::size_t dim, std::size_t classes, double tau, std::uint64_t seed) {
  if (dim == 0 || classes == 0) throw ValidationError("LGR head: dimensions must be positive");
  Rng rng = make_rng(seed, stream::kInitHead);
  LgrParams p;
  p.q_gain = param(Tensor({dim}, 1.0));
  p.q_bias = param(Tensor({dim}, 0.0));
  p.wq = param(glorot(rng, dim, dim));
  p.bq = param(Tensor({dim}, 0.0));
  p.k_gain = param(Tensor({dim}, 1.0));
  p.k_bias = param(Tensor({dim}, 0.0));
  p.wk = param(glorot(rng, dim, dim));
  p.bk = param(Tensor({dim}, 0.0));
  p.mlp_w1 = param(glorot(rng, dim, dim));
  p.mlp_b1 = param(Tensor({dim}, 0.0));
  p.mlp_w2 = param(glorot(rng, dim, classes));
  p.mlp_b2 = param(Tensor({classes}, 0.0));
  p.tau = Temperature::init(tau);
  return p;
}

void LgrParams::append_params(std::vector<ParamRef>& out) const {
  out.push_back({q_gain, false});
  out.push_back({q_bias, false});
  out.push_back({wq, true});
  out.push_back({bq, false});
  out.push_back({k_gain, false});
  out.push_back({k_bias, false});
  out.push_back({wk, true});
  out.push_back({bk, false});
  out.push_back({mlp_w1, true});
  out.push_back({mlp_b1, false});
  out.push_back({mlp_w2, true});
  out.push_back({mlp_b2, false});
  out.push_back({tau.tau, false});
}

void LgrParams::save(Checkpoint& ck, const std::string& p) const {
  ck.put(p + "q_gain", q_gain.value());
  ck.put(p + "q_bias", q_bias.value());
  ck.put(p + "wq", wq.value());
  ck.put(p + "bq", bq.value());
  ck.put(p + "k_gain", k_gain.value());
  ck.put(p + "k_bias", k_bias.value());
  ck.put(p + "wk", wk.value());
  ck.put(p + "bk", bk.value());
  ck.put(p + "mlp_w1", mlp_w1.value());
  ck.put(p + "mlp_b1", mlp_b1.value());
  ck.put(p + "mlp_w2", mlp_w2.value());
  ck.put(p + "mlp_b2", mlp_b2.value());
  ck.put(p + "tau", tau.tau.value());
}

LgrParams LgrParams::load(const Checkpoint& ck, bool trainable, const std::string& p) {
  auto get = [&](const std::string& n) { return param(ck.get(p + n), trainable); };
  LgrParams out;
  out.q_gain = get("q_gain");
  out.q_bias = get("q_bias");
  out.wq = get("wq");
  out.bq = get("bq");
  out.k_gain = get("k_gain");
  out.k_bias = get("k_bias");
  out.wk = get("wk");
  out.bk = get("bk");
  out.mlp_w1 = get("mlp_w1");
  out.mlp_b1 = get("mlp_b1");
  out.mlp_w2 = get("mlp_w2");
  out.mlp_b2 = get("mlp_b2");
  out.tau = {get("tau")};
  const std::size_t d = out.wq.shape()[0];
  if (out.wq.shape()[1] != d || out.wk.shape() != Shape{d, d} || out.mlp_w1.shape() != Shape{d, d} ||
      out.mlp_w2.shape()[0] != d)
    throw IoError("checkpoint LGR head sections have inconsistent shapes");
  return out;
}

// ---- anchor embedding cache ------------------------------------------------

std::size_t AnchorEmbeddings::file_size(std::size_t c, std::size_t m, std::size_t d) {
  return 4 + 4 * 4 + 32 + 8 * c * m * d;
}

void AnchorEmbeddings::write(const std::filesystem::path& path) const {
  if (values.shape() != Shape{classes, per_class, dim})
    throw ShapeError("anchor embeddings: value shape " + shape_str(values.shape()) +
                     " does not match header");
  std::ostringstream os;
  bin::put_magic(os, "VLAE");
  bin::put<std::uint32_t>(os, kVlaeVersion);
  bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(classes));
  bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(per_class));
  bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(dim));
  os.write(reinterpret_cast<const char*>(checkpoint.data()), 32);
  for (double v : values.vec()) bin::put<double>(os, v);
  write_file(path, os.str());
}

AnchorEmbeddings AnchorEmbeddings::read(const std::filesystem::path& path) {
  std::istringstream is(read_file(path));
  bin::expect_magic(is, "VLAE");
  const auto version = bin::get<std::uint32_t>(is);
  if (version != kVlaeVersion)
    throw IoError("anchor cache " + path.string() + ": unsupported version " +
                  std::to_string(version));
  AnchorEmbeddings a;
  a.classes = bin::get<std::uint32_t>(is);
  a.per_class = bin::get<std::uint32_t>(is);
  a.dim = bin::get<std::uint32_t>(is);
  if (a.classes == 0 || a.per_class == 0 || a.dim == 0)
    throw IoError("anchor cache " + path.string() + ": zero extent in header");
  is.read(reinterpret_cast<char*>(a.checkpoint.data()), 32);
  if (!is) bin::throw_truncated();
  std::vector<double> vals(a.classes * a.per_class * a.dim);
  for (auto& v : vals) v = bin::get<double>(is);
  if (is.peek() != std::char_traits<char>::eof())
    throw IoError("anchor cache " + path.string() + " has trailing bytes");
  a.values = Tensor({a.classes, a.per_class, a.dim}, std::move(vals));
  return a;
}

AnchorEmbeddings precompute_anchor_embeddings(const AnchorSet& anchors, const ClassCorpus& corpus,
                                              const LinguisticEncoder& enc,
                                              const Digest& checkpoint) {
  if (anchors.ids.size() != corpus.num_classes)
    throw ValidationError("anchor set covers " + std::to_string(anchors.ids.size()) +
                          " classes, corpus has " + std::to_string(corpus.num_classes));
  const std::size_t C = anchors.ids.size(), M = anchors.per_class;
  std::vector<TokenSeq> texts;
  texts.reserve(C * M);
  for (std::size_t c = 0; c < C; ++c) {
    if (anchors.ids[c].size() != M)
      throw ValidationError("anchor set: class " + std::to_string(c) + " has " +
                            std::to_string(anchors.ids[c].size()) + " anchors, expected " +
                            std::to_string(M));
    for (auto id : anchors.ids[c]) {
      const Sentence& s = corpus.at(id);
      if (s.class_id != c)
        throw ValidationError("anchor sentence " + std::to_string(id) + " belongs to class " +
                              std::to_string(s.class_id) + ", not " + std::to_string(c));
      texts.push_back(s.tokens);
    }
  }
  AnchorEmbeddings out;
  out.classes = C;
  out.per_class = M;
  out.dim = enc.out_dim();
  out.checkpoint = checkpoint;
  out.values = encode_texts(enc.clone(false), texts).value().reshaped({C, M, out.dim});
  return out;
}

// ---- LGR forward -----------------------------------------------------------

HeadBatch lgr_forward(const Var& image_emb, const Var& anchors, const LgrParams& p) {
  const Shape& as = anchors.shape();
  if (as.size() != 3) throw ShapeError("lgr_forward: anchors must be C x M x D, got " + shape_str(as));
  const std::size_t C = as[0], M = as[1], D = as[2];
  if (image_emb.shape().size() != 2 || image_emb.shape()[1] != D)
    throw ShapeError("lgr_forward: image embeddings " + shape_str(image_emb.shape()) +
                     " do not match anchor width " + std::to_string(D));
  if (p.dim() != D || p.classes() != C)
    throw ShapeError("lgr_forward: head built for D=" + std::to_string(p.dim()) +
                     ", C=" + std::to_string(p.classes()) + " but anchors are " + shape_str(as));
  const std::size_t B = image_emb.shape()[0];

  Var q = add_bias(matmul(layer_norm(image_emb, p.q_gain, p.q_bias), p.wq), p.bq);
  Var flat = reshape(anchors, {C * M, D});
  Var k = add_bias(matmul(layer_norm(flat, p.k_gain, p.k_bias), p.wk), p.bk);
  Var scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(D)));

  HeadBatch out;
  out.attention = softmax(reshape(scores, {B, C, M}), 2);
  out.gather = class_gather(out.attention, anchors);
  out.p_text = softmax(div_scalar(rowwise_cosine(image_emb, out.gather), p.tau.tau), 1);
  Var h = relu(add_bias(matmul(image_emb, p.mlp_w1), p.mlp_b1));
  out.p_image = softmax(add_bias(matmul(h, p.mlp_w2), p.mlp_b2), 1);
  return out;
}

HeadBatch lgr_forward(const Var& image_emb, const AnchorEmbeddings& anchors,
                      const LgrParams& params) {
  return lgr_forward(image_emb, Var::constant(anchors.values), params);
}

HeadOutput head_row(const HeadBatch& batch, std::size_t b) {
  HeadOutput o;
  const Tensor& pi = batch.p_image.value();
  const Tensor& pt = batch.p_text.value();
  const std::size_t C = pi.dim(1);
  o.p_image.assign(pi.row(b).begin(), pi.row(b).end());
  o.p_text.assign(pt.row(b).begin(), pt.row(b).end());
  o.p.resize(C);
  for (std::size_t c = 0; c < C; ++c) o.p[c] = o.p_image[c] + o.p_text[c];

  const Tensor& at = batch.attention.value();
  const std::size_t M = at.dim(2);
  o.attention = Tensor({C, M});
  std::copy_n(at.vec().begin() + static_cast<std::ptrdiff_t>(b * C * M), C * M,
              o.attention.vec().begin());
  const Tensor& g = batch.gather.value();
  const std::size_t D = g.dim(2);
  o.gather = Tensor({C, D});
  std::copy_n(g.vec().begin() + static_cast<std::ptrdiff_t>(b * C * D), C * D,
              o.gather.vec().begin());
  return o;
}

HeadOutput lgr_forward(std::span<const double> image_emb, const AnchorEmbeddings& anchors,
                       const LgrParams& params) {
  Tensor e({1, image_emb.size()}, std::vector<double>(image_emb.begin(), image_emb.end()));
  return head_row(lgr_forward(Var::constant(e), anchors, params), 0);
}

Var rec_loss(const HeadBatch& out, const std::vector<std::size_t>& labels) {
  return add(cross_entropy(out.p_image, labels), cross_entropy(out.p_text, labels));
}

double rec_loss(const HeadOutput& out, std::size_t label) {
  return cross_entropy(out.p_image, label) + cross_entropy(out.p_text, label);
}

std::size_t predict(std::span<const double> p_image, std::span<const double> p_text) {
  if (p_image.size() != p_text.size() || p_image.empty())
    throw ShapeError("predict: probability vectors must be non-empty and equally long");
  std::vector<double> p(p_image.size());
  for (std::size_t c = 0; c < p.size(); ++c) p[c] = p_image[c] + p_text[c];
  return argmax_first(p);
}

std::size_t predict(const HeadOutput& out) { return predict(out.p_image, out.p_text); }

// ---- baseline heads --------------------------------------------------------

FcHead FcHead::init(std::size_t dim, std::size_t classes, std::uint64_t seed) {
  if (dim == 0 || classes == 0) throw ValidationError("FC head: dimensions must be positive");
  Rng rng = make_rng(seed, stream::kInitHead);
  return {param(glorot(rng, dim, classes)), param(Tensor({classes}, 0.0))};
}

FcHead FcHead::zeros(std::size_t dim, std::size_t classes) {
  return {param(Tensor({dim, classes}, 0.0)), param(Tensor({classes}, 0.0))};
}

void FcHead::save(Checkpoint& ck) const {
  ck.put("fc.w", w.value());
  ck.put("fc.b", b.value());
}

FcHead FcHead::load(const Checkpoint& ck, bool trainable) {
  FcHead h{param(ck.get("fc.w"), trainable), param(ck.get("fc.b"), trainable)};
  if (h.w.value().rank() != 2 || h.w.shape()[1] != h.b.value().size())
    throw IoError("checkpoint FC head sections have inconsistent shapes");
  return h;
}

Var fc_forward(const Var& image_emb, const FcHead& head) {
  return softmax(add_bias(matmul(image_emb, head.w), head.b), 1);
}

Var knn_forward(const Var& image_emb, const AnchorEmbeddings& anchors, const Var& tau) {
  const std::size_t B = image_emb.shape()[0];
  const Tensor flat = anchors.values.reshaped({anchors.classes * anchors.per_class, anchors.dim});
  Var cos = cosine_sim_matrix(image_emb, Var::constant(flat));
  Var best = max_last_axis(reshape(cos, {B, anchors.classes, anchors.per_class}));
  return softmax(div_scalar(best, tau), 1);
}

Tensor prompt_class_means(const ClassCorpus& corpus, const LinguisticEncoder& enc) {
  const LinguisticEncoder frozen = enc.clone(false);
  const std::size_t D = enc.out_dim();
  Tensor means({corpus.num_classes, D});
  for (std::size_t c = 0; c < corpus.num_classes; ++c) {
    std::vector<TokenSeq> prompts;
    for (auto id : corpus.by_class[c])
      if (corpus.at(id).source == SentenceSource::Prompt) prompts.push_back(corpus.at(id).tokens);
    if (prompts.empty())
      throw ValidationError("zero-shot: class " + std::to_string(c) + " has no prompt sentences");
    const Tensor e = encode_texts(frozen, prompts).value();
    auto dst = means.row(c);
    for (std::size_t i = 0; i < prompts.size(); ++i)
      for (std::size_t d = 0; d < D; ++d) dst[d] += e.at(i, d);
    for (auto& v : dst) v /= static_cast<double>(prompts.size());
  }
  return means;
}

std::size_t zero_shot_classify(std::span<const double> image_emb, const Tensor& class_means) {
  if (class_means.rank() != 2 || class_means.dim(1) != image_emb.size())
    throw ShapeError("zero_shot_classify: class means " + shape_str(class_means.shape()) +
                     " do not match embedding width " + std::to_string(image_emb.size()));
  auto norm = [](std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  };
  const double ne = norm(image_emb);
  if (ne == 0.0) throw NumericError("zero_shot_classify: image embedding has zero norm");
  std::vector<double> cos(class_means.dim(0));
  for (std::size_t c = 0; c < cos.size(); ++c) {
    auto m = class_means.row(c);
    const double nm = norm(m);
    if (nm == 0.0)
      throw NumericError("zero_shot_classify: class " + std::to_string(c) + " mean has zero norm");
    double dot = 0.0;
    for (std::size_t d = 0; d < m.size(); ++d) dot += m[d] * image_emb[d];
    cos[c] = dot / (ne * nm);
  }
  return argmax_first(cos);
}

std::size_t zero_shot_classify(std::span<const double> image_emb, const AnchorEmbeddings& anchors) {
  Tensor means({anchors.classes, anchors.dim});
  const auto& v = anchors.values.vec();
  for (std::size_t c = 0; c < anchors.classes; ++c) {
    auto dst = means.row(c);
    for (std::size_t m = 0; m < anchors.per_class; ++m)
      for (std::size_t d = 0; d < anchors.dim; ++d)
        dst[d] += v[(c * anchors.per_class + m) * anchors.dim + d];
    for (auto& x : dst) x /= static_cast<double>(anchors.per_class);
  }
  return zero_shot_classify(image_emb, means);
}

// ---- fine-tuning -----------------------------------------------------------

std::string head_name(HeadKind h) {
  switch (h) {
    case HeadKind::LGR: return "lgr";
    case HeadKind::FC: return "fc";
    case HeadKind::KNN: return "knn";
  }
  return "?";
}

HeadKind parse_head(const std::string& s) {
  if (s == "lgr" || s == "LGR") return HeadKind::LGR;
  if (s == "fc" || s == "FC") return HeadKind::FC;
  if (s == "knn" || s == "KNN") return HeadKind::KNN;
  throw ValidationError("unknown head '" + s + "' (expected lgr, fc or knn)");
}

FinetuneModel FinetuneModel::init(HeadKind head, const EncoderPair& pretrained,
                                  const Digest& pretrain, std::size_t classes,
                                  std::uint64_t seed) {
  FinetuneModel m;
  m.head = head;
  m.visual = pretrained.visual.clone(true);
  m.pretrain = pretrain;
  const std::size_t D = m.visual.out_dim();
  const double tau = pretrained.temperature.value();
  switch (head) {
    case HeadKind::LGR: m.lgr = LgrParams::init(D, classes, tau, seed); break;
    case HeadKind::FC: m.fc = FcHead::init(D, classes, seed); break;
    case HeadKind::KNN: m.tau = Temperature::init(tau); break;
  }
  return m;
}

std::vector<ParamRef> FinetuneModel::params() const {
  std::vector<ParamRef> out;
  visual.append_params(out);
  switch (head) {
    case HeadKind::LGR: lgr.append_params(out); break;
    case HeadKind::FC:
      out.push_back({fc.w, true});
      out.push_back({fc.b, false});
      break;
    case HeadKind::KNN: out.push_back({tau.tau, false}); break;
  }
  return out;
}

Checkpoint FinetuneModel::to_checkpoint() const {
  Checkpoint ck;
  ck.meta["stage"] = "finetune";
  ck.meta["head"] = head_name(head);
  ck.meta["pretrain"] = hex(pretrain);
  visual.save(ck);
  switch (head) {
    case HeadKind::LGR: lgr.save(ck); break;
    case HeadKind::FC: fc.save(ck); break;
    case HeadKind::KNN: ck.put("knn.tau", tau.tau.value()); break;
  }
  return ck;
}

namespace {

FinetuneModel load_model(const Checkpoint& ck, bool trainable) {
  auto it = ck.meta.find("head");
  if (it == ck.meta.end()) throw IoError("checkpoint is not a fine-tuned model (no head entry)");
  FinetuneModel m;
  m.head = parse_head(it->second);
  if (auto p = ck.meta.find("pretrain"); p != ck.meta.end()) m.pretrain = digest_from_hex(p->second);
  m.visual = VisualEncoder::load(ck, trainable);
  switch (m.head) {
    case HeadKind::LGR: m.lgr = LgrParams::load(ck, trainable); break;
    case HeadKind::FC: m.fc = FcHead::load(ck, trainable); break;
    case HeadKind::KNN: m.tau = {Var(ck.get("knn.tau"), trainable)}; break;
  }
  return m;
}

// Class probabilities for a batch of embeddings; the unused branch is empty.
struct Probs {
  Var image, text;
};

Probs head_probs(const FinetuneModel& m, const Var& emb, const AnchorEmbeddings& anchors) {
  switch (m.head) {
    case HeadKind::LGR: {
      HeadBatch hb = lgr_forward(emb, anchors, m.lgr);
      return {hb.p_image, hb.p_text};
    }
    case HeadKind::FC: return {fc_forward(emb, m.fc), Var()};
    case HeadKind::KNN: return {Var(), knn_forward(emb, anchors, m.tau.tau)};
  }
  return {};
}

}  // namespace

FinetuneModel FinetuneModel::from_checkpoint(const Checkpoint& ck) { return load_model(ck, true); }

std::string format_finetune_trace(const std::vector<FinetuneTraceRow>& rows) {
  std::ostringstream os;
  os << "epoch\tstep\tL_rec\ttau\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g\t%.17g", r.loss, r.tau);
    os << r.epoch << '\t' << r.step << '\t' << buf << '\n';
  }
  return os.str();
}

std::vector<FinetuneTraceRow> run_finetune(const LongTailDataset& data,
                                           const AnchorEmbeddings& anchors, FinetuneModel& model,
                                           const FinetuneConfig& cfg) {
  if (cfg.batch_size == 0) throw ValidationError("fine-tune batch size must be positive");
  if (anchors.checkpoint != model.pretrain)
    throw ValidationError(
        "anchor/checkpoint hash mismatch: anchors were encoded by checkpoint " +
        hex(anchors.checkpoint) + " but the model starts from " + hex(model.pretrain));
  if (data.dim != model.visual.in_dim())
    throw ValidationError("dataset dimension " + std::to_string(data.dim) +
                          " does not match the visual encoder input " +
                          std::to_string(model.visual.in_dim()));
  if (anchors.classes != data.num_classes || anchors.dim != model.visual.out_dim())
    throw ValidationError("anchor embeddings (" + shape_str(anchors.values.shape()) +
                          ") do not fit the dataset and encoder");

  std::vector<FinetuneTraceRow> trace;
  if (cfg.epochs == 0) return trace;
  SqrtSampler sampler(data.counts, mix_seed(cfg.seed, stream::kFinetuneSampler));
  auto params = model.params();
  OptimState state = make_optim_state(params, cfg.adamw);
  const std::size_t steps_per_epoch = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
  const LrSchedule sched{cfg.base_lr, cfg.min_lr, cfg.epochs * steps_per_epoch};
  Temperature* tau = model.head == HeadKind::LGR   ? &model.lgr.tau
                     : model.head == HeadKind::KNN ? &model.tau
                                                   : nullptr;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    FinetuneTraceRow row;
    row.epoch = epoch;
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      Tensor images({cfg.batch_size, data.dim});
      std::vector<std::size_t> labels(cfg.batch_size);
      for (std::size_t i = 0; i < cfg.batch_size; ++i) {
        const std::size_t r = sampler.next_index();
        auto src = data.features.row(r);
        std::copy(src.begin(), src.end(), images.row(i).begin());
        labels[i] = data.labels[r];
      }
      Var emb = encode_images(model.visual, images);
      Probs pr = head_probs(model, emb, anchors);
      Var loss;
      if (pr.image.defined() && pr.text.defined())
        loss = add(cross_entropy(pr.image, labels), cross_entropy(pr.text, labels));
      else
        loss = cross_entropy(pr.image.defined() ? pr.image : pr.text, labels);
      if (!std::isfinite(loss.item()))
        throw NumericError("fine-tuning loss is not finite at step " + std::to_string(step));
      for (auto& p : params) p.var.zero_grad();
      loss.backward();
      adamw_step(params, state, cosine_lr(sched, step));
      if (tau) tau->clamp();
      row.loss += loss.item();
    }
    row.loss /= static_cast<double>(steps_per_epoch);
    row.step = step;
    row.tau = tau ? tau->value() : 0.0;
    trace.push_back(row);
  }
  return trace;
}

std::vector<Prediction> predict_all(const FinetuneModel& model, const AnchorEmbeddings& anchors,
                                    const Tensor& features, const std::vector<std::size_t>& labels,
                                    std::size_t threads) {
  if (features.rank() != 2 || features.dim(0) != labels.size())
    throw ShapeError("predict_all: " + shape_str(features.shape()) + " features for " +
                     std::to_string(labels.size()) + " labels");
  if (model.head != HeadKind::FC && anchors.checkpoint != model.pretrain)
    throw ValidationError("anchor/checkpoint hash mismatch: cache " + hex(anchors.checkpoint) +
                          " vs model " + hex(model.pretrain));
  const FinetuneModel frozen = load_model(model.to_checkpoint(), false);
  const std::size_t n = labels.size();
  std::vector<Prediction> out(n);
  const std::size_t chunks = (n + kInferChunk - 1) / kInferChunk;
  parallel_for(chunks, threads, [&](std::size_t k) {
    const std::size_t begin = k * kInferChunk, end = std::min(n, begin + kInferChunk);
    Var emb = encode_images(frozen.visual, rows_of(features, begin, end));
    Probs pr = head_probs(frozen, emb, anchors);
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t b = i - begin;
      Prediction& p = out[i];
      p.label = labels[i];
      if (pr.image.defined() && pr.text.defined())
        p.pred = predict(pr.image.value().row(b), pr.text.value().row(b));
      else
        p.pred = argmax_first((pr.image.defined() ? pr.image : pr.text).value().row(b));
      if (pr.image.defined()) p.p_image = pr.image.value().at(b, p.pred);
      if (pr.text.defined()) p.p_text = pr.text.value().at(b, p.pred);
    }
  });
  return out;
}

std::string format_predictions(const std::vector<Prediction>& preds) {
  std::ostringstream os;
  char buf[96];
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& p = preds[i];
    std::snprintf(buf, sizeof buf, "%.17g\t%.17g", p.p_image, p.p_text);
    os << i << '\t' << p.label << '\t' << p.pred << '\t' << buf << '\n';
  }
  return os.str();
}

}  // namespace vlltr
