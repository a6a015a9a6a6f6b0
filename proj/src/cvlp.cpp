#include "vlltr/cvlp.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "vlltr/error.hpp"

namespace vlltr {

CclLoss ccl_loss(const Var& sim, const std::vector<std::size_t>& image_labels,
                 const std::vector<std::size_t>& text_labels, const Var& tau) {
  if (sim.value().rank() != 2 || sim.shape()[0] != image_labels.size() ||
      sim.shape()[1] != text_labels.size())
    throw ShapeError("ccl_loss: similarity " + shape_str(sim.shape()) + " vs " +
                     std::to_string(image_labels.size()) + " image / " +
                     std::to_string(text_labels.size()) + " text labels");
  if (!(tau.value()[0] > 0.0)) throw ValidationError("ccl_loss: temperature must be positive");
  const std::size_t n = image_labels.size(), m = text_labels.size();

  Tensor w_vis({n, m}, 0.0), w_lin({n, m}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t pos = 0;
    for (std::size_t j = 0; j < m; ++j) pos += text_labels[j] == image_labels[i];
    if (pos == 0)
      throw ValidationError("ccl_loss: image " + std::to_string(i) + " has no positive text");
    for (std::size_t j = 0; j < m; ++j)
      if (text_labels[j] == image_labels[i])
        w_vis.at(i, j) = -1.0 / (static_cast<double>(pos) * static_cast<double>(n));
  }
  for (std::size_t j = 0; j < m; ++j) {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n; ++i) pos += image_labels[i] == text_labels[j];
    if (pos == 0)
      throw ValidationError("ccl_loss: text " + std::to_string(j) + " has no positive image");
    for (std::size_t i = 0; i < n; ++i)
      if (image_labels[i] == text_labels[j])
        w_lin.at(i, j) = -1.0 / (static_cast<double>(pos) * static_cast<double>(m));
  }
  Var z = div_scalar(sim, tau);
  Var vis = weighted_sum(log_softmax(z, 1), w_vis);
  Var lin = weighted_sum(log_softmax(z, 0), w_lin);
  return {vis, lin, add(vis, lin)};
}

CclLoss ccl_loss(const Var& sim, const std::vector<std::size_t>& labels, const Var& tau) {
  return ccl_loss(sim, labels, labels, tau);
}

Var distill_loss(const Var& sim, const Tensor& teacher_sim, const Var& tau, double teacher_tau) {
  if (sim.value().rank() != 2 || sim.shape()[0] != sim.shape()[1] ||
      teacher_sim.shape() != sim.shape())
    throw ShapeError("distill_loss: student " + shape_str(sim.shape()) + " vs teacher " +
                     shape_str(teacher_sim.shape()));
  if (!(teacher_tau > 0.0)) throw ValidationError("distill_loss: teacher temperature must be positive");
  const std::size_t n = sim.shape()[0];
  Tensor tz = teacher_sim;
  for (auto& v : tz.vec()) v /= teacher_tau;
  const Tensor t_row = softmax(Var::constant(tz), 1).value();
  const Tensor t_col = softmax(Var::constant(tz), 0).value();
  Tensor w_row({n, n}, 0.0), w_col({n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    w_row.at(i, i) = -t_row.at(i, i) / static_cast<double>(n);
    w_col.at(i, i) = -t_col.at(i, i) / static_cast<double>(n);
  }
  Var z = div_scalar(sim, tau);
  return add(weighted_sum(log_softmax(z, 1), w_row), weighted_sum(log_softmax(z, 0), w_col));
}

PairSampler::PairSampler(const LongTailDataset& data, const ClassCorpus& corpus,
                         std::uint64_t seed)
    : data_(data),
      corpus_(corpus),
      images_(data.counts, seed),
      text_rng_(make_rng(seed, stream::kTextDraw)) {
  if (corpus.num_classes != data.num_classes)
    throw ValidationError("corpus has " + std::to_string(corpus.num_classes) +
                          " classes but dataset has " + std::to_string(data.num_classes));
}

PairedBatch PairSampler::next(std::size_t n) {
  PairedBatch b;
  b.images = Tensor({n, data_.dim});
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t row = images_.next_index();
    const std::size_t c = data_.labels[row];
    auto src = data_.features.row(row);
    std::copy(src.begin(), src.end(), b.images.row(i).begin());
    const auto& pool = corpus_.by_class[c];
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    b.texts.push_back(corpus_.at(pool[pick(text_rng_)]).tokens);
    b.labels.push_back(c);
  }
  return b;
}

PretrainLoss pretrain_loss(const PairedBatch& batch, const EncoderPair& enc,
                           const TeacherPair* teacher, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("lambda must lie in [0, 1]");
  Var sim = cosine_sim_matrix(encode_images(enc.visual, batch.images),
                              encode_texts(enc.linguistic, batch.texts));
  PretrainLoss out;
  const CclLoss ccl = ccl_loss(sim, batch.labels, enc.temperature.tau);
  out.ccl = ccl.total.item();
  if (lambda == 1.0) {
    out.pre = ccl.total;
    return out;
  }
  if (!teacher) throw ValidationError("pretrain_loss: lambda < 1 requires a teacher");
  Var dis = distill_loss(sim, teacher->similarity(batch.images, batch.texts),
                         enc.temperature.tau, teacher->temperature());
  out.dis = dis.item();
  out.dis_evaluated = true;
  out.pre = lambda == 0.0 ? dis : add(scale(ccl.total, lambda), scale(dis, 1.0 - lambda));
  return out;
}

std::string format_trace(const std::vector<TraceRow>& rows) {
  std::string out;
  char buf[40];
  auto num = [&](double v) {
    out += '\t';
    out.append(buf, std::to_chars(buf, buf + sizeof buf, v).ptr);
  };
  for (const auto& r : rows) {
    out += std::to_string(r.epoch) + '\t' + std::to_string(r.step);
    num(r.ccl), num(r.dis), num(r.pre), num(r.tau);
    out += '\n';
  }
  return out;
}

std::vector<TraceRow> parse_trace(const std::string& text) {
  std::istringstream in(text);
  std::vector<TraceRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    TraceRow r;
    if (!(ls >> r.epoch >> r.step >> r.ccl >> r.dis >> r.pre >> r.tau))
      throw IoError("malformed trace line: " + line);
    rows.push_back(r);
  }
  return rows;
}

std::vector<TraceRow> run_pretrain(const LongTailDataset& data, const ClassCorpus& corpus,
                                   EncoderPair& enc, const TeacherPair* teacher,
                                   const PretrainConfig& cfg) {
  if (cfg.batch_size == 0) throw ValidationError("pretrain batch size must be positive");
  if (data.dim != enc.visual.in_dim())
    throw ValidationError("dataset dimension " + std::to_string(data.dim) +
                          " does not match the visual encoder input " +
                          std::to_string(enc.visual.in_dim()));
  std::vector<TraceRow> trace;
  if (cfg.epochs == 0) return trace;

  PairSampler sampler(data, corpus, cfg.seed);
  auto params = enc.params();
  OptimState state = make_optim_state(params, cfg.adamw);
  const std::size_t steps_per_epoch = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
  const LrSchedule sched{cfg.base_lr, cfg.min_lr, cfg.epochs * steps_per_epoch};
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    TraceRow row;
    row.epoch = epoch;
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      const PairedBatch batch = sampler.next(cfg.batch_size);
      PretrainLoss loss = pretrain_loss(batch, enc, teacher, cfg.lambda);
      if (!std::isfinite(loss.pre.item()))
        throw NumericError("pre-training loss is not finite at step " + std::to_string(step));
      for (auto& p : params) p.var.zero_grad();
      loss.pre.backward();
      adamw_step(params, state, cosine_lr(sched, step));
      enc.temperature.clamp();
      row.ccl += loss.ccl;
      row.dis += loss.dis;
      row.pre += loss.pre.item();
    }
    const auto k = static_cast<double>(steps_per_epoch);
    row.ccl /= k;
    row.dis /= k;
    row.pre /= k;
    row.step = step;
    row.tau = enc.temperature.value();
    trace.push_back(row);
  }
  return trace;
}

}  // namespace vlltr
