#include "vlltr/anss.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "vlltr/error.hpp"
#include "vlltr/io.hpp"
#include "vlltr/parallel.hpp"

namespace vlltr {

ProbeBatch build_probe(const LongTailDataset& data, std::size_t class_id, std::size_t cap,
                       std::uint64_t seed) {
  if (class_id >= data.num_classes)
    throw ValidationError("build_probe: class " + std::to_string(class_id) + " out of range");
  if (cap == 0) throw ValidationError("build_probe: cap must be positive");
  const std::size_t count = data.counts[class_id];
  if (count == 0)
    throw ValidationError("build_probe: class " + std::to_string(class_id) + " has no images");
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), data.class_offset(class_id));
  Rng rng = make_rng(mix_seed(seed, class_id), stream::kProbe);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(std::min(cap, count));

  ProbeBatch p;
  p.class_id = class_id;
  p.images = Tensor({order.size(), data.dim});
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto src = data.features.row(order[i]);
    std::copy(src.begin(), src.end(), p.images.row(i).begin());
  }
  p.rows = std::move(order);
  return p;
}

ProbePool ProbePool::build(const std::vector<ProbeBatch>& probes, const VisualEncoder& enc) {
  ProbePool pool;
  std::size_t total = 0;
  for (const auto& p : probes) total += p.rows.size();
  if (total == 0) throw ValidationError("probe pool is empty");
  Tensor stacked({total, enc.in_dim()});
  std::size_t r = 0;
  for (const auto& p : probes) {
    pool.per_class.push_back(p.rows.size());
    for (std::size_t i = 0; i < p.rows.size(); ++i, ++r) {
      auto src = p.images.row(i);
      std::copy(src.begin(), src.end(), stacked.row(r).begin());
      pool.labels.push_back(p.class_id);
    }
  }
  pool.embeddings = encode_images(enc.clone(false), stacked).value();
  return pool;
}

std::vector<double> score_sentences(const std::vector<TokenSeq>& sentences,
                                    const std::vector<std::size_t>& classes,
                                    const ProbePool& pool, const LinguisticEncoder& enc,
                                    double tau) {
  if (sentences.size() != classes.size())
    throw ShapeError("score_sentences: sentence and class lists differ in length");
  if (sentences.empty()) return {};
  if (!(tau > 0.0)) throw ValidationError("score_sentences: temperature must be positive");
  Var texts = encode_texts(enc, sentences);
  Var sim = cosine_sim_matrix(Var::constant(pool.embeddings), detach(texts));
  const Tensor logp = log_softmax(scale(sim, 1.0 / tau), 0).value();
  std::vector<double> out(sentences.size());
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    double acc = 0.0;
    std::size_t pos = 0;
    for (std::size_t j = 0; j < pool.labels.size(); ++j)
      if (pool.labels[j] == classes[s]) {
        acc += logp.at(j, s);
        ++pos;
      }
    if (pos == 0)
      throw ValidationError("score_sentences: class " + std::to_string(classes[s]) +
                            " has no probe images");
    out[s] = -acc / static_cast<double>(pos);
  }
  return out;
}

double score_sentence(const TokenSeq& sentence, std::size_t class_id, const ProbePool& pool,
                      const LinguisticEncoder& enc, double tau) {
  return score_sentences({sentence}, {class_id}, pool, enc, tau).front();
}

std::string mode_name(SelectionMode m) { return m == SelectionMode::AnSS ? "anss" : "cutoff"; }

SelectionMode parse_mode(const std::string& s) {
  if (s == "anss" || s == "AnSS") return SelectionMode::AnSS;
  if (s == "cutoff" || s == "CutOff") return SelectionMode::CutOff;
  throw ValidationError("unknown selection mode '" + s + "' (expected anss or cutoff)");
}

AnchorSet select_anchors(const ClassCorpus& corpus, const LongTailDataset& data,
                         const EncoderPair& enc, std::size_t per_class, SelectionMode mode,
                         std::size_t probe_cap, std::uint64_t seed, std::size_t threads) {
  if (per_class == 0) throw ValidationError("select_anchors: M must be >= 1");
  if (corpus.num_classes != data.num_classes)
    throw ValidationError("select_anchors: corpus and dataset disagree on class count");
  const std::size_t C = corpus.num_classes;
  for (std::size_t c = 0; c < C; ++c)
    if (corpus.by_class[c].empty())
      throw ValidationError("select_anchors: class " + std::to_string(c) + " has no sentences");

  std::vector<ProbeBatch> probes;
  for (std::size_t c = 0; c < C; ++c) probes.push_back(build_probe(data, c, probe_cap, seed));
  const ProbePool pool = ProbePool::build(probes, enc.visual);
  const LinguisticEncoder lin = enc.linguistic.clone(false);
  const double tau = enc.temperature.value();

  AnchorSet out;
  out.mode = mode;
  out.per_class = per_class;
  out.ids.resize(C);
  out.scores.resize(C);
  out.distinct.resize(C);
  parallel_for(C, threads, [&](std::size_t c) {
    const auto& ids = corpus.by_class[c];
    std::vector<TokenSeq> sents;
    for (auto id : ids) sents.push_back(corpus.at(id).tokens);
    const auto scores =
        score_sentences(sents, std::vector<std::size_t>(ids.size(), c), pool, lin, tau);
    std::vector<std::size_t> order(ids.size());
    std::iota(order.begin(), order.end(), 0);
    if (mode == SelectionMode::AnSS)
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] != scores[b] ? scores[a] < scores[b] : ids[a] < ids[b];
      });
    const std::size_t keep = std::min(per_class, ids.size());
    out.distinct[c] = keep;
    for (std::size_t r = 0; r < per_class; ++r) {
      const std::size_t k = order[r % keep];
      out.ids[c].push_back(ids[k]);
      out.scores[c].push_back(scores[k]);
    }
  });
  return out;
}

std::string format_anchors(const AnchorSet& a) {
  std::ostringstream os;
  os << "# mode=" << mode_name(a.mode) << "\n# M=" << a.per_class
     << "\n# checkpoint=" << a.checkpoint << "\n";
  char buf[64];
  for (std::size_t c = 0; c < a.ids.size(); ++c)
    for (std::size_t r = 0; r < a.ids[c].size(); ++r) {
      std::snprintf(buf, sizeof buf, "%.17g", a.scores[c][r]);
      os << c << '\t' << r << '\t' << a.ids[c][r] << '\t' << buf << '\n';
    }
  return os.str();
}

AnchorSet parse_anchors(const std::string& text) {
  std::istringstream in(text);
  AnchorSet a;
  bool have_mode = false, have_m = false;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string key = line.substr(1, eq - 1);
      key.erase(0, key.find_first_not_of(' '));
      const std::string val = line.substr(eq + 1);
      if (key == "mode") {
        a.mode = parse_mode(val);
        have_mode = true;
      } else if (key == "M") {
        a.per_class = std::stoul(val);
        have_m = true;
      } else if (key == "checkpoint") {
        a.checkpoint = val;
      }
      continue;
    }
    std::istringstream ls(line);
    std::size_t c, r, id;
    double score;
    if (!(ls >> c >> r >> id >> score)) throw IoError("malformed anchor line: " + line);
    if (c >= a.ids.size()) {
      a.ids.resize(c + 1);
      a.scores.resize(c + 1);
    }
    if (r != a.ids[c].size()) throw IoError("anchor ranks out of order for class " + std::to_string(c));
    a.ids[c].push_back(id);
    a.scores[c].push_back(score);
  }
  if (!have_mode || !have_m) throw IoError("anchor file header is missing mode or M");
  a.distinct.resize(a.ids.size());
  for (std::size_t c = 0; c < a.ids.size(); ++c) {
    if (a.ids[c].size() != a.per_class)
      throw IoError("anchor file: class " + std::to_string(c) + " has " +
                    std::to_string(a.ids[c].size()) + " rows, expected " +
                    std::to_string(a.per_class));
    std::vector<std::size_t> u = a.ids[c];
    std::sort(u.begin(), u.end());
    a.distinct[c] = static_cast<std::size_t>(std::unique(u.begin(), u.end()) - u.begin());
  }
  return a;
}

void write_anchors(const AnchorSet& a, const std::filesystem::path& path) {
  write_file(path, format_anchors(a));
}

AnchorSet read_anchors(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("anchor file " + path.string() + " is missing");
  return parse_anchors(read_file(path));
}

}  // namespace vlltr
