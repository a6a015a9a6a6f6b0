#include "vlltr/datasynth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vlltr/error.hpp"
#include "vlltr/io.hpp"

namespace vlltr {

Counts gen_pareto_counts(std::size_t num_classes, std::size_t n_max, std::size_t n_min,
                         double alpha) {
  if (num_classes < 2) throw ValidationError("gen_pareto_counts: need at least 2 classes");
  if (n_min < 1) throw ValidationError("gen_pareto_counts: n_min must be >= 1");
  if (n_max < n_min)
    throw ValidationError("gen_pareto_counts: infeasible bounds n_max=" + std::to_string(n_max) +
                          " < n_min=" + std::to_string(n_min));
  if (!(alpha > 0.0)) throw ValidationError("gen_pareto_counts: alpha must be positive");
  const double p = std::log(static_cast<double>(n_max) / static_cast<double>(n_min)) /
                   std::log(static_cast<double>(num_classes));
  Counts counts(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double v = static_cast<double>(n_max) * std::pow(static_cast<double>(c + 1), -p);
    counts[c] = std::max<std::size_t>(n_min, static_cast<std::size_t>(std::llround(v)));
  }
  counts.front() = n_max;
  counts.back() = n_min;
  return counts;
}

std::size_t LongTailDataset::class_offset(std::size_t c) const {
  return std::accumulate(counts.begin(), counts.begin() + static_cast<std::ptrdiff_t>(c),
                         std::size_t{0});
}

ConceptLayout::ConceptLayout(std::size_t c)
    : num_classes(c), num_attributes(std::max<std::size_t>(3, (c + 1) / 2)) {}

std::array<std::size_t, 2> ConceptLayout::attributes_of(std::size_t c) const {
  const std::size_t a = c % num_attributes;
  std::size_t b = (3 * c + 1) % num_attributes;
  if (b == a) b = (a + 1) % num_attributes;
  return {a, b};
}

namespace {

void normalize(std::span<double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (double& x : v) x /= n;
}

std::vector<double> random_unit(Rng& rng, std::size_t d) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(d);
  for (auto& x : v) x = g(rng);
  normalize(v);
  return v;
}

// Rounds through float32 so values survive the on-disk encoding exactly.
double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

void fill_split(Tensor& out, std::vector<std::size_t>& labels, const Tensor& protos,
                const Counts& counts, double sigma, Rng rng) {
  const std::size_t d = protos.dim(1);
  const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  out = Tensor({total, d});
  labels.assign(total, 0);
  std::normal_distribution<double> g(0.0, 1.0);
  std::size_t r = 0;
  for (std::size_t c = 0; c < counts.size(); ++c)
    for (std::size_t i = 0; i < counts[c]; ++i, ++r) {
      labels[r] = c;
      for (std::size_t k = 0; k < d; ++k) {
        const double noise = sigma > 0.0 ? sigma * g(rng) : 0.0;
        out.at(r, k) = f32(protos.at(c, k) + noise);
      }
    }
}

}  // namespace

Tensor class_prototypes(std::size_t num_classes, std::size_t d_img, std::uint64_t seed) {
  if (d_img < 2) throw ValidationError("class_prototypes: d_img must be >= 2");
  const ConceptLayout layout(num_classes);
  Rng attr_rng = make_rng(seed, stream::kAttributes);
  std::vector<std::vector<double>> attrs;
  for (std::size_t a = 0; a < layout.num_attributes; ++a)
    attrs.push_back(random_unit(attr_rng, d_img));
  Rng rng = make_rng(seed, stream::kPrototypes);
  Tensor protos({num_classes, d_img});
  for (std::size_t c = 0; c < num_classes; ++c) {
    const auto own = random_unit(rng, d_img);
    const auto [a, b] = layout.attributes_of(c);
    std::vector<double> shared(d_img);
    for (std::size_t k = 0; k < d_img; ++k) shared[k] = attrs[a][k] + attrs[b][k];
    normalize(shared);
    auto row = protos.row(c);
    for (std::size_t k = 0; k < d_img; ++k) row[k] = 0.45 * shared[k] + 0.9 * own[k];
    normalize(row);
    for (auto& x : row) x = f32(x);
  }
  return protos;
}

LongTailDataset gen_synthetic(std::size_t num_classes, const Counts& counts, std::size_t d_img,
                              double noise_sigma, std::uint64_t seed,
                              std::size_t test_per_class) {
  if (d_img < 2) throw ValidationError("gen_synthetic: d_img must be >= 2");
  if (counts.size() != num_classes)
    throw ValidationError("gen_synthetic: " + std::to_string(counts.size()) + " counts for " +
                          std::to_string(num_classes) + " classes");
  if (std::any_of(counts.begin(), counts.end(), [](auto n) { return n == 0; }))
    throw ValidationError("gen_synthetic: every class needs at least one sample");
  if (test_per_class == 0) throw ValidationError("gen_synthetic: test_per_class must be >= 1");
  if (noise_sigma < 0.0) throw ValidationError("gen_synthetic: negative noise_sigma");

  const Tensor protos = class_prototypes(num_classes, d_img, seed);
  LongTailDataset ds;
  ds.num_classes = num_classes;
  ds.dim = d_img;
  ds.counts = counts;
  ds.test_counts.assign(num_classes, test_per_class);
  fill_split(ds.features, ds.labels, protos, counts, noise_sigma,
             make_rng(seed, stream::kTrainNoise));
  fill_split(ds.test_features, ds.test_labels, protos, ds.test_counts, noise_sigma,
             make_rng(seed, stream::kTestNoise));
  return ds;
}

namespace {

constexpr std::uint32_t kDatasetVersion = 1;

void write_rows(std::ostream& os, const Tensor& t) {
  for (double v : t.data()) bin::put<float>(os, static_cast<float>(v));
}

void read_split(std::istream& is, std::size_t C, std::size_t d, Counts& counts, Tensor& feats,
                std::vector<std::size_t>& labels) {
  counts.resize(C);
  for (auto& n : counts) n = bin::get<std::uint32_t>(is);
  const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  if (total == 0) throw IoError("dataset split has no samples");
  feats = Tensor({total, d});
  for (auto& v : feats.vec()) v = static_cast<double>(bin::get<float>(is));
  labels.clear();
  for (std::size_t c = 0; c < C; ++c) labels.insert(labels.end(), counts[c], c);
}

}  // namespace

void write_dataset(const LongTailDataset& ds, const std::filesystem::path& path) {
  std::ostringstream os(std::ios::binary);
  bin::put_magic(os, "VLLT");
  bin::put<std::uint32_t>(os, kDatasetVersion);
  bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(ds.num_classes));
  bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(ds.dim));
  for (auto n : ds.counts) bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(n));
  write_rows(os, ds.features);
  for (auto n : ds.test_counts) bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(n));
  write_rows(os, ds.test_features);
  write_file(path, os.str());
}

LongTailDataset read_dataset(const std::filesystem::path& path) {
  std::istringstream is(read_file(path), std::ios::binary);
  bin::expect_magic(is, "VLLT");
  const auto version = bin::get<std::uint32_t>(is);
  if (version != kDatasetVersion)
    throw IoError("unsupported dataset version " + std::to_string(version));
  LongTailDataset ds;
  ds.num_classes = bin::get<std::uint32_t>(is);
  ds.dim = bin::get<std::uint32_t>(is);
  if (ds.num_classes == 0 || ds.dim < 2) throw IoError("dataset header is invalid");
  read_split(is, ds.num_classes, ds.dim, ds.counts, ds.features, ds.labels);
  read_split(is, ds.num_classes, ds.dim, ds.test_counts, ds.test_features, ds.test_labels);
  if (is.peek() != std::char_traits<char>::eof()) throw IoError("trailing bytes in dataset");
  return ds;
}

// ---- corpus ----------------------------------------------------------------

std::string source_name(SentenceSource s) {
  return s == SentenceSource::Prompt ? "prompt" : "encyclopedia";
}

void ClassCorpus::reindex(std::size_t max_tokens) {
  by_class.assign(num_classes, {});
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    auto& s = sentences[i];
    s.id = i;
    if (s.class_id >= num_classes)
      throw ValidationError("corpus: sentence " + std::to_string(i) + " has class " +
                            std::to_string(s.class_id) + " >= " + std::to_string(num_classes));
    if (s.tokens.empty() || s.tokens.size() > max_tokens)
      throw ValidationError("corpus: sentence " + std::to_string(i) + " has " +
                            std::to_string(s.tokens.size()) + " tokens (allowed 1.." +
                            std::to_string(max_tokens) + ")");
    by_class[s.class_id].push_back(i);
  }
  for (std::size_t c = 0; c < num_classes; ++c)
    if (by_class[c].empty())
      throw ValidationError("corpus: class " + std::to_string(c) + " has no sentences");
}

VocabLayout::VocabLayout(std::size_t v, std::size_t c)
    : vocab_size(v), num_classes(c), num_attributes(ConceptLayout(c).num_attributes) {
  if (v == 0) throw ValidationError("vocabulary is empty");
  if (v < minimum_size(c))
    throw ValidationError("vocabulary of " + std::to_string(v) + " tokens is too small for " +
                          std::to_string(c) + " classes (need >= " +
                          std::to_string(minimum_size(c)) + ")");
}

std::size_t VocabLayout::minimum_size(std::size_t c) {
  return 2 + c + kDescPerClass * c + ConceptLayout(c).num_attributes + kTemplateWords +
         kMinFiller;
}

std::int32_t VocabLayout::class_name(std::size_t c) const {
  return static_cast<std::int32_t>(2 + c);
}
std::int32_t VocabLayout::descriptive(std::size_t c, std::size_t k) const {
  return static_cast<std::int32_t>(2 + num_classes + c * kDescPerClass + k);
}
std::int32_t VocabLayout::attribute(std::size_t a) const {
  return static_cast<std::int32_t>(2 + num_classes * (1 + kDescPerClass) + a);
}
std::int32_t VocabLayout::template_word(std::size_t k) const {
  return static_cast<std::int32_t>(2 + num_classes * (1 + kDescPerClass) + num_attributes + k);
}
std::int32_t VocabLayout::filler(std::size_t k) const {
  return static_cast<std::int32_t>(2 + num_classes * (1 + kDescPerClass) + num_attributes +
                                   kTemplateWords + k);
}
std::size_t VocabLayout::filler_count() const {
  return vocab_size - static_cast<std::size_t>(filler(0));
}
bool VocabLayout::owned_by(std::int32_t tok, std::size_t c) const {
  if (tok == class_name(c)) return true;
  return tok >= descriptive(c, 0) && tok < descriptive(c, 0) + std::int32_t{kDescPerClass};
}

namespace {

TokenSeq describe(const VocabLayout& vocab, const ConceptLayout& concepts, std::size_t c,
                  Rng& rng) {
  std::uniform_int_distribution<std::size_t> len_d(5, 12);
  std::uniform_int_distribution<std::size_t> desc_d(0, VocabLayout::kDescPerClass - 1);
  std::uniform_int_distribution<std::size_t> fill_d(0, vocab.filler_count() - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto attrs = concepts.attributes_of(c);
  TokenSeq seq{kSos, vocab.descriptive(c, desc_d(rng))};
  const std::size_t len = len_d(rng);
  for (std::size_t i = 1; i < len; ++i) {
    const double r = u(rng);
    if (r < 0.3)
      seq.push_back(vocab.descriptive(c, desc_d(rng)));
    else if (r < 0.4)
      seq.push_back(vocab.class_name(c));
    else if (r < 0.55)
      seq.push_back(vocab.attribute(attrs[u(rng) < 0.5 ? 0 : 1]));
    else
      seq.push_back(vocab.filler(fill_d(rng)));
  }
  seq.push_back(kEos);
  return seq;
}

// Template word sets: all 2-, 3- and 4-subsets of the template words in
// lexicographic order, so distinct templates never share a word multiset.
const std::vector<std::vector<std::size_t>>& template_sets() {
  static const auto sets = [] {
    std::vector<std::vector<std::size_t>> out;
    constexpr std::size_t n = VocabLayout::kTemplateWords;
    for (std::size_t k = 2; k <= 4; ++k) {
      std::vector<std::size_t> idx(k);
      std::iota(idx.begin(), idx.end(), 0);
      while (true) {
        out.push_back(idx);
        std::size_t i = k;
        while (i > 0 && idx[i - 1] == n - k + i - 1) --i;
        if (i == 0) break;
        ++idx[i - 1];
        for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
      }
    }
    return out;
  }();
  return sets;
}

TokenSeq prompt(const VocabLayout& vocab, std::size_t c, std::size_t t) {
  const auto& words = template_sets()[t % template_sets().size()];
  const std::size_t slot = t % (words.size() + 1);
  TokenSeq seq{kSos};
  for (std::size_t k = 0; k <= words.size(); ++k) {
    if (k == slot) seq.push_back(vocab.class_name(c));
    if (k < words.size()) seq.push_back(vocab.template_word(words[k]));
  }
  seq.push_back(kEos);
  return seq;
}

}  // namespace

ClassCorpus gen_corpus(const CorpusParams& p) {
  if (p.num_classes < 1) throw ValidationError("gen_corpus: need at least one class");
  if (p.noise_fraction < 0.0 || p.noise_fraction > 1.0)
    throw ValidationError("gen_corpus: noise_fraction must be in [0, 1]");
  if (p.max_tokens < 16) throw ValidationError("gen_corpus: max_tokens must be >= 16");
  if (p.sentences_per_class + p.prompt_count == 0)
    throw ValidationError("gen_corpus: every class needs at least one sentence");
  if (p.noise_fraction > 0.0 && p.num_classes < 2)
    throw ValidationError("gen_corpus: distractors need at least two classes");
  const VocabLayout vocab(p.vocab_size, p.num_classes);
  const ConceptLayout concepts(p.num_classes);
  Rng rng = make_rng(p.seed, stream::kCorpus);

  ClassCorpus corpus;
  corpus.num_classes = p.num_classes;
  const auto n_noise = static_cast<std::size_t>(
      std::llround(p.noise_fraction * static_cast<double>(p.sentences_per_class)));
  for (std::size_t c = 0; c < p.num_classes; ++c) {
    std::vector<bool> noisy(p.sentences_per_class, false);
    std::fill_n(noisy.begin(), n_noise, true);
    std::shuffle(noisy.begin(), noisy.end(), rng);
    std::uniform_int_distribution<std::size_t> other(0, p.num_classes - 2);
    for (std::size_t i = 0; i < p.sentences_per_class; ++i) {
      Sentence s;
      s.class_id = c;
      s.source = SentenceSource::Encyclopedia;
      if (noisy[i]) {
        std::size_t donor = other(rng);
        if (donor >= c) ++donor;
        s.tokens = describe(vocab, concepts, donor, rng);
        s.distractor = true;
      } else {
        s.tokens = describe(vocab, concepts, c, rng);
      }
      corpus.sentences.push_back(std::move(s));
    }
    for (std::size_t t = 0; t < p.prompt_count; ++t) {
      Sentence s;
      s.class_id = c;
      s.source = SentenceSource::Prompt;
      s.tokens = prompt(vocab, c, t);
      corpus.sentences.push_back(std::move(s));
    }
  }
  corpus.reindex(p.max_tokens);
  return corpus;
}

void write_corpus(const ClassCorpus& corpus, const std::filesystem::path& path) {
  std::ostringstream os;
  for (const auto& s : corpus.sentences) {
    os << s.class_id << '\t' << source_name(s.source) << '\t';
    for (std::size_t i = 0; i < s.tokens.size(); ++i) os << (i ? " " : "") << s.tokens[i];
    os << '\n';
  }
  write_file(path, os.str());
}

ClassCorpus read_corpus(const std::filesystem::path& path, std::size_t max_tokens) {
  std::istringstream in(read_file(path));
  ClassCorpus corpus;
  std::string line;
  std::size_t lineno = 0;
  std::size_t max_class = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos)
      throw IoError("corpus line " + std::to_string(lineno) + ": expected three tab fields");
    Sentence s;
    try {
      s.class_id = std::stoul(line.substr(0, t1));
    } catch (const std::exception&) {
      throw IoError("corpus line " + std::to_string(lineno) + ": bad class id");
    }
    const std::string src = line.substr(t1 + 1, t2 - t1 - 1);
    if (src == "prompt")
      s.source = SentenceSource::Prompt;
    else if (src == "encyclopedia")
      s.source = SentenceSource::Encyclopedia;
    else
      throw IoError("corpus line " + std::to_string(lineno) + ": unknown source '" + src + "'");
    std::istringstream toks(line.substr(t2 + 1));
    long long v;
    while (toks >> v) s.tokens.push_back(static_cast<std::int32_t>(v));
    if (!toks.eof())
      throw IoError("corpus line " + std::to_string(lineno) + ": bad token list");
    max_class = std::max(max_class, s.class_id);
    corpus.sentences.push_back(std::move(s));
  }
  if (corpus.sentences.empty()) throw IoError("corpus " + path.string() + " is empty");
  corpus.num_classes = max_class + 1;
  corpus.reindex(max_tokens);
  return corpus;
}

CorpusStats corpus_stats(const ClassCorpus& corpus) {
  CorpusStats st;
  st.num_classes = corpus.num_classes;
  st.num_sentences = corpus.sentences.size();
  if (corpus.by_class.empty()) return st;
  std::vector<std::size_t> m;
  for (const auto& ids : corpus.by_class) m.push_back(ids.size());
  std::sort(m.begin(), m.end());
  st.m_min = m.front();
  st.m_max = m.back();
  st.m_mean = static_cast<double>(std::accumulate(m.begin(), m.end(), std::size_t{0})) /
              static_cast<double>(m.size());
  const std::size_t h = m.size() / 2;
  st.m_median = m.size() % 2 ? static_cast<double>(m[h])
                             : 0.5 * static_cast<double>(m[h - 1] + m[h]);
  std::size_t tokens = 0;
  for (const auto& s : corpus.sentences) tokens += s.tokens.size();
  st.l_avg = st.num_sentences ? static_cast<double>(tokens) / static_cast<double>(st.num_sentences)
                              : 0.0;
  return st;
}

std::string corpus_stats_json(const CorpusStats& s) {
  nlohmann::ordered_json j;
  j["classes"] = s.num_classes;
  j["sentences"] = s.num_sentences;
  j["M_min"] = s.m_min;
  j["M_max"] = s.m_max;
  j["M_mean"] = s.m_mean;
  j["M_med"] = s.m_median;
  j["L_avg"] = s.l_avg;
  return j.dump(2) + "\n";
}

// ---- sampling --------------------------------------------------------------

std::vector<double> sqrt_weights(const Counts& counts) {
  if (counts.empty()) throw ValidationError("sqrt_weights: empty counts");
  std::vector<double> w(counts.size());
  double z = 0.0;
  for (std::size_t c = 0; c < counts.size(); ++c) z += w[c] = std::sqrt(static_cast<double>(counts[c]));
  if (z == 0.0) throw ValidationError("sqrt_weights: all counts are zero");
  for (auto& v : w) v /= z;
  return w;
}

SqrtSampler::SqrtSampler(Counts counts, std::uint64_t seed)
    : counts_(std::move(counts)), rng_(make_rng(seed, stream::kSampler)) {
  const auto w = sqrt_weights(counts_);
  classes_ = std::discrete_distribution<std::size_t>(w.begin(), w.end());
  offsets_.resize(counts_.size());
  std::exclusive_scan(counts_.begin(), counts_.end(), offsets_.begin(), std::size_t{0});
}

std::size_t SqrtSampler::next_class() { return classes_(rng_); }

std::size_t SqrtSampler::next_index() {
  const std::size_t c = next_class();
  std::uniform_int_distribution<std::size_t> within(0, counts_[c] - 1);
  return offsets_[c] + within(rng_);
}

std::string band_name(Band b) {
  switch (b) {
    case Band::Many: return "many";
    case Band::Medium: return "medium";
    case Band::Few: return "few";
  }
  return "?";
}

Band band_of(std::size_t count) {
  if (count >= kManyThreshold) return Band::Many;
  if (count <= kFewThreshold) return Band::Few;
  return Band::Medium;
}

ShotBands split_shots(const Counts& counts) {
  ShotBands b;
  for (auto n : counts) b.band.push_back(band_of(n));
  return b;
}

}  // namespace vlltr
