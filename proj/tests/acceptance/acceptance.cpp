// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <unistd.h>
#include <vector>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "vlltr/cvlp.hpp"
#include "vlltr/io.hpp"
#include "vlltr/parallel.hpp"
#include "vlltr/pipeline.hpp"

using namespace vlltr;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Tensor randn(Rng& rng, Shape s, double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  Tensor t(std::move(s));
  for (auto& v : t.vec()) v = g(rng);
  return t;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Var C(Tensor t) { return Var::constant(std::move(t)); }
Var tau_of(double v) { return Var::constant(Tensor({1}, v)); }

struct Verdict {
  bool pass = true;
  std::string detail;
};

// Work area removed on exit.
struct Scratch {
  fs::path root = fs::temp_directory_path() / ("vlltr_acceptance_" + std::to_string(::getpid()));
  Scratch() {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Scratch() { fs::remove_all(root); }
};

Verdict gradient_suite() {
  const auto t0 = Clock::now();
  const auto res = run_gradcheck_suite(gradcheck_cases(), 20, 2024);
  const double secs = seconds_since(t0);
  Verdict v;
  double worst = 0.0;
  std::set<std::string> seen;
  for (const auto& r : res) {
    seen.insert(r.name);
    worst = std::max(worst, r.max_rel_error);
    if (!r.passed() || r.max_rel_error > 1e-4 || r.instances < 20) {
      v.pass = false;
      v.detail += r.name + " failed; ";
    }
  }
  for (const char* need : {"L_ccl", "L_dis", "L_pre", "L_rec o lgr_forward"})
    if (!seen.count(need)) v.pass = false, v.detail += std::string("missing ") + need + "; ";
  if (secs >= 60.0) v.pass = false;
  v.detail += std::to_string(res.size()) + " cases x 20 instances, worst rel err " +
              fmt("%.2e", worst) + ", " + fmt("%.1f", secs) + " s";
  return v;
}

Verdict loss_identities() {
  Verdict v;
  auto need = [&](bool ok, const std::string& what) {
    if (!ok) v.pass = false, v.detail += what + " violated; ";
  };
  Rng rng(7);
  need(ccl_loss(C(Tensor::matrix({{0.37}})), {3}, tau_of(0.07)).total.item() == 0.0, "L_ccl(N=1)=0");
  double worst_uniform = 0.0;
  for (std::size_t n = 2; n <= 8; ++n) {
    const double got = ccl_loss(C(Tensor({n, n}, 0.2)), std::vector<std::size_t>(n, 0), tau_of(0.07)).total.item();
    worst_uniform = std::max(worst_uniform, std::abs(got - 2.0 * std::log(static_cast<double>(n))));
  }
  need(worst_uniform <= 1e-12, "L_ccl = 2 ln N");
  double drift = 0.0;
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = pick(rng, 2, 6);
    std::vector<std::size_t> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = i % 3;
    const Tensor s = randn(rng, {n, n});
    Tensor t = s;
    const double shift = randn(rng, {1}, 5.0)[0];
    for (auto& x : t.vec()) x += shift;
    const double a = ccl_loss(C(s), y, tau_of(0.1)).total.item();
    const double b = ccl_loss(C(t), y, tau_of(0.1)).total.item();
    drift = std::max(drift, std::abs(a - b));
  }
  need(drift <= 1e-10, "shift invariance");
  need(distill_loss(C(Tensor::matrix({{0.8}})), Tensor::matrix({{-0.3}}), tau_of(0.07), 0.07).item() == 0.0,
       "L_dis(N=1)=0");

  // Both mixture endpoints, on real encoder batches.
  CorpusParams cp;
  cp.num_classes = 4;
  cp.sentences_per_class = 8;
  cp.prompt_count = 4;
  const ClassCorpus corpus = gen_corpus(cp);
  const LongTailDataset data = gen_synthetic(4, {30, 12, 5, 2}, 8, 0.4, 3, 2);
  const EncoderPair enc = EncoderPair::init(8, cp.vocab_size, 6, 1);
  const TeacherPair teacher(EncoderPair::init(8, cp.vocab_size, 6, 2));
  PairSampler sampler(data, corpus, 5);
  bool exact = true;
  for (int rep = 0; rep < 50; ++rep) {
    const PairedBatch b = sampler.next(pick(rng, 1, 6));
    Var sim = cosine_sim_matrix(encode_images(enc.visual, b.images), encode_texts(enc.linguistic, b.texts));
    const double ccl = ccl_loss(sim, b.labels, enc.temperature.tau).total.item();
    const double dis = distill_loss(sim, teacher.similarity(b.images, b.texts), enc.temperature.tau,
                                    teacher.temperature()).item();
    exact &= pretrain_loss(b, enc, nullptr, 1.0).pre.item() == ccl;
    exact &= pretrain_loss(b, enc, &teacher, 0.0).pre.item() == dis;
  }
  need(exact, "L_pre endpoints bit-exact");
  v.detail += "2 ln N err " + fmt("%.1e", worst_uniform) + ", shift drift " + fmt("%.1e", drift) +
              ", lambda endpoints bit-exact over 50 batches: " + (exact ? "yes" : "no");
  return v;
}

LgrParams random_head(Rng& rng, std::size_t D, std::size_t classes) {
  LgrParams p = LgrParams::init(D, classes, 0.05 + 0.5 * std::uniform_real_distribution<>(0, 1)(rng), rng());
  for (Var* x : {&p.q_gain, &p.q_bias, &p.bq, &p.k_gain, &p.k_bias, &p.bk, &p.mlp_b1, &p.mlp_b2})
    x->mutable_value() = randn(rng, x->shape(), 0.5);
  return p;
}

Verdict head_normalization() {
  Verdict v;
  Rng rng(11);
  double worst = 0.0;
  for (int pass = 0; pass < 1000; ++pass) {
    const std::size_t Cn = pick(rng, 1, 6), M = pick(rng, 1, 5), D = pick(rng, 2, 8);
    const LgrParams p = random_head(rng, D, Cn);
    const HeadOutput h = head_row(lgr_forward(C(randn(rng, {1, D}, 2.0)), C(randn(rng, {Cn, M, D}, 2.0)), p), 0);
    double si = 0, st = 0;
    for (std::size_t c = 0; c < Cn; ++c) {
      si += h.p_image[c], st += h.p_text[c];
      double sa = 0;
      for (std::size_t m = 0; m < M; ++m) sa += h.attention.at(c, m);
      worst = std::max(worst, std::abs(sa - 1.0));
    }
    worst = std::max({worst, std::abs(si - 1.0), std::abs(st - 1.0)});
  }
  bool m1 = true;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t Cn = pick(rng, 1, 5), D = pick(rng, 2, 8);
    const Tensor anchors = randn(rng, {Cn, 1, D});
    const HeadOutput h = head_row(lgr_forward(C(randn(rng, {1, D})), C(anchors), random_head(rng, D, Cn)), 0);
    m1 &= h.gather.vec() == anchors.vec();
  }
  v.pass = worst <= 1e-6 && m1;
  v.detail = "1000 passes, worst |sum-1| " + fmt("%.1e", worst) + ", M=1 gather equals anchors: " +
             (m1 ? "yes" : "no");
  return v;
}

// Exhaustive AnSS reference: score every sentence alone, sort, keep M.
bool anss_matches(const ClassCorpus& corpus, const LongTailDataset& data, const EncoderPair& enc,
                  std::size_t M, std::uint64_t seed) {
  const AnchorSet got = select_anchors(corpus, data, enc, M, SelectionMode::AnSS, kProbeCap, seed);
  std::vector<ProbeBatch> probes;
  for (std::size_t c = 0; c < corpus.num_classes; ++c) probes.push_back(build_probe(data, c, kProbeCap, seed));
  const ProbePool pool = ProbePool::build(probes, enc.visual);
  for (std::size_t c = 0; c < corpus.num_classes; ++c) {
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t id : corpus.by_class[c])
      all.emplace_back(score_sentence(corpus.at(id).tokens, c, pool, enc.linguistic, enc.temperature.value()), id);
    std::sort(all.begin(), all.end());
    std::set<std::size_t> want;
    for (std::size_t r = 0; r < std::min(M, all.size()); ++r) want.insert(all[r].second);
    if (want != std::set<std::size_t>(got.ids[c].begin(), got.ids[c].end())) return false;
  }
  return true;
}

Verdict oracle_equivalence(const fs::path& pipeline_dir) {
  Verdict v;
  Rng rng(13);
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t Cn = pick(rng, 1, 4), M = pick(rng, 1, 3), D = pick(rng, 2, 8);
    const LgrParams p = random_head(rng, D, Cn);
    const Tensor anchors = randn(rng, {Cn, M, D});
    const Tensor img = randn(rng, {1, D});
    const HeadOutput h = head_row(lgr_forward(C(img), C(anchors), p), 0);
    const oracle::Head o = oracle::lgr(img.vec(), anchors, p);
    for (std::size_t c = 0; c < Cn; ++c) {
      worst = std::max({worst, std::abs(h.p_image[c] - o.p_image[c]), std::abs(h.p_text[c] - o.p_text[c])});
      for (std::size_t m = 0; m < M; ++m) worst = std::max(worst, std::abs(h.attention.at(c, m) - o.attention[c][m]));
      for (std::size_t d = 0; d < D; ++d) worst = std::max(worst, std::abs(h.gather.at(c, d) - o.gather[c][d]));
    }
  }

  std::size_t corpora = 0, anss_ok = 0;
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    CorpusParams cp;
    cp.num_classes = 3 + seed % 3;
    cp.sentences_per_class = 6 + seed;
    cp.prompt_count = 3;
    cp.noise_fraction = 0.3;
    cp.seed = seed;
    const ClassCorpus corpus = gen_corpus(cp);
    const LongTailDataset data =
        gen_synthetic(cp.num_classes, gen_pareto_counts(cp.num_classes, 90, 2, 6.0), 6, 0.4, seed, 2);
    const EncoderPair enc = EncoderPair::init(6, cp.vocab_size, 5, seed);
    ++corpora;
    anss_ok += anss_matches(corpus, data, enc, 4 + seed % 4, seed);
  }
  {
    // the trained default pipeline
    const RunConfig cfg;
    const ClassCorpus corpus = read_corpus(pipeline_dir / cfg.corpus_path);
    const LongTailDataset data = read_dataset(pipeline_dir / cfg.dataset_path);
    const EncoderPair enc = EncoderPair::from_checkpoint(Checkpoint::read(pipeline_dir / cfg.pretrain_path), false);
    ++corpora;
    anss_ok += anss_matches(corpus, data, enc, cfg.anchors_per_class, cfg.seed);
  }

  double knn_worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t Cn = pick(rng, 1, 6), M = pick(rng, 1, 5), D = pick(rng, 2, 8);
    AnchorEmbeddings a;
    a.classes = Cn, a.per_class = M, a.dim = D;
    a.values = randn(rng, {Cn, M, D});
    const Tensor img = randn(rng, {1, D});
    const double tau = 0.05 + 0.01 * rep;
    const Tensor p = knn_forward(C(img), a, tau_of(tau)).value();
    const auto o = oracle::knn(img.vec(), a.values, tau);
    for (std::size_t c = 0; c < Cn; ++c) knn_worst = std::max(knn_worst, std::abs(p[c] - o[c]));
  }
  v.pass = worst <= 1e-10 && anss_ok == corpora && knn_worst <= 1e-12;
  v.detail = "lgr vs loops " + fmt("%.1e", worst) + " over 100, AnSS exhaustive " + std::to_string(anss_ok) +
             "/" + std::to_string(corpora) + " corpora, KNN vs scan " + fmt("%.1e", knn_worst);
  return v;
}

Verdict sampler_statistics() {
  SqrtSampler s({100, 25, 4}, 99);
  std::vector<double> freq(3, 0.0);
  const int n = 1000000;
  for (int i = 0; i < n; ++i) freq[s.next_class()] += 1.0;
  const double target[3] = {10.0 / 17.0, 5.0 / 17.0, 2.0 / 17.0};
  double worst = 0.0;
  for (int c = 0; c < 3; ++c) worst = std::max(worst, std::abs(freq[c] / n - target[c]));
  return {worst <= 0.005, "10^6 draws on [100,25,4], worst |freq-target| " + fmt("%.5f", worst)};
}

Verdict protocol_exactness() {
  const fixture::SixSample f;
  const EvalReport r = evaluate(f.preds, f.labels, f.bands);
  const bool fixture_ok = r.overall.accuracy() == 0.5 && r.many && r.many->accuracy() == 0.5 &&
                          r.medium && r.medium->accuracy() == 1.0 && r.few && r.few->accuracy() == 0.0;
  Rng rng(17);
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::size_t Cn = pick(rng, 2, 20);
    const auto ds = gen_synthetic(Cn, gen_pareto_counts(Cn, 500, 5, 6.0), 2, 0.5, seed, pick(rng, 1, 25));
    std::vector<std::size_t> preds(ds.test_labels.size());
    for (std::size_t i = 0; i < preds.size(); ++i)
      preds[i] = rng() % 3 == 0 ? ds.test_labels[i] : pick(rng, 0, Cn - 1);
    const EvalReport e = evaluate(preds, ds.test_labels, split_shots(ds.counts));
    worst = std::max(worst, std::abs(e.overall.accuracy() - e.class_macro()));
  }
  return {fixture_ok && worst <= 1e-12,
          std::string("fixture overall/many/medium/few = ") + fmt("%.1f", r.overall.accuracy()) + "/" +
              fmt("%.1f", r.many ? r.many->accuracy() : -1) + "/" + fmt("%.1f", r.medium ? r.medium->accuracy() : -1) +
              "/" + fmt("%.1f", r.few ? r.few->accuracy() : -1) + ", micro vs macro over 20 splits " + fmt("%.1e", worst)};
}

double pct(const EvalReport& r) { return 100.0 * r.overall.accuracy(); }
double few_pct(const EvalReport& r) { return r.few ? 100.0 * r.few->accuracy() : 0.0; }

Verdict ablation_directions(const fs::path& dir) {
  RunConfig cfg;  // reference config: C=20, 500..5, alpha 6, 20% distractors, 3 seeds
  const auto t0 = Clock::now();
  const AblationResult res = cmd_ablate(cfg, dir, thread_budget());
  const double secs = seconds_since(t0);
  std::map<std::string, EvalReport> pooled;
  for (std::size_t i = 0; i < res.labels.size(); ++i) pooled[res.labels[i]] = res.pooled[i];
  std::map<std::pair<std::string, std::uint64_t>, EvalReport> run;
  for (const auto& e : res.runs) run[{e.label, e.seed}] = e.report;

  // (a), (b): strict, on the fixed seed and on the pooled seeds
  auto a_holds = [](const EvalReport& lgr, const EvalReport& fc) {
    const double gap = pct(lgr) - pct(fc);
    return gap > 0.0 && few_pct(lgr) - few_pct(fc) >= gap;
  };
  const bool a = a_holds(run[{kAblFull, cfg.seed}], run[{kAblFc, cfg.seed}]) &&
                 a_holds(pooled[kAblFull], pooled[kAblFc]);
  const bool b = pct(run[{kAblKnn, cfg.seed}]) > pct(run[{kAblFc, cfg.seed}]) &&
                 pct(pooled[kAblKnn]) > pct(pooled[kAblFc]);
  // (c), (d): per seed within 0.5 points, majority of seeds
  std::size_t c_votes = 0, d_votes = 0;
  for (std::size_t k = 0; k < cfg.ablate_seeds; ++k) {
    const std::uint64_t s = cfg.seed + k;
    c_votes += pct(run[{kAblFull, s}]) >= pct(run[{kAblNoDis, s}]) - 0.5;
    d_votes += pct(run[{kAblFull, s}]) >= pct(run[{kAblCutoff, s}]) - 0.5;
  }
  const bool c = 2 * c_votes > cfg.ablate_seeds, d = 2 * d_votes > cfg.ablate_seeds;
  Verdict v;
  v.pass = a && b && c && d && secs < 900.0 && cfg.ablate_seeds == 3;
  v.detail = std::string("(a) ") + (a ? "ok" : "no") + " lgr " + fmt("%.2f", pct(pooled[kAblFull])) + " vs fc " +
             fmt("%.2f", pct(pooled[kAblFc])) + ", few " + fmt("%.2f", few_pct(pooled[kAblFull])) + " vs " +
             fmt("%.2f", few_pct(pooled[kAblFc])) + "; (b) " + (b ? "ok" : "no") + " knn " +
             fmt("%.2f", pct(pooled[kAblKnn])) + "; (c) " + (c ? "ok" : "no") + " " + std::to_string(c_votes) +
             "/3 seeds, lambda=1 " + fmt("%.2f", pct(pooled[kAblNoDis])) + "; (d) " + (d ? "ok" : "no") + " " +
             std::to_string(d_votes) + "/3 seeds, cutoff " + fmt("%.2f", pct(pooled[kAblCutoff])) + "; " +
             fmt("%.0f", secs) + " s";
  return v;
}

Verdict encoder_free(const fs::path& dir) {
  const RunConfig cfg;
  const std::size_t before = linguistic_load_count();
  cmd_eval(cfg, dir, thread_budget());
  const std::size_t eval_loads = linguistic_load_count() - before;

  const FinetuneModel model = FinetuneModel::from_checkpoint(Checkpoint::read(dir / cfg.finetune_path));
  const AnchorEmbeddings cache = AnchorEmbeddings::read(dir / cfg.anchor_cache_path);
  const LongTailDataset data = read_dataset(dir / cfg.dataset_path);
  const std::size_t n = std::min<std::size_t>(100, data.test_labels.size());
  Tensor probe({n, data.dim});
  std::copy_n(data.test_features.vec().begin(), n * data.dim, probe.vec().begin());
  const std::vector<std::size_t> labels(data.test_labels.begin(), data.test_labels.begin() + static_cast<long>(n));
  const auto cached = predict_all(model, cache, probe, labels);
  const std::size_t after_cached = linguistic_load_count();

  // live path: re-encode the anchor sentences with the pre-trained text encoder
  const Checkpoint ck = Checkpoint::read(dir / cfg.pretrain_path);
  const EncoderPair enc = EncoderPair::from_checkpoint(ck, false);
  const AnchorEmbeddings live = precompute_anchor_embeddings(
      read_anchors(dir / cfg.anchors_path), read_corpus(dir / cfg.corpus_path), enc.linguistic,
      sha256_file(dir / cfg.pretrain_path));
  const auto fresh = predict_all(model, live, probe, labels);
  std::size_t same = 0;
  for (std::size_t i = 0; i < n; ++i)
    same += cached[i].pred == fresh[i].pred && cached[i].p_image == fresh[i].p_image &&
            cached[i].p_text == fresh[i].p_text;
  return {same == n && eval_loads == 0 && after_cached == before,
          std::to_string(same) + "/" + std::to_string(n) + " identical cache vs live, linguistic loads during eval: " +
              std::to_string(eval_loads)};
}

Verdict determinism(const fs::path& a, const fs::path& b) {
  const RunConfig cfg;
  std::size_t same = 0, total = 0;
  std::string differing;
  for (const std::string& f : {cfg.teacher_path, cfg.pretrain_path, cfg.anchors_path, cfg.anchor_cache_path,
                               cfg.finetune_path, cfg.report_path, cfg.predictions_path}) {
    ++total;
    if (read_file(a / f) == read_file(b / f)) ++same;
    else differing += " " + f;
  }
  return {same == total, std::to_string(same) + "/" + std::to_string(total) +
                             " artifacts byte-identical across two runs" + (differing.empty() ? "" : ", differ:" + differing)};
}

}  // namespace

int main() {
  Scratch scratch;
  bool all = true;
  auto report = [&](int id, const char* name, const std::function<Verdict()>& fn) {
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    all &= v.pass;
    std::printf("[%s] %d %s: %s\n", v.pass ? "PASS" : "FAIL", id, name, v.detail.c_str());
    std::fflush(stdout);
  };

  const fs::path run_a = scratch.root / "run_a", run_b = scratch.root / "run_b";
  bool pipelines_ok = true;
  try {
    run_pipeline(RunConfig{}, run_a, thread_budget());
    run_pipeline(RunConfig{}, run_b, thread_budget());
  } catch (const std::exception& e) {
    std::printf("pipeline run failed: %s\n", e.what());
    pipelines_ok = false;
  }

  report(1, "gradient suite", gradient_suite);
  report(2, "loss identities", loss_identities);
  report(3, "head normalization", head_normalization);
  report(4, "oracle equivalence", [&] { return oracle_equivalence(run_a); });
  report(5, "sampler statistics", sampler_statistics);
  report(6, "protocol exactness", protocol_exactness);
  report(7, "ablation directions", [&] { return ablation_directions(scratch.root / "ablate"); });
  report(8, "encoder-free inference", [&] { return encoder_free(run_a); });
  report(9, "determinism", [&] { return determinism(run_a, run_b); });
  return all && pipelines_ok ? 0 : 1;
}
