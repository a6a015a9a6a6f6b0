#include "vlltr/pipeline.hpp"

#include <algorithm>

#include <json.hpp>

#include "vlltr/checkpoint.hpp"
#include "vlltr/cvlp.hpp"
#include "vlltr/datasynth.hpp"
#include "vlltr/error.hpp"
#include "vlltr/io.hpp"

namespace fs = std::filesystem;

namespace vlltr {
namespace {

CorpusParams corpus_params(const RunConfig& c) {
  CorpusParams p;
  p.num_classes = c.classes;
  p.sentences_per_class = c.sentences_per_class;
  p.prompt_count = c.prompt_count;
  p.vocab_size = c.vocab_size;
  p.noise_fraction = c.noise_fraction;
  p.max_tokens = c.max_tokens;
  p.seed = c.seed;
  return p;
}

PretrainConfig pretrain_config(const RunConfig& c, double lambda, std::size_t epochs,
                               std::uint64_t seed) {
  PretrainConfig p;
  p.lambda = lambda;
  p.epochs = epochs;
  p.batch_size = c.pretrain_batch;
  p.base_lr = c.pretrain_lr;
  p.adamw.weight_decay = c.weight_decay;
  p.seed = seed;
  return p;
}

fs::path require(const fs::path& p, const char* what) {
  if (!fs::exists(p))
    throw ValidationError(std::string(what) + " " + p.string() + " is missing; run the upstream stage first");
  return p;
}

void check_hash(const Checkpoint& ck, const std::string& key, const fs::path& file,
                const std::string& stage) {
  auto it = ck.meta.find(key);
  if (it == ck.meta.end()) throw ValidationError(stage + " checkpoint records no " + key + " hash");
  const std::string actual = hex(sha256_file(file));
  if (it->second != actual)
    throw ValidationError("stale artifact: " + file.string() + " (sha256 " + actual.substr(0, 12) +
                          ") differs from the " + key + " used by the " + stage + " stage (" +
                          it->second.substr(0, 12) + ")");
}

EncoderPair init_encoders(const RunConfig& c, std::uint64_t seed) {
  EncoderPair e = EncoderPair::init(c.d_img, c.vocab_size, c.dim, seed);
  e.temperature = Temperature::init(c.tau_init);
  e.linguistic.max_tokens = c.max_tokens;
  return e;
}

void write_pretrain_trace(const fs::path& p, const std::vector<TraceRow>& rows) {
  write_file(p, format_trace(rows));
}

}  // namespace

fs::path artifact(const RunConfig&, const fs::path& out, const std::string& rel) {
  const fs::path p(rel);
  return p.is_absolute() ? p : out / p;
}

void cmd_gen_data(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  const Counts counts = gen_pareto_counts(cfg.classes, cfg.n_max, cfg.n_min, cfg.alpha);
  const LongTailDataset ds =
      gen_synthetic(cfg.classes, counts, cfg.d_img, cfg.noise_sigma, cfg.seed, cfg.test_per_class);
  write_dataset(ds, artifact(cfg, out, cfg.dataset_path));
  const ClassCorpus corpus = gen_corpus(corpus_params(cfg));
  write_corpus(corpus, artifact(cfg, out, cfg.corpus_path));
  write_file(artifact(cfg, out, cfg.stats_path), corpus_stats_json(corpus_stats(corpus)));
}

void cmd_make_teacher(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  const fs::path corpus_file = require(artifact(cfg, out, cfg.corpus_path), "corpus");
  const ClassCorpus corpus = read_corpus(corpus_file, cfg.max_tokens);
  if (corpus.num_classes != cfg.classes)
    throw ValidationError("corpus has " + std::to_string(corpus.num_classes) +
                          " classes, config says " + std::to_string(cfg.classes));
  // Balanced variant of the same world: shared prototypes, n_max per class.
  const LongTailDataset balanced =
      gen_synthetic(cfg.classes, Counts(cfg.classes, cfg.n_max), cfg.d_img, cfg.noise_sigma,
                    cfg.seed, 1);
  const std::uint64_t seed = mix_seed(cfg.seed, stream::kTeacher);
  EncoderPair enc = init_encoders(cfg, seed);
  run_pretrain(balanced, corpus, enc, nullptr, pretrain_config(cfg, 1.0, cfg.teacher_epochs, seed));
  Checkpoint ck = enc.to_checkpoint();
  ck.meta["stage"] = "teacher";
  ck.meta["corpus"] = hex(sha256_file(corpus_file));
  ck.meta["config"] = cfg.fingerprint();
  ck.write(artifact(cfg, out, cfg.teacher_path));
}

void cmd_pretrain(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  const fs::path data_file = require(artifact(cfg, out, cfg.dataset_path), "dataset");
  const fs::path corpus_file = require(artifact(cfg, out, cfg.corpus_path), "corpus");
  const LongTailDataset ds = read_dataset(data_file);
  const ClassCorpus corpus = read_corpus(corpus_file, cfg.max_tokens);
  if (ds.dim != cfg.d_img || ds.num_classes != cfg.classes)
    throw ValidationError("dataset shape (C=" + std::to_string(ds.num_classes) +
                          ", d_img=" + std::to_string(ds.dim) + ") disagrees with the config");

  std::optional<TeacherPair> teacher;
  std::string teacher_hash = "none";
  EncoderPair enc = init_encoders(cfg, cfg.seed);
  if (cfg.lambda < 1.0 || cfg.student_from_teacher) {
    const fs::path tf = require(artifact(cfg, out, cfg.teacher_path), "teacher checkpoint");
    const Checkpoint tck = Checkpoint::read(tf);
    check_hash(tck, "corpus", corpus_file, "teacher");
    teacher.emplace(TeacherPair::load(tck));
    teacher_hash = hex(sha256_file(tf));
    if (cfg.student_from_teacher) {
      enc = teacher->encoders().clone(true);
      enc.temperature = Temperature::init(cfg.tau_init);
      enc.linguistic.max_tokens = cfg.max_tokens;
    }
  }
  const auto trace = run_pretrain(ds, corpus, enc, cfg.lambda < 1.0 ? &*teacher : nullptr,
                                  pretrain_config(cfg, cfg.lambda, cfg.pretrain_epochs, cfg.seed));
  Checkpoint ck = enc.to_checkpoint();
  ck.meta["stage"] = "pretrain";
  ck.meta["dataset"] = hex(sha256_file(data_file));
  ck.meta["corpus"] = hex(sha256_file(corpus_file));
  ck.meta["teacher"] = teacher_hash;
  ck.meta["config"] = cfg.fingerprint();
  ck.write(artifact(cfg, out, cfg.pretrain_path));
  write_pretrain_trace(artifact(cfg, out, cfg.pretrain_trace_path), trace);
}

void cmd_select_anchors(const RunConfig& cfg, const fs::path& out, std::size_t threads) {
  cfg.validate();
  const fs::path ck_file = require(artifact(cfg, out, cfg.pretrain_path), "pre-training checkpoint");
  const fs::path data_file = require(artifact(cfg, out, cfg.dataset_path), "dataset");
  const fs::path corpus_file = require(artifact(cfg, out, cfg.corpus_path), "corpus");
  const Checkpoint ck = Checkpoint::read(ck_file);
  check_hash(ck, "dataset", data_file, "pre-training");
  check_hash(ck, "corpus", corpus_file, "pre-training");
  const LongTailDataset ds = read_dataset(data_file);
  const ClassCorpus corpus = read_corpus(corpus_file, cfg.max_tokens);
  const EncoderPair enc = EncoderPair::from_checkpoint(ck, false);
  AnchorSet a = select_anchors(corpus, ds, enc, cfg.anchors_per_class, cfg.anchor_mode,
                               cfg.probe_cap, cfg.seed, threads);
  a.checkpoint = hex(sha256_file(ck_file));
  write_anchors(a, artifact(cfg, out, cfg.anchors_path));
}

void cmd_finetune(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  const fs::path ck_file = require(artifact(cfg, out, cfg.pretrain_path), "pre-training checkpoint");
  const fs::path anchors_file = require(artifact(cfg, out, cfg.anchors_path), "anchor file");
  const fs::path data_file = require(artifact(cfg, out, cfg.dataset_path), "dataset");
  const fs::path corpus_file = require(artifact(cfg, out, cfg.corpus_path), "corpus");
  const Checkpoint ck = Checkpoint::read(ck_file);
  check_hash(ck, "dataset", data_file, "pre-training");
  check_hash(ck, "corpus", corpus_file, "pre-training");
  const Digest ck_digest = sha256_file(ck_file);
  const AnchorSet anchors = read_anchors(anchors_file);
  if (anchors.checkpoint != hex(ck_digest))
    throw ValidationError("anchor/checkpoint hash mismatch: " + anchors_file.string() +
                          " was selected under checkpoint " + anchors.checkpoint.substr(0, 12) +
                          ", current pre-training checkpoint is " + hex(ck_digest).substr(0, 12));
  const LongTailDataset ds = read_dataset(data_file);
  const ClassCorpus corpus = read_corpus(corpus_file, cfg.max_tokens);
  const EncoderPair enc = EncoderPair::from_checkpoint(ck, false);

  const fs::path cache_file = artifact(cfg, out, cfg.anchor_cache_path);
  const AnchorEmbeddings cache =
      precompute_anchor_embeddings(anchors, corpus, enc.linguistic, ck_digest);
  cache.write(cache_file);

  FinetuneModel model = FinetuneModel::init(cfg.head, enc, ck_digest, ds.num_classes,
                                            cfg.seed);
  FinetuneConfig fc;
  fc.epochs = cfg.finetune_epochs;
  fc.batch_size = cfg.finetune_batch;
  fc.base_lr = cfg.finetune_lr;
  fc.adamw.weight_decay = cfg.weight_decay;
  fc.seed = cfg.seed;
  const auto trace = run_finetune(ds, cache, model, fc);

  Checkpoint out_ck = model.to_checkpoint();
  out_ck.meta["dataset"] = hex(sha256_file(data_file));
  out_ck.meta["anchors"] = hex(sha256_file(anchors_file));
  out_ck.meta["anchor_cache"] = hex(sha256_file(cache_file));
  out_ck.meta["config"] = cfg.fingerprint();
  out_ck.write(artifact(cfg, out, cfg.finetune_path));
  write_file(artifact(cfg, out, cfg.finetune_trace_path), format_finetune_trace(trace));
}

EvalReport cmd_eval(const RunConfig& cfg, const fs::path& out, std::size_t threads) {
  cfg.validate();
  const fs::path ck_file = require(artifact(cfg, out, cfg.finetune_path), "fine-tuned checkpoint");
  const fs::path cache_file = require(artifact(cfg, out, cfg.anchor_cache_path), "anchor cache");
  const fs::path data_file = require(artifact(cfg, out, cfg.dataset_path), "dataset");
  const Checkpoint ck = Checkpoint::read(ck_file);
  check_hash(ck, "dataset", data_file, "fine-tuning");
  check_hash(ck, "anchor_cache", cache_file, "fine-tuning");
  const FinetuneModel model = FinetuneModel::from_checkpoint(ck);
  const AnchorEmbeddings cache = AnchorEmbeddings::read(cache_file);
  const LongTailDataset ds = read_dataset(data_file);

  const auto preds = predict_all(model, cache, ds.test_features, ds.test_labels, threads);
  std::vector<std::size_t> labels;
  for (const auto& p : preds) labels.push_back(p.pred);
  const EvalReport rep = evaluate(labels, ds.test_labels, split_shots(ds.counts), cfg.fingerprint());
  write_file(artifact(cfg, out, cfg.report_path), rep.to_json());
  write_file(artifact(cfg, out, cfg.predictions_path), format_predictions(preds));
  return rep;
}

EvalReport cmd_eval_zero_shot(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  const fs::path ck_file = require(artifact(cfg, out, cfg.pretrain_path), "pre-training checkpoint");
  const fs::path data_file = require(artifact(cfg, out, cfg.dataset_path), "dataset");
  const fs::path corpus_file = require(artifact(cfg, out, cfg.corpus_path), "corpus");
  const Checkpoint ck = Checkpoint::read(ck_file);
  check_hash(ck, "dataset", data_file, "pre-training");
  check_hash(ck, "corpus", corpus_file, "pre-training");
  const EncoderPair enc = EncoderPair::from_checkpoint(ck, false);
  const LongTailDataset ds = read_dataset(data_file);
  const ClassCorpus corpus = read_corpus(corpus_file, cfg.max_tokens);
  const Tensor means = prompt_class_means(corpus, enc.linguistic);
  const Tensor emb = encode_images(enc.visual, ds.test_features).value();
  std::vector<Prediction> preds(ds.test_labels.size());
  std::vector<std::size_t> labels(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    preds[i].label = ds.test_labels[i];
    preds[i].pred = labels[i] = zero_shot_classify(emb.row(i), means);
  }
  const EvalReport rep = evaluate(labels, ds.test_labels, split_shots(ds.counts), cfg.fingerprint());
  write_file(artifact(cfg, out, cfg.report_path), rep.to_json());
  write_file(artifact(cfg, out, cfg.predictions_path), format_predictions(preds));
  return rep;
}

EvalReport run_pipeline(const RunConfig& cfg, const fs::path& out, std::size_t threads) {
  cmd_gen_data(cfg, out);
  if (cfg.lambda < 1.0 || cfg.student_from_teacher) cmd_make_teacher(cfg, out);
  cmd_pretrain(cfg, out);
  cmd_select_anchors(cfg, out, threads);
  cmd_finetune(cfg, out);
  return cmd_eval(cfg, out, threads);
}

std::vector<SuiteResult> cmd_gradcheck(std::size_t instances, std::uint64_t seed,
                                       bool with_fault) {
  return run_gradcheck_suite(gradcheck_cases(with_fault), instances, seed);
}

std::vector<RetrievalHit> cmd_retrieve(const RunConfig& cfg, const fs::path& out,
                                       std::size_t sentence_id, std::size_t k) {
  cfg.validate();
  const fs::path ck_file = require(artifact(cfg, out, cfg.pretrain_path), "pre-training checkpoint");
  const fs::path data_file = require(artifact(cfg, out, cfg.dataset_path), "dataset");
  const fs::path corpus_file = require(artifact(cfg, out, cfg.corpus_path), "corpus");
  const Checkpoint ck = Checkpoint::read(ck_file);
  check_hash(ck, "dataset", data_file, "pre-training");
  check_hash(ck, "corpus", corpus_file, "pre-training");
  const ClassCorpus corpus = read_corpus(corpus_file, cfg.max_tokens);
  if (sentence_id >= corpus.sentences.size())
    throw ValidationError("sentence id " + std::to_string(sentence_id) + " out of range (corpus has " +
                          std::to_string(corpus.sentences.size()) + ")");
  const EncoderPair enc = EncoderPair::from_checkpoint(ck, false);
  const LongTailDataset ds = read_dataset(data_file);
  const Tensor images = encode_images(enc.visual, ds.test_features).value();
  const Tensor q = encode_texts(enc.linguistic, {corpus.at(sentence_id).tokens}).value();
  const auto ids = rank_by_cosine(q.row(0), images, k);
  const Tensor cos = cosine_sim_matrix(Var::constant(q), Var::constant(images)).value();
  std::vector<RetrievalHit> hits;
  for (auto id : ids) hits.push_back({id, ds.test_labels[id], cos[id]});
  return hits;
}

AblationResult cmd_ablate(const RunConfig& cfg, const fs::path& out, std::size_t threads) {
  cfg.validate();
  AblationResult res;
  res.labels = {kAblFull, kAblNoDis, kAblCutoff, kAblFc, kAblKnn};
  nlohmann::ordered_json runs = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < cfg.ablate_seeds; ++k) {
    RunConfig base = cfg;
    base.seed = cfg.seed + k;
    const fs::path dir = fs::absolute(out / ("seed" + std::to_string(base.seed)));
    base.dataset_path = (dir / "dataset.vllt").string();
    base.corpus_path = (dir / "corpus.tsv").string();
    base.stats_path = (dir / "corpus_stats.json").string();
    base.teacher_path = (dir / "teacher.vlck").string();
    cmd_gen_data(base, dir);
    cmd_make_teacher(base, dir);

    const fs::path full = dir / "full";
    auto run = [&](const std::string& label, const fs::path& sub, double lambda, SelectionMode mode,
                   HeadKind head, bool own_stage1) {
      RunConfig c = base;
      c.lambda = lambda;
      c.anchor_mode = mode;
      c.head = head;
      if (own_stage1) {
        cmd_pretrain(c, sub);
      } else {
        c.pretrain_path = (full / "pretrain.vlck").string();
      }
      if (own_stage1 || mode != SelectionMode::AnSS)
        cmd_select_anchors(c, sub, threads);
      else
        c.anchors_path = (full / "anchors.tsv").string();
      cmd_finetune(c, sub);
      res.runs.push_back({label, base.seed, cmd_eval(c, sub, threads)});
      runs.push_back({{"label", label},
                      {"seed", base.seed},
                      {"report", nlohmann::ordered_json::parse(res.runs.back().report.to_json())}});
    };
    run(kAblFull, full, 0.5, SelectionMode::AnSS, HeadKind::LGR, true);
    run(kAblNoDis, dir / "no_dis", 1.0, SelectionMode::AnSS, HeadKind::LGR, true);
    run(kAblCutoff, dir / "cutoff", 0.5, SelectionMode::CutOff, HeadKind::LGR, false);
    run(kAblFc, dir / "fc", 0.5, SelectionMode::AnSS, HeadKind::FC, false);
    run(kAblKnn, dir / "knn", 0.5, SelectionMode::AnSS, HeadKind::KNN, false);
  }

  std::vector<std::pair<std::string, EvalReport>> rows;
  for (const auto& label : res.labels) {
    EvalReport pooled;
    auto merge = [](std::optional<BandScore>& dst, const std::optional<BandScore>& src) {
      if (!src) return;
      if (!dst) dst = BandScore{};
      dst->correct += src->correct;
      dst->total += src->total;
    };
    for (const auto& r : res.runs) {
      if (r.label != label) continue;
      pooled.overall.correct += r.report.overall.correct;
      pooled.overall.total += r.report.overall.total;
      merge(pooled.many, r.report.many);
      merge(pooled.medium, r.report.medium);
      merge(pooled.few, r.report.few);
      pooled.per_class.resize(std::max(pooled.per_class.size(), r.report.per_class.size()));
      for (std::size_t c = 0; c < r.report.per_class.size(); ++c) {
        pooled.per_class[c].correct += r.report.per_class[c].correct;
        pooled.per_class[c].total += r.report.per_class[c].total;
      }
    }
    res.pooled.push_back(pooled);
    rows.emplace_back(label, pooled);
  }
  res.table = ablation_report(rows);
  write_file(out / "ablation.txt", res.table);
  nlohmann::ordered_json doc;
  doc["seeds"] = cfg.ablate_seeds;
  doc["runs"] = std::move(runs);
  write_file(out / "ablation.json", doc.dump(2) + "\n");
  return res;
}

}  // namespace vlltr
