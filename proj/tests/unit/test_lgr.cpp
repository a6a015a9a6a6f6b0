#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "helpers.hpp"
#include "oracles.hpp"
#include "vlltr/error.hpp"
#include "vlltr/gradcheck.hpp"
#include "vlltr/lgr.hpp"

using namespace vlltr;

namespace {

Var C(Tensor t) { return Var::constant(std::move(t)); }

// Head with every parameter randomized, so layer-norm affines and biases are exercised.
LgrParams random_head(Rng& rng, std::size_t D, std::size_t classes) {
  LgrParams p = LgrParams::init(D, classes, 0.1 + 0.5 * std::uniform_real_distribution<>(0, 1)(rng), rng());
  for (Var* v : {&p.q_gain, &p.q_bias, &p.bq, &p.k_gain, &p.k_bias, &p.bk, &p.mlp_b1, &p.mlp_b2})
    v->mutable_value() = vt::randn(rng, v->shape(), 0.5);
  return p;
}

std::size_t first_max(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

AnchorEmbeddings wrap(Tensor values) {
  AnchorEmbeddings a;
  a.classes = values.dim(0);
  a.per_class = values.dim(1);
  a.dim = values.dim(2);
  a.values = std::move(values);
  return a;
}

}  // namespace

TEST_CASE("lgr_forward matches the loop transcription") {
  Rng rng(41);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t Cn = vt::pick(rng, 1, 4), M = vt::pick(rng, 1, 4), D = vt::pick(rng, 2, 6),
                      B = vt::pick(rng, 1, 3);
    const LgrParams p = random_head(rng, D, Cn);
    const Tensor anchors = vt::randn(rng, {Cn, M, D});
    const Tensor images = vt::randn(rng, {B, D});
    const HeadBatch out = lgr_forward(C(images), C(anchors), p);
    for (std::size_t b = 0; b < B; ++b) {
      const std::vector<double> e(images.row(b).begin(), images.row(b).end());
      const oracle::Head want = oracle::lgr(e, anchors, p);
      const HeadOutput got = head_row(out, b);
      for (std::size_t c = 0; c < Cn; ++c) {
        CHECK(std::abs(got.p_image[c] - want.p_image[c]) <= 1e-10);
        CHECK(std::abs(got.p_text[c] - want.p_text[c]) <= 1e-10);
        for (std::size_t m = 0; m < M; ++m) CHECK(std::abs(got.attention.at(c, m) - want.attention[c][m]) <= 1e-10);
        for (std::size_t d = 0; d < D; ++d) CHECK(std::abs(got.gather.at(c, d) - want.gather[c][d]) <= 1e-10);
      }
    }
  }
}

TEST_CASE("head outputs are normalized") {
  Rng rng(42);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t Cn = vt::pick(rng, 1, 5), M = vt::pick(rng, 1, 4), D = vt::pick(rng, 2, 8);
    const LgrParams p = random_head(rng, D, Cn);
    const HeadBatch out = lgr_forward(C(vt::randn(rng, {3, D}, 3.0)), C(vt::randn(rng, {Cn, M, D}, 3.0)), p);
    for (std::size_t b = 0; b < 3; ++b) {
      const HeadOutput h = head_row(out, b);
      double si = 0, st = 0;
      for (std::size_t c = 0; c < Cn; ++c) {
        CHECK(h.p_image[c] >= 0.0);
        CHECK(h.p_text[c] >= 0.0);
        si += h.p_image[c], st += h.p_text[c];
        double sa = 0;
        for (std::size_t m = 0; m < M; ++m) sa += h.attention.at(c, m);
        CHECK(std::abs(sa - 1.0) <= 1e-6);
      }
      CHECK(std::abs(si - 1.0) <= 1e-6);
      CHECK(std::abs(st - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("degenerate head shapes") {
  Rng rng(43);
  SUBCASE("one anchor per class: gather is the anchor itself") {
    const LgrParams p = random_head(rng, 4, 3);
    const Tensor anchors = vt::randn(rng, {3, 1, 4});
    const HeadOutput h = head_row(lgr_forward(C(vt::randn(rng, {1, 4})), C(anchors), p), 0);
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(h.attention.at(c, 0) == 1.0);
      for (std::size_t d = 0; d < 4; ++d) CHECK(h.gather.at(c, d) == anchors.vec()[c * 4 + d]);
    }
  }
  SUBCASE("one class: text branch is certain") {
    const LgrParams p = random_head(rng, 4, 1);
    const HeadOutput h = head_row(lgr_forward(C(vt::randn(rng, {1, 4})), C(vt::randn(rng, {1, 3, 4})), p), 0);
    CHECK(h.p_text[0] == 1.0);
    CHECK(h.p_image[0] == 1.0);
  }
  SUBCASE("scaling one class's anchors leaves its attention unchanged") {
    LgrParams p = random_head(rng, 4, 2);
    const Tensor img = vt::randn(rng, {1, 4});
    Tensor anchors = vt::randn(rng, {2, 3, 4});
    const HeadOutput a = head_row(lgr_forward(C(img), C(anchors), p), 0);
    for (std::size_t i = 0; i < 12; ++i) anchors.vec()[i] *= 7.5;
    const HeadOutput b = head_row(lgr_forward(C(img), C(anchors), p), 0);
    for (std::size_t m = 0; m < 3; ++m) CHECK(std::abs(a.attention.at(0, m) - b.attention.at(0, m)) <= 1e-6);
    // exact only up to the layer-norm epsilon
    for (std::size_t d = 0; d < 4; ++d)
      CHECK(std::abs(b.gather.at(0, d) - 7.5 * a.gather.at(0, d)) <= 1e-5 * (std::abs(b.gather.at(0, d)) + 1.0));
  }
  SUBCASE("shape errors") {
    const LgrParams p = random_head(rng, 4, 2);
    CHECK_THROWS_AS(lgr_forward(C(Tensor({1, 5}, 1.0)), C(vt::randn(rng, {2, 3, 4})), p), ShapeError);
    CHECK_THROWS_AS(lgr_forward(C(Tensor({1, 4}, 1.0)), C(vt::randn(rng, {3, 3, 4})), p), ShapeError);
    CHECK_THROWS_AS(lgr_forward(C(Tensor({1, 4}, 1.0)), C(vt::randn(rng, {6, 4})), p), ShapeError);
  }
  SUBCASE("zero image embedding is a numeric error") {
    const LgrParams p = random_head(rng, 4, 2);
    CHECK_THROWS_AS(lgr_forward(C(Tensor({1, 4}, 0.0)), C(vt::randn(rng, {2, 3, 4})), p), NumericError);
  }
  SUBCASE("batch rows equal single-sample calls") {
    const LgrParams p = random_head(rng, 4, 3);
    const AnchorEmbeddings a = wrap(vt::randn(rng, {3, 2, 4}));
    const Tensor imgs = vt::randn(rng, {4, 4});
    const HeadBatch batch = lgr_forward(C(imgs), a, p);
    for (std::size_t b = 0; b < 4; ++b) {
      const HeadOutput one = lgr_forward(imgs.row(b), a, p);
      const HeadOutput row = head_row(batch, b);
      CHECK(one.p == row.p);
    }
  }
}

TEST_CASE("recognition loss and prediction") {
  HeadOutput h;
  h.p_image = {0, 1, 0};
  h.p_text = {0, 1, 0};
  CHECK(rec_loss(h, 1) == 0.0);
  h.p_image = h.p_text = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  CHECK(rec_loss(h, 2) == doctest::Approx(2 * std::log(3.0)).epsilon(1e-14));
  CHECK_THROWS_AS(rec_loss(h, 3), ValidationError);

  const std::vector<double> onehot{0, 0, 1}, uniform{0.25, 0.25, 0.25};
  CHECK(predict(onehot, uniform) == 2);
  CHECK(predict(std::vector<double>{0.6, 0.4}, std::vector<double>{0.1, 0.9}) == 1);
  CHECK(predict(std::vector<double>{0.5, 0.5}, std::vector<double>{0.5, 0.5}) == 0);
  CHECK_THROWS_AS(predict(std::vector<double>{1}, std::vector<double>{0.5, 0.5}), ShapeError);

  SUBCASE("shifting the classifier logits leaves predictions alone") {
    Rng rng(44);
    LgrParams p = random_head(rng, 4, 3);
    const Tensor img = vt::randn(rng, {5, 4});
    const Tensor anchors = vt::randn(rng, {3, 2, 4});
    const HeadBatch a = lgr_forward(C(img), C(anchors), p);
    for (auto& v : p.mlp_b2.mutable_value().vec()) v += 4.0;
    const HeadBatch b = lgr_forward(C(img), C(anchors), p);
    for (std::size_t r = 0; r < 5; ++r) CHECK(predict(head_row(a, r)) == predict(head_row(b, r)));
    CHECK(vt::max_abs_diff(a.p_image.value(), b.p_image.value()) <= 1e-12);
  }
}

TEST_CASE("gradcheck through the head into every parameter") {
  Rng rng(45);
  for (int rep = 0; rep < 3; ++rep) {
    const std::size_t D = 4, Cn = 3, M = 2;
    const LgrParams base = random_head(rng, D, Cn);
    const std::vector<std::size_t> labels{2, 0};
    std::vector<Tensor> inputs{vt::randn(rng, {2, D}), vt::randn(rng, {Cn, M, D})};
    std::vector<ParamRef> refs;
    base.append_params(refs);
    for (const auto& r : refs) inputs.push_back(r.var.value());
    const auto rep_ = gradcheck(
        [&](const std::vector<Var>& in) {
          LgrParams p = base;
          Var* slots[] = {&p.q_gain, &p.q_bias, &p.wq,    &p.bq,     &p.k_gain, &p.k_bias, &p.wk,
                          &p.bk,     &p.mlp_w1, &p.mlp_b1, &p.mlp_w2, &p.mlp_b2, &p.tau.tau};
          REQUIRE(in.size() == 2 + std::size(slots));
          for (std::size_t i = 0; i < std::size(slots); ++i) *slots[i] = in[2 + i];
          return rec_loss(lgr_forward(in[0], in[1], p), labels);
        },
        inputs);
    CHECK(rep_.passed);
    CHECK(rep_.max_rel_error <= 1e-4);
  }
}

TEST_CASE("baseline heads") {
  Rng rng(46);
  SUBCASE("FC with zero weights is uniform") {
    const Tensor p = fc_forward(C(vt::randn(rng, {2, 4})), FcHead::zeros(4, 5)).value();
    for (double v : p.vec()) CHECK(v == doctest::Approx(0.2).epsilon(1e-15));
  }
  SUBCASE("KNN picks the class holding the matching anchor") {
    Tensor anchors({3, 2, 4}, 0.0);
    anchors.vec()[0 * 8 + 0 * 4 + 0] = 1.0;  // class 0: e0, e1
    anchors.vec()[0 * 8 + 1 * 4 + 1] = 1.0;
    anchors.vec()[1 * 8 + 0 * 4 + 2] = 1.0;  // class 1: e2, -e2
    anchors.vec()[1 * 8 + 1 * 4 + 2] = -1.0;
    anchors.vec()[2 * 8 + 0 * 4 + 3] = 1.0;  // class 2: e3, e3
    anchors.vec()[2 * 8 + 1 * 4 + 3] = 1.0;
    const Tensor img = Tensor::matrix({{0, 0, 0, 2}});
    const Tensor p = knn_forward(C(img), wrap(anchors), C(Tensor({1}, 0.07))).value();
    CHECK(first_max(std::vector<double>(p.vec())) == 2);
  }
  SUBCASE("KNN matches a brute-force scan") {
    for (int rep = 0; rep < 50; ++rep) {
      const std::size_t Cn = vt::pick(rng, 1, 5), M = vt::pick(rng, 1, 5), D = vt::pick(rng, 2, 6);
      const Tensor anchors = vt::randn(rng, {Cn, M, D});
      const Tensor imgs = vt::randn(rng, {3, D});
      const double tau = 0.05 + rep * 0.01;
      const Tensor p = knn_forward(C(imgs), wrap(anchors), C(Tensor({1}, tau))).value();
      for (std::size_t b = 0; b < 3; ++b) {
        const auto want = oracle::knn(std::vector<double>(imgs.row(b).begin(), imgs.row(b).end()), anchors, tau);
        for (std::size_t c = 0; c < Cn; ++c) CHECK(std::abs(p.at(b, c) - want[c]) <= 1e-12);
      }
    }
  }
}

TEST_CASE("zero-shot classification") {
  Rng rng(47);
  CHECK(zero_shot_classify(std::vector<double>{0.3, -1}, Tensor::matrix({{2, 2}})) == 0);
  const Tensor means = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  CHECK(zero_shot_classify(std::vector<double>{0, 0, 4}, means) == 2);
  CHECK_THROWS_AS(zero_shot_classify(std::vector<double>{0, 0, 0}, means), NumericError);
  SUBCASE("anchor means, recomputed by hand") {
    for (int rep = 0; rep < 30; ++rep) {
      const Tensor anchors = vt::randn(rng, {4, 3, 5});
      const std::vector<double> e = vt::randn(rng, {5}).vec();
      std::vector<double> cos(4);
      for (std::size_t c = 0; c < 4; ++c) {
        std::vector<double> m(5, 0.0);
        for (std::size_t k = 0; k < 3; ++k)
          for (std::size_t d = 0; d < 5; ++d) m[d] += anchors.vec()[(c * 3 + k) * 5 + d] / 3.0;
        cos[c] = oracle::cosine(e, m);
      }
      CHECK(zero_shot_classify(e, wrap(anchors)) == first_max(cos));
    }
  }
}

TEST_CASE("anchor embedding cache") {
  vt::TempDir dir("vlae");
  Rng rng(48);
  AnchorEmbeddings a = wrap(vt::randn(rng, {3, 4, 5}));
  a.checkpoint = sha256("some checkpoint");
  a.write(dir / "a.vlae");
  CHECK(std::filesystem::file_size(dir / "a.vlae") == AnchorEmbeddings::file_size(3, 4, 5));
  CHECK(AnchorEmbeddings::file_size(3, 4, 5) == 52 + 3 * 4 * 5 * 8);
  const AnchorEmbeddings b = AnchorEmbeddings::read(dir / "a.vlae");
  CHECK(b.values == a.values);
  CHECK(b.checkpoint == a.checkpoint);
  CHECK(read_file(dir / "a.vlae").substr(0, 4) == "VLAE");
  const std::string bytes = read_file(dir / "a.vlae");
  write_file(dir / "short.vlae", bytes.substr(0, bytes.size() - 8));
  CHECK_THROWS_AS(AnchorEmbeddings::read(dir / "short.vlae"), IoError);
  write_file(dir / "long.vlae", bytes + "x");
  CHECK_THROWS_AS(AnchorEmbeddings::read(dir / "long.vlae"), IoError);
}

namespace {

struct Tiny {
  LongTailDataset data = gen_synthetic(4, {40, 15, 6, 3}, 6, 0.3, 2, 5);
  ClassCorpus corpus = [] {
    CorpusParams p;
    p.num_classes = 4;
    p.sentences_per_class = 6;
    p.prompt_count = 3;
    p.vocab_size = VocabLayout::minimum_size(4);
    return gen_corpus(p);
  }();
  EncoderPair enc = EncoderPair::init(6, VocabLayout::minimum_size(4), 5, 3);
  Digest digest = enc.to_checkpoint().digest();
  AnchorSet anchors = select_anchors(corpus, data, enc, 3, SelectionMode::AnSS);
  AnchorEmbeddings cache = precompute_anchor_embeddings(anchors, corpus, enc.linguistic, digest);
};

}  // namespace

TEST_CASE("fine-tuning and inference") {
  Tiny t;
  FinetuneConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  SUBCASE("anchor embeddings are the encoder applied to the selected sentences") {
    CHECK(t.cache.values.shape() == Shape{4, 3, 5});
    const Tensor e = encode_texts(t.enc.linguistic, {t.corpus.at(t.anchors.ids[2][1]).tokens}).value();
    for (std::size_t d = 0; d < 5; ++d) CHECK(t.cache.values.vec()[(2 * 3 + 1) * 5 + d] == e[d]);
  }
  SUBCASE("zero epochs change nothing") {
    FinetuneModel m = FinetuneModel::init(HeadKind::LGR, t.enc, t.digest, 4, 1);
    const std::string before = m.to_checkpoint().serialize();
    cfg.epochs = 0;
    CHECK(run_finetune(t.data, t.cache, m, cfg).empty());
    CHECK(m.to_checkpoint().serialize() == before);
  }
  SUBCASE("deterministic for every head, linguistic weights never touched") {
    for (HeadKind h : {HeadKind::LGR, HeadKind::FC, HeadKind::KNN}) {
      FinetuneModel a = FinetuneModel::init(h, t.enc, t.digest, 4, 1);
      FinetuneModel b = FinetuneModel::init(h, t.enc, t.digest, 4, 1);
      const std::size_t loads = linguistic_load_count();
      const auto ta = run_finetune(t.data, t.cache, a, cfg);
      run_finetune(t.data, t.cache, b, cfg);
      CHECK(linguistic_load_count() == loads);
      CHECK(ta.size() == 2);
      CHECK(a.to_checkpoint().serialize() == b.to_checkpoint().serialize());
      CHECK_FALSE(a.to_checkpoint().has("lin.table"));
      const auto pa = predict_all(a, t.cache, t.data.test_features, t.data.test_labels, 1);
      const auto pb = predict_all(b, t.cache, t.data.test_features, t.data.test_labels, 3);
      REQUIRE(pa.size() == pb.size());
      for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].pred == pb[i].pred);
    }
  }
  SUBCASE("predictions replay from the head probabilities") {
    FinetuneModel m = FinetuneModel::init(HeadKind::LGR, t.enc, t.digest, 4, 1);
    run_finetune(t.data, t.cache, m, cfg);
    const auto preds = predict_all(m, t.cache, t.data.test_features, t.data.test_labels);
    const HeadBatch hb = lgr_forward(encode_images(m.visual, t.data.test_features), t.cache, m.lgr);
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const HeadOutput h = head_row(hb, i);
      CHECK(preds[i].pred == predict(h));
      CHECK(preds[i].p_image == h.p_image[preds[i].pred]);
      CHECK(preds[i].p_text == h.p_text[preds[i].pred]);
    }
  }
  SUBCASE("anchors from another checkpoint are refused") {
    FinetuneModel m = FinetuneModel::init(HeadKind::LGR, t.enc, sha256("other"), 4, 1);
    CHECK_THROWS_AS(run_finetune(t.data, t.cache, m, cfg), ValidationError);
    CHECK_THROWS_AS(predict_all(m, t.cache, t.data.test_features, t.data.test_labels), ValidationError);
  }
  SUBCASE("model checkpoint round trip") {
    FinetuneModel m = FinetuneModel::init(HeadKind::LGR, t.enc, t.digest, 4, 1);
    run_finetune(t.data, t.cache, m, cfg);
    const Checkpoint ck = m.to_checkpoint();
    CHECK(FinetuneModel::from_checkpoint(ck).to_checkpoint().serialize() == ck.serialize());
  }
  SUBCASE("cache on disk predicts exactly like live encoding") {
    vt::TempDir dir("live");
    FinetuneModel m = FinetuneModel::init(HeadKind::LGR, t.enc, t.digest, 4, 1);
    run_finetune(t.data, t.cache, m, cfg);
    t.cache.write(dir / "c.vlae");
    const AnchorEmbeddings disk = AnchorEmbeddings::read(dir / "c.vlae");
    const AnchorEmbeddings live = precompute_anchor_embeddings(t.anchors, t.corpus, t.enc.linguistic, t.digest);
    const auto a = predict_all(m, disk, t.data.test_features, t.data.test_labels);
    const auto b = predict_all(m, live, t.data.test_features, t.data.test_labels);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].pred == b[i].pred);
      CHECK(a[i].p_text == b[i].p_text);
    }
  }
}

TEST_CASE("linguistic load counter") {
  const EncoderPair enc = EncoderPair::init(4, 20, 3, 1);
  const Checkpoint ck = enc.to_checkpoint();
  const std::size_t before = linguistic_load_count();
  LinguisticEncoder::load(ck, false);
  CHECK(linguistic_load_count() == before + 1);
  VisualEncoder::load(ck, false);
  CHECK(linguistic_load_count() == before + 1);
}
