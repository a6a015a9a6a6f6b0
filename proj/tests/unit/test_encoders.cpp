#include <doctest.h>

#include "helpers.hpp"
#include "vlltr/cvlp.hpp"
#include "vlltr/encoders.hpp"
#include "vlltr/error.hpp"
#include "vlltr/gradcheck.hpp"

using namespace vlltr;

TEST_CASE("visual encoder") {
  SUBCASE("zero weights give zero embeddings and cosine refuses them") {
    const VisualEncoder z = VisualEncoder::zeros(4, 3);
    Rng rng(1);
    const Tensor e = encode_images(z, vt::randn(rng, {2, 4})).value();
    for (double v : e.vec()) CHECK(v == 0.0);
    CHECK_THROWS_AS(cosine_sim_matrix(Var::constant(e), Var::constant(e)), NumericError);
  }
  SUBCASE("a row does not depend on its batch mates") {
    const VisualEncoder enc = VisualEncoder::init(4, 3, 7);
    Rng rng(2);
    const Tensor two = vt::randn(rng, {2, 4});
    const Tensor one({1, 4}, std::vector<double>(two.row(0).begin(), two.row(0).end()));
    const Tensor a = encode_images(enc, one).value();
    const Tensor b = encode_images(enc, two).value();
    for (std::size_t k = 0; k < 3; ++k) CHECK(a.at(0, k) == b.at(0, k));
  }
  SUBCASE("input width is checked") {
    const VisualEncoder enc = VisualEncoder::init(4, 3, 7);
    CHECK_THROWS_AS(encode_images(enc, Tensor({2, 5})), ShapeError);
  }
  SUBCASE("hidden width is twice the output width") {
    const VisualEncoder enc = VisualEncoder::init(5, 3, 1);
    CHECK(enc.w1.shape() == Shape{5, 6});
    CHECK(enc.out_dim() == 3);
  }
}

TEST_CASE("linguistic encoder") {
  const LinguisticEncoder enc = LinguisticEncoder::init(10, 4, 3);
  SUBCASE("single token is the projection of its embedding") {
    const Tensor e = encode_texts(enc, {{6}}).value();
    const Tensor& table = enc.table.value();
    const Tensor& proj = enc.proj.value();
    for (std::size_t j = 0; j < 4; ++j) {
      double v = enc.bias.value()[j];
      for (std::size_t k = 0; k < table.shape()[1]; ++k) v += table.at(6, k) * proj.at(k, j);
      CHECK(e.at(0, j) == doctest::Approx(v).epsilon(1e-14));
    }
  }
  SUBCASE("permuting tokens leaves the output unchanged") {
    const Tensor a = encode_texts(enc, {{0, 3, 7, 9, 1}}).value();
    const Tensor b = encode_texts(enc, {{9, 1, 7, 0, 3}}).value();
    CHECK(vt::max_abs_diff(a, b) <= 1e-15);
  }
  SUBCASE("length limits") {
    CHECK_THROWS_AS(encode_texts(enc, {{}}), ValidationError);
    CHECK_NOTHROW(encode_texts(enc, {TokenSeq(77, 2)}));
    CHECK_THROWS_AS(encode_texts(enc, {TokenSeq(78, 2)}), ValidationError);
  }
  SUBCASE("ragged batch: shorter rows are not padded into the mean") {
    const Tensor batch = encode_texts(enc, {{2, 3}, {2, 3, 4, 5}}).value();
    const Tensor alone = encode_texts(enc, {{2, 3}}).value();
    for (std::size_t j = 0; j < 4; ++j) CHECK(batch.at(0, j) == alone.at(0, j));
  }
  SUBCASE("gradcheck through the table and projection") {
    Rng rng(4);
    const auto rep = gradcheck(
        [](const std::vector<Var>& in) {
          LinguisticEncoder e{in[0], in[1], in[2]};
          return weighted_sum(encode_texts(e, {{0, 2, 1}, {3, 3, 4, 1}}),
                              Tensor::matrix({{0.3, -1.0, 0.5}, {2.0, 0.1, -0.7}}));
        },
        {vt::randn(rng, {5, 4}), vt::randn(rng, {4, 3}), vt::randn(rng, {3})});
    CHECK(rep.max_rel_error <= 1e-6);
  }
}

TEST_CASE("gradcheck through encode, cosine and the contrastive loss") {
  Rng rng(6);
  const Tensor images = vt::randn(rng, {4, 3});
  const std::vector<TokenSeq> texts{{0, 2, 1}, {0, 3, 1}, {0, 4, 4, 1}, {0, 2, 5, 1}};
  const std::vector<std::size_t> labels{0, 1, 0, 1};
  const auto rep = gradcheck(
      [&](const std::vector<Var>& in) {
        VisualEncoder v{in[0], in[1], in[2], in[3]};
        LinguisticEncoder l{in[4], in[5], in[6]};
        Var s = cosine_sim_matrix(encode_images(v, images), encode_texts(l, texts));
        return ccl_loss(s, labels, in[7]).total;
      },
      {vt::randn(rng, {3, 4}), vt::randn(rng, {4}), vt::randn(rng, {4, 2}), vt::randn(rng, {2}),
       vt::randn(rng, {6, 3}), vt::randn(rng, {3, 2}), vt::randn(rng, {2}), Tensor({1}, 0.5)});
  CHECK(rep.passed);
  CHECK(rep.max_rel_error <= 1e-4);
}

TEST_CASE("temperature") {
  CHECK(Temperature::init().value() == 0.07);
  CHECK(Temperature::init(5.0).value() == 1.0);
  CHECK_THROWS_AS(Temperature::init(0.0), ValidationError);
  Temperature t = Temperature::init();
  t.tau.mutable_value()[0] = -3.0;
  t.clamp();
  CHECK(t.value() == 0.01);
  t.tau.mutable_value()[0] = 42.0;
  t.clamp();
  CHECK(t.value() == 1.0);
}

TEST_CASE("checkpoint round trip") {
  vt::TempDir dir("ck");
  const EncoderPair enc = EncoderPair::init(5, 30, 4, 11);
  Checkpoint ck = enc.to_checkpoint();
  ck.meta["stage"] = "test";
  ck.write(dir / "e.vlck");
  const std::string bytes = read_file(dir / "e.vlck");
  CHECK(bytes.substr(0, 4) == "VLCK");
  const Checkpoint back = Checkpoint::read(dir / "e.vlck");
  CHECK(back.serialize() == bytes);
  CHECK(back.meta.at("stage") == "test");
  const EncoderPair e2 = EncoderPair::from_checkpoint(back, true);
  CHECK(e2.to_checkpoint().serialize() == enc.to_checkpoint().serialize());
  CHECK(e2.temperature.value() == enc.temperature.value());
  write_file(dir / "cut.vlck", bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(Checkpoint::read(dir / "cut.vlck"), IoError);
}

TEST_CASE("teacher pair") {
  const EncoderPair snap = EncoderPair::init(5, 30, 4, 12);
  const TeacherPair teacher(snap);
  Rng rng(3);
  const Tensor images = vt::randn(rng, {3, 5});
  const std::vector<TokenSeq> texts{{0, 7, 1}, {0, 8, 9, 1}, {0, 20, 1}};
  SUBCASE("teacher built from a snapshot reproduces the student's matrix") {
    const Tensor s = cosine_sim_matrix(encode_images(snap.visual, images),
                                       encode_texts(snap.linguistic, texts))
                         .value();
    CHECK(teacher.similarity(images, texts) == s);
  }
  SUBCASE("frozen: repeated calls agree and parameters hold no gradient path") {
    CHECK(teacher.similarity(images, texts) == teacher.similarity(images, texts));
    CHECK_FALSE(teacher.encoders().visual.w1.requires_grad());
    CHECK(teacher.temperature() == snap.temperature.value());
  }
  SUBCASE("student training leaves the teacher untouched") {
    const Tensor before = teacher.similarity(images, texts);
    EncoderPair student = snap.clone(true);
    student.visual.w1.mutable_value()[0] += 1.0;
    CHECK(teacher.similarity(images, texts) == before);
  }
}
