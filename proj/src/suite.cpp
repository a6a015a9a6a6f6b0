#include "vlltr/suite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "vlltr/cvlp.hpp"
#include "vlltr/lgr.hpp"
#include "vlltr/ops.hpp"

namespace vlltr {
namespace {

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Tensor randn(Rng& rng, Shape s, double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  Tensor t(std::move(s));
  for (auto& v : t.vec()) v = g(rng);
  return t;
}

Tensor uniform(Rng& rng, Shape s, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(s));
  for (auto& v : t.vec()) v = u(rng);
  return t;
}

// Entries bounded away from zero so kinks are never straddled.
Tensor away_from_zero(Rng& rng, Shape s) {
  Tensor t = uniform(rng, std::move(s), 0.2, 1.5);
  std::bernoulli_distribution sign(0.5);
  for (auto& v : t.vec())
    if (sign(rng)) v = -v;
  return t;
}

// Rows whose entries are pairwise separated, so the maximum is unique.
Tensor separated(Rng& rng, std::size_t rows, std::size_t cols) {
  Tensor t({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<double> v(cols);
    std::iota(v.begin(), v.end(), 0.0);
    std::shuffle(v.begin(), v.end(), rng);
    for (std::size_t c = 0; c < cols; ++c) t.at(r, c) = 0.5 * v[c] + uniform(rng, {1}, 0, 0.1)[0];
  }
  return t;
}

std::vector<std::size_t> labels(Rng& rng, std::size_t n, std::size_t classes) {
  std::vector<std::size_t> y(n);
  for (auto& v : y) v = pick(rng, 0, classes - 1);
  return y;
}

// Reduces a tensor-valued op to a scalar through fixed random weights.
GradcheckInstance projected(Rng& rng, Shape out_shape, std::vector<Tensor> inputs,
                            std::function<Var(const std::vector<Var>&)> op) {
  const Tensor w = randn(rng, std::move(out_shape));
  return {[op = std::move(op), w](const std::vector<Var>& in) { return weighted_sum(op(in), w); },
          std::move(inputs)};
}

// Scale by 2 whose backward claims 2.2: the negative control.
Var faulty_scale(const Var& x) {
  Tensor v = x.value();
  for (auto& e : v.vec()) e *= 2.0;
  return make_op("faulty_scale", std::move(v), {x}, [](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.2 * self.grad[i];
  });
}

EncoderPair pair_from(const std::vector<Var>& in, std::size_t offset) {
  EncoderPair e;
  e.visual = {in[offset], in[offset + 1], in[offset + 2], in[offset + 3]};
  e.linguistic.table = in[offset + 4];
  e.linguistic.proj = in[offset + 5];
  e.linguistic.bias = in[offset + 6];
  e.temperature.tau = in[offset + 7];
  return e;
}

std::vector<Tensor> encoder_tensors(Rng& rng, std::size_t d_img, std::size_t vocab,
                                    std::size_t dim) {
  return {randn(rng, {d_img, 2 * dim}, 0.5), randn(rng, {2 * dim}, 0.1),
          randn(rng, {2 * dim, dim}, 0.5),   randn(rng, {dim}, 0.1),
          randn(rng, {vocab, dim}),          randn(rng, {dim, dim}, 0.5),
          randn(rng, {dim}, 0.1),            uniform(rng, {1}, 0.3, 1.0)};
}

PairedBatch random_batch(Rng& rng, std::size_t n, std::size_t d_img, std::size_t vocab,
                         std::size_t classes) {
  PairedBatch b;
  b.images = randn(rng, {n, d_img});
  b.labels = labels(rng, n, classes);
  for (std::size_t i = 0; i < n; ++i) {
    TokenSeq t{kSos};
    const std::size_t len = pick(rng, 1, 4);
    for (std::size_t k = 0; k < len; ++k) t.push_back(static_cast<std::int32_t>(pick(rng, 2, vocab - 1)));
    t.push_back(kEos);
    b.texts.push_back(std::move(t));
  }
  return b;
}

GradcheckInstance pretrain_instance(Rng& rng, double lambda) {
  const std::size_t n = pick(rng, 2, 6), d_img = 3, vocab = 10, dim = pick(rng, 2, 6);
  const std::size_t classes = pick(rng, 1, 4);
  auto batch = std::make_shared<PairedBatch>(random_batch(rng, n, d_img, vocab, classes));
  auto teacher = std::make_shared<TeacherPair>(
      EncoderPair::init(d_img, vocab, dim, rng()));
  return {[batch, teacher, lambda](const std::vector<Var>& in) {
            return pretrain_loss(*batch, pair_from(in, 0), teacher.get(), lambda).pre;
          },
          encoder_tensors(rng, d_img, vocab, dim)};
}

std::vector<Tensor> lgr_tensors(Rng& rng, std::size_t dim, std::size_t classes) {
  return {uniform(rng, {dim}, 0.5, 1.5), randn(rng, {dim}, 0.1), randn(rng, {dim, dim}, 0.7),
          randn(rng, {dim}, 0.1),        uniform(rng, {dim}, 0.5, 1.5), randn(rng, {dim}, 0.1),
          randn(rng, {dim, dim}, 0.7),   randn(rng, {dim}, 0.1),   randn(rng, {dim, dim}, 0.7),
          randn(rng, {dim}, 0.1),        randn(rng, {dim, classes}, 0.7), randn(rng, {classes}, 0.1),
          uniform(rng, {1}, 0.3, 1.0)};
}

LgrParams lgr_from(const std::vector<Var>& in, std::size_t o) {
  LgrParams p;
  p.q_gain = in[o];
  p.q_bias = in[o + 1];
  p.wq = in[o + 2];
  p.bq = in[o + 3];
  p.k_gain = in[o + 4];
  p.k_bias = in[o + 5];
  p.wk = in[o + 6];
  p.bk = in[o + 7];
  p.mlp_w1 = in[o + 8];
  p.mlp_b1 = in[o + 9];
  p.mlp_w2 = in[o + 10];
  p.mlp_b2 = in[o + 11];
  p.tau.tau = in[o + 12];
  return p;
}

}  // namespace

std::vector<GradcheckCase> gradcheck_cases(bool with_fault) {
  std::vector<GradcheckCase> cases = {
      {"matmul",
       [](Rng& r) {
         const std::size_t n = pick(r, 1, 4), k = pick(r, 1, 4), m = pick(r, 1, 4);
         return projected(r, {n, m}, {randn(r, {n, k}), randn(r, {k, m})},
                          [](const std::vector<Var>& in) { return matmul(in[0], in[1]); });
       }},
      {"transpose",
       [](Rng& r) {
         const std::size_t n = pick(r, 1, 4), m = pick(r, 1, 4);
         return projected(r, {m, n}, {randn(r, {n, m})},
                          [](const std::vector<Var>& in) { return transpose(in[0]); });
       }},
      {"add",
       [](Rng& r) {
         const std::size_t n = pick(r, 1, 4), m = pick(r, 1, 4);
         return projected(r, {n, m}, {randn(r, {n, m}), randn(r, {n, m})},
                          [](const std::vector<Var>& in) { return add(in[0], in[1]); });
       }},
      {"add_bias",
       [](Rng& r) {
         const std::size_t n = pick(r, 1, 4), m = pick(r, 1, 4);
         return projected(r, {n, m}, {randn(r, {n, m}), randn(r, {m})},
                          [](const std::vector<Var>& in) { return add_bias(in[0], in[1]); });
       }},
      {"scale",
       [](Rng& r) {
         const std::size_t n = pick(r, 1, 5);
         const double c = uniform(r, {1}, -2, 2)[0];
         return projected(r, {n}, {randn(r, {n})},
                          [c](const std::vector<Var>& in) { return scale(in[0], c); });
       }},
      {"div_scalar",
       [](Rng& r) {
         const std::size_t n = pick(r, 1, 4), m = pick(r, 1, 4);
         return projected(r, {n, m}, {randn(r, {n, m}), uniform(r, {1}, 0.3, 2.0)},
                          [](const std::vector<Var>& in) { return div_scalar(in[0], in[1]); });
       }},
      {"relu",
       [](Rng& r) {
         const std::size_t n = pick(r, 1, 8);
         return projected(r, {n}, {away_from_zero(r, {n})},
                          [](const std::vector<Var>& in) { return relu(in[0]); });
       }},
      {"tanh",
       [](Rng& r) {
         const std::size_t n = pick(r, 1, 8);
         return projected(r, {n}, {randn(r, {n})},
                          [](const std::vector<Var>& in) { return tanh(in[0]); });
       }},
      {"reshape",
       [](Rng& r) {
         const std::size_t n = pick(r, 1, 4), m = pick(r, 1, 4);
         return projected(r, {m, n}, {randn(r, {n, m})},
                          [m, n](const std::vector<Var>& in) { return reshape(in[0], {m, n}); });
       }},
      {"softmax",
       [](Rng& r) {
         const std::size_t a = pick(r, 1, 3), b = pick(r, 1, 3), c = pick(r, 1, 4);
         const std::size_t axis = pick(r, 0, 2);
         return projected(r, {a, b, c}, {randn(r, {a, b, c})},
                          [axis](const std::vector<Var>& in) { return softmax(in[0], axis); });
       }},
      {"log_softmax",
       [](Rng& r) {
         const std::size_t a = pick(r, 1, 3), b = pick(r, 1, 3), c = pick(r, 1, 4);
         const std::size_t axis = pick(r, 0, 2);
         return projected(r, {a, b, c}, {randn(r, {a, b, c})},
                          [axis](const std::vector<Var>& in) { return log_softmax(in[0], axis); });
       }},
      {"layer_norm",
       [](Rng& r) {
         const std::size_t n = pick(r, 1, 4), d = pick(r, 2, 6);
         return projected(r, {n, d}, {randn(r, {n, d}), randn(r, {d}), randn(r, {d})},
                          [](const std::vector<Var>& in) { return layer_norm(in[0], in[1], in[2]); });
       }},
      {"cosine_sim_matrix",
       [](Rng& r) {
         const std::size_t n = pick(r, 1, 4), m = pick(r, 1, 4), d = pick(r, 2, 5);
         return projected(r, {n, m}, {randn(r, {n, d}), randn(r, {m, d})},
                          [](const std::vector<Var>& in) { return cosine_sim_matrix(in[0], in[1]); });
       }},
      {"rowwise_cosine",
       [](Rng& r) {
         const std::size_t b = pick(r, 1, 3), c = pick(r, 1, 4), d = pick(r, 2, 5);
         return projected(r, {b, c}, {randn(r, {b, d}), randn(r, {b, c, d})},
                          [](const std::vector<Var>& in) { return rowwise_cosine(in[0], in[1]); });
       }},
      {"embedding_bag_mean",
       [](Rng& r) {
         const std::size_t v = pick(r, 2, 6), d = pick(r, 1, 4), n = pick(r, 1, 4);
         std::vector<TokenSeq> seqs(n);
         for (auto& s : seqs) {
           const std::size_t len = pick(r, 1, 5);
           for (std::size_t k = 0; k < len; ++k) s.push_back(static_cast<std::int32_t>(pick(r, 0, v - 1)));
         }
         return projected(r, {n, d}, {randn(r, {v, d})}, [seqs](const std::vector<Var>& in) {
           return embedding_bag_mean(in[0], seqs);
         });
       }},
      {"class_gather",
       [](Rng& r) {
         const std::size_t b = pick(r, 1, 3), c = pick(r, 1, 3), m = pick(r, 1, 3), d = pick(r, 1, 4);
         return projected(r, {b, c, d}, {randn(r, {b, c, m}), randn(r, {c, m, d})},
                          [](const std::vector<Var>& in) { return class_gather(in[0], in[1]); });
       }},
      {"max_last_axis",
       [](Rng& r) {
         const std::size_t n = pick(r, 1, 4), m = pick(r, 1, 5);
         return projected(r, {n}, {separated(r, n, m)},
                          [](const std::vector<Var>& in) { return max_last_axis(in[0]); });
       }},
      {"sum",
       [](Rng& r) {
         const std::size_t n = pick(r, 1, 6);
         return GradcheckInstance{[](const std::vector<Var>& in) { return sum(in[0]); }, {randn(r, {n})}};
       }},
      {"mean",
       [](Rng& r) {
         const std::size_t n = pick(r, 1, 6);
         return GradcheckInstance{[](const std::vector<Var>& in) { return mean(in[0]); }, {randn(r, {n})}};
       }},
      {"cross_entropy",
       [](Rng& r) {
         const std::size_t b = pick(r, 1, 4), c = pick(r, 1, 4);
         auto y = labels(r, b, c);
         return GradcheckInstance{[y](const std::vector<Var>& in) {
                                    return cross_entropy(softmax(in[0], 1), y);
                                  },
                                  {randn(r, {b, c})}};
       }},
      {"L_ccl",
       [](Rng& r) {
         const std::size_t n = pick(r, 1, 6);
         auto y = labels(r, n, pick(r, 1, 4));
         return GradcheckInstance{[y](const std::vector<Var>& in) {
                                    return ccl_loss(in[0], y, in[1]).total;
                                  },
                                  {uniform(r, {n, n}, -1, 1), uniform(r, {1}, 0.3, 1.0)}};
       }},
      {"L_dis",
       [](Rng& r) {
         const std::size_t n = pick(r, 1, 6);
         const Tensor teacher = uniform(r, {n, n}, -1, 1);
         const double t_tau = uniform(r, {1}, 0.1, 1.0)[0];
         return GradcheckInstance{[teacher, t_tau](const std::vector<Var>& in) {
                                    return distill_loss(in[0], teacher, in[1], t_tau);
                                  },
                                  {uniform(r, {n, n}, -1, 1), uniform(r, {1}, 0.3, 1.0)}};
       }},
      {"L_pre", [](Rng& r) { return pretrain_instance(r, 0.5); }},
      {"L_rec o lgr_forward",
       [](Rng& r) {
         const std::size_t b = pick(r, 1, 3), c = pick(r, 1, 4), m = pick(r, 1, 3), d = pick(r, 2, 8);
         auto y = labels(r, b, c);
         std::vector<Tensor> in = {randn(r, {b, d}), randn(r, {c, m, d})};
         for (auto& t : lgr_tensors(r, d, c)) in.push_back(std::move(t));
         return GradcheckInstance{[y](const std::vector<Var>& v) {
                                    return rec_loss(lgr_forward(v[0], v[1], lgr_from(v, 2)), y);
                                  },
                                  std::move(in)};
       }},
      {"fc_head",
       [](Rng& r) {
         const std::size_t b = pick(r, 1, 3), c = pick(r, 1, 4), d = pick(r, 1, 6);
         auto y = labels(r, b, c);
         return GradcheckInstance{[y](const std::vector<Var>& v) {
                                    return cross_entropy(fc_forward(v[0], FcHead{v[1], v[2]}), y);
                                  },
                                  {randn(r, {b, d}), randn(r, {d, c}), randn(r, {c})}};
       }},
  };
  if (with_fault)
    cases.push_back({"faulty_scale", [](Rng& r) {
                       const std::size_t n = pick(r, 1, 5);
                       return projected(r, {n}, {randn(r, {n})},
                                        [](const std::vector<Var>& in) { return faulty_scale(in[0]); });
                     }});
  return cases;
}

std::vector<SuiteResult> run_gradcheck_suite(const std::vector<GradcheckCase>& cases,
                                             std::size_t instances, std::uint64_t seed,
                                             const GradcheckOptions& opts) {
  std::vector<SuiteResult> out;
  for (std::size_t k = 0; k < cases.size(); ++k) {
    SuiteResult res;
    res.name = cases[k].name;
    Rng rng(mix_seed(seed, 1000 + k));
    for (std::size_t i = 0; i < instances; ++i) {
      const GradcheckInstance inst = cases[k].make(rng);
      const GradcheckReport rep = gradcheck(inst.fn, inst.inputs, opts);
      res.max_rel_error = std::max(res.max_rel_error, rep.max_rel_error);
      res.failures += !rep.passed;
      ++res.instances;
    }
    out.push_back(res);
  }
  return out;
}

std::string format_suite(const std::vector<SuiteResult>& results) {
  std::size_t width = 0;
  for (const auto& r : results) width = std::max(width, r.name.size());
  std::ostringstream os;
  char buf[64];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, "%4zu  %.3e  ", r.instances, r.max_rel_error);
    os << r.name << std::string(width - r.name.size() + 2, ' ') << buf
       << (r.passed() ? "PASS" : "FAIL") << '\n';
  }
  return os.str();
}

}  // namespace vlltr
