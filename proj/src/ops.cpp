#include "vlltr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "vlltr/error.hpp"

namespace vlltr {
namespace {

// Gradient sink for parent i, or an empty span when it needs none.
std::span<double> sink(Node& self, std::size_t i) {
  Node& p = *self.parents.at(i);
  return p.requires_grad ? p.grad_buffer() : std::span<double>{};
}

void require_rank(const Var& x, std::size_t rank, const char* op) {
  if (x.value().rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + shape_str(x.shape()));
}

struct AxisLayout {
  std::size_t outer, len, inner;
};

AxisLayout axis_layout(const Shape& s, std::size_t axis) {
  AxisLayout l{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) l.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) l.inner *= s[i];
  return l;
}

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  if (b.shape()[0] != k)
    throw ShapeError("matmul: inner dimensions disagree for " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  Tensor out({n, m}, 0.0);
  const auto& A = a.value();
  const auto& B = b.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A.at(i, p);
      for (std::size_t j = 0; j < m; ++j) out.at(i, j) += av * B.at(p, j);
    }
  return make_op("matmul", std::move(out), {a, b}, [n, k, m](Node& self) {
    const Tensor& dy = self.grad;
    const Tensor& A = self.parents[0]->value;
    const Tensor& B = self.parents[1]->value;
    if (auto da = sink(self, 0); !da.empty())
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < m; ++j) s += dy.at(i, j) * B.at(p, j);
          da[i * k + p] += s;
        }
    if (auto db = sink(self, 1); !db.empty())
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A.at(i, p);
          for (std::size_t j = 0; j < m; ++j) db[p * m + j] += av * dy.at(i, j);
        }
  });
}

Var transpose(const Var& a) {
  require_rank(a, 2, "transpose");
  const std::size_t n = a.shape()[0], m = a.shape()[1];
  Tensor out({m, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.at(j, i) = a.value().at(i, j);
  return make_op("transpose", std::move(out), {a}, [n, m](Node& self) {
    auto da = sink(self, 0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) da[i * m + j] += self.grad.at(j, i);
  });
}

Var add(const Var& a, const Var& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_op("add", std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p)
      if (auto d = sink(self, p); !d.empty())
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
  });
}

Var add_bias(const Var& x, const Var& bias) {
  const std::size_t n = bias.value().size();
  if (bias.value().rank() != 1 || x.shape().back() != n)
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " vs input " +
                     shape_str(x.shape()));
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias.value()[i % n];
  return make_op("add_bias", std::move(out), {x, bias}, [n](Node& self) {
    if (auto dx = sink(self, 0); !dx.empty())
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i];
    if (auto db = sink(self, 1); !db.empty())
      for (std::size_t i = 0; i < self.grad.size(); ++i) db[i % n] += self.grad[i];
  });
}

Var scale(const Var& x, double c) {
  Tensor out = x.value();
  for (auto& v : out.vec()) v *= c;
  return make_op("scale", std::move(out), {x}, [c](Node& self) {
    auto dx = sink(self, 0);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += c * self.grad[i];
  });
}

Var div_scalar(const Var& x, const Var& s) {
  if (s.value().size() != 1)
    throw ShapeError("div_scalar: divisor must hold one element, got " + shape_str(s.shape()));
  const double d = s.value()[0];
  Tensor out = x.value();
  for (auto& v : out.vec()) v /= d;
  return make_op("div_scalar", std::move(out), {x, s}, [d](Node& self) {
    const Tensor& X = self.parents[0]->value;
    if (auto dx = sink(self, 0); !dx.empty())
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i] / d;
    if (auto ds = sink(self, 1); !ds.empty()) {
      double acc = 0.0;
      for (std::size_t i = 0; i < X.size(); ++i) acc += self.grad[i] * X[i];
      ds[0] += -acc / (d * d);
    }
  });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.vec()) v = v > 0.0 ? v : 0.0;
  return make_op("relu", std::move(out), {x}, [](Node& self) {
    auto dx = sink(self, 0);
    const Tensor& X = self.parents[0]->value;
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (X[i] > 0.0) dx[i] += self.grad[i];
  });
}

Var tanh(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.vec()) v = std::tanh(v);
  return make_op("tanh", std::move(out), {x}, [](Node& self) {
    auto dx = sink(self, 0);
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const double y = self.value[i];
      dx[i] += (1.0 - y * y) * self.grad[i];
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make_op("reshape", std::move(out), {x}, [](Node& self) {
    auto dx = sink(self, 0);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i];
  });
}

Var softmax(const Var& x, std::size_t axis) {
  if (axis >= x.value().rank())
    throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for shape " +
                     shape_str(x.shape()));
  const auto L = axis_layout(x.shape(), axis);
  Tensor out = x.value();
  for (std::size_t o = 0; o < L.outer; ++o)
    for (std::size_t in = 0; in < L.inner; ++in) {
      const std::size_t base = o * L.len * L.inner + in;
      double mx = out[base];
      for (std::size_t k = 1; k < L.len; ++k) mx = std::max(mx, out[base + k * L.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < L.len; ++k) {
        double& v = out[base + k * L.inner];
        v = std::exp(v - mx);
        z += v;
      }
      for (std::size_t k = 0; k < L.len; ++k) out[base + k * L.inner] /= z;
    }
  return make_op("softmax", std::move(out), {x}, [L](Node& self) {
    auto dx = sink(self, 0);
    const Tensor& y = self.value;
    const Tensor& dy = self.grad;
    for (std::size_t o = 0; o < L.outer; ++o)
      for (std::size_t in = 0; in < L.inner; ++in) {
        const std::size_t base = o * L.len * L.inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < L.len; ++k) {
          const std::size_t i = base + k * L.inner;
          dot += dy[i] * y[i];
        }
        for (std::size_t k = 0; k < L.len; ++k) {
          const std::size_t i = base + k * L.inner;
          dx[i] += y[i] * (dy[i] - dot);
        }
      }
  });
}

Var log_softmax(const Var& x, std::size_t axis) {
  if (axis >= x.value().rank())
    throw ShapeError("log_softmax: axis " + std::to_string(axis) + " invalid for shape " +
                     shape_str(x.shape()));
  const auto L = axis_layout(x.shape(), axis);
  Tensor out = x.value();
  for (std::size_t o = 0; o < L.outer; ++o)
    for (std::size_t in = 0; in < L.inner; ++in) {
      const std::size_t base = o * L.len * L.inner + in;
      double mx = out[base];
      for (std::size_t k = 1; k < L.len; ++k) mx = std::max(mx, out[base + k * L.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < L.len; ++k) z += std::exp(out[base + k * L.inner] - mx);
      const double lz = mx + std::log(z);
      for (std::size_t k = 0; k < L.len; ++k) out[base + k * L.inner] -= lz;
    }
  return make_op("log_softmax", std::move(out), {x}, [L](Node& self) {
    auto dx = sink(self, 0);
    const Tensor& y = self.value;
    const Tensor& dy = self.grad;
    for (std::size_t o = 0; o < L.outer; ++o)
      for (std::size_t in = 0; in < L.inner; ++in) {
        const std::size_t base = o * L.len * L.inner + in;
        double total = 0.0;
        for (std::size_t k = 0; k < L.len; ++k) total += dy[base + k * L.inner];
        for (std::size_t k = 0; k < L.len; ++k) {
          const std::size_t i = base + k * L.inner;
          dx[i] += dy[i] - std::exp(y[i]) * total;
        }
      }
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const std::size_t n = x.shape().back();
  if (gain.value().rank() != 1 || gain.value().size() != n || bias.value().rank() != 1 ||
      bias.value().size() != n)
    throw ShapeError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                     shape_str(bias.shape()) + " do not match last axis of " +
                     shape_str(x.shape()));
  const std::size_t rows = x.value().size() / n;
  Tensor xhat(x.shape());
  std::vector<double> inv_std(rows);
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    auto xr = x.value().row(r);
    double mu = 0.0;
    for (double v : xr) mu += v;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double v : xr) var += (v - mu) * (v - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (xr[j] - mu) * inv_std[r];
      xhat[r * n + j] = h;
      out[r * n + j] = gain.value()[j] * h + bias.value()[j];
    }
  }
  return make_op(
      "layer_norm", std::move(out), {x, gain, bias},
      [n, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        const Tensor& dy = self.grad;
        const Tensor& g = self.parents[1]->value;
        if (auto dx = sink(self, 0); !dx.empty())
          for (std::size_t r = 0; r < rows; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double dh = dy[r * n + j] * g[j];
              m1 += dh;
              m2 += dh * xhat[r * n + j];
            }
            m1 /= static_cast<double>(n);
            m2 /= static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j) {
              const double dh = dy[r * n + j] * g[j];
              dx[r * n + j] += inv_std[r] * (dh - m1 - xhat[r * n + j] * m2);
            }
          }
        if (auto dg = sink(self, 1); !dg.empty())
          for (std::size_t i = 0; i < dy.size(); ++i) dg[i % n] += dy[i] * xhat[i];
        if (auto db = sink(self, 2); !db.empty())
          for (std::size_t i = 0; i < dy.size(); ++i) db[i % n] += dy[i];
      });
}

Var cosine_sim_matrix(const Var& a, const Var& b) {
  require_rank(a, 2, "cosine_sim_matrix");
  require_rank(b, 2, "cosine_sim_matrix");
  const std::size_t n = a.shape()[0], m = b.shape()[0], d = a.shape()[1];
  if (b.shape()[1] != d)
    throw ShapeError("cosine_sim_matrix: embedding widths differ: " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  std::vector<double> na(n), nb(m);
  for (std::size_t i = 0; i < n; ++i) {
    na[i] = norm(a.value().row(i));
    if (na[i] == 0.0)
      throw NumericError("cosine_sim_matrix: row " + std::to_string(i) +
                         " of the first operand has zero norm");
  }
  for (std::size_t j = 0; j < m; ++j) {
    nb[j] = norm(b.value().row(j));
    if (nb[j] == 0.0)
      throw NumericError("cosine_sim_matrix: row " + std::to_string(j) +
                         " of the second operand has zero norm");
  }
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    auto ar = a.value().row(i);
    for (std::size_t j = 0; j < m; ++j) {
      auto br = b.value().row(j);
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += ar[k] * br[k];
      out.at(i, j) = std::clamp(dot / (na[i] * nb[j]), -1.0, 1.0);
    }
  }
  return make_op("cosine_sim_matrix", std::move(out), {a, b},
                 [n, m, d, na = std::move(na), nb = std::move(nb)](Node& self) {
                   const Tensor& A = self.parents[0]->value;
                   const Tensor& B = self.parents[1]->value;
                   const Tensor& S = self.value;
                   const Tensor& dS = self.grad;
                   auto da = sink(self, 0);
                   auto db = sink(self, 1);
                   for (std::size_t i = 0; i < n; ++i)
                     for (std::size_t j = 0; j < m; ++j) {
                       const double g = dS.at(i, j);
                       if (g == 0.0) continue;
                       const double s = S.at(i, j);
                       for (std::size_t k = 0; k < d; ++k) {
                         const double ah = A.at(i, k) / na[i];
                         const double bh = B.at(j, k) / nb[j];
                         if (!da.empty()) da[i * d + k] += g * (bh - s * ah) / na[i];
                         if (!db.empty()) db[j * d + k] += g * (ah - s * bh) / nb[j];
                       }
                     }
                 });
}

Var rowwise_cosine(const Var& e, const Var& g) {
  require_rank(e, 2, "rowwise_cosine");
  require_rank(g, 3, "rowwise_cosine");
  const std::size_t B = e.shape()[0], D = e.shape()[1], C = g.shape()[1];
  if (g.shape()[0] != B || g.shape()[2] != D)
    throw ShapeError("rowwise_cosine: " + shape_str(e.shape()) + " vs " + shape_str(g.shape()));
  std::vector<double> ne(B), ng(B * C);
  const auto& E = e.value();
  const auto& G = g.value();
  for (std::size_t b = 0; b < B; ++b) {
    ne[b] = norm(E.row(b));
    if (ne[b] == 0.0)
      throw NumericError("rowwise_cosine: image embedding " + std::to_string(b) +
                         " has zero norm");
    for (std::size_t c = 0; c < C; ++c) {
      ng[b * C + c] = norm(std::span<const double>(G.data()).subspan((b * C + c) * D, D));
      if (ng[b * C + c] == 0.0)
        throw NumericError("rowwise_cosine: gathered row " + std::to_string(c) +
                           " of sample " + std::to_string(b) + " has zero norm");
    }
  }
  Tensor out({B, C});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      double dot = 0.0;
      for (std::size_t k = 0; k < D; ++k) dot += E[b * D + k] * G[(b * C + c) * D + k];
      out.at(b, c) = dot / (ne[b] * ng[b * C + c]);
    }
  return make_op("rowwise_cosine", std::move(out), {e, g},
                 [B, C, D, ne = std::move(ne), ng = std::move(ng)](Node& self) {
                   const Tensor& E = self.parents[0]->value;
                   const Tensor& G = self.parents[1]->value;
                   auto de = sink(self, 0);
                   auto dg = sink(self, 1);
                   for (std::size_t b = 0; b < B; ++b)
                     for (std::size_t c = 0; c < C; ++c) {
                       const double gr = self.grad.at(b, c);
                       const double s = self.value.at(b, c);
                       const double nrm = ng[b * C + c];
                       for (std::size_t k = 0; k < D; ++k) {
                         const double eh = E[b * D + k] / ne[b];
                         const double gh = G[(b * C + c) * D + k] / nrm;
                         if (!de.empty()) de[b * D + k] += gr * (gh - s * eh) / ne[b];
                         if (!dg.empty()) dg[(b * C + c) * D + k] += gr * (eh - s * gh) / nrm;
                       }
                     }
                 });
}

Var embedding_bag_mean(const Var& table, const std::vector<TokenSeq>& seqs) {
  require_rank(table, 2, "embedding_bag_mean");
  const std::size_t V = table.shape()[0], D = table.shape()[1];
  if (seqs.empty()) throw ShapeError("embedding_bag_mean: empty batch");
  Tensor out({seqs.size(), D});
  for (std::size_t n = 0; n < seqs.size(); ++n) {
    if (seqs[n].empty())
      throw ShapeError("embedding_bag_mean: sequence " + std::to_string(n) + " is empty");
    for (auto t : seqs[n]) {
      if (t < 0 || static_cast<std::size_t>(t) >= V)
        throw ShapeError("embedding_bag_mean: token " + std::to_string(t) +
                         " outside vocabulary of " + std::to_string(V));
      auto src = table.value().row(static_cast<std::size_t>(t));
      for (std::size_t k = 0; k < D; ++k) out.at(n, k) += src[k];
    }
    const double inv = 1.0 / static_cast<double>(seqs[n].size());
    for (std::size_t k = 0; k < D; ++k) out.at(n, k) *= inv;
  }
  return make_op("embedding_bag_mean", std::move(out), {table}, [seqs, D](Node& self) {
    auto dt = sink(self, 0);
    for (std::size_t n = 0; n < seqs.size(); ++n) {
      const double inv = 1.0 / static_cast<double>(seqs[n].size());
      for (auto t : seqs[n])
        for (std::size_t k = 0; k < D; ++k)
          dt[static_cast<std::size_t>(t) * D + k] += inv * self.grad.at(n, k);
    }
  });
}

Var class_gather(const Var& attn, const Var& values) {
  require_rank(attn, 3, "class_gather");
  require_rank(values, 3, "class_gather");
  const std::size_t B = attn.shape()[0], C = attn.shape()[1], M = attn.shape()[2];
  const std::size_t D = values.shape()[2];
  if (values.shape()[0] != C || values.shape()[1] != M)
    throw ShapeError("class_gather: attention " + shape_str(attn.shape()) + " vs values " +
                     shape_str(values.shape()));
  const auto& A = attn.value();
  const auto& V = values.value();
  Tensor out({B, C, D});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t m = 0; m < M; ++m) {
        const double w = A[(b * C + c) * M + m];
        for (std::size_t k = 0; k < D; ++k) out[(b * C + c) * D + k] += w * V[(c * M + m) * D + k];
      }
  return make_op("class_gather", std::move(out), {attn, values}, [B, C, M, D](Node& self) {
    const Tensor& A = self.parents[0]->value;
    const Tensor& V = self.parents[1]->value;
    const Tensor& dG = self.grad;
    auto da = sink(self, 0);
    auto dv = sink(self, 1);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t m = 0; m < M; ++m) {
          const std::size_t ai = (b * C + c) * M + m;
          double acc = 0.0;
          for (std::size_t k = 0; k < D; ++k) {
            const double g = dG[(b * C + c) * D + k];
            acc += g * V[(c * M + m) * D + k];
            if (!dv.empty()) dv[(c * M + m) * D + k] += g * A[ai];
          }
          if (!da.empty()) da[ai] += acc;
        }
  });
}

Var max_last_axis(const Var& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.value().size() / n;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  Tensor out(out_shape);
  std::vector<std::size_t> arg(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    auto xr = x.value().row(r);
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j)
      if (xr[j] > xr[best]) best = j;
    arg[r] = r * n + best;
    out[r] = xr[best];
  }
  return make_op("max_last_axis", std::move(out), {x}, [arg = std::move(arg)](Node& self) {
    auto dx = sink(self, 0);
    for (std::size_t r = 0; r < arg.size(); ++r) dx[arg[r]] += self.grad[r];
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return make_op("sum", Tensor::scalar(s), {x}, [](Node& self) {
    auto dx = sink(self, 0);
    const double g = self.grad[0];
    for (auto& v : dx) v += g;
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var weighted_sum(const Var& x, const Tensor& w) {
  if (w.shape() != x.shape())
    throw ShapeError("weighted_sum: weights " + shape_str(w.shape()) + " vs input " +
                     shape_str(x.shape()));
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * x.value()[i];
  return make_op("weighted_sum", Tensor::scalar(s), {x}, [w](Node& self) {
    auto dx = sink(self, 0);
    const double g = self.grad[0];
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g * w[i];
  });
}

Var cross_entropy(const Var& p, const std::vector<std::size_t>& labels) {
  require_rank(p, 2, "cross_entropy");
  const std::size_t B = p.shape()[0], C = p.shape()[1];
  if (labels.size() != B)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(B) + " rows");
  double s = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    if (labels[b] >= C)
      throw ValidationError("cross_entropy: label " + std::to_string(labels[b]) +
                            " out of range for " + std::to_string(C) + " classes");
    s -= std::log(std::max(p.value().at(b, labels[b]), kProbFloor));
  }
  s /= static_cast<double>(B);
  return make_op("cross_entropy", Tensor::scalar(s), {p}, [labels, B, C](Node& self) {
    auto dp = sink(self, 0);
    const Tensor& P = self.parents[0]->value;
    const double g = self.grad[0] / static_cast<double>(B);
    for (std::size_t b = 0; b < B; ++b) {
      const double v = P.at(b, labels[b]);
      if (v > kProbFloor) dp[b * C + labels[b]] -= g / v;
    }
  });
}

double cross_entropy(std::span<const double> p, std::size_t label) {
  if (label >= p.size())
    throw ValidationError("cross_entropy: label " + std::to_string(label) +
                          " out of range for " + std::to_string(p.size()) + " classes");
  return -std::log(std::max(p[label], kProbFloor));
}

}  // namespace vlltr
