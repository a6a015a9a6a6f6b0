#pragma once

#include <cstdint>
#include <vector>

#include "vlltr/autograd.hpp"

namespace vlltr {

using TokenSeq = std::vector<std::int32_t>;

// Every op below has an exact analytic backward; see tests/unit/test_ops.cpp
// for the finite-difference checks.

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var add_bias(const Var& x, const Var& bias);  // bias broadcast over leading axes
Var scale(const Var& x, double c);
Var div_scalar(const Var& x, const Var& s);    // s holds one element
Var relu(const Var& x);
Var tanh(const Var& x);
Var reshape(const Var& x, Shape shape);

// Numerically stable (max-subtracted) softmax along `axis`.
Var softmax(const Var& x, std::size_t axis);
Var log_softmax(const Var& x, std::size_t axis);

// Normalizes over the last axis, then applies gain/bias elementwise.
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

// a: n x d, b: m x d  ->  n x m cosine similarities.
Var cosine_sim_matrix(const Var& a, const Var& b);

// e: B x D, g: B x C x D  ->  B x C with entry cos(e_b, g_bc).
Var rowwise_cosine(const Var& e, const Var& g);

// Mean of embedding rows per sequence: table V x D -> N x D.
Var embedding_bag_mean(const Var& table, const std::vector<TokenSeq>& seqs);

// attn: B x C x M, values: C x M x D -> B x C x D, G_bc = sum_m attn_bcm v_cm.
Var class_gather(const Var& attn, const Var& values);

// Max over the last axis; gradient routes to the first maximal entry.
Var max_last_axis(const Var& x);

Var sum(const Var& x);
Var mean(const Var& x);
// sum_i w_i x_i with constant weights of the same shape.
Var weighted_sum(const Var& x, const Tensor& w);

// Probability floor used by cross_entropy.
inline constexpr double kProbFloor = 1e-12;

// p: B x C probability rows -> mean_b of -log(max(p[b, y_b], 1e-12)).
Var cross_entropy(const Var& p, const std::vector<std::size_t>& labels);
// Single probability row.
double cross_entropy(std::span<const double> p, std::size_t label);

}  // namespace vlltr
