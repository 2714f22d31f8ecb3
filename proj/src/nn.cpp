#include "unimov/nn.hpp"

#include <cmath>

namespace unimov::nn {

Mat glorot(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  const double s = std::sqrt(2.0 / static_cast<double>(rows + cols));
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = s * rng.normal();
  return m;
}

Linear::Linear(ParamStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index out,
               Rng& rng, bool zero_init) {
  w_ = &store.create(prefix + ".w", zero_init ? Mat::Zero(in, out) : glorot(rng, in, out));
  b_ = &store.create(prefix + ".b", Mat::Zero(1, out));
}

Var Linear::apply(Tape& t, Var x) const {
  return t.add_rowvec(t.matmul(x, t.param(*w_)), t.param(*b_));
}

SelfAttention::SelfAttention(ParamStore& store, const std::string& prefix, Eigen::Index dim,
                             Rng& rng)
    : dim_(dim) {
  wq_ = &store.create(prefix + ".wq", glorot(rng, dim, dim));
  wk_ = &store.create(prefix + ".wk", glorot(rng, dim, dim));
  wv_ = &store.create(prefix + ".wv", glorot(rng, dim, dim));
  wo_ = &store.create(prefix + ".wo", glorot(rng, dim, dim));
}

Var SelfAttention::apply(Tape& t, Var tokens) const {
  Var q = t.matmul(tokens, t.param(*wq_));
  Var k = t.matmul(tokens, t.param(*wk_));
  Var v = t.matmul(tokens, t.param(*wv_));
  Var scores = t.scale(t.matmul(q, t.transpose(k)), 1.0 / std::sqrt(static_cast<double>(dim_)));
  Var attn = t.row_softmax(scores);
  return t.matmul(t.matmul(attn, v), t.param(*wo_));
}

Mlp::Mlp(ParamStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index hidden,
         Eigen::Index out, Rng& rng, bool zero_init_last)
    : l1_(store, prefix + ".l1", in, hidden, rng),
      l2_(store, prefix + ".l2", hidden, out, rng, zero_init_last) {}

Var Mlp::apply(Tape& t, Var x) const { return l2_.apply(t, t.tanh(l1_.apply(t, x))); }

TokenBlock::TokenBlock(ParamStore& store, const std::string& prefix, Eigen::Index dim, Rng& rng)
    : attn_(store, prefix + ".attn", dim, rng),
      mlp_(store, prefix + ".mlp", dim, 2 * dim, dim, rng) {}

Var TokenBlock::apply(Tape& t, Var tokens) const {
  Var h = t.add(tokens, attn_.apply(t, tokens));
  return t.add(h, mlp_.apply(t, h));
}

}  // namespace unimov::nn
