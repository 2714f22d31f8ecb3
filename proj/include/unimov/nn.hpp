#pragma once

#include "unimov/autodiff.hpp"
#include "unimov/rng.hpp"

#include <string>

namespace unimov::nn {

using ad::Mat;
using ad::ParamStore;
using ad::Parameter;
using ad::Tape;
using ad::Var;

Mat glorot(Rng& rng, Eigen::Index rows, Eigen::Index cols);

// y = x W + b, with x rows as samples.
class Linear {
 public:
  Linear(ParamStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index out,
         Rng& rng, bool zero_init = false);

  Var apply(Tape& t, Var x) const;

 private:
  Parameter* w_;
  Parameter* b_;
};

// Single-head scaled dot-product self-attention over token rows,
// followed by an output projection. No residual, no normalization;
// callers compose those.
class SelfAttention {
 public:
  SelfAttention(ParamStore& store, const std::string& prefix, Eigen::Index dim, Rng& rng);

  Var apply(Tape& t, Var tokens) const;

 private:
  Parameter* wq_;
  Parameter* wk_;
  Parameter* wv_;
  Parameter* wo_;
  Eigen::Index dim_;
};

// Two-layer tanh MLP.
class Mlp {
 public:
  Mlp(ParamStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index hidden,
      Eigen::Index out, Rng& rng, bool zero_init_last = false);

  Var apply(Tape& t, Var x) const;

 private:
  Linear l1_;
  Linear l2_;
};

// Transformer-style token mixer: x + Attn(x), then + Mlp(.).
class TokenBlock {
 public:
  TokenBlock(ParamStore& store, const std::string& prefix, Eigen::Index dim, Rng& rng);

  Var apply(Tape& t, Var tokens) const;

 private:
  SelfAttention attn_;
  Mlp mlp_;
};

}  // namespace unimov::nn
