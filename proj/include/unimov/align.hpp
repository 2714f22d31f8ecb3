#pragma once

#include "unimov/autodiff.hpp"
#include "unimov/captions.hpp"
#include "unimov/nn.hpp"
#include "unimov/scene.hpp"

#include <functional>
#include <memory>
#include <string>

namespace unimov::align {

using ad::ParamStore;
using ad::Tape;
using ad::Var;
using captions::Temperature;

// Frozen deterministic encoders for the text and image towers. A provider
// never contributes gradients; identical input always yields identical
// output.
struct EncoderProvider {
  std::string provider_id;
  Eigen::Index dim = 0;
  std::function<Eigen::RowVectorXd(const std::string&)> text_encode;
  std::function<Eigen::RowVectorXd(const scene::Image&)> image_encode;
};

// Hash-based stand-in towers: each token maps to a seeded pseudo-random
// unit vector and token vectors sum before normalization, so strings
// sharing class names receive correlated embeddings.
Eigen::RowVectorXd stub_text_encoder(const std::string& text, Eigen::Index d, std::uint64_t seed);
Eigen::RowVectorXd stub_image_encoder(const scene::Image& image, Eigen::Index d,
                                      std::uint64_t seed);

// Registry keyed by provider_id; "stub-v1" is the only built-in.
EncoderProvider make_provider(const std::string& provider_id, Eigen::Index d, std::uint64_t seed);

struct DepthEncoderConfig {
  Eigen::Index patch_size = 32;
  double gate_init = 0.0;
  bool trainable = true;

  void validate() const;
};

struct DepthEmbedding {
  Var embedding;         // 1 x d, unit norm
  bool all_zero = false; // input had no depth signal
};

// Patch-token depth tower: the map is normalized by its maximum, split
// into patch_size^2 patches (padded as needed), linearly embedded, mixed
// by self-attention, and pooled. A learnable scalar gate (zero at init)
// scales an auxiliary aggregation branch, so the initial output equals
// the gate-free path exactly.
class DepthEncoder {
 public:
  DepthEncoder(ParamStore& store, const DepthEncoderConfig& cfg, Eigen::Index d_model,
               Eigen::Index out_dim, std::uint64_t init_seed);

  DepthEmbedding encode(Tape& t, const Eigen::MatrixXd& depth) const;
  const DepthEncoderConfig& config() const { return cfg_; }

 private:
  DepthEmbedding encode_impl(Tape& t, const Eigen::MatrixXd& depth) const;

  DepthEncoderConfig cfg_;
  Eigen::Index d_model_, out_dim_;
  ad::Parameter* patch_w_;
  ad::Parameter* patch_b_;
  ad::Parameter* pos_w_;
  std::unique_ptr<nn::TokenBlock> mixer_;
  ad::Parameter* main_w_;
  ad::Parameter* main_b_;
  ad::Parameter* aux_w_;
  ad::Parameter* gate_;
};

// Two-layer nonlinear projection into the shared embedding space with
// row normalization; zero rows normalize to a fixed documented constant
// (the first basis vector).
class ProjectionHead {
 public:
  ProjectionHead(ParamStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index out,
                 std::uint64_t init_seed);

  Var apply(Tape& t, Var feats) const;  // B x in -> B x out, unit rows

 private:
  std::unique_ptr<nn::Mlp> mlp_;
};

// Symmetric InfoNCE over row-aligned batches: softmax over candidates of
// the second modality plus softmax over candidates of the first, averaged.
// Exactly symmetric under swapping the two inputs.
Var symmetric_contrastive(Tape& t, Var a, Var b, const Temperature& eps);

double overall_loss(double l_pi, double l_pd, double l_di, double l_capt_total);
Var overall_loss(Tape& t, Var l_pi, Var l_pd, Var l_di, Var l_capt_total);

}  // namespace unimov::align
