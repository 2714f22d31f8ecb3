#pragma once

#include "unimov/autodiff.hpp"
#include "unimov/nn.hpp"
#include "unimov/rng.hpp"
#include "unimov/scene.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace unimov::extractor {

using ad::Mat;
using ad::ParamStore;
using ad::Tape;
using ad::Var;

// Which branches run and whether the inter-layer attention linking is on.
enum class FusionMode {
  LocalOnly,
  GlobalOnly,
  LocalGlobal,
  LocalAttn,
  GlobalAttn,
  LocalGlobalAttn,
};

std::string fusion_mode_name(FusionMode m);
FusionMode fusion_mode_from_name(const std::string& name);

struct ExtractorConfig {
  int n_layers = 3;
  Eigen::Index embed_dim = 64;          // token feature width M
  Eigen::Index n_patches = 16;          // g
  Eigen::Index neighbors_per_patch = 8;
  double mask_ratio = 0.6;              // global branch, training only
  FusionMode fusion_mode = FusionMode::LocalGlobalAttn;
  bool use_colors = true;

  bool local_enabled() const;
  bool global_enabled() const;
  bool attn_enabled() const;
  void validate() const;
};

struct AlignmentTransform {
  Eigen::Matrix4d matrix = Eigen::Matrix4d::Identity();
};

// Patch layout shared by both branches. Built once per cloud from raw
// input coordinates, so parameter perturbations never flip the discrete
// grouping choices.
struct PatchGrouping {
  std::vector<int> centers;                 // g point indices, FPS order
  Eigen::MatrixX3d center_positions;        // g x 3, raw coordinates
  std::vector<std::vector<int>> members;    // per patch, neighbor indices
  std::vector<int> nearest_patch;           // per point
};

// Farthest-point sampling. The start point and all ties are resolved from
// the point set alone (never from array order), which keeps downstream
// features permutation-invariant. If count > N the sequence cycles.
std::vector<int> farthest_point_sample(const Eigen::MatrixX3d& pos, Eigen::Index count);

PatchGrouping group_patches(const Eigen::MatrixX3d& pos, Eigen::Index g, Eigen::Index k);

struct ExtractorOutput {
  Var per_point;   // N x M
  Var pooled;      // 1 x M, max over points
  AlignmentTransform transform;
};

enum class Branch { Local, Global };

// Stacked spatial-aware layers over patch tokens: a patch-token local
// branch and a masked encoder-decoder global branch per layer, linked
// across layers by gated residual attention maps, concatenated and
// projected to per-point features.
class HierExtractor {
 public:
  HierExtractor(ParamStore& store, const ExtractorConfig& cfg, std::uint64_t init_seed);

  const ExtractorConfig& config() const { return cfg_; }

  // Runs the regressor and applies the predicted affine transform.
  // The final layer is zero-initialized, so an untrained regressor
  // returns the identity.
  Var align_points(Tape& t, Var positions, AlignmentTransform* out = nullptr) const;

  // One branch of one layer: residual-linked output f = H + gate (x) prev.
  // Layer 0 ingests per-point features through the patch grouping; deeper
  // layers ingest the previous layer's token features directly.
  Var branch_forward(Tape& t, Branch which, int layer, Var input, const PatchGrouping* grouping,
                     Var prev, bool training, Rng* mask_rng) const;

  // Bottom-up/top-down token attention over features (any channel width
  // matching the block); output strictly in (0,1), same shape as input.
  Var attention_block(Tape& t, int block_idx, Var features) const;

  ExtractorOutput extract(Tape& t, const scene::PointCloud& cloud, bool training = false,
                          Rng* mask_rng = nullptr) const;

 private:
  struct LayerParams;
  struct BlockParams;

  Var point_features(Tape& t, const scene::PointCloud& cloud, Var aligned) const;
  Var encode_patch_tokens(Tape& t, const nn::Mlp& point_mlp, Var feats,
                          const PatchGrouping& grouping) const;

  ExtractorConfig cfg_;
  ParamStore* store_;
  std::unique_ptr<nn::Linear> align_embed_;
  std::unique_ptr<nn::TokenBlock> align_block_;
  std::unique_ptr<nn::Mlp> align_out_;
  std::vector<std::unique_ptr<LayerParams>> layers_;
  std::vector<std::unique_ptr<BlockParams>> blocks_;
  std::unique_ptr<nn::Linear> head_;
};

}  // namespace unimov::extractor
