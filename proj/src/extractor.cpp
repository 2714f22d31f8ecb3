#include "unimov/extractor.hpp"

#include "unimov/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace unimov::extractor {

namespace {

bool lex_less(const Eigen::MatrixX3d& pos, int i, int j) {
  for (int c = 0; c < 3; ++c) {
    if (pos(i, c) < pos(j, c)) return true;
    if (pos(i, c) > pos(j, c)) return false;
  }
  return false;
}

}  // namespace

std::string fusion_mode_name(FusionMode m) {
  switch (m) {
    case FusionMode::LocalOnly: return "local_only";
    case FusionMode::GlobalOnly: return "global_only";
    case FusionMode::LocalGlobal: return "local_global";
    case FusionMode::LocalAttn: return "local_attn";
    case FusionMode::GlobalAttn: return "global_attn";
    case FusionMode::LocalGlobalAttn: return "local_global_attn";
  }
  throw ParameterError("unknown fusion mode");
}

FusionMode fusion_mode_from_name(const std::string& name) {
  if (name == "local_only") return FusionMode::LocalOnly;
  if (name == "global_only") return FusionMode::GlobalOnly;
  if (name == "local_global") return FusionMode::LocalGlobal;
  if (name == "local_attn") return FusionMode::LocalAttn;
  if (name == "global_attn") return FusionMode::GlobalAttn;
  if (name == "local_global_attn") return FusionMode::LocalGlobalAttn;
  throw ParameterError("unknown fusion mode: " + name);
}

bool ExtractorConfig::local_enabled() const {
  return fusion_mode != FusionMode::GlobalOnly && fusion_mode != FusionMode::GlobalAttn;
}

bool ExtractorConfig::global_enabled() const {
  return fusion_mode != FusionMode::LocalOnly && fusion_mode != FusionMode::LocalAttn;
}

bool ExtractorConfig::attn_enabled() const {
  return fusion_mode == FusionMode::LocalAttn || fusion_mode == FusionMode::GlobalAttn ||
         fusion_mode == FusionMode::LocalGlobalAttn;
}

void ExtractorConfig::validate() const {
  if (n_layers < 1) throw ParameterError("extractor needs at least one layer");
  if (embed_dim < 1 || n_patches < 1 || neighbors_per_patch < 1)
    throw ParameterError("extractor dimensions must be positive");
  if (!(mask_ratio >= 0.0) || mask_ratio >= 1.0)
    throw ParameterError("mask_ratio must lie in [0,1)");
}

std::vector<int> farthest_point_sample(const Eigen::MatrixX3d& pos, Eigen::Index count) {
  const Eigen::Index n = pos.rows();
  if (n < 1 || count < 1) throw ParameterError("farthest_point_sample needs points");

  const Eigen::RowVector3d centroid = pos.colwise().mean();
  int first = 0;
  double best = -1.0;
  for (int i = 0; i < n; ++i) {
    const double d = (pos.row(i) - centroid).squaredNorm();
    if (d > best || (d == best && lex_less(pos, i, first))) {
      best = d;
      first = i;
    }
  }

  std::vector<int> picked;
  picked.reserve(static_cast<std::size_t>(std::min(count, n)));
  std::vector<double> min_dist(static_cast<std::size_t>(n),
                               std::numeric_limits<double>::infinity());
  int current = first;
  for (Eigen::Index it = 0; it < std::min(count, n); ++it) {
    picked.push_back(current);
    int next = -1;
    double next_d = -1.0;
    for (int i = 0; i < n; ++i) {
      auto& md = min_dist[static_cast<std::size_t>(i)];
      md = std::min(md, (pos.row(i) - pos.row(current)).squaredNorm());
      if (md > next_d || (md == next_d && next >= 0 && lex_less(pos, i, next))) {
        next_d = md;
        next = i;
      }
    }
    current = next;
  }
  // Cycle when more samples than points were requested.
  for (Eigen::Index it = n; it < count; ++it)
    picked.push_back(picked[static_cast<std::size_t>(it % n)]);
  return picked;
}

PatchGrouping group_patches(const Eigen::MatrixX3d& pos, Eigen::Index g, Eigen::Index k) {
  const Eigen::Index n = pos.rows();
  if (g > n) throw ParameterError("more patches than points");
  PatchGrouping out;
  out.centers = farthest_point_sample(pos, g);
  out.center_positions.resize(g, 3);
  for (Eigen::Index p = 0; p < g; ++p)
    out.center_positions.row(p) = pos.row(out.centers[static_cast<std::size_t>(p)]);

  std::vector<int> order(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  out.members.resize(static_cast<std::size_t>(g));
  for (Eigen::Index p = 0; p < g; ++p) {
    const Eigen::RowVector3d c = pos.row(out.centers[static_cast<std::size_t>(p)]);
    std::vector<int> idx = order;
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
      const double da = (pos.row(a) - c).squaredNorm();
      const double db = (pos.row(b) - c).squaredNorm();
      if (da != db) return da < db;
      return lex_less(pos, a, b);
    });
    idx.resize(static_cast<std::size_t>(std::min(k, n)));
    // Small clouds reuse their nearest neighbors cyclically; duplicated
    // rows cannot change the per-patch max pooling.
    const std::size_t base = idx.size();
    while (static_cast<Eigen::Index>(idx.size()) < k) idx.push_back(idx[idx.size() % base]);
    out.members[static_cast<std::size_t>(p)] = std::move(idx);
  }

  out.nearest_patch.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    int bestp = 0;
    double bestd = std::numeric_limits<double>::infinity();
    for (Eigen::Index p = 0; p < g; ++p) {
      const double d = (pos.row(i) - pos.row(out.centers[static_cast<std::size_t>(p)])).squaredNorm();
      if (d < bestd) {
        bestd = d;
        bestp = static_cast<int>(p);
      }
    }
    out.nearest_patch[static_cast<std::size_t>(i)] = bestp;
  }
  return out;
}

// ---------------------------------------------------------------------------

struct HierExtractor::LayerParams {
  std::unique_ptr<nn::Mlp> local_point_mlp;   // layer 0 only
  std::unique_ptr<nn::Linear> local_embed;    // layers >= 1
  std::unique_ptr<nn::TokenBlock> local_block;

  std::unique_ptr<nn::Mlp> global_point_mlp;
  std::unique_ptr<nn::Linear> global_embed;
  std::unique_ptr<nn::Linear> global_pos;
  ad::Parameter* mask_token = nullptr;
  std::unique_ptr<nn::TokenBlock> global_enc;
  std::unique_ptr<nn::TokenBlock> global_dec;

  ad::Parameter* local_gate = nullptr;   // layers >= 1
  ad::Parameter* global_gate = nullptr;
};

struct HierExtractor::BlockParams {
  std::unique_ptr<nn::Linear> ru_a1, ru_a2, ru_b1, ru_b2, ru_c1, ru_c2, conv1, conv2;
};

namespace {

Var residual_unit(Tape& t, const nn::Linear& l1, const nn::Linear& l2, Var x) {
  return t.add(x, l2.apply(t, t.tanh(l1.apply(t, t.tanh(x)))));
}

}  // namespace

HierExtractor::HierExtractor(ParamStore& store, const ExtractorConfig& cfg, std::uint64_t init_seed)
    : cfg_(cfg), store_(&store) {
  cfg_.validate();
  const Eigen::Index m = cfg_.embed_dim;
  const Eigen::Index d_in = cfg_.use_colors ? 6 : 3;
  const Eigen::Index layer_width =
      (cfg_.local_enabled() ? m : 0) + (cfg_.global_enabled() ? m : 0);

  // Every component draws its weights from a seed keyed by its own name,
  // so shared components are bit-identical across fusion modes.
  auto comp_rng = [&](const std::string& name) { return Rng(mix_seed(init_seed, name)); };

  constexpr Eigen::Index kAlignWidth = 32;
  {
    Rng r = comp_rng("ext.align");
    align_embed_ = std::make_unique<nn::Linear>(store, "ext.align.embed", 3, kAlignWidth, r);
    align_block_ = std::make_unique<nn::TokenBlock>(store, "ext.align.block", kAlignWidth, r);
    align_out_ = std::make_unique<nn::Mlp>(store, "ext.align.out", kAlignWidth, kAlignWidth, 12, r,
                                           /*zero_init_last=*/true);
  }

  for (int i = 0; i < cfg_.n_layers; ++i) {
    auto lp = std::make_unique<LayerParams>();
    const std::string prefix = "ext.l" + std::to_string(i);
    const Eigen::Index in_width = i == 0 ? d_in : layer_width;
    if (cfg_.local_enabled()) {
      Rng r = comp_rng(prefix + ".local");
      if (i == 0) {
        lp->local_point_mlp =
            std::make_unique<nn::Mlp>(store, prefix + ".local.pmlp", d_in, m, m, r);
      } else {
        lp->local_embed =
            std::make_unique<nn::Linear>(store, prefix + ".local.embed", in_width, m, r);
      }
      lp->local_block = std::make_unique<nn::TokenBlock>(store, prefix + ".local.block", m, r);
    }
    if (cfg_.global_enabled()) {
      Rng r = comp_rng(prefix + ".global");
      if (i == 0) {
        lp->global_point_mlp =
            std::make_unique<nn::Mlp>(store, prefix + ".global.pmlp", d_in, m, m, r);
      } else {
        lp->global_embed =
            std::make_unique<nn::Linear>(store, prefix + ".global.embed", in_width, m, r);
      }
      lp->global_pos = std::make_unique<nn::Linear>(store, prefix + ".global.pos", 3, m, r);
      lp->mask_token = &store.create(prefix + ".global.mask_token", nn::glorot(r, 1, m));
      lp->global_enc = std::make_unique<nn::TokenBlock>(store, prefix + ".global.enc", m, r);
      lp->global_dec = std::make_unique<nn::TokenBlock>(store, prefix + ".global.dec", m, r);
    }
    if (i > 0) {
      // Gates start closed: the untrained network equals the link-free stack.
      if (cfg_.local_enabled())
        lp->local_gate = &store.create(prefix + ".local_gate", ad::Mat::Zero(1, m));
      if (cfg_.global_enabled())
        lp->global_gate = &store.create(prefix + ".global_gate", ad::Mat::Zero(1, m));
    }
    layers_.push_back(std::move(lp));
  }

  if (cfg_.attn_enabled()) {
    for (int i = 0; i + 1 < cfg_.n_layers; ++i) {
      auto bp = std::make_unique<BlockParams>();
      const std::string prefix = "ext.attn" + std::to_string(i);
      Rng r = comp_rng(prefix);
      const Eigen::Index c = layer_width;
      bp->ru_a1 = std::make_unique<nn::Linear>(store, prefix + ".ru_a1", c, c, r);
      bp->ru_a2 = std::make_unique<nn::Linear>(store, prefix + ".ru_a2", c, c, r);
      bp->ru_b1 = std::make_unique<nn::Linear>(store, prefix + ".ru_b1", c, c, r);
      bp->ru_b2 = std::make_unique<nn::Linear>(store, prefix + ".ru_b2", c, c, r);
      bp->ru_c1 = std::make_unique<nn::Linear>(store, prefix + ".ru_c1", c, c, r);
      bp->ru_c2 = std::make_unique<nn::Linear>(store, prefix + ".ru_c2", c, c, r);
      bp->conv1 = std::make_unique<nn::Linear>(store, prefix + ".conv1", c, c, r);
      bp->conv2 = std::make_unique<nn::Linear>(store, prefix + ".conv2", c, c, r);
      blocks_.push_back(std::move(bp));
    }
  }

  {
    Rng r = comp_rng("ext.head");
    head_ = std::make_unique<nn::Linear>(store, "ext.head",
                                         layer_width * static_cast<Eigen::Index>(cfg_.n_layers),
                                         m, r);
  }
}

Var HierExtractor::align_points(Tape& t, Var positions, AlignmentTransform* out) const {
  if (positions.rows() < 4) throw ParameterError("alignment needs at least 4 points");
  if (!positions.value().allFinite()) throw NumericError("alignment input must be finite");

  // Regress the affine update from a small FPS-sampled anchor set.
  const Eigen::MatrixX3d pos = positions.value();
  const Eigen::Index n_anchor = std::min<Eigen::Index>(pos.rows(), 64);
  std::vector<int> anchors = farthest_point_sample(pos, n_anchor);

  Var anchor_pts = t.gather_rows(positions, anchors);
  Var tokens = align_block_->apply(t, align_embed_->apply(t, anchor_pts));
  Var pooled = t.matmul(
      t.constant(ad::Mat::Constant(1, n_anchor, 1.0 / static_cast<double>(n_anchor))), tokens);
  Var delta_flat = align_out_->apply(t, pooled);  // 1 x 12, zero at init

  Var delta = t.concat_rows(t.slice_cols(delta_flat, 0, 4),
                            t.concat_rows(t.slice_cols(delta_flat, 4, 4),
                                          t.slice_cols(delta_flat, 8, 4)));
  Var transform = t.add(t.constant(ad::Mat::Identity(4, 4)),
                        t.concat_rows(delta, t.constant(ad::Mat::Zero(1, 4))));
  if (out) out->matrix = transform.value();

  Var hom = t.concat_cols(positions, t.constant(ad::Mat::Ones(positions.rows(), 1)));
  return t.slice_cols(t.matmul(hom, t.transpose(transform)), 0, 3);
}

Var HierExtractor::encode_patch_tokens(Tape& t, const nn::Mlp& point_mlp, Var feats,
                                       const PatchGrouping& grouping) const {
  const auto g = static_cast<Eigen::Index>(grouping.members.size());
  const auto k = static_cast<Eigen::Index>(grouping.members.front().size());

  std::vector<int> flat, flat_centers;
  flat.reserve(static_cast<std::size_t>(g * k));
  flat_centers.reserve(static_cast<std::size_t>(g * k));
  for (Eigen::Index p = 0; p < g; ++p)
    for (int m : grouping.members[static_cast<std::size_t>(p)]) {
      flat.push_back(m);
      flat_centers.push_back(grouping.centers[static_cast<std::size_t>(p)]);
    }

  Var gathered = t.gather_rows(feats, flat);
  Var centers = t.gather_rows(feats, flat_centers);
  // Positions become center-relative offsets; the remaining channels pass
  // through unchanged.
  Var offsets = t.sub(t.slice_cols(gathered, 0, 3), t.slice_cols(centers, 0, 3));
  Var patch_in = feats.cols() > 3
                     ? t.concat_cols(offsets, t.slice_cols(gathered, 3, feats.cols() - 3))
                     : offsets;

  Var encoded = point_mlp.apply(t, patch_in);  // (g*k) x M

  Var tokens;
  for (Eigen::Index p = 0; p < g; ++p) {
    std::vector<int> rows(static_cast<std::size_t>(k));
    for (Eigen::Index j = 0; j < k; ++j) rows[static_cast<std::size_t>(j)] = static_cast<int>(p * k + j);
    Var token = t.col_max(t.gather_rows(encoded, rows));
    tokens = p == 0 ? token : t.concat_rows(tokens, token);
  }
  return tokens;
}

Var HierExtractor::branch_forward(Tape& t, Branch which, int layer, Var input,
                                  const PatchGrouping* grouping, Var prev, bool training,
                                  Rng* mask_rng) const {
  if (layer < 0 || layer >= cfg_.n_layers) throw ParameterError("layer index out of range");
  const auto& lp = *layers_[static_cast<std::size_t>(layer)];

  Var hidden;
  if (which == Branch::Local) {
    if (!cfg_.local_enabled()) throw ParameterError("local branch disabled by fusion mode");
    Var tokens = layer == 0 ? encode_patch_tokens(t, *lp.local_point_mlp, input, *grouping)
                            : lp.local_embed->apply(t, input);
    hidden = lp.local_block->apply(t, tokens);
  } else {
    if (!cfg_.global_enabled()) throw ParameterError("global branch disabled by fusion mode");
    Var tokens = layer == 0 ? encode_patch_tokens(t, *lp.global_point_mlp, input, *grouping)
                            : lp.global_embed->apply(t, input);
    const Eigen::Index n_tokens = tokens.rows();

    // Masked reconstruction: a fraction of tokens is replaced by the mask
    // token; the decoder rebuilds features for the full token set.
    Eigen::Index n_mask = 0;
    if (training && cfg_.mask_ratio > 0.0) {
      if (!mask_rng) throw ParameterError("training forward needs a mask rng");
      n_mask = static_cast<Eigen::Index>(cfg_.mask_ratio * static_cast<double>(n_tokens));
    }
    if (n_mask > 0) {
      std::vector<int> ids(static_cast<std::size_t>(n_tokens));
      for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
      mask_rng->shuffle(ids);
      ad::Mat keep = ad::Mat::Ones(n_tokens, 1), drop = ad::Mat::Zero(n_tokens, 1);
      for (Eigen::Index i = 0; i < n_mask; ++i) {
        keep(ids[static_cast<std::size_t>(i)], 0) = 0.0;
        drop(ids[static_cast<std::size_t>(i)], 0) = 1.0;
      }
      Var mask_rows = t.matmul(t.constant(ad::Mat::Ones(n_tokens, 1)), t.param(*lp.mask_token));
      tokens = t.add(t.scale_rows(tokens, t.constant(keep)),
                     t.scale_rows(mask_rows, t.constant(drop)));
    }

    // Patch-center positional embedding anchors masked tokens in space.
    if (grouping && grouping->center_positions.rows() == n_tokens)
      tokens = t.add(tokens, lp.global_pos->apply(t, t.constant(grouping->center_positions)));

    hidden = lp.global_dec->apply(t, lp.global_enc->apply(t, tokens));
  }

  if (!prev.valid()) return hidden;
  ad::Parameter* gate = which == Branch::Local ? lp.local_gate : lp.global_gate;
  if (!gate) throw ParameterError("no residual gate on the first layer");
  return t.add(hidden, t.mul_rowvec(prev, t.param(*gate)));
}

Var HierExtractor::attention_block(Tape& t, int block_idx, Var features) const {
  if (!cfg_.attn_enabled()) throw ParameterError("attention linking disabled by fusion mode");
  if (block_idx < 0 || block_idx >= static_cast<int>(blocks_.size()))
    throw ParameterError("attention block index out of range");
  const auto& bp = *blocks_[static_cast<std::size_t>(block_idx)];
  const Eigen::Index rows = features.rows();

  Var r0 = residual_unit(t, *bp.ru_a1, *bp.ru_a2, features);
  // Tokens shorter than the pooling window keep their resolution.
  Var down = rows >= 2 ? t.row_maxpool2(r0) : r0;
  down = residual_unit(t, *bp.ru_b1, *bp.ru_b2, down);
  Var up = t.add(t.resample_rows_linear(down, rows), r0);
  Var y = residual_unit(t, *bp.ru_c1, *bp.ru_c2, up);
  y = t.resample_rows_linear(y, rows);
  y = bp.conv2->apply(t, bp.conv1->apply(t, y));
  return t.sigmoid(y);
}

Var HierExtractor::point_features(Tape& t, const scene::PointCloud& cloud, Var aligned) const {
  if (!cfg_.use_colors) return aligned;
  ad::Mat colors = cloud.colors.cast<double>() / 255.0;
  colors.array() -= 0.5;
  return t.concat_cols(aligned, t.constant(colors));
}

ExtractorOutput HierExtractor::extract(Tape& t, const scene::PointCloud& cloud, bool training,
                                       Rng* mask_rng) const {
  cloud.validate();
  const Eigen::Index n = cloud.size();
  if (n < 4) throw ParameterError("extract needs at least 4 points");
  const Eigen::Index m = cfg_.embed_dim;

  PatchGrouping grouping =
      group_patches(cloud.positions, std::min<Eigen::Index>(cfg_.n_patches, n),
                    cfg_.neighbors_per_patch);

  ExtractorOutput out;
  Var aligned = align_points(t, t.constant(cloud.positions), &out.transform);
  Var feats = point_features(t, cloud, aligned);

  const bool both = cfg_.local_enabled() && cfg_.global_enabled();
  Var prev_local, prev_global;
  Var all_layers;
  Var layer_in = feats;
  for (int i = 0; i < cfg_.n_layers; ++i) {
    const PatchGrouping* gp = &grouping;
    Var f_local, f_global;
    if (cfg_.local_enabled())
      f_local = branch_forward(t, Branch::Local, i, layer_in, gp, prev_local, training, mask_rng);
    if (cfg_.global_enabled())
      f_global = branch_forward(t, Branch::Global, i, layer_in, gp, prev_global, training, mask_rng);

    Var combined = both ? t.concat_cols(f_local, f_global)
                        : (cfg_.local_enabled() ? f_local : f_global);
    all_layers = i == 0 ? combined : t.concat_cols(all_layers, combined);

    if (cfg_.attn_enabled() && i + 1 < cfg_.n_layers) {
      Var map = attention_block(t, i, combined);
      if (both) {
        prev_local = t.slice_cols(map, 0, m);
        prev_global = t.slice_cols(map, m, m);
      } else if (cfg_.local_enabled()) {
        prev_local = map;
      } else {
        prev_global = map;
      }
    }
    layer_in = combined;
  }

  Var patch_feats = head_->apply(t, all_layers);  // g x M
  out.per_point = t.gather_rows(patch_feats, grouping.nearest_patch);
  out.pooled = t.col_max(out.per_point);
  return out;
}

}  // namespace unimov::extractor
