#pragma once

#include "unimov/autodiff.hpp"
#include "unimov/caption_record.hpp"
#include "unimov/scene.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace unimov::captions {

using ad::ParamStore;
using ad::Tape;
using ad::Var;

// Learnable positive temperature, exponentially parameterized so the
// constraint value > 0 can never be violated by an optimizer step.
class Temperature {
 public:
  Temperature(ParamStore& store, const std::string& name, double init = 0.07);

  double value() const;
  Var inverse(Tape& t) const;  // 1x1, exp(-log_value), differentiable
  ad::Parameter& parameter() { return *log_value_; }

 private:
  ad::Parameter* log_value_;
};

struct CaptionLossWeights {
  double alpha = 1.0;
  double beta = 0.8;
  double gamma = 0.8;

  void validate() const;  // non-negative, at least one positive
};

// Maps a point subset to a caption string. Throwing marks the region as
// uncaptionable; the record is then skipped, never fabricated.
using Captioner =
    std::function<std::string(const scene::PointCloud&, const std::vector<int>&)>;

// Template captioner driven by semantic labels: lists the distinct classes
// present, ordered by descending point count (ties by ascending id).
std::string stub_captioner(const scene::PointCloud& cloud, const std::vector<int>& indices,
                           const std::map<int, std::string>& label_names);

// One record per nonempty (spec, sector); a 360-degree spec yields exactly
// one global record covering every point.
std::vector<CaptionRecord> build_caption_pairs(const scene::SceneSample& sample,
                                               const std::vector<scene::SectorSpec>& specs,
                                               const Captioner& captioner);

// The three-level default: global 360, eye 120, sector 60, no overlap.
std::vector<scene::SectorSpec> default_view_specs();

// InfoNCE over row-aligned positive pairs: rows i of the two inputs belong
// together, all other rows are negatives. Rows are re-normalized (with a
// warning) if they are not unit length.
Var caption_infonce(Tape& t, Var point_feats, Var text_feats, const Temperature& tau);

double combined_caption_loss(double l_global, double l_eye, double l_sector,
                             const CaptionLossWeights& w);
Var combined_caption_loss(Tape& t, Var l_global, Var l_eye, Var l_sector,
                          const CaptionLossWeights& w);

// Mean of the record's point features, pushed through `project` (the shared
// point projection head) and unit-normalized.
Var region_feature(Tape& t, Var per_point_feats, const std::vector<int>& indices,
                   const std::function<Var(Tape&, Var)>& project);

// Caption manifest, one record per line:
//   scene_id view theta phi sector_index "text" idx,idx,...
void save_caption_manifest(const std::vector<CaptionRecord>& records, const std::string& path);
std::vector<CaptionRecord> load_caption_manifest(const std::string& path);

}  // namespace unimov::captions
