#pragma once

#include "unimov/caption_record.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace unimov::scene {

// Point set with per-point colors and semantic/instance labels.
// All arrays share the leading dimension; label -1 means unlabeled / none.
struct PointCloud {
  Eigen::MatrixX3d positions;  // meters
  Eigen::MatrixX3i colors;     // [0,255]
  Eigen::VectorXi sem_labels;
  Eigen::VectorXi inst_labels;

  Eigen::Index size() const { return positions.rows(); }
  void validate() const;  // throws ParameterError on any broken invariant
};

struct Image {
  Eigen::Index h = 0, w = 0;
  std::vector<int> rgb;  // h*w*3, row-major, [0,255]

  int& at(Eigen::Index r, Eigen::Index c, int ch) {
    return rgb[static_cast<std::size_t>((r * w + c) * 3 + ch)];
  }
  int at(Eigen::Index r, Eigen::Index c, int ch) const {
    return rgb[static_cast<std::size_t>((r * w + c) * 3 + ch)];
  }
};

// One scene: the cloud plus its paired image, depth map and caption records.
struct SceneSample {
  PointCloud cloud;
  Image image;             // h x w x 3
  Eigen::MatrixXd depth;   // h x w, meters, 0 = missing
  std::vector<captions::CaptionRecord> captions;
  std::string scene_id;
  bool depth_missing = false;
  bool image_missing = false;

  void validate() const;
};

// Angular view partition: sectors of span theta starting every theta-phi
// degrees, measured counter-clockwise from +x in the horizontal plane.
struct SectorSpec {
  double theta_deg = 360.0;
  double phi_deg = 0.0;

  int sector_count() const;  // ceil(360 / (theta - phi))
  captions::ViewClass view_class() const;
  void validate() const;
};

struct SectorAssignment {
  SectorSpec spec;
  std::vector<std::vector<int>> membership;  // per sector, ascending point indices
};

// Assigns every point to the sectors covering its polar angle about the
// scene centroid. Sector j spans [j*(theta-phi), j*(theta-phi)+theta),
// taken modulo 360; at phi = 0 the final sector is clipped at 360 degrees
// so the tiling stays a partition.
SectorAssignment partition_sectors(const PointCloud& cloud, const SectorSpec& spec);

// Knobs for synthetic scene generation. Class blobs sit at distinct polar
// angles with class-correlated colors and heights; colors carry per-point
// noise so that pointwise features alone are unreliable.
struct SynthOptions {
  double blob_sigma = 0.22;
  double blob_radius = 2.0;
  double color_noise = 60.0;
  double height_step = 0.5;
  Eigen::Index image_size = 64;
};

// Deterministic per seed. Every class id in `class_ids` appears at least
// once; image and depth are rendered top-down from the generated cloud.
SceneSample make_synthetic_scene(std::uint64_t seed, Eigen::Index n_points,
                                 const std::vector<int>& class_ids,
                                 const SynthOptions& opts = {});

// Orthographic top-down projection onto a view_h x view_w grid over the
// cloud's horizontal bounding box (degenerate extents padded to unit size).
// Each cell holds the height of its topmost point, 0 where empty.
Eigen::MatrixXd render_depth(const PointCloud& cloud, Eigen::Index view_h, Eigen::Index view_w);

// Same projection, keeping the topmost point's color per cell.
Image render_image(const PointCloud& cloud, Eigen::Index view_h, Eigen::Index view_w);

// Scene file format (text, versioned):
//   UNIMOV-SCENE v1 N H W
//   N rows: x y z r g b sem inst
//   H rows of W depth values              (optional block)
//   H rows of W r,g,b triples             (optional block)
// scene_id is taken from the file name stem.
SceneSample load_scene(const std::string& path);
void save_scene(const SceneSample& sample, const std::string& path);

// Polar angle of (x,y) about the centroid, counter-clockwise from +x,
// in [0, 360).
double polar_angle_deg(double x, double y, double cx, double cy);

}  // namespace unimov::scene
