#include "unimov/scene.hpp"

#include "unimov/errors.hpp"
#include "unimov/rng.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace unimov::scene {

namespace {

constexpr double kPi = 3.14159265358979323846;

bool finite_matrix(const Eigen::MatrixXd& m) { return m.allFinite(); }

// Fixed per-class palette: golden-angle hue walk through HSV space.
std::array<int, 3> class_palette(int class_id) {
  const double h = std::fmod(static_cast<double>(class_id) * 137.50776405, 360.0);
  const double s = 0.75, v = 0.9;
  const double c = v * s;
  const double x = c * (1.0 - std::fabs(std::fmod(h / 60.0, 2.0) - 1.0));
  const double m = v - c;
  double r = 0, g = 0, b = 0;
  if (h < 60) {
    r = c; g = x;
  } else if (h < 120) {
    r = x; g = c;
  } else if (h < 180) {
    g = c; b = x;
  } else if (h < 240) {
    g = x; b = c;
  } else if (h < 300) {
    r = x; b = c;
  } else {
    r = c; b = x;
  }
  auto to255 = [m](double u) { return static_cast<int>(std::lround((u + m) * 255.0)); };
  return {to255(r), to255(g), to255(b)};
}

int clamp255(double v) {
  return static_cast<int>(std::clamp(std::lround(v), static_cast<long>(0), static_cast<long>(255)));
}

struct GridFrame {
  double x0, y0, dx, dy;
};

GridFrame grid_frame(const PointCloud& cloud, Eigen::Index view_h, Eigen::Index view_w) {
  if (!finite_matrix(cloud.positions)) throw GeometryError("render grid: non-finite positions");
  double xmin = cloud.positions.col(0).minCoeff();
  double xmax = cloud.positions.col(0).maxCoeff();
  double ymin = cloud.positions.col(1).minCoeff();
  double ymax = cloud.positions.col(1).maxCoeff();
  // Degenerate extents are padded to unit size so single points and
  // axis-aligned lines still land on the grid.
  if (xmax - xmin < 1e-9) {
    xmin -= 0.5;
    xmax += 0.5;
  }
  if (ymax - ymin < 1e-9) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  return {xmin, ymin, (xmax - xmin) / static_cast<double>(view_w),
          (ymax - ymin) / static_cast<double>(view_h)};
}

}  // namespace

void PointCloud::validate() const {
  const Eigen::Index n = positions.rows();
  if (n < 1) throw ParameterError("point cloud must contain at least one point");
  if (colors.rows() != n || sem_labels.size() != n || inst_labels.size() != n)
    throw ParameterError("point cloud arrays must share the leading dimension");
  if (!finite_matrix(positions)) throw ParameterError("point cloud positions must be finite");
  if ((colors.array() < 0).any() || (colors.array() > 255).any())
    throw ParameterError("point cloud colors must lie in [0,255]");
  if ((sem_labels.array() < -1).any() || (inst_labels.array() < -1).any())
    throw ParameterError("labels must be -1 or a non-negative id");
}

void SceneSample::validate() const {
  cloud.validate();
  if (depth.rows() != image.h || depth.cols() != image.w)
    throw ParameterError("depth and image must share H x W");
  if (!depth.allFinite() || (depth.array() < 0.0).any())
    throw ParameterError("depth must be finite and non-negative");
  for (const auto& rec : captions) {
    if (rec.point_indices.empty()) throw ParameterError("caption record with empty point set");
    for (int idx : rec.point_indices)
      if (idx < 0 || idx >= cloud.size()) throw ParameterError("caption record indexes past cloud");
  }
}

int SectorSpec::sector_count() const {
  validate();
  return static_cast<int>(std::ceil(360.0 / (theta_deg - phi_deg) - 1e-12));
}

captions::ViewClass SectorSpec::view_class() const {
  validate();
  if (theta_deg == 360.0) return captions::ViewClass::Global;
  if (theta_deg > 90.0 && theta_deg <= 180.0) return captions::ViewClass::Eye;
  if (theta_deg > 0.0 && theta_deg <= 90.0) return captions::ViewClass::Sector;
  throw ParameterError("view angle in (180,360) has no view class");
}

void SectorSpec::validate() const {
  if (!(theta_deg > 0.0) || theta_deg > 360.0)
    throw ParameterError("sector span theta must lie in (0, 360]");
  if (phi_deg < 0.0 || phi_deg >= theta_deg)
    throw ParameterError("sector overlap phi must lie in [0, theta)");
}

double polar_angle_deg(double x, double y, double cx, double cy) {
  double a = std::atan2(y - cy, x - cx) * 180.0 / kPi;
  if (a < 0.0) a += 360.0;
  if (a >= 360.0) a = 0.0;
  return a;
}

SectorAssignment partition_sectors(const PointCloud& cloud, const SectorSpec& spec) {
  spec.validate();
  cloud.validate();
  const Eigen::Index n = cloud.size();
  const double cx = cloud.positions.col(0).mean();
  const double cy = cloud.positions.col(1).mean();
  const int count = spec.sector_count();
  const double step = spec.theta_deg - spec.phi_deg;

  std::vector<double> angle(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    angle[static_cast<std::size_t>(i)] =
        polar_angle_deg(cloud.positions(i, 0), cloud.positions(i, 1), cx, cy);

  SectorAssignment out;
  out.spec = spec;
  out.membership.assign(static_cast<std::size_t>(count), {});
  for (int j = 0; j < count; ++j) {
    const double start = static_cast<double>(j) * step;
    double end = start + spec.theta_deg;
    if (spec.phi_deg == 0.0) end = std::min(end, 360.0);
    auto& members = out.membership[static_cast<std::size_t>(j)];
    for (Eigen::Index i = 0; i < n; ++i) {
      const double a = angle[static_cast<std::size_t>(i)];
      const bool inside = end <= 360.0 ? (a >= start && a < end)
                                       : (a >= start || a < end - 360.0);
      if (inside) members.push_back(static_cast<int>(i));
    }
  }
  return out;
}

SceneSample make_synthetic_scene(std::uint64_t seed, Eigen::Index n_points,
                                 const std::vector<int>& class_ids, const SynthOptions& opts) {
  if (class_ids.empty()) throw ParameterError("synthetic scene needs at least one class id");
  const auto k = static_cast<Eigen::Index>(class_ids.size());
  if (n_points < k) throw ParameterError("synthetic scene needs n_points >= class count");

  Rng rng(mix_seed(seed, "synthetic-scene"));

  // One blob per class at a distinct polar angle; height tracks class id so
  // the depth channel carries class information too.
  std::vector<int> slots(class_ids.size());
  for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = static_cast<int>(i);
  rng.shuffle(slots);

  std::vector<Eigen::Index> counts(class_ids.size(), 1);
  for (Eigen::Index i = k; i < n_points; ++i)
    ++counts[static_cast<std::size_t>(rng.below(class_ids.size()))];

  PointCloud cloud;
  cloud.positions.resize(n_points, 3);
  cloud.colors.resize(n_points, 3);
  cloud.sem_labels.resize(n_points);
  cloud.inst_labels.resize(n_points);

  Eigen::Index row = 0;
  for (std::size_t c = 0; c < class_ids.size(); ++c) {
    const int id = class_ids[c];
    const double ang =
        (static_cast<double>(slots[c]) + 0.5) * 360.0 / static_cast<double>(k) +
        rng.uniform(-6.0, 6.0);
    const double radius = opts.blob_radius + rng.uniform(-0.2, 0.2);
    const double cx = radius * std::cos(ang * kPi / 180.0);
    const double cy = radius * std::sin(ang * kPi / 180.0);
    const double cz = 0.4 + opts.height_step * static_cast<double>(id % 5) + rng.uniform(-0.05, 0.05);
    const auto base = class_palette(id);
    for (Eigen::Index p = 0; p < counts[c]; ++p, ++row) {
      cloud.positions(row, 0) = cx + opts.blob_sigma * rng.normal();
      cloud.positions(row, 1) = cy + opts.blob_sigma * rng.normal();
      cloud.positions(row, 2) = std::max(0.0, cz + 0.5 * opts.blob_sigma * rng.normal());
      for (int ch = 0; ch < 3; ++ch)
        cloud.colors(row, ch) = clamp255(base[static_cast<std::size_t>(ch)] +
                                         opts.color_noise * rng.normal());
      cloud.sem_labels(row) = id;
      cloud.inst_labels(row) = static_cast<int>(c);
    }
  }

  // Shuffle point order so downstream code cannot rely on generation order.
  std::vector<int> perm(static_cast<std::size_t>(n_points));
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
  rng.shuffle(perm);
  PointCloud shuffled = cloud;
  for (Eigen::Index i = 0; i < n_points; ++i) {
    const int src = perm[static_cast<std::size_t>(i)];
    shuffled.positions.row(i) = cloud.positions.row(src);
    shuffled.colors.row(i) = cloud.colors.row(src);
    shuffled.sem_labels(i) = cloud.sem_labels(src);
    shuffled.inst_labels(i) = cloud.inst_labels(src);
  }

  SceneSample sample;
  sample.cloud = std::move(shuffled);
  sample.depth = render_depth(sample.cloud, opts.image_size, opts.image_size);
  sample.image = render_image(sample.cloud, opts.image_size, opts.image_size);
  sample.scene_id = "synth" + std::to_string(seed);
  sample.validate();
  return sample;
}

Eigen::MatrixXd render_depth(const PointCloud& cloud, Eigen::Index view_h, Eigen::Index view_w) {
  if (view_h < 1 || view_w < 1) throw ParameterError("render_depth: view must be at least 1x1");
  cloud.validate();
  const GridFrame f = grid_frame(cloud, view_h, view_w);
  Eigen::MatrixXd depth = Eigen::MatrixXd::Zero(view_h, view_w);
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    const auto c = std::clamp<Eigen::Index>(
        static_cast<Eigen::Index>((cloud.positions(i, 0) - f.x0) / f.dx), 0, view_w - 1);
    const auto r = std::clamp<Eigen::Index>(
        static_cast<Eigen::Index>((cloud.positions(i, 1) - f.y0) / f.dy), 0, view_h - 1);
    depth(r, c) = std::max(depth(r, c), std::max(0.0, cloud.positions(i, 2)));
  }
  return depth;
}

Image render_image(const PointCloud& cloud, Eigen::Index view_h, Eigen::Index view_w) {
  if (view_h < 1 || view_w < 1) throw ParameterError("render_image: view must be at least 1x1");
  cloud.validate();
  const GridFrame f = grid_frame(cloud, view_h, view_w);
  Image img;
  img.h = view_h;
  img.w = view_w;
  img.rgb.assign(static_cast<std::size_t>(view_h * view_w * 3), 0);
  Eigen::MatrixXd best = Eigen::MatrixXd::Constant(view_h, view_w, -1.0);
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    const auto c = std::clamp<Eigen::Index>(
        static_cast<Eigen::Index>((cloud.positions(i, 0) - f.x0) / f.dx), 0, view_w - 1);
    const auto r = std::clamp<Eigen::Index>(
        static_cast<Eigen::Index>((cloud.positions(i, 1) - f.y0) / f.dy), 0, view_h - 1);
    if (cloud.positions(i, 2) > best(r, c)) {
      best(r, c) = cloud.positions(i, 2);
      for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = cloud.colors(i, ch);
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Scene file I/O

namespace {

[[noreturn]] void format_fail(const std::string& path, int line_no, const std::string& what) {
  throw FormatError(path + ":" + std::to_string(line_no) + ": " + what);
}

}  // namespace

SceneSample load_scene(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open scene file: " + path);

  int line_no = 0;
  std::string line;
  auto next_line = [&](std::string& out) -> bool {
    while (std::getline(is, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      out = line;
      return true;
    }
    return false;
  };

  std::string header;
  if (!next_line(header)) format_fail(path, 1, "empty file");
  std::istringstream hs(header);
  std::string magic, version;
  Eigen::Index n = 0, h = 0, w = 0;
  if (!(hs >> magic >> version >> n >> h >> w) || magic != "UNIMOV-SCENE" || version != "v1")
    format_fail(path, line_no, "malformed header, expected 'UNIMOV-SCENE v1 N H W'");
  if (n < 1 || h < 1 || w < 1) format_fail(path, line_no, "header dimensions must be positive");

  SceneSample sample;
  sample.scene_id = std::filesystem::path(path).stem().string();
  sample.cloud.positions.resize(n, 3);
  sample.cloud.colors.resize(n, 3);
  sample.cloud.sem_labels.resize(n);
  sample.cloud.inst_labels.resize(n);

  for (Eigen::Index i = 0; i < n; ++i) {
    std::string row;
    if (!next_line(row)) format_fail(path, line_no + 1, "expected " + std::to_string(n) + " point rows");
    std::istringstream rs(row);
    double x, y, z;
    int r, g, b, sem, inst;
    if (!(rs >> x >> y >> z >> r >> g >> b >> sem >> inst))
      format_fail(path, line_no, "point row needs 8 fields 'x y z r g b sem inst'");
    std::string extra;
    if (rs >> extra) format_fail(path, line_no, "point row has trailing fields");
    if (r < 0 || r > 255 || g < 0 || g > 255 || b < 0 || b > 255)
      format_fail(path, line_no, "color out of range [0,255]");
    if (sem < -1 || inst < -1) format_fail(path, line_no, "labels must be -1 or non-negative");
    sample.cloud.positions.row(i) << x, y, z;
    sample.cloud.colors.row(i) << r, g, b;
    sample.cloud.sem_labels(i) = sem;
    sample.cloud.inst_labels(i) = inst;
  }

  sample.depth = Eigen::MatrixXd::Zero(h, w);
  sample.image.h = h;
  sample.image.w = w;
  sample.image.rgb.assign(static_cast<std::size_t>(h * w * 3), 0);
  sample.depth_missing = true;
  sample.image_missing = true;

  std::string row;
  if (next_line(row)) {
    // Depth block present.
    sample.depth_missing = false;
    for (Eigen::Index r = 0; r < h; ++r) {
      if (r > 0 && !next_line(row)) format_fail(path, line_no + 1, "truncated depth block");
      std::istringstream rs(row);
      for (Eigen::Index c = 0; c < w; ++c) {
        double v;
        if (!(rs >> v)) format_fail(path, line_no, "depth row needs " + std::to_string(w) + " values");
        if (!std::isfinite(v) || v < 0.0) format_fail(path, line_no, "depth values must be finite and >= 0");
        sample.depth(r, c) = v;
      }
      std::string extra;
      if (rs >> extra) format_fail(path, line_no, "depth row has trailing fields");
    }
    if (next_line(row)) {
      // Image block present.
      sample.image_missing = false;
      for (Eigen::Index r = 0; r < h; ++r) {
        if (r > 0 && !next_line(row)) format_fail(path, line_no + 1, "truncated image block");
        std::istringstream rs(row);
        for (Eigen::Index c = 0; c < w; ++c) {
          std::string triple;
          if (!(rs >> triple)) format_fail(path, line_no, "image row needs " + std::to_string(w) + " r,g,b triples");
          int rr, gg, bb;
          char comma1, comma2;
          std::istringstream ts(triple);
          if (!(ts >> rr >> comma1 >> gg >> comma2 >> bb) || comma1 != ',' || comma2 != ',')
            format_fail(path, line_no, "bad image triple '" + triple + "'");
          if (rr < 0 || rr > 255 || gg < 0 || gg > 255 || bb < 0 || bb > 255)
            format_fail(path, line_no, "image color out of range [0,255]");
          sample.image.at(r, c, 0) = rr;
          sample.image.at(r, c, 1) = gg;
          sample.image.at(r, c, 2) = bb;
        }
        std::string extra;
        if (rs >> extra) format_fail(path, line_no, "image row has trailing fields");
      }
      if (next_line(row)) format_fail(path, line_no, "unexpected content after image block");
    }
  }

  sample.validate();
  return sample;
}

void save_scene(const SceneSample& sample, const std::string& path) {
  sample.validate();
  std::ofstream os(path);
  if (!os) throw IoError("cannot open scene file for writing: " + path);
  os << std::setprecision(17);
  const Eigen::Index n = sample.cloud.size();
  os << "UNIMOV-SCENE v1 " << n << " " << sample.image.h << " " << sample.image.w << "\n";
  for (Eigen::Index i = 0; i < n; ++i) {
    os << sample.cloud.positions(i, 0) << " " << sample.cloud.positions(i, 1) << " "
       << sample.cloud.positions(i, 2) << " " << sample.cloud.colors(i, 0) << " "
       << sample.cloud.colors(i, 1) << " " << sample.cloud.colors(i, 2) << " "
       << sample.cloud.sem_labels(i) << " " << sample.cloud.inst_labels(i) << "\n";
  }
  if (!sample.depth_missing) {
    for (Eigen::Index r = 0; r < sample.depth.rows(); ++r) {
      for (Eigen::Index c = 0; c < sample.depth.cols(); ++c)
        os << (c ? " " : "") << sample.depth(r, c);
      os << "\n";
    }
    if (!sample.image_missing) {
      for (Eigen::Index r = 0; r < sample.image.h; ++r) {
        for (Eigen::Index c = 0; c < sample.image.w; ++c)
          os << (c ? " " : "") << sample.image.at(r, c, 0) << "," << sample.image.at(r, c, 1)
             << "," << sample.image.at(r, c, 2);
        os << "\n";
      }
    }
  }
  if (!os) throw IoError("write failed: " + path);
}

}  // namespace unimov::scene
