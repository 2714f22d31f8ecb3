#include "unimov/captions.hpp"

#include "unimov/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace unimov::captions {

std::string view_class_name(ViewClass v) {
  switch (v) {
    case ViewClass::Sector: return "sector";
    case ViewClass::Eye: return "eye";
    case ViewClass::Global: return "global";
  }
  throw ParameterError("unknown view class");
}

ViewClass view_class_from_name(const std::string& name) {
  if (name == "sector") return ViewClass::Sector;
  if (name == "eye") return ViewClass::Eye;
  if (name == "global") return ViewClass::Global;
  throw ParameterError("unknown view class: " + name);
}

Temperature::Temperature(ParamStore& store, const std::string& name, double init) {
  if (!(init > 0.0)) throw ParameterError("temperature must start positive");
  log_value_ = &store.create(name, ad::Mat::Constant(1, 1, std::log(init)));
}

double Temperature::value() const { return std::exp(log_value_->value(0, 0)); }

Var Temperature::inverse(Tape& t) const { return t.exp(t.neg(t.param(*log_value_))); }

void CaptionLossWeights::validate() const {
  if (alpha < 0.0 || beta < 0.0 || gamma < 0.0)
    throw ParameterError("caption loss weights must be non-negative");
  if (alpha == 0.0 && beta == 0.0 && gamma == 0.0)
    throw ParameterError("at least one caption loss weight must be positive");
}

std::string stub_captioner(const scene::PointCloud& cloud, const std::vector<int>& indices,
                           const std::map<int, std::string>& label_names) {
  if (indices.empty()) throw ParameterError("captioner needs a nonempty region");
  std::map<int, int> counts;
  for (int idx : indices) {
    if (idx < 0 || idx >= cloud.size()) throw ParameterError("region index out of range");
    const int label = cloud.sem_labels(idx);
    if (label >= 0) ++counts[label];
  }
  if (counts.empty()) return "an unlabeled region";

  std::vector<std::pair<int, int>> ordered(counts.begin(), counts.end());
  std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  std::string out = "a region containing ";
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    if (i) out += ", ";
    auto it = label_names.find(ordered[i].first);
    out += it != label_names.end() ? it->second : "class " + std::to_string(ordered[i].first);
  }
  return out;
}

std::vector<scene::SectorSpec> default_view_specs() {
  return {{360.0, 0.0}, {120.0, 0.0}, {60.0, 0.0}};
}

std::vector<CaptionRecord> build_caption_pairs(const scene::SceneSample& sample,
                                               const std::vector<scene::SectorSpec>& specs,
                                               const Captioner& captioner) {
  sample.validate();
  std::vector<CaptionRecord> records;
  for (const auto& spec : specs) {
    const ViewClass view = spec.view_class();
    const auto assignment = partition_sectors(sample.cloud, spec);
    for (std::size_t j = 0; j < assignment.membership.size(); ++j) {
      const auto& members = assignment.membership[j];
      if (members.empty()) continue;
      std::string text;
      try {
        text = captioner(sample.cloud, members);
      } catch (const std::exception& e) {
        std::fprintf(stderr, "unimov: captioner failed on %s sector %zu: %s; record skipped\n",
                     sample.scene_id.c_str(), j, e.what());
        continue;
      }
      if (text.empty()) {
        std::fprintf(stderr, "unimov: captioner returned empty text on %s sector %zu; record skipped\n",
                     sample.scene_id.c_str(), j);
        continue;
      }
      CaptionRecord rec;
      rec.scene_id = sample.scene_id;
      rec.view = view;
      rec.theta_deg = spec.theta_deg;
      rec.phi_deg = spec.phi_deg;
      rec.sector_index = view == ViewClass::Global ? -1 : static_cast<int>(j);
      rec.text = std::move(text);
      rec.point_indices = members;
      records.push_back(std::move(rec));
    }
  }
  return records;
}

namespace {

// Re-normalizes rows when any is off unit length; otherwise passes through.
Var ensure_unit_rows(Tape& t, Var feats, const char* who) {
  const ad::Mat& v = feats.value();
  double worst = 0.0;
  for (Eigen::Index r = 0; r < v.rows(); ++r)
    worst = std::max(worst, std::fabs(v.row(r).norm() - 1.0));
  if (worst <= 1e-5) return feats;
  std::fprintf(stderr, "unimov: %s received non-normalized rows (max |norm-1| = %.3g); normalizing\n",
               who, worst);
  return t.rows_l2_normalize(feats);
}

}  // namespace

Var caption_infonce(Tape& t, Var point_feats, Var text_feats, const Temperature& tau) {
  if (point_feats.rows() == 0) throw ParameterError("caption_infonce needs at least one pair");
  if (point_feats.rows() != text_feats.rows() || point_feats.cols() != text_feats.cols())
    throw ParameterError("caption_infonce: paired features must share shape");

  Var p = ensure_unit_rows(t, point_feats, "caption_infonce");
  Var x = ensure_unit_rows(t, text_feats, "caption_infonce");
  Var logits = t.mul_scalar(t.matmul(p, t.transpose(x)), tau.inverse(t));
  return t.mean(t.sub(t.row_logsumexp(logits), t.take_diag(logits)));
}

double combined_caption_loss(double l_global, double l_eye, double l_sector,
                             const CaptionLossWeights& w) {
  w.validate();
  return w.alpha * l_global + w.beta * l_eye + w.gamma * l_sector;
}

Var combined_caption_loss(Tape& t, Var l_global, Var l_eye, Var l_sector,
                          const CaptionLossWeights& w) {
  w.validate();
  return t.add(t.scale(l_global, w.alpha),
               t.add(t.scale(l_eye, w.beta), t.scale(l_sector, w.gamma)));
}

Var region_feature(Tape& t, Var per_point_feats, const std::vector<int>& indices,
                   const std::function<Var(Tape&, Var)>& project) {
  if (indices.empty()) throw ParameterError("region_feature needs a nonempty index set");
  Var rows = t.gather_rows(per_point_feats, indices);
  Var mean = t.matmul(
      t.constant(ad::Mat::Constant(1, static_cast<Eigen::Index>(indices.size()),
                                   1.0 / static_cast<double>(indices.size()))),
      rows);
  return t.rows_l2_normalize(project(t, mean));
}

// ---------------------------------------------------------------------------
// Manifest I/O

void save_caption_manifest(const std::vector<CaptionRecord>& records, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open caption manifest for writing: " + path);
  os << std::setprecision(17);
  for (const auto& rec : records) {
    os << rec.scene_id << " " << view_class_name(rec.view) << " " << rec.theta_deg << " "
       << rec.phi_deg << " " << rec.sector_index << " \"" << rec.text << "\" ";
    for (std::size_t i = 0; i < rec.point_indices.size(); ++i)
      os << (i ? "," : "") << rec.point_indices[i];
    os << "\n";
  }
  if (!os) throw IoError("write failed: " + path);
}

std::vector<CaptionRecord> load_caption_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open caption manifest: " + path);
  std::vector<CaptionRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream ls(line);
    CaptionRecord rec;
    std::string view;
    if (!(ls >> rec.scene_id >> view >> rec.theta_deg >> rec.phi_deg >> rec.sector_index))
      throw FormatError(path + ":" + std::to_string(line_no) + ": malformed caption record");
    rec.view = view_class_from_name(view);

    const auto q1 = line.find('"');
    const auto q2 = line.rfind('"');
    if (q1 == std::string::npos || q2 <= q1)
      throw FormatError(path + ":" + std::to_string(line_no) + ": caption text must be quoted");
    rec.text = line.substr(q1 + 1, q2 - q1 - 1);

    std::istringstream idxs(line.substr(q2 + 1));
    std::string token;
    if (!(idxs >> token))
      throw FormatError(path + ":" + std::to_string(line_no) + ": missing point indices");
    std::istringstream split(token);
    std::string part;
    while (std::getline(split, part, ','))
      rec.point_indices.push_back(std::stoi(part));
    if (rec.point_indices.empty())
      throw FormatError(path + ":" + std::to_string(line_no) + ": empty point index set");
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace unimov::captions
