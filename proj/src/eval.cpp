#include "unimov/eval.hpp"

#include "unimov/errors.hpp"
#include "unimov/rng.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

namespace unimov::eval {

namespace {

bool contains(const std::vector<int>& v, int id) {
  return std::find(v.begin(), v.end(), id) != v.end();
}

}  // namespace

bool CategoryPartition::is_base(int id) const { return contains(base_ids, id); }
bool CategoryPartition::is_novel(int id) const { return contains(novel_ids, id); }
bool CategoryPartition::is_dropped(int id) const { return contains(dropped_ids, id); }

double harmonic_mean(double a, double b) {
  if (a <= 0.0 || b <= 0.0) return 0.0;
  return 2.0 * a * b / (a + b);
}

DatasetInfo dataset_info(const std::string& dataset) {
  static const std::vector<std::string> scannet20 = {
      "wall", "floor", "cabinet", "bed", "chair", "sofa", "table", "door", "window",
      "bookshelf", "picture", "counter", "desk", "curtain", "refrigerator",
      "shower curtain", "toilet", "sink", "bathtub", "otherfurniture"};
  static const std::vector<std::string> s3dis13 = {
      "ceiling", "floor", "wall", "beam", "column", "window", "door", "table", "chair",
      "sofa", "bookcase", "board", "clutter"};
  static const std::vector<std::string> nuscenes16 = {
      "barrier", "bicycle", "bus", "car", "construction vehicle", "motorcycle", "pedestrian",
      "traffic cone", "trailer", "truck", "driveable surface", "otherflat", "sidewalk",
      "terrain", "manmade", "vegetation"};

  auto index_of = [](const std::vector<std::string>& names, const std::string& name) {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    throw ParameterError("dataset table is missing class: " + name);
  };

  DatasetInfo info;
  if (dataset == "scannet") {
    info.names = scannet20;
    info.dropped = {index_of(scannet20, "otherfurniture")};
  } else if (dataset == "scannet-inst") {
    // Wall and floor are background for instances, on top of the usual drop.
    info.names = scannet20;
    info.dropped = {index_of(scannet20, "otherfurniture"), index_of(scannet20, "wall"),
                    index_of(scannet20, "floor")};
  } else if (dataset == "s3dis") {
    info.names = s3dis13;
    info.dropped = {index_of(s3dis13, "clutter")};
  } else if (dataset == "scannet200") {
    info.names.reserve(200);
    for (int i = 0; i < 200; ++i) info.names.push_back("scannet200-" + std::to_string(i));
  } else if (dataset == "nuscenes") {
    info.names = nuscenes16;
    info.dropped = {index_of(nuscenes16, "otherflat")};
  } else {
    throw ParameterError("unknown dataset: " + dataset);
  }
  std::sort(info.dropped.begin(), info.dropped.end());
  return info;
}

std::map<int, std::string> toy_label_names(int n_classes) {
  static const std::vector<std::string> base = {"chair", "table",  "lamp", "plant",
                                                "shelf", "sofa",   "desk", "bin",
                                                "rug",   "mirror", "vase", "stool"};
  std::map<int, std::string> names;
  for (int i = 0; i < n_classes; ++i) {
    std::string n = base[static_cast<std::size_t>(i) % base.size()];
    if (i >= static_cast<int>(base.size()))
      n += std::to_string(i / static_cast<int>(base.size()) + 1);
    names[i] = n;
  }
  return names;
}

CategoryPartition make_partition(const std::string& dataset, const std::string& split,
                                 std::uint64_t seed) {
  static const std::map<std::string, std::vector<std::string>> allowed = {
      {"scannet", {"B15/N4", "B12/N7", "B10/N9"}},
      {"scannet-inst", {"B13/N4", "B10/N7", "B8/N9"}},
      {"s3dis", {"B8/N4", "B6/N6"}},
      {"scannet200", {"B170/N30", "B150/N50"}},
      {"nuscenes", {"B12/N3", "B10/N5"}},
  };
  const auto it = allowed.find(dataset);
  if (it == allowed.end()) throw ParameterError("unknown dataset: " + dataset);
  if (!contains(it->second, split))
    throw ParameterError("unknown split '" + split + "' for dataset " + dataset);

  int n_base = 0, n_novel = 0;
  if (std::sscanf(split.c_str(), "B%d/N%d", &n_base, &n_novel) != 2)
    throw ParameterError("malformed split name: " + split);

  const DatasetInfo info = dataset_info(dataset);
  std::vector<int> pool;
  for (int id = 0; id < static_cast<int>(info.names.size()); ++id)
    if (!contains(info.dropped, id)) pool.push_back(id);
  if (static_cast<int>(pool.size()) != n_base + n_novel)
    throw ParameterError("split sizes do not cover the label space for " + dataset);

  Rng rng(mix_seed(seed, dataset + ":" + split));
  rng.shuffle(pool);

  CategoryPartition part;
  part.base_ids.assign(pool.begin(), pool.begin() + n_base);
  part.novel_ids.assign(pool.begin() + n_base, pool.end());
  part.dropped_ids = info.dropped;
  std::sort(part.base_ids.begin(), part.base_ids.end());
  std::sort(part.novel_ids.begin(), part.novel_ids.end());
  part.name = dataset + "-" + split;
  return part;
}

CategoryPartition make_custom_partition(std::vector<int> base_ids, std::vector<int> novel_ids,
                                        std::vector<int> dropped_ids, std::string name) {
  CategoryPartition part;
  part.base_ids = std::move(base_ids);
  part.novel_ids = std::move(novel_ids);
  part.dropped_ids = std::move(dropped_ids);
  part.name = std::move(name);
  for (int id : part.base_ids)
    if (contains(part.novel_ids, id))
      throw ParameterError("base and novel groups must be disjoint");
  return part;
}

Eigen::VectorXi classify_points(const Eigen::MatrixXd& point_feats,
                                const Eigen::MatrixXd& query_embeds,
                                const std::vector<int>& query_ids) {
  const Eigen::Index k = query_embeds.rows();
  if (k == 0) throw ParameterError("classify_points needs at least one query");
  if (static_cast<Eigen::Index>(query_ids.size()) != k)
    throw ParameterError("query_ids must match query_embeds rows");
  if (point_feats.cols() != query_embeds.cols())
    throw ParameterError("feature and query dimensions must match");

  auto normalized = [](const Eigen::MatrixXd& m) {
    Eigen::MatrixXd out = m;
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      const double n = out.row(r).norm();
      if (n > 1e-12) out.row(r) /= n;
    }
    return out;
  };
  const Eigen::MatrixXd p = normalized(point_feats);
  const Eigen::MatrixXd q = normalized(query_embeds);
  const Eigen::MatrixXd sim = p * q.transpose();  // N x K

  Eigen::VectorXi pred(point_feats.rows());
  for (Eigen::Index i = 0; i < sim.rows(); ++i) {
    int best_id = query_ids[0];
    double best = sim(i, 0);
    for (Eigen::Index j = 1; j < k; ++j) {
      const double s = sim(i, j);
      if (s > best || (s == best && query_ids[static_cast<std::size_t>(j)] < best_id)) {
        best = s;
        best_id = query_ids[static_cast<std::size_t>(j)];
      }
    }
    pred(i) = best_id;
  }
  return pred;
}

SegmentationMetrics semantic_metrics(const Eigen::VectorXi& pred, const Eigen::VectorXi& gt,
                                     const CategoryPartition& partition) {
  if (pred.size() != gt.size()) throw ParameterError("prediction/ground-truth size mismatch");

  std::map<int, long> tp, fp, fn;
  std::set<int> gt_classes;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const int g = gt(i);
    if (g == -1 || partition.is_dropped(g)) continue;
    const int p = pred(i);
    gt_classes.insert(g);
    if (p == g) {
      ++tp[g];
    } else {
      ++fn[g];
      ++fp[p];
    }
  }

  SegmentationMetrics out;
  double base_sum = 0.0, novel_sum = 0.0;
  int base_n = 0, novel_n = 0;
  for (int c : gt_classes) {
    const double denom = static_cast<double>(tp[c] + fp[c] + fn[c]);
    const double iou = denom > 0.0 ? static_cast<double>(tp[c]) / denom : 0.0;
    out.per_class_iou[c] = iou;
    if (partition.is_base(c)) {
      base_sum += iou;
      ++base_n;
    } else if (partition.is_novel(c)) {
      novel_sum += iou;
      ++novel_n;
    }
  }
  if (base_n > 0) out.miou_base = base_sum / base_n;
  if (novel_n > 0) out.miou_novel = novel_sum / novel_n;
  if (out.miou_base && out.miou_novel)
    out.hiou = harmonic_mean(*out.miou_base, *out.miou_novel);
  return out;
}

namespace {

double point_set_iou(const std::vector<int>& a, const std::vector<int>& b) {
  const std::set<int> sa(a.begin(), a.end());
  const std::set<int> sb(b.begin(), b.end());
  std::size_t inter = 0;
  for (int x : sb) inter += sa.count(x);
  const std::size_t uni = sa.size() + sb.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// AP with all-point interpolation over the ranked TP/FP sequence.
double average_precision(const std::vector<bool>& is_tp, std::size_t n_gt) {
  if (n_gt == 0) return 0.0;
  std::vector<double> precision, recall;
  std::size_t tp = 0, seen = 0;
  for (bool hit : is_tp) {
    ++seen;
    if (hit) ++tp;
    precision.push_back(static_cast<double>(tp) / static_cast<double>(seen));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
  }
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < precision.size(); ++i) {
    double p_interp = 0.0;
    for (std::size_t j = i; j < precision.size(); ++j) p_interp = std::max(p_interp, precision[j]);
    ap += (recall[i] - prev_recall) * p_interp;
    prev_recall = recall[i];
  }
  return ap;
}

}  // namespace

InstanceMetrics instance_metrics(const std::vector<InstancePrediction>& preds,
                                 const std::vector<GtInstance>& gt_instances,
                                 const CategoryPartition& partition) {
  std::set<int> classes;
  std::map<int, std::vector<const GtInstance*>> gt_by_class;
  for (const auto& gt : gt_instances) {
    if (gt.class_id < 0 || partition.is_dropped(gt.class_id)) continue;
    if (gt.point_indices.empty()) throw ParameterError("ground-truth instance with no points");
    gt_by_class[gt.class_id].push_back(&gt);
    classes.insert(gt.class_id);
  }

  std::map<int, std::vector<const InstancePrediction*>> pred_by_class;
  for (const auto& pr : preds) {
    if (pr.point_indices.empty()) throw ParameterError("instance prediction with no points");
    pred_by_class[pr.class_id].push_back(&pr);
  }

  InstanceMetrics out;
  double base_sum = 0.0, novel_sum = 0.0;
  int base_n = 0, novel_n = 0;
  for (int c : classes) {
    auto ranked = pred_by_class[c];
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto* a, const auto* b) { return a->score > b->score; });
    const auto& gts = gt_by_class[c];
    std::vector<bool> matched(gts.size(), false);
    std::vector<bool> is_tp;
    is_tp.reserve(ranked.size());
    for (const auto* pr : ranked) {
      int best = -1;
      double best_iou = 0.0;
      for (std::size_t gi = 0; gi < gts.size(); ++gi) {
        if (matched[gi]) continue;
        const double iou = point_set_iou(pr->point_indices, gts[gi]->point_indices);
        if (iou > best_iou) {
          best_iou = iou;
          best = static_cast<int>(gi);
        }
      }
      if (best >= 0 && best_iou > 0.5) {
        matched[static_cast<std::size_t>(best)] = true;
        is_tp.push_back(true);
      } else {
        is_tp.push_back(false);
      }
    }
    const double ap = average_precision(is_tp, gts.size());
    out.per_class_ap[c] = ap;
    if (partition.is_base(c)) {
      base_sum += ap;
      ++base_n;
    } else if (partition.is_novel(c)) {
      novel_sum += ap;
      ++novel_n;
    }
  }
  if (base_n > 0) out.map50_base = base_sum / base_n;
  if (novel_n > 0) out.map50_novel = novel_sum / novel_n;
  if (out.map50_base && out.map50_novel)
    out.hap50 = harmonic_mean(*out.map50_base, *out.map50_novel);
  return out;
}

std::vector<InstancePrediction> toy_instance_head(const Eigen::VectorXi& pred_sem,
                                                  const scene::PointCloud& cloud, double radius) {
  if (radius <= 0.0) throw ParameterError("clustering radius must be positive");
  if (pred_sem.size() != cloud.size())
    throw ParameterError("prediction length must match the cloud");

  std::set<int> classes;
  for (Eigen::Index i = 0; i < pred_sem.size(); ++i)
    if (pred_sem(i) >= 0) classes.insert(pred_sem(i));

  const double r2 = radius * radius;
  std::vector<InstancePrediction> out;
  for (int c : classes) {
    std::vector<int> members;
    for (Eigen::Index i = 0; i < pred_sem.size(); ++i)
      if (pred_sem(i) == c) members.push_back(static_cast<int>(i));

    // Union-find single linkage at the distance threshold.
    std::vector<int> parent(members.size());
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int x) {
      while (parent[static_cast<std::size_t>(x)] != x) {
        parent[static_cast<std::size_t>(x)] =
            parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
        x = parent[static_cast<std::size_t>(x)];
      }
      return x;
    };
    for (std::size_t i = 0; i < members.size(); ++i)
      for (std::size_t j = i + 1; j < members.size(); ++j) {
        const double d2 =
            (cloud.positions.row(members[i]) - cloud.positions.row(members[j])).squaredNorm();
        if (d2 <= r2) {
          const int ri = find(static_cast<int>(i)), rj = find(static_cast<int>(j));
          if (ri != rj) parent[static_cast<std::size_t>(ri)] = rj;
        }
      }

    std::map<int, std::vector<int>> clusters;
    for (std::size_t i = 0; i < members.size(); ++i)
      clusters[find(static_cast<int>(i))].push_back(members[i]);

    for (auto& [root, pts] : clusters) {
      InstancePrediction pr;
      pr.class_id = c;
      pr.score = static_cast<double>(pts.size()) / static_cast<double>(members.size());
      pr.point_indices = std::move(pts);
      out.push_back(std::move(pr));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// File I/O

void save_predictions(const Eigen::VectorXi& pred, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open prediction file for writing: " + path);
  os << "UNIMOV-PRED v1 " << pred.size() << "\n";
  for (Eigen::Index i = 0; i < pred.size(); ++i) os << pred(i) << "\n";
  if (!os) throw IoError("write failed: " + path);
}

Eigen::VectorXi load_predictions(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open prediction file: " + path);
  std::string magic, version;
  Eigen::Index n = 0;
  if (!(is >> magic >> version >> n) || magic != "UNIMOV-PRED" || version != "v1")
    throw FormatError(path + ":1: malformed header, expected 'UNIMOV-PRED v1 N'");
  Eigen::VectorXi pred(n);
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(is >> pred(i)))
      throw FormatError(path + ": truncated prediction list (expected " + std::to_string(n) + ")");
  return pred;
}

void save_instances(const std::vector<InstancePrediction>& preds, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open instance file for writing: " + path);
  os << std::setprecision(17);
  for (const auto& pr : preds) {
    os << pr.class_id << " " << pr.score << " ";
    for (std::size_t i = 0; i < pr.point_indices.size(); ++i)
      os << (i ? "," : "") << pr.point_indices[i];
    os << "\n";
  }
  if (!os) throw IoError("write failed: " + path);
}

std::vector<InstancePrediction> load_instances(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open instance file: " + path);
  std::vector<InstancePrediction> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream ls(line);
    InstancePrediction pr;
    std::string idx_token;
    if (!(ls >> pr.class_id >> pr.score >> idx_token))
      throw FormatError(path + ":" + std::to_string(line_no) + ": expected 'class score idx,...'");
    std::istringstream split(idx_token);
    std::string part;
    while (std::getline(split, part, ',')) pr.point_indices.push_back(std::stoi(part));
    if (pr.point_indices.empty())
      throw FormatError(path + ":" + std::to_string(line_no) + ": empty instance");
    out.push_back(std::move(pr));
  }
  return out;
}

}  // namespace unimov::eval
