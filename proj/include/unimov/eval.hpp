#pragma once

#include "unimov/scene.hpp"

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace unimov::eval {

// Base/novel split of a label space; dropped ids are excluded from both
// training and evaluation.
struct CategoryPartition {
  std::vector<int> base_ids;
  std::vector<int> novel_ids;
  std::vector<int> dropped_ids;
  std::string name;

  bool is_base(int id) const;
  bool is_novel(int id) const;
  bool is_dropped(int id) const;
};

struct SegmentationMetrics {
  std::map<int, double> per_class_iou;
  // Absent when no ground-truth class of that group is present, which also
  // leaves the harmonic mean undefined.
  std::optional<double> miou_base;
  std::optional<double> miou_novel;
  std::optional<double> hiou;
};

struct InstancePrediction {
  std::vector<int> point_indices;
  int class_id = -1;
  double score = 0.0;
};

struct GtInstance {
  std::vector<int> point_indices;
  int class_id = -1;
};

struct InstanceMetrics {
  std::map<int, double> per_class_ap;
  std::optional<double> map50_base;
  std::optional<double> map50_novel;
  std::optional<double> hap50;
};

// 2ab/(a+b); zero when either input is zero.
double harmonic_mean(double a, double b);

// Label dictionary plus the ids excluded by convention for that dataset.
struct DatasetInfo {
  std::vector<std::string> names;
  std::vector<int> dropped;
};

// Supported datasets: scannet, scannet-inst, s3dis, scannet200, nuscenes.
DatasetInfo dataset_info(const std::string& dataset);

// Names for synthetic toy classes (used by the stub captioner and queries).
std::map<int, std::string> toy_label_names(int n_classes);

// Deterministic seeded shuffle of the non-dropped ids into base and novel
// groups sized per the split name (e.g. "B15/N4").
CategoryPartition make_partition(const std::string& dataset, const std::string& split,
                                 std::uint64_t seed);

CategoryPartition make_custom_partition(std::vector<int> base_ids, std::vector<int> novel_ids,
                                        std::vector<int> dropped_ids, std::string name);

// Open-vocabulary inference: each point takes the id of the query embedding
// with maximal cosine similarity; ties resolve to the lowest id. Queries are
// normalized internally, so any positive rescaling leaves results unchanged.
Eigen::VectorXi classify_points(const Eigen::MatrixXd& point_feats,
                                const Eigen::MatrixXd& query_embeds,
                                const std::vector<int>& query_ids);

// Pointwise IoU per class over points whose ground truth is neither dropped
// nor unlabeled; group means over the classes present in the ground truth.
SegmentationMetrics semantic_metrics(const Eigen::VectorXi& pred, const Eigen::VectorXi& gt,
                                     const CategoryPartition& partition);

// AP at the 50% point-set IoU threshold with greedy score-ordered matching
// and all-point interpolation; mAP averages classes with ground truth.
InstanceMetrics instance_metrics(const std::vector<InstancePrediction>& preds,
                                 const std::vector<GtInstance>& gt_instances,
                                 const CategoryPartition& partition);

// Single-linkage clustering within each predicted class at the given
// distance threshold; score = cluster size / class size.
std::vector<InstancePrediction> toy_instance_head(const Eigen::VectorXi& pred_sem,
                                                  const scene::PointCloud& cloud, double radius);

// Prediction dump: header "UNIMOV-PRED v1 N", then one id per line.
void save_predictions(const Eigen::VectorXi& pred, const std::string& path);
Eigen::VectorXi load_predictions(const std::string& path);

// Instance dump: one line per instance, "class score idx,idx,...".
void save_instances(const std::vector<InstancePrediction>& preds, const std::string& path);
std::vector<InstancePrediction> load_instances(const std::string& path);

}  // namespace unimov::eval
