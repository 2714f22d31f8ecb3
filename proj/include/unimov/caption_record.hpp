#pragma once

#include <string>
#include <vector>

namespace unimov::captions {

enum class ViewClass { Sector, Eye, Global };

std::string view_class_name(ViewClass v);
ViewClass view_class_from_name(const std::string& name);

// One region-text pair: a view of a scene, the point subset it covers, and
// the caption generated for that subset.
struct CaptionRecord {
  std::string scene_id;
  ViewClass view = ViewClass::Global;
  double theta_deg = 360.0;
  double phi_deg = 0.0;
  int sector_index = -1;  // -1 for the global view
  std::string text;
  std::vector<int> point_indices;
};

}  // namespace unimov::captions
