#include "funnel/params.hpp"

#include <cmath>
#include <string>

#include "funnel/errors.hpp"

namespace funnel {

ParamGroups ParamGroups::zeros(const GroupShapes& shapes) { return filled(shapes, 0.0); }

ParamGroups ParamGroups::filled(const GroupShapes& shapes, double value) {
  std::vector<ParamGroup> groups;
  groups.reserve(shapes.size());
  for (const auto& shape : shapes) {
    groups.push_back({shape.name, std::vector<double>(shape.size, value)});
  }
  return ParamGroups(std::move(groups));
}

std::size_t ParamGroups::total_size() const {
  std::size_t n = 0;
  for (const auto& g : groups_) n += g.values.size();
  return n;
}

GroupShapes ParamGroups::shapes() const {
  GroupShapes out;
  out.reserve(groups_.size());
  for (const auto& g : groups_) out.push_back({g.name, g.values.size()});
  return out;
}

bool ParamGroups::all_finite() const {
  for (const auto& g : groups_) {
    for (double v : g.values) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

void require_shapes(const ParamGroups& values, const GroupShapes& shapes, const char* what) {
  if (values.size() != shapes.size()) {
    throw DimensionError(std::string(what) + ": expected " + std::to_string(shapes.size()) +
                         " groups, got " + std::to_string(values.size()));
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (values[i].values.size() != shapes[i].size) {
      throw DimensionError(std::string(what) + ": group '" + shapes[i].name + "' expects " +
                           std::to_string(shapes[i].size) + " values, got " +
                           std::to_string(values[i].values.size()));
    }
  }
}

}  // namespace funnel
