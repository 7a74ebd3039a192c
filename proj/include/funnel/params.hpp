#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace funnel {

struct GroupShape {
  std::string name;
  std::size_t size = 0;

  bool operator==(const GroupShape&) const = default;
};

using GroupShapes = std::vector<GroupShape>;

struct ParamGroup {
  std::string name;
  std::vector<double> values;
};

// Named flat parameter vectors, one per layer. Gradients, pre-conditioned
// gradients and optimizer buffers all use the same container.
class ParamGroups {
 public:
  ParamGroups() = default;
  explicit ParamGroups(std::vector<ParamGroup> groups) : groups_(std::move(groups)) {}

  static ParamGroups zeros(const GroupShapes& shapes);
  static ParamGroups filled(const GroupShapes& shapes, double value);

  [[nodiscard]] std::size_t size() const { return groups_.size(); }
  [[nodiscard]] bool empty() const { return groups_.empty(); }
  [[nodiscard]] std::size_t total_size() const;
  [[nodiscard]] GroupShapes shapes() const;

  ParamGroup& operator[](std::size_t i) { return groups_[i]; }
  const ParamGroup& operator[](std::size_t i) const { return groups_[i]; }

  std::span<double> values(std::size_t i) { return groups_[i].values; }
  [[nodiscard]] std::span<const double> values(std::size_t i) const { return groups_[i].values; }

  auto begin() { return groups_.begin(); }
  auto end() { return groups_.end(); }
  [[nodiscard]] auto begin() const { return groups_.begin(); }
  [[nodiscard]] auto end() const { return groups_.end(); }

  [[nodiscard]] bool all_finite() const;

 private:
  std::vector<ParamGroup> groups_;
};

// Throws DimensionError unless `values` has exactly `shapes`' group sizes.
void require_shapes(const ParamGroups& values, const GroupShapes& shapes, const char* what);

}  // namespace funnel
