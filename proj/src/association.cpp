#include "f2f/association.hpp"

#include <cmath>

namespace f2f {

Vec3 project_point(const Vec3& p_r, const Pose& pose_n, const Pose& pose_i) {
  return pose_i.q.conjugate() * (pose_n.q * p_r + pose_n.p - pose_i.p);
}

std::vector<PlaneAssociation> associate_keyframe(std::span<const Vec3> points, const Pose& pose_n,
                                                 std::span<const AssociationTarget> targets,
                                                 const AssociationOptions& options) {
  std::vector<PlaneAssociation> out;
  const double r2 = options.search_radius * options.search_radius;
  std::vector<Vec3> nn;
  nn.reserve(options.neighbors);
  for (const auto& target : targets) {
    if (target.map == nullptr || target.map->size() < options.neighbors) continue;
    const Pose rel = target.pose.inverse() * pose_n;
    for (std::size_t k = 0; k < points.size(); ++k) {
      const Vec3 p_i = rel.transform(points[k]);
      const auto neighbors = target.map->knn(p_i, options.neighbors);
      if (neighbors.back().dist2 > r2) continue;
      nn.clear();
      for (const auto& n : neighbors) nn.push_back(target.map->points()[n.index]);
      const auto plane = fit_plane(nn, options.fit_gate);
      if (!plane) continue;
      if (!(std::abs(plane->distance(p_i)) < options.projection_gate)) continue;
      out.push_back({points[k], target.index, *plane, options.sigma, k});
    }
  }
  return out;
}

}  // namespace f2f
