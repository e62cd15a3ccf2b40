#pragma once

// Frame-to-frame association: points of the newest keyframe against the
// accumulated maps of the older keyframes in the window.

#include <span>
#include <vector>

#include "f2f/pointcloud.hpp"
#include "f2f/se3.hpp"

namespace f2f {

inline constexpr double kLidarSigma = 0.1;  // m, plane-distance std

struct PlaneAssociation {
  Vec3 p_r = Vec3::Zero();  // raw point in the newest keyframe's LiDAR frame
  std::size_t target = 0;   // window slot of the keyframe whose map was hit
  PlaneCoeffs plane;        // in the target keyframe's LiDAR frame
  double sigma = kLidarSigma;
  std::size_t source_index = 0;  // index into the source point list
  std::size_t source = 0;        // window slot of the keyframe owning p_r
};

struct AssociationOptions {
  std::size_t neighbors = 5;
  double search_radius = 1.0;    // m, farthest neighbor
  double fit_gate = kPlaneFitGate;
  double projection_gate = 0.2;  // m, |n^T p^i + d| of the projected point
  double sigma = kLidarSigma;
};

/// p^i = R_i^T (R_n p^r + t_n - t_i), with pose_n and pose_i the LiDAR poses
/// in the world.
Vec3 project_point(const Vec3& p_r, const Pose& pose_n, const Pose& pose_i);

struct AssociationTarget {
  std::size_t index = 0;  // window slot
  const KeyframeMap* map = nullptr;
  Pose pose;  // LiDAR pose of the map's keyframe in the world
};

/// Associations ordered by (target, point index); at most one per pair.
std::vector<PlaneAssociation> associate_keyframe(std::span<const Vec3> points, const Pose& pose_n,
                                                 std::span<const AssociationTarget> targets,
                                                 const AssociationOptions& options = {});

}  // namespace f2f
