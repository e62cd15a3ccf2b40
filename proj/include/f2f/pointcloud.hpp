#pragma once

// LiDAR frames, voxel filter, exact kd-tree, plane fitting, motion
// compensation and per-keyframe accumulated maps.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "f2f/ins.hpp"
#include "f2f/se3.hpp"

namespace f2f {

struct LidarPoint {
  double t_offset = 0.0;  // s since frame stamp
  Vec3 p = Vec3::Zero();  // r-frame at sample time
};

struct LidarFrame {
  double stamp = 0.0;
  std::vector<LidarPoint> points;
  bool is_keyframe = false;
};

/// LiDAR-to-IMU transform: x^b = q * x^r + p.
struct Extrinsics {
  Vec3 p = Vec3::Zero();
  Quat q = Quat::Identity();

  Pose pose() const { return {p, q}; }
};

struct RangeGate {
  double min = 0.5;
  double max = 200.0;
};

/// Drops non-finite points and points outside the range gate.
std::vector<LidarPoint> range_filter(std::span<const LidarPoint> points, const RangeGate& gate = {});

/// One centroid per occupied voxel floor(p / leaf), in first-occurrence order.
std::vector<Vec3> voxel_downsample(std::span<const Vec3> points, double leaf);
/// Same on timestamped points; t_offset is averaged too.
std::vector<LidarPoint> voxel_downsample(std::span<const LidarPoint> points, double leaf);

/// 64-bit voxel key: 21 bits per axis.
std::uint64_t voxel_key(const Vec3& p, double leaf);

struct Neighbor {
  std::size_t index = 0;
  double dist2 = 0.0;
};

/// Static kd-tree with exact k-nearest-neighbor queries. Ties are broken by
/// point index so results match a brute-force scan.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(std::vector<Vec3> points);

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const std::vector<Vec3>& points() const { return points_; }

  /// min(k, size) neighbors sorted by (distance, index). Throws f2f::Error on
  /// an empty tree.
  std::vector<Neighbor> knn(const Vec3& query, std::size_t k) const;

 private:
  struct Node {
    int axis = -1;  // -1 for leaves
    double split = 0.0;
    std::uint32_t begin = 0, end = 0;  // range in order_
    std::int32_t left = -1, right = -1;
  };
  std::int32_t build(std::uint32_t begin, std::uint32_t end);
  void search(std::int32_t node, const Vec3& q, std::size_t k, std::vector<Neighbor>& heap) const;

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

struct PlaneCoeffs {
  Vec3 n = Vec3::UnitZ();
  double d = 0.0;

  double distance(const Vec3& p) const { return n.dot(p) + d; }
};

inline constexpr double kPlaneFitGate = 0.1;  // m, per-point gate on the fitted plane

/// Least-squares plane through the points from A n = -1 with d = 1, then
/// normalized. Fails on ill-conditioned geometry (singular value ratio below
/// 1e-3) or when any point is `gate` or farther from the plane.
std::optional<PlaneCoeffs> fit_plane(std::span<const Vec3> points, double gate = kPlaneFitGate);

/// Re-expresses each point in the LiDAR frame at stamp + t_d using the INS
/// pose at stamp + t_offset + t_d. Throws f2f::Error on buffer gaps.
LidarFrame undistort_frame(const LidarFrame& frame, const InsPoseBuffer& buffer, const Extrinsics& ext,
                           double t_d);

/// LiDAR pose in the world at time t (INS pose composed with the extrinsics).
Pose lidar_pose(const InsPoseBuffer& buffer, const Extrinsics& ext, double t);

inline constexpr double kVoxelLeaf = 0.5;  // m

/// Accumulated cloud of one keyframe, in its LiDAR frame at its anchor epoch.
class KeyframeMap {
 public:
  KeyframeMap() = default;
  KeyframeMap(std::size_t id, double epoch, std::vector<Vec3> points);

  std::size_t id() const { return id_; }
  double epoch() const { return epoch_; }
  std::size_t size() const { return tree_.size(); }
  const std::vector<Vec3>& points() const { return tree_.points(); }
  std::vector<Neighbor> knn(const Vec3& query, std::size_t k) const { return tree_.knn(query, k); }

 private:
  std::size_t id_ = 0;
  double epoch_ = 0.0;
  KdTree tree_;
};

/// Projects undistorted intermediate frames into the keyframe's anchor epoch
/// with INS relative poses, merges them with the keyframe cloud and
/// downsamples the union.
KeyframeMap build_keyframe_map(std::size_t id, const LidarFrame& keyframe,
                               std::span<const LidarFrame> intermediates, const InsPoseBuffer& buffer,
                               const Extrinsics& ext, double t_d, double leaf = kVoxelLeaf);

}  // namespace f2f
