#include "f2f/pointcloud.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include <Eigen/Eigenvalues>

#include "f2f/error.hpp"

namespace f2f {

std::vector<LidarPoint> range_filter(std::span<const LidarPoint> points, const RangeGate& gate) {
  std::vector<LidarPoint> out;
  out.reserve(points.size());
  for (const auto& pt : points) {
    if (!pt.p.allFinite() || !std::isfinite(pt.t_offset)) continue;
    const double r = pt.p.norm();
    if (r < gate.min || r > gate.max) continue;
    out.push_back(pt);
  }
  return out;
}

std::uint64_t voxel_key(const Vec3& p, double leaf) {
  constexpr std::int64_t kOffset = 1 << 20;
  constexpr std::uint64_t kMask = (1u << 21) - 1u;
  std::uint64_t key = 0;
  for (int a = 0; a < 3; ++a) {
    const auto c = static_cast<std::int64_t>(std::floor(p[a] / leaf)) + kOffset;
    if (c < 0 || c > static_cast<std::int64_t>(kMask)) throw Error("voxel_key: coordinate out of range");
    key |= (static_cast<std::uint64_t>(c) & kMask) << (21 * a);
  }
  return key;
}

std::vector<Vec3> voxel_downsample(std::span<const Vec3> points, double leaf) {
  if (!(leaf > 0.0)) throw std::invalid_argument("voxel_downsample: leaf must be positive");
  std::unordered_map<std::uint64_t, std::size_t> slot;
  slot.reserve(points.size());
  std::vector<Vec3> sum;
  std::vector<int> count;
  for (const auto& p : points) {
    const auto [it, inserted] = slot.try_emplace(voxel_key(p, leaf), sum.size());
    if (inserted) {
      sum.push_back(p);
      count.push_back(1);
    } else {
      sum[it->second] += p;
      ++count[it->second];
    }
  }
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] /= count[i];
  return sum;
}

std::vector<LidarPoint> voxel_downsample(std::span<const LidarPoint> points, double leaf) {
  if (!(leaf > 0.0)) throw std::invalid_argument("voxel_downsample: leaf must be positive");
  std::unordered_map<std::uint64_t, std::size_t> slot;
  slot.reserve(points.size());
  std::vector<LidarPoint> sum;
  std::vector<int> count;
  for (const auto& p : points) {
    const auto [it, inserted] = slot.try_emplace(voxel_key(p.p, leaf), sum.size());
    if (inserted) {
      sum.push_back(p);
      count.push_back(1);
    } else {
      sum[it->second].p += p.p;
      sum[it->second].t_offset += p.t_offset;
      ++count[it->second];
    }
  }
  for (std::size_t i = 0; i < sum.size(); ++i) {
    sum[i].p /= count[i];
    sum[i].t_offset /= count[i];
  }
  return sum;
}

// ---------------------------------------------------------------------------
// KdTree

namespace {

constexpr std::uint32_t kLeafSize = 8;

bool closer(const Neighbor& a, const Neighbor& b) {
  return a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index);
}

}  // namespace

KdTree::KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0u);
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / kLeafSize + 1);
    build(0, static_cast<std::uint32_t>(points_.size()));
  }
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back({});
  nodes_[id].begin = begin;
  nodes_[id].end = end;
  if (end - begin <= kLeafSize) return id;

  Vec3 lo = points_[order_[begin]], hi = lo;
  for (std::uint32_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (hi[axis] == lo[axis]) return id;  // all points coincide

  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) { return points_[a][axis] < points_[b][axis]; });
  const double split = points_[order_[mid]][axis];
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  const std::int32_t left = build(begin, mid);
  const std::int32_t right = build(mid, end);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::search(std::int32_t node_id, const Vec3& q, std::size_t k, std::vector<Neighbor>& heap) const {
  const Node& node = nodes_[node_id];
  if (node.axis < 0) {
    for (std::uint32_t i = node.begin; i < node.end; ++i) {
      const std::uint32_t idx = order_[i];
      const Neighbor cand{idx, (points_[idx] - q).squaredNorm()};
      if (heap.size() < k) {
        heap.push_back(cand);
        std::push_heap(heap.begin(), heap.end(), closer);
      } else if (closer(cand, heap.front())) {
        std::pop_heap(heap.begin(), heap.end(), closer);
        heap.back() = cand;
        std::push_heap(heap.begin(), heap.end(), closer);
      }
    }
    return;
  }
  // Left holds values <= split, right holds values >= split.
  const double diff = q[node.axis] - node.split;
  const std::int32_t near = diff < 0.0 ? node.left : node.right;
  const std::int32_t far = diff < 0.0 ? node.right : node.left;
  search(near, q, k, heap);
  if (heap.size() < k || diff * diff <= heap.front().dist2) search(far, q, k, heap);
}

std::vector<Neighbor> KdTree::knn(const Vec3& query, std::size_t k) const {
  if (points_.empty()) throw Error("knn: empty point set");
  k = std::min(k, points_.size());
  std::vector<Neighbor> heap;
  heap.reserve(k + 1);
  if (k > 0) search(0, query, k, heap);
  std::sort_heap(heap.begin(), heap.end(), closer);
  return heap;
}

// ---------------------------------------------------------------------------
// Plane fitting

std::optional<PlaneCoeffs> fit_plane(std::span<const Vec3> points, double gate) {
  if (points.size() < 3) return std::nullopt;
  Mat3 AtA = Mat3::Zero();
  Vec3 Atb = Vec3::Zero();
  for (const auto& p : points) {
    AtA += p * p.transpose();
    Atb -= p;
  }
  Eigen::SelfAdjointEigenSolver<Mat3> es(AtA);
  const Vec3 ev = es.eigenvalues().cwiseMax(0.0);
  // Singular values of A are square roots of the eigenvalues of A^T A.
  if (!(ev(2) > 0.0) || std::sqrt(ev(0) / ev(2)) < 1e-3) return std::nullopt;
  const Vec3 n = AtA.ldlt().solve(Atb);
  const double norm = n.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) return std::nullopt;
  PlaneCoeffs plane{n / norm, 1.0 / norm};
  for (const auto& p : points) {
    if (!(std::abs(plane.distance(p)) < gate)) return std::nullopt;
  }
  return plane;
}

// ---------------------------------------------------------------------------
// Motion compensation and maps

Pose lidar_pose(const InsPoseBuffer& buffer, const Extrinsics& ext, double t) {
  return buffer.pose(t) * ext.pose();
}

LidarFrame undistort_frame(const LidarFrame& frame, const InsPoseBuffer& buffer, const Extrinsics& ext,
                           double t_d) {
  const double anchor = frame.stamp + t_d;
  if (!buffer.covers(anchor)) throw Error("undistort_frame: INS buffer does not cover the frame anchor");
  const Pose anchor_inv = lidar_pose(buffer, ext, anchor).inverse();
  LidarFrame out;
  out.stamp = frame.stamp;
  out.is_keyframe = frame.is_keyframe;
  out.points.reserve(frame.points.size());
  for (const auto& pt : frame.points) {
    const double t = anchor + pt.t_offset;
    if (!buffer.covers(t)) throw Error("undistort_frame: INS buffer gap at a point time");
    if (pt.t_offset == 0.0) {
      out.points.push_back(pt);
      continue;
    }
    const Pose rel = anchor_inv * lidar_pose(buffer, ext, t);
    out.points.push_back({pt.t_offset, rel.transform(pt.p)});
  }
  return out;
}

KeyframeMap::KeyframeMap(std::size_t id, double epoch, std::vector<Vec3> points)
    : id_(id), epoch_(epoch), tree_(std::move(points)) {}

KeyframeMap build_keyframe_map(std::size_t id, const LidarFrame& keyframe,
                               std::span<const LidarFrame> intermediates, const InsPoseBuffer& buffer,
                               const Extrinsics& ext, double t_d, double leaf) {
  const double epoch = keyframe.stamp + t_d;
  std::vector<Vec3> all;
  std::size_t total = keyframe.points.size();
  for (const auto& f : intermediates) total += f.points.size();
  all.reserve(total);
  for (const auto& pt : keyframe.points) all.push_back(pt.p);
  if (!intermediates.empty()) {
    if (!buffer.covers(epoch)) throw Error("build_keyframe_map: INS buffer gap");
    const Pose kf_inv = lidar_pose(buffer, ext, epoch).inverse();
    for (const auto& f : intermediates) {
      const double t = f.stamp + t_d;
      if (!buffer.covers(t)) throw Error("build_keyframe_map: INS buffer gap");
      const Pose rel = kf_inv * lidar_pose(buffer, ext, t);
      for (const auto& pt : f.points) all.push_back(rel.transform(pt.p));
    }
  }
  return KeyframeMap(id, epoch, voxel_downsample(std::span<const Vec3>(all), leaf));
}

}  // namespace f2f
