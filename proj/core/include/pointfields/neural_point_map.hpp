// Copyright Contributors to the pointfields Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "pointfields/geometry.hpp"

namespace pf {

/// Map element anchoring both fields: a pose plus latent feature vectors
/// (features live in the owning map's arrays).
struct NeuralPoint {
  Vec3 position = Vec3::Zero();
  Quat orientation;
  int32_t created = 0;
  int32_t updated = 0;

  /// Frame whose pose correction moves this point.
  int32_t assoc_frame() const {
    return int32_t(std::floor(0.5 * (double(created) + double(updated))));
  }
};

struct Neighbor {
  uint32_t index = 0;
  double dist = 0.0;
};

struct VoxelKey {
  int32_t x = 0, y = 0, z = 0;
  bool operator==(const VoxelKey&) const = default;
};

/// Open-addressed voxel table; each voxel holds at most one active point.
class VoxelHashIndex {
 public:
  explicit VoxelHashIndex(double voxel_size = 0.3);

  double voxel_size() const { return voxel_size_; }
  VoxelKey key_of(const Vec3& p) const;

  std::optional<uint32_t> find(const VoxelKey& key) const;
  /// Inserts or replaces the slot for key. Returns the previous occupant.
  std::optional<uint32_t> put(const VoxelKey& key, uint32_t index);
  size_t occupied() const { return occupied_; }
  void clear();

 private:
  struct Slot {
    VoxelKey key;
    uint32_t index = 0;
    bool used = false;
  };
  size_t probe(const VoxelKey& key) const;
  void grow();

  double voxel_size_;
  std::vector<Slot> slots_;
  size_t occupied_ = 0;
};

class NeuralPointMap;

/// View of the active points within a radius; map optimization, odometry and
/// spawning operate on this view only.
struct LocalMap {
  const NeuralPointMap* map = nullptr;
  Vec3 center = Vec3::Zero();
  double radius = 0.0;
  std::vector<uint32_t> indices;
  std::vector<uint8_t> member;  // mask over all map points

  bool contains(uint32_t i) const { return i < member.size() && member[i]; }
  std::vector<Neighbor> knn(const Vec3& p, int k, double max_radius) const;
};

class NeuralPointMap {
 public:
  explicit NeuralPointMap(double voxel_size = 0.3, int fg_dim = 32, int fa_dim = 16);

  size_t size() const { return points_.size(); }
  double voxel_size() const { return hash_.voxel_size(); }
  int fg_dim() const { return fg_dim_; }
  int fa_dim() const { return fa_dim_; }

  /// Creates one point per newly occupied voxel (identity orientation, zero
  /// features); refreshes the update stamp of points in re-observed voxels.
  /// Returns the number of new points. Non-finite points are ignored.
  size_t insert_scan(std::span<const Vec3> world_points, int32_t t);

  /// k nearest active points within max_radius, ascending distance, ties
  /// broken by index. Exact (shell expansion over the voxel table).
  std::vector<Neighbor> knn(const Vec3& p, int k, double max_radius,
                            const std::vector<uint8_t>* mask = nullptr) const;

  LocalMap extract_local_map(const Vec3& center, double radius) const;

  /// Moves each point with its associated frame's correction (position and
  /// orientation pre-multiplied); missing frames mean identity. Rebuilds the
  /// voxel table afterwards.
  void apply_pose_correction(const std::unordered_map<int32_t, Pose>& corrections);

  const NeuralPoint& point(uint32_t i) const { return points_[i]; }
  const std::vector<NeuralPoint>& points() const { return points_; }
  std::optional<uint32_t> point_at_voxel(const Vec3& p) const;

  float* fg(uint32_t i) { return fg_.data() + size_t(i) * fg_dim_; }
  const float* fg(uint32_t i) const { return fg_.data() + size_t(i) * fg_dim_; }
  float* fa(uint32_t i) { return fa_.data() + size_t(i) * fa_dim_; }
  const float* fa(uint32_t i) const { return fa_.data() + size_t(i) * fa_dim_; }

  bool spawn_enabled(uint32_t i) const { return spawn_enabled_[i] != 0; }
  void set_spawn_enabled(uint32_t i, bool on) { spawn_enabled_[i] = on ? 1 : 0; }

  void rebuild_hash();

  /// Binary round-trip; the header records voxel size, feature dims and a
  /// reference to the decoder snapshot file.
  void serialize(std::ostream& out, const std::string& decoder_ref) const;
  static NeuralPointMap deserialize(std::istream& in, std::string* decoder_ref);

 private:
  friend struct LocalMap;
  int fg_dim_;
  int fa_dim_;
  std::vector<NeuralPoint> points_;
  std::vector<float> fg_;
  std::vector<float> fa_;
  std::vector<uint8_t> spawn_enabled_;
  VoxelHashIndex hash_;
};

}  // namespace pf
