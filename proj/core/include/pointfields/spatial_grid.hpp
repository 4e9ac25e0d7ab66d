// Copyright Contributors to the pointfields Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <unordered_map>
#include <vector>

#include "pointfields/geometry.hpp"

namespace pf {

/// Voxel-binned index over a fixed point set for exact nearest-neighbor
/// queries (shell expansion until the best candidate provably wins).
class SpatialGrid {
 public:
  SpatialGrid() = default;
  SpatialGrid(const std::vector<Vec3>& points, double cell);

  size_t size() const { return points_.size(); }

  /// Exact nearest neighbor; nullopt for an empty grid.
  std::optional<std::pair<uint32_t, double>> nearest(const Vec3& q) const;

  /// Indices of all points within radius of q.
  std::vector<uint32_t> radius_query(const Vec3& q, double radius) const;

 private:
  struct KeyHash {
    size_t operator()(uint64_t k) const { return k * 0x9E3779B97F4A7C15ull; }
  };
  uint64_t key_of(int ix, int iy, int iz) const;
  void cell_of(const Vec3& p, int& ix, int& iy, int& iz) const;

  std::vector<Vec3> points_;
  double cell_ = 1.0;
  std::unordered_map<uint64_t, std::vector<uint32_t>, KeyHash> cells_;
  int max_shell_ = 0;
};

/// Keeps one representative point per voxel (the first seen); used to thin
/// scans before registration.
std::vector<Vec3> voxel_downsample(const std::vector<Vec3>& points, double cell);

}  // namespace pf
