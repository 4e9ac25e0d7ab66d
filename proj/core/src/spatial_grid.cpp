// Copyright Contributors to the pointfields Project
// SPDX-License-Identifier: Apache-2.0
#include "pointfields/spatial_grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pf {

namespace {
int64_t floor_div(double v, double cell) {
  return int64_t(std::floor(v / cell));
}
}  // namespace

SpatialGrid::SpatialGrid(const std::vector<Vec3>& points, double cell)
    : points_(points), cell_(cell) {
  int min_c[3] = {0, 0, 0}, max_c[3] = {0, 0, 0};
  bool first = true;
  for (uint32_t i = 0; i < points_.size(); ++i) {
    int ix, iy, iz;
    cell_of(points_[i], ix, iy, iz);
    cells_[key_of(ix, iy, iz)].push_back(i);
    const int c[3] = {ix, iy, iz};
    for (int a = 0; a < 3; ++a) {
      min_c[a] = first ? c[a] : std::min(min_c[a], c[a]);
      max_c[a] = first ? c[a] : std::max(max_c[a], c[a]);
    }
    first = false;
  }
  for (int a = 0; a < 3; ++a) max_shell_ = std::max(max_shell_, max_c[a] - min_c[a] + 1);
}

uint64_t SpatialGrid::key_of(int ix, int iy, int iz) const {
  return (uint64_t(uint32_t(ix)) * 73856093ull) ^
         (uint64_t(uint32_t(iy)) * 19349669ull) ^
         (uint64_t(uint32_t(iz)) * 83492791ull);
}

void SpatialGrid::cell_of(const Vec3& p, int& ix, int& iy, int& iz) const {
  ix = int(floor_div(p.x(), cell_));
  iy = int(floor_div(p.y(), cell_));
  iz = int(floor_div(p.z(), cell_));
}

std::optional<std::pair<uint32_t, double>> SpatialGrid::nearest(const Vec3& q) const {
  if (points_.empty()) return std::nullopt;
  int cx, cy, cz;
  cell_of(q, cx, cy, cz);
  double best = std::numeric_limits<double>::infinity();
  uint32_t best_idx = 0;
  for (int s = 0; s <= max_shell_ + 1; ++s) {
    // Once a candidate is closer than the nearest possible point in the next
    // shell, the search is complete.
    if (best < double(s - 1) * cell_) break;
    for (int dx = -s; dx <= s; ++dx) {
      for (int dy = -s; dy <= s; ++dy) {
        for (int dz = -s; dz <= s; ++dz) {
          if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != s) continue;
          auto it = cells_.find(key_of(cx + dx, cy + dy, cz + dz));
          if (it == cells_.end()) continue;
          for (uint32_t i : it->second) {
            const double d = (points_[i] - q).norm();
            if (d < best) {
              best = d;
              best_idx = i;
            }
          }
        }
      }
    }
  }
  return std::make_pair(best_idx, best);
}

std::vector<uint32_t> SpatialGrid::radius_query(const Vec3& q, double radius) const {
  std::vector<uint32_t> out;
  int cx, cy, cz;
  cell_of(q, cx, cy, cz);
  const int s = int(std::ceil(radius / cell_)) + 1;
  for (int dx = -s; dx <= s; ++dx) {
    for (int dy = -s; dy <= s; ++dy) {
      for (int dz = -s; dz <= s; ++dz) {
        auto it = cells_.find(key_of(cx + dx, cy + dy, cz + dz));
        if (it == cells_.end()) continue;
        for (uint32_t i : it->second) {
          if ((points_[i] - q).norm() <= radius) out.push_back(i);
        }
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<Vec3> voxel_downsample(const std::vector<Vec3>& points, double cell) {
  std::unordered_map<uint64_t, bool> seen;
  seen.reserve(points.size() * 2);
  std::vector<Vec3> out;
  for (const auto& p : points) {
    const uint64_t key = (uint64_t(uint32_t(int(std::floor(p.x() / cell)))) * 73856093ull) ^
                         (uint64_t(uint32_t(int(std::floor(p.y() / cell)))) * 19349669ull) ^
                         (uint64_t(uint32_t(int(std::floor(p.z() / cell)))) * 83492791ull);
    if (!seen.emplace(key, true).second) continue;
    out.push_back(p);
  }
  return out;
}

}  // namespace pf
