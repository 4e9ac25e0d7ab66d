// Copyright Contributors to the pointfields Project
// SPDX-License-Identifier: Apache-2.0
#include "pointfields/neural_point_map.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace pf {

namespace {

uint64_t voxel_hash(const VoxelKey& k) {
  return (uint64_t(uint32_t(k.x)) * 73856093ull) ^
         (uint64_t(uint32_t(k.y)) * 19349669ull) ^
         (uint64_t(uint32_t(k.z)) * 83492791ull);
}

constexpr char kMapMagic[8] = {'P', 'F', 'M', 'A', 'P', '0', '0', '1'};
constexpr uint32_t kMapVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("map file: truncated stream");
  return v;
}

}  // namespace

VoxelHashIndex::VoxelHashIndex(double voxel_size)
    : voxel_size_(voxel_size), slots_(1024) {}

VoxelKey VoxelHashIndex::key_of(const Vec3& p) const {
  return {int32_t(std::floor(p.x() / voxel_size_)),
          int32_t(std::floor(p.y() / voxel_size_)),
          int32_t(std::floor(p.z() / voxel_size_))};
}

size_t VoxelHashIndex::probe(const VoxelKey& key) const {
  const size_t mask = slots_.size() - 1;
  size_t at = voxel_hash(key) & mask;
  while (slots_[at].used && !(slots_[at].key == key)) {
    at = (at + 1) & mask;
  }
  return at;
}

std::optional<uint32_t> VoxelHashIndex::find(const VoxelKey& key) const {
  const Slot& s = slots_[probe(key)];
  if (s.used) return s.index;
  return std::nullopt;
}

std::optional<uint32_t> VoxelHashIndex::put(const VoxelKey& key, uint32_t index) {
  if (2 * (occupied_ + 1) > slots_.size()) grow();
  Slot& s = slots_[probe(key)];
  std::optional<uint32_t> prev;
  if (s.used) {
    prev = s.index;
  } else {
    s.used = true;
    s.key = key;
    ++occupied_;
  }
  s.index = index;
  return prev;
}

void VoxelHashIndex::grow() {
  std::vector<Slot> old;
  old.swap(slots_);
  slots_.assign(old.size() * 2, Slot{});
  occupied_ = 0;
  for (const Slot& s : old) {
    if (s.used) put(s.key, s.index);
  }
}

void VoxelHashIndex::clear() {
  std::fill(slots_.begin(), slots_.end(), Slot{});
  occupied_ = 0;
}

NeuralPointMap::NeuralPointMap(double voxel_size, int fg_dim, int fa_dim)
    : fg_dim_(fg_dim), fa_dim_(fa_dim), hash_(voxel_size) {}

size_t NeuralPointMap::insert_scan(std::span<const Vec3> world_points, int32_t t) {
  size_t created = 0;
  for (const Vec3& p : world_points) {
    if (!p.allFinite()) continue;
    const VoxelKey key = hash_.key_of(p);
    if (auto existing = hash_.find(key)) {
      points_[*existing].updated = std::max(points_[*existing].updated, t);
      continue;
    }
    NeuralPoint np;
    np.position = p;
    np.orientation = Quat::identity();
    np.created = t;
    np.updated = t;
    points_.push_back(np);
    fg_.insert(fg_.end(), size_t(fg_dim_), 0.0f);
    fa_.insert(fa_.end(), size_t(fa_dim_), 0.0f);
    spawn_enabled_.push_back(1);
    hash_.put(key, uint32_t(points_.size() - 1));
    ++created;
  }
  return created;
}

std::vector<Neighbor> NeuralPointMap::knn(const Vec3& p, int k, double max_radius,
                                          const std::vector<uint8_t>* mask) const {
  std::vector<Neighbor> best;
  if (points_.empty() || k <= 0) return best;
  const double v = hash_.voxel_size();
  const VoxelKey c = hash_.key_of(p);
  // Points in an unvisited shell m are at least (m-1)*v away, so the scan
  // can stop once k candidates beat that bound or max_radius is covered.
  const int last_shell = int(std::floor(max_radius / v)) + 1;
  for (int s = 0; s <= last_shell; ++s) {
    if (int(best.size()) >= k && best.back().dist <= double(s - 1) * v) break;
    for (int dx = -s; dx <= s; ++dx) {
      for (int dy = -s; dy <= s; ++dy) {
        for (int dz = -s; dz <= s; ++dz) {
          if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != s) continue;
          auto idx = hash_.find({c.x + dx, c.y + dy, c.z + dz});
          if (!idx) continue;
          if (mask && !((*mask)[*idx])) continue;
          const double d = (points_[*idx].position - p).norm();
          if (d > max_radius) continue;
          Neighbor n{*idx, d};
          auto pos = std::lower_bound(best.begin(), best.end(), n,
                                      [](const Neighbor& a, const Neighbor& b) {
                                        return a.dist < b.dist ||
                                               (a.dist == b.dist && a.index < b.index);
                                      });
          best.insert(pos, n);
          if (int(best.size()) > k) best.pop_back();
        }
      }
    }
  }
  return best;
}

LocalMap NeuralPointMap::extract_local_map(const Vec3& center, double radius) const {
  LocalMap local;
  local.map = this;
  local.center = center;
  local.radius = radius;
  local.member.assign(points_.size(), 0);
  const double r2 = radius * radius;
  for (uint32_t i = 0; i < points_.size(); ++i) {
    // Only points holding their voxel slot are active.
    auto slot = hash_.find(hash_.key_of(points_[i].position));
    if (!slot || *slot != i) continue;
    if ((points_[i].position - center).squaredNorm() <= r2) {
      local.indices.push_back(i);
      local.member[i] = 1;
    }
  }
  return local;
}

std::vector<Neighbor> LocalMap::knn(const Vec3& p, int k, double max_radius) const {
  return map->knn(p, k, max_radius, &member);
}

void NeuralPointMap::apply_pose_correction(
    const std::unordered_map<int32_t, Pose>& corrections) {
  for (auto& np : points_) {
    auto it = corrections.find(np.assoc_frame());
    if (it == corrections.end()) continue;
    const Pose& dt = it->second;
    np.position = dt.apply(np.position);
    np.orientation = dt.rotation * np.orientation;
  }
  rebuild_hash();
}

void NeuralPointMap::rebuild_hash() {
  hash_.clear();
  for (uint32_t i = 0; i < points_.size(); ++i) {
    const VoxelKey key = hash_.key_of(points_[i].position);
    auto prev = hash_.find(key);
    if (prev) {
      // Keep the most recently updated point as the voxel's active one.
      const NeuralPoint& a = points_[*prev];
      const NeuralPoint& b = points_[i];
      if (b.updated > a.updated || (b.updated == a.updated && i > *prev)) {
        hash_.put(key, i);
      }
    } else {
      hash_.put(key, i);
    }
  }
}

std::optional<uint32_t> NeuralPointMap::point_at_voxel(const Vec3& p) const {
  return hash_.find(hash_.key_of(p));
}

void NeuralPointMap::serialize(std::ostream& out, const std::string& decoder_ref) const {
  out.write(kMapMagic, sizeof(kMapMagic));
  write_pod<uint32_t>(out, kMapVersion);
  write_pod<double>(out, hash_.voxel_size());
  write_pod<uint32_t>(out, uint32_t(fg_dim_));
  write_pod<uint32_t>(out, uint32_t(fa_dim_));
  write_pod<uint32_t>(out, uint32_t(decoder_ref.size()));
  out.write(decoder_ref.data(), std::streamsize(decoder_ref.size()));
  write_pod<uint64_t>(out, uint64_t(points_.size()));
  for (uint32_t i = 0; i < points_.size(); ++i) {
    const NeuralPoint& np = points_[i];
    write_pod<double>(out, np.position.x());
    write_pod<double>(out, np.position.y());
    write_pod<double>(out, np.position.z());
    write_pod<float>(out, float(np.orientation.w));
    write_pod<float>(out, float(np.orientation.x));
    write_pod<float>(out, float(np.orientation.y));
    write_pod<float>(out, float(np.orientation.z));
    write_pod<int32_t>(out, np.created);
    write_pod<int32_t>(out, np.updated);
    write_pod<uint8_t>(out, spawn_enabled_[i]);
    out.write(reinterpret_cast<const char*>(fg(i)), std::streamsize(fg_dim_ * 4));
    out.write(reinterpret_cast<const char*>(fa(i)), std::streamsize(fa_dim_ * 4));
  }
}

NeuralPointMap NeuralPointMap::deserialize(std::istream& in, std::string* decoder_ref) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMapMagic, 8) != 0) {
    throw std::runtime_error("map file: bad magic");
  }
  const uint32_t version = read_pod<uint32_t>(in);
  if (version != kMapVersion) {
    throw std::runtime_error("map file: unsupported version " + std::to_string(version));
  }
  const double voxel = read_pod<double>(in);
  const uint32_t fg_dim = read_pod<uint32_t>(in);
  const uint32_t fa_dim = read_pod<uint32_t>(in);
  const uint32_t ref_len = read_pod<uint32_t>(in);
  std::string ref(ref_len, '\0');
  in.read(ref.data(), ref_len);
  if (!in) throw std::runtime_error("map file: truncated header");
  if (decoder_ref) *decoder_ref = ref;

  NeuralPointMap map(voxel, int(fg_dim), int(fa_dim));
  const uint64_t count = read_pod<uint64_t>(in);
  map.points_.reserve(count);
  map.fg_.reserve(count * fg_dim);
  map.fa_.reserve(count * fa_dim);
  for (uint64_t i = 0; i < count; ++i) {
    NeuralPoint np;
    np.position.x() = read_pod<double>(in);
    np.position.y() = read_pod<double>(in);
    np.position.z() = read_pod<double>(in);
    np.orientation.w = read_pod<float>(in);
    np.orientation.x = read_pod<float>(in);
    np.orientation.y = read_pod<float>(in);
    np.orientation.z = read_pod<float>(in);
    np.created = read_pod<int32_t>(in);
    np.updated = read_pod<int32_t>(in);
    const uint8_t enabled = read_pod<uint8_t>(in);
    map.points_.push_back(np);
    map.spawn_enabled_.push_back(enabled);
    const size_t fg_at = map.fg_.size();
    map.fg_.resize(fg_at + fg_dim);
    in.read(reinterpret_cast<char*>(map.fg_.data() + fg_at), std::streamsize(fg_dim * 4));
    const size_t fa_at = map.fa_.size();
    map.fa_.resize(fa_at + fa_dim);
    in.read(reinterpret_cast<char*>(map.fa_.data() + fa_at), std::streamsize(fa_dim * 4));
    if (!in) throw std::runtime_error("map file: truncated point records");
  }
  map.rebuild_hash();
  return map;
}

}  // namespace pf
