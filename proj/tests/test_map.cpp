#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "pointfields/neural_point_map.hpp"
#include "pointfields/random.hpp"

using namespace pf;

namespace {

std::vector<Neighbor> brute_force_knn(const NeuralPointMap& map, const Vec3& p,
                                      int k, double max_radius,
                                      const std::vector<uint8_t>* mask = nullptr) {
  std::vector<Neighbor> all;
  for (uint32_t i = 0; i < map.size(); ++i) {
    if (mask && !(*mask)[i]) continue;
    auto active = map.point_at_voxel(map.point(i).position);
    if (!active || *active != i) continue;
    const double d = (map.point(i).position - p).norm();
    if (d <= max_radius) all.push_back({i, d});
  }
  std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
    return a.dist < b.dist || (a.dist == b.dist && a.index < b.index);
  });
  if (int(all.size()) > k) all.resize(size_t(k));
  return all;
}

}  // namespace

TEST_CASE("insert: empty map, one point") {
  NeuralPointMap map(0.3);
  const Vec3 p(1.0, 2.0, 3.0);
  CHECK(map.insert_scan(std::span<const Vec3>(&p, 1), 0) == 1);
  REQUIRE(map.size() == 1);
  const NeuralPoint& np = map.point(0);
  CHECK(np.position == p);
  CHECK(np.orientation.w == 1.0);
  CHECK(np.orientation.x == 0.0);
  CHECK(np.created == 0);
  CHECK(np.updated == 0);
  for (int i = 0; i < map.fg_dim(); ++i) CHECK(map.fg(0)[i] == 0.0f);
  for (int i = 0; i < map.fa_dim(); ++i) CHECK(map.fa(0)[i] == 0.0f);
}

TEST_CASE("insert: one point per voxel") {
  NeuralPointMap map(0.3);
  std::vector<Vec3> pts = {{0.10, 0.10, 0.10}, {0.11, 0.12, 0.13}};
  CHECK(map.insert_scan(pts, 0) == 1);
  CHECK(map.size() == 1);
}

TEST_CASE("insert: reobservation updates the stamp only") {
  NeuralPointMap map(0.3);
  std::vector<Vec3> pts = {{0.10, 0.10, 0.10}};
  map.insert_scan(pts, 0);
  CHECK(map.insert_scan(pts, 5) == 0);
  CHECK(map.size() == 1);
  CHECK(map.point(0).updated == 5);
  CHECK(map.point(0).created == 0);
  CHECK(map.point(0).assoc_frame() == 2);  // floor(5/2)
}

TEST_CASE("insert ignores non-finite points, empty scan is a no-op") {
  NeuralPointMap map(0.3);
  std::vector<Vec3> pts = {{std::nan(""), 0, 0}};
  CHECK(map.insert_scan(pts, 0) == 0);
  CHECK(map.insert_scan(std::span<const Vec3>{}, 0) == 0);
  CHECK(map.size() == 0);
}

TEST_CASE("one active point per voxel after random insert sequences") {
  Rng rng = make_rng(99);
  NeuralPointMap map(0.25);
  for (int t = 0; t < 10; ++t) {
    std::vector<Vec3> scan;
    for (int i = 0; i < 500; ++i) {
      scan.emplace_back(uniform(rng, -2, 2), uniform(rng, -2, 2), uniform(rng, -2, 2));
    }
    map.insert_scan(scan, t);
  }
  // Every point's voxel resolves to exactly one active index and no two
  // points share a voxel.
  std::vector<uint32_t> seen;
  for (uint32_t i = 0; i < map.size(); ++i) {
    auto idx = map.point_at_voxel(map.point(i).position);
    REQUIRE(idx.has_value());
    CHECK(*idx == i);
  }
}

TEST_CASE("knn: single point, empty result beyond radius") {
  NeuralPointMap map(0.3);
  std::vector<Vec3> pts = {{0.1, 0.0, 0.0}};
  map.insert_scan(pts, 0);
  auto res = map.knn(Vec3(0, 0, 0), 6, 0.9);
  REQUIRE(res.size() == 1);
  CHECK(res[0].index == 0);
  CHECK(res[0].dist == doctest::Approx(0.1));
  CHECK(map.knn(Vec3(50, 50, 50), 6, 0.9).empty());
}

TEST_CASE("knn matches exhaustive search on random maps") {
  Rng rng = make_rng(7);
  NeuralPointMap map(0.3);
  std::vector<Vec3> scan;
  for (int i = 0; i < 10000; ++i) {
    scan.emplace_back(uniform(rng, -5, 5), uniform(rng, -5, 5), uniform(rng, -5, 5));
  }
  map.insert_scan(scan, 0);
  for (int q = 0; q < 1000; ++q) {
    const Vec3 p(uniform(rng, -5.5, 5.5), uniform(rng, -5.5, 5.5), uniform(rng, -5.5, 5.5));
    const int k = 1 + int(uniform_index(rng, 20));
    const double r = uniform(rng, 0.2, 1.2);
    auto got = map.knn(p, k, r);
    auto want = brute_force_knn(map, p, k, r);
    REQUIRE(got.size() == want.size());
    for (size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].dist == doctest::Approx(want[i].dist).epsilon(1e-12));
      CHECK(got[i].index == want[i].index);
    }
    // Ascending distance, all within the radius.
    for (size_t i = 1; i < got.size(); ++i) CHECK(got[i].dist >= got[i - 1].dist);
    for (const auto& n : got) CHECK(n.dist <= r);
  }
}

TEST_CASE("local map: membership and boundary") {
  NeuralPointMap map(0.3);
  std::vector<Vec3> pts = {{1.0, 0, 0}, {2.0, 0, 0}, {2.0 + 1e-4, 0, 1e-4}};
  map.insert_scan(pts, 0);
  auto local = map.extract_local_map(Vec3::Zero(), 2.0);
  CHECK(local.indices.size() == 2);
  CHECK(local.contains(0));
  CHECK(local.contains(1));
  CHECK(!local.contains(2));

  auto all = map.extract_local_map(Vec3::Zero(), 10.0);
  CHECK(all.indices.size() == 3);
}

TEST_CASE("local map matches brute-force radius filter") {
  Rng rng = make_rng(21);
  NeuralPointMap map(0.3);
  std::vector<Vec3> scan;
  for (int i = 0; i < 3000; ++i) {
    scan.emplace_back(uniform(rng, -4, 4), uniform(rng, -4, 4), uniform(rng, -4, 4));
  }
  map.insert_scan(scan, 0);
  for (int q = 0; q < 20; ++q) {
    const Vec3 c(uniform(rng, -2, 2), uniform(rng, -2, 2), uniform(rng, -2, 2));
    const double r = uniform(rng, 0.5, 3.0);
    auto local = map.extract_local_map(c, r);
    size_t count = 0;
    for (uint32_t i = 0; i < map.size(); ++i) {
      if ((map.point(i).position - c).norm() <= r) {
        ++count;
        CHECK(local.contains(i));
      } else {
        CHECK(!local.contains(i));
      }
    }
    CHECK(local.indices.size() == count);
  }
}

TEST_CASE("pose correction: identity is a no-op, translation shifts") {
  Rng rng = make_rng(33);
  NeuralPointMap map(0.3);
  std::vector<Vec3> scan;
  for (int i = 0; i < 200; ++i) {
    scan.emplace_back(uniform(rng, -2, 2), uniform(rng, -2, 2), uniform(rng, -2, 2));
  }
  map.insert_scan(scan, 0);
  std::vector<Vec3> before;
  for (uint32_t i = 0; i < map.size(); ++i) before.push_back(map.point(i).position);

  std::unordered_map<int32_t, Pose> ident;
  ident[0] = Pose::identity();
  map.apply_pose_correction(ident);
  for (uint32_t i = 0; i < map.size(); ++i) {
    CHECK((map.point(i).position - before[i]).norm() == 0.0);
    CHECK(map.point(i).orientation.w == 1.0);
  }

  Pose shift{Quat::identity(), Vec3(1.5, -0.5, 2.0)};
  std::unordered_map<int32_t, Pose> corr;
  corr[0] = shift;
  map.apply_pose_correction(corr);
  for (uint32_t i = 0; i < map.size(); ++i) {
    CHECK((map.point(i).position - (before[i] + shift.translation)).norm() < 1e-12);
    CHECK(map.point(i).orientation.w == 1.0);  // pure translation keeps q
  }
  // A missing frame id means identity.
  std::unordered_map<int32_t, Pose> other;
  other[77] = shift;
  std::vector<Vec3> mid;
  for (uint32_t i = 0; i < map.size(); ++i) mid.push_back(map.point(i).position);
  map.apply_pose_correction(other);
  for (uint32_t i = 0; i < map.size(); ++i) {
    CHECK((map.point(i).position - mid[i]).norm() == 0.0);
  }
}

TEST_CASE("pose correction: rotation pre-multiplies orientations") {
  NeuralPointMap map(0.3);
  std::vector<Vec3> pts = {{1.0, 0.0, 0.5}};
  map.insert_scan(pts, 0);
  const Quat yaw = Quat::from_axis_angle(Vec3(0, 0, 1), M_PI / 2);
  std::unordered_map<int32_t, Pose> corr;
  corr[0] = Pose{yaw, Vec3(0.2, 0, 0)};
  map.apply_pose_correction(corr);
  const Vec3 want = yaw.rotate(Vec3(1.0, 0.0, 0.5)) + Vec3(0.2, 0, 0);
  CHECK((map.point(0).position - want).norm() < 1e-12);
  const Quat q = map.point(0).orientation;
  const Quat expect = yaw * Quat::identity();
  CHECK(q.w == doctest::Approx(expect.w));
  CHECK(q.z == doctest::Approx(expect.z));
}

TEST_CASE("serialize: empty and 10k random points round-trip bit-exact") {
  {
    NeuralPointMap map(0.4, 32, 16);
    std::stringstream buf;
    map.serialize(buf, "decoders.bin");
    std::string ref;
    NeuralPointMap back = NeuralPointMap::deserialize(buf, &ref);
    CHECK(back.size() == 0);
    CHECK(back.voxel_size() == 0.4);
    CHECK(ref == "decoders.bin");
  }
  Rng rng = make_rng(5);
  NeuralPointMap map(0.2);
  std::vector<Vec3> scan;
  for (int i = 0; i < 30000; ++i) {
    scan.emplace_back(uniform(rng, -8, 8), uniform(rng, -8, 8), uniform(rng, -8, 8));
  }
  map.insert_scan(scan, 3);
  for (uint32_t i = 0; i < map.size(); ++i) {
    for (int c = 0; c < 32; ++c) map.fg(i)[c] = float(normal(rng, 0, 1));
    for (int c = 0; c < 16; ++c) map.fa(i)[c] = float(normal(rng, 0, 1));
  }
  map.set_spawn_enabled(0, false);
  std::stringstream buf;
  map.serialize(buf, "d.bin");
  const std::string bytes1 = buf.str();
  NeuralPointMap back = NeuralPointMap::deserialize(buf, nullptr);
  REQUIRE(back.size() == map.size());
  for (uint32_t i = 0; i < map.size(); ++i) {
    CHECK(back.point(i).position == map.point(i).position);
    CHECK(back.point(i).orientation.w == map.point(i).orientation.w);
    CHECK(back.point(i).created == map.point(i).created);
    CHECK(back.point(i).updated == map.point(i).updated);
    for (int c = 0; c < 32; ++c) CHECK(back.fg(i)[c] == map.fg(i)[c]);
    for (int c = 0; c < 16; ++c) CHECK(back.fa(i)[c] == map.fa(i)[c]);
  }
  CHECK(!back.spawn_enabled(0));
  CHECK(back.spawn_enabled(1));
  // Serializing the deserialized map reproduces the same bytes.
  std::stringstream buf2;
  back.serialize(buf2, "d.bin");
  CHECK(buf2.str() == bytes1);
}

TEST_CASE("deserialize rejects corrupt input") {
  std::stringstream bad("PFMAPxxx garbage");
  CHECK_THROWS_AS(NeuralPointMap::deserialize(bad, nullptr), std::runtime_error);
  // Truncated stream.
  NeuralPointMap map(0.3);
  std::vector<Vec3> pts = {{0, 0, 0}};
  map.insert_scan(pts, 0);
  std::stringstream buf;
  map.serialize(buf, "");
  std::string s = buf.str();
  s.resize(s.size() / 2);
  std::stringstream half(s);
  CHECK_THROWS_AS(NeuralPointMap::deserialize(half, nullptr), std::runtime_error);
}
