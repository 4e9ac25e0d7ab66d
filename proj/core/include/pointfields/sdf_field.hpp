// Copyright Contributors to the pointfields Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <vector>

#include "pointfields/decoders.hpp"
#include "pointfields/grad_sink.hpp"
#include "pointfields/neural_point_map.hpp"
#include "pointfields/random.hpp"

namespace pf {

/// One labeled training point. The pseudo label is the projective signed
/// distance along its ray, positive on the free-space side, clamped to the
/// truncation band.
struct SdfSample {
  Eigen::Vector3f position = Eigen::Vector3f::Zero();
  float label = 0.0f;
  float weight = 1.0f;
  Eigen::Vector3f ray_origin = Eigen::Vector3f::Zero();
  int32_t timestep = 0;
};

struct SdfLossWeights {
  double bce = 1.0;
  double eik = 0.5;
};

struct RaySamplingConfig {
  int n_surface = 3;
  int n_free = 3;
  double free_min_frac = 0.3;  // free-space samples start at this ray fraction
  double min_range = 0.1;      // shorter rays are skipped
};

/// Samples points along sensor rays: n_surface within the truncation band of
/// the endpoint plus n_free in free space with the clamped label.
std::vector<SdfSample> sample_rays(std::span<const Vec3> endpoints_world,
                                   const Vec3& sensor_origin, int32_t t,
                                   const ModelConfig& cfg,
                                   const RaySamplingConfig& rs, Rng& rng);

struct SdfQuery {
  double value = 0.0;
  std::vector<Neighbor> contributors;
};

/// Inverse-squared-distance interpolation of the per-neighbor decoded values.
/// Returns nullopt when no neighbor lies within the search radius
/// (the "unobserved" result).
std::optional<SdfQuery> predict_sdf(const LocalMap& local, const Decoders& dec,
                                    const Vec3& p);

/// Analytic field gradient through the interpolation weights and decoder.
std::optional<Vec3> sdf_gradient(const LocalMap& local, const Decoders& dec,
                                 const Vec3& p);

/// Batched field evaluation with fixed per-sample neighbor sets. Forward
/// fills values; backward routes gradients to features, the SDF decoder and
/// optionally the query positions.
class SdfBatch {
 public:
  static SdfBatch build(const LocalMap& local, const Decoders& dec,
                        std::span<const Vec3> positions);
  /// Reuses base's neighbor sets (row-aligned); used for finite-difference
  /// probes around the same points.
  static SdfBatch build_shifted(const LocalMap& local, const Decoders& dec,
                                std::span<const Vec3> positions,
                                const SdfBatch& base,
                                std::span<const uint32_t> base_rows);

  void forward(const Decoders& dec, bool keep_tape);
  /// upstream is d(loss)/d(value) per sample. Requires forward(keep_tape).
  void backward(const Decoders& dec, const Eigen::VectorXd& upstream,
                GradSink* sink, std::vector<Vec3>* dposition);

  size_t size() const { return positions_.size(); }
  const Eigen::VectorXd& values() const { return values_; }
  const std::vector<uint8_t>& observed() const { return observed_; }
  size_t neighbor_count(size_t sample) const {
    return pair_offset_[sample + 1] - pair_offset_[sample];
  }

 private:
  friend class SdfBatchTestPeer;
  const NeuralPointMap* map_ = nullptr;
  std::vector<Vec3> positions_;
  std::vector<uint32_t> pair_offset_;  // CSR over samples
  std::vector<uint32_t> pair_point_;
  MatX<float> inputs_;                 // pairs x (fg + 3)
  std::vector<double> wbar_;           // normalized interpolation weight
  std::vector<double> dw_scale_;       // d(raw weight)/d(p) factor, 0 if clamped
  std::vector<float> s_pair_;
  Eigen::VectorXd values_;
  std::vector<uint8_t> observed_;
  std::vector<Tape<float>> tapes_;     // one per worker chunk
  std::vector<std::pair<size_t, size_t>> chunk_samples_;
  bool has_tape_ = false;

  void build_inputs(const Decoders& dec);
};

struct SdfLossResult {
  double total = 0.0;
  double bce = 0.0;
  double eik = 0.0;
  size_t observed_samples = 0;
  size_t eikonal_samples = 0;
  bool finite = true;
};

struct SdfLossConfig {
  size_t eikonal_stride = 1;  // evaluate the Eikonal term on every n-th sample
  double eikonal_step = 0.0;  // finite-difference step; 0 = voxel_size / 4
};

/// BCE soft supervision plus the Eikonal regularizer; gradients accumulate
/// into the sink (geometric features and SDF decoder). Throws
/// std::invalid_argument on an empty batch.
SdfLossResult sdf_loss(std::span<const SdfSample> batch, const LocalMap& local,
                       const Decoders& dec, const SdfLossWeights& weights,
                       const SdfLossConfig& cfg, GradSink& sink);

}  // namespace pf
