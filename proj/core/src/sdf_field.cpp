// Copyright Contributors to the pointfields Project
// SPDX-License-Identifier: Apache-2.0
#include "pointfields/sdf_field.hpp"

#include <cmath>
#include <stdexcept>

#include "pointfields/parallel.hpp"

namespace pf {

namespace {
constexpr double kMinSquaredDist = 1e-12;

double stable_sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}
}  // namespace

std::vector<SdfSample> sample_rays(std::span<const Vec3> endpoints_world,
                                   const Vec3& sensor_origin, int32_t t,
                                   const ModelConfig& cfg,
                                   const RaySamplingConfig& rs, Rng& rng) {
  std::vector<SdfSample> out;
  out.reserve(endpoints_world.size() * size_t(rs.n_surface + rs.n_free));
  const double trunc = cfg.truncation();
  const Eigen::Vector3f origin_f = sensor_origin.cast<float>();
  for (const Vec3& e : endpoints_world) {
    const Vec3 delta = e - sensor_origin;
    const double range = delta.norm();
    if (!(range > rs.min_range) || !std::isfinite(range)) continue;
    const Vec3 dir = delta / range;
    for (int i = 0; i < rs.n_surface; ++i) {
      const double off = uniform(rng, -trunc, trunc);
      SdfSample s;
      s.position = (sensor_origin + (range + off) * dir).cast<float>();
      s.label = float(-off);  // projective distance: range - sample distance
      s.ray_origin = origin_f;
      s.timestep = t;
      out.push_back(s);
    }
    const double free_lo = rs.free_min_frac * range;
    const double free_hi = range - trunc;
    if (free_hi > free_lo) {
      for (int i = 0; i < rs.n_free; ++i) {
        const double d = uniform(rng, free_lo, free_hi);
        SdfSample s;
        s.position = (sensor_origin + d * dir).cast<float>();
        s.label = float(std::min(range - d, trunc));
        s.ray_origin = origin_f;
        s.timestep = t;
        out.push_back(s);
      }
    }
  }
  return out;
}

SdfBatch SdfBatch::build(const LocalMap& local, const Decoders& dec,
                         std::span<const Vec3> positions) {
  SdfBatch b;
  b.map_ = local.map;
  b.positions_.assign(positions.begin(), positions.end());
  const size_t n = positions.size();
  std::vector<std::vector<Neighbor>> hoods(n);
  parallel_for(n, [&](size_t begin, size_t end, size_t) {
    for (size_t i = begin; i < end; ++i) {
      hoods[i] = local.knn(positions[i], dec.cfg.knn_k, dec.cfg.knn_radius());
    }
  });
  b.pair_offset_.resize(n + 1);
  b.pair_offset_[0] = 0;
  for (size_t i = 0; i < n; ++i) {
    b.pair_offset_[i + 1] = b.pair_offset_[i] + uint32_t(hoods[i].size());
  }
  b.pair_point_.resize(b.pair_offset_[n]);
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < hoods[i].size(); ++j) {
      b.pair_point_[b.pair_offset_[i] + j] = hoods[i][j].index;
    }
  }
  b.build_inputs(dec);
  return b;
}

SdfBatch SdfBatch::build_shifted(const LocalMap& local, const Decoders& dec,
                                 std::span<const Vec3> positions,
                                 const SdfBatch& base,
                                 std::span<const uint32_t> base_rows) {
  if (positions.size() != base_rows.size()) {
    throw std::invalid_argument("SdfBatch::build_shifted: size mismatch");
  }
  SdfBatch b;
  b.map_ = local.map;
  b.positions_.assign(positions.begin(), positions.end());
  const size_t n = positions.size();
  b.pair_offset_.resize(n + 1);
  b.pair_offset_[0] = 0;
  for (size_t i = 0; i < n; ++i) {
    const uint32_t s = base_rows[i];
    b.pair_offset_[i + 1] =
        b.pair_offset_[i] + (base.pair_offset_[s + 1] - base.pair_offset_[s]);
  }
  b.pair_point_.resize(b.pair_offset_[n]);
  for (size_t i = 0; i < n; ++i) {
    const uint32_t s = base_rows[i];
    std::copy(base.pair_point_.begin() + base.pair_offset_[s],
              base.pair_point_.begin() + base.pair_offset_[s + 1],
              b.pair_point_.begin() + b.pair_offset_[i]);
  }
  b.build_inputs(dec);
  return b;
}

void SdfBatch::build_inputs(const Decoders& dec) {
  const size_t n = positions_.size();
  const size_t pairs = pair_point_.size();
  const int fg = map_->fg_dim();
  inputs_.resize(Eigen::Index(pairs), fg + 3);
  wbar_.resize(pairs);
  dw_scale_.resize(pairs);
  observed_.assign(n, 0);
  values_ = Eigen::VectorXd::Zero(Eigen::Index(n));

  parallel_for(n, [&](size_t begin, size_t end, size_t) {
    for (size_t i = begin; i < end; ++i) {
      const uint32_t p0 = pair_offset_[i];
      const uint32_t p1 = pair_offset_[i + 1];
      if (p0 == p1) continue;
      observed_[i] = 1;
      double wsum = 0.0;
      for (uint32_t r = p0; r < p1; ++r) {
        const NeuralPoint& np = map_->point(pair_point_[r]);
        const Vec3 rel = positions_[i] - np.position;
        const Vec3 d = np.orientation.rotate(rel);
        const float* f = map_->fg(pair_point_[r]);
        for (int c = 0; c < fg; ++c) inputs_(r, c) = f[c];
        inputs_(r, fg + 0) = float(d.x());
        inputs_(r, fg + 1) = float(d.y());
        inputs_(r, fg + 2) = float(d.z());
        const double r2 = std::max(rel.squaredNorm(), kMinSquaredDist);
        const double w = 1.0 / r2;
        wbar_[r] = w;
        dw_scale_[r] = rel.squaredNorm() > kMinSquaredDist ? -2.0 / (r2 * r2) : 0.0;
        wsum += w;
      }
      for (uint32_t r = p0; r < p1; ++r) wbar_[r] /= wsum;
    }
  });
  (void)dec;
}

void SdfBatch::forward(const Decoders& dec, bool keep_tape) {
  const size_t n = positions_.size();
  const size_t pairs = pair_point_.size();
  s_pair_.resize(pairs);
  const double bound = dec.cfg.sdf_bound();

  // Chunks split on sample boundaries so per-sample reductions stay local.
  const size_t workers = worker_threads();
  chunk_samples_.clear();
  const size_t target = std::max<size_t>(1, pairs / workers + 1);
  size_t start = 0;
  while (start < n) {
    size_t stop = start;
    size_t count = 0;
    while (stop < n && count < target) {
      count += pair_offset_[stop + 1] - pair_offset_[stop];
      ++stop;
    }
    chunk_samples_.emplace_back(start, stop);
    start = stop;
  }
  tapes_.assign(chunk_samples_.size(), Tape<float>{});
  has_tape_ = keep_tape;

  parallel_for(chunk_samples_.size(), [&](size_t cb, size_t ce, size_t) {
    for (size_t c = cb; c < ce; ++c) {
      const auto [s0, s1] = chunk_samples_[c];
      const uint32_t r0 = pair_offset_[s0];
      const uint32_t r1 = pair_offset_[s1];
      if (r0 == r1) continue;
      const MatX<float> block = inputs_.middleRows(r0, r1 - r0);
      MatX<float> y = dec.sdf.forward(block, keep_tape ? &tapes_[c] : nullptr);
      for (size_t i = s0; i < s1; ++i) {
        double acc = 0.0;
        for (uint32_t r = pair_offset_[i]; r < pair_offset_[i + 1]; ++r) {
          const float s = float(bound) * y(r - r0, 0);
          s_pair_[r] = s;
          acc += wbar_[r] * double(s);
        }
        values_[Eigen::Index(i)] = acc;
      }
    }
  }, 1);
}

void SdfBatch::backward(const Decoders& dec, const Eigen::VectorXd& upstream,
                        GradSink* sink, std::vector<Vec3>* dposition) {
  if (!has_tape_) {
    throw std::logic_error("SdfBatch::backward: forward(keep_tape) required");
  }
  if (upstream.size() != Eigen::Index(positions_.size())) {
    throw std::invalid_argument("SdfBatch::backward: upstream size mismatch");
  }
  has_tape_ = false;
  const int fg = map_->fg_dim();
  const double bound = dec.cfg.sdf_bound();
  if (dposition) {
    dposition->assign(positions_.size(), Vec3::Zero());
  }

  std::vector<MlpGrads<float>> chunk_grads(chunk_samples_.size());
  std::vector<MatX<float>> chunk_dx(chunk_samples_.size());

  parallel_for(chunk_samples_.size(), [&](size_t cb, size_t ce, size_t) {
    for (size_t c = cb; c < ce; ++c) {
      const auto [s0, s1] = chunk_samples_[c];
      const uint32_t r0 = pair_offset_[s0];
      const uint32_t r1 = pair_offset_[s1];
      if (r0 == r1) continue;
      MatX<float> dy(r1 - r0, 1);
      for (size_t i = s0; i < s1; ++i) {
        const float u = float(upstream[Eigen::Index(i)] * bound);
        for (uint32_t r = pair_offset_[i]; r < pair_offset_[i + 1]; ++r) {
          dy(r - r0, 0) = u * float(wbar_[r]);
        }
      }
      chunk_grads[c] = dec.sdf.backward(tapes_[c], dy, &chunk_dx[c]);
    }
  }, 1);

  // Deterministic merge: decoder gradients and feature scatters run in chunk
  // order on one thread.
  for (size_t c = 0; c < chunk_samples_.size(); ++c) {
    const auto [s0, s1] = chunk_samples_[c];
    const uint32_t r0 = pair_offset_[s0];
    if (pair_offset_[s1] == r0) continue;
    if (sink) sink->g_sdf.add(chunk_grads[c]);
    const MatX<float>& dx = chunk_dx[c];
    for (size_t i = s0; i < s1; ++i) {
      for (uint32_t r = pair_offset_[i]; r < pair_offset_[i + 1]; ++r) {
        const uint32_t pt = pair_point_[r];
        if (sink) sink->add_fg(pt, dx.row(r - r0).data());
        if (dposition) {
          const Vec3 dd(dx(r - r0, fg + 0), dx(r - r0, fg + 1), dx(r - r0, fg + 2));
          const NeuralPoint& np = map_->point(pt);
          (*dposition)[i] += np.orientation.conjugate().rotate(dd);
        }
      }
      if (dposition) {
        // Interpolation-weight path: d(wbar_j)/dp contributes
        // (s_j - S) / wsum * dw_j/dp summed over neighbors.
        const uint32_t p0 = pair_offset_[i];
        const uint32_t p1 = pair_offset_[i + 1];
        if (p0 == p1) continue;
        double wsum = 0.0;
        for (uint32_t r = p0; r < p1; ++r) {
          const Vec3 rel = positions_[i] - map_->point(pair_point_[r]).position;
          wsum += 1.0 / std::max(rel.squaredNorm(), kMinSquaredDist);
        }
        const double s_val = values_[Eigen::Index(i)];
        Vec3 acc = Vec3::Zero();
        for (uint32_t r = p0; r < p1; ++r) {
          const Vec3 rel = positions_[i] - map_->point(pair_point_[r]).position;
          acc += (double(s_pair_[r]) - s_val) / wsum * dw_scale_[r] * rel;
        }
        (*dposition)[i] += upstream[Eigen::Index(i)] * acc;
      }
    }
  }
}

std::optional<SdfQuery> predict_sdf(const LocalMap& local, const Decoders& dec,
                                    const Vec3& p) {
  auto hood = local.knn(p, dec.cfg.knn_k, dec.cfg.knn_radius());
  if (hood.empty()) return std::nullopt;
  SdfBatch b = SdfBatch::build(local, dec, std::span<const Vec3>(&p, 1));
  b.forward(dec, false);
  SdfQuery q;
  q.value = b.values()[0];
  q.contributors = std::move(hood);
  return q;
}

std::optional<Vec3> sdf_gradient(const LocalMap& local, const Decoders& dec,
                                 const Vec3& p) {
  SdfBatch b = SdfBatch::build(local, dec, std::span<const Vec3>(&p, 1));
  if (!b.observed()[0]) return std::nullopt;
  b.forward(dec, true);
  Eigen::VectorXd upstream = Eigen::VectorXd::Ones(1);
  std::vector<Vec3> dpos;
  b.backward(dec, upstream, nullptr, &dpos);
  return dpos[0];
}

SdfLossResult sdf_loss(std::span<const SdfSample> batch, const LocalMap& local,
                       const Decoders& dec, const SdfLossWeights& weights,
                       const SdfLossConfig& cfg, GradSink& sink) {
  if (batch.empty()) {
    throw std::invalid_argument("sdf_loss: empty batch");
  }
  SdfLossResult res;
  std::vector<Vec3> positions(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) {
    positions[i] = batch[i].position.cast<double>();
  }
  SdfBatch center = SdfBatch::build(local, dec, positions);
  center.forward(dec, true);

  const double sigma = dec.cfg.bce_sigma();
  double wsum = 0.0;
  for (size_t i = 0; i < batch.size(); ++i) {
    if (center.observed()[i]) wsum += double(batch[i].weight);
  }
  res.observed_samples = size_t(std::count(center.observed().begin(),
                                           center.observed().end(), uint8_t(1)));
  Eigen::VectorXd upstream = Eigen::VectorXd::Zero(Eigen::Index(batch.size()));
  if (wsum > 0.0) {
    double bce = 0.0;
    for (size_t i = 0; i < batch.size(); ++i) {
      if (!center.observed()[i]) continue;
      const double w = double(batch[i].weight) / wsum;
      const double y = stable_sigmoid(double(batch[i].label) / sigma);
      const double yh = std::clamp(stable_sigmoid(center.values()[Eigen::Index(i)] / sigma),
                                   1e-12, 1.0 - 1e-12);
      // KL form of the BCE supervision: zero when prediction equals label,
      // same gradient as plain cross-entropy.
      double term = 0.0;
      if (y > 0.0) term += y * std::log(y / yh);
      if (y < 1.0) term += (1.0 - y) * std::log((1.0 - y) / (1.0 - yh));
      bce += w * term;
      upstream[Eigen::Index(i)] = weights.bce * w * (yh - y) / sigma;
    }
    res.bce = bce;
  }

  // Eikonal on a strided subset via central differences of the field; the
  // loss then backpropagates through six plain forward evaluations.
  std::vector<uint32_t> eik_rows;
  for (size_t i = 0; i < batch.size(); i += std::max<size_t>(1, cfg.eikonal_stride)) {
    if (center.observed()[i]) eik_rows.push_back(uint32_t(i));
  }
  if (weights.eik > 0.0 && !eik_rows.empty()) {
    const double h = cfg.eikonal_step > 0.0 ? cfg.eikonal_step : 0.25 * dec.cfg.voxel_size;
    const size_t m = eik_rows.size();
    std::vector<Vec3> shifted(6 * m);
    std::vector<uint32_t> base_rows(6 * m);
    for (size_t i = 0; i < m; ++i) {
      const Vec3 p = positions[eik_rows[i]];
      for (int k = 0; k < 3; ++k) {
        Vec3 dpos = Vec3::Zero();
        dpos[k] = h;
        shifted[6 * i + 2 * k] = p + dpos;
        shifted[6 * i + 2 * k + 1] = p - dpos;
        base_rows[6 * i + 2 * k] = eik_rows[i];
        base_rows[6 * i + 2 * k + 1] = eik_rows[i];
      }
    }
    SdfBatch probe = SdfBatch::build_shifted(local, dec, shifted, center, base_rows);
    probe.forward(dec, true);
    Eigen::VectorXd probe_upstream = Eigen::VectorXd::Zero(Eigen::Index(6 * m));
    double eik = 0.0;
    res.eikonal_samples = m;
    for (size_t i = 0; i < m; ++i) {
      Vec3 g;
      for (int k = 0; k < 3; ++k) {
        g[k] = (probe.values()[Eigen::Index(6 * i + 2 * k)] -
                probe.values()[Eigen::Index(6 * i + 2 * k + 1)]) /
               (2.0 * h);
      }
      const double gn = g.norm();
      eik += (gn - 1.0) * (gn - 1.0) / double(m);
      if (gn > 1e-12) {
        const Vec3 dg = 2.0 * (gn - 1.0) / double(m) * g / gn;
        for (int k = 0; k < 3; ++k) {
          probe_upstream[Eigen::Index(6 * i + 2 * k)] = weights.eik * dg[k] / (2.0 * h);
          probe_upstream[Eigen::Index(6 * i + 2 * k + 1)] = -weights.eik * dg[k] / (2.0 * h);
        }
      }
    }
    res.eik = eik;
    probe.backward(dec, probe_upstream, &sink, nullptr);
  }

  center.backward(dec, upstream, &sink, nullptr);
  res.total = weights.bce * res.bce + weights.eik * res.eik;
  res.finite = std::isfinite(res.total);
  return res;
}

}  // namespace pf
