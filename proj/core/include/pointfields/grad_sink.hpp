// Copyright Contributors to the pointfields Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "pointfields/decoders.hpp"
#include "pointfields/neural_point_map.hpp"

namespace pf {

/// Accumulates one iteration's gradients: per-point feature gradients (with a
/// touched mask for the sparse optimizer) plus dense decoder gradients.
struct GradSink {
  std::vector<float> fg_grad;
  std::vector<float> fa_grad;
  std::vector<uint8_t> touched;
  MlpGrads<float> g_sdf, g_offset, g_rotation, g_scale, g_opacity, g_color;
  int fg_dim = 0;
  int fa_dim = 0;

  void init(const NeuralPointMap& map, const Decoders& dec) {
    fg_dim = map.fg_dim();
    fa_dim = map.fa_dim();
    fg_grad.assign(map.size() * size_t(fg_dim), 0.0f);
    fa_grad.assign(map.size() * size_t(fa_dim), 0.0f);
    touched.assign(map.size(), 0);
    g_sdf = dec.sdf.zero_grads();
    g_offset = dec.offset.zero_grads();
    g_rotation = dec.rotation.zero_grads();
    g_scale = dec.scale.zero_grads();
    g_opacity = dec.opacity.zero_grads();
    g_color = dec.color.zero_grads();
  }

  void add_fg(uint32_t idx, const float* g) {
    float* dst = fg_grad.data() + size_t(idx) * fg_dim;
    for (int i = 0; i < fg_dim; ++i) dst[i] += g[i];
    touched[idx] = 1;
  }
  void add_fa(uint32_t idx, const float* g) {
    float* dst = fa_grad.data() + size_t(idx) * fa_dim;
    for (int i = 0; i < fa_dim; ++i) dst[i] += g[i];
    touched[idx] = 1;
  }

  bool all_finite() const {
    for (float v : fg_grad) {
      if (!std::isfinite(v)) return false;
    }
    for (float v : fa_grad) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }
};

}  // namespace pf
