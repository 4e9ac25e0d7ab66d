// Copyright Contributors to the pointfields Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>

#include "pointfields/mlp.hpp"

namespace pf {

/// Shared model hyperparameters. Feature widths and the hidden width are
/// fixed by the map format; the rest derive from the voxel size.
struct ModelConfig {
  int fg_dim = 32;
  int fa_dim = 16;
  int hidden = 128;
  int k_primitives = 8;
  double voxel_size = 0.3;
  double local_radius = 80.0;
  int knn_k = 6;
  double knn_radius_mult = 3.0;   // neighbor search radius, in voxels
  double trunc_mult = 3.0;        // SDF truncation band, in voxels
  double sdf_headroom = 1.1;      // output bound = headroom * truncation
  double offset_scale_mult = 2.0; // spawn offsets live in +-offset_scale_mult voxels
  double scale_clamp_mult = 2.0;  // surfel scale clamp, in voxels
  double bce_sigma_mult = 0.5;    // BCE sigmoid temperature, in voxels

  double truncation() const { return trunc_mult * voxel_size; }
  double sdf_bound() const { return sdf_headroom * truncation(); }
  double knn_radius() const { return knn_radius_mult * voxel_size; }
  double offset_bound() const { return offset_scale_mult * voxel_size; }
  double scale_clamp() const { return scale_clamp_mult * voxel_size; }
  double bce_sigma() const { return bce_sigma_mult * voxel_size; }
};

/// The six shared decoder heads. One hidden layer of `hidden` neurons each;
/// geometric heads read the geometric feature, the color head reads the
/// appearance feature.
struct Decoders {
  ModelConfig cfg;
  MlpF sdf;       // [f_g, local coord]            -> 1, tanh (scaled by sdf_bound)
  MlpF offset;    // [f_g]                         -> 3K, tanh (scaled to offset_bound)
  MlpF rotation;  // [f_g]                         -> 4K, raw (normalized per primitive)
  MlpF scale;     // [f_g]                         -> 2K, exp then clamp; third axis is 0
  MlpF opacity;   // [f_g, view distance]          -> K, tanh
  MlpF color;     // [f_a, local view direction]   -> 3K, sigmoid
  bool frozen = false;

  Decoders() = default;
  Decoders(const ModelConfig& cfg, uint64_t seed);

  uint64_t checksum() const;
  void save(std::ostream& out) const;
  static Decoders load(std::istream& in);
};

}  // namespace pf
