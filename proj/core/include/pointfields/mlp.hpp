// Copyright Contributors to the pointfields Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "pointfields/random.hpp"

namespace pf {

enum class Activation : uint8_t { kLinear = 0, kTanh = 1, kSigmoid = 2, kRelu = 3 };

template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

/// Recorded post-activations of one forward pass; backward consumes it
/// exactly once.
template <typename S>
struct Tape {
  MatX<S> input;                 // batch x in
  std::vector<MatX<S>> post;     // per layer, batch x out
  bool consumed = false;
};

template <typename S>
struct MlpGrads {
  std::vector<MatX<S>> weight;
  std::vector<VecX<S>> bias;

  void setZero();
  void add(const MlpGrads& other);
  void scale(S s);
  VecX<S> flatten() const;
};

/// Fully-connected network with explicit forward/backward. Weight matrices
/// are (out x in); a batch is one row per sample.
template <typename S>
class Mlp {
 public:
  struct Layer {
    MatX<S> weight;
    VecX<S> bias;
    Activation act = Activation::kLinear;
  };

  Mlp() = default;
  /// dims = {in, hidden..., out}; acts has one entry per layer.
  Mlp(const std::vector<int>& dims, const std::vector<Activation>& acts,
      Rng& rng);

  int input_dim() const;
  int output_dim() const;
  size_t layer_count() const { return layers_.size(); }
  const Layer& layer(size_t i) const { return layers_[i]; }
  Layer& layer(size_t i) { return layers_[i]; }

  /// Forward pass over a batch. Throws std::invalid_argument on a width
  /// mismatch. When tape is non-null it is filled for a later backward.
  MatX<S> forward(const MatX<S>& input, Tape<S>* tape = nullptr) const;

  /// Backpropagates upstream (batch x out) through the tape. Returns
  /// parameter gradients; when input_grads is non-null it receives
  /// d(loss)/d(input). Throws std::logic_error on a reused tape.
  MlpGrads<S> backward(Tape<S>& tape, const MatX<S>& upstream,
                       MatX<S>* input_grads = nullptr) const;

  MlpGrads<S> zero_grads() const;

  size_t param_count() const;
  VecX<S> get_params() const;
  void set_params(const VecX<S>& flat);

  /// FNV-1a over the parameter bytes; used to assert freeze contracts.
  uint64_t param_checksum() const;

  void save(std::ostream& out) const;
  /// Loads parameters into the existing architecture; shape mismatch or a
  /// corrupt header throws std::runtime_error.
  void load(std::istream& in);

 private:
  std::vector<Layer> layers_;
};

/// One Adam optimizer over a flat parameter vector.
template <typename S>
class Adam {
 public:
  Adam() = default;
  Adam(size_t n, S lr) : lr_(lr), m_(VecX<S>::Zero(n)), v_(VecX<S>::Zero(n)) {}

  /// Applies one update in place. Rejects (returns false, params untouched)
  /// when gradients are non-finite.
  bool step(Eigen::Ref<VecX<S>> params, const VecX<S>& grads);

  /// Computes the update direction for one step without owning the
  /// parameters; used for on-manifold state (poses) that retracts the
  /// returned increment itself.
  bool step_direction(const VecX<S>& grads, VecX<S>& delta);

  S lr() const { return lr_; }
  void set_lr(S lr) { lr_ = lr; }
  int64_t steps() const { return step_; }

 private:
  S lr_ = S(1e-3);
  S beta1_ = S(0.9);
  S beta2_ = S(0.999);
  S eps_ = S(1e-8);
  int64_t step_ = 0;
  VecX<S> m_, v_;
};

const char* activation_name(Activation a);

using MlpF = Mlp<float>;
using MlpD = Mlp<double>;

}  // namespace pf
