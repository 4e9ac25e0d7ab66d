// Copyright Contributors to the pointfields Project
// SPDX-License-Identifier: Apache-2.0
#include "pointfields/mlp.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace pf {

namespace {

template <typename S>
void apply_activation(Activation act, MatX<S>& z) {
  switch (act) {
    case Activation::kLinear:
      break;
    case Activation::kTanh:
      z = z.array().tanh();
      break;
    case Activation::kSigmoid:
      z = (S(1) / (S(1) + (-z.array()).exp()));
      break;
    case Activation::kRelu:
      z = z.array().max(S(0));
      break;
  }
}

// Derivative of the activation expressed through its output value.
template <typename S>
MatX<S> activation_deriv_from_post(Activation act, const MatX<S>& a) {
  switch (act) {
    case Activation::kLinear:
      return MatX<S>::Ones(a.rows(), a.cols());
    case Activation::kTanh:
      return (S(1) - a.array().square()).matrix();
    case Activation::kSigmoid:
      return (a.array() * (S(1) - a.array())).matrix();
    case Activation::kRelu:
      return (a.array() > S(0)).template cast<S>().matrix();
  }
  return MatX<S>::Ones(a.rows(), a.cols());
}

constexpr char kMlpMagic[8] = {'P', 'F', 'M', 'L', 'P', 'S', '0', '1'};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("mlp snapshot: truncated stream");
  return v;
}

}  // namespace

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::kLinear: return "linear";
    case Activation::kTanh: return "tanh";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kRelu: return "relu";
  }
  return "?";
}

template <typename S>
void MlpGrads<S>::setZero() {
  for (auto& w : weight) w.setZero();
  for (auto& b : bias) b.setZero();
}

template <typename S>
void MlpGrads<S>::add(const MlpGrads& other) {
  for (size_t i = 0; i < weight.size(); ++i) {
    weight[i] += other.weight[i];
    bias[i] += other.bias[i];
  }
}

template <typename S>
void MlpGrads<S>::scale(S s) {
  for (auto& w : weight) w *= s;
  for (auto& b : bias) b *= s;
}

template <typename S>
VecX<S> MlpGrads<S>::flatten() const {
  size_t n = 0;
  for (size_t i = 0; i < weight.size(); ++i) n += weight[i].size() + bias[i].size();
  VecX<S> flat(n);
  size_t at = 0;
  for (size_t i = 0; i < weight.size(); ++i) {
    std::memcpy(flat.data() + at, weight[i].data(), weight[i].size() * sizeof(S));
    at += weight[i].size();
    std::memcpy(flat.data() + at, bias[i].data(), bias[i].size() * sizeof(S));
    at += bias[i].size();
  }
  return flat;
}

template <typename S>
Mlp<S>::Mlp(const std::vector<int>& dims, const std::vector<Activation>& acts,
            Rng& rng) {
  if (dims.size() < 2 || acts.size() != dims.size() - 1) {
    throw std::invalid_argument("Mlp: dims/activations mismatch");
  }
  layers_.resize(dims.size() - 1);
  for (size_t l = 0; l < layers_.size(); ++l) {
    const int fan_in = dims[l];
    const int fan_out = dims[l + 1];
    const double bound = std::sqrt(6.0 / double(fan_in + fan_out));
    layers_[l].weight.resize(fan_out, fan_in);
    for (int i = 0; i < fan_out; ++i) {
      for (int j = 0; j < fan_in; ++j) {
        layers_[l].weight(i, j) = S(uniform(rng, -bound, bound));
      }
    }
    layers_[l].bias = VecX<S>::Zero(fan_out);
    layers_[l].act = acts[l];
  }
}

template <typename S>
int Mlp<S>::input_dim() const {
  return layers_.empty() ? 0 : int(layers_.front().weight.cols());
}

template <typename S>
int Mlp<S>::output_dim() const {
  return layers_.empty() ? 0 : int(layers_.back().weight.rows());
}

template <typename S>
MatX<S> Mlp<S>::forward(const MatX<S>& input, Tape<S>* tape) const {
  if (input.cols() != input_dim()) {
    throw std::invalid_argument("Mlp::forward: input width " +
                                std::to_string(input.cols()) + " != " +
                                std::to_string(input_dim()));
  }
  if (tape) {
    tape->input = input;
    tape->post.clear();
    tape->post.reserve(layers_.size());
    tape->consumed = false;
  }
  MatX<S> a = input;
  for (const auto& layer : layers_) {
    MatX<S> z = a * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    apply_activation(layer.act, z);
    a = std::move(z);
    if (tape) tape->post.push_back(a);
  }
  return a;
}

template <typename S>
MlpGrads<S> Mlp<S>::backward(Tape<S>& tape, const MatX<S>& upstream,
                             MatX<S>* input_grads) const {
  if (tape.consumed) {
    throw std::logic_error("Mlp::backward: tape already consumed");
  }
  if (tape.post.size() != layers_.size() ||
      upstream.cols() != output_dim() || upstream.rows() != tape.input.rows()) {
    throw std::invalid_argument("Mlp::backward: tape/upstream shape mismatch");
  }
  tape.consumed = true;

  MlpGrads<S> grads = zero_grads();
  MatX<S> delta;  // d(loss)/d(pre-activation) of the current layer
  for (int l = int(layers_.size()) - 1; l >= 0; --l) {
    const MatX<S>& post = tape.post[size_t(l)];
    if (l == int(layers_.size()) - 1) {
      delta = upstream.cwiseProduct(activation_deriv_from_post(layers_[size_t(l)].act, post));
    } else {
      delta = (delta * layers_[size_t(l) + 1].weight)
                  .cwiseProduct(activation_deriv_from_post(layers_[size_t(l)].act, post));
    }
    const MatX<S>& below = (l == 0) ? tape.input : tape.post[size_t(l) - 1];
    grads.weight[size_t(l)].noalias() = delta.transpose() * below;
    grads.bias[size_t(l)] = delta.colwise().sum().transpose();
  }
  if (input_grads) {
    input_grads->noalias() = delta * layers_[0].weight;
  }
  return grads;
}

template <typename S>
MlpGrads<S> Mlp<S>::zero_grads() const {
  MlpGrads<S> g;
  g.weight.reserve(layers_.size());
  g.bias.reserve(layers_.size());
  for (const auto& layer : layers_) {
    g.weight.emplace_back(MatX<S>::Zero(layer.weight.rows(), layer.weight.cols()));
    g.bias.emplace_back(VecX<S>::Zero(layer.bias.size()));
  }
  return g;
}

template <typename S>
size_t Mlp<S>::param_count() const {
  size_t n = 0;
  for (const auto& layer : layers_) n += layer.weight.size() + layer.bias.size();
  return n;
}

template <typename S>
VecX<S> Mlp<S>::get_params() const {
  VecX<S> flat(param_count());
  size_t at = 0;
  for (const auto& layer : layers_) {
    std::memcpy(flat.data() + at, layer.weight.data(), layer.weight.size() * sizeof(S));
    at += layer.weight.size();
    std::memcpy(flat.data() + at, layer.bias.data(), layer.bias.size() * sizeof(S));
    at += layer.bias.size();
  }
  return flat;
}

template <typename S>
void Mlp<S>::set_params(const VecX<S>& flat) {
  if (size_t(flat.size()) != param_count()) {
    throw std::invalid_argument("Mlp::set_params: size mismatch");
  }
  size_t at = 0;
  for (auto& layer : layers_) {
    std::memcpy(layer.weight.data(), flat.data() + at, layer.weight.size() * sizeof(S));
    at += layer.weight.size();
    std::memcpy(layer.bias.data(), flat.data() + at, layer.bias.size() * sizeof(S));
    at += layer.bias.size();
  }
}

template <typename S>
uint64_t Mlp<S>::param_checksum() const {
  uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const char* data, size_t n) {
    for (size_t i = 0; i < n; ++i) {
      h ^= uint64_t(uint8_t(data[i]));
      h *= 1099511628211ull;
    }
  };
  for (const auto& layer : layers_) {
    mix(reinterpret_cast<const char*>(layer.weight.data()),
        layer.weight.size() * sizeof(S));
    mix(reinterpret_cast<const char*>(layer.bias.data()),
        layer.bias.size() * sizeof(S));
  }
  return h;
}

template <typename S>
void Mlp<S>::save(std::ostream& out) const {
  out.write(kMlpMagic, sizeof(kMlpMagic));
  write_pod<uint32_t>(out, uint32_t(layers_.size()));
  for (const auto& layer : layers_) {
    write_pod<uint32_t>(out, uint32_t(layer.weight.rows()));
    write_pod<uint32_t>(out, uint32_t(layer.weight.cols()));
    // Row-major float32 weights, then the bias vector.
    for (int i = 0; i < layer.weight.rows(); ++i) {
      for (int j = 0; j < layer.weight.cols(); ++j) {
        write_pod<float>(out, float(layer.weight(i, j)));
      }
    }
    for (int i = 0; i < layer.bias.size(); ++i) {
      write_pod<float>(out, float(layer.bias(i)));
    }
  }
}

template <typename S>
void Mlp<S>::load(std::istream& in) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMlpMagic, 8) != 0) {
    throw std::runtime_error("mlp snapshot: bad magic");
  }
  const uint32_t n_layers = read_pod<uint32_t>(in);
  if (n_layers != layers_.size()) {
    throw std::runtime_error("mlp snapshot: layer count mismatch");
  }
  for (auto& layer : layers_) {
    const uint32_t rows = read_pod<uint32_t>(in);
    const uint32_t cols = read_pod<uint32_t>(in);
    if (rows != uint32_t(layer.weight.rows()) || cols != uint32_t(layer.weight.cols())) {
      throw std::runtime_error("mlp snapshot: layer shape mismatch");
    }
    for (uint32_t i = 0; i < rows; ++i) {
      for (uint32_t j = 0; j < cols; ++j) {
        layer.weight(i, j) = S(read_pod<float>(in));
      }
    }
    for (uint32_t i = 0; i < rows; ++i) {
      layer.bias(i) = S(read_pod<float>(in));
    }
  }
}

template <typename S>
bool Adam<S>::step(Eigen::Ref<VecX<S>> params, const VecX<S>& grads) {
  VecX<S> delta;
  if (!step_direction(grads, delta)) return false;
  params -= delta;
  return true;
}

template <typename S>
bool Adam<S>::step_direction(const VecX<S>& grads, VecX<S>& delta) {
  if (grads.size() != m_.size()) {
    throw std::invalid_argument("Adam: gradient size mismatch");
  }
  if (!grads.allFinite()) return false;
  ++step_;
  m_ = beta1_ * m_ + (S(1) - beta1_) * grads;
  v_ = beta2_ * v_.array().matrix() + (S(1) - beta2_) * grads.cwiseProduct(grads);
  const S bc1 = S(1) - S(std::pow(double(beta1_), double(step_)));
  const S bc2 = S(1) - S(std::pow(double(beta2_), double(step_)));
  delta = lr_ * (m_ / bc1).array().matrix().cwiseQuotient(
              ((v_ / bc2).array().sqrt() + eps_).matrix());
  return true;
}

template struct MlpGrads<float>;
template struct MlpGrads<double>;
template class Mlp<float>;
template class Mlp<double>;
template class Adam<float>;
template class Adam<double>;

}  // namespace pf
