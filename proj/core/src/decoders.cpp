// Copyright Contributors to the pointfields Project
// SPDX-License-Identifier: Apache-2.0
#include "pointfields/decoders.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace pf {

namespace {
constexpr char kDecMagic[8] = {'P', 'F', 'D', 'E', 'C', '0', '0', '1'};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("decoder file: truncated stream");
  return v;
}
}  // namespace

Decoders::Decoders(const ModelConfig& c, uint64_t seed) : cfg(c) {
  const int k = cfg.k_primitives;
  {
    Rng rng = make_rng(seed, 1);
    sdf = MlpF({cfg.fg_dim + 3, cfg.hidden, 1}, {Activation::kTanh, Activation::kTanh}, rng);
  }
  {
    Rng rng = make_rng(seed, 2);
    offset = MlpF({cfg.fg_dim, cfg.hidden, 3 * k}, {Activation::kTanh, Activation::kTanh}, rng);
  }
  {
    Rng rng = make_rng(seed, 3);
    rotation = MlpF({cfg.fg_dim, cfg.hidden, 4 * k}, {Activation::kTanh, Activation::kLinear}, rng);
  }
  {
    Rng rng = make_rng(seed, 4);
    scale = MlpF({cfg.fg_dim, cfg.hidden, 2 * k}, {Activation::kTanh, Activation::kLinear}, rng);
    // exp(bias) starts the scales at half a voxel, below the clamp.
    scale.layer(1).bias.setConstant(float(std::log(0.5 * cfg.voxel_size)));
  }
  {
    Rng rng = make_rng(seed, 5);
    opacity = MlpF({cfg.fg_dim + 1, cfg.hidden, k}, {Activation::kTanh, Activation::kTanh}, rng);
  }
  {
    Rng rng = make_rng(seed, 6);
    color = MlpF({cfg.fa_dim + 3, cfg.hidden, 3 * k}, {Activation::kTanh, Activation::kSigmoid}, rng);
  }
}

uint64_t Decoders::checksum() const {
  uint64_t h = 14695981039346656037ull;
  for (const MlpF* m : {&sdf, &offset, &rotation, &scale, &opacity, &color}) {
    const uint64_t c = m->param_checksum();
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void Decoders::save(std::ostream& out) const {
  out.write(kDecMagic, sizeof(kDecMagic));
  write_pod<uint32_t>(out, uint32_t(cfg.fg_dim));
  write_pod<uint32_t>(out, uint32_t(cfg.fa_dim));
  write_pod<uint32_t>(out, uint32_t(cfg.hidden));
  write_pod<uint32_t>(out, uint32_t(cfg.k_primitives));
  write_pod<double>(out, cfg.voxel_size);
  write_pod<double>(out, cfg.local_radius);
  for (const MlpF* m : {&sdf, &offset, &rotation, &scale, &opacity, &color}) {
    m->save(out);
  }
}

Decoders Decoders::load(std::istream& in) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kDecMagic, 8) != 0) {
    throw std::runtime_error("decoder file: bad magic");
  }
  ModelConfig cfg;
  cfg.fg_dim = int(read_pod<uint32_t>(in));
  cfg.fa_dim = int(read_pod<uint32_t>(in));
  cfg.hidden = int(read_pod<uint32_t>(in));
  cfg.k_primitives = int(read_pod<uint32_t>(in));
  cfg.voxel_size = read_pod<double>(in);
  cfg.local_radius = read_pod<double>(in);
  Decoders d(cfg, 0);
  for (MlpF* m : {&d.sdf, &d.offset, &d.rotation, &d.scale, &d.opacity, &d.color}) {
    m->load(in);
  }
  return d;
}

}  // namespace pf
