#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"

#include "codedlf/autodiff.hpp"
#include "codedlf/image.hpp"
#include "codedlf/optim.hpp"

namespace codedlf::models {

// Coded image -> feature volume. Conv stem, residual blocks at constant
// width, 1x1 projection to depth * channels, reshaped to [H, W, D, C].
struct FeatNetConfig {
  std::size_t in_channels = 1;
  std::size_t n_blocks = 4;
  std::size_t hidden_channels = 32;
  std::size_t kernel = 3;
  std::size_t depth = 13;
  std::size_t channels = 8;
  double slope = 0.2;

  void validate() const;
};

// (X, Y, Z, theta, phi, f) -> (luminance, density). theta/phi are the raw
// viewpoint coordinates.
struct NeRFNetConfig {
  std::size_t hidden_layers = 4;
  std::size_t width = 64;
  std::size_t pe_freqs = 0;
  std::size_t feature_channels = 8;
  double slope = 0.2;
  double density_bias = -1.0;

  std::size_t input_dim() const;
  void validate() const;
};

struct ModelConfig {
  FeatNetConfig feat;
  NeRFNetConfig nerf;

  void validate() const;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Kaiming fan-in init for hidden layers, zero FeatNet projection, density
// head bias at `density_bias`. Deterministic per seed.
ad::ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed);

// Stacks the normalized image with optional extra planes into [H, W, 1 + n].
ad::Value featnet_input(const Image& normalized, std::span<const Image> extra_planes = {});

// [H, W, Cin] -> [H, W, D, C]
ad::Value featnet_forward(const ad::ParamStore& params, const FeatNetConfig& cfg,
                          const ad::Value& input);

// Number of featnet_forward calls in this process.
std::uint64_t featnet_forward_count();

struct NerfQuery {
  double x = 0, y = 0, z = 0;
  double theta = 0, phi = 0;
};

struct NerfOutput {
  ad::Value c;      // [N], in (0, 1)
  ad::Value sigma;  // [N], >= 0
};

// features: [N, C]
NerfOutput nerfnet_forward(const ad::ParamStore& params, const NeRFNetConfig& cfg,
                           std::span<const NerfQuery> queries, const ad::Value& features);

// Input encoding of one query (positional encoding when pe_freqs > 0).
void encode_query(const NerfQuery& q, std::size_t pe_freqs, std::vector<double>& out);

}  // namespace codedlf::models
