#include "codedlf/models.hpp"

#include <atomic>
#include <cmath>
#include <numbers>
#include <random>

#include "codedlf/error.hpp"

namespace codedlf::models {

using nlohmann::json;

namespace {

std::atomic<std::uint64_t> g_featnet_calls{0};

std::vector<double> kaiming(std::mt19937_64& rng, std::size_t n, std::size_t fan_in, double slope) {
  double stddev = std::sqrt(2.0 / ((1.0 + slope * slope) * static_cast<double>(fan_in)));
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> w(n);
  for (auto& x : w) x = dist(rng);
  return w;
}

std::string block_name(std::size_t b, int conv, const char* what) {
  return "feat.block" + std::to_string(b) + ".conv" + std::to_string(conv) + "." + what;
}

}  // namespace

void FeatNetConfig::validate() const {
  if (in_channels < 1 || hidden_channels < 1 || kernel < 1 || kernel % 2 == 0) {
    throw Error(ErrorKind::InvalidConfig, "featnet: channels >= 1 and odd kernel required");
  }
  if (depth < 2 || channels < 1) throw Error(ErrorKind::InvalidConfig, "featnet: need D >= 2, C >= 1");
}

std::size_t NeRFNetConfig::input_dim() const { return 5 * (1 + 2 * pe_freqs) + feature_channels; }

void NeRFNetConfig::validate() const {
  if (hidden_layers < 1 || feature_channels < 1) {
    throw Error(ErrorKind::InvalidConfig, "nerfnet: need >= 1 hidden layer and C >= 1");
  }
  if (pe_freqs == 0 && width < feature_channels + 5) {
    throw Error(ErrorKind::InvalidConfig, "nerfnet: width must be >= C + 5");
  }
}

void ModelConfig::validate() const {
  feat.validate();
  nerf.validate();
  if (feat.channels != nerf.feature_channels) {
    throw Error(ErrorKind::InvalidConfig, "featnet channels must equal nerfnet feature channels");
  }
}

json to_json(const ModelConfig& cfg) {
  return {{"featnet",
           {{"in_channels", cfg.feat.in_channels},
            {"n_blocks", cfg.feat.n_blocks},
            {"hidden_channels", cfg.feat.hidden_channels},
            {"kernel", cfg.feat.kernel},
            {"depth", cfg.feat.depth},
            {"channels", cfg.feat.channels},
            {"slope", cfg.feat.slope}}},
          {"nerfnet",
           {{"hidden_layers", cfg.nerf.hidden_layers},
            {"width", cfg.nerf.width},
            {"pe_freqs", cfg.nerf.pe_freqs},
            {"feature_channels", cfg.nerf.feature_channels},
            {"slope", cfg.nerf.slope},
            {"density_bias", cfg.nerf.density_bias}}}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  try {
    if (j.contains("featnet")) {
      const auto& f = j["featnet"];
      cfg.feat.in_channels = f.value("in_channels", cfg.feat.in_channels);
      cfg.feat.n_blocks = f.value("n_blocks", cfg.feat.n_blocks);
      cfg.feat.hidden_channels = f.value("hidden_channels", cfg.feat.hidden_channels);
      cfg.feat.kernel = f.value("kernel", cfg.feat.kernel);
      cfg.feat.depth = f.value("depth", cfg.feat.depth);
      cfg.feat.channels = f.value("channels", cfg.feat.channels);
      cfg.feat.slope = f.value("slope", cfg.feat.slope);
    }
    if (j.contains("nerfnet")) {
      const auto& n = j["nerfnet"];
      cfg.nerf.hidden_layers = n.value("hidden_layers", cfg.nerf.hidden_layers);
      cfg.nerf.width = n.value("width", cfg.nerf.width);
      cfg.nerf.pe_freqs = n.value("pe_freqs", cfg.nerf.pe_freqs);
      cfg.nerf.feature_channels = n.value("feature_channels", cfg.feat.channels);
      cfg.nerf.slope = n.value("slope", cfg.nerf.slope);
      cfg.nerf.density_bias = n.value("density_bias", cfg.nerf.density_bias);
    } else {
      cfg.nerf.feature_channels = cfg.feat.channels;
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ad::ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ad::ParamStore store;
  const auto& f = cfg.feat;
  const std::size_t k = f.kernel, hid = f.hidden_channels;
  store.add("feat.stem.w", {k, k, f.in_channels, hid},
            kaiming(rng, k * k * f.in_channels * hid, k * k * f.in_channels, f.slope));
  store.add("feat.stem.b", {hid}, std::vector<double>(hid, 0.0));
  for (std::size_t b = 0; b < f.n_blocks; ++b) {
    for (int conv = 1; conv <= 2; ++conv) {
      store.add(block_name(b, conv, "w"), {k, k, hid, hid},
                kaiming(rng, k * k * hid * hid, k * k * hid, f.slope));
      store.add(block_name(b, conv, "b"), {hid}, std::vector<double>(hid, 0.0));
    }
  }
  const std::size_t out = f.depth * f.channels;
  store.add("feat.proj.w", {1, 1, hid, out}, std::vector<double>(hid * out, 0.0));
  store.add("feat.proj.b", {out}, std::vector<double>(out, 0.0));

  const auto& n = cfg.nerf;
  std::size_t in = n.input_dim();
  for (std::size_t l = 0; l < n.hidden_layers; ++l) {
    store.add("nerf.l" + std::to_string(l) + ".w", {in, n.width},
              kaiming(rng, in * n.width, in, n.slope));
    store.add("nerf.l" + std::to_string(l) + ".b", {n.width}, std::vector<double>(n.width, 0.0));
    in = n.width;
  }
  // Head: column 0 -> luminance logit, column 1 -> density pre-activation.
  std::normal_distribution<double> head(0.0, std::sqrt(1.0 / static_cast<double>(in)));
  std::vector<double> hw(in * 2);
  for (auto& x : hw) x = head(rng);
  store.add("nerf.head.w", {in, 2}, std::move(hw));
  store.add("nerf.head.b", {2}, {0.0, n.density_bias});
  return store;
}

ad::Value featnet_input(const Image& normalized, std::span<const Image> extra_planes) {
  const std::size_t h = normalized.height, w = normalized.width, c = 1 + extra_planes.size();
  for (const auto& p : extra_planes) {
    if (p.height != h || p.width != w) {
      throw Error(ErrorKind::DimensionMismatch, "featnet input planes must match the image size");
    }
  }
  std::vector<double> data(h * w * c);
  for (std::size_t i = 0; i < h * w; ++i) {
    data[i * c] = normalized.pixels[i];
    for (std::size_t p = 0; p < extra_planes.size(); ++p) data[i * c + 1 + p] = extra_planes[p].pixels[i];
  }
  return ad::Value::constant({h, w, c}, std::move(data));
}

ad::Value featnet_forward(const ad::ParamStore& params, const FeatNetConfig& cfg,
                          const ad::Value& input) {
  if (input.rank() != 3 || input.dim(2) != cfg.in_channels) {
    throw Error(ErrorKind::DimensionMismatch, "featnet: expected input [H,W," +
                                                  std::to_string(cfg.in_channels) + "], got " +
                                                  ad::shape_string(input.shape()));
  }
  g_featnet_calls.fetch_add(1, std::memory_order_relaxed);
  const std::size_t pad = cfg.kernel / 2;
  auto conv = [&](const ad::Value& x, const std::string& prefix, std::size_t p) {
    return ad::add(ad::conv2d(x, params.get(prefix + ".w"), p), params.get(prefix + ".b"));
  };
  ad::Value h = ad::leaky_relu(conv(input, "feat.stem", pad), cfg.slope);
  for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
    std::string base = "feat.block" + std::to_string(b);
    ad::Value r = ad::leaky_relu(conv(h, base + ".conv1", pad), cfg.slope);
    r = conv(r, base + ".conv2", pad);
    h = ad::leaky_relu(ad::add(h, r), cfg.slope);
  }
  ad::Value out = conv(h, "feat.proj", 0);
  return ad::reshape(out, {input.dim(0), input.dim(1), cfg.depth, cfg.channels});
}

std::uint64_t featnet_forward_count() { return g_featnet_calls.load(); }

void encode_query(const NerfQuery& q, std::size_t pe_freqs, std::vector<double>& out) {
  const double raw[5] = {q.x, q.y, q.z, q.theta, q.phi};
  for (double v : raw) out.push_back(v);
  for (std::size_t l = 0; l < pe_freqs; ++l) {
    double scale = std::ldexp(std::numbers::pi, static_cast<int>(l));
    for (double v : raw) {
      out.push_back(std::sin(scale * v));
      out.push_back(std::cos(scale * v));
    }
  }
}

NerfOutput nerfnet_forward(const ad::ParamStore& params, const NeRFNetConfig& cfg,
                           std::span<const NerfQuery> queries, const ad::Value& features) {
  const std::size_t n = queries.size();
  if (features.rank() != 2 || features.dim(0) != n || features.dim(1) != cfg.feature_channels) {
    throw Error(ErrorKind::DimensionMismatch, "nerfnet: features must be [N," +
                                                  std::to_string(cfg.feature_channels) + "], got " +
                                                  ad::shape_string(features.shape()));
  }
  const std::size_t qdim = 5 * (1 + 2 * cfg.pe_freqs);
  std::vector<double> enc;
  enc.reserve(n * qdim);
  for (const auto& q : queries) encode_query(q, cfg.pe_freqs, enc);
  ad::Value parts[2] = {ad::Value::constant({n, qdim}, std::move(enc)), features};
  ad::Value x = ad::concat(parts, 1);
  for (std::size_t l = 0; l < cfg.hidden_layers; ++l) {
    std::string base = "nerf.l" + std::to_string(l);
    x = ad::leaky_relu(ad::add(ad::matmul(x, params.get(base + ".w")), params.get(base + ".b")),
                       cfg.slope);
  }
  ad::Value out = ad::add(ad::matmul(x, params.get("nerf.head.w")), params.get("nerf.head.b"));
  NerfOutput result;
  result.c = ad::sigmoid(ad::reshape(ad::slice(out, 1, 0, 1), {n}));
  result.sigma = ad::softplus(ad::reshape(ad::slice(out, 1, 1, 2), {n}));
  return result;
}

}  // namespace codedlf::models
