#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"

#include "codedlf/autodiff.hpp"
#include "codedlf/hash.hpp"
#include "codedlf/image.hpp"
#include "codedlf/lightfield.hpp"
#include "codedlf/models.hpp"
#include "codedlf/optim.hpp"

namespace codedlf::render {

// A ray leaves viewpoint (u, v) and crosses the Z = 0 plane at pixel (x, y).
// At ray parameter t it sits at pixel (x + u t, y + v t) on depth level t.
struct RayCoord {
  double u = 0, v = 0;
  double x = 0, y = 0;
};

struct RenderConfig {
  double t_min = -3.0;
  double t_max = 3.0;
  std::size_t n_train_samples = 16;
  std::size_t n_test_samples = 32;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const RenderConfig& cfg);
RenderConfig render_config_from_json(const nlohmann::json& j);

enum class SampleMode { Train, Test };

// X along width, Y along height, Z along t; each an affine map onto [-1, 1].
ad::Vec3 map_to_ndc(const RayCoord& ray, double t, std::size_t height, std::size_t width,
                    const RenderConfig& cfg);

// Train: one uniform draw per equal bin (needs rng). Test: bin centers.
std::vector<double> place_samples(const RenderConfig& cfg, SampleMode mode, StreamRng* rng = nullptr);

struct CompositeResult {
  double luminance = 0.0;
  std::vector<double> weights;
  std::vector<double> transmittance;  // T_i, transmittance before sample i
  double final_transmittance = 1.0;
};

// Plain-double quadrature over one ray; the last interval ends at t_far.
CompositeResult composite(std::span<const double> c, std::span<const double> sigma,
                          std::span<const double> t, double t_far);

struct RayBatch {
  ad::Value luminance;          // [R]
  std::vector<double> t;        // R * S
  std::vector<double> weights;  // R * S
  std::size_t samples_per_ray = 0;

  double pseudo_depth(std::size_t ray) const;
};

// Renders rays through the feature volume [H, W, D, C]. In train mode ray r
// draws its samples from StreamRng(hash(seed, ray_ids[r])).
RayBatch render_rays(const ad::Value& featvol, const ad::ParamStore& params,
                     const models::NeRFNetConfig& nerf, std::span<const RayCoord> rays,
                     const RenderConfig& cfg, SampleMode mode,
                     std::span<const std::uint64_t> ray_ids = {});

double render_ray(const ad::Value& featvol, const ad::ParamStore& params,
                  const models::NeRFNetConfig& nerf, const RayCoord& ray, const RenderConfig& cfg,
                  SampleMode mode = SampleMode::Test, std::uint64_t ray_id = 0);

struct RenderedView {
  Image image;
  Image depth;
};

// One test-mode ray per pixel center. Uses up to CODEDLF_THREADS threads;
// the result does not depend on the thread count.
RenderedView render_view(const ad::Value& featvol, const ad::ParamStore& params,
                         const models::NeRFNetConfig& nerf, const ContinuousViewpoint& vp,
                         const RenderConfig& cfg);

// Thread cap from CODEDLF_THREADS (default: hardware concurrency).
std::size_t thread_limit();

}  // namespace codedlf::render
