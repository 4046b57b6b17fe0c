#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "codedlf/image.hpp"

namespace codedlf {

// Grayscale 4-D light field. Views are stored [u][v][y][x]; u indexes the
// horizontal viewpoint axis (parallax along x), v the vertical one.
struct LightField {
  std::size_t grid_u = 0;
  std::size_t grid_v = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  double view_spacing = 1.0;
  std::size_t center_u = 0;
  std::size_t center_v = 0;
  std::vector<double> samples;

  LightField() = default;
  LightField(std::size_t u, std::size_t v, std::size_t h, std::size_t w, double fill = 0.0);

  std::size_t index(std::size_t u, std::size_t v, std::size_t y, std::size_t x) const {
    return ((u * grid_v + v) * height + y) * width + x;
  }
  double& at(std::size_t u, std::size_t v, std::size_t y, std::size_t x) {
    return samples[index(u, v, y, x)];
  }
  double at(std::size_t u, std::size_t v, std::size_t y, std::size_t x) const {
    return samples[index(u, v, y, x)];
  }

  Image view(std::size_t u, std::size_t v) const;
  void set_view(std::size_t u, std::size_t v, const Image& img);

  // Throws if any structural invariant or sample range is violated.
  void validate() const;

  bool operator==(const LightField&) const = default;
};

// Signed viewpoint relative to the central view; integer values coincide with
// the discrete grid shifted by the center index.
struct ContinuousViewpoint {
  double u = 0.0;
  double v = 0.0;
};

LightField load_lightfield(const std::filesystem::path& dir);
void save_lightfield(const LightField& lf, const std::filesystem::path& dir, int bit_depth = 16);

LightField extract_patch(const LightField& lf, std::size_t x0, std::size_t y0, std::size_t ph,
                         std::size_t pw);

// EPI(u, x) = L(u, v, x, y) for fixed row y and vertical view v.
Image extract_epi(const LightField& lf, std::size_t y, std::size_t v);

// ---------------------------------------------------------------------------
// Synthetic layered scenes.
//
// A layer at disparity d seen from viewpoint (u, v) shows its content sampled
// at (x + d*u, y + d*v); i.e. the content moves by -d pixels per viewpoint
// step. With this sign the layer sits at ray parameter t = d.
// Layers are listed far to near, which means strictly decreasing disparity:
// rays are composited from t_min (front) to t_max (back).

struct TextureSpec {
  std::string texture = "value_noise";
  std::uint64_t seed = 0;
};

struct LayerSpec {
  double disparity = 0.0;
  std::string texture = "value_noise";
  std::uint64_t seed = 0;
  std::string mask = "full";
};

struct SceneSpec {
  std::vector<LayerSpec> layers;
  TextureSpec background;
};

inline constexpr double kDefaultMinDisparity = -3.0;
inline constexpr double kDefaultMaxDisparity = 3.0;

void validate_scene(const SceneSpec& spec, double t_min = kDefaultMinDisparity,
                    double t_max = kDefaultMaxDisparity);

nlohmann::json scene_to_json(const SceneSpec& spec);
SceneSpec scene_from_json(const nlohmann::json& j);
SceneSpec load_scene(const std::filesystem::path& path);
void save_scene(const SceneSpec& spec, const std::filesystem::path& path);

const std::vector<std::string>& texture_ids();
const std::vector<std::string>& mask_ids();

Image synth_view(const SceneSpec& spec, const ContinuousViewpoint& vp, std::size_t height,
                 std::size_t width, std::uint64_t seed);

// Ground-truth disparity of what each pixel of synth_view shows, blended by
// layer coverage at mask edges.
Image synth_disparity(const SceneSpec& spec, const ContinuousViewpoint& vp, std::size_t height,
                      std::size_t width, std::uint64_t seed);
LightField synth_lightfield(const SceneSpec& spec, std::size_t grid_u, std::size_t grid_v,
                            std::size_t height, std::size_t width, std::uint64_t seed);

struct RandomSceneOptions {
  std::size_t min_layers = 2;
  std::size_t max_layers = 3;
  double min_disparity = -2.5;
  double max_disparity = 2.5;
  double min_separation = 1.0;
};

// Draws a random layered scene (full background layer plus masked foreground
// layers) for desk-scale training and evaluation sets.
SceneSpec random_scene(std::uint64_t seed, const RandomSceneOptions& opts = {});

}  // namespace codedlf
