#include "codedlf/lightfield.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "codedlf/error.hpp"
#include "codedlf/hash.hpp"

namespace codedlf {

using nlohmann::json;

LightField::LightField(std::size_t u, std::size_t v, std::size_t h, std::size_t w, double fill)
    : grid_u(u), grid_v(v), height(h), width(w), center_u(u / 2), center_v(v / 2),
      samples(u * v * h * w, fill) {}

Image LightField::view(std::size_t u, std::size_t v) const {
  Image img(height, width);
  auto first = samples.begin() + static_cast<std::ptrdiff_t>(index(u, v, 0, 0));
  std::copy(first, first + static_cast<std::ptrdiff_t>(height * width), img.pixels.begin());
  return img;
}

void LightField::set_view(std::size_t u, std::size_t v, const Image& img) {
  if (img.height != height || img.width != width) {
    throw Error(ErrorKind::DimensionMismatch, "view size does not match light field");
  }
  std::copy(img.pixels.begin(), img.pixels.end(),
            samples.begin() + static_cast<std::ptrdiff_t>(index(u, v, 0, 0)));
}

void LightField::validate() const {
  if (grid_u == 0 || grid_v == 0 || height == 0 || width == 0) {
    throw Error(ErrorKind::InconsistentDimensions, "light field dimensions must be >= 1");
  }
  if (samples.size() != grid_u * grid_v * height * width) {
    throw Error(ErrorKind::InconsistentDimensions, "sample count does not match dimensions");
  }
  if (center_u >= grid_u || center_v >= grid_v) {
    throw Error(ErrorKind::MalformedMetadata, "center index outside the view grid");
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    double s = samples[i];
    if (!std::isfinite(s) || s < 0.0 || s > 1.0) {
      throw Error(ErrorKind::SampleOutOfRange,
                  "sample " + std::to_string(i) + " = " + std::to_string(s) + " outside [0,1]");
    }
  }
}

namespace {

std::string view_name(std::size_t u, std::size_t v) {
  return "view_" + std::to_string(u) + "_" + std::to_string(v) + ".png";
}

template <typename T>
T meta_field(const json& meta, const char* key, const std::filesystem::path& file) {
  if (!meta.contains(key)) {
    throw Error(ErrorKind::MalformedMetadata, file.string() + ": missing field '" + key + "'");
  }
  try {
    return meta.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorKind::MalformedMetadata, file.string() + ": bad type for field '" + key + "'");
  }
}

}  // namespace

LightField load_lightfield(const std::filesystem::path& dir) {
  auto meta_path = dir / "meta.json";
  std::ifstream in(meta_path);
  if (!in) throw Error(ErrorKind::MalformedMetadata, meta_path.string() + ": cannot open");
  json meta;
  try {
    in >> meta;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::MalformedMetadata, meta_path.string() + ": " + e.what());
  }
  auto gu = meta_field<std::size_t>(meta, "grid_u", meta_path);
  auto gv = meta_field<std::size_t>(meta, "grid_v", meta_path);
  auto h = meta_field<std::size_t>(meta, "height", meta_path);
  auto w = meta_field<std::size_t>(meta, "width", meta_path);
  auto depth = meta_field<int>(meta, "bit_depth", meta_path);
  if (gu == 0 || gv == 0 || h == 0 || w == 0) {
    throw Error(ErrorKind::MalformedMetadata, meta_path.string() + ": dimensions must be >= 1");
  }
  if (depth != 8 && depth != 16) {
    throw Error(ErrorKind::MalformedMetadata, meta_path.string() + ": bit_depth must be 8 or 16");
  }
  LightField lf(gu, gv, h, w);
  lf.view_spacing = meta_field<double>(meta, "view_spacing", meta_path);
  lf.center_u = meta_field<std::size_t>(meta, "center_u", meta_path);
  lf.center_v = meta_field<std::size_t>(meta, "center_v", meta_path);
  if (lf.center_u >= gu || lf.center_v >= gv) {
    throw Error(ErrorKind::MalformedMetadata, meta_path.string() + ": center index outside grid");
  }
  for (std::size_t u = 0; u < gu; ++u) {
    for (std::size_t v = 0; v < gv; ++v) {
      auto path = dir / view_name(u, v);
      if (!std::filesystem::exists(path)) {
        throw Error(ErrorKind::MissingView, "missing view " + path.string());
      }
      int stored_depth = 0;
      Image img = read_png_gray(path, &stored_depth);
      if (img.height != h || img.width != w) {
        throw Error(ErrorKind::InconsistentDimensions,
                    path.string() + ": size " + std::to_string(img.height) + "x" +
                        std::to_string(img.width) + " does not match meta.json");
      }
      if (stored_depth != depth) {
        throw Error(ErrorKind::InconsistentDimensions,
                    path.string() + ": bit depth does not match meta.json");
      }
      lf.set_view(u, v, img);
    }
  }
  lf.validate();
  return lf;
}

void save_lightfield(const LightField& lf, const std::filesystem::path& dir, int bit_depth) {
  lf.validate();
  if (bit_depth != 16) {
    throw Error(ErrorKind::InvalidConfig, "only 16-bit light fields can be written");
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, dir.string() + ": cannot create directory");
  json meta = {{"grid_u", lf.grid_u},         {"grid_v", lf.grid_v},
               {"height", lf.height},         {"width", lf.width},
               {"view_spacing", lf.view_spacing}, {"center_u", lf.center_u},
               {"center_v", lf.center_v},     {"bit_depth", bit_depth}};
  for (std::size_t u = 0; u < lf.grid_u; ++u) {
    for (std::size_t v = 0; v < lf.grid_v; ++v) {
      write_png_gray16(lf.view(u, v), dir / view_name(u, v));
    }
  }
  auto text = meta.dump(2) + "\n";
  write_file_bytes(dir / "meta.json",
                   {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

LightField extract_patch(const LightField& lf, std::size_t x0, std::size_t y0, std::size_t ph,
                         std::size_t pw) {
  if (ph == 0 || pw == 0 || x0 + pw > lf.width || y0 + ph > lf.height) {
    throw Error(ErrorKind::OutOfBounds, "patch [" + std::to_string(x0) + "+" +
                                            std::to_string(pw) + ", " + std::to_string(y0) +
                                            "+" + std::to_string(ph) + "] exceeds " +
                                            std::to_string(lf.width) + "x" +
                                            std::to_string(lf.height));
  }
  LightField out(lf.grid_u, lf.grid_v, ph, pw);
  out.view_spacing = lf.view_spacing;
  out.center_u = lf.center_u;
  out.center_v = lf.center_v;
  for (std::size_t u = 0; u < lf.grid_u; ++u)
    for (std::size_t v = 0; v < lf.grid_v; ++v)
      for (std::size_t y = 0; y < ph; ++y)
        for (std::size_t x = 0; x < pw; ++x) out.at(u, v, y, x) = lf.at(u, v, y0 + y, x0 + x);
  return out;
}

Image extract_epi(const LightField& lf, std::size_t y, std::size_t v) {
  if (y >= lf.height || v >= lf.grid_v) {
    throw Error(ErrorKind::OutOfBounds, "EPI row " + std::to_string(y) + " / view " +
                                            std::to_string(v) + " out of range");
  }
  Image epi(lf.grid_u, lf.width);
  for (std::size_t u = 0; u < lf.grid_u; ++u)
    for (std::size_t x = 0; x < lf.width; ++x) epi.at(u, x) = lf.at(u, v, y, x);
  return epi;
}

// ---------------------------------------------------------------------------
// Procedural textures and masks, defined on the unbounded integer lattice so
// that shifted views never run off the texture.

namespace {

double lattice_uniform(std::uint64_t seed, std::int64_t a, std::int64_t b, std::uint64_t c = 0) {
  return to_unit(hash_combine({seed, static_cast<std::uint64_t>(a), static_cast<std::uint64_t>(b), c}));
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  return (a % b != 0 && ((a < 0) != (b < 0))) ? q - 1 : q;
}

double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

// Smoothly interpolated lattice noise with cell size `cell`, evaluated at an
// integer position.
double value_noise_octave(std::uint64_t seed, std::int64_t i, std::int64_t j, std::int64_t cell,
                          std::uint64_t octave) {
  std::int64_t ci = floor_div(i, cell), cj = floor_div(j, cell);
  double fi = smooth(static_cast<double>(i - ci * cell) / static_cast<double>(cell));
  double fj = smooth(static_cast<double>(j - cj * cell) / static_cast<double>(cell));
  double v00 = lattice_uniform(seed, ci, cj, octave);
  double v01 = lattice_uniform(seed, ci, cj + 1, octave);
  double v10 = lattice_uniform(seed, ci + 1, cj, octave);
  double v11 = lattice_uniform(seed, ci + 1, cj + 1, octave);
  return (v00 * (1 - fj) + v01 * fj) * (1 - fi) + (v10 * (1 - fj) + v11 * fj) * fi;
}

enum class TextureKind { Constant, Checkerboard, ValueNoise, ImpulseGrid, Impulse };
enum class MaskKind { Full, Disk, Rect, Half, Blobs };

struct Texture {
  TextureKind kind;
  std::uint64_t seed;
  std::int64_t scale;
  std::int64_t off_i, off_j;
  double lo, hi;
  std::int64_t center_i, center_j;

  double operator()(std::int64_t i, std::int64_t j) const {
    switch (kind) {
      case TextureKind::Constant:
        return lo;
      case TextureKind::Checkerboard: {
        auto a = floor_div(i + off_i, scale) + floor_div(j + off_j, scale);
        return (a % 2 == 0) ? lo : hi;
      }
      case TextureKind::ValueNoise: {
        double sum = 0.0, amp = 1.0, norm = 0.0;
        std::int64_t cell = scale;
        for (std::uint64_t o = 0; o < 3 && cell >= 1; ++o) {
          sum += amp * value_noise_octave(seed, i + off_i, j + off_j, cell, o);
          norm += amp;
          amp *= 0.5;
          cell = std::max<std::int64_t>(1, cell / 2);
        }
        double n = sum / norm;
        n = std::clamp(0.5 + 1.8 * (n - 0.5), 0.0, 1.0);
        return lo + (hi - lo) * n;
      }
      case TextureKind::ImpulseGrid: {
        bool on = ((i + off_i) % scale + scale) % scale == 0 && ((j + off_j) % scale + scale) % scale == 0;
        return on ? hi : lo;
      }
      case TextureKind::Impulse:
        return (i == center_i && j == center_j) ? 1.0 : 0.0;
    }
    return 0.0;
  }
};

struct Mask {
  MaskKind kind;
  std::uint64_t seed;
  double ci, cj, ri, rj;

  double operator()(std::int64_t i, std::int64_t j) const {
    switch (kind) {
      case MaskKind::Full:
        return 1.0;
      case MaskKind::Disk: {
        double di = (static_cast<double>(i) - ci) / ri;
        double dj = (static_cast<double>(j) - cj) / rj;
        return di * di + dj * dj <= 1.0 ? 1.0 : 0.0;
      }
      case MaskKind::Rect:
        return std::abs(static_cast<double>(i) - ci) <= ri &&
                       std::abs(static_cast<double>(j) - cj) <= rj
                   ? 1.0
                   : 0.0;
      case MaskKind::Half:
        return static_cast<double>(j) < cj ? 1.0 : 0.0;
      case MaskKind::Blobs:
        return value_noise_octave(seed, i, j, static_cast<std::int64_t>(ri), 0) > 0.5 ? 1.0 : 0.0;
    }
    return 0.0;
  }
};

TextureKind parse_texture(const std::string& id) {
  if (id == "constant") return TextureKind::Constant;
  if (id == "checkerboard") return TextureKind::Checkerboard;
  if (id == "value_noise") return TextureKind::ValueNoise;
  if (id == "impulse_grid") return TextureKind::ImpulseGrid;
  if (id == "impulse") return TextureKind::Impulse;
  throw Error(ErrorKind::InvalidSpec, "unknown texture '" + id + "'");
}

MaskKind parse_mask(const std::string& id) {
  if (id == "full") return MaskKind::Full;
  if (id == "disk") return MaskKind::Disk;
  if (id == "rect") return MaskKind::Rect;
  if (id == "half") return MaskKind::Half;
  if (id == "blobs") return MaskKind::Blobs;
  throw Error(ErrorKind::InvalidSpec, "unknown mask '" + id + "'");
}

Texture make_texture(const std::string& id, std::uint64_t seed, std::size_t h, std::size_t w) {
  Texture t{};
  t.kind = parse_texture(id);
  t.seed = seed;
  StreamRng rng(seed);
  t.center_i = static_cast<std::int64_t>(h / 2);
  t.center_j = static_cast<std::int64_t>(w / 2);
  t.off_i = static_cast<std::int64_t>(rng() % 64);
  t.off_j = static_cast<std::int64_t>(rng() % 64);
  switch (t.kind) {
    case TextureKind::Constant:
      t.lo = 0.2 + 0.6 * rng.uniform();
      break;
    case TextureKind::Checkerboard:
      t.scale = 3 + static_cast<std::int64_t>(rng() % 5);
      t.lo = 0.1 + 0.25 * rng.uniform();
      t.hi = 0.6 + 0.3 * rng.uniform();
      break;
    case TextureKind::ValueNoise:
      t.scale = 4 + static_cast<std::int64_t>(rng() % 7);
      t.lo = 0.05 + 0.15 * rng.uniform();
      t.hi = 0.75 + 0.2 * rng.uniform();
      break;
    case TextureKind::ImpulseGrid:
      t.scale = 4 + static_cast<std::int64_t>(rng() % 5);
      t.lo = 0.0;
      t.hi = 1.0;
      break;
    case TextureKind::Impulse:
      t.lo = 0.0;
      t.hi = 1.0;
      break;
  }
  return t;
}

Mask make_mask(const std::string& id, std::uint64_t seed, std::size_t h, std::size_t w) {
  Mask m{};
  m.kind = parse_mask(id);
  m.seed = seed;
  StreamRng rng(seed ^ 0x5a5a5a5aULL);
  double hh = static_cast<double>(h), ww = static_cast<double>(w);
  m.ci = hh * (0.35 + 0.3 * rng.uniform());
  m.cj = ww * (0.35 + 0.3 * rng.uniform());
  m.ri = hh * (0.18 + 0.17 * rng.uniform());
  m.rj = ww * (0.18 + 0.17 * rng.uniform());
  if (m.kind == MaskKind::Blobs) m.ri = std::max(6.0, std::min(hh, ww) / 4.0);
  return m;
}

struct LayerSampler {
  double disparity;
  Texture tex;
  Mask mask;
};

// Bilinear sample of premultiplied layer content at real position (fy, fx).
// Returns (alpha, alpha * value).
std::pair<double, double> sample_layer(const LayerSampler& layer, double fy, double fx) {
  double y0 = std::floor(fy), x0 = std::floor(fx);
  double wy = fy - y0, wx = fx - x0;
  auto i0 = static_cast<std::int64_t>(y0), j0 = static_cast<std::int64_t>(x0);
  double alpha = 0.0, premult = 0.0;
  const double wts[4] = {(1 - wy) * (1 - wx), (1 - wy) * wx, wy * (1 - wx), wy * wx};
  const std::int64_t di[4] = {0, 0, 1, 1};
  const std::int64_t dj[4] = {0, 1, 0, 1};
  for (int c = 0; c < 4; ++c) {
    if (wts[c] == 0.0) continue;
    double m = layer.mask(i0 + di[c], j0 + dj[c]);
    if (m == 0.0) continue;
    alpha += wts[c] * m;
    premult += wts[c] * m * layer.tex(i0 + di[c], j0 + dj[c]);
  }
  return {alpha, premult};
}

}  // namespace

const std::vector<std::string>& texture_ids() {
  static const std::vector<std::string> ids = {"constant", "checkerboard", "value_noise",
                                               "impulse_grid", "impulse"};
  return ids;
}

const std::vector<std::string>& mask_ids() {
  static const std::vector<std::string> ids = {"full", "disk", "rect", "half", "blobs"};
  return ids;
}

void validate_scene(const SceneSpec& spec, double t_min, double t_max) {
  if (spec.layers.empty()) throw Error(ErrorKind::InvalidSpec, "scene needs at least one layer");
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& layer = spec.layers[i];
    if (!std::isfinite(layer.disparity) || layer.disparity < t_min || layer.disparity > t_max) {
      throw Error(ErrorKind::InvalidSpec, "layers[" + std::to_string(i) + "].disparity outside [" +
                                              std::to_string(t_min) + ", " +
                                              std::to_string(t_max) + "]");
    }
    if (i > 0 && !(layer.disparity < spec.layers[i - 1].disparity)) {
      throw Error(ErrorKind::InvalidSpec,
                  "layers must be ordered far to near (strictly decreasing disparity)");
    }
    parse_texture(layer.texture);
    parse_mask(layer.mask);
  }
  parse_texture(spec.background.texture);
}

json scene_to_json(const SceneSpec& spec) {
  json layers = json::array();
  for (const auto& l : spec.layers) {
    layers.push_back(
        {{"disparity", l.disparity}, {"texture", l.texture}, {"seed", l.seed}, {"mask", l.mask}});
  }
  return {{"layers", layers},
          {"background", {{"texture", spec.background.texture}, {"seed", spec.background.seed}}}};
}

SceneSpec scene_from_json(const json& j) {
  SceneSpec spec;
  try {
    for (const auto& l : j.at("layers")) {
      LayerSpec layer;
      layer.disparity = l.at("disparity").get<double>();
      layer.texture = l.at("texture").get<std::string>();
      layer.seed = l.value("seed", std::uint64_t{0});
      layer.mask = l.value("mask", std::string("full"));
      spec.layers.push_back(layer);
    }
    if (j.contains("background")) {
      spec.background.texture = j["background"].at("texture").get<std::string>();
      spec.background.seed = j["background"].value("seed", std::uint64_t{0});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidSpec, std::string("scene json: ") + e.what());
  }
  validate_scene(spec);
  return spec;
}

SceneSpec load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, path.string() + ": cannot open scene file");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidSpec, path.string() + ": " + e.what());
  }
  return scene_from_json(j);
}

void save_scene(const SceneSpec& spec, const std::filesystem::path& path) {
  auto text = scene_to_json(spec).dump(2) + "\n";
  write_file_bytes(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

Image synth_view(const SceneSpec& spec, const ContinuousViewpoint& vp, std::size_t height,
                 std::size_t width, std::uint64_t seed) {
  validate_scene(spec);
  if (!std::isfinite(vp.u) || !std::isfinite(vp.v)) {
    throw Error(ErrorKind::InvalidSpec, "viewpoint must be finite");
  }
  std::vector<LayerSampler> layers;
  layers.reserve(spec.layers.size() + 1);
  // The background is coplanar with the farthest layer.
  layers.push_back({spec.layers.front().disparity,
                    make_texture(spec.background.texture,
                                 hash_combine({spec.background.seed, seed, 0xb6ULL}), height, width),
                    make_mask("full", 0, height, width)});
  for (const auto& l : spec.layers) {
    auto key = hash_combine({l.seed, seed});
    layers.push_back({l.disparity, make_texture(l.texture, key, height, width),
                      make_mask(l.mask, key, height, width)});
  }
  Image img(height, width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      double value = 0.0;
      for (const auto& layer : layers) {
        double fy = static_cast<double>(y) + layer.disparity * vp.v;
        double fx = static_cast<double>(x) + layer.disparity * vp.u;
        auto [alpha, premult] = sample_layer(layer, fy, fx);
        value = premult + (1.0 - alpha) * value;
      }
      img.at(y, x) = std::clamp(value, 0.0, 1.0);
    }
  }
  return img;
}

Image synth_disparity(const SceneSpec& spec, const ContinuousViewpoint& vp, std::size_t height,
                      std::size_t width, std::uint64_t seed) {
  validate_scene(spec);
  std::vector<LayerSampler> layers;
  for (const auto& l : spec.layers) {
    auto key = hash_combine({l.seed, seed});
    layers.push_back({l.disparity, make_texture("constant", 0, height, width), make_mask(l.mask, key, height, width)});
  }
  Image img(height, width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      // The background shares the farthest layer's disparity.
      double value = spec.layers.front().disparity;
      for (const auto& layer : layers) {
        double fy = static_cast<double>(y) + layer.disparity * vp.v;
        double fx = static_cast<double>(x) + layer.disparity * vp.u;
        double alpha = sample_layer(layer, fy, fx).first;
        value = alpha * layer.disparity + (1.0 - alpha) * value;
      }
      img.at(y, x) = value;
    }
  }
  return img;
}

LightField synth_lightfield(const SceneSpec& spec, std::size_t grid_u, std::size_t grid_v,
                            std::size_t height, std::size_t width, std::uint64_t seed) {
  if (grid_u == 0 || grid_v == 0 || height == 0 || width == 0) {
    throw Error(ErrorKind::InvalidSpec, "light field dimensions must be >= 1");
  }
  LightField lf(grid_u, grid_v, height, width);
  for (std::size_t u = 0; u < grid_u; ++u) {
    for (std::size_t v = 0; v < grid_v; ++v) {
      ContinuousViewpoint vp{static_cast<double>(u) - static_cast<double>(lf.center_u),
                             static_cast<double>(v) - static_cast<double>(lf.center_v)};
      lf.set_view(u, v, synth_view(spec, vp, height, width, seed));
    }
  }
  return lf;
}

SceneSpec random_scene(std::uint64_t seed, const RandomSceneOptions& opts) {
  StreamRng rng(hash_combine({seed, 0x5ce7eULL}));
  auto n_layers = opts.min_layers +
                  static_cast<std::size_t>(rng() % (opts.max_layers - opts.min_layers + 1));
  // Rejection-sample disparities with a minimum separation.
  std::vector<double> disp;
  for (int attempt = 0; attempt < 1000 && disp.size() < n_layers; ++attempt) {
    double d = opts.min_disparity + (opts.max_disparity - opts.min_disparity) * rng.uniform();
    bool ok = std::all_of(disp.begin(), disp.end(),
                          [&](double e) { return std::abs(e - d) >= opts.min_separation; });
    if (ok) disp.push_back(d);
  }
  std::sort(disp.begin(), disp.end(), std::greater<>());
  static const char* fg_masks[] = {"disk", "rect", "half", "blobs"};
  SceneSpec spec;
  for (std::size_t i = 0; i < disp.size(); ++i) {
    LayerSpec layer;
    layer.disparity = disp[i];
    layer.seed = rng();
    layer.texture = (rng() % 4 == 0) ? "checkerboard" : "value_noise";
    layer.mask = i == 0 ? "full" : fg_masks[rng() % 4];
    spec.layers.push_back(layer);
  }
  spec.background = {"value_noise", rng()};
  return spec;
}

}  // namespace codedlf
