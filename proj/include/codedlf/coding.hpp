#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "json.hpp"

#include "codedlf/image.hpp"
#include "codedlf/lightfield.hpp"

namespace codedlf {

// K synchronized sub-exposures: aperture transmittance a_k(u, v) and a binary
// per-pixel exposure gate p_k(y, x). The exposure gate is a tile x tile
// micro-pattern repeated over the sensor.
struct CodingPattern {
  std::size_t k = 0;
  std::size_t grid_u = 0;
  std::size_t grid_v = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t tile = 1;
  std::vector<double> aperture;       // [k][u][v]
  std::vector<double> exposure_tile;  // [k][ty][tx], values in {0, 1}

  double aperture_at(std::size_t kk, std::size_t u, std::size_t v) const {
    return aperture[(kk * grid_u + u) * grid_v + v];
  }
  double exposure_at(std::size_t kk, std::size_t y, std::size_t x) const {
    return exposure_tile[(kk * tile + y % tile) * tile + x % tile];
  }

  // Full exposure plane p_k over the sensor.
  Image exposure_plane(std::size_t kk) const;

  // Same codes applied to a sensor of a different size (the tile repeats).
  CodingPattern resized(std::size_t h, std::size_t w) const;

  // Coverage (every view and pixel class reached by some k) is part of a
  // valid stored pattern; encoding only needs the structural checks.
  void validate(bool require_coverage = true) const;

  bool operator==(const CodingPattern&) const = default;
};

// Raw (pre-normalization) coded observation and the largest value any pixel
// could take for a field of all ones.
struct CodedImage {
  Image pixels;
  double gain = 1.0;
};

enum class InputMode { Joint, Uncoded, Center };

InputMode parse_input_mode(const std::string& s);
std::string to_string(InputMode mode);

CodedImage encode_joint(const LightField& lf, const CodingPattern& pattern);
CodedImage encode_uncoded(const LightField& lf);
CodedImage center_view(const LightField& lf);

// Dispatches on the input mode; `pattern` is only read in joint mode.
CodedImage encode(const LightField& lf, InputMode mode, const CodingPattern* pattern);

CodingPattern make_default_pattern(std::size_t k, std::size_t grid_u, std::size_t grid_v,
                                   std::size_t height, std::size_t width, std::size_t tile,
                                   std::uint64_t seed);

nlohmann::json pattern_to_json(const CodingPattern& pattern);
CodingPattern pattern_from_json(const nlohmann::json& j);
CodingPattern load_pattern(const std::filesystem::path& path);
void save_pattern(const CodingPattern& pattern, const std::filesystem::path& path);

// pixels / gain, in [0, 1]. Throws if any pixel exceeds the gain.
Image normalize(const CodedImage& coded);

}  // namespace codedlf
