#include "codedlf/coding.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "codedlf/error.hpp"
#include "codedlf/hash.hpp"

namespace codedlf {

using nlohmann::json;

Image CodingPattern::exposure_plane(std::size_t kk) const {
  Image img(height, width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) img.at(y, x) = exposure_at(kk, y, x);
  return img;
}

CodingPattern CodingPattern::resized(std::size_t h, std::size_t w) const {
  CodingPattern out = *this;
  out.height = h;
  out.width = w;
  out.validate();
  return out;
}

void CodingPattern::validate(bool require_coverage) const {
  if (k < 1) throw Error(ErrorKind::InvalidPattern, "pattern needs K >= 1");
  if (grid_u == 0 || grid_v == 0 || height == 0 || width == 0 || tile == 0) {
    throw Error(ErrorKind::InvalidPattern, "pattern dimensions must be >= 1");
  }
  if (aperture.size() != k * grid_u * grid_v) {
    throw Error(ErrorKind::InvalidPattern, "aperture size does not match K*U*V");
  }
  if (exposure_tile.size() != k * tile * tile) {
    throw Error(ErrorKind::InvalidPattern, "exposure tile size does not match K*T*T");
  }
  for (double a : aperture) {
    if (!(a >= 0.0 && a <= 1.0)) throw Error(ErrorKind::InvalidPattern, "aperture value outside [0,1]");
  }
  for (double p : exposure_tile) {
    if (p != 0.0 && p != 1.0) throw Error(ErrorKind::InvalidPattern, "exposure values must be 0 or 1");
  }
  if (!require_coverage) return;
  for (std::size_t u = 0; u < grid_u; ++u) {
    for (std::size_t v = 0; v < grid_v; ++v) {
      double s = 0;
      for (std::size_t kk = 0; kk < k; ++kk) s += aperture_at(kk, u, v);
      if (s <= 0.0) {
        throw Error(ErrorKind::InvalidPattern, "view (" + std::to_string(u) + "," +
                                                   std::to_string(v) + ") is never transmitted");
      }
    }
  }
  for (std::size_t y = 0; y < tile; ++y) {
    for (std::size_t x = 0; x < tile; ++x) {
      double s = 0;
      for (std::size_t kk = 0; kk < k; ++kk) s += exposure_at(kk, y, x);
      if (s <= 0.0) throw Error(ErrorKind::InvalidPattern, "pixel class is never exposed");
    }
  }
}

InputMode parse_input_mode(const std::string& s) {
  if (s == "joint") return InputMode::Joint;
  if (s == "uncoded") return InputMode::Uncoded;
  if (s == "center") return InputMode::Center;
  throw Error(ErrorKind::InvalidConfig, "unknown input mode '" + s + "'");
}

std::string to_string(InputMode mode) {
  switch (mode) {
    case InputMode::Joint: return "joint";
    case InputMode::Uncoded: return "uncoded";
    case InputMode::Center: return "center";
  }
  return "joint";
}

CodedImage encode_joint(const LightField& lf, const CodingPattern& pattern) {
  if (pattern.grid_u != lf.grid_u || pattern.grid_v != lf.grid_v ||
      pattern.height != lf.height || pattern.width != lf.width) {
    throw Error(ErrorKind::DimensionMismatch, "pattern dimensions do not match the light field");
  }
  pattern.validate(false);
  const std::size_t h = lf.height, w = lf.width;
  CodedImage out{Image(h, w), 0.0};
  Image total_weight(h, w);
  for (std::size_t u = 0; u < lf.grid_u; ++u) {
    for (std::size_t v = 0; v < lf.grid_v; ++v) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          double weight = 0.0;
          for (std::size_t kk = 0; kk < pattern.k; ++kk) {
            weight += pattern.aperture_at(kk, u, v) * pattern.exposure_at(kk, y, x);
          }
          out.pixels.at(y, x) += weight * lf.at(u, v, y, x);
          total_weight.at(y, x) += weight;
        }
      }
    }
  }
  out.gain = *std::max_element(total_weight.pixels.begin(), total_weight.pixels.end());
  return out;
}

CodedImage encode_uncoded(const LightField& lf) {
  CodedImage out{Image(lf.height, lf.width), static_cast<double>(lf.grid_u * lf.grid_v)};
  for (std::size_t u = 0; u < lf.grid_u; ++u)
    for (std::size_t v = 0; v < lf.grid_v; ++v)
      for (std::size_t y = 0; y < lf.height; ++y)
        for (std::size_t x = 0; x < lf.width; ++x) out.pixels.at(y, x) += lf.at(u, v, y, x);
  return out;
}

CodedImage center_view(const LightField& lf) { return {lf.view(lf.center_u, lf.center_v), 1.0}; }

CodedImage encode(const LightField& lf, InputMode mode, const CodingPattern* pattern) {
  switch (mode) {
    case InputMode::Joint:
      if (!pattern) throw Error(ErrorKind::InvalidConfig, "joint coding requires a pattern");
      return encode_joint(lf, *pattern);
    case InputMode::Uncoded:
      return encode_uncoded(lf);
    case InputMode::Center:
      return center_view(lf);
  }
  throw Error(ErrorKind::InvalidConfig, "unknown input mode");
}

CodingPattern make_default_pattern(std::size_t k, std::size_t grid_u, std::size_t grid_v,
                                   std::size_t height, std::size_t width, std::size_t tile,
                                   std::uint64_t seed) {
  if (k < 1) throw Error(ErrorKind::InvalidPattern, "pattern needs K >= 1");
  if (grid_u == 0 || grid_v == 0 || height == 0 || width == 0 || tile == 0) {
    throw Error(ErrorKind::InvalidPattern, "pattern dimensions must be >= 1");
  }
  CodingPattern p;
  p.k = k;
  p.grid_u = grid_u;
  p.grid_v = grid_v;
  p.height = height;
  p.width = width;
  p.tile = tile;
  StreamRng rng(hash_combine({seed, 0xc0deULL}));
  auto bit = [&] { return static_cast<double>(rng() >> 63); };
  p.aperture.resize(k * grid_u * grid_v);
  for (auto& a : p.aperture) a = bit();
  p.exposure_tile.resize(k * tile * tile);
  for (auto& e : p.exposure_tile) e = bit();
  // Coverage repair: every view and every pixel class must be open in some k.
  for (std::size_t u = 0; u < grid_u; ++u) {
    for (std::size_t v = 0; v < grid_v; ++v) {
      double s = 0;
      for (std::size_t kk = 0; kk < k; ++kk) s += p.aperture_at(kk, u, v);
      if (s == 0.0) p.aperture[((rng() % k) * grid_u + u) * grid_v + v] = 1.0;
    }
  }
  for (std::size_t y = 0; y < tile; ++y) {
    for (std::size_t x = 0; x < tile; ++x) {
      double s = 0;
      for (std::size_t kk = 0; kk < k; ++kk) s += p.exposure_tile[(kk * tile + y) * tile + x];
      if (s == 0.0) p.exposure_tile[((rng() % k) * tile + y) * tile + x] = 1.0;
    }
  }
  p.validate();
  return p;
}

json pattern_to_json(const CodingPattern& p) {
  json ap = json::array();
  for (std::size_t kk = 0; kk < p.k; ++kk) {
    json rows = json::array();
    for (std::size_t u = 0; u < p.grid_u; ++u) {
      json row = json::array();
      for (std::size_t v = 0; v < p.grid_v; ++v) row.push_back(p.aperture_at(kk, u, v));
      rows.push_back(row);
    }
    ap.push_back(rows);
  }
  json ex = json::array();
  for (std::size_t kk = 0; kk < p.k; ++kk) {
    json rows = json::array();
    for (std::size_t y = 0; y < p.tile; ++y) {
      json row = json::array();
      for (std::size_t x = 0; x < p.tile; ++x)
        row.push_back(static_cast<int>(p.exposure_tile[(kk * p.tile + y) * p.tile + x]));
      rows.push_back(row);
    }
    ex.push_back(rows);
  }
  return {{"k", p.k},           {"grid_u", p.grid_u}, {"grid_v", p.grid_v},
          {"height", p.height}, {"width", p.width},   {"tile", p.tile},
          {"aperture", ap},     {"exposure_tile", ex}};
}

CodingPattern pattern_from_json(const json& j) {
  for (const char* key : {"k", "grid_u", "grid_v", "height", "width", "tile", "aperture",
                          "exposure_tile"}) {
    if (!j.contains(key)) throw Error(ErrorKind::Schema, std::string("pattern: missing '") + key + "'");
  }
  CodingPattern p;
  try {
    p.k = j["k"].get<std::size_t>();
    p.grid_u = j["grid_u"].get<std::size_t>();
    p.grid_v = j["grid_v"].get<std::size_t>();
    p.height = j["height"].get<std::size_t>();
    p.width = j["width"].get<std::size_t>();
    p.tile = j["tile"].get<std::size_t>();
    if (p.k < 1) throw Error(ErrorKind::Schema, "pattern: k must be >= 1");
    const auto& ap = j["aperture"];
    if (ap.size() != p.k) throw Error(ErrorKind::Schema, "pattern: aperture must have k entries");
    for (const auto& rows : ap) {
      if (rows.size() != p.grid_u) throw Error(ErrorKind::Schema, "pattern: aperture rows != grid_u");
      for (const auto& row : rows) {
        if (row.size() != p.grid_v) throw Error(ErrorKind::Schema, "pattern: aperture cols != grid_v");
        for (const auto& a : row) p.aperture.push_back(a.get<double>());
      }
    }
    const auto& ex = j["exposure_tile"];
    if (ex.size() != p.k) throw Error(ErrorKind::Schema, "pattern: exposure_tile must have k entries");
    for (const auto& rows : ex) {
      if (rows.size() != p.tile) throw Error(ErrorKind::Schema, "pattern: exposure_tile rows != tile");
      for (const auto& row : rows) {
        if (row.size() != p.tile) throw Error(ErrorKind::Schema, "pattern: exposure_tile cols != tile");
        for (const auto& e : row) p.exposure_tile.push_back(e.get<double>());
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Schema, std::string("pattern: ") + e.what());
  }
  try {
    p.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::Schema, e.what());
  }
  return p;
}

CodingPattern load_pattern(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, path.string() + ": cannot open pattern file");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Schema, path.string() + ": " + e.what());
  }
  return pattern_from_json(j);
}

void save_pattern(const CodingPattern& pattern, const std::filesystem::path& path) {
  pattern.validate();
  auto text = pattern_to_json(pattern).dump() + "\n";
  write_file_bytes(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

Image normalize(const CodedImage& coded) {
  if (!(coded.gain > 0.0)) throw Error(ErrorKind::InvalidConfig, "coded image gain must be > 0");
  Image out = coded.pixels;
  for (auto& px : out.pixels) {
    px /= coded.gain;
    if (!(px <= 1.0 + 1e-9) || !(px >= -1e-9)) {
      throw Error(ErrorKind::SampleOutOfRange, "normalized coded pixel outside [0,1]");
    }
    px = std::clamp(px, 0.0, 1.0);
  }
  return out;
}

}  // namespace codedlf
