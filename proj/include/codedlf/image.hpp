#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace codedlf {

// Row-major grayscale image, pixel (y, x) at index y * width + x.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0)
      : height(h), width(w), pixels(h * w, fill) {}

  double& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  double at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  std::size_t size() const { return pixels.size(); }

  bool operator==(const Image&) const = default;
};

struct Rgb8 {
  std::uint8_t r, g, b;
};

// PNG encode/decode. Grayscale images are quantized to 16 bit with
// round(v * 65535) after clamping to [0, 1].
std::vector<std::uint8_t> encode_png_gray16(const Image& img);
std::vector<std::uint8_t> encode_png_rgb8(std::size_t height, std::size_t width,
                                          std::span<const Rgb8> pixels);

void write_png_gray16(const Image& img, const std::filesystem::path& path);

// Reads an 8- or 16-bit grayscale PNG into [0, 1]. `bit_depth_out` receives the
// stored bit depth when non-null.
Image read_png_gray(const std::filesystem::path& path, int* bit_depth_out = nullptr);

// Raw float maps: 16-byte header (4-byte magic, uint32 height, uint32 width,
// uint32 reserved = 0) followed by height*width little-endian f32 values.
void write_f32_map(const Image& img, const std::filesystem::path& path, std::string_view magic);
std::vector<std::uint8_t> encode_f32_map(const Image& img, std::string_view magic);
Image read_f32_map(const std::filesystem::path& path, std::string_view magic);

inline constexpr std::string_view kDepthMagic = "LFDM";
inline constexpr std::string_view kCodedMagic = "LFCI";

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace codedlf
