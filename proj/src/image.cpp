#include "codedlf/image.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "codedlf/error.hpp"

namespace codedlf {
namespace {

void append_bytes(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + len);
}

void flush_noop(png_structp) {}

[[noreturn]] void png_fail(png_structp, png_const_charp msg) {
  throw Error(ErrorKind::Io, std::string("png: ") + msg);
}

void png_warn(png_structp, png_const_charp) {}

struct MemoryReader {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t pos;
};

void read_bytes(png_structp png, png_bytep out, png_size_t len) {
  auto* r = static_cast<MemoryReader*>(png_get_io_ptr(png));
  if (r->pos + len > r->size) png_error(png, "truncated PNG stream");
  std::memcpy(out, r->data + r->pos, len);
  r->pos += len;
}

std::vector<std::uint8_t> encode_png(std::size_t height, std::size_t width, int color_type,
                                     int bit_depth, const std::vector<png_bytep>& rows) {
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png_create_info_struct(png);
  try {
    png_set_write_fn(png, &out, append_bytes, flush_noop);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
                 bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, const_cast<png_bytepp>(rows.data()));
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

std::uint16_t quantize16(double v) {
  double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint16_t>(std::lround(c * 65535.0));
}

}  // namespace

std::vector<std::uint8_t> encode_png_gray16(const Image& img) {
  // PNG stores 16-bit samples big-endian.
  std::vector<std::uint8_t> buf(img.height * img.width * 2);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    std::uint16_t q = quantize16(img.pixels[i]);
    buf[2 * i] = static_cast<std::uint8_t>(q >> 8);
    buf[2 * i + 1] = static_cast<std::uint8_t>(q & 0xff);
  }
  std::vector<png_bytep> rows(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = buf.data() + y * img.width * 2;
  return encode_png(img.height, img.width, PNG_COLOR_TYPE_GRAY, 16, rows);
}

std::vector<std::uint8_t> encode_png_rgb8(std::size_t height, std::size_t width,
                                          std::span<const Rgb8> pixels) {
  if (pixels.size() != height * width) {
    throw Error(ErrorKind::DimensionMismatch, "rgb pixel count does not match dimensions");
  }
  std::vector<std::uint8_t> buf(pixels.size() * 3);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    buf[3 * i] = pixels[i].r;
    buf[3 * i + 1] = pixels[i].g;
    buf[3 * i + 2] = pixels[i].b;
  }
  std::vector<png_bytep> rows(height);
  for (std::size_t y = 0; y < height; ++y) rows[y] = buf.data() + y * width * 3;
  return encode_png(height, width, PNG_COLOR_TYPE_RGB, 8, rows);
}

void write_png_gray16(const Image& img, const std::filesystem::path& path) {
  auto bytes = encode_png_gray16(img);
  write_file_bytes(path, bytes);
}

Image read_png_gray(const std::filesystem::path& path, int* bit_depth_out) {
  auto bytes = read_file_bytes(path);
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    throw Error(ErrorKind::Io, path.string() + ": not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png_create_info_struct(png);
  MemoryReader reader{bytes.data(), bytes.size(), 0};
  Image img;
  try {
    png_set_read_fn(png, &reader, read_bytes);
    png_read_info(png, info);
    png_uint_32 width = png_get_image_width(png, info);
    png_uint_32 height = png_get_image_height(png, info);
    int depth = png_get_bit_depth(png, info);
    int color = png_get_color_type(png, info);
    if (color != PNG_COLOR_TYPE_GRAY) {
      throw Error(ErrorKind::MalformedMetadata, path.string() + ": expected a grayscale PNG");
    }
    if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);
    std::size_t rowbytes = png_get_rowbytes(png, info);
    std::vector<std::uint8_t> buf(rowbytes * height);
    std::vector<png_bytep> rows(height);
    for (png_uint_32 y = 0; y < height; ++y) rows[y] = buf.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    img = Image(height, width);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
      if (depth == 16) {
        unsigned v = (unsigned{buf[2 * i]} << 8) | buf[2 * i + 1];
        img.pixels[i] = v / 65535.0;
      } else {
        img.pixels[i] = buf[i] / 255.0;
      }
    }
    if (bit_depth_out) *bit_depth_out = depth < 8 ? 8 : depth;
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

std::vector<std::uint8_t> encode_f32_map(const Image& img, std::string_view magic) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  if (magic.size() != 4) throw Error(ErrorKind::InvalidConfig, "f32 map magic must be 4 bytes");
  std::vector<std::uint8_t> out(16 + img.pixels.size() * 4);
  std::memcpy(out.data(), magic.data(), 4);
  auto h = static_cast<std::uint32_t>(img.height);
  auto w = static_cast<std::uint32_t>(img.width);
  std::uint32_t reserved = 0;
  std::memcpy(out.data() + 4, &h, 4);
  std::memcpy(out.data() + 8, &w, 4);
  std::memcpy(out.data() + 12, &reserved, 4);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    auto f = static_cast<float>(img.pixels[i]);
    std::memcpy(out.data() + 16 + 4 * i, &f, 4);
  }
  return out;
}

void write_f32_map(const Image& img, const std::filesystem::path& path, std::string_view magic) {
  write_file_bytes(path, encode_f32_map(img, magic));
}

Image read_f32_map(const std::filesystem::path& path, std::string_view magic) {
  auto bytes = read_file_bytes(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), magic.data(), 4) != 0) {
    throw Error(ErrorKind::Io, path.string() + ": bad magic, expected " + std::string(magic));
  }
  std::uint32_t h = 0, w = 0;
  std::memcpy(&h, bytes.data() + 4, 4);
  std::memcpy(&w, bytes.data() + 8, 4);
  if (bytes.size() != 16 + std::size_t{h} * w * 4) {
    throw Error(ErrorKind::Io, path.string() + ": truncated f32 map");
  }
  Image img(h, w);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    float f = 0;
    std::memcpy(&f, bytes.data() + 16 + 4 * i, 4);
    img.pixels[i] = f;
  }
  return img;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, path.string() + ": cannot open for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::Io, path.string() + ": write failed");
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorKind::Io, path.string() + ": rename failed");
  }
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, path.string() + ": cannot open for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace codedlf
