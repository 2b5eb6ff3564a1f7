#pragma once

// Minimal raster types and PNG codecs (libpng) used by the dense pipeline,
// the provider protocol and the segmentation evaluator.

#include <array>
#include <csetjmp>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <png.h>

#include "cased/error.hpp"
#include "cased/vfeb.hpp"

namespace cased {

struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t* pixel(int x, int y) { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* pixel(int x, int y) const {
    return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  void set(int x, int y, std::array<std::uint8_t, 3> c) { std::memcpy(pixel(x, y), c.data(), 3); }

  bool operator==(const Image&) const = default;
};

// Pixel-aligned rectangle [x0, x1) x [y0, y1).
struct Rect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool operator==(const Rect&) const = default;
};

inline Image crop(const Image& img, const Rect& r) {
  if (r.x0 < 0 || r.y0 < 0 || r.x1 > img.width || r.y1 > img.height || r.x0 >= r.x1 || r.y0 >= r.y1) {
    fail(ErrorKind::InvalidArgument, "crop rectangle outside image");
  }
  Image out(r.width(), r.height());
  for (int y = r.y0; y < r.y1; ++y) {
    std::memcpy(out.pixel(0, y - r.y0), img.pixel(r.x0, y), static_cast<std::size_t>(r.width()) * 3);
  }
  return out;
}

inline Image decode_png(std::string_view bytes) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    fail(ErrorKind::DecodeError, std::string("PNG decode: ") + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  Image out(static_cast<int>(image.width), static_cast<int>(image.height));
  if (!png_image_finish_read(&image, nullptr, out.rgb.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    fail(ErrorKind::DecodeError, "PNG decode: " + msg);
  }
  return out;
}

inline Image read_png(const std::filesystem::path& path) {
  return decode_png(detail::read_file_bytes(path));
}

inline std::string encode_png(const Image& img) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.rgb.data(), 0, nullptr)) {
    fail(ErrorKind::IoError, std::string("PNG encode: ") + image.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.rgb.data(), 0, nullptr)) {
    fail(ErrorKind::IoError, std::string("PNG encode: ") + image.message);
  }
  out.resize(size);
  return out;
}

inline void write_png(const std::filesystem::path& path, const Image& img) {
  detail::write_file_bytes(path, encode_png(img));
}

// Palette-indexed raster: one byte per pixel, interpreted through a label
// table by the segmentation tools.
struct IndexedImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> indices;
  std::vector<std::array<std::uint8_t, 3>> palette;

  std::uint8_t at(int x, int y) const { return indices[static_cast<std::size_t>(y) * width + x]; }
};

namespace detail {

struct PngReadState {
  std::string_view bytes;
  std::size_t offset = 0;
};

inline void png_read_callback(png_structp png, png_bytep out, png_size_t n) {
  auto* st = static_cast<PngReadState*>(png_get_io_ptr(png));
  if (st->offset + n > st->bytes.size()) png_error(png, "unexpected end of data");
  std::memcpy(out, st->bytes.data() + st->offset, n);
  st->offset += n;
}

inline void png_write_callback(png_structp png, png_bytep data, png_size_t n) {
  static_cast<std::string*>(png_get_io_ptr(png))->append(reinterpret_cast<const char*>(data), n);
}

inline void png_flush_callback(png_structp) {}

}  // namespace detail

// Reads an 8-bit palette or grayscale PNG as raw indices (no color mapping).
inline IndexedImage decode_indexed_png(std::string_view bytes) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(ErrorKind::DecodeError, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  detail::PngReadState state{bytes, 0};
  IndexedImage out;
  std::string error;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::DecodeError, "invalid indexed PNG");
  }
  png_set_read_fn(png, &state, detail::png_read_callback);
  png_read_info(png, info);
  const int color_type = png_get_color_type(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  if ((color_type != PNG_COLOR_TYPE_PALETTE && color_type != PNG_COLOR_TYPE_GRAY) || bit_depth > 8) {
    error = "label PNG must be 8-bit palette or grayscale";
  } else {
    if (bit_depth < 8) png_set_packing(png);
    out.width = static_cast<int>(png_get_image_width(png, info));
    out.height = static_cast<int>(png_get_image_height(png, info));
    if (color_type == PNG_COLOR_TYPE_PALETTE) {
      png_colorp palette = nullptr;
      int n = 0;
      png_get_PLTE(png, info, &palette, &n);
      for (int i = 0; i < n; ++i) out.palette.push_back({palette[i].red, palette[i].green, palette[i].blue});
    }
    png_read_update_info(png, info);
    out.indices.resize(static_cast<std::size_t>(out.width) * out.height);
    rows.resize(static_cast<std::size_t>(out.height));
    for (int y = 0; y < out.height; ++y) rows[y] = out.indices.data() + static_cast<std::size_t>(y) * out.width;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (!error.empty()) fail(ErrorKind::DecodeError, error);
  return out;
}

inline IndexedImage read_indexed_png(const std::filesystem::path& path) {
  return decode_indexed_png(detail::read_file_bytes(path));
}

inline std::string encode_indexed_png(const IndexedImage& img) {
  if (img.palette.empty() || img.palette.size() > 256) {
    fail(ErrorKind::InvalidArgument, "indexed PNG needs 1..256 palette entries");
  }
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(ErrorKind::IoError, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  std::string out;
  std::vector<png_color> palette;
  std::vector<png_const_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::IoError, "indexed PNG encode failed");
  }
  png_set_write_fn(png, &out, detail::png_write_callback, detail::png_flush_callback);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_PALETTE, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  for (const auto& c : img.palette) palette.push_back({c[0], c[1], c[2]});
  png_set_PLTE(png, info, palette.data(), static_cast<int>(palette.size()));
  png_write_info(png, info);
  rows.resize(static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y) rows[y] = img.indices.data() + static_cast<std::size_t>(y) * img.width;
  png_write_image(png, const_cast<png_bytepp>(rows.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

inline void write_indexed_png(const std::filesystem::path& path, const IndexedImage& img) {
  detail::write_file_bytes(path, encode_indexed_png(img));
}

inline std::string base64_encode(std::string_view in) {
  static constexpr char kAlphabet[] =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= in.size(); i += 3) {
    const std::uint32_t v = (static_cast<std::uint8_t>(in[i]) << 16) |
                            (static_cast<std::uint8_t>(in[i + 1]) << 8) | static_cast<std::uint8_t>(in[i + 2]);
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (i < in.size()) {
    std::uint32_t v = static_cast<std::uint8_t>(in[i]) << 16;
    if (i + 1 < in.size()) v |= static_cast<std::uint8_t>(in[i + 1]) << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += i + 1 < in.size() ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

inline std::string base64_decode(std::string_view in) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::string out;
  std::uint32_t acc = 0;
  int bits = 0;
  for (char c : in) {
    if (c == '=' || c == '\n' || c == '\r') continue;
    const int v = value(c);
    if (v < 0) fail(ErrorKind::DecodeError, "invalid base64");
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<char>((acc >> bits) & 0xff));
    }
  }
  return out;
}

}  // namespace cased
