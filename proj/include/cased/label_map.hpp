#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "cased/error.hpp"
#include "cased/image.hpp"

namespace cased {

// A per-pixel label raster: pixel values index into `labels`; kIgnore marks
// pixels excluded from every metric.
struct LabelMap {
  static constexpr std::int32_t kIgnore = -1;

  int width = 0;
  int height = 0;
  std::vector<std::int32_t> pixels;
  std::vector<std::string> labels;

  std::size_t size() const { return pixels.size(); }
  bool ignored(std::size_t i) const { return pixels[i] == kIgnore; }
  const std::string& label(std::size_t i) const { return labels[static_cast<std::size_t>(pixels[i])]; }

  // Builds a map from one label string per pixel; `ignore_label` (if
  // non-empty) becomes kIgnore.
  static LabelMap from_strings(int width, int height, const std::vector<std::string>& per_pixel,
                               const std::string& ignore_label = {}) {
    if (per_pixel.size() != static_cast<std::size_t>(width) * height) {
      fail(ErrorKind::DimensionMismatch, "label count does not match width*height");
    }
    LabelMap m;
    m.width = width;
    m.height = height;
    m.pixels.reserve(per_pixel.size());
    std::unordered_map<std::string, std::int32_t> id_of;
    for (const auto& s : per_pixel) {
      if (!ignore_label.empty() && s == ignore_label) {
        m.pixels.push_back(kIgnore);
        continue;
      }
      auto [it, inserted] = id_of.emplace(s, static_cast<std::int32_t>(m.labels.size()));
      if (inserted) m.labels.push_back(s);
      m.pixels.push_back(it->second);
    }
    return m;
  }

  std::vector<std::string> to_strings(const std::string& ignore_label = "") const {
    std::vector<std::string> out;
    out.reserve(pixels.size());
    for (std::size_t i = 0; i < pixels.size(); ++i) out.push_back(ignored(i) ? ignore_label : label(i));
    return out;
  }
};

inline std::array<std::uint8_t, 3> palette_color(std::size_t index) {
  // Bit-interleaved palette (the common segmentation-benchmark layout).
  std::array<std::uint8_t, 3> c{0, 0, 0};
  std::size_t id = index;
  for (int shift = 7; shift >= 0; --shift) {
    c[0] |= static_cast<std::uint8_t>(((id >> 0) & 1) << shift);
    c[1] |= static_cast<std::uint8_t>(((id >> 1) & 1) << shift);
    c[2] |= static_cast<std::uint8_t>(((id >> 2) & 1) << shift);
    id >>= 3;
  }
  return c;
}

inline constexpr std::uint8_t kIgnoreIndex = 255;

// Indexed PNG + JSON label table {"0": "cat", ...}. Ignore pixels are
// written as index 255, which is left out of the table.
inline void write_label_map(const LabelMap& map, const std::filesystem::path& png_path,
                            const std::filesystem::path& table_path) {
  if (map.labels.size() > kIgnoreIndex) fail(ErrorKind::InvalidArgument, "too many labels for an indexed PNG");
  IndexedImage img;
  img.width = map.width;
  img.height = map.height;
  img.indices.resize(map.pixels.size());
  for (std::size_t i = 0; i < map.pixels.size(); ++i) {
    img.indices[i] = map.ignored(i) ? kIgnoreIndex : static_cast<std::uint8_t>(map.pixels[i]);
  }
  for (std::size_t i = 0; i < 256; ++i) img.palette.push_back(palette_color(i));
  write_indexed_png(png_path, img);
  nlohmann::json table = nlohmann::json::object();
  for (std::size_t i = 0; i < map.labels.size(); ++i) table[std::to_string(i)] = map.labels[i];
  detail::write_file_bytes(table_path, table.dump(2) + "\n");
}

inline std::map<int, std::string> read_label_table(const std::filesystem::path& table_path) {
  std::map<int, std::string> table;
  try {
    const auto j = nlohmann::json::parse(detail::read_file_bytes(table_path));
    for (const auto& [key, value] : j.items()) {
      if (value.is_null()) continue;
      table[std::stoi(key)] = value.get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::ParseError, table_path.string() + ": " + e.what());
  } catch (const std::invalid_argument&) {
    fail(ErrorKind::ParseError, table_path.string() + ": label table keys must be integers");
  }
  return table;
}

// Palette indices missing from the table become kIgnore when
// `missing_is_ignore`, otherwise they are a ParseError.
inline LabelMap read_label_map(const std::filesystem::path& png_path, const std::filesystem::path& table_path,
                               bool missing_is_ignore) {
  const IndexedImage img = read_indexed_png(png_path);
  const auto table = read_label_table(table_path);
  LabelMap m;
  m.width = img.width;
  m.height = img.height;
  m.pixels.reserve(img.indices.size());
  std::map<int, std::int32_t> id_of;
  for (const auto& [index, name] : table) {
    id_of[index] = static_cast<std::int32_t>(m.labels.size());
    m.labels.push_back(name);
  }
  for (std::uint8_t v : img.indices) {
    auto it = id_of.find(v);
    if (it == id_of.end()) {
      if (!missing_is_ignore) {
        fail(ErrorKind::ParseError, png_path.string() + ": palette index " + std::to_string(v) +
                                        " has no label");
      }
      m.pixels.push_back(LabelMap::kIgnore);
    } else {
      m.pixels.push_back(it->second);
    }
  }
  return m;
}

}  // namespace cased
