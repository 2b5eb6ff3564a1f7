#pragma once

// Deterministic stand-in for the neural encoders. Every word maps to a
// hash-seeded random direction; planted concepts share one direction across
// their name and aliases (and optionally a pixel color), which gives tests a
// controllable cluster structure in both modalities.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "cased/candidates.hpp"
#include "cased/provider.hpp"
#include "cased/unicode.hpp"

namespace cased {

struct PlantedConcept {
  std::string name;
  std::vector<std::string> aliases;
  std::optional<std::array<std::uint8_t, 3>> color;
};

struct MockProviderConfig {
  std::uint64_t seed = 0;
  std::size_t dim = 64;
  std::vector<PlantedConcept> concepts;
  double word_noise = 0.35;    // weight of an unplanted word's direction
  double alias_noise = 0.15;   // per-surface-form jitter on planted words
  int color_tolerance = 24;    // max per-channel distance to a planted color
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ (seed * 0x100000001b3ULL);
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Unit-norm Gaussian direction fully determined by (seed, key); portable
// (no std::normal_distribution).
inline std::vector<double> seeded_direction(std::uint64_t seed, std::string_view key, std::size_t dim) {
  std::uint64_t state = fnv1a(key, seed);
  std::vector<double> v(dim);
  double norm = 0.0;
  for (std::size_t i = 0; i < dim; i += 2) {
    const double u1 = (static_cast<double>(splitmix64(state) >> 11) + 0.5) * 0x1.0p-53;
    const double u2 = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    v[i] = r * std::cos(2.0 * std::numbers::pi * u2);
    if (i + 1 < dim) v[i + 1] = r * std::sin(2.0 * std::numbers::pi * u2);
  }
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

inline Embedding normalized(const std::vector<double>& acc) {
  double norm = 0.0;
  for (double x : acc) norm += x * x;
  norm = std::sqrt(norm);
  if (norm < 1e-12) fail(ErrorKind::ZeroVector, "mock embedding degenerated to zero");
  std::vector<float> out(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i] / norm);
  return Embedding(std::move(out));
}

}  // namespace detail

class MockProvider : public EmbeddingProvider {
 public:
  explicit MockProvider(MockProviderConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.dim == 0) fail(ErrorKind::InvalidArgument, "mock provider dim must be >= 1");
    for (std::size_t i = 0; i < cfg_.concepts.size(); ++i) {
      const auto& c = cfg_.concepts[i];
      concept_of_.emplace(standardize(c.name), i);
      for (const auto& a : c.aliases) concept_of_.emplace(standardize(a), i);
      directions_.push_back(detail::seeded_direction(cfg_.seed, "concept:" + c.name, cfg_.dim));
    }
  }

  explicit MockProvider(std::uint64_t seed, std::size_t dim = 64)
      : MockProvider(MockProviderConfig{seed, dim, {}}) {}

  const MockProviderConfig& config() const noexcept { return cfg_; }

  std::string name() const override { return "mock:" + std::to_string(cfg_.seed); }
  bool has_role(Role) const override { return true; }
  std::size_t dim(Role) const override { return cfg_.dim; }

  // Unit direction of a planted concept (for building test geometry).
  Embedding concept_direction(const std::string& name) const {
    auto it = concept_of_.find(standardize(name));
    if (it == concept_of_.end()) fail(ErrorKind::InvalidArgument, "no planted concept '" + name + "'");
    return detail::normalized(directions_[it->second]);
  }

  Embedding text_embedding(std::string_view text) const {
    std::vector<double> acc(cfg_.dim, 0.0);
    bool any = false;
    for (const auto& word : words(text)) {
      any = true;
      const std::string base = standardize(word);
      if (auto it = concept_of_.find(base); it != concept_of_.end()) {
        add(acc, directions_[it->second], 1.0);
        add(acc, detail::seeded_direction(cfg_.seed, "form:" + base, cfg_.dim), cfg_.alias_noise);
      } else {
        add(acc, detail::seeded_direction(cfg_.seed, "word:" + base, cfg_.dim), cfg_.word_noise);
      }
    }
    if (!any) add(acc, detail::seeded_direction(cfg_.seed, "text:" + std::string(text), cfg_.dim), 1.0);
    return detail::normalized(acc);
  }

  Embedding image_embedding(const Image& img) const {
    if (img.width <= 0 || img.height <= 0) fail(ErrorKind::DecodeError, "empty image");
    std::map<std::uint32_t, std::size_t> histogram;
    for (std::size_t i = 0; i + 2 < img.rgb.size(); i += 3) {
      ++histogram[(static_cast<std::uint32_t>(img.rgb[i]) << 16) |
                  (static_cast<std::uint32_t>(img.rgb[i + 1]) << 8) | img.rgb[i + 2]];
    }
    std::vector<double> acc(cfg_.dim, 0.0);
    std::unordered_map<std::uint32_t, std::vector<double>> noise;
    for (const auto& [packed, count] : histogram) {
      const std::array<int, 3> c{static_cast<int>(packed >> 16), static_cast<int>((packed >> 8) & 0xff),
                                 static_cast<int>(packed & 0xff)};
      const auto concept_index = concept_for_color(c);
      if (concept_index) {
        add(acc, directions_[*concept_index], static_cast<double>(count));
      } else {
        const std::uint32_t q = ((packed >> 21) << 6) | (((packed >> 13) & 7) << 3) | ((packed >> 5) & 7);
        auto it = noise.find(q);
        if (it == noise.end()) {
          it = noise.emplace(q, detail::seeded_direction(cfg_.seed, "color:" + std::to_string(q), cfg_.dim)).first;
        }
        add(acc, it->second, cfg_.word_noise * static_cast<double>(count));
      }
    }
    return detail::normalized(acc);
  }

  std::vector<Embedding> embed_texts(Role, std::span<const std::string> texts) override {
    if (texts.empty()) throw Error(ErrorKind::InvalidRequest, "embed_texts needs at least one text", "invalid_request");
    std::vector<Embedding> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(text_embedding(t));
    return out;
  }

  std::vector<Embedding> embed_images(std::span<const ImageRef> images) override {
    std::vector<Embedding> out;
    out.reserve(images.size());
    for (const auto& ref : images) {
      if (const auto* path = std::get_if<std::filesystem::path>(&ref)) {
        if (!std::filesystem::is_regular_file(*path)) {
          throw Error(ErrorKind::ProviderError, "cannot read image " + path->string(), "io");
        }
        Image img;
        try {
          img = read_png(*path);
        } catch (const Error& e) {
          throw Error(ErrorKind::DecodeError, e.what(), "decode");
        }
        out.push_back(image_embedding(img));
      } else {
        out.push_back(image_embedding(std::get<Image>(ref)));
      }
    }
    return out;
  }

 private:
  static std::vector<std::string> words(std::string_view text) {
    std::vector<std::string> out;
    std::u32string cur;
    for (char32_t c : unicode::to_u32(text)) {
      if (unicode::is_letter(c)) {
        cur.push_back(c);
      } else if (!cur.empty()) {
        out.push_back(unicode::to_utf8(cur));
        cur.clear();
      }
    }
    if (!cur.empty()) out.push_back(unicode::to_utf8(cur));
    return out;
  }

  static void add(std::vector<double>& acc, const std::vector<double>& v, double w) {
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * v[i];
  }

  std::optional<std::size_t> concept_for_color(const std::array<int, 3>& c) const {
    std::optional<std::size_t> best;
    int best_dist = cfg_.color_tolerance + 1;
    for (std::size_t i = 0; i < cfg_.concepts.size(); ++i) {
      const auto& planted = cfg_.concepts[i].color;
      if (!planted) continue;
      int d = 0;
      for (int ch = 0; ch < 3; ++ch) d = std::max(d, std::abs(c[ch] - static_cast<int>((*planted)[ch])));
      if (d < best_dist) {
        best_dist = d;
        best = i;
      }
    }
    return best;
  }

  MockProviderConfig cfg_;
  std::unordered_map<std::string, std::size_t> concept_of_;
  std::vector<std::vector<double>> directions_;
};

// Plant file: {"dim": 64, "concepts": [{"name": "cat", "aliases": ["kitty"],
// "color": [200, 40, 40]}, ...]}
inline MockProviderConfig load_mock_config(std::uint64_t seed, const std::filesystem::path& plant_file) {
  MockProviderConfig cfg;
  cfg.seed = seed;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file_bytes(plant_file));
    cfg.dim = j.value("dim", cfg.dim);
    for (const auto& c : j.value("concepts", nlohmann::json::array())) {
      PlantedConcept pc;
      pc.name = c.at("name").get<std::string>();
      pc.aliases = c.value("aliases", std::vector<std::string>{});
      if (c.contains("color")) pc.color = c.at("color").get<std::array<std::uint8_t, 3>>();
      cfg.concepts.push_back(std::move(pc));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::ParseError, plant_file.string() + ": " + e.what());
  }
  return cfg;
}

}  // namespace cased
