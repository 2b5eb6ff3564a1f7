#pragma once

// Shared synthetic fixtures: a clustered random caption store and a planted
// two-concept world for the mock provider.

#include <algorithm>
#include <array>
#include <cstring>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "cased/caption_index.hpp"
#include "cased/image.hpp"
#include "cased/mock_provider.hpp"

namespace fixtures {

// Unit vectors drawn around `clusters` random centers.
struct SyntheticStore {
  cased::CaptionStore store;
  std::vector<std::vector<float>> centers;
};

inline std::vector<float> unit_gaussian(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(dim);
  double norm = 0.0;
  for (auto& x : v) {
    x = n(rng);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  std::vector<float> out(dim);
  for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(v[i] / norm);
  return out;
}

// center + spread * isotropic noise, renormalized.
inline std::vector<float> around(std::mt19937_64& rng, const std::vector<float>& center, double spread) {
  const auto noise = unit_gaussian(rng, center.size());
  std::vector<double> v(center.size());
  double norm = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = center[i] + spread * noise[i];
    norm += v[i] * v[i];
  }
  norm = std::sqrt(norm);
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / norm);
  return out;
}

inline SyntheticStore synthetic_store(std::size_t count, std::size_t dim, std::size_t clusters, double spread,
                                      std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SyntheticStore s;
  for (std::size_t c = 0; c < clusters; ++c) s.centers.push_back(unit_gaussian(rng, dim));
  std::vector<std::string> texts;
  std::vector<float> matrix;
  matrix.reserve(count * dim);
  std::uniform_int_distribution<std::size_t> pick(0, clusters - 1);
  for (std::size_t i = 0; i < count; ++i) {
    texts.push_back("caption " + std::to_string(i));
    const auto v = around(rng, s.centers[pick(rng)], spread);
    matrix.insert(matrix.end(), v.begin(), v.end());
  }
  s.store = cased::CaptionStore(static_cast<std::uint32_t>(dim), std::move(texts), std::move(matrix));
  return s;
}

inline std::vector<cased::Embedding> synthetic_queries(const SyntheticStore& s, std::size_t n, double spread,
                                                       std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, s.centers.size() - 1);
  std::vector<cased::Embedding> out;
  for (std::size_t i = 0; i < n; ++i) out.emplace_back(around(rng, s.centers[pick(rng)], spread));
  return out;
}

// ---- planted world ----

inline constexpr std::array<std::uint8_t, 3> kCatColor{220, 40, 40};
inline constexpr std::array<std::uint8_t, 3> kDogColor{40, 60, 220};

inline cased::MockProviderConfig planted_config(std::uint64_t seed = 7, std::size_t dim = 64) {
  cased::MockProviderConfig cfg;
  cfg.seed = seed;
  cfg.dim = dim;
  cfg.concepts = {{"cat", {"kitten"}, kCatColor}, {"dog", {"puppy"}, kDogColor}};
  return cfg;
}

inline const std::vector<std::string>& context_words() {
  static const std::vector<std::string> words = {
      "sofa",   "garden", "window", "grass",  "ball",   "blanket", "table",  "street", "beach",  "snow",
      "kitchen", "chair", "floor",  "basket", "toy",    "park",    "bed",    "fence",  "door",   "tree"};
  return words;
}

inline const std::vector<std::string>& noise_phrases() {
  static const std::vector<std::string> phrases = {
      "stock photo", "free image", "thumbnail", "www.example.com", "⟨PERSON⟩ with", "HD wallpaper",
      "photo by ⟨PERSON⟩", "image.jpg", "picture of the day", "at", "in", "on"};
  return phrases;
}

// Captions about `subject` with random context and web noise. The subject
// appears in singular, plural, capitalized and alias forms.
inline std::vector<std::string> planted_captions(const std::string& subject, const std::string& plural,
                                                 const std::string& alias, std::size_t n, std::mt19937_64& rng) {
  const auto& ctx = context_words();
  const auto& noise = noise_phrases();
  std::uniform_int_distribution<std::size_t> pc(0, ctx.size() - 1), pn(0, noise.size() - 1), form(0, 4);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string s;
    switch (form(rng)) {
      case 0: s = "a " + subject; break;
      case 1: s = "two " + plural; break;
      case 2: s = "The " + std::string(1, static_cast<char>(std::toupper(subject[0]))) + subject.substr(1); break;
      case 3: s = "cute " + alias + " and " + subject; break;
      default: s = subject + "'s"; break;
    }
    s += " on the " + ctx[pc(rng)] + " near a " + ctx[pc(rng)];
    s += " " + noise[pn(rng)];
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<std::string> distractor_captions(std::size_t n, std::mt19937_64& rng) {
  const auto& ctx = context_words();
  std::uniform_int_distribution<std::size_t> pc(0, ctx.size() - 1);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back("an empty " + ctx[pc(rng)] + " by the " + ctx[pc(rng)] + " with a " + ctx[pc(rng)]);
  }
  return out;
}

struct PlantedWorld {
  cased::MockProvider provider;
  cased::CaptionIndex index;
  std::vector<std::string> captions;
};

inline PlantedWorld planted_world(std::size_t per_concept = 60, std::size_t distractors = 120,
                                  std::uint64_t seed = 11) {
  std::mt19937_64 rng(seed);
  cased::MockProvider provider(planted_config());
  std::vector<std::string> captions = planted_captions("cat", "cats", "kitten", per_concept, rng);
  const auto dogs = planted_captions("dog", "dogs", "puppy", per_concept, rng);
  captions.insert(captions.end(), dogs.begin(), dogs.end());
  const auto other = distractor_captions(distractors, rng);
  captions.insert(captions.end(), other.begin(), other.end());
  const auto embs = provider.embed_texts(cased::Role::JointText, captions);
  auto index = cased::CaptionIndex::build(cased::make_caption_store(captions, embs));
  return {std::move(provider), std::move(index), std::move(captions)};
}

// A w x h image of `color` with per-pixel jitter inside the mock provider's
// color tolerance, plus a fraction of random-color pixels.
inline cased::Image planted_image(std::array<std::uint8_t, 3> color, int w, int h, double noise_fraction,
                                  std::mt19937_64& rng) {
  cased::Image img(w, h);
  std::uniform_int_distribution<int> jitter(-10, 10), any(0, 255);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::array<std::uint8_t, 3> c;
      if (u(rng) < noise_fraction) {
        for (auto& ch : c) ch = static_cast<std::uint8_t>(any(rng));
      } else {
        for (int k = 0; k < 3; ++k) c[k] = static_cast<std::uint8_t>(std::clamp(color[k] + jitter(rng), 0, 255));
      }
      img.set(x, y, c);
    }
  }
  return img;
}

// Left half `left`, right half `right`.
inline cased::Image split_image(std::array<std::uint8_t, 3> left, std::array<std::uint8_t, 3> right, int w, int h,
                                double noise_fraction, std::mt19937_64& rng) {
  cased::Image a = planted_image(left, w, h, noise_fraction, rng);
  const cased::Image b = planted_image(right, w, h, noise_fraction, rng);
  for (int y = 0; y < h; ++y) {
    for (int x = w / 2; x < w; ++x) std::memcpy(a.pixel(x, y), b.pixel(x, y), 3);
  }
  return a;
}

}  // namespace fixtures
