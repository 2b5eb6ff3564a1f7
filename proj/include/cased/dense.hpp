#pragma once

// Dense (per-cell) classification from multi-scale patch embeddings, plus the
// two strategies that couple the classifier with an external segmenter:
// labeling class-agnostic regions and proposing a vocabulary.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cased/caption_index.hpp"
#include "cased/classifier.hpp"
#include "cased/image.hpp"
#include "cased/label_map.hpp"
#include "cased/parallel.hpp"
#include "cased/provider.hpp"

namespace cased {

struct GridSpec {
  std::vector<int> scales{2, 4, 8};
  // Half-cell stride (the shifted grids). false gives plain n x n tilings.
  bool shifted = true;

  int max_scale() const { return scales.empty() ? 0 : *std::max_element(scales.begin(), scales.end()); }
  // Side of the output label grid.
  int map_cells() const { return 2 * max_scale(); }

  void validate() const {
    if (scales.empty()) fail(ErrorKind::InvalidArgument, "grid needs at least one scale");
    for (std::size_t i = 0; i < scales.size(); ++i) {
      if (scales[i] < 1) fail(ErrorKind::InvalidArgument, "scales must be positive");
      if (i > 0 && scales[i] <= scales[i - 1]) fail(ErrorKind::InvalidArgument, "scales must be strictly ascending");
    }
  }
};

struct Patch {
  Rect rect;
  int scale = 0;
};

struct PatchPlan {
  int width = 0;
  int height = 0;
  std::vector<Patch> patches;  // scale-major, then row-major
};

// For each scale n the image is cut into n x n cells; with shifting, windows
// of one cell slide at half-cell stride, giving (2n-1)^2 windows that cover
// the original grid and its horizontally/vertically shifted copies.
inline PatchPlan plan_patches(int width, int height, const GridSpec& spec) {
  spec.validate();
  const int cells = spec.map_cells();
  if (width < cells || height < cells) {
    fail(ErrorKind::ImageTooSmall, std::to_string(width) + "x" + std::to_string(height) +
                                       " image is smaller than the " + std::to_string(cells) + "-cell map");
  }
  PatchPlan plan{width, height, {}};
  for (int n : spec.scales) {
    const std::int64_t steps = spec.shifted ? 2 * n : n;   // stride denominator
    const std::int64_t span = spec.shifted ? 2 : 1;        // window length in strides
    const std::int64_t count = steps - span + 1;
    for (std::int64_t r = 0; r < count; ++r) {
      const int y0 = static_cast<int>(r * height / steps);
      const int y1 = static_cast<int>((r + span) * height / steps);
      for (std::int64_t c = 0; c < count; ++c) {
        const int x0 = static_cast<int>(c * width / steps);
        const int x1 = static_cast<int>((c + span) * width / steps);
        plan.patches.push_back({{x0, y0, x1, y1}, n});
      }
    }
  }
  return plan;
}

// Whether `r` contains the center of map cell (row, col), in exact integer
// arithmetic: center_x = (2*col + 1) * width / (2 * cells).
inline bool contains_cell_center(const Rect& r, int row, int col, int width, int height, int cells) {
  const std::int64_t cx2 = static_cast<std::int64_t>(2 * col + 1) * width;
  const std::int64_t cy2 = static_cast<std::int64_t>(2 * row + 1) * height;
  const std::int64_t m2 = 2 * static_cast<std::int64_t>(cells);
  return m2 * r.x0 <= cx2 && cx2 < m2 * r.x1 && m2 * r.y0 <= cy2 && cy2 < m2 * r.y1;
}

struct DenseFeatureMap {
  int cells = 0;
  std::vector<Embedding> values;  // row-major, l2-normalized
  std::vector<int> counts;        // patches covering each cell center

  const Embedding& at(int row, int col) const { return values[static_cast<std::size_t>(row) * cells + col]; }
  int count(int row, int col) const { return counts[static_cast<std::size_t>(row) * cells + col]; }
};

// Cell value = mean of the embeddings of every patch containing the cell
// center, normalized for retrieval.
inline DenseFeatureMap accumulate_features(const PatchPlan& plan, std::span<const Embedding> patch_embeddings,
                                           const GridSpec& spec) {
  if (patch_embeddings.size() != plan.patches.size()) {
    fail(ErrorKind::LengthMismatch, std::to_string(patch_embeddings.size()) + " embeddings for " +
                                        std::to_string(plan.patches.size()) + " patches");
  }
  if (patch_embeddings.empty()) fail(ErrorKind::LengthMismatch, "no patches");
  const int cells = spec.map_cells();
  const std::size_t dim = patch_embeddings.front().dim();
  const std::size_t n_cells = static_cast<std::size_t>(cells) * cells;
  std::vector<double> sums(n_cells * dim, 0.0);
  std::vector<int> counts(n_cells, 0);
  for (std::size_t p = 0; p < plan.patches.size(); ++p) {
    const Rect& r = plan.patches[p].rect;
    const auto& e = patch_embeddings[p];
    detail::require_same_dim(dim, e.dim());
    for (int row = 0; row < cells; ++row) {
      for (int col = 0; col < cells; ++col) {
        if (!contains_cell_center(r, row, col, plan.width, plan.height, cells)) continue;
        const std::size_t cell = static_cast<std::size_t>(row) * cells + col;
        double* s = sums.data() + cell * dim;
        for (std::size_t d = 0; d < dim; ++d) s[d] += e[d];
        ++counts[cell];
      }
    }
  }
  DenseFeatureMap map{cells, {}, std::move(counts)};
  map.values.reserve(n_cells);
  for (std::size_t cell = 0; cell < n_cells; ++cell) {
    if (map.counts[cell] == 0) fail(ErrorKind::InvalidArgument, "cell center not covered by any patch");
    std::vector<float> mean(dim);
    for (std::size_t d = 0; d < dim; ++d) {
      mean[d] = static_cast<float>(sums[cell * dim + d] / map.counts[cell]);
    }
    map.values.push_back(l2_normalize(Embedding(std::move(mean))));
  }
  return map;
}

struct SegmentationMap {
  int cells = 0;
  std::vector<std::string> labels;         // row-major cell labels
  std::vector<Prediction> predictions;     // per cell, when retained

  const std::string& at(int row, int col) const { return labels[static_cast<std::size_t>(row) * cells + col]; }

  nlohmann::json to_json(bool with_predictions = false) const {
    nlohmann::json grid = nlohmann::json::array();
    for (int r = 0; r < cells; ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (int c = 0; c < cells; ++c) row.push_back(at(r, c));
      grid.push_back(std::move(row));
    }
    nlohmann::json out = {{"cells", grid}};
    if (with_predictions) {
      nlohmann::json preds = nlohmann::json::array();
      for (const auto& p : predictions) preds.push_back(p.to_json());
      out["predictions"] = std::move(preds);
    }
    return out;
  }

  static SegmentationMap from_json(const nlohmann::json& j) {
    SegmentationMap m;
    try {
      const auto& grid = j.at("cells");
      m.cells = static_cast<int>(grid.size());
      for (const auto& row : grid) {
        if (row.size() != grid.size()) fail(ErrorKind::ParseError, "segmentation grid is not square");
        for (const auto& v : row) m.labels.push_back(v.get<std::string>());
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::ParseError, std::string("segmentation JSON: ") + e.what());
    }
    return m;
  }

  // Nearest-cell upsampling to pixel resolution.
  LabelMap upsample(int width, int height) const {
    std::vector<std::string> per_pixel;
    per_pixel.reserve(static_cast<std::size_t>(width) * height);
    for (int y = 0; y < height; ++y) {
      const int row = static_cast<int>(static_cast<std::int64_t>(y) * cells / height);
      for (int x = 0; x < width; ++x) {
        const int col = static_cast<int>(static_cast<std::int64_t>(x) * cells / width);
        per_pixel.push_back(at(row, col));
      }
    }
    return LabelMap::from_strings(width, height, per_pixel);
  }
};

// Runs the classifier on every cell of a feature map.
inline SegmentationMap segment_features(const DenseFeatureMap& features, Classifier& classifier,
                                        std::size_t jobs = 1, bool keep_predictions = false) {
  const std::size_t n = features.values.size();
  std::vector<Prediction> preds(n);
  parallel_for(n, jobs, [&](std::size_t i) { preds[i] = classifier.classify(features.values[i]); });
  SegmentationMap map;
  map.cells = features.cells;
  map.labels.reserve(n);
  for (const auto& p : preds) map.labels.push_back(p.top());
  if (keep_predictions) map.predictions = std::move(preds);
  return map;
}

struct DenseOptions {
  std::size_t jobs = 1;
  bool keep_predictions = false;
};

// Full dense pipeline on one image: plan, embed every crop in one provider
// batch, accumulate, classify each cell.
inline SegmentationMap segment_dense(const Image& image, EmbeddingProvider& provider, Classifier& classifier,
                                     const GridSpec& spec, const DenseOptions& options = {}) {
  const PatchPlan plan = plan_patches(image.width, image.height, spec);
  std::vector<ImageRef> crops;
  crops.reserve(plan.patches.size());
  for (const auto& p : plan.patches) crops.emplace_back(crop(image, p.rect));
  const auto embs = provider.embed_images(crops);
  const DenseFeatureMap features = accumulate_features(plan, embs, spec);
  return segment_features(features, classifier, options.jobs, options.keep_predictions);
}

inline SegmentationMap segment_dense(const Image& image, EmbeddingProvider& provider, const CaptionIndex& index,
                                     const ClassifierConfig& cfg, const GridSpec& spec,
                                     const DenseOptions& options = {}) {
  Classifier classifier(index, cfg, provider);
  return segment_dense(image, provider, classifier, spec, options);
}

// A class-agnostic region from an external segmenter.
struct Region {
  int id = 0;
  std::optional<Rect> bbox;
  std::optional<std::filesystem::path> mask_path;
  std::optional<Embedding> embedding;
};

using RegionSet = std::vector<Region>;

struct RegionMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> inside;  // 1 inside, 0 outside
};

inline RegionMask read_region_mask(const std::filesystem::path& path) {
  const IndexedImage img = read_indexed_png(path);
  RegionMask m{img.width, img.height, {}};
  m.inside.reserve(img.indices.size());
  for (auto v : img.indices) m.inside.push_back(v != 0 ? 1 : 0);
  return m;
}

inline Rect mask_bounds(const RegionMask& m) {
  Rect r{m.width, m.height, 0, 0};
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      if (!m.inside[static_cast<std::size_t>(y) * m.width + x]) continue;
      r.x0 = std::min(r.x0, x);
      r.y0 = std::min(r.y0, y);
      r.x1 = std::max(r.x1, x + 1);
      r.y1 = std::max(r.y1, y + 1);
    }
  }
  if (r.x0 >= r.x1) fail(ErrorKind::InvalidArgument, "region mask is empty");
  return r;
}

// Region file: one JSON object per line,
// {"id": 3, "bbox": [x0, y0, x1, y1]} or {"id": 3, "mask_path": "m.png"},
// with an optional precomputed "embedding": [...]. Relative mask paths are
// resolved against the region file's directory.
inline RegionSet read_region_file(const std::filesystem::path& path) {
  RegionSet regions;
  std::istringstream lines(detail::read_file_bytes(path));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Region r;
      r.id = j.at("id").get<int>();
      if (j.contains("bbox")) {
        const auto b = j["bbox"].get<std::array<int, 4>>();
        r.bbox = Rect{b[0], b[1], b[2], b[3]};
      }
      if (j.contains("mask_path")) {
        std::filesystem::path p = j["mask_path"].get<std::string>();
        r.mask_path = p.is_absolute() ? p : path.parent_path() / p;
      }
      if (j.contains("embedding")) r.embedding = Embedding(j["embedding"].get<std::vector<float>>());
      if (!r.bbox && !r.mask_path && !r.embedding) {
        fail(ErrorKind::ParseError, "region needs bbox, mask_path or embedding");
      }
      regions.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::ParseError, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::ParseError) throw;
      fail(ErrorKind::ParseError, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return regions;
}

// Fills in missing region embeddings by cropping `image` around each region.
inline void embed_regions(RegionSet& regions, const Image& image, EmbeddingProvider& provider) {
  std::vector<ImageRef> crops;
  std::vector<std::size_t> slots;
  for (std::size_t i = 0; i < regions.size(); ++i) {
    auto& r = regions[i];
    if (r.embedding) continue;
    Rect box;
    if (r.bbox) {
      box = *r.bbox;
    } else {
      const RegionMask m = read_region_mask(*r.mask_path);
      if (m.width != image.width || m.height != image.height) {
        fail(ErrorKind::DimensionMismatch, "mask size differs from image size");
      }
      box = mask_bounds(m);
    }
    crops.emplace_back(crop(image, box));
    slots.push_back(i);
  }
  if (crops.empty()) return;
  auto embs = provider.embed_images(crops);
  for (std::size_t j = 0; j < slots.size(); ++j) regions[slots[j]].embedding = std::move(embs[j]);
}

struct RegionLabel {
  int id = 0;
  Prediction prediction;
};

// Each region is classified independently; order is preserved.
inline std::vector<RegionLabel> label_regions(const RegionSet& regions, Classifier& classifier,
                                              std::size_t jobs = 1) {
  if (regions.empty()) fail(ErrorKind::EmptyRegions, "no regions to label");
  for (const auto& r : regions) {
    if (!r.embedding) fail(ErrorKind::InvalidArgument, "region " + std::to_string(r.id) + " has no embedding");
  }
  std::vector<RegionLabel> out(regions.size());
  parallel_for(regions.size(), jobs, [&](std::size_t i) {
    out[i] = {regions[i].id, classifier.classify(*regions[i].embedding)};
  });
  return out;
}

inline std::vector<RegionLabel> label_regions(const RegionSet& regions, const CaptionIndex& index,
                                              const ClassifierConfig& cfg, EmbeddingProvider& provider) {
  Classifier classifier(index, cfg, provider);
  return label_regions(regions, classifier);
}

// Paints each region with its top-1 label; later regions win on overlap and
// uncovered pixels are ignore.
inline LabelMap paint_regions(const RegionSet& regions, std::span<const RegionLabel> labels, int width,
                              int height) {
  std::vector<std::string> per_pixel(static_cast<std::size_t>(width) * height);
  for (std::size_t i = 0; i < regions.size() && i < labels.size(); ++i) {
    const auto& r = regions[i];
    const std::string& name = labels[i].prediction.top();
    if (r.mask_path) {
      const RegionMask m = read_region_mask(*r.mask_path);
      if (m.width != width || m.height != height) fail(ErrorKind::DimensionMismatch, "mask size differs");
      for (std::size_t p = 0; p < m.inside.size(); ++p) {
        if (m.inside[p]) per_pixel[p] = name;
      }
    } else if (r.bbox) {
      for (int y = std::max(0, r.bbox->y0); y < std::min(height, r.bbox->y1); ++y) {
        for (int x = std::max(0, r.bbox->x0); x < std::min(width, r.bbox->x1); ++x) {
          per_pixel[static_cast<std::size_t>(y) * width + x] = name;
        }
      }
    }
  }
  // Uncovered pixels are left empty and become ignore.
  LabelMap m;
  m.width = width;
  m.height = height;
  m.pixels.assign(per_pixel.size(), LabelMap::kIgnore);
  std::map<std::string, std::int32_t> id_of;
  for (std::size_t p = 0; p < per_pixel.size(); ++p) {
    if (per_pixel[p].empty()) continue;
    auto [it, inserted] = id_of.emplace(per_pixel[p], static_cast<std::int32_t>(m.labels.size()));
    if (inserted) m.labels.push_back(per_pixel[p]);
    m.pixels[p] = it->second;
  }
  return m;
}

// Candidate names for an external open-vocabulary segmenter (no scoring).
inline std::vector<std::string> propose_vocabulary(const Embedding& image, const CaptionIndex& index,
                                                   const FilterConfig& filter, std::size_t k = kDefaultTopK) {
  const RetrievalResult retrieved = index.retrieve_topk(image, k);
  std::vector<std::string> captions;
  for (const auto& h : retrieved.hits) captions.push_back(h.text);
  std::vector<std::string> names;
  for (const auto& [name, count] : CandidatePipeline(filter).extract(captions)) names.push_back(name);
  if (names.empty()) fail(ErrorKind::NoCandidates, "no candidate survived filtering");
  return names;
}

}  // namespace cased
