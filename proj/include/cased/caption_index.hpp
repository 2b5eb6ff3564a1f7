#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cased/embedding.hpp"
#include "cased/error.hpp"
#include "cased/vfeb.hpp"

namespace cased {

// Rows whose norm deviates from 1 by more than this are renormalized on load.
inline constexpr double kUnitNormTolerance = 1e-3;
inline constexpr std::size_t kDefaultTopK = 10;

struct CaptionRecord {
  std::size_t id = 0;
  std::string_view text;
  std::span<const float> embedding;
};

// Caption texts and their embeddings, row i <-> caption i.
class CaptionStore {
 public:
  CaptionStore() = default;

  CaptionStore(std::uint32_t dim, std::vector<std::string> texts, std::vector<float> matrix)
      : dim_(dim), texts_(std::move(texts)), matrix_(std::move(matrix)) {
    if (matrix_.size() != texts_.size() * dim_) {
      fail(ErrorKind::CountMismatch, std::to_string(texts_.size()) + " captions but " +
                                         std::to_string(dim_ ? matrix_.size() / dim_ : 0) +
                                         " embedding rows");
    }
    for (std::size_t i = 0; i < texts_.size(); ++i) {
      if (trimmed_empty(texts_[i])) {
        fail(ErrorKind::FormatError, "caption " + std::to_string(i) + " is empty");
      }
    }
    norms_.resize(texts_.size());
    for (std::size_t i = 0; i < texts_.size(); ++i) {
      const auto r = row_mut(i);
      double n = l2_norm(r);
      if (!std::isfinite(n) || n < 1e-12) {
        fail(ErrorKind::FormatError, "embedding row " + std::to_string(i) + " is zero or non-finite");
      }
      if (std::abs(n - 1.0) > kUnitNormTolerance) {
        for (float& x : r) x = static_cast<float>(x / n);
        n = l2_norm(r);
        ++renormalized_;
      }
      norms_[i] = n;
    }
  }

  std::size_t size() const noexcept { return texts_.size(); }
  bool empty() const noexcept { return texts_.empty(); }
  std::uint32_t dim() const noexcept { return dim_; }
  // Number of rows that were renormalized at construction.
  std::size_t renormalized() const noexcept { return renormalized_; }

  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(matrix_).subspan(i * dim_, dim_);
  }
  double row_norm(std::size_t i) const { return norms_[i]; }
  const std::string& text(std::size_t i) const { return texts_[i]; }
  const std::vector<std::string>& texts() const noexcept { return texts_; }
  const std::vector<float>& matrix() const noexcept { return matrix_; }

  CaptionRecord record(std::size_t i) const { return {i, texts_[i], row(i)}; }

 private:
  static bool trimmed_empty(std::string_view s) {
    return s.find_first_not_of(" \t\r\n\f\v") == std::string_view::npos;
  }
  std::span<float> row_mut(std::size_t i) {
    return std::span<float>(matrix_).subspan(i * dim_, dim_);
  }

  std::uint32_t dim_ = 0;
  std::vector<std::string> texts_;
  std::vector<float> matrix_;
  std::vector<double> norms_;
  std::size_t renormalized_ = 0;
};

inline CaptionStore make_caption_store(std::vector<std::string> texts,
                                       std::span<const Embedding> embeddings) {
  if (texts.size() != embeddings.size()) {
    fail(ErrorKind::CountMismatch, std::to_string(texts.size()) + " captions vs " +
                                       std::to_string(embeddings.size()) + " embeddings");
  }
  if (embeddings.empty()) return CaptionStore(0, {}, {});
  const auto dim = static_cast<std::uint32_t>(embeddings.front().dim());
  std::vector<float> matrix;
  matrix.reserve(embeddings.size() * dim);
  for (const auto& e : embeddings) {
    detail::require_same_dim(dim, e.dim());
    matrix.insert(matrix.end(), e.values().begin(), e.values().end());
  }
  return CaptionStore(dim, std::move(texts), std::move(matrix));
}

inline std::vector<std::string> read_caption_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::IoError, "cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

inline void write_caption_lines(const std::filesystem::path& path,
                                std::span<const std::string> lines) {
  std::string bytes;
  for (const auto& l : lines) {
    if (l.find('\n') != std::string::npos) {
      fail(ErrorKind::FormatError, "caption contains a line feed");
    }
    bytes += l;
    bytes += '\n';
  }
  detail::write_file_bytes(path, bytes);
}

inline CaptionStore load_caption_file(const std::filesystem::path& embeddings_path,
                                      const std::filesystem::path& captions_path) {
  VfebMatrix m = read_vfeb(embeddings_path);
  auto lines = read_caption_lines(captions_path);
  if (lines.size() != m.count) {
    fail(ErrorKind::CountMismatch, std::to_string(m.count) + " embedding rows but " +
                                       std::to_string(lines.size()) + " caption lines");
  }
  return CaptionStore(m.dim, std::move(lines), std::move(m.values));
}

inline void save_caption_files(const CaptionStore& store,
                               const std::filesystem::path& embeddings_path,
                               const std::filesystem::path& captions_path) {
  write_vfeb(embeddings_path, VfebMatrix{store.dim(), store.size(), store.matrix()});
  write_caption_lines(captions_path, store.texts());
}

enum class IndexKind { ExactFlat, QuantizedIvf };

inline std::string_view to_string(IndexKind kind) {
  return kind == IndexKind::ExactFlat ? "exact-flat" : "quantized-ivf";
}

inline IndexKind parse_index_kind(std::string_view s) {
  if (s == "exact-flat" || s == "flat") return IndexKind::ExactFlat;
  if (s == "quantized-ivf" || s == "ivf") return IndexKind::QuantizedIvf;
  fail(ErrorKind::InvalidParams, "unknown index kind '" + std::string(s) + "'");
}

struct IvfParams {
  std::size_t n_lists = 64;
  std::size_t n_probe = 8;
  std::uint64_t seed = 0x5eed;
  std::size_t iterations = 12;
};

struct RetrievalHit {
  std::size_t id = 0;
  std::string text;
  SimilarityScore score = 0.0;
};

struct RetrievalResult {
  std::vector<RetrievalHit> hits;  // score descending, ties by ascending id
  Embedding centroid;              // unnormalized mean of the hit embeddings
};

namespace detail {

struct ScoredId {
  double score;
  std::uint32_t id;
};

inline bool better(const ScoredId& a, const ScoredId& b) {
  return a.score > b.score || (a.score == b.score && a.id < b.id);
}

inline void keep_top(std::vector<ScoredId>& scored, std::size_t k) {
  if (k < scored.size()) {
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k),
                      scored.end(), better);
    scored.resize(k);
  } else {
    std::sort(scored.begin(), scored.end(), better);
  }
}

// Spherical k-means: centroids live on the unit sphere, assignment by max dot.
inline std::vector<float> train_coarse_centroids(const CaptionStore& store, const IvfParams& p) {
  const std::size_t n = store.size();
  const std::size_t dim = store.dim();
  std::mt19937_64 rng(p.seed);
  std::vector<float> centroids(p.n_lists * dim);
  auto centroid = [&](std::size_t c) { return std::span<float>(centroids).subspan(c * dim, dim); };

  // k-means++ seeding on cosine distance.
  std::vector<double> best_dist(n, std::numeric_limits<double>::infinity());
  std::size_t first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  std::copy_n(store.row(first).begin(), dim, centroid(0).begin());
  for (std::size_t c = 1; c < p.n_lists; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = std::max(0.0, 1.0 - dot(store.row(i), centroid(c - 1)) / store.row_norm(i));
      best_dist[i] = std::min(best_dist[i], d * d);
      total += best_dist[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double target = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (pick = 0; pick + 1 < n; ++pick) {
        target -= best_dist[pick];
        if (target <= 0.0) break;
      }
    } else {
      pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    }
    std::copy_n(store.row(pick).begin(), dim, centroid(c).begin());
  }

  std::vector<std::uint32_t> assign(n, 0);
  std::vector<double> best_sim(n);
  for (std::size_t iter = 0; iter < p.iterations; ++iter) {
    for (std::size_t i = 0; i < n; ++i) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < p.n_lists; ++c) {
        const double s = dot(store.row(i), centroid(c));
        if (s > best) {
          best = s;
          assign[i] = static_cast<std::uint32_t>(c);
        }
      }
      best_sim[i] = best / store.row_norm(i);
    }
    std::vector<double> sums(p.n_lists * dim, 0.0);
    std::vector<std::size_t> sizes(p.n_lists, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = store.row(i);
      double* s = sums.data() + assign[i] * dim;
      for (std::size_t d = 0; d < dim; ++d) s[d] += r[d];
      ++sizes[assign[i]];
    }
    for (std::size_t c = 0; c < p.n_lists; ++c) {
      if (sizes[c] == 0) {
        // Reseed an empty list with the worst-served point.
        const auto worst = static_cast<std::size_t>(
            std::min_element(best_sim.begin(), best_sim.end()) - best_sim.begin());
        std::copy_n(store.row(worst).begin(), dim, centroid(c).begin());
        best_sim[worst] = 1.0;
        continue;
      }
      double norm = 0.0;
      const double* s = sums.data() + c * dim;
      for (std::size_t d = 0; d < dim; ++d) norm += s[d] * s[d];
      norm = std::sqrt(norm);
      if (norm < 1e-12) continue;
      auto out = centroid(c);
      for (std::size_t d = 0; d < dim; ++d) out[d] = static_cast<float>(s[d] / norm);
    }
  }
  return centroids;
}

}  // namespace detail

// Immutable cosine top-K index over a caption store.
class CaptionIndex {
 public:
  static CaptionIndex build(CaptionStore store, IndexKind kind = IndexKind::ExactFlat,
                            std::optional<IvfParams> ivf = std::nullopt) {
    if (store.empty()) fail(ErrorKind::EmptyStore, "cannot index an empty caption store");
    CaptionIndex index;
    index.kind_ = kind;
    index.store_ = std::make_shared<const CaptionStore>(std::move(store));
    if (kind == IndexKind::QuantizedIvf) {
      const IvfParams p = ivf.value_or(IvfParams{});
      validate(p, index.store_->size());
      index.ivf_ = p;
      index.set_centroids(detail::train_coarse_centroids(*index.store_, p));
    }
    return index;
  }

  IndexKind kind() const noexcept { return kind_; }
  std::uint32_t dim() const noexcept { return store_->dim(); }
  std::size_t size() const noexcept { return store_->size(); }
  const CaptionStore& store() const noexcept { return *store_; }
  const std::optional<IvfParams>& ivf_params() const noexcept { return ivf_; }
  const std::vector<float>& coarse_centroids() const noexcept { return centroids_; }

  RetrievalResult retrieve_topk(const Embedding& query, std::size_t k = kDefaultTopK) const {
    detail::require_same_dim(dim(), query.dim());
    if (k == 0) fail(ErrorKind::InvalidArgument, "k must be >= 1");
    const double qnorm = l2_norm(query.values());
    if (qnorm < 1e-12) fail(ErrorKind::ZeroVector, "query has zero norm");

    std::vector<detail::ScoredId> scored;
    auto score_row = [&](std::size_t i) {
      scored.push_back({dot(query.values(), store_->row(i)) / (qnorm * store_->row_norm(i)),
                        static_cast<std::uint32_t>(i)});
    };
    if (kind_ == IndexKind::ExactFlat) {
      scored.reserve(size());
      for (std::size_t i = 0; i < size(); ++i) score_row(i);
    } else {
      for (std::uint32_t list : probe_lists(query)) {
        for (std::uint32_t id : lists_[list]) score_row(id);
      }
    }
    detail::keep_top(scored, k);

    RetrievalResult result;
    result.hits.reserve(scored.size());
    std::vector<Embedding> hit_embeddings;
    hit_embeddings.reserve(scored.size());
    for (const auto& s : scored) {
      result.hits.push_back({s.id, store_->text(s.id), std::clamp(s.score, -1.0, 1.0)});
      hit_embeddings.push_back(Embedding::from_span(store_->row(s.id)));
    }
    if (!hit_embeddings.empty()) result.centroid = mean_embedding(hit_embeddings);
    return result;
  }

  void save(const std::filesystem::path& dir) const;
  static CaptionIndex load(const std::filesystem::path& dir);

  static constexpr int kFormatVersion = 1;

 private:
  static void validate(const IvfParams& p, std::size_t n) {
    if (p.n_lists == 0 || p.n_probe == 0) fail(ErrorKind::InvalidParams, "n_lists and n_probe must be positive");
    if (p.n_probe > p.n_lists) {
      fail(ErrorKind::InvalidParams, "n_probe (" + std::to_string(p.n_probe) + ") > n_lists (" +
                                         std::to_string(p.n_lists) + ")");
    }
    if (p.n_lists > n) {
      fail(ErrorKind::InvalidParams, "n_lists (" + std::to_string(p.n_lists) +
                                         ") exceeds record count (" + std::to_string(n) + ")");
    }
  }

  void set_centroids(std::vector<float> centroids) {
    centroids_ = std::move(centroids);
    const std::size_t dim = store_->dim();
    lists_.assign(ivf_->n_lists, {});
    for (std::size_t i = 0; i < store_->size(); ++i) {
      std::uint32_t best_list = 0;
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < ivf_->n_lists; ++c) {
        const double s = dot(store_->row(i), std::span<const float>(centroids_).subspan(c * dim, dim));
        if (s > best) {
          best = s;
          best_list = static_cast<std::uint32_t>(c);
        }
      }
      lists_[best_list].push_back(static_cast<std::uint32_t>(i));
    }
  }

  std::vector<std::uint32_t> probe_lists(const Embedding& query) const {
    const std::size_t dim = store_->dim();
    std::vector<detail::ScoredId> scored;
    scored.reserve(ivf_->n_lists);
    for (std::size_t c = 0; c < ivf_->n_lists; ++c) {
      scored.push_back({dot(query.values(), std::span<const float>(centroids_).subspan(c * dim, dim)),
                        static_cast<std::uint32_t>(c)});
    }
    detail::keep_top(scored, ivf_->n_probe);
    std::vector<std::uint32_t> out;
    for (const auto& s : scored) out.push_back(s.id);
    return out;
  }

  IndexKind kind_ = IndexKind::ExactFlat;
  std::shared_ptr<const CaptionStore> store_;
  std::optional<IvfParams> ivf_;
  std::vector<float> centroids_;
  std::vector<std::vector<std::uint32_t>> lists_;
};

// Index directory layout: meta.json, embeddings.vfeb, captions.txt and, for
// IVF, centroids.vfeb. Inverted lists are rebuilt from the saved centroids.
inline void CaptionIndex::save(const std::filesystem::path& dir) const {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::IoError, "cannot create " + dir.string() + ": " + ec.message());
  save_caption_files(*store_, dir / "embeddings.vfeb", dir / "captions.txt");
  nlohmann::json meta = {{"format_version", kFormatVersion},
                         {"kind", std::string(to_string(kind_))},
                         {"dim", dim()},
                         {"count", size()}};
  if (ivf_) {
    meta["params"] = {{"n_lists", ivf_->n_lists},
                      {"n_probe", ivf_->n_probe},
                      {"seed", ivf_->seed},
                      {"iterations", ivf_->iterations}};
    write_vfeb(dir / "centroids.vfeb",
               VfebMatrix{dim(), ivf_->n_lists, centroids_});
  } else {
    meta["params"] = nlohmann::json::object();
  }
  detail::write_file_bytes(dir / "meta.json", meta.dump(2) + "\n");
}

inline CaptionIndex CaptionIndex::load(const std::filesystem::path& dir) {
  const auto meta_path = dir / "meta.json";
  if (!std::filesystem::is_regular_file(meta_path)) {
    fail(ErrorKind::IoError, "no saved index in " + dir.string() + " (meta.json missing)");
  }
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(detail::read_file_bytes(meta_path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::FormatError, std::string("meta.json: ") + e.what());
  }
  try {
    const int version = meta.at("format_version").get<int>();
    if (version > kFormatVersion) {
      throw Error(ErrorKind::VersionError, "index format version " + std::to_string(version) +
                                               " is newer than supported " +
                                               std::to_string(kFormatVersion));
    }
    if (version < 1) fail(ErrorKind::FormatError, "bad index format version");
    const IndexKind kind = parse_index_kind(meta.at("kind").get<std::string>());
    CaptionStore store = load_caption_file(dir / "embeddings.vfeb", dir / "captions.txt");
    if (store.dim() != meta.at("dim").get<std::uint32_t>() ||
        store.size() != meta.at("count").get<std::size_t>()) {
      fail(ErrorKind::FormatError, "meta.json disagrees with stored embeddings");
    }
    CaptionIndex index;
    index.kind_ = kind;
    index.store_ = std::make_shared<const CaptionStore>(std::move(store));
    if (kind == IndexKind::QuantizedIvf) {
      const auto& p = meta.at("params");
      IvfParams params{p.at("n_lists").get<std::size_t>(), p.at("n_probe").get<std::size_t>(),
                       p.at("seed").get<std::uint64_t>(), p.at("iterations").get<std::size_t>()};
      validate(params, index.size());
      VfebMatrix c = read_vfeb(dir / "centroids.vfeb");
      if (c.dim != index.dim() || c.count != params.n_lists) {
        fail(ErrorKind::FormatError, "centroids.vfeb shape disagrees with meta.json");
      }
      index.ivf_ = params;
      index.set_centroids(std::move(c.values));
    }
    return index;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::FormatError, std::string("meta.json: ") + e.what());
  }
}

}  // namespace cased
