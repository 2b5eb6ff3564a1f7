#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "cased/error.hpp"

namespace cased {

// Cosine similarity value. In [-1, 1] when both inputs are finite.
using SimilarityScore = double;

// A dense real vector in the shared image/text space. Stored as 32-bit floats
// (what encoders emit); every reduction below accumulates in double.
class Embedding {
 public:
  Embedding() = default;

  explicit Embedding(std::vector<float> values) : values_(std::move(values)) {
    if (values_.empty()) fail(ErrorKind::InvalidArgument, "embedding must have dim >= 1");
    for (float v : values_) {
      if (!std::isfinite(v)) fail(ErrorKind::InvalidArgument, "embedding has non-finite value");
    }
  }

  Embedding(std::initializer_list<float> values) : Embedding(std::vector<float>(values)) {}

  static Embedding from_span(std::span<const float> values) {
    return Embedding(std::vector<float>(values.begin(), values.end()));
  }

  std::size_t dim() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }
  std::span<const float> values() const noexcept { return values_; }
  const std::vector<float>& vector() const noexcept { return values_; }
  float operator[](std::size_t i) const { return values_[i]; }

  bool operator==(const Embedding&) const = default;

 private:
  std::vector<float> values_;
};

namespace detail {

inline void require_same_dim(std::size_t a, std::size_t b) {
  if (a != b) {
    fail(ErrorKind::DimensionMismatch,
         "dimensions differ: " + std::to_string(a) + " vs " + std::to_string(b));
  }
}

}  // namespace detail

// Dot product accumulated in double. Four independent partial sums keep the
// loop vectorizable without reassociating a single accumulator.
inline double dot(std::span<const float> a, std::span<const float> b) {
  detail::require_same_dim(a.size(), b.size());
  const std::size_t n = a.size();
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += static_cast<double>(a[i]) * b[i];
    s1 += static_cast<double>(a[i + 1]) * b[i + 1];
    s2 += static_cast<double>(a[i + 2]) * b[i + 2];
    s3 += static_cast<double>(a[i + 3]) * b[i + 3];
  }
  for (; i < n; ++i) s0 += static_cast<double>(a[i]) * b[i];
  return (s0 + s1) + (s2 + s3);
}

inline double l2_norm(std::span<const float> v) { return std::sqrt(dot(v, v)); }

inline Embedding l2_normalize(const Embedding& v) {
  const double norm = l2_norm(v.values());
  if (!(norm >= 1e-12)) fail(ErrorKind::ZeroVector, "cannot normalize a zero vector");
  std::vector<float> out(v.dim());
  for (std::size_t i = 0; i < v.dim(); ++i) out[i] = static_cast<float>(v[i] / norm);
  return Embedding(std::move(out));
}

inline bool is_unit_norm(const Embedding& v, double tolerance) {
  return std::abs(l2_norm(v.values()) - 1.0) <= tolerance;
}

inline SimilarityScore cosine_similarity(std::span<const float> a, std::span<const float> b) {
  detail::require_same_dim(a.size(), b.size());
  const double denom = std::sqrt(dot(a, a)) * std::sqrt(dot(b, b));
  if (denom == 0.0) return 0.0;
  const double c = dot(a, b) / denom;
  return c > 1.0 ? 1.0 : (c < -1.0 ? -1.0 : c);
}

inline SimilarityScore cosine_similarity(const Embedding& a, const Embedding& b) {
  return cosine_similarity(a.values(), b.values());
}

// Componentwise mean. Not re-normalized.
inline Embedding mean_embedding(std::span<const Embedding> vs) {
  if (vs.empty()) fail(ErrorKind::EmptyList, "mean of an empty list");
  const std::size_t dim = vs.front().dim();
  std::vector<double> acc(dim, 0.0);
  for (const auto& v : vs) {
    detail::require_same_dim(dim, v.dim());
    for (std::size_t i = 0; i < dim; ++i) acc[i] += v[i];
  }
  std::vector<float> out(dim);
  const double n = static_cast<double>(vs.size());
  for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(acc[i] / n);
  return Embedding(std::move(out));
}

}  // namespace cased
