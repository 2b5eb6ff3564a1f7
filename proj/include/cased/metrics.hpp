#pragma once

// Evaluation metrics for vocabulary-free classification and segmentation.
// Exact-match comparisons run on standardized labels; similarity kernels see
// the raw strings.

#include <algorithm>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "cased/candidates.hpp"
#include "cased/embedding.hpp"
#include "cased/label_map.hpp"
#include "cased/provider.hpp"
#include "cased/unicode.hpp"

namespace cased {

// Lowercased, NFC, split on whitespace and punctuation (apostrophes kept
// inside words), each word singularized, rejoined with single spaces.
inline std::vector<std::string> label_words(std::string_view label) {
  const std::u32string text = unicode::to_u32(unicode::to_lower(unicode::nfc(label)));
  std::vector<std::string> words;
  std::u32string cur;
  auto flush = [&] {
    if (!cur.empty()) words.push_back(standardize(unicode::to_utf8(cur)));
    cur.clear();
  };
  for (char32_t c : text) {
    if (unicode::is_space(c) || (unicode::is_punct(c) && !unicode::is_apostrophe(c))) {
      flush();
    } else {
      cur.push_back(c);
    }
  }
  flush();
  return words;
}

inline std::string standardize_label(std::string_view label) {
  std::string out;
  for (const auto& w : label_words(label)) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

class SimilarityKernel {
 public:
  virtual ~SimilarityKernel() = default;
  virtual std::string name() const = 0;
  virtual double operator()(const std::string& a, const std::string& b) = 0;
  // Lets embedding kernels batch their provider calls.
  virtual void prefetch(std::span<const std::string>) {}
};

class ExactMatchKernel : public SimilarityKernel {
 public:
  std::string name() const override { return "exact"; }
  double operator()(const std::string& a, const std::string& b) override {
    return standardize_label(a) == standardize_label(b) ? 1.0 : 0.0;
  }
};

// Cosine similarity of sentence embeddings. Embeddings are cached per string.
class EmbeddingKernel : public SimilarityKernel {
 public:
  explicit EmbeddingKernel(EmbeddingProvider& provider, Role role = Role::Sentence)
      : provider_(provider), role_(role) {}

  std::string name() const override { return "embedding:" + std::string(to_string(role_)); }

  double operator()(const std::string& a, const std::string& b) override {
    const std::string pair[2] = {a, b};
    prefetch(pair);
    std::lock_guard lock(mu_);
    return cosine_similarity(cache_.at(a), cache_.at(b));
  }

  void prefetch(std::span<const std::string> texts) override {
    std::vector<std::string> missing;
    {
      std::lock_guard lock(mu_);
      for (const auto& t : texts) {
        if (t.empty()) fail(ErrorKind::InvalidArgument, "empty label");
        if (!cache_.contains(t) && std::find(missing.begin(), missing.end(), t) == missing.end()) {
          missing.push_back(t);
        }
      }
    }
    if (missing.empty()) return;
    auto embs = provider_.embed_texts(role_, missing);
    std::lock_guard lock(mu_);
    for (std::size_t i = 0; i < missing.size(); ++i) cache_.emplace(missing[i], std::move(embs[i]));
  }

 private:
  EmbeddingProvider& provider_;
  Role role_;
  std::mutex mu_;
  std::unordered_map<std::string, Embedding> cache_;
};

struct MetricReport {
  std::map<std::string, double> scalars;
  std::map<std::string, std::map<std::string, double>> per_class;
  std::map<std::string, std::size_t> counts;

  double at(const std::string& name) const { return scalars.at(name); }

  nlohmann::json to_json() const {
    return {{"metrics", scalars}, {"per_class", per_class}, {"counts", counts}};
  }
};

// ---- classification ----

struct LabelPair {
  std::string prediction;
  std::string ground_truth;
};

using LabelPairBatch = std::vector<LabelPair>;

inline double semantic_similarity(const std::string& pred, const std::string& gt, SimilarityKernel& kernel) {
  if (pred.empty() || gt.empty()) fail(ErrorKind::InvalidArgument, "semantic similarity needs non-empty labels");
  return kernel(pred, gt);
}

inline double semantic_iou(std::string_view pred, std::string_view gt) {
  const auto pw = label_words(pred);
  const auto gw = label_words(gt);
  const std::set<std::string> a(pw.begin(), pw.end());
  const std::set<std::string> b(gw.begin(), gw.end());
  if (a.empty() || b.empty()) fail(ErrorKind::InvalidArgument, "semantic IoU needs non-empty word sets");
  std::size_t inter = 0;
  for (const auto& w : a) inter += b.count(w);
  return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

namespace detail {
inline void require_nonempty(const LabelPairBatch& batch) {
  if (batch.empty()) fail(ErrorKind::EmptyList, "empty label batch");
}

inline const std::string& most_frequent(const std::map<std::string, std::size_t>& counts) {
  auto best = counts.begin();
  for (auto it = counts.begin(); it != counts.end(); ++it) {
    if (it->second > best->second) best = it;  // map order breaks ties lexicographically
  }
  return best->first;
}
}  // namespace detail

// Each predicted string forms a cluster, assigned to its most frequent
// ground-truth label; accuracy counts samples agreeing with their cluster's
// assignment.
inline double cluster_accuracy(const LabelPairBatch& batch) {
  detail::require_nonempty(batch);
  std::map<std::string, std::map<std::string, std::size_t>> groups;
  for (const auto& p : batch) ++groups[standardize_label(p.prediction)][standardize_label(p.ground_truth)];
  std::size_t matched = 0;
  for (const auto& [pred, gts] : groups) matched += gts.at(detail::most_frequent(gts));
  return static_cast<double>(matched) / static_cast<double>(batch.size());
}

inline double mean_semantic_similarity(const LabelPairBatch& batch, SimilarityKernel& kernel) {
  detail::require_nonempty(batch);
  std::vector<std::string> all;
  for (const auto& p : batch) {
    all.push_back(p.prediction);
    all.push_back(p.ground_truth);
  }
  kernel.prefetch(all);
  double total = 0.0;
  for (const auto& p : batch) total += semantic_similarity(p.prediction, p.ground_truth, kernel);
  return total / static_cast<double>(batch.size());
}

inline double mean_semantic_iou(const LabelPairBatch& batch) {
  detail::require_nonempty(batch);
  double total = 0.0;
  for (const auto& p : batch) total += semantic_iou(p.prediction, p.ground_truth);
  return total / static_cast<double>(batch.size());
}

inline MetricReport evaluate_classification(const LabelPairBatch& batch, SimilarityKernel& kernel) {
  MetricReport r;
  r.scalars["cluster_accuracy"] = cluster_accuracy(batch);
  r.scalars["semantic_similarity"] = mean_semantic_similarity(batch, kernel);
  r.scalars["semantic_iou"] = mean_semantic_iou(batch);
  r.counts["samples"] = batch.size();
  std::map<std::string, std::pair<std::size_t, std::size_t>> per_gt;  // correct after assignment, total
  std::map<std::string, std::map<std::string, std::size_t>> groups;
  for (const auto& p : batch) ++groups[standardize_label(p.prediction)][standardize_label(p.ground_truth)];
  for (const auto& [pred, gts] : groups) {
    const std::string& assigned = detail::most_frequent(gts);
    for (const auto& [gt, n] : gts) {
      per_gt[gt].second += n;
      if (gt == assigned) per_gt[gt].first += n;
    }
  }
  for (const auto& [gt, c] : per_gt) {
    r.per_class["cluster_accuracy"][gt] = static_cast<double>(c.first) / static_cast<double>(c.second);
  }
  r.counts["clusters"] = groups.size();
  r.counts["classes"] = per_gt.size();
  return r;
}

// ---- segmentation ----

struct SegPair {
  LabelMap prediction;
  LabelMap ground_truth;
};

using SegPairBatch = std::vector<SegPair>;

enum class MetricMode { Hard, Soft };

// Dataset: sums pooled over the whole batch per class (or per (image, class)
// instance for recall). PerImage: computed per image, then averaged.
enum class Pooling { Dataset, PerImage };

struct SegmentationOptions {
  Pooling jaccard = Pooling::Dataset;
  Pooling recall = Pooling::PerImage;
};

namespace detail {

inline void require_aligned(const LabelMap& pred, const LabelMap& gt) {
  if (pred.width != gt.width || pred.height != gt.height || pred.size() != gt.size()) {
    fail(ErrorKind::DimensionMismatch, "prediction and ground-truth maps differ in size");
  }
}

inline void require_aligned(const SegPair& p) { require_aligned(p.prediction, p.ground_truth); }

// Per-item view with standardized class names and a kernel table between the
// raw predicted and raw ground-truth labels.
struct ItemView {
  std::vector<std::string> pred_std;  // per pred label id
  std::vector<std::string> gt_std;    // per gt label id
  std::vector<std::vector<double>> kernel;  // [pred id][gt id], soft mode only
};

inline ItemView view_of(const SegPair& p, SimilarityKernel* kernel) {
  ItemView v;
  for (const auto& l : p.prediction.labels) v.pred_std.push_back(standardize_label(l));
  for (const auto& l : p.ground_truth.labels) v.gt_std.push_back(standardize_label(l));
  if (kernel) {
    std::vector<std::string> all = p.prediction.labels;
    all.insert(all.end(), p.ground_truth.labels.begin(), p.ground_truth.labels.end());
    kernel->prefetch(all);
    v.kernel.assign(p.prediction.labels.size(), std::vector<double>(p.ground_truth.labels.size()));
    for (std::size_t i = 0; i < p.prediction.labels.size(); ++i) {
      for (std::size_t j = 0; j < p.ground_truth.labels.size(); ++j) {
        v.kernel[i][j] = (*kernel)(p.prediction.labels[i], p.ground_truth.labels[j]);
      }
    }
  }
  return v;
}

struct Ratio {
  double num = 0.0;
  double den = 0.0;
};

inline double mean_of(const std::map<std::string, Ratio>& per_class) {
  if (per_class.empty()) fail(ErrorKind::EmptyList, "no ground-truth classes");
  double total = 0.0;
  for (const auto& [c, r] : per_class) total += r.den > 0 ? r.num / r.den : 0.0;
  return total / static_cast<double>(per_class.size());
}

// Per gt class of one item: intersection and union numerators, hard or soft.
inline std::map<std::string, Ratio> item_jaccard(const SegPair& p, const ItemView& v, MetricMode mode) {
  std::map<std::string, Ratio> out;
  std::map<std::string, double> pred_outside;  // pred == c at pixels not in gt_c
  for (std::size_t i = 0; i < p.ground_truth.size(); ++i) {
    if (p.ground_truth.ignored(i)) continue;
    const auto g = static_cast<std::size_t>(p.ground_truth.pixels[i]);
    const std::string& gc = v.gt_std[g];
    Ratio& r = out[gc];
    r.den += 1.0;
    if (p.prediction.ignored(i)) continue;
    const auto q = static_cast<std::size_t>(p.prediction.pixels[i]);
    const std::string& pc = v.pred_std[q];
    if (mode == MetricMode::Hard) {
      if (pc == gc) r.num += 1.0;
    } else {
      r.num += v.kernel[q][g];
    }
    if (pc != gc) pred_outside[pc] += 1.0;
  }
  for (auto& [c, r] : out) {
    auto it = pred_outside.find(c);
    if (it != pred_outside.end()) r.den += it->second;
  }
  return out;
}

// Sum that does not depend on the order images arrive in.
inline double order_free_sum(std::vector<double> terms) {
  std::sort(terms.begin(), terms.end());
  double total = 0.0;
  for (double t : terms) total += t;
  return total;
}

inline std::map<std::string, double> item_recall(const SegPair& p, const ItemView& v, MetricMode mode) {
  std::map<std::string, double> best;
  for (std::size_t i = 0; i < p.ground_truth.size(); ++i) {
    if (p.ground_truth.ignored(i)) continue;
    const auto g = static_cast<std::size_t>(p.ground_truth.pixels[i]);
    double& b = best.try_emplace(v.gt_std[g], 0.0).first->second;
    if (p.prediction.ignored(i)) continue;
    const auto q = static_cast<std::size_t>(p.prediction.pixels[i]);
    const double s = mode == MetricMode::Hard ? (v.pred_std[q] == v.gt_std[g] ? 1.0 : 0.0) : v.kernel[q][g];
    b = std::max(b, s);
  }
  return best;
}

}  // namespace detail

inline std::map<std::string, double> segmentation_jaccard_per_class(const SegPairBatch& batch, MetricMode mode,
                                                                     SimilarityKernel* kernel = nullptr) {
  if (mode == MetricMode::Soft && !kernel) fail(ErrorKind::InvalidArgument, "soft mode needs a kernel");
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> pooled;
  for (const auto& p : batch) {
    detail::require_aligned(p);
    const auto v = detail::view_of(p, mode == MetricMode::Soft ? kernel : nullptr);
    for (const auto& [c, r] : detail::item_jaccard(p, v, mode)) {
      pooled[c].first.push_back(r.num);
      pooled[c].second.push_back(r.den);
    }
  }
  std::map<std::string, double> out;
  for (const auto& [c, terms] : pooled) {
    const double num = detail::order_free_sum(terms.first), den = detail::order_free_sum(terms.second);
    out[c] = den > 0 ? num / den : 0.0;
  }
  return out;
}

inline double segmentation_jaccard(const SegPairBatch& batch, MetricMode mode, SimilarityKernel* kernel = nullptr,
                                   Pooling pooling = Pooling::Dataset) {
  if (batch.empty()) fail(ErrorKind::EmptyList, "empty segmentation batch");
  if (mode == MetricMode::Soft && !kernel) fail(ErrorKind::InvalidArgument, "soft mode needs a kernel");
  if (pooling == Pooling::Dataset) {
    const auto per_class = segmentation_jaccard_per_class(batch, mode, kernel);
    if (per_class.empty()) fail(ErrorKind::EmptyList, "no ground-truth classes");
    double total = 0.0;
    for (const auto& [c, j] : per_class) total += j;
    return total / static_cast<double>(per_class.size());
  }
  std::vector<double> terms;
  for (const auto& p : batch) {
    detail::require_aligned(p);
    const auto v = detail::view_of(p, mode == MetricMode::Soft ? kernel : nullptr);
    const auto per_class = detail::item_jaccard(p, v, mode);
    if (per_class.empty()) continue;
    terms.push_back(detail::mean_of(per_class));
  }
  if (terms.empty()) fail(ErrorKind::EmptyList, "no ground-truth classes");
  return detail::order_free_sum(terms) / static_cast<double>(terms.size());
}

inline double segmentation_recall(const SegPairBatch& batch, MetricMode mode, SimilarityKernel* kernel = nullptr,
                                  Pooling pooling = Pooling::PerImage) {
  if (batch.empty()) fail(ErrorKind::EmptyList, "empty segmentation batch");
  if (mode == MetricMode::Soft && !kernel) fail(ErrorKind::InvalidArgument, "soft mode needs a kernel");
  std::vector<double> terms;
  for (const auto& p : batch) {
    detail::require_aligned(p);
    const auto v = detail::view_of(p, mode == MetricMode::Soft ? kernel : nullptr);
    const auto best = detail::item_recall(p, v, mode);
    if (best.empty()) continue;
    double sum = 0.0;
    for (const auto& [c, b] : best) {
      sum += b;
      if (pooling == Pooling::Dataset) terms.push_back(b);
    }
    if (pooling == Pooling::PerImage) terms.push_back(sum / static_cast<double>(best.size()));
  }
  if (terms.empty()) fail(ErrorKind::EmptyList, "no ground-truth classes");
  return detail::order_free_sum(terms) / static_cast<double>(terms.size());
}

namespace detail {
inline LabelMap relabel(const LabelMap& pred, const std::vector<std::string>& new_names) {
  std::vector<std::string> per_pixel;
  per_pixel.reserve(pred.size());
  // A sentinel no real label can equal after relabeling.
  static const std::string kIgnoreSentinel = std::string("\x01ignore", 7);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    per_pixel.push_back(pred.ignored(i) ? kIgnoreSentinel : new_names[static_cast<std::size_t>(pred.pixels[i])]);
  }
  return LabelMap::from_strings(pred.width, pred.height, per_pixel, kIgnoreSentinel);
}

inline std::vector<std::string> present_labels(const LabelMap& m) {
  std::vector<bool> used(m.labels.size(), false);
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!m.ignored(i)) used[static_cast<std::size_t>(m.pixels[i])] = true;
  }
  std::set<std::string> names;
  for (std::size_t i = 0; i < used.size(); ++i) {
    if (used[i]) names.insert(m.labels[i]);
  }
  return {names.begin(), names.end()};
}
}  // namespace detail

// Every predicted label becomes the ground-truth label it is most similar
// to; ties go to the lexicographically smallest ground-truth label.
inline LabelMap remap_nearest(const LabelMap& pred, const std::vector<std::string>& gt_labels,
                              SimilarityKernel& kernel) {
  if (gt_labels.empty()) fail(ErrorKind::EmptyList, "ground-truth label list is empty");
  std::vector<std::string> sorted = gt_labels;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<std::string> all = pred.labels;
  all.insert(all.end(), sorted.begin(), sorted.end());
  kernel.prefetch(all);
  std::vector<std::string> target;
  for (const auto& l : pred.labels) {
    std::size_t best = 0;
    double best_score = kernel(l, sorted[0]);
    for (std::size_t j = 1; j < sorted.size(); ++j) {
      const double s = kernel(l, sorted[j]);
      if (s > best_score) {  // strict: earlier (smaller) labels win ties
        best = j;
        best_score = s;
      }
    }
    target.push_back(sorted[best]);
  }
  return detail::relabel(pred, target);
}

// Every predicted label becomes the ground-truth label it overlaps most.
// Labels overlapping no annotated pixel are left unchanged.
inline LabelMap remap_overlap(const LabelMap& pred, const LabelMap& gt) {
  detail::require_aligned(pred, gt);
  std::vector<std::map<std::string, std::size_t>> co(pred.labels.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred.ignored(i) || gt.ignored(i)) continue;
    ++co[static_cast<std::size_t>(pred.pixels[i])][gt.label(i)];
  }
  std::vector<std::string> target;
  for (std::size_t k = 0; k < pred.labels.size(); ++k) {
    target.push_back(co[k].empty() ? pred.labels[k] : detail::most_frequent(co[k]));
  }
  return detail::relabel(pred, target);
}

inline double nearest_jaccard(const SegPairBatch& batch, SimilarityKernel& kernel,
                              Pooling pooling = Pooling::Dataset) {
  SegPairBatch remapped;
  remapped.reserve(batch.size());
  for (const auto& p : batch) {
    detail::require_aligned(p);
    const auto gt_labels = detail::present_labels(p.ground_truth);
    LabelMap m = gt_labels.empty() ? p.prediction : remap_nearest(p.prediction, gt_labels, kernel);
    remapped.push_back({std::move(m), p.ground_truth});
  }
  return segmentation_jaccard(remapped, MetricMode::Hard, nullptr, pooling);
}

inline double overlap_jaccard(const SegPairBatch& batch, Pooling pooling = Pooling::Dataset) {
  SegPairBatch remapped;
  remapped.reserve(batch.size());
  for (const auto& p : batch) remapped.push_back({remap_overlap(p.prediction, p.ground_truth), p.ground_truth});
  return segmentation_jaccard(remapped, MetricMode::Hard, nullptr, pooling);
}

inline MetricReport evaluate_segmentation(const SegPairBatch& batch, SimilarityKernel& kernel,
                                          const SegmentationOptions& opt = {}) {
  MetricReport r;
  r.scalars["HJI"] = segmentation_jaccard(batch, MetricMode::Hard, nullptr, opt.jaccard);
  r.scalars["SJI"] = segmentation_jaccard(batch, MetricMode::Soft, &kernel, opt.jaccard);
  r.scalars["NJI"] = nearest_jaccard(batch, kernel, opt.jaccard);
  r.scalars["OJI"] = overlap_jaccard(batch, opt.jaccard);
  r.scalars["HR"] = segmentation_recall(batch, MetricMode::Hard, nullptr, opt.recall);
  r.scalars["SR"] = segmentation_recall(batch, MetricMode::Soft, &kernel, opt.recall);
  r.per_class["HJI"] = segmentation_jaccard_per_class(batch, MetricMode::Hard);
  r.counts["images"] = batch.size();
  r.counts["classes"] = r.per_class["HJI"].size();
  return r;
}

}  // namespace cased
