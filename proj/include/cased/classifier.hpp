#pragma once

// Retrieval-augmented vocabulary-free classification: retrieve captions close
// to the image, extract candidate names from them, and rank the candidates by
// a blend of image-to-name and caption-centroid-to-name similarity.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "cased/candidates.hpp"
#include "cased/caption_index.hpp"
#include "cased/embedding.hpp"
#include "cased/provider.hpp"

namespace cased {

inline constexpr double kDefaultAlpha = 0.7;
inline constexpr std::string_view kPlaceholder = "{}";

// Prompt templates, each with exactly one "{}" slot for the class name.
class TemplateSet {
 public:
  TemplateSet() : templates_{"a photo of a {}"} {}

  explicit TemplateSet(std::vector<std::string> templates) : templates_(std::move(templates)) {
    if (templates_.empty()) fail(ErrorKind::InvalidArgument, "template set is empty");
    for (const auto& t : templates_) {
      const auto first = t.find(kPlaceholder);
      if (first == std::string::npos || t.find(kPlaceholder, first + 1) != std::string::npos) {
        fail(ErrorKind::InvalidArgument, "template must contain exactly one {}: '" + t + "'");
      }
    }
  }

  // One template per line; blank lines and '#' comments skipped.
  static TemplateSet load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::IoError, "cannot read templates " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line.front() == '#') continue;
      lines.push_back(line);
    }
    return TemplateSet(std::move(lines));
  }

  std::size_t size() const noexcept { return templates_.size(); }
  const std::vector<std::string>& templates() const noexcept { return templates_; }

  std::string fill(std::size_t i, std::string_view name) const {
    std::string out = templates_.at(i);
    out.replace(out.find(kPlaceholder), kPlaceholder.size(), name);
    return out;
  }

  bool operator==(const TemplateSet&) const = default;

 private:
  std::vector<std::string> templates_;
};

struct ClassifierConfig {
  double alpha = kDefaultAlpha;
  std::size_t k = kDefaultTopK;
  TemplateSet templates;
  FilterConfig filter;

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) fail(ErrorKind::InvalidArgument, "alpha must lie in [0, 1]");
    if (k < 1) fail(ErrorKind::InvalidArgument, "k must be >= 1");
    filter.validate();
  }
};

struct CandidateScore {
  double visual = 0.0;    // cosine(image, name)
  double textual = 0.0;   // cosine(caption centroid, name)
  double combined = 0.0;  // alpha * softmax(visual) + (1 - alpha) * softmax(textual)
};

struct RankedCandidate {
  std::string name;
  CandidateScore score;
};

struct Prediction {
  std::vector<RankedCandidate> ranked;  // combined score descending, ties by name
  std::vector<std::size_t> retrieved_caption_ids;

  const std::string& top() const {
    if (ranked.empty()) fail(ErrorKind::NoCandidates, "empty prediction");
    return ranked.front().name;
  }

  nlohmann::json to_json() const {
    nlohmann::json ranked_json = nlohmann::json::array();
    for (const auto& r : ranked) {
      ranked_json.push_back({{"name", r.name},
                             {"s_v", r.score.visual},
                             {"s_t", r.score.textual},
                             {"s", r.score.combined}});
    }
    return {{"top", ranked.empty() ? std::string() : ranked.front().name},
            {"ranked", ranked_json},
            {"retrieved_caption_ids", retrieved_caption_ids}};
  }
};

// Softmax with max-subtraction.
inline std::vector<double> softmax(std::span<const double> xs) {
  std::vector<double> out(xs.size());
  if (xs.empty()) return out;
  const double m = *std::max_element(xs.begin(), xs.end());
  double total = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) total += out[i] = std::exp(xs[i] - m);
  for (double& v : out) v /= total;
  return out;
}

// Mean of the provider embeddings of every filled template, l2-normalized.
inline Embedding ensemble_text_embedding(const std::string& candidate, const TemplateSet& templates,
                                         EmbeddingProvider& provider) {
  if (candidate.empty()) fail(ErrorKind::InvalidArgument, "empty candidate name");
  std::vector<std::string> prompts;
  for (std::size_t i = 0; i < templates.size(); ++i) prompts.push_back(templates.fill(i, candidate));
  const auto embs = provider.embed_texts(Role::JointText, prompts);
  return l2_normalize(mean_embedding(embs));
}

// Softmax is taken across the candidate set, once over the visual scores and
// once over the textual scores; the two distributions are then blended.
inline std::vector<CandidateScore> score_candidates(const Embedding& image, std::span<const Embedding> candidates,
                                                    const Embedding& centroid, double alpha) {
  if (candidates.empty()) fail(ErrorKind::EmptyCandidates, "no candidates to score");
  detail::require_same_dim(image.dim(), centroid.dim());
  std::vector<double> visual, textual;
  visual.reserve(candidates.size());
  textual.reserve(candidates.size());
  for (const auto& c : candidates) {
    visual.push_back(cosine_similarity(image, c));
    textual.push_back(cosine_similarity(centroid, c));
  }
  const auto pv = softmax(visual);
  const auto pt = softmax(textual);
  std::vector<CandidateScore> out(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    out[i] = {visual[i], textual[i], alpha * pv[i] + (1.0 - alpha) * pt[i]};
  }
  return out;
}

// Caches template-ensembled name embeddings for one template set; misses are
// sent to the provider in a single batch. Safe for concurrent use.
class CandidateEncoder {
 public:
  CandidateEncoder(EmbeddingProvider& provider, TemplateSet templates)
      : provider_(provider), templates_(std::move(templates)) {}

  const TemplateSet& templates() const noexcept { return templates_; }

  std::vector<Embedding> encode(std::span<const std::string> names) {
    std::vector<std::string> missing;
    {
      std::lock_guard lock(mu_);
      for (const auto& n : names) {
        if (!cache_.contains(n) && std::find(missing.begin(), missing.end(), n) == missing.end()) {
          missing.push_back(n);
        }
      }
    }
    if (!missing.empty()) {
      const std::size_t t = templates_.size();
      std::vector<std::string> prompts;
      prompts.reserve(missing.size() * t);
      for (const auto& n : missing) {
        for (std::size_t i = 0; i < t; ++i) prompts.push_back(templates_.fill(i, n));
      }
      const auto embs = provider_.embed_texts(Role::JointText, prompts);
      std::lock_guard lock(mu_);
      for (std::size_t j = 0; j < missing.size(); ++j) {
        const auto group = std::span<const Embedding>(embs).subspan(j * t, t);
        cache_.emplace(missing[j], l2_normalize(mean_embedding(group)));
      }
    }
    std::lock_guard lock(mu_);
    std::vector<Embedding> out;
    out.reserve(names.size());
    for (const auto& n : names) out.push_back(cache_.at(n));
    return out;
  }

  std::size_t cached() const {
    std::lock_guard lock(mu_);
    return cache_.size();
  }

 private:
  EmbeddingProvider& provider_;
  TemplateSet templates_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, Embedding> cache_;
};

inline Prediction rank_candidates(std::vector<std::string> names, std::span<const CandidateScore> scores) {
  Prediction p;
  p.ranked.reserve(names.size());
  for (std::size_t i = 0; i < names.size(); ++i) p.ranked.push_back({std::move(names[i]), scores[i]});
  std::sort(p.ranked.begin(), p.ranked.end(), [](const RankedCandidate& a, const RankedCandidate& b) {
    if (a.score.combined != b.score.combined) return a.score.combined > b.score.combined;
    return a.name < b.name;
  });
  return p;
}

// Holds the pieces of the pipeline that outlive one image: the candidate
// pipeline (lexicon) and the name-embedding cache.
class Classifier {
 public:
  Classifier(const CaptionIndex& index, ClassifierConfig cfg, EmbeddingProvider& provider)
      : index_(index),
        cfg_((cfg.validate(), std::move(cfg))),
        pipeline_(cfg_.filter),
        encoder_(provider, cfg_.templates) {}

  const ClassifierConfig& config() const noexcept { return cfg_; }
  const CandidatePipeline& pipeline() const noexcept { return pipeline_; }
  const CaptionIndex& index() const noexcept { return index_; }

  Prediction classify(const Embedding& image) {
    RetrievalResult retrieved = index_.retrieve_topk(image, cfg_.k);
    if (retrieved.hits.empty()) fail(ErrorKind::EmptyStore, "retrieval returned no captions");
    std::vector<std::string> captions;
    captions.reserve(retrieved.hits.size());
    for (const auto& h : retrieved.hits) captions.push_back(h.text);

    std::vector<std::string> names;
    for (const auto& [name, count] : pipeline_.extract(captions)) names.push_back(name);
    if (names.empty()) names = fallback_names(retrieved.hits.front().text);
    if (names.empty()) fail(ErrorKind::NoCandidates, "no candidate survived filtering");

    const auto embs = encoder_.encode(names);
    const auto scores = score_candidates(image, embs, retrieved.centroid, cfg_.alpha);
    Prediction p = rank_candidates(std::move(names), scores);
    for (const auto& h : retrieved.hits) p.retrieved_caption_ids.push_back(h.id);
    return p;
  }

  CandidateSet propose(const Embedding& image) const {
    RetrievalResult retrieved = index_.retrieve_topk(image, cfg_.k);
    std::vector<std::string> captions;
    for (const auto& h : retrieved.hits) captions.push_back(h.text);
    return pipeline_.extract(captions);
  }

 private:
  // Remove + standardize the closest caption, skipping the filter stage.
  std::vector<std::string> fallback_names(const std::string& caption) const {
    std::vector<std::string> out;
    for (auto& w : pipeline_.words(caption)) {
      if (std::find(out.begin(), out.end(), w) == out.end()) out.push_back(std::move(w));
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  const CaptionIndex& index_;
  ClassifierConfig cfg_;
  CandidatePipeline pipeline_;
  CandidateEncoder encoder_;
};

inline Prediction classify(const Embedding& image, const CaptionIndex& index, const ClassifierConfig& cfg,
                           EmbeddingProvider& provider) {
  return Classifier(index, cfg, provider).classify(image);
}

// Closed-set zero-shot baseline over a pre-defined name list.
struct FixedVocabulary {
  std::vector<std::string> names;
  std::vector<Embedding> embeddings;
};

inline FixedVocabulary make_fixed_vocabulary(std::vector<std::string> names, const TemplateSet& templates,
                                             EmbeddingProvider& provider) {
  if (names.empty()) fail(ErrorKind::EmptyList, "fixed vocabulary is empty");
  std::vector<std::string> sorted = names;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    fail(ErrorKind::InvalidArgument, "fixed vocabulary has duplicate names");
  }
  CandidateEncoder encoder(provider, templates);
  auto embs = encoder.encode(names);
  return {std::move(names), std::move(embs)};
}

inline std::string classify_fixed_vocabulary(const Embedding& image, const FixedVocabulary& vocab) {
  if (vocab.names.empty() || vocab.names.size() != vocab.embeddings.size()) {
    fail(ErrorKind::InvalidArgument, "fixed vocabulary is empty or misaligned");
  }
  std::size_t best = 0;
  double best_score = cosine_similarity(image, vocab.embeddings[0]);
  for (std::size_t i = 1; i < vocab.names.size(); ++i) {
    const double s = cosine_similarity(image, vocab.embeddings[i]);
    if (s > best_score || (s == best_score && vocab.names[i] < vocab.names[best])) {
      best = i;
      best_score = s;
    }
  }
  return vocab.names[best];
}

}  // namespace cased
