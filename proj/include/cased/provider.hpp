#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cased/embedding.hpp"
#include "cased/error.hpp"
#include "cased/image.hpp"

namespace cased {

// Encoder roles exposed by a provider: the joint image-text model's two
// towers and the sentence encoder used by the semantic metrics.
enum class Role { JointText, JointImage, Sentence };

inline std::string_view to_string(Role role) {
  switch (role) {
    case Role::JointText: return "joint-text";
    case Role::JointImage: return "joint-image";
    case Role::Sentence: return "sentence";
  }
  return "?";
}

inline Role parse_role(std::string_view s) {
  if (s == "joint-text") return Role::JointText;
  if (s == "joint-image") return Role::JointImage;
  if (s == "sentence") return Role::Sentence;
  throw Error(ErrorKind::ProviderError, "unknown role '" + std::string(s) + "'", "bad_role");
}

// An image given either by file path (read by the provider) or inline pixels
// (shipped as base64 PNG).
using ImageRef = std::variant<std::filesystem::path, Image>;

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;

  virtual std::string name() const = 0;
  virtual bool has_role(Role role) const = 0;
  // Dimension reported for `role`; constant for the provider's lifetime.
  virtual std::size_t dim(Role role) const = 0;

  // One unit-norm embedding per text, order preserved.
  virtual std::vector<Embedding> embed_texts(Role role, std::span<const std::string> texts) = 0;
  virtual std::vector<Embedding> embed_images(std::span<const ImageRef> images) = 0;

  Embedding embed_text(Role role, const std::string& text) {
    return embed_texts(role, std::span<const std::string>(&text, 1)).front();
  }
  Embedding embed_image(const ImageRef& image) {
    return embed_images(std::span<const ImageRef>(&image, 1)).front();
  }
};

}  // namespace cased
