#pragma once

// Newline-delimited JSON embedding protocol.
//
//   -> {"op":"hello"}
//   <- {"roles":{"joint-text":512,...},"name":"..."}
//   -> {"id":n,"op":"embed_texts","role":"joint-text","texts":[...]}
//   -> {"id":n,"op":"embed_image","role":"joint-image","path":"..."}   (or "image_b64")
//   <- {"id":n,"embeddings":[[...],...]}
//   <- {"id":n,"error":{"code":"...","message":"..."}}

#include <string>

#include <nlohmann/json.hpp>

#include "cased/provider.hpp"

namespace cased::protocol {

using nlohmann::json;

inline json error_response(const json& id, const std::string& code, const std::string& message) {
  json r = {{"error", {{"code", code}, {"message", message}}}};
  if (!id.is_null()) r["id"] = id;
  return r;
}

inline json embeddings_json(const std::vector<Embedding>& es) {
  json arr = json::array();
  for (const auto& e : es) arr.push_back(e.vector());
  return arr;
}

inline json hello_response(const EmbeddingProvider& provider) {
  json roles = json::object();
  for (Role r : {Role::JointText, Role::JointImage, Role::Sentence}) {
    if (provider.has_role(r)) roles[std::string(to_string(r))] = provider.dim(r);
  }
  return {{"roles", roles}, {"name", provider.name()}};
}

inline std::string error_code_for(const Error& e) {
  if (!e.code().empty()) return e.code();
  switch (e.kind()) {
    case ErrorKind::InvalidRequest: return "invalid_request";
    case ErrorKind::DecodeError: return "decode";
    case ErrorKind::IoError: return "io";
    default: return "internal";
  }
}

// Server side: one request line in, one response document out.
inline json handle_request(EmbeddingProvider& provider, const std::string& line) {
  json req;
  try {
    req = json::parse(line);
  } catch (const json::exception& e) {
    return error_response(nullptr, "invalid_request", std::string("malformed JSON: ") + e.what());
  }
  if (!req.is_object()) return error_response(nullptr, "invalid_request", "request must be an object");
  const json id = req.value("id", json());
  const std::string op = req.value("op", "");
  try {
    if (op == "hello") return hello_response(provider);
    if (op == "embed_texts") {
      const Role role = parse_role(req.value("role", "joint-text"));
      if (!provider.has_role(role)) return error_response(id, "bad_role", "role not served");
      if (!req.contains("texts") || !req["texts"].is_array() || req["texts"].empty()) {
        return error_response(id, "invalid_request", "texts must be a non-empty array");
      }
      const auto texts = req["texts"].get<std::vector<std::string>>();
      return {{"id", id}, {"embeddings", embeddings_json(provider.embed_texts(role, texts))}};
    }
    if (op == "embed_image") {
      ImageRef ref;
      if (req.contains("path")) {
        ref = std::filesystem::path(req["path"].get<std::string>());
      } else if (req.contains("image_b64")) {
        try {
          ref = decode_png(base64_decode(req["image_b64"].get<std::string>()));
        } catch (const Error& e) {
          return error_response(id, "decode", e.what());
        }
      } else {
        return error_response(id, "invalid_request", "embed_image needs path or image_b64");
      }
      return {{"id", id}, {"embeddings", embeddings_json(provider.embed_images(std::span(&ref, 1)))}};
    }
    return error_response(id, "bad_op", "unknown op '" + op + "'");
  } catch (const Error& e) {
    return error_response(id, error_code_for(e), e.what());
  } catch (const json::exception& e) {
    return error_response(id, "invalid_request", e.what());
  }
}

}  // namespace cased::protocol
