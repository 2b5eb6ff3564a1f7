#pragma once

#include <string>
#include <string_view>

#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include "cased/error.hpp"

namespace cased::unicode {

inline icu::UnicodeString from_utf8(std::string_view s) {
  return icu::UnicodeString::fromUTF8(icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
}

inline std::string to_utf8(const icu::UnicodeString& u) {
  std::string out;
  u.toUTF8String(out);
  return out;
}

inline std::string nfc(std::string_view s) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* n = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) fail(ErrorKind::InvalidArgument, "ICU NFC normalizer unavailable");
  icu::UnicodeString out = n->normalize(from_utf8(s), status);
  if (U_FAILURE(status)) fail(ErrorKind::InvalidArgument, "NFC normalization failed");
  return to_utf8(out);
}

inline std::string to_lower(std::string_view s) {
  icu::UnicodeString u = from_utf8(s);
  u.toLower(icu::Locale::getRoot());
  return to_utf8(u);
}

inline std::u32string to_u32(std::string_view s) {
  const icu::UnicodeString u = from_utf8(s);
  std::u32string out;
  for (int32_t i = 0; i < u.length(); i = u.moveIndex32(i, 1)) out.push_back(static_cast<char32_t>(u.char32At(i)));
  return out;
}

inline std::string to_utf8(std::u32string_view s) {
  icu::UnicodeString u;
  for (char32_t c : s) u.append(static_cast<UChar32>(c));
  return to_utf8(u);
}

inline std::size_t code_points(std::string_view s) {
  const icu::UnicodeString u = from_utf8(s);
  return static_cast<std::size_t>(u.countChar32());
}

inline bool is_letter(char32_t c) { return u_isalpha(static_cast<UChar32>(c)); }
inline bool is_digit(char32_t c) { return u_isdigit(static_cast<UChar32>(c)); }
inline bool is_space(char32_t c) { return u_isUWhiteSpace(static_cast<UChar32>(c)); }
inline bool is_apostrophe(char32_t c) { return c == U'\'' || c == U'’'; }

inline bool is_punct(char32_t c) { return u_ispunct(static_cast<UChar32>(c)); }

}  // namespace cased::unicode
