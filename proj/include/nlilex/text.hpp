#pragma once

// Unicode text helpers shared by the lexical scorers.

#include <string>
#include <string_view>
#include <vector>

#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf16.h>

namespace nlilex::text {

namespace detail {

inline icu::UnicodeString fold(std::string_view utf8) {
  auto s = icu::UnicodeString::fromUTF8(
      icu::StringPiece(utf8.data(), static_cast<int32_t>(utf8.size())));
  s.foldCase();
  return s;
}

}  // namespace detail

// Full Unicode case folding of a UTF-8 string.
inline std::string case_fold(std::string_view utf8) {
  std::string out;
  detail::fold(utf8).toUTF8String(out);
  return out;
}

// Case-fold, collapse every run of whitespace to one ASCII space, trim.
inline std::string normalize(std::string_view utf8) {
  const icu::UnicodeString folded = detail::fold(utf8);
  icu::UnicodeString collapsed;
  bool pending_space = false;
  for (int32_t i = 0; i < folded.length();) {
    const UChar32 c = folded.char32At(i);
    i += U16_LENGTH(c);
    if (u_isUWhiteSpace(c)) {
      pending_space = true;
      continue;
    }
    if (pending_space && !collapsed.isEmpty()) collapsed.append(UChar32{' '});
    pending_space = false;
    collapsed.append(c);
  }
  std::string out;
  collapsed.toUTF8String(out);
  return out;
}

// True when the string is empty or whitespace only (Unicode-aware).
inline bool is_blank(std::string_view utf8) { return normalize(utf8).empty(); }

// Case-folded tokens: maximal runs of alphanumeric code points.
inline std::vector<std::string> tokenize(std::string_view utf8) {
  const icu::UnicodeString folded = detail::fold(utf8);
  std::vector<std::string> tokens;
  icu::UnicodeString current;
  auto flush = [&] {
    if (current.isEmpty()) return;
    std::string tok;
    current.toUTF8String(tok);
    tokens.push_back(std::move(tok));
    current.remove();
  };
  for (int32_t i = 0; i < folded.length();) {
    const UChar32 c = folded.char32At(i);
    i += U16_LENGTH(c);
    if (u_isalnum(c)) {
      current.append(c);
    } else {
      flush();
    }
  }
  flush();
  return tokens;
}

inline std::string trim(std::string_view s) {
  const auto* ws = " \t\r\n\f\v";
  const auto first = s.find_first_not_of(ws);
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(ws);
  return std::string(s.substr(first, last - first + 1));
}

}  // namespace nlilex::text
