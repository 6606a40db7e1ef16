#include "imqa/text.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include <stdexcept>

namespace imqa::text {
namespace {

icu::UnicodeString from_utf8(std::string_view s) {
  return icu::UnicodeString::fromUTF8(icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
}

std::string to_utf8(const icu::UnicodeString& u) {
  std::string out;
  u.toUTF8String(out);
  return out;
}

bool is_dash(UChar32 c) {
  return (c >= 0x2010 && c <= 0x2015) || c == 0x2212 || c == 0xFE58 || c == 0xFE63 || c == 0xFF0D;
}

UChar32 quote_replacement(UChar32 c) {
  switch (c) {
    case 0x2018: case 0x2019: case 0x201A: case 0x201B: case 0x2032: case 0x00B4: case 0x0060:
      return '\'';
    case 0x201C: case 0x201D: case 0x201E: case 0x201F: case 0x2033: case 0x00AB: case 0x00BB:
      return '"';
    default:
      return c;
  }
}

bool is_space(UChar32 c) { return u_isUWhiteSpace(c) || c == 0x200B || c == 0xFEFF; }

}  // namespace

std::string nfkc(std::string_view utf8) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* norm = icu::Normalizer2::getNFKCInstance(status);
  if (U_FAILURE(status)) throw std::runtime_error("ICU NFKC unavailable");
  icu::UnicodeString in = from_utf8(utf8);
  icu::UnicodeString out = norm->normalize(in, status);
  if (U_FAILURE(status)) return std::string(utf8);
  return to_utf8(out);
}

std::string unify_punctuation(std::string_view utf8) {
  icu::UnicodeString in = from_utf8(utf8);
  icu::UnicodeString out;
  for (int32_t i = 0; i < in.length();) {
    UChar32 c = in.char32At(i);
    i += U16_LENGTH(c);
    if (is_dash(c)) {
      out.append(static_cast<UChar32>('-'));
    } else {
      out.append(quote_replacement(c));
    }
  }
  return to_utf8(out);
}

std::string collapse_whitespace(std::string_view utf8) {
  icu::UnicodeString in = from_utf8(utf8);
  icu::UnicodeString out;
  bool pending_space = false;
  for (int32_t i = 0; i < in.length();) {
    UChar32 c = in.char32At(i);
    i += U16_LENGTH(c);
    if (is_space(c)) {
      pending_space = true;
      continue;
    }
    if (pending_space && out.length() > 0) out.append(static_cast<UChar32>(' '));
    pending_space = false;
    out.append(c);
  }
  return to_utf8(out);
}

std::string normalize_loose(std::string_view utf8) {
  return collapse_whitespace(unify_punctuation(nfkc(utf8)));
}

std::vector<std::string> metric_tokens(std::string_view utf8) {
  icu::UnicodeString in = from_utf8(utf8);
  in.toLower();
  std::vector<std::string> tokens;
  icu::UnicodeString cur;
  auto flush = [&] {
    if (cur.length() > 0) {
      tokens.push_back(to_utf8(cur));
      cur.remove();
    }
  };
  for (int32_t i = 0; i < in.length();) {
    UChar32 c = in.char32At(i);
    i += U16_LENGTH(c);
    if (is_space(c) || u_ispunct(c)) {
      flush();
    } else {
      cur.append(c);
    }
  }
  flush();
  return tokens;
}

}  // namespace imqa::text
