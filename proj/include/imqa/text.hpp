#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace imqa::text {

// Unicode NFKC. Invalid UTF-8 is passed through unchanged.
std::string nfkc(std::string_view utf8);

// Maps dash variants (U+2010..U+2015, U+2212, U+FE58, U+FE63, U+FF0D) to '-'
// and curly/prime quote variants to ASCII quotes.
std::string unify_punctuation(std::string_view utf8);

// Collapses runs of whitespace (including NBSP and other Unicode spaces) to a
// single ASCII space and trims both ends.
std::string collapse_whitespace(std::string_view utf8);

// nfkc -> unify_punctuation -> collapse_whitespace
std::string normalize_loose(std::string_view utf8);

// Lowercase, replace punctuation by spaces, collapse whitespace, split.
// Shared tokenizer for token F1 and ROUGE-L.
std::vector<std::string> metric_tokens(std::string_view utf8);

}  // namespace imqa::text
