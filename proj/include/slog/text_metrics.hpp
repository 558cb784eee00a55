#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace slog {

// Lowercase, whitespace-separated tokens. Punctuation stays attached.
std::vector<std::string> bleu_tokens(std::string_view text);

/// Sentence-level BLEU-4 of `candidate` against a single `reference`.
///
/// Clipped n-gram precisions for n = 1..4, uniform weights, brevity penalty
/// exp(1 - r/c) when the candidate is shorter. Orders n >= 2 with zero matches use
/// add-one smoothing (numerator and denominator both incremented). An empty
/// candidate scores 0.
double bleu4(std::string_view candidate, std::string_view reference);

}  // namespace slog
