#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "slog/core_data.hpp"

namespace slog {

struct Mention {
    std::size_t sentence = 0;
    std::string keyword;
    FindingState state = FindingState::Missing;
};

struct LabelResult {
    std::vector<FindingState> states;
    std::vector<std::vector<Mention>> mention_spans;  // per label

    [[nodiscard]] bool mentioned(std::size_t label) const { return !mention_spans.at(label).empty(); }
};

// Lowercases and splits into sentences at '.', '!' and '?', then into whitespace tokens
// with surrounding punctuation stripped. Empty sentences are dropped.
std::vector<std::vector<std::string>> tokenize_sentences(std::string_view text);

/// Rule-based per-finding extraction.
///
/// A keyword hit is Ambiguous when an uncertainty cue ends within the five tokens before it,
/// otherwise Absent when a negation cue does, otherwise Present. Multiple mentions of one
/// label resolve as Present > Absent > Ambiguous; unmentioned labels are Missing.
LabelResult label_text(std::string_view text, const FindingOntology& ontology);

// Sum of state values divided by the number of labels; lies in [-1, 1].
double info_score(std::span<const FindingState> states);
// Same, but rejects a state vector whose length differs from the ontology.
double info_score(std::span<const FindingState> states, const FindingOntology& ontology);

}  // namespace slog
