#include "slog/report_labeler.hpp"

#include <algorithm>
#include <cctype>

#include "slog/errors.hpp"

namespace slog {

namespace {

constexpr std::size_t kCueWindow = 5;

std::vector<std::string> split_words(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        auto is_punct = [](unsigned char c) { return std::ispunct(c) != 0; };
        auto b = std::find_if_not(cur.begin(), cur.end(), is_punct);
        auto e = std::find_if_not(cur.rbegin(), std::string::reverse_iterator(b), is_punct).base();
        if (b < e) out.emplace_back(b, e);
        cur.clear();
    };
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c)))
            flush();
        else
            cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    flush();
    return out;
}

bool matches_at(const std::vector<std::string>& tokens, std::size_t pos, const std::vector<std::string>& phrase) {
    if (phrase.empty() || pos + phrase.size() > tokens.size()) return false;
    return std::equal(phrase.begin(), phrase.end(), tokens.begin() + static_cast<std::ptrdiff_t>(pos));
}

// True when some cue lies entirely inside [start - window, start).
bool cue_before(const std::vector<std::string>& tokens, std::size_t start,
                const std::vector<std::vector<std::string>>& cues) {
    std::size_t lo = start > kCueWindow ? start - kCueWindow : 0;
    for (const auto& cue : cues)
        for (std::size_t p = lo; p + cue.size() <= start; ++p)
            if (matches_at(tokens, p, cue)) return true;
    return false;
}

int rank(FindingState s) {
    switch (s) {
        case FindingState::Present: return 2;
        case FindingState::Absent: return 1;
        case FindingState::Missing: return 0;
    }
    return 0;
}

std::vector<std::vector<std::string>> tokenize_all(const std::vector<std::string>& phrases) {
    std::vector<std::vector<std::string>> out;
    out.reserve(phrases.size());
    for (const auto& p : phrases) out.push_back(split_words(p));
    return out;
}

}  // namespace

std::vector<std::vector<std::string>> tokenize_sentences(std::string_view text) {
    std::vector<std::vector<std::string>> sentences;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= text.size(); ++i) {
        if (i == text.size() || text[i] == '.' || text[i] == '!' || text[i] == '?') {
            auto words = split_words(text.substr(start, i - start));
            if (!words.empty()) sentences.push_back(std::move(words));
            start = i + 1;
        }
    }
    return sentences;
}

LabelResult label_text(std::string_view text, const FindingOntology& ontology) {
    const std::size_t n_labels = ontology.size();
    LabelResult result;
    result.states.assign(n_labels, FindingState::Missing);
    result.mention_spans.resize(n_labels);

    const auto negations = tokenize_all(ontology.negation_cues);
    const auto uncertainties = tokenize_all(ontology.uncertainty_cues);
    std::vector<std::vector<std::vector<std::string>>> keywords;
    keywords.reserve(n_labels);
    for (const auto& kw : ontology.keywords) keywords.push_back(tokenize_all(kw));

    const auto sentences = tokenize_sentences(text);
    for (std::size_t si = 0; si < sentences.size(); ++si) {
        const auto& tokens = sentences[si];
        for (std::size_t label = 0; label < n_labels; ++label) {
            for (std::size_t ki = 0; ki < keywords[label].size(); ++ki) {
                for (std::size_t pos = 0; pos < tokens.size(); ++pos) {
                    if (!matches_at(tokens, pos, keywords[label][ki])) continue;
                    FindingState s = FindingState::Present;
                    if (cue_before(tokens, pos, uncertainties))
                        s = kAmbiguous;
                    else if (cue_before(tokens, pos, negations))
                        s = FindingState::Absent;
                    auto& spans = result.mention_spans[label];
                    if (spans.empty() || rank(s) > rank(result.states[label])) result.states[label] = s;
                    spans.push_back({si, ontology.keywords[label][ki], s});
                }
            }
        }
    }
    return result;
}

double info_score(std::span<const FindingState> states) {
    require(!states.empty(), "info_score needs at least one label");
    double total = 0;
    for (auto s : states) total += value_of(s);
    return total / static_cast<double>(states.size());
}

double info_score(std::span<const FindingState> states, const FindingOntology& ontology) {
    require(states.size() == ontology.size(), "info_score: state vector length must equal ontology size");
    return info_score(states);
}

}  // namespace slog
