#include "slog/text_metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <sstream>

namespace slog {

namespace {

using NgramCounts = std::map<std::vector<std::string>, int>;

NgramCounts count_ngrams(const std::vector<std::string>& tokens, std::size_t n) {
    NgramCounts counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i)
        ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                          tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
    return counts;
}

}  // namespace

std::vector<std::string> bleu_tokens(std::string_view text) {
    std::string lowered(text);
    std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    std::istringstream in(lowered);
    std::vector<std::string> tokens;
    for (std::string tok; in >> tok;) tokens.push_back(tok);
    return tokens;
}

double bleu4(std::string_view candidate, std::string_view reference) {
    const auto cand = bleu_tokens(candidate);
    const auto ref = bleu_tokens(reference);
    if (cand.empty()) return 0.0;

    double log_sum = 0.0;
    for (std::size_t n = 1; n <= 4; ++n) {
        const auto cand_counts = count_ngrams(cand, n);
        const auto ref_counts = count_ngrams(ref, n);
        double matched = 0, total = 0;
        for (const auto& [gram, c] : cand_counts) {
            total += c;
            auto it = ref_counts.find(gram);
            if (it != ref_counts.end()) matched += std::min(c, it->second);
        }
        if (matched == 0) {
            if (n == 1) return 0.0;
            matched += 1;
            total += 1;
        }
        log_sum += std::log(matched / total);
    }
    const double c = static_cast<double>(cand.size());
    const double r = static_cast<double>(ref.size());
    const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
    return bp * std::exp(log_sum / 4.0);
}

}  // namespace slog
