#pragma once

// Independent reference implementations used by the unit and acceptance tests.
// Nothing here calls the library code it is compared against.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

// ---- BLEU-4 by brute-force n-gram counting ----------------------------------------------

inline std::vector<std::string> words(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty()) out.push_back(cur), cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

inline bool same_gram(const std::vector<std::string>& a, std::size_t i, const std::vector<std::string>& b,
                      std::size_t j, std::size_t n) {
    for (std::size_t t = 0; t < n; ++t)
        if (a[i + t] != b[j + t]) return false;
    return true;
}

inline std::size_t occurrences(const std::vector<std::string>& hay, const std::vector<std::string>& src,
                               std::size_t start, std::size_t n) {
    std::size_t c = 0;
    for (std::size_t j = 0; j + n <= hay.size(); ++j)
        if (same_gram(hay, j, src, start, n)) ++c;
    return c;
}

inline double bleu4(const std::string& candidate, const std::string& reference) {
    const auto c = words(candidate);
    const auto r = words(reference);
    if (c.empty()) return 0.0;
    double product = 1.0;
    for (std::size_t n = 1; n <= 4; ++n) {
        double num = 0, den = 0;
        // Visit each distinct candidate n-gram once, at its first position.
        for (std::size_t i = 0; i + n <= c.size(); ++i) {
            den += 1;
            bool first = true;
            for (std::size_t k = 0; k < i; ++k)
                if (same_gram(c, k, c, i, n)) first = false;
            if (!first) continue;
            num += static_cast<double>(std::min(occurrences(c, c, i, n), occurrences(r, c, i, n)));
        }
        if (num == 0) {
            if (n == 1) return 0.0;
            num += 1;
            den += 1;
        }
        product *= num / den;
    }
    const double cl = static_cast<double>(c.size()), rl = static_cast<double>(r.size());
    const double bp = cl < rl ? std::exp(1.0 - rl / cl) : 1.0;
    return bp * std::pow(product, 0.25);
}

// Random token-sequence pair over a small vocabulary so that n-gram overlaps are common.
inline std::pair<std::string, std::string> random_text_pair(std::mt19937_64& rng) {
    static const char* vocab[] = {"there", "is", "no", "edema", ".", "possible", "Pneumonia", "effusion",
                                  "the",   "a",  "of", "x",     "NO", "is.",      "fracture"};
    std::uniform_int_distribution<int> len(0, 14), pick(0, 14);
    auto make = [&] {
        std::string s;
        const int n = len(rng);
        for (int i = 0; i < n; ++i) {
            if (i) s += (pick(rng) % 5 == 0) ? "  " : " ";
            s += vocab[pick(rng)];
        }
        return s;
    };
    std::string a = make();
    std::string b = (pick(rng) % 4 == 0) ? a : make();
    return {a, b};
}

// ---- template reports with known states --------------------------------------------------

struct TemplateReport {
    std::string text;
    std::vector<int> expected;  // +1 present, -1 absent mentioned, 0 otherwise
};

inline TemplateReport random_template_report(std::mt19937_64& rng, const std::vector<std::string>& labels) {
    static const char* present[] = {"there is %.", "findings consistent with %.", "% is present."};
    static const char* absent[] = {"no %.", "no evidence of %.", "negative for %."};
    static const char* uncertain[] = {"possible %.", "cannot exclude %.", "suspected %."};
    std::uniform_int_distribution<int> state(0, 3), variant(0, 2);
    std::vector<std::string> sentences;
    TemplateReport out;
    out.expected.assign(labels.size(), 0);
    for (std::size_t k = 0; k < labels.size(); ++k) {
        const char* tmpl = nullptr;
        switch (state(rng)) {
            case 0: tmpl = present[variant(rng)]; out.expected[k] = 1; break;
            case 1: tmpl = absent[variant(rng)]; out.expected[k] = -1; break;
            case 2: tmpl = uncertain[variant(rng)]; break;
            default: break;  // omitted
        }
        if (!tmpl) continue;
        std::string s = tmpl;
        s.replace(s.find('%'), 1, labels[k]);
        if (variant(rng) == 0) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
        sentences.push_back(s);
    }
    std::shuffle(sentences.begin(), sentences.end(), rng);
    for (std::size_t i = 0; i < sentences.size(); ++i) out.text += (i ? " " : "") + sentences[i];
    return out;
}

// ---- linear algebra ----------------------------------------------------------------------

// Gauss-Jordan elimination with partial pivoting on a copy of [A | b].
inline Eigen::VectorXd gauss_jordan(Eigen::MatrixXd a, Eigen::VectorXd b) {
    const Eigen::Index n = a.rows();
    for (Eigen::Index col = 0; col < n; ++col) {
        Eigen::Index piv = col;
        for (Eigen::Index r = col + 1; r < n; ++r)
            if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
        a.row(col).swap(a.row(piv));
        std::swap(b(col), b(piv));
        const double d = a(col, col);
        a.row(col) /= d;
        b(col) /= d;
        for (Eigen::Index r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = a(r, col);
            if (f == 0) continue;
            a.row(r) -= f * a.row(col);
            b(r) -= f * b(col);
        }
    }
    return b;
}

inline double gaussian_kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double sigma) {
    double sq = 0;
    for (Eigen::Index i = 0; i < a.size(); ++i) sq += (a(i) - b(i)) * (a(i) - b(i));
    return std::exp(-sq / (2 * sigma * sigma));
}

// Unweighted kernel ridge regression: solve (K + ridge I) alpha = q.
inline Eigen::VectorXd krr_alpha(const Eigen::MatrixXd& z, const Eigen::VectorXd& q, double sigma, double ridge) {
    const Eigen::Index n = z.rows();
    Eigen::MatrixXd k(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) k(i, j) = gaussian_kernel(z.row(i).transpose(), z.row(j).transpose(), sigma);
    k.diagonal().array() += ridge;
    return gauss_jordan(k, q);
}

inline double krr_predict(const Eigen::MatrixXd& centers, const Eigen::VectorXd& alpha, double sigma,
                          const Eigen::VectorXd& z) {
    double s = 0;
    for (Eigen::Index i = 0; i < centers.rows(); ++i) s += alpha(i) * gaussian_kernel(centers.row(i).transpose(), z, sigma);
    return s;
}

// ---- finite differences ------------------------------------------------------------------

inline Eigen::VectorXd central_difference(const std::function<double(const Eigen::VectorXd&)>& f,
                                          const Eigen::VectorXd& at, double step = 1e-5) {
    Eigen::VectorXd g(at.size());
    Eigen::VectorXd p = at;
    for (Eigen::Index i = 0; i < at.size(); ++i) {
        p(i) = at(i) + step;
        const double hi = f(p);
        p(i) = at(i) - step;
        const double lo = f(p);
        p(i) = at(i);
        g(i) = (hi - lo) / (2 * step);
    }
    return g;
}

// ||a - b|| / max(||b||, floor): the relative error used for gradient checks.
inline double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double floor = 1e-8) {
    return (a - b).norm() / std::max(b.norm(), floor);
}

// ---- categorical sampling ----------------------------------------------------------------

// One draw per slot from softmax(logits / temperature) using the library's documented
// stream: mt19937_64(seed), u = top 53 bits * 2^-53, first index whose running sum exceeds u.
inline std::vector<int> sample_tokens(const std::vector<Eigen::VectorXd>& logits, double temperature,
                                      std::uint64_t seed) {
    std::mt19937_64 eng(seed);
    std::vector<int> out;
    for (const auto& u : logits) {
        std::vector<double> p(static_cast<std::size_t>(u.size()));
        const double mx = u.maxCoeff() / temperature;
        double total = 0;
        for (std::size_t v = 0; v < p.size(); ++v) total += p[v] = std::exp(u(static_cast<Eigen::Index>(v)) / temperature - mx);
        const double draw = static_cast<double>(eng() >> 11) / 9007199254740992.0;
        double acc = 0;
        int pick = static_cast<int>(p.size()) - 1;
        for (std::size_t v = 0; v < p.size(); ++v) {
            acc += p[v] / total;
            if (draw < acc) {
                pick = static_cast<int>(v);
                break;
            }
        }
        out.push_back(pick);
    }
    return out;
}

}  // namespace oracle
