#include "slog/surrogate.hpp"

#include <atomic>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "slog/errors.hpp"

namespace slog {

namespace {

std::atomic<std::uint64_t> g_next_fit_id{1};

void check_hyper(const SurrogateHyper& h) {
    if (!(h.sigma > 0) || !std::isfinite(h.sigma)) throw ConfigError("surrogate sigma must be positive and finite");
    if (!(h.ridge > 0) || !std::isfinite(h.ridge)) throw ConfigError("surrogate ridge must be positive and finite");
}

}  // namespace

double rbf_kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double sigma) {
    return std::exp(-(a - b).squaredNorm() / (2.0 * sigma * sigma));
}

Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& embeddings, double sigma) {
    const Eigen::Index n = embeddings.rows();
    Eigen::MatrixXd k(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        k(i, i) = 1.0;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double v = std::exp(-(embeddings.row(i) - embeddings.row(j)).squaredNorm() / (2.0 * sigma * sigma));
            k(i, j) = v;
            k(j, i) = v;
        }
    }
    return k;
}

Surrogate::Surrogate(Eigen::MatrixXd centers, Eigen::VectorXd alpha, SurrogateHyper hyper, double residual)
    : centers_(std::move(centers)),
      alpha_(std::move(alpha)),
      hyper_(hyper),
      residual_(residual),
      fit_id_(g_next_fit_id.fetch_add(1)) {}

Surrogate Surrogate::fit(const Eigen::MatrixXd& embeddings, const Eigen::VectorXd& targets,
                         const Eigen::VectorXd& weights, const SurrogateHyper& hyper) {
    check_hyper(hyper);
    const Eigen::Index n = embeddings.rows();
    require(n >= 1, "surrogate fit needs at least one example");
    require(targets.size() == n && weights.size() == n, "surrogate fit: targets and weights must match rows");
    if (!embeddings.allFinite() || !targets.allFinite() || !weights.allFinite())
        throw FitError("surrogate fit received non-finite input", std::numeric_limits<double>::infinity());
    if ((weights.array() < 0).any()) throw ConfigError("surrogate weights must be non-negative");
    if (!(weights.array() > 0).any()) throw FitError("all surrogate weights are zero", std::numeric_limits<double>::infinity());

    const Eigen::MatrixXd system =
        weights.asDiagonal() * kernel_matrix(embeddings, hyper.sigma) + hyper.ridge * Eigen::MatrixXd::Identity(n, n);
    const Eigen::VectorXd rhs = weights.cwiseProduct(targets);

    Eigen::PartialPivLU<Eigen::MatrixXd> lu(system);
    const double rcond = lu.rcond();
    const double condition = rcond > 0 ? 1.0 / rcond : std::numeric_limits<double>::infinity();
    Eigen::VectorXd alpha = lu.solve(rhs);
    alpha += lu.solve(rhs - system * alpha);

    const double rhs_norm = rhs.norm();
    const double res = (system * alpha - rhs).norm();
    const double rel = rhs_norm > 0 ? res / rhs_norm : res;
    if (!alpha.allFinite() || rel > kSurrogateResidualTol)
        throw FitError("surrogate system residual " + std::to_string(rel) + " exceeds tolerance (condition ~ " +
                           std::to_string(condition) + ")",
                       condition);
    return Surrogate(embeddings, std::move(alpha), hyper, rel);
}

Surrogate Surrogate::from_parts(Eigen::MatrixXd centers, Eigen::VectorXd alpha, const SurrogateHyper& hyper) {
    check_hyper(hyper);
    require(centers.rows() == alpha.size(), "surrogate: one coefficient per center required");
    return Surrogate(std::move(centers), std::move(alpha), hyper, 0.0);
}

double Surrogate::predict(const Eigen::VectorXd& z) const {
    require(z.size() == centers_.cols(), "surrogate predict: embedding dimension mismatch");
    const double inv = 1.0 / (2.0 * hyper_.sigma * hyper_.sigma);
    double out = 0;
    for (Eigen::Index i = 0; i < centers_.rows(); ++i)
        out += alpha_(i) * std::exp(-(centers_.row(i).transpose() - z).squaredNorm() * inv);
    return out;
}

Eigen::VectorXd Surrogate::predict_grad(const Eigen::VectorXd& z) const {
    require(z.size() == centers_.cols(), "surrogate predict_grad: embedding dimension mismatch");
    const double s2 = hyper_.sigma * hyper_.sigma;
    Eigen::VectorXd g = Eigen::VectorXd::Zero(z.size());
    for (Eigen::Index i = 0; i < centers_.rows(); ++i) {
        const Eigen::VectorXd diff = centers_.row(i).transpose() - z;
        g += (alpha_(i) * std::exp(-diff.squaredNorm() / (2.0 * s2)) / s2) * diff;
    }
    return g;
}

std::string Surrogate::to_json() const {
    nlohmann::json centers = nlohmann::json::array();
    for (Eigen::Index i = 0; i < centers_.rows(); ++i) {
        Eigen::VectorXd row = centers_.row(i).transpose();
        centers.push_back(std::vector<double>(row.data(), row.data() + row.size()));
    }
    nlohmann::json j = {{"sigma", hyper_.sigma},
                        {"ridge", hyper_.ridge},
                        {"centers", centers},
                        {"alpha", std::vector<double>(alpha_.data(), alpha_.data() + alpha_.size())}};
    return j.dump();
}

Surrogate Surrogate::from_json(const std::string& text) {
    try {
        auto j = nlohmann::json::parse(text);
        auto rows = j.at("centers").get<std::vector<std::vector<double>>>();
        auto alpha = j.at("alpha").get<std::vector<double>>();
        const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
        const Eigen::Index m = n ? static_cast<Eigen::Index>(rows[0].size()) : 0;
        Eigen::MatrixXd centers(n, m);
        for (Eigen::Index i = 0; i < n; ++i) {
            if (static_cast<Eigen::Index>(rows[i].size()) != m) throw ParseError("ragged surrogate centers", 0);
            for (Eigen::Index c = 0; c < m; ++c) centers(i, c) = rows[i][c];
        }
        return from_parts(std::move(centers), Eigen::Map<Eigen::VectorXd>(alpha.data(), alpha.size()),
                          {j.at("sigma").get<double>(), j.at("ridge").get<double>()});
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("invalid surrogate dump: ") + e.what(), 0);
    }
}

double rmse(const Surrogate& s, const Eigen::MatrixXd& embeddings, const Eigen::VectorXd& targets) {
    if (embeddings.rows() == 0) throw Error("rmse: empty evaluation set");
    require(targets.size() == embeddings.rows(), "rmse: targets must match rows");
    double sse = 0;
    for (Eigen::Index i = 0; i < embeddings.rows(); ++i) {
        const double e = s.predict(embeddings.row(i).transpose()) - targets(i);
        sse += e * e;
    }
    return std::sqrt(sse / static_cast<double>(embeddings.rows()));
}

HyperSearchResult select_hyperparameters(const Eigen::MatrixXd& train_z, const Eigen::VectorXd& train_q,
                                         const Eigen::VectorXd& train_w, const Eigen::MatrixXd& val_z,
                                         const Eigen::VectorXd& val_q, std::span<const double> sigmas,
                                         std::span<const double> ridges) {
    HyperSearchResult out;
    bool found = false;
    for (double sigma : sigmas) {
        for (double ridge : ridges) {
            SurrogateHyper h{sigma, ridge};
            try {
                const double err = rmse(Surrogate::fit(train_z, train_q, train_w, h), val_z, val_q);
                out.trials.emplace_back(h, err);
                if (!found || err < out.best_rmse) {
                    out.best = h;
                    out.best_rmse = err;
                    found = true;
                }
            } catch (const FitError&) {
            }
        }
    }
    if (!found) throw FitError("no grid point produced a valid surrogate fit", std::numeric_limits<double>::infinity());
    return out;
}

}  // namespace slog
