#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace slog {

struct SurrogateHyper {
    double sigma = 1.0;
    double ridge = 1e-2;
};

// Relative tolerance on ||(W K + ridge I) alpha - W q|| / ||W q|| accepted after a fit.
inline constexpr double kSurrogateResidualTol = 1e-8;

double rbf_kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double sigma);

/// Weighted RBF kernel ridge regression s(z) = sum_i alpha_i k(c_i, z).
///
/// fit() minimises sum_i w_i (s(z_i) - q_i)^2 + ridge * ||s||^2 over the RKHS. Setting
/// the derivative to zero in the dual gives (W K + ridge I) alpha = W q with W = diag(w),
/// which is solved densely by LU with one step of iterative refinement. Zero-weight rows
/// reduce to ridge * alpha_i = 0, so those centers carry no coefficient.
///
/// A fitted surrogate is immutable. Each fit gets a fresh process-unique id.
class Surrogate {
public:
    // Rows of `embeddings` are the training points z_i.
    static Surrogate fit(const Eigen::MatrixXd& embeddings, const Eigen::VectorXd& targets,
                         const Eigen::VectorXd& weights, const SurrogateHyper& hyper);
    // Rebuilds a model from stored parts; used for dumps and tests.
    static Surrogate from_parts(Eigen::MatrixXd centers, Eigen::VectorXd alpha, const SurrogateHyper& hyper);

    [[nodiscard]] double predict(const Eigen::VectorXd& z) const;
    [[nodiscard]] Eigen::VectorXd predict_grad(const Eigen::VectorXd& z) const;

    [[nodiscard]] const Eigen::MatrixXd& centers() const noexcept { return centers_; }
    [[nodiscard]] const Eigen::VectorXd& alpha() const noexcept { return alpha_; }
    [[nodiscard]] double sigma() const noexcept { return hyper_.sigma; }
    [[nodiscard]] double ridge() const noexcept { return hyper_.ridge; }
    [[nodiscard]] std::uint64_t fit_id() const noexcept { return fit_id_; }
    // Relative residual of the dual system at fit time (0 for from_parts).
    [[nodiscard]] double relative_residual() const noexcept { return residual_; }
    [[nodiscard]] Eigen::Index dim() const noexcept { return centers_.cols(); }

    [[nodiscard]] std::string to_json() const;
    static Surrogate from_json(const std::string& text);

private:
    Surrogate(Eigen::MatrixXd centers, Eigen::VectorXd alpha, SurrogateHyper hyper, double residual);

    Eigen::MatrixXd centers_;
    Eigen::VectorXd alpha_;
    SurrogateHyper hyper_;
    double residual_ = 0;
    std::uint64_t fit_id_ = 0;
};

Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& embeddings, double sigma);

// Root mean squared error of predictions over the rows of `embeddings`.
double rmse(const Surrogate& s, const Eigen::MatrixXd& embeddings, const Eigen::VectorXd& targets);

struct HyperSearchResult {
    SurrogateHyper best;
    double best_rmse = 0;
    std::vector<std::pair<SurrogateHyper, double>> trials;
};

inline const std::vector<double> kDefaultSigmaGrid{0.5, 1.0, 2.0};
inline const std::vector<double> kDefaultRidgeGrid{1e-3, 1e-2, 1e-1};

// Fits every grid point on the training data and keeps the lowest validation RMSE.
// Ties keep the earlier grid point. Grid points whose fit fails are skipped.
HyperSearchResult select_hyperparameters(const Eigen::MatrixXd& train_z, const Eigen::VectorXd& train_q,
                                         const Eigen::VectorXd& train_w, const Eigen::MatrixXd& val_z,
                                         const Eigen::VectorXd& val_q,
                                         std::span<const double> sigmas = kDefaultSigmaGrid,
                                         std::span<const double> ridges = kDefaultRidgeGrid);

}  // namespace slog
