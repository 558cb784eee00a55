#pragma once

// Finite-difference checks over the library's gradients. Shared by unit and acceptance tests.

#include <algorithm>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "slog/captioner.hpp"
#include "slog/engine.hpp"
#include "slog/surrogate.hpp"

namespace gradcheck {

// Largest relative error over parameter blocks (encoder weight, encoder bias, each slot's
// weight and bias), each block measured as ||analytic - numeric|| / max(||numeric||, 1e-7).
inline double worst_block_error(const slog::CaptionerDims& dims, const Eigen::VectorXd& analytic,
                                const Eigen::VectorXd& numeric) {
    std::vector<Eigen::Index> sizes{static_cast<Eigen::Index>(dims.m) * dims.d, dims.m};
    for (int k = 0; k < dims.K; ++k) {
        sizes.push_back(static_cast<Eigen::Index>(dims.V) * dims.m);
        sizes.push_back(dims.V);
    }
    double worst = 0;
    Eigen::Index off = 0;
    for (auto n : sizes) {
        worst = std::max(worst, oracle::relative_error(analytic.segment(off, n), numeric.segment(off, n), 1e-7));
        off += n;
    }
    return worst;
}

struct Instance {
    slog::CaptionerParams params;
    std::vector<slog::TrainExample> batch;
    std::vector<Eigen::VectorXd> feedback_x;
    slog::Surrogate surrogate;
};

// Random captioner, NLL batch, feedback inputs and a surrogate fitted on their embeddings.
inline Instance random_instance(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_int_distribution<int> tok(0, 3);
    const slog::CaptionerDims dims{6, 4, 8, 4};
    auto params = slog::CaptionerParams::random(dims, seed, 0.5);
    auto vec = [&](int n) {
        Eigen::VectorXd v(n);
        for (int i = 0; i < n; ++i) v(i) = g(rng);
        return v;
    };
    std::vector<slog::TrainExample> batch;
    for (int i = 0; i < 3; ++i) {
        slog::TrainExample ex{vec(dims.d), std::vector<int>(dims.K)};
        for (auto& t : ex.target) t = tok(rng);
        batch.push_back(std::move(ex));
    }
    std::vector<Eigen::VectorXd> fx;
    Eigen::MatrixXd centers(5, dims.m);
    Eigen::VectorXd q(5), w(5);
    for (int i = 0; i < 5; ++i) {
        fx.push_back(vec(dims.d));
        centers.row(i) = slog::encode(params, vec(dims.d)).transpose();
        q(i) = std::uniform_real_distribution<double>(-1, 1)(rng);
        w(i) = std::uniform_real_distribution<double>(0.2, 1)(rng);
    }
    auto s = slog::Surrogate::fit(centers, q, w, {0.8, 1e-2});
    return {std::move(params), std::move(batch), std::move(fx), std::move(s)};
}

inline double nll_error(const Instance& in) {
    const auto& ex = in.batch.front();
    const auto analytic = slog::nll_loss(in.params, ex.x, ex.target).grad.flatten();
    auto p = in.params;
    const auto numeric = oracle::central_difference(
        [&](const Eigen::VectorXd& flat) {
            p.assign(flat);
            return slog::nll_loss(p, ex.x, ex.target).loss;
        },
        in.params.flatten());
    return worst_block_error(in.params.dims, analytic, numeric);
}

inline double augmented_error(const Instance& in, double lambda) {
    const auto analytic = slog::augmented_loss(in.params, in.batch, in.feedback_x, in.surrogate, lambda).grad.flatten();
    auto p = in.params;
    const auto numeric = oracle::central_difference(
        [&](const Eigen::VectorXd& flat) {
            p.assign(flat);
            return slog::augmented_loss(p, in.batch, in.feedback_x, in.surrogate, lambda).loss;
        },
        in.params.flatten());
    return worst_block_error(in.params.dims, analytic, numeric);
}

inline double predict_grad_error(const Instance& in, std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0x5eed);
    std::uniform_real_distribution<double> u(-0.9, 0.9);
    Eigen::VectorXd z(in.surrogate.dim());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = u(rng);
    const auto numeric =
        oracle::central_difference([&](const Eigen::VectorXd& at) { return in.surrogate.predict(at); }, z);
    return oracle::relative_error(in.surrogate.predict_grad(z), numeric, 1e-7);
}

}  // namespace gradcheck
