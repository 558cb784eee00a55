#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "slog/core_data.hpp"

namespace slog {

// Decoder vocabulary, one token per caption slot.
enum Token : int { kPresent = 0, kAbsent = 1, kUncertain = 2, kOmit = 3 };
inline constexpr int kVocabSize = 4;

struct CaptionerDims {
    int d = 16;  // scan features
    int m = 8;   // embedding
    int K = 8;   // slots, one per finding
    int V = kVocabSize;

    bool operator==(const CaptionerDims&) const = default;
};

/// Parameters of the slot-structured caption generator.
///
/// Encoder: z = tanh(W_e x + b_e). Decoder: one softmax head per slot with
/// logits u_k = W_k z + b_k over {PRESENT, ABSENT, UNCERTAIN, OMIT}.
/// The same type doubles as the gradient container.
struct CaptionerParams {
    CaptionerDims dims;
    Eigen::MatrixXd encoder_weight;              // m x d
    Eigen::VectorXd encoder_bias;                // m
    std::vector<Eigen::MatrixXd> slot_weights;   // K of V x m
    std::vector<Eigen::VectorXd> slot_biases;    // K of V

    static CaptionerParams zeros(const CaptionerDims& dims);
    // Gaussian init with the given standard deviation; deterministic in seed.
    static CaptionerParams random(const CaptionerDims& dims, std::uint64_t seed, double scale = 0.1);

    void check() const;
    [[nodiscard]] Eigen::Index parameter_count() const;
    [[nodiscard]] Eigen::VectorXd flatten() const;
    void assign(const Eigen::VectorXd& flat);
    // this += alpha * other
    void axpy(double alpha, const CaptionerParams& other);
    [[nodiscard]] bool all_finite() const;

    bool operator==(const CaptionerParams& other) const;
};

struct Guidance {
    std::vector<int> tokens;
    std::string text;
    Eigen::VectorXd z;
};

struct Sampling {
    double temperature = 1.0;
    std::uint64_t seed = 0;
};

Eigen::VectorXd encode(const CaptionerParams& params, const Eigen::VectorXd& x);
Eigen::VectorXd slot_logits(const CaptionerParams& params, const Eigen::VectorXd& z, int slot);

// Argmax per slot; ties go to the lowest token id.
std::vector<int> decode(const CaptionerParams& params, const Eigen::VectorXd& z);
// Draws each slot from softmax(u_k / temperature) using one engine seeded with `seed`,
// consuming one uniform01 draw per slot in slot order.
std::vector<int> decode(const CaptionerParams& params, const Eigen::VectorXd& z, const Sampling& sampling);

std::string render(std::span<const int> tokens, const FindingOntology& ontology);

Guidance generate(const CaptionerParams& params, const Eigen::VectorXd& x, const FindingOntology& ontology);
Guidance generate(const CaptionerParams& params, const Eigen::VectorXd& x, const FindingOntology& ontology,
                  const Sampling& sampling);

struct LossAndGrad {
    double loss = 0;
    CaptionerParams grad;
};

// Sum over slots of -log softmax(u_k)[target_k], with exact gradients.
LossAndGrad nll_loss(const CaptionerParams& params, const Eigen::VectorXd& x, std::span<const int> target);

// Accumulates into `grad` the encoder gradient implied by dL/dz at input x.
void backprop_encoder(const CaptionerParams& params, const Eigen::VectorXd& x, const Eigen::VectorXd& z,
                      const Eigen::VectorXd& dz, CaptionerParams& grad);

struct TrainExample {
    Eigen::VectorXd x;
    std::vector<int> target;
};

/// Supervised caption targets for a scan: Present -> PRESENT, Ambiguous -> UNCERTAIN,
/// Absent -> ABSENT when the reference report mentions it and OMIT otherwise.
std::vector<int> pretraining_targets(const Scan& scan, const FindingOntology& ontology);
std::vector<TrainExample> training_examples(const Dataset& dataset, Split split, const FindingOntology& ontology);

// Mean NLL and its gradient over a set of examples.
LossAndGrad mean_nll(const CaptionerParams& params, std::span<const TrainExample> examples);

struct PretrainOptions {
    int epochs = 400;
    double learning_rate = 0.5;
    double init_scale = 0.1;
    std::uint64_t seed = 0;
};

// Full-batch gradient descent on mean NLL from a random init.
CaptionerParams pretrain(const CaptionerDims& dims, std::span<const TrainExample> examples,
                         const PretrainOptions& options);

struct Checkpoint {
    CaptionerParams params;
    int round = 0;
};

// Writes via a temporary file and rename. Doubles are emitted with round-trip precision.
void save_checkpoint(const CaptionerParams& params, int round, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Also rejects checkpoints whose slot count differs from the ontology.
Checkpoint load_checkpoint(const std::filesystem::path& path, const FindingOntology& ontology);

}  // namespace slog
