#include "slog/captioner.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

#include "slog/errors.hpp"
#include "slog/report_labeler.hpp"
#include "slog/rng.hpp"

namespace slog {

using nlohmann::json;

CaptionerParams CaptionerParams::zeros(const CaptionerDims& dims) {
    if (dims.d < 1 || dims.m < 1 || dims.K < 1 || dims.V != kVocabSize)
        throw ConfigError("invalid captioner dimensions");
    CaptionerParams p;
    p.dims = dims;
    p.encoder_weight = Eigen::MatrixXd::Zero(dims.m, dims.d);
    p.encoder_bias = Eigen::VectorXd::Zero(dims.m);
    p.slot_weights.assign(dims.K, Eigen::MatrixXd::Zero(dims.V, dims.m));
    p.slot_biases.assign(dims.K, Eigen::VectorXd::Zero(dims.V));
    return p;
}

CaptionerParams CaptionerParams::random(const CaptionerDims& dims, std::uint64_t seed, double scale) {
    CaptionerParams p = zeros(dims);
    Rng rng(derive_seed(seed, {0xca97}));
    std::normal_distribution<double> normal(0.0, scale);
    Eigen::VectorXd flat(p.parameter_count());
    for (Eigen::Index i = 0; i < flat.size(); ++i) flat(i) = normal(rng);
    p.assign(flat);
    return p;
}

void CaptionerParams::check() const {
    const bool ok = encoder_weight.rows() == dims.m && encoder_weight.cols() == dims.d &&
                    encoder_bias.size() == dims.m && static_cast<int>(slot_weights.size()) == dims.K &&
                    static_cast<int>(slot_biases.size()) == dims.K && dims.V == kVocabSize;
    if (!ok) throw ContractViolation("captioner parameter shapes do not match dims");
    for (int k = 0; k < dims.K; ++k)
        if (slot_weights[k].rows() != dims.V || slot_weights[k].cols() != dims.m || slot_biases[k].size() != dims.V)
            throw ContractViolation("captioner slot parameter shapes do not match dims");
}

Eigen::Index CaptionerParams::parameter_count() const {
    return static_cast<Eigen::Index>(dims.m) * dims.d + dims.m +
           static_cast<Eigen::Index>(dims.K) * (dims.V * dims.m + dims.V);
}

Eigen::VectorXd CaptionerParams::flatten() const {
    Eigen::VectorXd flat(parameter_count());
    Eigen::Index off = 0;
    auto put = [&](const auto& block) {
        flat.segment(off, block.size()) = block.reshaped();
        off += block.size();
    };
    put(encoder_weight);
    put(encoder_bias);
    for (int k = 0; k < dims.K; ++k) {
        put(slot_weights[k]);
        put(slot_biases[k]);
    }
    return flat;
}

void CaptionerParams::assign(const Eigen::VectorXd& flat) {
    require(flat.size() == parameter_count(), "flat parameter vector has the wrong length");
    Eigen::Index off = 0;
    auto take = [&](auto& block) {
        block.reshaped() = flat.segment(off, block.size());
        off += block.size();
    };
    take(encoder_weight);
    take(encoder_bias);
    for (int k = 0; k < dims.K; ++k) {
        take(slot_weights[k]);
        take(slot_biases[k]);
    }
}

void CaptionerParams::axpy(double alpha, const CaptionerParams& other) {
    require(dims == other.dims, "axpy: dimension mismatch");
    encoder_weight += alpha * other.encoder_weight;
    encoder_bias += alpha * other.encoder_bias;
    for (int k = 0; k < dims.K; ++k) {
        slot_weights[k] += alpha * other.slot_weights[k];
        slot_biases[k] += alpha * other.slot_biases[k];
    }
}

bool CaptionerParams::all_finite() const { return flatten().allFinite(); }

bool CaptionerParams::operator==(const CaptionerParams& other) const {
    return dims == other.dims && flatten() == other.flatten();
}

Eigen::VectorXd encode(const CaptionerParams& params, const Eigen::VectorXd& x) {
    require(x.size() == params.dims.d, "encode: feature vector length must equal d");
    return (params.encoder_weight * x + params.encoder_bias).array().tanh().matrix();
}

Eigen::VectorXd slot_logits(const CaptionerParams& params, const Eigen::VectorXd& z, int slot) {
    require(z.size() == params.dims.m, "embedding length must equal m");
    return params.slot_weights[slot] * z + params.slot_biases[slot];
}

namespace {

Eigen::VectorXd softmax(const Eigen::VectorXd& u) {
    Eigen::VectorXd e = (u.array() - u.maxCoeff()).exp().matrix();
    return e / e.sum();
}

double log_sum_exp(const Eigen::VectorXd& u) {
    const double mx = u.maxCoeff();
    return mx + std::log((u.array() - mx).exp().sum());
}

}  // namespace

std::vector<int> decode(const CaptionerParams& params, const Eigen::VectorXd& z) {
    std::vector<int> tokens(params.dims.K);
    for (int k = 0; k < params.dims.K; ++k) {
        Eigen::Index best = 0;
        slot_logits(params, z, k).maxCoeff(&best);  // first maximum wins
        tokens[k] = static_cast<int>(best);
    }
    return tokens;
}

std::vector<int> decode(const CaptionerParams& params, const Eigen::VectorXd& z, const Sampling& sampling) {
    if (!(sampling.temperature > 0)) throw ConfigError("sampling temperature must be positive");
    Rng rng(sampling.seed);
    std::vector<int> tokens(params.dims.K);
    for (int k = 0; k < params.dims.K; ++k) {
        const Eigen::VectorXd p = softmax(slot_logits(params, z, k) / sampling.temperature);
        const double u = uniform01(rng);
        double cum = 0;
        int pick = params.dims.V - 1;
        for (int v = 0; v < params.dims.V; ++v) {
            cum += p(v);
            if (u < cum) {
                pick = v;
                break;
            }
        }
        tokens[k] = pick;
    }
    return tokens;
}

std::string render(std::span<const int> tokens, const FindingOntology& ontology) {
    require(tokens.size() == ontology.size(), "render: one token per ontology label expected");
    std::string out;
    for (std::size_t k = 0; k < tokens.size(); ++k) {
        const char* prefix = nullptr;
        switch (tokens[k]) {
            case kPresent: prefix = "there is "; break;
            case kAbsent: prefix = "no "; break;
            case kUncertain: prefix = "possible "; break;
            case kOmit: break;
            default: throw ContractViolation("render: token id out of range");
        }
        if (!prefix) continue;
        if (!out.empty()) out += ' ';
        out += prefix;
        out += ontology.labels[k];
        out += '.';
    }
    return out;
}

Guidance generate(const CaptionerParams& params, const Eigen::VectorXd& x, const FindingOntology& ontology) {
    Guidance g;
    g.z = encode(params, x);
    g.tokens = decode(params, g.z);
    g.text = render(g.tokens, ontology);
    return g;
}

Guidance generate(const CaptionerParams& params, const Eigen::VectorXd& x, const FindingOntology& ontology,
                  const Sampling& sampling) {
    Guidance g;
    g.z = encode(params, x);
    g.tokens = decode(params, g.z, sampling);
    g.text = render(g.tokens, ontology);
    return g;
}

void backprop_encoder(const CaptionerParams& /*params*/, const Eigen::VectorXd& x, const Eigen::VectorXd& z,
                      const Eigen::VectorXd& dz, CaptionerParams& grad) {
    const Eigen::VectorXd da = (dz.array() * (1.0 - z.array().square())).matrix();
    grad.encoder_weight.noalias() += da * x.transpose();
    grad.encoder_bias += da;
}

LossAndGrad nll_loss(const CaptionerParams& params, const Eigen::VectorXd& x, std::span<const int> target) {
    require(static_cast<int>(target.size()) == params.dims.K, "nll_loss: one target token per slot expected");
    LossAndGrad out{0.0, CaptionerParams::zeros(params.dims)};
    const Eigen::VectorXd z = encode(params, x);
    Eigen::VectorXd dz = Eigen::VectorXd::Zero(params.dims.m);
    for (int k = 0; k < params.dims.K; ++k) {
        require(target[k] >= 0 && target[k] < params.dims.V, "nll_loss: target token out of range");
        const Eigen::VectorXd u = slot_logits(params, z, k);
        out.loss += log_sum_exp(u) - u(target[k]);
        Eigen::VectorXd delta = softmax(u);
        delta(target[k]) -= 1.0;
        out.grad.slot_weights[k].noalias() += delta * z.transpose();
        out.grad.slot_biases[k] += delta;
        dz.noalias() += params.slot_weights[k].transpose() * delta;
    }
    backprop_encoder(params, x, z, dz, out.grad);
    return out;
}

std::vector<int> pretraining_targets(const Scan& scan, const FindingOntology& ontology) {
    require(scan.findings.size() == ontology.size(), "scan findings must match ontology size");
    const LabelResult mentions = label_text(scan.report, ontology);
    std::vector<int> target(scan.findings.size());
    for (std::size_t k = 0; k < target.size(); ++k) {
        switch (scan.findings[k]) {
            case FindingState::Present: target[k] = kPresent; break;
            case FindingState::Missing: target[k] = kUncertain; break;
            case FindingState::Absent: target[k] = mentions.mentioned(k) ? kAbsent : kOmit; break;
        }
    }
    return target;
}

std::vector<TrainExample> training_examples(const Dataset& dataset, Split split, const FindingOntology& ontology) {
    std::vector<TrainExample> out;
    for (const Scan* scan : dataset.in_split(split)) out.push_back({scan->x, pretraining_targets(*scan, ontology)});
    return out;
}

LossAndGrad mean_nll(const CaptionerParams& params, std::span<const TrainExample> examples) {
    LossAndGrad total{0.0, CaptionerParams::zeros(params.dims)};
    if (examples.empty()) return total;
    for (const auto& ex : examples) {
        auto one = nll_loss(params, ex.x, ex.target);
        total.loss += one.loss;
        total.grad.axpy(1.0, one.grad);
    }
    const double inv = 1.0 / static_cast<double>(examples.size());
    total.loss *= inv;
    auto zero = CaptionerParams::zeros(params.dims);
    zero.axpy(inv, total.grad);
    total.grad = std::move(zero);
    return total;
}

CaptionerParams pretrain(const CaptionerDims& dims, std::span<const TrainExample> examples,
                         const PretrainOptions& options) {
    if (options.epochs < 0 || !(options.learning_rate > 0)) throw ConfigError("invalid pretraining options");
    CaptionerParams params = CaptionerParams::random(dims, options.seed, options.init_scale);
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        auto step = mean_nll(params, examples);
        params.axpy(-options.learning_rate, step.grad);
    }
    return params;
}

namespace {

json matrix_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::MatrixXd matrix_from(const json& j, int rows, int cols) {
    if (!j.is_array() || static_cast<int>(j.size()) != rows) throw ParseError("matrix row count mismatch", 0);
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        auto row = j[i].get<std::vector<double>>();
        if (static_cast<int>(row.size()) != cols) throw ParseError("matrix column count mismatch", 0);
        for (int c = 0; c < cols; ++c) m(i, c) = row[c];
    }
    return m;
}

Eigen::VectorXd vector_from(const json& j, int size) {
    auto v = j.get<std::vector<double>>();
    if (static_cast<int>(v.size()) != size) throw ParseError("vector length mismatch", 0);
    return Eigen::Map<Eigen::VectorXd>(v.data(), size);
}

}  // namespace

void save_checkpoint(const CaptionerParams& params, int round, const std::filesystem::path& path) {
    params.check();
    json w_k = json::array(), b_k = json::array();
    for (int k = 0; k < params.dims.K; ++k) {
        w_k.push_back(matrix_json(params.slot_weights[k]));
        b_k.push_back(vector_json(params.slot_biases[k]));
    }
    json j = {{"dims", {{"d", params.dims.d}, {"m", params.dims.m}, {"K", params.dims.K}, {"V", params.dims.V}}},
              {"W_e", matrix_json(params.encoder_weight)},
              {"b_e", vector_json(params.encoder_bias)},
              {"W_k", w_k},
              {"b_k", b_k},
              {"round", round}};
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write checkpoint " + tmp.string());
        out << j.dump() << '\n';
        if (!out) throw Error("failed writing checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open checkpoint " + path.string(), 0);
    try {
        json j = json::parse(in);
        CaptionerDims dims{j.at("dims").at("d").get<int>(), j.at("dims").at("m").get<int>(),
                           j.at("dims").at("K").get<int>(), j.at("dims").at("V").get<int>()};
        if (dims.V != kVocabSize) throw ParseError("checkpoint vocabulary size must be 4", 0);
        Checkpoint cp{CaptionerParams::zeros(dims), j.value("round", 0)};
        auto& p = cp.params;
        p.encoder_weight = matrix_from(j.at("W_e"), dims.m, dims.d);
        p.encoder_bias = vector_from(j.at("b_e"), dims.m);
        const auto& w_k = j.at("W_k");
        const auto& b_k = j.at("b_k");
        if (static_cast<int>(w_k.size()) != dims.K || static_cast<int>(b_k.size()) != dims.K)
            throw ParseError("checkpoint slot count does not match dims.K", 0);
        for (int k = 0; k < dims.K; ++k) {
            p.slot_weights[k] = matrix_from(w_k[k], dims.V, dims.m);
            p.slot_biases[k] = vector_from(b_k[k], dims.V);
        }
        return cp;
    } catch (const json::exception& e) {
        throw ParseError("invalid checkpoint " + path.string() + ": " + e.what(), 0);
    } catch (const ConfigError& e) {
        throw ParseError("invalid checkpoint " + path.string() + ": " + e.what(), 0);
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const FindingOntology& ontology) {
    auto cp = load_checkpoint(path);
    if (static_cast<std::size_t>(cp.params.dims.K) != ontology.size())
        throw ParseError("checkpoint has " + std::to_string(cp.params.dims.K) + " slots but the ontology has " +
                             std::to_string(ontology.size()) + " labels",
                         0);
    return cp;
}

}  // namespace slog
