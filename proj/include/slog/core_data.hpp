#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace slog {

enum class FindingState : std::int8_t { Absent = -1, Missing = 0, Present = 1 };

// Ambiguous mentions and missing information share the value 0.
inline constexpr FindingState kAmbiguous = FindingState::Missing;

constexpr int value_of(FindingState s) noexcept { return static_cast<int>(s); }
FindingState finding_from_int(int v);

enum class Split { Train, Validation, Finetune, Test };
inline constexpr std::array<Split, 4> kAllSplits{Split::Train, Split::Validation, Split::Finetune, Split::Test};

std::string_view to_string(Split s) noexcept;
Split parse_split(std::string_view name);

struct FindingOntology {
    std::vector<std::string> labels;
    std::vector<std::vector<std::string>> keywords;  // parallel to labels
    std::vector<std::string> negation_cues;
    std::vector<std::string> uncertainty_cues;

    [[nodiscard]] std::size_t size() const noexcept { return labels.size(); }
    // Throws ConfigError when empty, names repeat, or any keyword list is empty.
    void validate() const;
    [[nodiscard]] std::optional<std::size_t> index_of(std::string_view label) const;
};

// The eight-finding desk ontology with the default cue lists.
const FindingOntology& default_ontology();
FindingOntology load_ontology(const std::filesystem::path& path);

struct Scan {
    std::string id;
    Eigen::VectorXd x;
    std::vector<FindingState> findings;
    std::string report;
    Split split = Split::Train;

    bool operator==(const Scan& other) const;
};

struct Dataset {
    std::vector<Scan> scans;
    std::string config_hash;

    [[nodiscard]] std::vector<const Scan*> in_split(Split s) const;
    [[nodiscard]] const Scan& by_id(std::string_view id) const;
    bool operator==(const Dataset& other) const { return scans == other.scans; }
};

struct GeneratorConfig {
    int n = 1200;
    int d = 16;
    int L = 8;
    double p_present = 0.25;
    double p_absent = 0.60;
    double p_ambiguous = 0.15;
    double noise_std = 0.3;
    // train, validation, finetune, test
    std::array<double, 4> split_proportions{0.583, 0.167, 0.083, 0.167};
    double absent_mention_prob = 0.5;
    std::uint64_t seed = 7;

    void validate() const;
};

GeneratorConfig load_generator_config(const std::filesystem::path& path);
std::string generator_config_json(const GeneratorConfig& cfg);

// Split counts from proportions by largest remainder; ties go to the earlier split.
std::array<int, 4> split_counts(int n, const std::array<double, 4>& proportions);

// The fixed d x L mixing matrix A for a given (d, L, seed).
Eigen::MatrixXd mixing_matrix(int d, int L, std::uint64_t seed);
Eigen::VectorXd encode_findings(const std::vector<FindingState>& findings);

Dataset generate_dataset(const GeneratorConfig& config, std::uint64_t seed);
Dataset generate_dataset(const GeneratorConfig& config);

// Renders a reference report from findings. `mention_absent[k]` decides whether an
// Absent finding is written out; `variant` picks among equivalent phrasings.
std::string render_report(const std::vector<FindingState>& findings, const std::vector<bool>& mention_absent,
                          const std::vector<int>& variant, const FindingOntology& ontology);

void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

// FNV-1a over the canonical JSONL serialization.
std::string dataset_fingerprint(const Dataset& dataset);
// 64-bit FNV-1a of `data` as 16 hex digits.
std::string fnv1a_hex(std::string_view data);

std::map<Split, std::size_t> split_sizes(const Dataset& dataset);

}  // namespace slog
