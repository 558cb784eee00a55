#include "slog/core_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "slog/errors.hpp"
#include "slog/rng.hpp"

namespace slog {

using nlohmann::json;

FindingState finding_from_int(int v) {
    switch (v) {
        case -1: return FindingState::Absent;
        case 0: return FindingState::Missing;
        case 1: return FindingState::Present;
        default: throw ContractViolation("finding state must be -1, 0 or 1");
    }
}

std::string_view to_string(Split s) noexcept {
    switch (s) {
        case Split::Train: return "train";
        case Split::Validation: return "validation";
        case Split::Finetune: return "finetune";
        case Split::Test: return "test";
    }
    return "train";
}

Split parse_split(std::string_view name) {
    for (auto s : kAllSplits)
        if (to_string(s) == name) return s;
    throw ConfigError("unknown split '" + std::string(name) + "'");
}

void FindingOntology::validate() const {
    if (labels.empty()) throw ConfigError("ontology has no labels");
    if (keywords.size() != labels.size()) throw ConfigError("ontology keyword table does not match labels");
    std::set<std::string> seen;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (!seen.insert(labels[i]).second) throw ConfigError("duplicate ontology label '" + labels[i] + "'");
        if (keywords[i].empty()) throw ConfigError("label '" + labels[i] + "' has no keywords");
    }
}

std::optional<std::size_t> FindingOntology::index_of(std::string_view label) const {
    auto it = std::find(labels.begin(), labels.end(), label);
    if (it == labels.end()) return std::nullopt;
    return static_cast<std::size_t>(it - labels.begin());
}

const FindingOntology& default_ontology() {
    static const FindingOntology ontology{
        {"atelectasis", "cardiomegaly", "consolidation", "edema", "pleural effusion", "pneumonia", "pneumothorax",
         "fracture"},
        {{"atelectasis"},
         {"cardiomegaly"},
         {"consolidation"},
         {"edema"},
         {"pleural effusion", "effusion"},
         {"pneumonia"},
         {"pneumothorax"},
         {"fracture"}},
        {"no", "without", "negative for", "free of", "absence of"},
        {"possible", "possibly", "may", "cannot exclude", "suspected", "equivocal"},
    };
    return ontology;
}

FindingOntology load_ontology(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open ontology file " + path.string());
    FindingOntology o;
    try {
        json j = json::parse(in);
        o.labels = j.at("labels").get<std::vector<std::string>>();
        const auto& kw = j.at("keywords");
        for (const auto& label : o.labels) {
            if (!kw.contains(label)) throw ConfigError("no keywords for label '" + label + "'");
            o.keywords.push_back(kw.at(label).get<std::vector<std::string>>());
        }
        o.negation_cues = j.at("negation_cues").get<std::vector<std::string>>();
        o.uncertainty_cues = j.at("uncertainty_cues").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw ConfigError("invalid ontology file: " + std::string(e.what()));
    }
    o.validate();
    return o;
}

bool Scan::operator==(const Scan& other) const {
    return id == other.id && x.size() == other.x.size() && x == other.x && findings == other.findings &&
           report == other.report && split == other.split;
}

std::vector<const Scan*> Dataset::in_split(Split s) const {
    std::vector<const Scan*> out;
    for (const auto& scan : scans)
        if (scan.split == s) out.push_back(&scan);
    return out;
}

const Scan& Dataset::by_id(std::string_view id) const {
    for (const auto& scan : scans)
        if (scan.id == id) return scan;
    throw NotFound("no scan with id '" + std::string(id) + "'");
}

void GeneratorConfig::validate() const {
    if (n < 0) throw ConfigError("n must be non-negative");
    if (L < 1) throw ConfigError("L must be at least 1");
    if (d < L) throw ConfigError("d must be >= L");
    if (noise_std < 0) throw ConfigError("noise_std must be non-negative");
    for (double p : {p_present, p_absent, p_ambiguous})
        if (p < 0) throw ConfigError("finding probabilities must be non-negative");
    if (std::abs(p_present + p_absent + p_ambiguous - 1.0) > 1e-9)
        throw ConfigError("finding probabilities must sum to 1");
    double total = 0;
    for (double p : split_proportions) {
        if (p < 0) throw ConfigError("split proportions must be non-negative");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split proportions must sum to 1");
    if (absent_mention_prob < 0 || absent_mention_prob > 1) throw ConfigError("absent_mention_prob must be in [0,1]");
}

GeneratorConfig load_generator_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open generator config " + path.string());
    GeneratorConfig c;
    try {
        json j = json::parse(in);
        c.n = j.value("n", c.n);
        c.d = j.value("d", c.d);
        c.L = j.value("L", c.L);
        c.p_present = j.value("p_present", c.p_present);
        c.p_absent = j.value("p_absent", c.p_absent);
        c.p_ambiguous = j.value("p_ambiguous", c.p_ambiguous);
        c.noise_std = j.value("noise_std", c.noise_std);
        c.absent_mention_prob = j.value("absent_mention_prob", c.absent_mention_prob);
        c.seed = j.value("seed", c.seed);
        if (j.contains("split_proportions")) {
            const auto& sp = j.at("split_proportions");
            if (sp.is_object()) {
                for (auto s : kAllSplits)
                    c.split_proportions[static_cast<int>(s)] = sp.value(std::string(to_string(s)), 0.0);
            } else {
                auto v = sp.get<std::vector<double>>();
                if (v.size() != 4) throw ConfigError("split_proportions needs 4 entries");
                std::copy(v.begin(), v.end(), c.split_proportions.begin());
            }
        }
    } catch (const json::exception& e) {
        throw ConfigError("invalid generator config: " + std::string(e.what()));
    }
    c.validate();
    return c;
}

std::string generator_config_json(const GeneratorConfig& c) {
    json sp = json::object();
    for (auto s : kAllSplits) sp[std::string(to_string(s))] = c.split_proportions[static_cast<int>(s)];
    json j = {{"n", c.n},
              {"d", c.d},
              {"L", c.L},
              {"p_present", c.p_present},
              {"p_absent", c.p_absent},
              {"p_ambiguous", c.p_ambiguous},
              {"noise_std", c.noise_std},
              {"absent_mention_prob", c.absent_mention_prob},
              {"split_proportions", sp},
              {"seed", c.seed}};
    return j.dump(2);
}

std::array<int, 4> split_counts(int n, const std::array<double, 4>& proportions) {
    std::array<int, 4> counts{};
    std::array<double, 4> remainder{};
    int assigned = 0;
    for (int i = 0; i < 4; ++i) {
        double exact = proportions[i] * n;
        counts[i] = static_cast<int>(std::floor(exact));
        remainder[i] = exact - counts[i];
        assigned += counts[i];
    }
    std::array<int, 4> order{0, 1, 2, 3};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return remainder[a] > remainder[b]; });
    for (int k = 0; assigned < n; ++k, ++assigned) ++counts[order[k % 4]];
    return counts;
}

Eigen::MatrixXd mixing_matrix(int d, int L, std::uint64_t seed) {
    Rng rng(derive_seed(seed, {1}));
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd a(d, L);
    for (int j = 0; j < L; ++j)
        for (int i = 0; i < d; ++i) a(i, j) = normal(rng);
    return a;
}

Eigen::VectorXd encode_findings(const std::vector<FindingState>& findings) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(findings.size()));
    for (std::size_t k = 0; k < findings.size(); ++k) v(static_cast<Eigen::Index>(k)) = value_of(findings[k]);
    return v;
}

namespace {

constexpr std::array<const char*, 3> kPresentTemplates{"there is {}.", "findings consistent with {}.",
                                                       "{} is present."};
constexpr std::array<const char*, 3> kAbsentTemplates{"no {}.", "no evidence of {}.", "negative for {}."};
constexpr std::array<const char*, 3> kUncertainTemplates{"possible {}.", "cannot exclude {}.", "suspected {}."};

std::string fill(const char* tmpl, const std::string& label) {
    std::string out(tmpl);
    out.replace(out.find("{}"), 2, label);
    return out;
}

}  // namespace

std::string render_report(const std::vector<FindingState>& findings, const std::vector<bool>& mention_absent,
                          const std::vector<int>& variant, const FindingOntology& ontology) {
    require(findings.size() == ontology.size(), "findings length must equal ontology size");
    std::string out;
    for (std::size_t k = 0; k < findings.size(); ++k) {
        const char* tmpl = nullptr;
        int v = variant.empty() ? 0 : variant[k] % 3;
        switch (findings[k]) {
            case FindingState::Present: tmpl = kPresentTemplates[v]; break;
            case FindingState::Absent:
                if (mention_absent.empty() || mention_absent[k]) tmpl = kAbsentTemplates[v];
                break;
            case FindingState::Missing: tmpl = kUncertainTemplates[v]; break;
        }
        if (!tmpl) continue;
        if (!out.empty()) out += ' ';
        out += fill(tmpl, ontology.labels[k]);
    }
    if (out.empty()) out = "no acute cardiopulmonary abnormality.";
    return out;
}

Dataset generate_dataset(const GeneratorConfig& config, std::uint64_t seed) {
    config.validate();
    const auto& ontology = default_ontology();
    if (static_cast<std::size_t>(config.L) != ontology.size())
        throw ConfigError("L must equal the ontology size (" + std::to_string(ontology.size()) + ")");

    const Eigen::MatrixXd a = mixing_matrix(config.d, config.L, seed);
    const auto counts = split_counts(config.n, config.split_proportions);

    std::vector<Split> splits;
    splits.reserve(config.n);
    for (int s = 0; s < 4; ++s) splits.insert(splits.end(), counts[s], kAllSplits[s]);
    Rng split_rng(derive_seed(seed, {3}));
    std::shuffle(splits.begin(), splits.end(), split_rng);

    Dataset ds;
    ds.scans.reserve(config.n);
    for (int i = 0; i < config.n; ++i) {
        Rng rng(derive_seed(seed, {2, static_cast<std::uint64_t>(i)}));
        std::normal_distribution<double> noise(0.0, 1.0);
        Scan scan;
        char id[32];
        std::snprintf(id, sizeof id, "scan-%05d", i);
        scan.id = id;
        scan.split = splits[i];

        std::vector<bool> mention(config.L);
        std::vector<int> variant(config.L);
        scan.findings.resize(config.L);
        for (int k = 0; k < config.L; ++k) {
            double u = uniform01(rng);
            if (u < config.p_present)
                scan.findings[k] = FindingState::Present;
            else if (u < config.p_present + config.p_absent)
                scan.findings[k] = FindingState::Absent;
            else
                scan.findings[k] = kAmbiguous;
            mention[k] = uniform01(rng) < config.absent_mention_prob;
            variant[k] = static_cast<int>(rng() % 3);
        }
        scan.x = a * encode_findings(scan.findings);
        if (config.noise_std > 0)
            for (int j = 0; j < config.d; ++j) scan.x(j) += config.noise_std * noise(rng);
        scan.report = render_report(scan.findings, mention, variant, ontology);
        ds.scans.push_back(std::move(scan));
    }
    ds.config_hash = dataset_fingerprint(ds);
    return ds;
}

Dataset generate_dataset(const GeneratorConfig& config) { return generate_dataset(config, config.seed); }

namespace {

json scan_to_json(const Scan& s) {
    std::vector<int> f;
    f.reserve(s.findings.size());
    for (auto v : s.findings) f.push_back(value_of(v));
    return json{{"id", s.id},
                {"x", std::vector<double>(s.x.data(), s.x.data() + s.x.size())},
                {"findings", f},
                {"report", s.report},
                {"split", std::string(to_string(s.split))}};
}

Scan scan_from_json(const json& j) {
    Scan s;
    s.id = j.at("id").get<std::string>();
    auto x = j.at("x").get<std::vector<double>>();
    s.x = Eigen::Map<Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    for (int v : j.at("findings").get<std::vector<int>>()) s.findings.push_back(finding_from_int(v));
    s.report = j.at("report").get<std::string>();
    s.split = parse_split(j.at("split").get<std::string>());
    return s;
}

std::uint64_t fnv1a(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write dataset to " + path.string());
    for (const auto& scan : dataset.scans) out << scan_to_json(scan).dump() << '\n';
    if (!out) throw Error("failed writing dataset to " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open dataset file " + path.string(), 0);
    Dataset ds;
    std::set<std::string> ids;
    std::string line;
    std::size_t lineno = 0;
    std::optional<Eigen::Index> d;
    std::optional<std::size_t> L;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        Scan scan;
        try {
            scan = scan_from_json(json::parse(line));
        } catch (const json::exception& e) {
            throw ParseError(e.what(), lineno);
        } catch (const std::exception& e) {
            throw ParseError(e.what(), lineno);
        }
        if (!d) d = scan.x.size();
        if (!L) L = scan.findings.size();
        if (scan.x.size() != *d) throw ParseError("feature vector length differs from earlier records", lineno);
        if (scan.findings.size() != *L) throw ParseError("findings length differs from earlier records", lineno);
        if (!ids.insert(scan.id).second) throw ParseError("duplicate scan id '" + scan.id + "'", lineno);
        ds.scans.push_back(std::move(scan));
    }
    ds.config_hash = dataset_fingerprint(ds);
    return ds;
}

std::string dataset_fingerprint(const Dataset& dataset) {
    std::uint64_t h = fnv1a("");
    for (const auto& scan : dataset.scans) {
        h = fnv1a(scan_to_json(scan).dump(), h);
        h = fnv1a("\n", h);
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string fnv1a_hex(std::string_view data) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(data)));
    return buf;
}

std::map<Split, std::size_t> split_sizes(const Dataset& dataset) {
    std::map<Split, std::size_t> out;
    for (auto s : kAllSplits) out[s] = 0;
    for (const auto& scan : dataset.scans) ++out[scan.split];
    return out;
}

}  // namespace slog
