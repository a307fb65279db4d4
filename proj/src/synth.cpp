#include "kgdg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "kgdg/parallel.hpp"
#include "kgdg/rules.hpp"
#include "kgdg/util.hpp"

namespace kgdg::synth {

using nlohmann::json;

namespace {

// Vein features move linearly with an underlying severity score u (grade units).
struct VeinLine {
    double base;
    double slope;
    double lo;
    double hi;
};
constexpr std::array<VeinLine, 3> kVeinLines = {{
    {1.10, 0.08, 0.0, 1e9},  // tortuosity
    {0.12, 0.01, 0.0, 1e9},  // caliber
    {70.0, 4.0, 0.0, 180.0},  // branch angle
}};

[[noreturn]] void bad(const std::string& domain, const std::string& what) {
    throw Error(ErrorCode::InvalidConfig, "synth domain '" + domain + "': " + what);
}

bool in_unit(double v) { return v >= 0.0 && v <= 1.0; }

int sample_grade(Rng& rng, const std::array<double, kNumGrades>& prior) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (int g = 0; g < kNumGrades; ++g) {
        acc += prior[static_cast<std::size_t>(g)];
        if (u < acc) return g;
    }
    for (int g = kNumGrades - 1; g >= 0; --g)
        if (prior[static_cast<std::size_t>(g)] > 0.0) return g;
    return 0;
}

Detection random_detection(Rng& rng, LesionType type) {
    Detection d;
    d.lesion = type;
    d.box.w = rng.uniform(0.01, 0.06);
    d.box.h = rng.uniform(0.01, 0.06);
    d.box.x = rng.uniform(0.0, 1.0 - d.box.w);
    d.box.y = rng.uniform(0.0, 1.0 - d.box.h);
    d.score = rng.uniform(0.5, 1.0);
    return d;
}

std::string image_id(const DomainId& domain, std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%06zu", i);
    return domain.str() + "-" + buf;
}

const DomainId& neural_home(const SynthConfig& cfg) {
    return cfg.neural_source ? *cfg.neural_source : cfg.domains.front().name;
}

DomainData gen_domain(const SynthConfig& cfg, const DomainSpec& spec) {
    DomainData out;
    out.name = spec.name;
    Rng rng(derive_seed(cfg.seed, "features/" + spec.name.str()));

    std::array<double, 3> offset{};
    {
        Rng off(derive_seed(cfg.seed, "vein-offset/" + spec.name.str()));
        for (double& o : offset) o = spec.vein_noise_sigma * off.normal();
    }

    out.examples.reserve(static_cast<std::size_t>(spec.n_samples));
    for (std::size_t i = 0; i < static_cast<std::size_t>(spec.n_samples); ++i) {
        const int g = sample_grade(rng, spec.grade_prior);
        std::vector<Detection> dets;
        for (std::size_t l = 0; l < kCountedLesions.size(); ++l) {
            const double rate = spec.count_rate_matrix[static_cast<std::size_t>(g)][l] * spec.count_bias[l];
            const std::int64_t count = rng.poisson(rate);
            for (std::int64_t c = 0; c < count; ++c) dets.push_back(random_detection(rng, kCountedLesions[l]));
        }
        if (g == kNumGrades - 1) {
            if (rng.bernoulli(spec.p_subhyaloid)) dets.push_back(random_detection(rng, LesionType::SubhyaloidHemorrhage));
            if (rng.bernoulli(spec.p_neovascularization))
                dets.push_back(random_detection(rng, LesionType::Neovascularization));
        }

        LabeledExample ex;
        ex.image_id = image_id(spec.name, i);
        ex.domain = spec.name;
        ex.grade = Grade(g);
        ex.features = rules::aggregate_detections(dets, 0.0);
        std::array<double, 3> vein{};
        for (std::size_t j = 0; j < 3; ++j) {
            const double u = g + offset[j] + spec.vein_jitter * rng.normal();
            const VeinLine& line = kVeinLines[j];
            vein[j] = std::clamp(line.base + line.slope * u, line.lo, line.hi);
        }
        ex.features.vein = VeinFeatures{vein[0], vein[1], vein[2]};
        out.detections.emplace(ex.image_id, std::move(dets));
        out.examples.push_back(std::move(ex));
    }

    out.probabilities = gen_neural_probabilities(cfg, spec, out.examples);
    for (auto& ex : out.examples) ex.neural_probs = out.probabilities.at(ex.image_id);
    return out;
}

}  // namespace

void DomainSpec::validate() const {
    const std::string n = name.str();
    if (n.empty()) throw Error(ErrorCode::InvalidConfig, "synth domain needs a name");
    if (n_samples < 1) bad(n, "n_samples must be >= 1");
    double sum = 0.0;
    for (double p : grade_prior) {
        if (!(p >= 0.0)) bad(n, "grade_prior entries must be >= 0");
        sum += p;
    }
    if (std::abs(sum - 1.0) > kProbabilitySumTolerance) bad(n, "grade_prior must sum to 1");
    for (std::size_t l = 0; l < 5; ++l) {
        if (!(count_bias[l] >= 0.0)) bad(n, "count_bias must be >= 0");
        for (std::size_t g = 0; g < kNumGrades; ++g) {
            if (!(count_rate_matrix[g][l] >= 0.0)) bad(n, "rates must be >= 0");
            if (g > 0 && count_rate_matrix[g][l] < count_rate_matrix[g - 1][l])
                bad(n, "rates must be non-decreasing in grade");
        }
    }
    if (!(vein_noise_sigma >= 0.0) || !(vein_jitter >= 0.0)) bad(n, "vein noise must be >= 0");
    if (!in_unit(neural_in_domain_accuracy) || !in_unit(neural_ood_accuracy))
        bad(n, "neural accuracies must be in [0,1]");
    if (!(neural_temperature > 0.0)) bad(n, "neural_temperature must be > 0");
    if (!in_unit(p_neovascularization) || !in_unit(p_subhyaloid)) bad(n, "flag probabilities must be in [0,1]");
}

void SynthConfig::validate() const {
    if (domains.empty()) throw Error(ErrorCode::InvalidConfig, "synth config lists no domains");
    std::vector<DomainId> names;
    for (const auto& d : domains) {
        d.validate();
        if (std::find(names.begin(), names.end(), d.name) != names.end())
            throw Error(ErrorCode::InvalidConfig, "duplicate synth domain '" + d.name.str() + "'");
        names.push_back(d.name);
    }
    if (neural_source && std::find(names.begin(), names.end(), *neural_source) == names.end())
        throw Error(ErrorCode::InvalidConfig, "neural_source '" + neural_source->str() + "' is not a domain");
    if (!(neural_calibration >= 0.0)) throw Error(ErrorCode::InvalidConfig, "neural_calibration must be >= 0");
}

json SynthConfig::to_json() const {
    json doms = json::array();
    for (const auto& d : domains)
        doms.push_back({{"name", d.name.str()},
                        {"n_samples", d.n_samples},
                        {"grade_prior", d.grade_prior},
                        {"count_rate_matrix", d.count_rate_matrix},
                        {"count_bias", d.count_bias},
                        {"vein_noise_sigma", d.vein_noise_sigma},
                        {"vein_jitter", d.vein_jitter},
                        {"neural_in_domain_accuracy", d.neural_in_domain_accuracy},
                        {"neural_ood_accuracy", d.neural_ood_accuracy},
                        {"neural_temperature", d.neural_temperature},
                        {"p_neovascularization", d.p_neovascularization},
                        {"p_subhyaloid", d.p_subhyaloid}});
    json j = {{"domains", doms},
              {"seed", seed},
              {"neural_calibration", neural_calibration},
              {"manifest_seeds", manifest_seeds}};
    j["neural_source"] = neural_source ? json(neural_source->str()) : json(nullptr);
    return j;
}

SynthConfig SynthConfig::from_json(const json& j) {
    SynthConfig c;
    try {
        if (!j.is_object() || !j.contains("domains")) throw Error(ErrorCode::InvalidConfig, "synth config needs 'domains'");
        for (const auto& d : j.at("domains")) {
            DomainSpec s;
            s.name = DomainId(d.at("name").get<std::string>());
            s.n_samples = d.value("n_samples", s.n_samples);
            if (d.contains("grade_prior")) s.grade_prior = d["grade_prior"].get<std::array<double, kNumGrades>>();
            if (d.contains("count_rate_matrix")) s.count_rate_matrix = d["count_rate_matrix"].get<RateMatrix>();
            if (d.contains("count_bias")) s.count_bias = d["count_bias"].get<std::array<double, 5>>();
            s.vein_noise_sigma = d.value("vein_noise_sigma", s.vein_noise_sigma);
            s.vein_jitter = d.value("vein_jitter", s.vein_jitter);
            s.neural_in_domain_accuracy = d.value("neural_in_domain_accuracy", s.neural_in_domain_accuracy);
            s.neural_ood_accuracy = d.value("neural_ood_accuracy", s.neural_ood_accuracy);
            s.neural_temperature = d.value("neural_temperature", s.neural_temperature);
            s.p_neovascularization = d.value("p_neovascularization", s.p_neovascularization);
            s.p_subhyaloid = d.value("p_subhyaloid", s.p_subhyaloid);
            c.domains.push_back(s);
        }
        c.seed = j.value("seed", c.seed);
        c.neural_calibration = j.value("neural_calibration", c.neural_calibration);
        if (j.contains("manifest_seeds")) c.manifest_seeds = j["manifest_seeds"].get<std::vector<std::int64_t>>();
        if (j.contains("neural_source") && !j["neural_source"].is_null())
            c.neural_source = DomainId(j["neural_source"].get<std::string>());
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("synth config: ") + e.what());
    } catch (const Error& e) {
        if (e.category() == ErrorCategory::Usage) throw;
        throw Error(ErrorCode::InvalidConfig, e.what());
    }
    c.validate();
    return c;
}

io::ProbabilityTable gen_neural_probabilities(const SynthConfig& cfg, const DomainSpec& spec,
                                              std::span<const LabeledExample> examples) {
    const double acc = spec.name == neural_home(cfg) ? spec.neural_in_domain_accuracy : spec.neural_ood_accuracy;
    Rng rng(derive_seed(cfg.seed, "neural/" + spec.name.str()));
    io::ProbabilityTable table;
    for (const auto& ex : examples) {
        const int truth = ex.grade.value();
        const bool correct = rng.bernoulli(acc);
        int winner = truth;
        if (!correct) {
            winner = static_cast<int>(rng.below(kNumGrades - 1));
            if (winner >= truth) ++winner;
        }
        std::array<double, kNumGrades> z{};
        for (double& v : z) v = rng.uniform();
        z[static_cast<std::size_t>(winner)] += 1.0 + (correct ? cfg.neural_calibration : 0.0);
        const double m = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double& v : z) {
            v = std::exp((v - m) / spec.neural_temperature);
            sum += v;
        }
        for (double& v : z) v /= sum;
        table.emplace(ex.image_id, validate_probability(z));
    }
    return table;
}

SynthDataset gen_dataset(const SynthConfig& cfg) {
    cfg.validate();
    SynthDataset out;
    out.domains.resize(cfg.domains.size());
    parallel_for(cfg.domains.size(), [&](std::size_t i) { out.domains[i] = gen_domain(cfg, cfg.domains[i]); });
    return out;
}

SynthConfig shift_profile(std::string_view name) {
    struct Preset {
        std::array<double, 5> bias;
        double vein_sigma;
        double vein_jitter;
        std::array<double, kNumGrades> prior;
    };
    std::array<Preset, 4> presets;
    double ood = 0.6;
    const std::array<const char*, 4> names = {"aptos", "eyepacs", "messidor", "messidor2"};
    if (name == "mild") {
        presets = {{{{1.0, 1.0, 1.0, 1.0, 1.0}, 0.3, 0.35, {0.30, 0.15, 0.25, 0.15, 0.15}},
                    {{0.95, 1.05, 1.0, 0.95, 1.05}, 0.3, 0.35, {0.35, 0.15, 0.25, 0.12, 0.13}},
                    {{1.05, 0.95, 1.05, 1.0, 0.95}, 0.3, 0.35, {0.30, 0.20, 0.25, 0.13, 0.12}},
                    {{1.0, 1.05, 0.95, 1.05, 1.0}, 0.3, 0.35, {0.32, 0.18, 0.22, 0.14, 0.14}}}};
        ood = 0.65;
    } else if (name == "severe") {
        presets = {{{{1.0, 1.0, 1.0, 1.0, 1.0}, 1.0, 0.35, {0.45, 0.10, 0.25, 0.08, 0.12}},
                    {{0.6, 1.4, 0.8, 1.2, 0.7}, 1.0, 0.35, {0.55, 0.12, 0.18, 0.07, 0.08}},
                    {{1.5, 0.7, 1.3, 0.8, 1.4}, 1.0, 0.35, {0.40, 0.15, 0.25, 0.10, 0.10}},
                    {{0.8, 1.2, 0.7, 1.5, 0.9}, 1.0, 0.35, {0.35, 0.20, 0.25, 0.10, 0.10}}}};
        ood = 0.5;
    } else if (name == "vein_hostile") {
        presets = {{{{1.0, 1.0, 1.0, 1.0, 1.0}, 1.0, 0.3, {0.30, 0.15, 0.25, 0.15, 0.15}},
                    {{0.97, 1.03, 1.0, 0.98, 1.02}, 1.0, 0.3, {0.33, 0.15, 0.24, 0.14, 0.14}},
                    {{1.03, 0.98, 1.02, 1.0, 0.97}, 1.0, 0.3, {0.30, 0.17, 0.25, 0.14, 0.14}},
                    {{1.0, 1.02, 0.97, 1.03, 1.0}, 1.0, 0.3, {0.31, 0.16, 0.23, 0.15, 0.15}}}};
        ood = 0.55;
    } else {
        throw Error(ErrorCode::InvalidConfig,
                    "unknown shift profile '" + std::string(name) + "' (mild|severe|vein_hostile)");
    }
    SynthConfig c;
    for (std::size_t i = 0; i < presets.size(); ++i) {
        DomainSpec d;
        d.name = DomainId(names[i]);
        d.count_bias = presets[i].bias;
        d.vein_noise_sigma = presets[i].vein_sigma;
        d.vein_jitter = presets[i].vein_jitter;
        d.grade_prior = presets[i].prior;
        d.neural_ood_accuracy = ood;
        c.domains.push_back(d);
    }
    c.validate();
    return c;
}

std::filesystem::path write_dataset(const SynthDataset& data, const SynthConfig& cfg,
                                    const std::filesystem::path& dir) {
    io::Manifest manifest;
    manifest.synthetic = true;
    manifest.seeds = cfg.manifest_seeds;
    for (const auto& d : data.domains) {
        const std::string stem = d.name.str();
        io::write_file(dir / (stem + "_features.csv"), io::format_feature_table(d.examples, FeatureSet::LesionsVein));
        io::write_file(dir / (stem + "_probs.csv"), io::format_probability_table(d.probabilities));
        io::write_file(dir / (stem + "_detections.json"), io::format_detections(d.detections));
        manifest.domains.push_back({d.name, stem + "_features.csv", stem + "_probs.csv", stem + "_detections.json"});
    }
    const auto path = dir / "manifest.json";
    io::write_file(path, io::format_manifest(manifest));
    return path;
}

}  // namespace kgdg::synth
