#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "kgdg/core.hpp"
#include "kgdg/data_io.hpp"

namespace kgdg::synth {

/// Lesion kinds with Poisson counts, in rate-matrix column order.
inline constexpr std::array<LesionType, 5> kCountedLesions = {
    LesionType::Microaneurysm, LesionType::HardExudate, LesionType::HardHemorrhage,
    LesionType::SoftHemorrhage, LesionType::CottonWoolSpot};

using RateMatrix = std::array<std::array<double, 5>, kNumGrades>;  // [grade][lesion]

/// Poisson rates per grade; columns follow kCountedLesions.
inline constexpr RateMatrix kDefaultRates = {{
    {0.3, 0.1, 0.1, 0.05, 0.02},
    {3.0, 0.4, 0.5, 0.1, 0.05},
    {6.0, 4.0, 3.0, 1.0, 0.8},
    {9.0, 8.0, 15.0, 8.0, 4.0},
    {10.0, 9.0, 17.0, 9.0, 5.0},
}};

struct DomainSpec {
    DomainId name;
    std::int64_t n_samples = 2000;
    std::array<double, kNumGrades> grade_prior{0.2, 0.2, 0.2, 0.2, 0.2};
    RateMatrix count_rate_matrix = kDefaultRates;
    /// Multiplies the rates column-wise; 0 silences a lesion kind.
    std::array<double, 5> count_bias{1.0, 1.0, 1.0, 1.0, 1.0};
    /// Std (in grade units) of the per-domain offset applied to every vein feature.
    double vein_noise_sigma = 0.0;
    /// Per-image vein jitter, grade units.
    double vein_jitter = 0.35;
    double neural_in_domain_accuracy = 0.8;
    double neural_ood_accuracy = 0.6;
    double neural_temperature = 0.5;
    /// Probability of each grade-4 flag given grade 4.
    double p_neovascularization = 0.8;
    double p_subhyaloid = 0.3;

    void validate() const;
};

struct SynthConfig {
    std::vector<DomainSpec> domains;
    std::uint64_t seed = 0;
    /// Domain the simulated deep model was trained on; it gets the in-domain
    /// accuracy. Defaults to the first domain.
    std::optional<DomainId> neural_source;
    /// Extra logit margin when the simulated deep model is right, so its
    /// confidence carries information about correctness.
    double neural_calibration = 1.0;
    /// Seeds written into the generated manifest.
    std::vector<std::int64_t> manifest_seeds{0, 1, 2};

    void validate() const;
    nlohmann::json to_json() const;
    static SynthConfig from_json(const nlohmann::json& j);
};

struct DomainData {
    DomainId name;
    std::vector<LabeledExample> examples;  // neural_probs filled
    io::DetectionTable detections;
    io::ProbabilityTable probabilities;
};

struct SynthDataset {
    std::vector<DomainData> domains;
};

/// Throws InvalidConfig.
SynthDataset gen_dataset(const SynthConfig& cfg);

/// Neural probability rows alone; the feature stream is untouched, so this can
/// re-simulate the deep branch at a different accuracy.
io::ProbabilityTable gen_neural_probabilities(const SynthConfig& cfg, const DomainSpec& domain,
                                              std::span<const LabeledExample> examples);

/// "mild", "severe", "vein_hostile". Throws InvalidConfig for other names.
SynthConfig shift_profile(std::string_view name);

/// Writes <domain>_features.csv, <domain>_probs.csv, <domain>_detections.json
/// and manifest.json (marked synthetic). Returns the manifest path.
std::filesystem::path write_dataset(const SynthDataset& data, const SynthConfig& cfg,
                                    const std::filesystem::path& dir);

}  // namespace kgdg::synth
