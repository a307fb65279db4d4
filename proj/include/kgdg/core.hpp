#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kgdg/error.hpp"

namespace kgdg {

inline constexpr int kNumGrades = 5;

/// ICDR severity grade: 0 No DR, 1 Mild NPDR, 2 Moderate NPDR,
/// 3 Severe NPDR, 4 PDR.
class Grade {
public:
    constexpr Grade() = default;
    explicit Grade(int value);

    static Grade no_dr() { return Grade(0); }
    static Grade pdr() { return Grade(4); }

    constexpr int value() const noexcept { return value_; }
    std::string_view name() const noexcept;

    friend constexpr auto operator<=>(Grade, Grade) = default;

private:
    int value_ = 0;
};

enum class LesionType {
    Microaneurysm,
    HardExudate,
    HardHemorrhage,
    SoftHemorrhage,
    CottonWoolSpot,
    SubhyaloidHemorrhage,
    Neovascularization,
};

inline constexpr std::array<LesionType, 7> kAllLesionTypes = {
    LesionType::Microaneurysm,   LesionType::HardExudate,          LesionType::HardHemorrhage,
    LesionType::SoftHemorrhage,  LesionType::CottonWoolSpot,       LesionType::SubhyaloidHemorrhage,
    LesionType::Neovascularization,
};

std::string_view lesion_name(LesionType type) noexcept;
/// Throws UnknownLesionKind for anything outside the closed enumeration.
LesionType parse_lesion(std::string_view name);

/// Retinal vein morphology summary from vessel segmentation.
struct VeinFeatures {
    double tortuosity = 0.0;         // dimensionless, >= 0
    double caliber_mean = 0.0;       // normalized pixels, >= 0
    double branch_angle_mean = 0.0;  // degrees, [0, 180]

    friend bool operator==(const VeinFeatures&, const VeinFeatures&) = default;
};

/// Structured symbolic vector aggregated from the lesion and vessel extractors.
struct FeatureVector {
    std::int64_t microaneurysm_count = 0;
    std::int64_t exudate_count = 0;
    std::int64_t hard_hemorrhage_count = 0;
    std::int64_t soft_hemorrhage_count = 0;
    std::int64_t cotton_wool_count = 0;
    bool subhyaloid_present = false;
    bool neovascularization_present = false;
    int hemorrhage_quadrants = 0;
    std::optional<VeinFeatures> vein;

    std::int64_t hemorrhage_total() const noexcept {
        return hard_hemorrhage_count + soft_hemorrhage_count;
    }

    friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

/// Throws NonNumericCell (range class) when an invariant is violated.
void validate_features(const FeatureVector& f);

/// The two fixed feature schemas: lesion biomarkers alone, or lesions plus
/// vein morphology.
enum class FeatureSet { LesionsOnly, LesionsVein };

std::string_view feature_set_name(FeatureSet set) noexcept;
FeatureSet parse_feature_set(std::string_view name);
const std::vector<std::string>& feature_schema(FeatureSet set);

/// Flattens a feature vector into model input order. LesionsVein requires
/// vein fields to be present (SchemaMismatch otherwise).
std::vector<double> to_row(const FeatureVector& f, FeatureSet set);

/// Validated length-5 confidence vector over DR grades.
class ProbabilityVector {
public:
    /// Uniform distribution.
    ProbabilityVector();

    static ProbabilityVector one_hot(Grade g);

    double operator[](int grade) const { return probs_[static_cast<std::size_t>(grade)]; }
    const std::array<double, kNumGrades>& values() const noexcept { return probs_; }

    double max() const noexcept;
    /// Lowest grade index among maxima.
    Grade argmax() const noexcept;

    friend bool operator==(const ProbabilityVector&, const ProbabilityVector&) = default;

private:
    friend ProbabilityVector validate_probability(std::span<const double>, std::vector<std::string>*);
    explicit ProbabilityVector(const std::array<double, kNumGrades>& p) : probs_(p) {}

    std::array<double, kNumGrades> probs_;
};

inline constexpr double kProbabilitySumTolerance = 1e-6;
inline constexpr double kRenormalizeTolerance = 1e-4;

/// Accepts a vector within 1e-6 of the simplex unchanged; renormalizes (and
/// appends a warning) when the sum is off by at most 1e-4; rejects otherwise.
ProbabilityVector validate_probability(std::span<const double> probs,
                                       std::vector<std::string>* warnings = nullptr);

/// Normalized image-space box, top-left origin.
struct BoundingBox {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;

    double area() const noexcept { return w * h; }
    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// Throws BoxOutOfBounds.
void validate_box(const BoundingBox& box);

struct Detection {
    LesionType lesion = LesionType::Microaneurysm;
    BoundingBox box;
    double score = 0.0;

    friend bool operator==(const Detection&, const Detection&) = default;
};

void validate_detection(const Detection& d);

/// Lowercase, nonempty domain token.
class DomainId {
public:
    DomainId() = default;
    explicit DomainId(std::string_view name);

    const std::string& str() const noexcept { return name_; }
    friend auto operator<=>(const DomainId&, const DomainId&) = default;

private:
    std::string name_;
};

struct LabeledExample {
    std::string image_id;
    DomainId domain;
    Grade grade;
    FeatureVector features;
    std::optional<ProbabilityVector> neural_probs;
};

struct FusionWeights {
    double alpha_dl = 0.5;
    double alpha_kl = 0.5;

    /// Throws InvalidArgument.
    void validate() const;
};

}  // namespace kgdg
