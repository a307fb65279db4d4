#include "kgdg/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kgdg/util.hpp"

namespace kgdg {

// ---------------------------------------------------------------------------
// errors

std::string_view error_code_name(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::UnknownReference: return "UnknownReference";
        case ErrorCode::NegativeProbability: return "NegativeProbability";
        case ErrorCode::SumOutOfTolerance: return "SumOutOfTolerance";
        case ErrorCode::MissingColumn: return "MissingColumn";
        case ErrorCode::NonNumericCell: return "NonNumericCell";
        case ErrorCode::DuplicateImageId: return "DuplicateImageId";
        case ErrorCode::UnknownImageId: return "UnknownImageId";
        case ErrorCode::UnknownLesionKind: return "UnknownLesionKind";
        case ErrorCode::BoxOutOfBounds: return "BoxOutOfBounds";
        case ErrorCode::SchemaMismatch: return "SchemaMismatch";
        case ErrorCode::CorruptArtifact: return "CorruptArtifact";
        case ErrorCode::SingleClassTrain: return "SingleClassTrain";
        case ErrorCode::TooFewPerClass: return "TooFewPerClass";
        case ErrorCode::EmptyEvaluation: return "EmptyEvaluation";
        case ErrorCode::NoQualifyingClass: return "NoQualifyingClass";
        case ErrorCode::MissingProbabilityTable: return "MissingProbabilityTable";
        case ErrorCode::IoFailure: return "IoFailure";
        case ErrorCode::LeakageDetected: return "LeakageDetected";
        case ErrorCode::InternalInvariant: return "InternalInvariant";
    }
    return "Unknown";
}

ErrorCategory error_category(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::InvalidArgument:
        case ErrorCode::InvalidConfig:
        case ErrorCode::UnknownReference:
            return ErrorCategory::Usage;
        case ErrorCode::LeakageDetected:
        case ErrorCode::InternalInvariant:
            return ErrorCategory::Internal;
        default:
            return ErrorCategory::Data;
    }
}

int exit_code_for(ErrorCategory category) noexcept {
    switch (category) {
        case ErrorCategory::Usage: return 2;
        case ErrorCategory::Data: return 3;
        case ErrorCategory::Internal: return 4;
    }
    return 4;
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

// ---------------------------------------------------------------------------
// grade / lesion

Grade::Grade(int value) : value_(value) {
    if (value < 0 || value >= kNumGrades)
        throw Error(ErrorCode::NonNumericCell, "grade " + std::to_string(value) + " outside [0,4]");
}

std::string_view Grade::name() const noexcept {
    static constexpr std::array<std::string_view, kNumGrades> names = {
        "No DR", "Mild NPDR", "Moderate NPDR", "Severe NPDR", "PDR"};
    return names[static_cast<std::size_t>(value_)];
}

std::string_view lesion_name(LesionType type) noexcept {
    switch (type) {
        case LesionType::Microaneurysm: return "microaneurysm";
        case LesionType::HardExudate: return "hard_exudate";
        case LesionType::HardHemorrhage: return "hard_hemorrhage";
        case LesionType::SoftHemorrhage: return "soft_hemorrhage";
        case LesionType::CottonWoolSpot: return "cotton_wool_spot";
        case LesionType::SubhyaloidHemorrhage: return "subhyaloid_hemorrhage";
        case LesionType::Neovascularization: return "neovascularization";
    }
    return "unknown";
}

LesionType parse_lesion(std::string_view name) {
    for (LesionType t : kAllLesionTypes)
        if (lesion_name(t) == name) return t;
    throw Error(ErrorCode::UnknownLesionKind, "unknown lesion kind '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// features

void validate_features(const FeatureVector& f) {
    auto fail = [](const std::string& what) { throw Error(ErrorCode::NonNumericCell, what); };
    if (f.microaneurysm_count < 0 || f.exudate_count < 0 || f.hard_hemorrhage_count < 0 ||
        f.soft_hemorrhage_count < 0 || f.cotton_wool_count < 0)
        fail("lesion counts must be >= 0");
    if (f.hemorrhage_quadrants < 0 || f.hemorrhage_quadrants > 4)
        fail("hemorrhage_quadrants=" + std::to_string(f.hemorrhage_quadrants) + " outside [0,4]");
    if (f.vein) {
        const VeinFeatures& v = *f.vein;
        if (!std::isfinite(v.tortuosity) || v.tortuosity < 0.0)
            fail("vein_tortuosity=" + format_double(v.tortuosity) + " must be >= 0");
        if (!std::isfinite(v.caliber_mean) || v.caliber_mean < 0.0)
            fail("vein_caliber_mean=" + format_double(v.caliber_mean) + " must be >= 0");
        if (!std::isfinite(v.branch_angle_mean) || v.branch_angle_mean < 0.0 ||
            v.branch_angle_mean > 180.0)
            fail("vein_branch_angle_mean=" + format_double(v.branch_angle_mean) +
                 " outside [0,180]");
    }
}

std::string_view feature_set_name(FeatureSet set) noexcept {
    return set == FeatureSet::LesionsOnly ? "lesions" : "lesions_vein";
}

FeatureSet parse_feature_set(std::string_view name) {
    const std::string n = to_lower(name);
    if (n == "lesions" || n == "lesions_only") return FeatureSet::LesionsOnly;
    if (n == "lesions_vein" || n == "lesions+vein") return FeatureSet::LesionsVein;
    throw Error(ErrorCode::InvalidConfig, "unknown feature set '" + std::string(name) + "'");
}

const std::vector<std::string>& feature_schema(FeatureSet set) {
    static const std::vector<std::string> lesions = {
        "microaneurysm_count",      "exudate_count",       "hard_hemorrhage_count",
        "soft_hemorrhage_count",    "cotton_wool_count",   "subhyaloid_present",
        "neovascularization_present", "hemorrhage_quadrants"};
    static const std::vector<std::string> with_vein = [] {
        auto v = lesions;
        v.insert(v.end(), {"vein_tortuosity", "vein_caliber_mean", "vein_branch_angle_mean"});
        return v;
    }();
    return set == FeatureSet::LesionsOnly ? lesions : with_vein;
}

std::vector<double> to_row(const FeatureVector& f, FeatureSet set) {
    std::vector<double> row = {
        static_cast<double>(f.microaneurysm_count),
        static_cast<double>(f.exudate_count),
        static_cast<double>(f.hard_hemorrhage_count),
        static_cast<double>(f.soft_hemorrhage_count),
        static_cast<double>(f.cotton_wool_count),
        f.subhyaloid_present ? 1.0 : 0.0,
        f.neovascularization_present ? 1.0 : 0.0,
        static_cast<double>(f.hemorrhage_quadrants),
    };
    if (set == FeatureSet::LesionsVein) {
        if (!f.vein) throw Error(ErrorCode::SchemaMismatch, "lesions_vein schema requires vein features");
        row.push_back(f.vein->tortuosity);
        row.push_back(f.vein->caliber_mean);
        row.push_back(f.vein->branch_angle_mean);
    }
    return row;
}

// ---------------------------------------------------------------------------
// probabilities

ProbabilityVector::ProbabilityVector() { probs_.fill(1.0 / kNumGrades); }

ProbabilityVector ProbabilityVector::one_hot(Grade g) {
    std::array<double, kNumGrades> p{};
    p[static_cast<std::size_t>(g.value())] = 1.0;
    return ProbabilityVector(p);
}

double ProbabilityVector::max() const noexcept {
    return *std::max_element(probs_.begin(), probs_.end());
}

Grade ProbabilityVector::argmax() const noexcept {
    // max_element returns the first maximum, i.e. the lowest grade on ties.
    return Grade(static_cast<int>(std::max_element(probs_.begin(), probs_.end()) - probs_.begin()));
}

ProbabilityVector validate_probability(std::span<const double> probs,
                                       std::vector<std::string>* warnings) {
    if (probs.size() != kNumGrades)
        throw Error(ErrorCode::InvalidArgument,
                    "expected 5 probabilities, got " + std::to_string(probs.size()));
    std::array<double, kNumGrades> p{};
    double sum = 0.0;
    for (std::size_t i = 0; i < kNumGrades; ++i) {
        if (std::isnan(probs[i]))
            throw Error(ErrorCode::SumOutOfTolerance, "probability is NaN");
        if (probs[i] < 0.0)
            throw Error(ErrorCode::NegativeProbability,
                        "p" + std::to_string(i) + "=" + format_double(probs[i]));
        p[i] = probs[i];
        sum += probs[i];
    }
    const double deviation = std::abs(sum - 1.0);
    if (!(deviation <= kRenormalizeTolerance))
        throw Error(ErrorCode::SumOutOfTolerance, "probabilities sum to " + format_double(sum));
    if (deviation > kProbabilitySumTolerance) {
        for (double& v : p) v /= sum;
        if (warnings) warnings->push_back("renormalized probability vector (sum " + format_double(sum) + ")");
    }
    return ProbabilityVector(p);
}

// ---------------------------------------------------------------------------
// boxes and detections

void validate_box(const BoundingBox& b) {
    constexpr double eps = 1e-9;
    const bool ok = std::isfinite(b.x) && std::isfinite(b.y) && std::isfinite(b.w) &&
                    std::isfinite(b.h) && b.x >= 0.0 && b.x <= 1.0 && b.y >= 0.0 && b.y <= 1.0 &&
                    b.w > 0.0 && b.w <= 1.0 && b.h > 0.0 && b.h <= 1.0 && b.x + b.w <= 1.0 + eps &&
                    b.y + b.h <= 1.0 + eps;
    if (!ok)
        throw Error(ErrorCode::BoxOutOfBounds, "box (" + format_double(b.x) + "," + format_double(b.y) +
                                                   "," + format_double(b.w) + "," + format_double(b.h) +
                                                   ") outside the unit square");
}

void validate_detection(const Detection& d) {
    validate_box(d.box);
    if (!(d.score >= 0.0 && d.score <= 1.0))
        throw Error(ErrorCode::NonNumericCell, "detection score " + format_double(d.score) + " outside [0,1]");
}

// ---------------------------------------------------------------------------
// domains / weights

DomainId::DomainId(std::string_view name) : name_(to_lower(trim(name))) {
    if (name_.empty()) throw Error(ErrorCode::InvalidArgument, "domain name must be nonempty");
}

void FusionWeights::validate() const {
    if (!(alpha_dl >= 0.0) || !(alpha_kl >= 0.0) || !(alpha_dl + alpha_kl > 0.0) ||
        !std::isfinite(alpha_dl) || !std::isfinite(alpha_kl))
        throw Error(ErrorCode::InvalidArgument, "fusion weights must be >= 0 with a positive sum");
}

}  // namespace kgdg
