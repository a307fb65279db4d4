#include "kgdg/rules.hpp"

#include <array>
#include <cmath>

namespace kgdg::rules {

void RuleConfig::validate() const {
    if (severe_hemorrhage_count < 0 || cws_severe_threshold < 1)
        throw Error(ErrorCode::InvalidConfig, "rule thresholds must be positive");
    if (!(min_score >= 0.0 && min_score <= 1.0))
        throw Error(ErrorCode::InvalidConfig, "rules.min_score must be in [0,1]");
    if (!(smoothing >= 0.0 && smoothing < 1.0))
        throw Error(ErrorCode::InvalidConfig, "rules.smoothing must be in [0,1)");
}

RuleConfig RuleConfig::from_json(const nlohmann::json& j) {
    RuleConfig c;
    if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "'rules' section must be an object");
    try {
        c.severe_hemorrhage_count = j.value("severe_hemorrhage_count", c.severe_hemorrhage_count);
        c.cws_severe_threshold = j.value("cws_severe_threshold", c.cws_severe_threshold);
        c.min_score = j.value("min_score", c.min_score);
        c.smoothing = j.value("smoothing", c.smoothing);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("rules: ") + e.what());
    }
    c.validate();
    return c;
}

nlohmann::json RuleConfig::to_json() const {
    return {{"severe_hemorrhage_count", severe_hemorrhage_count},
            {"cws_severe_threshold", cws_severe_threshold},
            {"min_score", min_score},
            {"smoothing", smoothing}};
}

std::string_view rule_name(RuleId id) noexcept {
    static constexpr std::array<std::string_view, 8> names = {"R1", "R2", "R3", "R4", "R5", "R6", "R7", "R8"};
    return names[static_cast<std::size_t>(id)];
}

std::string_view rule_description(RuleId id) noexcept {
    switch (id) {
        case RuleId::R1: return "neovascularization present -> PDR";
        case RuleId::R2: return "subhyaloid hemorrhage present -> PDR";
        case RuleId::R3: return "more than 20 hemorrhages spread over all four quadrants -> Severe NPDR";
        case RuleId::R4: return "cotton wool spots at or above the severe threshold -> Severe NPDR";
        case RuleId::R5: return "any cotton wool spot -> Moderate NPDR";
        case RuleId::R6: return "any exudate or hemorrhage -> Moderate NPDR";
        case RuleId::R7: return "any microaneurysm -> Mild NPDR";
        case RuleId::R8: return "no findings -> No DR";
    }
    return "";
}

int assign_quadrant(const BoundingBox& box) {
    const double cx = box.x + box.w / 2.0;
    const double cy = box.y + box.h / 2.0;
    const bool right = cx > 0.5;
    const bool bottom = cy > 0.5;
    return 1 + (right ? 1 : 0) + (bottom ? 2 : 0);
}

FeatureVector aggregate_detections(std::span<const Detection> dets, double min_score) {
    if (!(min_score >= 0.0 && min_score <= 1.0))
        throw Error(ErrorCode::InvalidArgument, "min_score must be in [0,1]");
    FeatureVector f;
    std::array<bool, 5> quadrant_hit{};
    for (const Detection& d : dets) {
        if (d.score < min_score) continue;
        switch (d.lesion) {
            case LesionType::Microaneurysm: ++f.microaneurysm_count; break;
            case LesionType::HardExudate: ++f.exudate_count; break;
            case LesionType::HardHemorrhage:
                ++f.hard_hemorrhage_count;
                quadrant_hit[static_cast<std::size_t>(assign_quadrant(d.box))] = true;
                break;
            case LesionType::SoftHemorrhage:
                ++f.soft_hemorrhage_count;
                quadrant_hit[static_cast<std::size_t>(assign_quadrant(d.box))] = true;
                break;
            case LesionType::CottonWoolSpot: ++f.cotton_wool_count; break;
            case LesionType::SubhyaloidHemorrhage: f.subhyaloid_present = true; break;
            case LesionType::Neovascularization: f.neovascularization_present = true; break;
        }
    }
    for (int q = 1; q <= 4; ++q) f.hemorrhage_quadrants += quadrant_hit[static_cast<std::size_t>(q)] ? 1 : 0;
    return f;
}

RuleTrace grade_by_rules(const FeatureVector& f, const RuleConfig& cfg) {
    const std::int64_t hemorrhages = f.hemorrhage_total();
    struct Candidate {
        RuleId id;
        int grade;
        bool holds;
    };
    const std::array<Candidate, 8> rules = {{
        {RuleId::R1, 4, f.neovascularization_present},
        {RuleId::R2, 4, f.subhyaloid_present},
        {RuleId::R3, 3, hemorrhages > cfg.severe_hemorrhage_count && f.hemorrhage_quadrants == 4},
        {RuleId::R4, 3, f.cotton_wool_count >= cfg.cws_severe_threshold},
        {RuleId::R5, 2, f.cotton_wool_count >= 1},
        {RuleId::R6, 2, f.exudate_count >= 1 || hemorrhages >= 1},
        {RuleId::R7, 1, f.microaneurysm_count >= 1},
        {RuleId::R8, 0, true},
    }};
    RuleTrace trace;
    for (const Candidate& r : rules) {
        if (!r.holds) continue;
        if (trace.fired_rules.empty()) {
            trace.fired_rules.push_back(r.id);
            trace.grade = Grade(r.grade);
        } else if (r.id != RuleId::R8) {
            trace.supporting_rules.push_back(r.id);
        }
    }
    return trace;
}

ProbabilityVector rule_grade_as_probability(const RuleTrace& trace, double smoothing) {
    if (!(smoothing >= 0.0 && smoothing < 1.0))
        throw Error(ErrorCode::InvalidArgument, "smoothing must be in [0,1)");
    std::array<double, kNumGrades> p{};
    p.fill(smoothing / (kNumGrades - 1));
    p[static_cast<std::size_t>(trace.grade.value())] = 1.0 - smoothing;
    return validate_probability(p);
}

}  // namespace kgdg::rules
