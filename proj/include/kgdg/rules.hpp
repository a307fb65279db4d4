#pragma once

#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "kgdg/core.hpp"

namespace kgdg::rules {

/// Thresholds for the clinical grading rules. Only the ">20 hemorrhages in
/// all four quadrants" cutoff is clinically fixed; the rest are tunable.
struct RuleConfig {
    std::int64_t severe_hemorrhage_count = 20;  // strictly more than this
    std::int64_t cws_severe_threshold = 5;
    double min_score = 0.25;
    double smoothing = 0.1;

    void validate() const;
    static RuleConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

/// Rule identifiers in priority order.
enum class RuleId { R1, R2, R3, R4, R5, R6, R7, R8 };

std::string_view rule_name(RuleId id) noexcept;
std::string_view rule_description(RuleId id) noexcept;

struct RuleTrace {
    /// The deciding rule. Kept as a list so callers can splice traces.
    std::vector<RuleId> fired_rules;
    Grade grade;
    /// Lower-priority rules whose condition also held, in priority order.
    std::vector<RuleId> supporting_rules;
};

/// Quadrant of the box center relative to the image center:
/// 1 top-left, 2 top-right, 3 bottom-left, 4 bottom-right. Centers on an axis
/// go to the lower-numbered quadrant.
int assign_quadrant(const BoundingBox& box);

FeatureVector aggregate_detections(std::span<const Detection> dets, double min_score);

/// First matching rule in priority order decides the grade.
RuleTrace grade_by_rules(const FeatureVector& f, const RuleConfig& cfg = {});

/// (1 - smoothing) on the rule grade, smoothing/4 elsewhere. smoothing must be
/// in [0, 1).
ProbabilityVector rule_grade_as_probability(const RuleTrace& trace, double smoothing);

}  // namespace kgdg::rules
