#pragma once

#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "kgdg/core.hpp"

namespace kgdg::metrics {

using Confusion = std::array<std::array<std::int64_t, kNumGrades>, kNumGrades>;

double accuracy(std::span<const int> y_true, std::span<const int> y_pred);

/// Mean per-grade F1 over the grades present in y_true. Undefined precision or
/// recall counts as 0.
double macro_f1(std::span<const int> y_true, std::span<const int> y_pred);

/// Rank-statistic AUC (ties get averaged ranks). Requires at least one
/// positive and one negative.
double binary_auc(std::span<const double> scores, std::span<const bool> positive);

/// Macro average of one-vs-rest AUCs over grades that have both positives and
/// negatives in y_true. Throws NoQualifyingClass if there are none.
double auc_ovr_macro(std::span<const int> y_true, std::span<const ProbabilityVector> probs);

/// confusion[t][p]: count of true grade t predicted as p.
Confusion confusion_matrix(std::span<const int> y_true, std::span<const int> y_pred);

struct MetricReport {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    double auc_ovr_macro = 0.0;  // NaN when no grade qualifies
    Confusion confusion{};
    std::array<std::int64_t, kNumGrades> support{};
};

/// Predictions are the argmax of each probability row.
MetricReport evaluate(std::span<const int> y_true, std::span<const ProbabilityVector> probs);

/// Grade predictions without scores; auc_ovr_macro is NaN.
MetricReport evaluate_labels(std::span<const int> y_true, std::span<const int> y_pred);

double iou(const BoundingBox& a, const BoundingBox& b);

struct LesionMatch {
    std::int64_t predicted = 0;
    std::int64_t truth = 0;
    std::int64_t matched = 0;
    double mean_iou = 0.0;
};

struct DetectionMatchReport {
    std::map<LesionType, LesionMatch> per_lesion;
    std::int64_t matched = 0;
    double mean_iou = 0.0;
    double precision = 0.0;
    double recall = 0.0;
};

/// Greedy per-lesion-type matching in descending predicted score; each truth box
/// is used at most once and goes to the unmatched truth with the highest IoU
/// (lowest index on ties) provided IoU >= iou_threshold.
DetectionMatchReport detection_set_iou(std::span<const Detection> pred, std::span<const Detection> truth,
                                       double iou_threshold);

inline constexpr double kVarianceFloor = 1e-6;

/// Independent-coordinate Gaussian summary of a domain's feature rows.
struct DomainStats {
    std::vector<double> mean;
    std::vector<double> variance;  // population variance, floored
    std::size_t n = 0;
};

/// `values` is row-major with `cols` columns.
DomainStats compute_domain_stats(std::span<const double> values, std::size_t cols,
                                 double variance_floor = kVarianceFloor);

/// KL(p || q) between diagonal Gaussians.
double domain_kl(const DomainStats& p, const DomainStats& q);

struct Summary {
    double mean = 0.0;
    double std = 0.0;  // population
    std::size_t n = 0;
};

Summary seeded_summary(std::span<const double> per_seed_values);

/// Fraction in [0,1] rendered as percent with one decimal: "72.8±0.5".
std::string format_percent(const Summary& s);

}  // namespace kgdg::metrics
