#include "kgdg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "kgdg/util.hpp"

namespace kgdg::metrics {

namespace {

void check_labels(std::span<const int> y_true, std::size_t n_pred) {
    if (y_true.empty()) throw Error(ErrorCode::EmptyEvaluation, "no samples to evaluate");
    if (y_true.size() != n_pred)
        throw Error(ErrorCode::InvalidArgument, "y_true and predictions differ in length");
}

void check_grade(int g) {
    if (g < 0 || g >= kNumGrades) throw Error(ErrorCode::InvalidArgument, "grade outside [0,4]");
}

}  // namespace

double accuracy(std::span<const int> y_true, std::span<const int> y_pred) {
    check_labels(y_true, y_pred.size());
    std::size_t correct = 0;
    for (std::size_t i = 0; i < y_true.size(); ++i) correct += (y_true[i] == y_pred[i]) ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(y_true.size());
}

Confusion confusion_matrix(std::span<const int> y_true, std::span<const int> y_pred) {
    check_labels(y_true, y_pred.size());
    Confusion c{};
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        check_grade(y_true[i]);
        check_grade(y_pred[i]);
        ++c[static_cast<std::size_t>(y_true[i])][static_cast<std::size_t>(y_pred[i])];
    }
    return c;
}

double macro_f1(std::span<const int> y_true, std::span<const int> y_pred) {
    const Confusion c = confusion_matrix(y_true, y_pred);
    double total = 0.0;
    int present = 0;
    for (std::size_t g = 0; g < kNumGrades; ++g) {
        std::int64_t support = 0, predicted = 0;
        for (std::size_t k = 0; k < kNumGrades; ++k) {
            support += c[g][k];
            predicted += c[k][g];
        }
        if (support == 0) continue;
        ++present;
        const double tp = static_cast<double>(c[g][g]);
        const double precision = predicted > 0 ? tp / static_cast<double>(predicted) : 0.0;
        const double recall = tp / static_cast<double>(support);
        total += (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    }
    return total / present;
}

double binary_auc(std::span<const double> scores, std::span<const bool> positive) {
    if (scores.size() != positive.size())
        throw Error(ErrorCode::InvalidArgument, "scores and labels differ in length");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double rank_sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        // ranks i+1 .. j share their average
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k)
            if (positive[order[k]]) {
                rank_sum += avg_rank;
                ++n_pos;
            }
        i = j;
    }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw Error(ErrorCode::NoQualifyingClass, "AUC needs both positives and negatives");
    const double np = static_cast<double>(n_pos);
    return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

double auc_ovr_macro(std::span<const int> y_true, std::span<const ProbabilityVector> probs) {
    check_labels(y_true, probs.size());
    std::array<std::size_t, kNumGrades> counts{};
    for (int g : y_true) {
        check_grade(g);
        ++counts[static_cast<std::size_t>(g)];
    }
    double total = 0.0;
    int qualifying = 0;
    std::vector<double> scores(y_true.size());
    // vector<bool> has no contiguous storage to view as a span
    auto pos = std::make_unique<bool[]>(y_true.size());
    for (int g = 0; g < kNumGrades; ++g) {
        const std::size_t npos = counts[static_cast<std::size_t>(g)];
        if (npos == 0 || npos == y_true.size()) continue;
        for (std::size_t i = 0; i < y_true.size(); ++i) {
            scores[i] = probs[i][g];
            pos[i] = y_true[i] == g;
        }
        total += binary_auc(scores, std::span<const bool>(pos.get(), y_true.size()));
        ++qualifying;
    }
    if (qualifying == 0)
        throw Error(ErrorCode::NoQualifyingClass, "no grade has both positive and negative samples");
    return total / qualifying;
}

MetricReport evaluate_labels(std::span<const int> y_true, std::span<const int> y_pred) {
    MetricReport r;
    r.confusion = confusion_matrix(y_true, y_pred);
    r.accuracy = accuracy(y_true, y_pred);
    r.macro_f1 = macro_f1(y_true, y_pred);
    r.auc_ovr_macro = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t g = 0; g < kNumGrades; ++g)
        r.support[g] = std::accumulate(r.confusion[g].begin(), r.confusion[g].end(), std::int64_t{0});
    return r;
}

MetricReport evaluate(std::span<const int> y_true, std::span<const ProbabilityVector> probs) {
    check_labels(y_true, probs.size());
    std::vector<int> y_pred(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) y_pred[i] = probs[i].argmax().value();
    MetricReport r = evaluate_labels(y_true, y_pred);
    try {
        r.auc_ovr_macro = auc_ovr_macro(y_true, probs);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::NoQualifyingClass) throw;
    }
    return r;
}

double iou(const BoundingBox& a, const BoundingBox& b) {
    const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
    const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) return 0.0;
    if (a == b) return 1.0;
    return std::clamp(inter / uni, 0.0, 1.0);
}

DetectionMatchReport detection_set_iou(std::span<const Detection> pred, std::span<const Detection> truth,
                                       double iou_threshold) {
    DetectionMatchReport report;
    std::vector<std::size_t> order(pred.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return pred[a].score > pred[b].score; });

    std::vector<bool> used(truth.size(), false);
    std::map<LesionType, double> iou_sum;
    double total_iou = 0.0;
    for (const Detection& d : pred) ++report.per_lesion[d.lesion].predicted;
    for (const Detection& t : truth) ++report.per_lesion[t.lesion].truth;

    for (std::size_t pi : order) {
        const Detection& p = pred[pi];
        double best = -1.0;
        std::size_t best_t = truth.size();
        for (std::size_t ti = 0; ti < truth.size(); ++ti) {
            if (used[ti] || truth[ti].lesion != p.lesion) continue;
            const double v = iou(p.box, truth[ti].box);
            if (v > 0.0 && v >= iou_threshold && v > best) {
                best = v;
                best_t = ti;
            }
        }
        if (best_t == truth.size()) continue;
        used[best_t] = true;
        LesionMatch& m = report.per_lesion[p.lesion];
        ++m.matched;
        iou_sum[p.lesion] += best;
        ++report.matched;
        total_iou += best;
    }
    for (auto& [type, m] : report.per_lesion)
        m.mean_iou = m.matched > 0 ? iou_sum[type] / static_cast<double>(m.matched) : 0.0;
    report.mean_iou = report.matched > 0 ? total_iou / static_cast<double>(report.matched) : 0.0;
    const double matched = static_cast<double>(report.matched);
    if (pred.empty() && truth.empty()) {
        report.precision = report.recall = 1.0;
    } else {
        report.precision = pred.empty() ? 0.0 : matched / static_cast<double>(pred.size());
        report.recall = truth.empty() ? 0.0 : matched / static_cast<double>(truth.size());
    }
    return report;
}

DomainStats compute_domain_stats(std::span<const double> values, std::size_t cols, double variance_floor) {
    if (cols == 0 || values.size() % cols != 0)
        throw Error(ErrorCode::InvalidArgument, "domain stats: value count is not a multiple of the arity");
    if (!(variance_floor > 0.0)) throw Error(ErrorCode::InvalidArgument, "variance floor must be positive");
    DomainStats s;
    s.n = values.size() / cols;
    if (s.n == 0) throw Error(ErrorCode::EmptyEvaluation, "domain stats need at least one row");
    s.mean.assign(cols, 0.0);
    s.variance.assign(cols, 0.0);
    for (std::size_t r = 0; r < s.n; ++r)
        for (std::size_t c = 0; c < cols; ++c) s.mean[c] += values[r * cols + c];
    for (double& m : s.mean) m /= static_cast<double>(s.n);
    for (std::size_t r = 0; r < s.n; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            const double d = values[r * cols + c] - s.mean[c];
            s.variance[c] += d * d;
        }
    for (double& v : s.variance) v = std::max(v / static_cast<double>(s.n), variance_floor);
    return s;
}

double domain_kl(const DomainStats& p, const DomainStats& q) {
    if (p.mean.size() != q.mean.size() || p.variance.size() != p.mean.size() ||
        q.variance.size() != q.mean.size())
        throw Error(ErrorCode::SchemaMismatch, "domain stats have different arity");
    double kl = 0.0;
    for (std::size_t j = 0; j < p.mean.size(); ++j) {
        const double vp = p.variance[j];
        const double vq = q.variance[j];
        const double dm = q.mean[j] - p.mean[j];
        kl += 0.5 * (vp / vq + dm * dm / vq - 1.0 + std::log(vq / vp));
    }
    return std::max(kl, 0.0);
}

Summary seeded_summary(std::span<const double> values) {
    Summary s;
    s.n = values.size();
    if (values.empty()) return s;
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.n);
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(s.n));
    return s;
}

std::string format_percent(const Summary& s) {
    if (std::isnan(s.mean)) return "n/a";
    return format_fixed(100.0 * s.mean, 1) + "±" + format_fixed(100.0 * s.std, 1);
}

}  // namespace kgdg::metrics
