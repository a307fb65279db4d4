#include <algorithm>
#include <cmath>
#include <numeric>

#include "kgdg/learn.hpp"

namespace kgdg::learn {

namespace {

constexpr double kMinScale = 1e-12;

void require_rows(const TabularData& train) {
    if (train.rows() == 0) throw Error(ErrorCode::EmptyEvaluation, "training data is empty");
    if (train.cols() == 0) throw Error(ErrorCode::InvalidArgument, "training data has no features");
}

}  // namespace

// ---------------------------------------------------------------------------
// Standardizer

Standardizer Standardizer::fit(const TabularData& data) {
    Standardizer s;
    const std::size_t f = data.cols();
    s.mean.assign(f, 0.0);
    s.scale.assign(f, 1.0);
    if (data.rows() == 0) return s;
    const double n = static_cast<double>(data.rows());
    for (std::size_t r = 0; r < data.rows(); ++r)
        for (std::size_t c = 0; c < f; ++c) s.mean[c] += data.at(r, c);
    for (double& m : s.mean) m /= n;
    std::vector<double> var(f, 0.0);
    for (std::size_t r = 0; r < data.rows(); ++r)
        for (std::size_t c = 0; c < f; ++c) {
            const double d = data.at(r, c) - s.mean[c];
            var[c] += d * d;
        }
    for (std::size_t c = 0; c < f; ++c) {
        const double sd = std::sqrt(var[c] / n);
        s.scale[c] = sd > kMinScale ? sd : 1.0;
    }
    return s;
}

std::vector<double> Standardizer::apply(std::span<const double> x) const {
    if (x.size() != mean.size()) throw Error(ErrorCode::SchemaMismatch, "standardizer arity mismatch");
    std::vector<double> out(x.size());
    for (std::size_t c = 0; c < x.size(); ++c) out[c] = (x[c] - mean[c]) / scale[c];
    return out;
}

TabularData Standardizer::apply(const TabularData& data) const {
    TabularData out(data.schema());
    for (std::size_t r = 0; r < data.rows(); ++r) out.add_row(apply(data.row(r)), data.label(r));
    return out;
}

// ---------------------------------------------------------------------------
// logistic regression

namespace {

/// Softmax of the linear scores for one standardized row.
std::array<double, kNumGrades> linear_softmax(std::span<const double> params, std::span<const double> x) {
    const std::size_t stride = x.size() + 1;
    std::array<double, kNumGrades> z{};
    for (std::size_t c = 0; c < kNumGrades; ++c) {
        const double* w = params.data() + c * stride;
        double s = w[x.size()];
        for (std::size_t j = 0; j < x.size(); ++j) s += w[j] * x[j];
        z[c] = s;
    }
    const double m = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (double& v : z) {
        v = std::exp(v - m);
        total += v;
    }
    for (double& v : z) v /= total;
    return z;
}

}  // namespace

LossAndGradient logistic_loss_gradient(std::span<const double> params, const TabularData& data,
                                       const std::array<double, kNumGrades>& weights) {
    const std::size_t f = data.cols();
    const std::size_t stride = f + 1;
    if (params.size() != kNumGrades * stride)
        throw Error(ErrorCode::InvalidArgument, "parameter block must be 5 x (F + 1)");
    LossAndGradient out;
    out.gradient.assign(params.size(), 0.0);
    double total_w = 0.0;
    for (std::size_t i = 0; i < data.rows(); ++i) {
        const int y = data.label(i);
        const double w = weights[static_cast<std::size_t>(y)];
        if (w == 0.0) continue;
        const auto x = data.row(i);
        const auto p = linear_softmax(params, x);
        out.loss += w * -std::log(std::max(p[static_cast<std::size_t>(y)], 1e-300));
        total_w += w;
        for (std::size_t c = 0; c < kNumGrades; ++c) {
            const double d = w * (p[c] - (static_cast<int>(c) == y ? 1.0 : 0.0));
            double* g = out.gradient.data() + c * stride;
            for (std::size_t j = 0; j < f; ++j) g[j] += d * x[j];
            g[f] += d;
        }
    }
    if (!(total_w > 0.0)) throw Error(ErrorCode::InvalidArgument, "total sample weight is zero");
    out.loss /= total_w;
    for (double& g : out.gradient) g /= total_w;
    return out;
}

ProbabilityVector LogisticModel::predict_proba(std::span<const double> x) const {
    const auto z = standardizer.apply(x);
    const auto p = linear_softmax(params, z);
    return validate_probability(p);
}

LogisticModel fit_logistic(const TabularData& train, const TrainConfig& cfg) {
    cfg.validate();
    require_rows(train);
    LogisticModel m;
    m.feature_schema = train.schema();
    m.standardizer = Standardizer::fit(train);
    const TabularData z = m.standardizer.apply(train);
    const auto weights = class_weights(train.labels(), cfg.class_weighting);
    m.params.assign(kNumGrades * (train.cols() + 1), 0.0);
    for (int step = 0; step < cfg.logistic_steps; ++step) {
        const auto lg = logistic_loss_gradient(m.params, z, weights);
        for (std::size_t i = 0; i < m.params.size(); ++i) m.params[i] -= cfg.logistic_lr * lg.gradient[i];
    }
    return m;
}

// ---------------------------------------------------------------------------
// k nearest neighbours

ProbabilityVector KnnModel::predict_proba(std::span<const double> x) const {
    const auto q = standardizer.apply(x);
    const std::size_t n = reference.rows();
    std::vector<std::pair<double, std::size_t>> dist(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = reference.row(i);
        double d = 0.0;
        for (std::size_t j = 0; j < q.size(); ++j) d += (r[j] - q[j]) * (r[j] - q[j]);
        dist[i] = {d, i};
    }
    if (n == 0) throw Error(ErrorCode::EmptyEvaluation, "knn model has no reference rows");
    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(std::max(k, 1)), n);
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(take), dist.end());
    std::array<double, kNumGrades> freq{};
    for (std::size_t i = 0; i < take; ++i) freq[static_cast<std::size_t>(reference.label(dist[i].second))] += 1.0;
    for (double& v : freq) v /= static_cast<double>(take);
    return validate_probability(freq);
}

KnnModel fit_knn(const TabularData& train, const TrainConfig& cfg) {
    cfg.validate();
    require_rows(train);
    KnnModel m;
    m.feature_schema = train.schema();
    m.standardizer = Standardizer::fit(train);
    m.reference = m.standardizer.apply(train);
    m.k = std::min(cfg.k_neighbors, static_cast<int>(train.rows()));
    return m;
}

ProbabilityVector predict_knn(const TabularData& train, std::span<const double> x, const TrainConfig& cfg) {
    return fit_knn(train, cfg).predict_proba(x);
}

}  // namespace kgdg::learn
