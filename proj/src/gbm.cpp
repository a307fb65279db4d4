#include <algorithm>
#include <cmath>
#include <numeric>

#include "kgdg/learn.hpp"
#include "kgdg/util.hpp"
#include "tree_builder.hpp"

namespace kgdg::learn {

namespace {

constexpr double kPriorFloor = 1e-9;
constexpr double kMinHessian = 1e-16;

void softmax_inplace(std::span<double> z) {
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double& v : z) {
        v = std::exp(v - m);
        s += v;
    }
    for (double& v : z) v /= s;
}

int argmax(std::span<const double> z) {
    return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
}

double weighted_log_loss(const std::vector<double>& scores, const TabularData& data,
                         const std::vector<double>& w) {
    double loss = 0.0, total = 0.0;
    std::array<double, kNumGrades> p{};
    for (std::size_t i = 0; i < data.rows(); ++i) {
        std::copy_n(scores.begin() + static_cast<std::ptrdiff_t>(i * kNumGrades), kNumGrades, p.begin());
        softmax_inplace(p);
        loss += w[i] * -std::log(std::max(p[static_cast<std::size_t>(data.label(i))], 1e-300));
        total += w[i];
    }
    return loss / total;
}

double score_accuracy(const std::vector<double>& scores, const TabularData& data) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.rows(); ++i) {
        const std::span<const double> z(scores.data() + i * kNumGrades, kNumGrades);
        correct += argmax(z) == data.label(i) ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(data.rows());
}

void add_round(std::vector<double>& scores, const TabularData& data, const std::array<Tree, kNumGrades>& trees,
               double lr) {
    for (std::size_t i = 0; i < data.rows(); ++i)
        for (std::size_t k = 0; k < kNumGrades; ++k)
            scores[i * kNumGrades + k] += lr * trees[k].leaf_for(data.row(i)).value[0];
}

}  // namespace

std::array<double, kNumGrades> GbmModel::raw_scores(std::span<const double> x) const {
    std::array<double, kNumGrades> z = base_scores;
    for (const auto& round : rounds)
        for (std::size_t k = 0; k < kNumGrades; ++k) z[k] += learning_rate * round[k].leaf_for(x).value[0];
    return z;
}

ProbabilityVector GbmModel::predict_proba(std::span<const double> x) const {
    auto z = raw_scores(x);
    softmax_inplace(z);
    return validate_probability(z);
}

GbmModel fit_gbm(const TabularData& train, const TabularData* valid, const TrainConfig& cfg, GbmTrainLog* log) {
    cfg.validate();
    if (train.cols() == 0) throw Error(ErrorCode::InvalidArgument, "training data has no features");
    std::array<bool, kNumGrades> present{};
    for (int y : train.labels()) present[static_cast<std::size_t>(y)] = true;
    if (std::count(present.begin(), present.end(), true) < 2)
        throw Error(ErrorCode::SingleClassTrain, "training set holds fewer than two distinct grades");
    if (valid != nullptr && valid->schema() != train.schema())
        throw Error(ErrorCode::SchemaMismatch, "validation schema differs from training schema");
    if (valid != nullptr && valid->rows() == 0) valid = nullptr;

    const std::size_t n = train.rows();
    const auto cw = class_weights(train.labels(), cfg.class_weighting);
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) w[i] = cw[static_cast<std::size_t>(train.label(i))];

    GbmModel model;
    model.feature_schema = train.schema();
    model.learning_rate = cfg.learning_rate;
    {
        std::array<double, kNumGrades> mass{};
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            mass[static_cast<std::size_t>(train.label(i))] += w[i];
            total += w[i];
        }
        for (std::size_t k = 0; k < kNumGrades; ++k)
            model.base_scores[k] = std::log(std::max(mass[k] / total, kPriorFloor));
    }

    std::vector<double> scores(n * kNumGrades);
    for (std::size_t i = 0; i < n; ++i)
        std::copy(model.base_scores.begin(), model.base_scores.end(), scores.begin() + static_cast<std::ptrdiff_t>(i * kNumGrades));
    std::vector<double> valid_scores;
    if (valid != nullptr) {
        valid_scores.resize(valid->rows() * kNumGrades);
        for (std::size_t i = 0; i < valid->rows(); ++i)
            std::copy(model.base_scores.begin(), model.base_scores.end(),
                      valid_scores.begin() + static_cast<std::ptrdiff_t>(i * kNumGrades));
    }

    GbmTrainLog local;
    local.train_loss.push_back(weighted_log_loss(scores, train, w));
    double best_acc = -1.0;
    int since_improve = 0;
    if (valid != nullptr) {
        best_acc = score_accuracy(valid_scores, *valid);
        local.valid_accuracy.push_back(best_acc);
        local.best_valid_accuracy.push_back(best_acc);
    }

    const auto presorted = detail::presort(train);
    const detail::GrowParams params{cfg.max_depth, cfg.min_leaf, 0};
    Rng rng(derive_seed(cfg.seed, "gbm-subsample"));
    std::vector<std::size_t> index(n);
    std::vector<double> mask(n, 1.0);
    std::vector<double> grad(n), hess(n);
    std::array<double, kNumGrades> p{};

    for (int round = 0; round < cfg.n_trees; ++round) {
        const std::vector<std::vector<int>>* rows = &presorted;
        std::vector<std::vector<int>> sampled;
        if (cfg.subsample < 1.0) {
            const auto m = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(cfg.subsample * static_cast<double>(n))));
            std::iota(index.begin(), index.end(), 0);
            rng.shuffle(index);
            std::fill(mask.begin(), mask.end(), 0.0);
            for (std::size_t i = 0; i < m; ++i) mask[index[i]] = 1.0;
            sampled = detail::filter_rows(presorted, mask);
            rows = &sampled;
        }

        std::array<Tree, kNumGrades> trees;
        std::vector<double> probs(n * kNumGrades);
        for (std::size_t i = 0; i < n; ++i) {
            std::copy_n(scores.begin() + static_cast<std::ptrdiff_t>(i * kNumGrades), kNumGrades, p.begin());
            softmax_inplace(p);
            std::copy(p.begin(), p.end(), probs.begin() + static_cast<std::ptrdiff_t>(i * kNumGrades));
        }
        for (std::size_t k = 0; k < kNumGrades; ++k) {
            for (std::size_t i = 0; i < n; ++i) {
                const double pk = probs[i * kNumGrades + k];
                const double yk = train.label(i) == static_cast<int>(k) ? 1.0 : 0.0;
                grad[i] = w[i] * (pk - yk);
                hess[i] = std::max(w[i] * pk * (1.0 - pk), kMinHessian);
            }
            const detail::NewtonCriterion crit{&grad, &hess, cfg.l2_leaf};
            trees[k] = detail::TreeGrower<detail::NewtonCriterion>(train, crit, params, nullptr).grow(*rows);
        }

        add_round(scores, train, trees, cfg.learning_rate);
        model.rounds.push_back(std::move(trees));
        local.train_loss.push_back(weighted_log_loss(scores, train, w));
        local.rounds_run = round + 1;

        if (valid != nullptr) {
            add_round(valid_scores, *valid, model.rounds.back(), cfg.learning_rate);
            const double acc = score_accuracy(valid_scores, *valid);
            local.valid_accuracy.push_back(acc);
            if (acc > best_acc) {
                best_acc = acc;
                local.best_round = round + 1;
                since_improve = 0;
            } else {
                ++since_improve;
            }
            local.best_valid_accuracy.push_back(best_acc);
            if (cfg.early_stop_patience > 0 && since_improve >= cfg.early_stop_patience) {
                local.stopped_early = true;
                break;
            }
        }
    }

    if (valid == nullptr)
        local.best_round = local.rounds_run;
    else
        model.rounds.resize(static_cast<std::size_t>(local.best_round));
    if (log != nullptr) *log = std::move(local);
    return model;
}

}  // namespace kgdg::learn
