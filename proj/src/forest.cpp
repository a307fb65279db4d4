#include <cmath>
#include <string>

#include "kgdg/learn.hpp"
#include "kgdg/util.hpp"
#include "tree_builder.hpp"

namespace kgdg::learn {

namespace {

int features_per_split(const TrainConfig& cfg, std::size_t n_features) {
    if (cfg.max_features > 0) return cfg.max_features;
    return std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(n_features)))));
}

Tree grow_gini(const TabularData& train, const std::vector<std::vector<int>>& presorted,
               const std::vector<double>& weights, const detail::GrowParams& params, Rng* rng) {
    const detail::GiniCriterion crit{&train.labels(), &weights};
    return detail::TreeGrower<detail::GiniCriterion>(train, crit, params, rng)
        .grow(detail::filter_rows(presorted, weights));
}

void require_training_rows(const TabularData& train) {
    if (train.rows() == 0) throw Error(ErrorCode::EmptyEvaluation, "training data is empty");
    if (train.cols() == 0) throw Error(ErrorCode::InvalidArgument, "training data has no features");
}

}  // namespace

ProbabilityVector ForestModel::predict_proba(std::span<const double> x) const {
    std::array<double, kNumGrades> p{};
    for (const Tree& t : trees) {
        const auto& v = t.leaf_for(x).value;
        for (std::size_t c = 0; c < kNumGrades; ++c) p[c] += v[c];
    }
    for (double& v : p) v /= static_cast<double>(trees.size());
    return validate_probability(p);
}

ForestModel fit_forest(const TabularData& train, const TrainConfig& cfg) {
    cfg.validate();
    require_training_rows(train);
    if (cfg.n_trees < 1) throw Error(ErrorCode::InvalidConfig, "forest needs at least one tree");
    const std::size_t n = train.rows();
    const auto cw = class_weights(train.labels(), cfg.class_weighting);
    const auto presorted = detail::presort(train);
    const detail::GrowParams params{cfg.forest_max_depth, cfg.min_leaf, features_per_split(cfg, train.cols())};

    ForestModel m;
    m.feature_schema = train.schema();
    std::vector<double> weights(n);
    for (int t = 0; t < cfg.n_trees; ++t) {
        Rng rng(derive_seed(cfg.seed, "forest-tree-" + std::to_string(t)));
        if (cfg.bootstrap) {
            std::fill(weights.begin(), weights.end(), 0.0);
            for (std::size_t i = 0; i < n; ++i) weights[static_cast<std::size_t>(rng.below(n))] += 1.0;
        } else {
            std::fill(weights.begin(), weights.end(), 1.0);
        }
        for (std::size_t i = 0; i < n; ++i) weights[i] *= cw[static_cast<std::size_t>(train.label(i))];
        m.trees.push_back(grow_gini(train, presorted, weights, params, &rng));
    }
    return m;
}

Tree fit_decision_tree(const TabularData& train, const TrainConfig& cfg) {
    cfg.validate();
    require_training_rows(train);
    const auto cw = class_weights(train.labels(), cfg.class_weighting);
    std::vector<double> weights(train.rows());
    for (std::size_t i = 0; i < train.rows(); ++i) weights[i] = cw[static_cast<std::size_t>(train.label(i))];
    const detail::GrowParams params{cfg.forest_max_depth, cfg.min_leaf, 0};
    return grow_gini(train, detail::presort(train), weights, params, nullptr);
}

}  // namespace kgdg::learn
