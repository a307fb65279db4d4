#pragma once

#include <array>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "kgdg/core.hpp"
#include "kgdg/data_io.hpp"

namespace kgdg::learn {

using io::ModelKind;

/// Dense row-major design matrix with grade labels.
class TabularData {
public:
    TabularData() = default;
    explicit TabularData(std::vector<std::string> schema) : schema_(std::move(schema)) {}

    static TabularData from_examples(std::span<const LabeledExample> examples, FeatureSet set);

    void add_row(std::span<const double> row, int label);

    std::size_t rows() const noexcept { return labels_.size(); }
    std::size_t cols() const noexcept { return schema_.size(); }
    double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
    std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols(), cols()}; }
    int label(std::size_t r) const { return labels_[r]; }

    const std::vector<std::string>& schema() const noexcept { return schema_; }
    const std::vector<int>& labels() const noexcept { return labels_; }
    const std::vector<double>& values() const noexcept { return values_; }

    TabularData subset(std::span<const std::size_t> rows) const;
    /// Reorders columns; column j of the result is column order[j] of this.
    TabularData permute_columns(std::span<const std::size_t> order) const;

    /// Stable digest of schema, values and labels.
    std::string data_hash() const;

private:
    std::vector<std::string> schema_;
    std::vector<double> values_;
    std::vector<int> labels_;
};

struct TrainConfig {
    ModelKind model_kind = ModelKind::Gbm;
    FeatureSet feature_set = FeatureSet::LesionsOnly;
    int n_trees = 200;
    int max_depth = 3;
    double learning_rate = 0.1;
    int min_leaf = 5;
    double subsample = 1.0;
    double l2_leaf = 1.0;
    int logistic_steps = 2000;
    double logistic_lr = 0.1;
    int k_neighbors = 5;
    bool class_weighting = false;
    std::uint64_t seed = 0;
    int early_stop_patience = 10;
    // forest-only knobs
    int forest_max_depth = 8;
    int max_features = 0;  // 0 selects floor(sqrt(F))
    bool bootstrap = true;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

/// N / (5 * N_c) for every grade present in `labels`; 1 when disabled. Absent
/// grades get 0.
std::array<double, kNumGrades> class_weights(std::span<const int> labels, bool enabled);

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    std::array<double, kNumGrades> value{};
};

/// Binary tree; rows with x[feature] <= threshold go left.
struct Tree {
    std::vector<TreeNode> nodes;

    const TreeNode& leaf_for(std::span<const double> x) const;
    nlohmann::json to_json(bool vector_leaves) const;
    static Tree from_json(const nlohmann::json& j, bool vector_leaves);
};

// ---------------------------------------------------------------------------
// gradient boosting

struct GbmModel {
    std::vector<std::string> feature_schema;
    std::array<double, kNumGrades> base_scores{};
    double learning_rate = 0.1;
    /// rounds[r][k]: regression tree for grade k in boosting round r.
    std::vector<std::array<Tree, kNumGrades>> rounds;

    std::array<double, kNumGrades> raw_scores(std::span<const double> x) const;
    ProbabilityVector predict_proba(std::span<const double> x) const;
};

struct GbmTrainLog {
    int rounds_run = 0;
    int best_round = 0;
    bool stopped_early = false;
    /// Weighted multinomial log-loss on the training rows, index 0 = base model.
    std::vector<double> train_loss;
    /// Validation accuracy per round (index 0 = base model); empty without validation.
    std::vector<double> valid_accuracy;
    /// Best validation accuracy seen so far, per round.
    std::vector<double> best_valid_accuracy;
};

/// Multiclass boosting: one Newton regression tree per grade per round, fit to
/// the gradient of the softmax cross-entropy. With `valid`, training stops when
/// validation accuracy has not improved for `early_stop_patience` rounds and
/// the model is truncated to the best round.
GbmModel fit_gbm(const TabularData& train, const TabularData* valid, const TrainConfig& cfg,
                 GbmTrainLog* log = nullptr);

// ---------------------------------------------------------------------------
// logistic regression

struct Standardizer {
    std::vector<double> mean;
    std::vector<double> scale;

    static Standardizer fit(const TabularData& data);
    std::vector<double> apply(std::span<const double> x) const;
    TabularData apply(const TabularData& data) const;
};

struct LogisticModel {
    std::vector<std::string> feature_schema;
    Standardizer standardizer;
    /// Row c holds the weights for grade c followed by its bias: 5 x (F + 1).
    std::vector<double> params;

    ProbabilityVector predict_proba(std::span<const double> x) const;
};

struct LossAndGradient {
    double loss = 0.0;
    std::vector<double> gradient;
};

/// Class-weighted mean cross-entropy of a multinomial linear model and its
/// gradient w.r.t. the 5 x (F + 1) parameter block.
LossAndGradient logistic_loss_gradient(std::span<const double> params, const TabularData& data,
                                       const std::array<double, kNumGrades>& weights);

/// Full-batch gradient descent on standardized inputs from a zero start.
/// Accepts single-grade training sets.
LogisticModel fit_logistic(const TabularData& train, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// random forest

struct ForestModel {
    std::vector<std::string> feature_schema;
    std::vector<Tree> trees;

    ProbabilityVector predict_proba(std::span<const double> x) const;
};

ForestModel fit_forest(const TabularData& train, const TrainConfig& cfg);

/// Single CART classification tree (Gini) on all rows and all features.
Tree fit_decision_tree(const TabularData& train, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// k nearest neighbours

struct KnnModel {
    std::vector<std::string> feature_schema;
    Standardizer standardizer;
    TabularData reference;  // standardized training rows
    int k = 5;

    ProbabilityVector predict_proba(std::span<const double> x) const;
};

KnnModel fit_knn(const TabularData& train, const TrainConfig& cfg);
ProbabilityVector predict_knn(const TabularData& train, std::span<const double> x, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// uniform surface

using SymbolicModel = std::variant<GbmModel, LogisticModel, ForestModel, KnnModel>;

/// Dispatches on cfg.model_kind. `valid` is only used by gbm.
SymbolicModel fit_symbolic(const TabularData& train, const TabularData* valid, const TrainConfig& cfg,
                           GbmTrainLog* log = nullptr);

const std::vector<std::string>& model_schema(const SymbolicModel& model);
ModelKind model_kind(const SymbolicModel& model);

/// Throws SchemaMismatch when x has the wrong arity.
ProbabilityVector predict_proba(const SymbolicModel& model, std::span<const double> x);
/// Maps the feature vector through the model's schema.
ProbabilityVector predict_proba(const SymbolicModel& model, const FeatureVector& f);

std::string train_fingerprint(const TabularData& train, const TrainConfig& cfg);

io::ModelArtifact to_artifact(const SymbolicModel& model, const std::string& fingerprint);
SymbolicModel from_artifact(const io::ModelArtifact& artifact);

// ---------------------------------------------------------------------------
// cross-validation

struct CrossValidationResult {
    std::vector<double> fold_accuracy;
    std::vector<double> fold_macro_f1;
    double accuracy_mean = 0.0;
    double accuracy_std = 0.0;
    double macro_f1_mean = 0.0;
    double macro_f1_std = 0.0;
};

/// Stratified k-fold. Throws TooFewPerClass if a present grade has fewer
/// than `folds` examples.
CrossValidationResult cross_validate(const TabularData& data, const TrainConfig& cfg, int folds);

}  // namespace kgdg::learn
