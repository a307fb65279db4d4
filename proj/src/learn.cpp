#include "kgdg/learn.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "kgdg/metrics.hpp"
#include "kgdg/util.hpp"

namespace kgdg::learn {

using nlohmann::json;

// ---------------------------------------------------------------------------
// TabularData

TabularData TabularData::from_examples(std::span<const LabeledExample> examples, FeatureSet set) {
    TabularData d(feature_schema(set));
    d.values_.reserve(examples.size() * d.cols());
    d.labels_.reserve(examples.size());
    for (const auto& ex : examples) d.add_row(to_row(ex.features, set), ex.grade.value());
    return d;
}

void TabularData::add_row(std::span<const double> row, int label) {
    if (row.size() != cols())
        throw Error(ErrorCode::SchemaMismatch,
                    "row has " + std::to_string(row.size()) + " values, schema has " + std::to_string(cols()));
    if (label < 0 || label >= kNumGrades) throw Error(ErrorCode::InvalidArgument, "label outside [0,4]");
    values_.insert(values_.end(), row.begin(), row.end());
    labels_.push_back(label);
}

TabularData TabularData::subset(std::span<const std::size_t> rows) const {
    TabularData d(schema_);
    d.values_.reserve(rows.size() * cols());
    d.labels_.reserve(rows.size());
    for (std::size_t r : rows) d.add_row(row(r), labels_.at(r));
    return d;
}

TabularData TabularData::permute_columns(std::span<const std::size_t> order) const {
    if (order.size() != cols()) throw Error(ErrorCode::InvalidArgument, "column permutation has wrong length");
    std::vector<std::string> schema;
    for (std::size_t c : order) schema.push_back(schema_.at(c));
    TabularData d(std::move(schema));
    std::vector<double> buf(cols());
    for (std::size_t r = 0; r < rows(); ++r) {
        for (std::size_t j = 0; j < order.size(); ++j) buf[j] = at(r, order[j]);
        d.add_row(buf, labels_[r]);
    }
    return d;
}

std::string TabularData::data_hash() const {
    Fnv1a h;
    for (const auto& name : schema_) h.update(name).update(std::string_view(","));
    for (double v : values_) h.update(v);
    for (int y : labels_) h.update(static_cast<std::int64_t>(y));
    return h.hex();
}

// ---------------------------------------------------------------------------
// TrainConfig

void TrainConfig::validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, "symbolic: " + what); };
    if (n_trees < 0) fail("n_trees must be >= 0");
    if (max_depth < 1 || forest_max_depth < 1) fail("tree depth must be >= 1");
    if (!(learning_rate > 0.0 && learning_rate <= 1.0)) fail("learning_rate must be in (0,1]");
    if (min_leaf < 1) fail("min_leaf must be >= 1");
    if (!(subsample > 0.0 && subsample <= 1.0)) fail("subsample must be in (0,1]");
    if (!(l2_leaf >= 0.0)) fail("l2_leaf must be >= 0");
    if (logistic_steps < 1) fail("logistic_steps must be >= 1");
    if (!(logistic_lr > 0.0)) fail("logistic_lr must be > 0");
    if (k_neighbors < 1) fail("k_neighbors must be >= 1");
    if (early_stop_patience < 0) fail("early_stop_patience must be >= 0");
    if (max_features < 0) fail("max_features must be >= 0");
}

json TrainConfig::to_json() const {
    return {{"model_kind", std::string(io::model_kind_name(model_kind))},
            {"feature_set", std::string(feature_set_name(feature_set))},
            {"n_trees", n_trees},
            {"max_depth", max_depth},
            {"learning_rate", learning_rate},
            {"min_leaf", min_leaf},
            {"subsample", subsample},
            {"l2_leaf", l2_leaf},
            {"logistic_steps", logistic_steps},
            {"logistic_lr", logistic_lr},
            {"k_neighbors", k_neighbors},
            {"class_weighting", class_weighting},
            {"seed", seed},
            {"early_stop_patience", early_stop_patience},
            {"forest_max_depth", forest_max_depth},
            {"max_features", max_features},
            {"bootstrap", bootstrap}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "'symbolic' section must be an object");
    TrainConfig c;
    const json defaults = c.to_json();
    for (const auto& [key, value] : j.items())
        if (!defaults.contains(key)) throw Error(ErrorCode::InvalidConfig, "symbolic: unknown key '" + key + "'");
    try {
        if (j.contains("model_kind")) c.model_kind = io::parse_model_kind(j["model_kind"].get<std::string>());
        if (j.contains("feature_set")) c.feature_set = parse_feature_set(j["feature_set"].get<std::string>());
        c.n_trees = j.value("n_trees", c.n_trees);
        c.max_depth = j.value("max_depth", c.max_depth);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.min_leaf = j.value("min_leaf", c.min_leaf);
        c.subsample = j.value("subsample", c.subsample);
        c.l2_leaf = j.value("l2_leaf", c.l2_leaf);
        c.logistic_steps = j.value("logistic_steps", c.logistic_steps);
        c.logistic_lr = j.value("logistic_lr", c.logistic_lr);
        c.k_neighbors = j.value("k_neighbors", c.k_neighbors);
        c.class_weighting = j.value("class_weighting", c.class_weighting);
        c.seed = j.value("seed", c.seed);
        c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
        c.forest_max_depth = j.value("forest_max_depth", c.forest_max_depth);
        c.max_features = j.value("max_features", c.max_features);
        c.bootstrap = j.value("bootstrap", c.bootstrap);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("symbolic: ") + e.what());
    }
    c.validate();
    return c;
}

std::array<double, kNumGrades> class_weights(std::span<const int> labels, bool enabled) {
    std::array<double, kNumGrades> counts{};
    for (int y : labels) counts[static_cast<std::size_t>(y)] += 1.0;
    std::array<double, kNumGrades> w{};
    const double n = static_cast<double>(labels.size());
    for (std::size_t c = 0; c < kNumGrades; ++c) {
        if (counts[c] == 0.0) continue;
        w[c] = enabled ? n / (kNumGrades * counts[c]) : 1.0;
    }
    return w;
}

// ---------------------------------------------------------------------------
// Tree

const TreeNode& Tree::leaf_for(std::span<const double> x) const {
    std::size_t i = 0;
    while (nodes[i].feature >= 0)
        i = static_cast<std::size_t>(x[static_cast<std::size_t>(nodes[i].feature)] <= nodes[i].threshold
                                         ? nodes[i].left
                                         : nodes[i].right);
    return nodes[i];
}

json Tree::to_json(bool vector_leaves) const {
    json f = json::array(), t = json::array(), l = json::array(), r = json::array(), v = json::array();
    for (const auto& n : nodes) {
        f.push_back(n.feature);
        t.push_back(n.threshold);
        l.push_back(n.left);
        r.push_back(n.right);
        if (vector_leaves)
            v.push_back(n.value);
        else
            v.push_back(n.value[0]);
    }
    return {{"feature", f}, {"threshold", t}, {"left", l}, {"right", r}, {"value", v}};
}

Tree Tree::from_json(const json& j, bool vector_leaves) {
    Tree tree;
    const auto f = j.at("feature").get<std::vector<int>>();
    const auto t = j.at("threshold").get<std::vector<double>>();
    const auto l = j.at("left").get<std::vector<int>>();
    const auto r = j.at("right").get<std::vector<int>>();
    const json& v = j.at("value");
    const std::size_t n = f.size();
    if (n == 0 || t.size() != n || l.size() != n || r.size() != n || v.size() != n)
        throw Error(ErrorCode::CorruptArtifact, "tree arrays have inconsistent lengths");
    tree.nodes.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        TreeNode& node = tree.nodes[i];
        node.feature = f[i];
        node.threshold = t[i];
        node.left = l[i];
        node.right = r[i];
        if (vector_leaves)
            node.value = v[i].get<std::array<double, kNumGrades>>();
        else
            node.value[0] = v[i].get<double>();
        const auto in_range = [&](int c) { return c > static_cast<int>(i) && c < static_cast<int>(n); };
        if (node.feature >= 0 && (!in_range(node.left) || !in_range(node.right)))
            throw Error(ErrorCode::CorruptArtifact, "tree child index out of range");
    }
    return tree;
}

// ---------------------------------------------------------------------------
// uniform surface

SymbolicModel fit_symbolic(const TabularData& train, const TabularData* valid, const TrainConfig& cfg,
                           GbmTrainLog* log) {
    switch (cfg.model_kind) {
        case ModelKind::Gbm: return fit_gbm(train, valid, cfg, log);
        case ModelKind::Logistic: return fit_logistic(train, cfg);
        case ModelKind::Forest: return fit_forest(train, cfg);
        case ModelKind::Knn: return fit_knn(train, cfg);
    }
    throw Error(ErrorCode::InternalInvariant, "unhandled model kind");
}

const std::vector<std::string>& model_schema(const SymbolicModel& model) {
    return std::visit([](const auto& m) -> const std::vector<std::string>& { return m.feature_schema; }, model);
}

ModelKind model_kind(const SymbolicModel& model) {
    return static_cast<ModelKind>(model.index());
}

ProbabilityVector predict_proba(const SymbolicModel& model, std::span<const double> x) {
    if (x.size() != model_schema(model).size())
        throw Error(ErrorCode::SchemaMismatch, "input has " + std::to_string(x.size()) +
                                                   " features, model expects " +
                                                   std::to_string(model_schema(model).size()));
    return std::visit([&](const auto& m) { return m.predict_proba(x); }, model);
}

ProbabilityVector predict_proba(const SymbolicModel& model, const FeatureVector& f) {
    const auto& schema = model_schema(model);
    for (FeatureSet set : {FeatureSet::LesionsOnly, FeatureSet::LesionsVein})
        if (schema == feature_schema(set)) return predict_proba(model, to_row(f, set));
    throw Error(ErrorCode::SchemaMismatch, "model schema is not one of the fixed feature schemas");
}

std::string train_fingerprint(const TabularData& train, const TrainConfig& cfg) {
    return Fnv1a().update(cfg.to_json().dump()).update(train.data_hash()).hex();
}

io::ModelArtifact to_artifact(const SymbolicModel& model, const std::string& fingerprint) {
    io::ModelArtifact a;
    a.model_kind = model_kind(model);
    a.feature_schema = model_schema(model);
    a.input_arity = a.feature_schema.size();
    a.train_fingerprint = fingerprint;
    std::visit(
        [&](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            json p = json::object();
            if constexpr (std::is_same_v<T, GbmModel>) {
                p["base_scores"] = m.base_scores;
                p["learning_rate"] = m.learning_rate;
                json rounds = json::array();
                for (const auto& round : m.rounds) {
                    json trees = json::array();
                    for (const auto& t : round) trees.push_back(t.to_json(false));
                    rounds.push_back(trees);
                }
                p["rounds"] = rounds;
            } else if constexpr (std::is_same_v<T, LogisticModel>) {
                p["mean"] = m.standardizer.mean;
                p["scale"] = m.standardizer.scale;
                p["params"] = m.params;
            } else if constexpr (std::is_same_v<T, ForestModel>) {
                json trees = json::array();
                for (const auto& t : m.trees) trees.push_back(t.to_json(true));
                p["trees"] = trees;
            } else {
                p["mean"] = m.standardizer.mean;
                p["scale"] = m.standardizer.scale;
                p["k"] = m.k;
                p["values"] = m.reference.values();
                p["labels"] = m.reference.labels();
            }
            a.parameters = std::move(p);
        },
        model);
    return a;
}

namespace {

void check_tree_features(const Tree& t, std::size_t arity) {
    for (const auto& n : t.nodes)
        if (n.feature >= static_cast<int>(arity))
            throw Error(ErrorCode::SchemaMismatch, "tree references feature index beyond the schema");
}

}  // namespace

SymbolicModel from_artifact(const io::ModelArtifact& a) {
    const std::size_t arity = a.feature_schema.size();
    const json& p = a.parameters;
    try {
        switch (a.model_kind) {
            case ModelKind::Gbm: {
                GbmModel m;
                m.feature_schema = a.feature_schema;
                m.base_scores = p.at("base_scores").get<std::array<double, kNumGrades>>();
                m.learning_rate = p.at("learning_rate").get<double>();
                for (const auto& round : p.at("rounds")) {
                    if (round.size() != kNumGrades)
                        throw Error(ErrorCode::CorruptArtifact, "boosting round must hold 5 trees");
                    std::array<Tree, kNumGrades> trees;
                    for (std::size_t k = 0; k < kNumGrades; ++k) {
                        trees[k] = Tree::from_json(round[k], false);
                        check_tree_features(trees[k], arity);
                    }
                    m.rounds.push_back(std::move(trees));
                }
                return m;
            }
            case ModelKind::Logistic: {
                LogisticModel m;
                m.feature_schema = a.feature_schema;
                m.standardizer.mean = p.at("mean").get<std::vector<double>>();
                m.standardizer.scale = p.at("scale").get<std::vector<double>>();
                m.params = p.at("params").get<std::vector<double>>();
                if (m.standardizer.mean.size() != arity || m.standardizer.scale.size() != arity ||
                    m.params.size() != kNumGrades * (arity + 1))
                    throw Error(ErrorCode::SchemaMismatch, "logistic parameters do not match the schema arity");
                return m;
            }
            case ModelKind::Forest: {
                ForestModel m;
                m.feature_schema = a.feature_schema;
                for (const auto& t : p.at("trees")) {
                    m.trees.push_back(Tree::from_json(t, true));
                    check_tree_features(m.trees.back(), arity);
                }
                if (m.trees.empty()) throw Error(ErrorCode::CorruptArtifact, "forest has no trees");
                return m;
            }
            case ModelKind::Knn: {
                KnnModel m;
                m.feature_schema = a.feature_schema;
                m.standardizer.mean = p.at("mean").get<std::vector<double>>();
                m.standardizer.scale = p.at("scale").get<std::vector<double>>();
                m.k = p.at("k").get<int>();
                const auto values = p.at("values").get<std::vector<double>>();
                const auto labels = p.at("labels").get<std::vector<int>>();
                if (m.standardizer.mean.size() != arity || m.standardizer.scale.size() != arity ||
                    values.size() != labels.size() * arity)
                    throw Error(ErrorCode::SchemaMismatch, "knn reference rows do not match the schema arity");
                m.reference = TabularData(a.feature_schema);
                for (std::size_t r = 0; r < labels.size(); ++r)
                    m.reference.add_row(std::span<const double>(values.data() + r * arity, arity), labels[r]);
                return m;
            }
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::CorruptArtifact, std::string("model parameters: ") + e.what());
    }
    throw Error(ErrorCode::CorruptArtifact, "unhandled model kind");
}

// ---------------------------------------------------------------------------
// cross-validation

CrossValidationResult cross_validate(const TabularData& data, const TrainConfig& cfg, int folds) {
    if (folds < 2) throw Error(ErrorCode::InvalidArgument, "cross-validation needs at least 2 folds");
    std::array<std::vector<std::size_t>, kNumGrades> by_grade;
    for (std::size_t r = 0; r < data.rows(); ++r) by_grade[static_cast<std::size_t>(data.label(r))].push_back(r);
    for (std::size_t g = 0; g < kNumGrades; ++g)
        if (!by_grade[g].empty() && by_grade[g].size() < static_cast<std::size_t>(folds))
            throw Error(ErrorCode::TooFewPerClass, "grade " + std::to_string(g) + " has " +
                                                       std::to_string(by_grade[g].size()) + " examples, fewer than " +
                                                       std::to_string(folds) + " folds");

    std::vector<int> fold_of(data.rows(), 0);
    Rng rng(derive_seed(cfg.seed, "cross-validate"));
    for (auto& rows : by_grade) {
        rng.shuffle(rows);
        for (std::size_t i = 0; i < rows.size(); ++i) fold_of[rows[i]] = static_cast<int>(i % static_cast<std::size_t>(folds));
    }

    CrossValidationResult result;
    for (int k = 0; k < folds; ++k) {
        std::vector<std::size_t> train_rows, test_rows;
        for (std::size_t r = 0; r < data.rows(); ++r) (fold_of[r] == k ? test_rows : train_rows).push_back(r);
        const TabularData train = data.subset(train_rows);
        const TabularData test = data.subset(test_rows);
        const SymbolicModel model = fit_symbolic(train, nullptr, cfg);
        std::vector<int> pred;
        pred.reserve(test.rows());
        for (std::size_t r = 0; r < test.rows(); ++r) pred.push_back(predict_proba(model, test.row(r)).argmax().value());
        result.fold_accuracy.push_back(metrics::accuracy(test.labels(), pred));
        result.fold_macro_f1.push_back(metrics::macro_f1(test.labels(), pred));
    }
    const auto acc = metrics::seeded_summary(result.fold_accuracy);
    const auto f1 = metrics::seeded_summary(result.fold_macro_f1);
    result.accuracy_mean = acc.mean;
    result.accuracy_std = acc.std;
    result.macro_f1_mean = f1.mean;
    result.macro_f1_std = f1.std;
    return result;
}

}  // namespace kgdg::learn
