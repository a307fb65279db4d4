#pragma once

// Exact-split CART growth shared by the boosting and forest learners.
//
// Every node keeps, per feature, its rows sorted by that feature's value
// (ties by row index). Splitting stable-partitions those lists, so a split
// scan is linear in the node size. Candidate thresholds are midpoints between
// consecutive distinct values. Among equal gains the split whose left row set
// has the smallest hash key wins, then the lowest (feature, threshold).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "kgdg/learn.hpp"
#include "kgdg/util.hpp"

namespace kgdg::learn::detail {

struct GrowParams {
    int max_depth = 3;
    int min_leaf = 1;
    /// Features examined per node; 0 or >= F means all of them.
    int max_features = 0;
    double min_gain = 1e-12;
};

/// Row indices sorted by each feature value, ties by row index.
inline std::vector<std::vector<int>> presort(const TabularData& data) {
    std::vector<std::vector<int>> sorted(data.cols());
    for (std::size_t f = 0; f < data.cols(); ++f) {
        auto& idx = sorted[f];
        idx.resize(data.rows());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
            return data.at(static_cast<std::size_t>(a), f) < data.at(static_cast<std::size_t>(b), f);
        });
    }
    return sorted;
}

// ---------------------------------------------------------------------------
// criteria

struct GradStats {
    double g = 0.0;
    double h = 0.0;
    int n = 0;

    GradStats& operator+=(const GradStats& o) {
        g += o.g;
        h += o.h;
        n += o.n;
        return *this;
    }
    friend GradStats operator-(GradStats a, const GradStats& b) {
        a.g -= b.g;
        a.h -= b.h;
        a.n -= b.n;
        return a;
    }
};

/// Second-order regression criterion for one boosting tree.
struct NewtonCriterion {
    using Stats = GradStats;
    const std::vector<double>* grad;
    const std::vector<double>* hess;
    double lambda;

    Stats row(int i) const { return {(*grad)[static_cast<std::size_t>(i)], (*hess)[static_cast<std::size_t>(i)], 1}; }
    double score(const Stats& s) const { return s.g * s.g / (s.h + lambda); }
    void leaf(const Stats& s, std::array<double, kNumGrades>& out) const {
        out.fill(0.0);
        out[0] = -s.g / (s.h + lambda);
    }
};

struct ClassStats {
    std::array<double, kNumGrades> w{};
    double total = 0.0;
    int n = 0;

    ClassStats& operator+=(const ClassStats& o) {
        for (std::size_t c = 0; c < kNumGrades; ++c) w[c] += o.w[c];
        total += o.total;
        n += o.n;
        return *this;
    }
    friend ClassStats operator-(ClassStats a, const ClassStats& b) {
        for (std::size_t c = 0; c < kNumGrades; ++c) a.w[c] -= b.w[c];
        a.total -= b.total;
        a.n -= b.n;
        return a;
    }
};

/// Weighted Gini impurity decrease; leaves hold class frequencies.
struct GiniCriterion {
    using Stats = ClassStats;
    const std::vector<int>* labels;
    const std::vector<double>* weights;

    Stats row(int i) const {
        Stats s;
        const double w = (*weights)[static_cast<std::size_t>(i)];
        s.w[static_cast<std::size_t>((*labels)[static_cast<std::size_t>(i)])] = w;
        s.total = w;
        s.n = 1;
        return s;
    }
    double score(const Stats& s) const {
        if (s.total <= 0.0) return 0.0;
        double sq = 0.0;
        for (double v : s.w) sq += v * v;
        return sq / s.total;
    }
    void leaf(const Stats& s, std::array<double, kNumGrades>& out) const {
        for (std::size_t c = 0; c < kNumGrades; ++c) out[c] = s.total > 0.0 ? s.w[c] / s.total : 0.0;
    }
};

// ---------------------------------------------------------------------------
// growth

template <typename Criterion>
class TreeGrower {
public:
    using Stats = typename Criterion::Stats;

    TreeGrower(const TabularData& data, const Criterion& crit, const GrowParams& params, Rng* rng)
        : data_(data), crit_(crit), params_(params), rng_(rng), goes_left_(data.rows(), 0) {}

    /// `node_rows[f]` must hold the participating rows sorted by feature f.
    Tree grow(std::vector<std::vector<int>> node_rows) {
        Tree tree;
        build(tree, std::move(node_rows), 0);
        return tree;
    }

private:
    struct Split {
        int feature = -1;
        double threshold = 0.0;
        double gain = 0.0;
        std::uint64_t key = 0;
    };

    static std::uint64_t row_key(int row) {
        std::uint64_t z = static_cast<std::uint64_t>(row) + 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    int build(Tree& tree, std::vector<std::vector<int>> rows, int depth) {
        const int id = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        Stats total;
        for (int r : rows[0]) total += crit_.row(r);
        crit_.leaf(total, tree.nodes[static_cast<std::size_t>(id)].value);

        if (depth >= params_.max_depth || total.n < 2 * params_.min_leaf) return id;
        const Split split = find_split(rows, total);
        if (split.feature < 0) return id;

        const std::size_t f = static_cast<std::size_t>(split.feature);
        for (int r : rows[0])
            goes_left_[static_cast<std::size_t>(r)] =
                data_.at(static_cast<std::size_t>(r), f) <= split.threshold ? 1 : 0;
        std::vector<std::vector<int>> left(rows.size()), right(rows.size());
        for (std::size_t k = 0; k < rows.size(); ++k) {
            left[k].reserve(rows[k].size());
            right[k].reserve(rows[k].size());
            for (int r : rows[k]) (goes_left_[static_cast<std::size_t>(r)] ? left[k] : right[k]).push_back(r);
        }
        rows.clear();
        rows.shrink_to_fit();

        const int l = build(tree, std::move(left), depth + 1);
        const int r = build(tree, std::move(right), depth + 1);
        TreeNode& node = tree.nodes[static_cast<std::size_t>(id)];
        node.feature = split.feature;
        node.threshold = split.threshold;
        node.left = l;
        node.right = r;
        return id;
    }

    std::vector<std::size_t> candidate_features() {
        const std::size_t nf = data_.cols();
        std::vector<std::size_t> feats(nf);
        std::iota(feats.begin(), feats.end(), 0);
        const auto want = static_cast<std::size_t>(params_.max_features);
        if (rng_ == nullptr || want == 0 || want >= nf) return feats;
        for (std::size_t i = 0; i < want; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng_->below(nf - i));
            std::swap(feats[i], feats[j]);
        }
        feats.resize(want);
        std::sort(feats.begin(), feats.end());
        return feats;
    }

    Split find_split(const std::vector<std::vector<int>>& rows, const Stats& total) {
        Split best;
        const double parent = crit_.score(total);
        for (std::size_t f : candidate_features()) {
            const auto& order = rows[f];
            Stats left;
            std::uint64_t key = 0;
            for (std::size_t k = 0; k + 1 < order.size(); ++k) {
                left += crit_.row(order[k]);
                key ^= row_key(order[k]);
                const double v = data_.at(static_cast<std::size_t>(order[k]), f);
                const double next = data_.at(static_cast<std::size_t>(order[k + 1]), f);
                if (!(v < next)) continue;
                const Stats right = total - left;
                if (left.n < params_.min_leaf || right.n < params_.min_leaf) continue;
                const double gain = crit_.score(left) + crit_.score(right) - parent;
                if (!(gain > params_.min_gain)) continue;
                // Gains within summation noise are ties. Ties go to the left row
                // set with the smaller key, which does not depend on column order;
                // the same row set reached through a later column keeps the earlier one.
                const double slack = 1e-10 * std::max(1.0, std::abs(best.gain));
                const bool better = best.feature < 0 || gain > best.gain + slack ||
                                    (gain >= best.gain - slack && key < best.key);
                if (better) {
                    double t = v + (next - v) / 2.0;
                    if (!(t < next)) t = v;
                    best = {static_cast<int>(f), t, gain, key};
                }
            }
        }
        return best;
    }

    const TabularData& data_;
    Criterion crit_;
    GrowParams params_;
    Rng* rng_;
    std::vector<char> goes_left_;
};

/// Restricts presorted lists to rows with a positive weight.
inline std::vector<std::vector<int>> filter_rows(const std::vector<std::vector<int>>& sorted,
                                                 const std::vector<double>& weight) {
    std::vector<std::vector<int>> out(sorted.size());
    for (std::size_t f = 0; f < sorted.size(); ++f) {
        out[f].reserve(sorted[f].size());
        for (int r : sorted[f])
            if (weight[static_cast<std::size_t>(r)] > 0.0) out[f].push_back(r);
    }
    return out;
}

}  // namespace kgdg::learn::detail
