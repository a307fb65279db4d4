#pragma once

// Slow, obviously-correct reference implementations. Nothing here shares code
// with the library.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "kgdg/core.hpp"

namespace oracle {

inline double accuracy(const std::vector<int>& t, const std::vector<int>& p) {
    int hit = 0;
    for (std::size_t i = 0; i < t.size(); ++i) hit += t[i] == p[i];
    return static_cast<double>(hit) / static_cast<double>(t.size());
}

/// F1 per class from the harmonic mean, 0 when undefined; averaged over
/// classes present in the truth.
inline double macro_f1(const std::vector<int>& t, const std::vector<int>& p) {
    std::set<int> present(t.begin(), t.end());
    double sum = 0.0;
    for (int c : present) {
        double tp = 0, pred = 0, truth = 0;
        for (std::size_t i = 0; i < t.size(); ++i) {
            tp += (t[i] == c && p[i] == c);
            pred += (p[i] == c);
            truth += (t[i] == c);
        }
        const double precision = pred > 0 ? tp / pred : 0.0;
        const double recall = truth > 0 ? tp / truth : 0.0;
        sum += precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
    }
    return sum / static_cast<double>(present.size());
}

/// Fraction of (positive, negative) pairs ordered correctly, ties count half.
inline double pair_auc(const std::vector<double>& s, const std::vector<bool>& pos) {
    double good = 0, pairs = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (pos[i] && !pos[j]) {
                pairs += 1;
                good += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
            }
    return good / pairs;
}

/// Mean of pair_auc over grades with at least one positive and one negative;
/// NaN when there are none.
inline double macro_auc(const std::vector<int>& t, const std::vector<std::array<double, 5>>& probs) {
    double sum = 0.0;
    int n = 0;
    for (int g = 0; g < 5; ++g) {
        std::vector<double> s;
        std::vector<bool> pos;
        bool any_pos = false, any_neg = false;
        for (std::size_t i = 0; i < t.size(); ++i) {
            s.push_back(probs[i][static_cast<std::size_t>(g)]);
            pos.push_back(t[i] == g);
            (t[i] == g ? any_pos : any_neg) = true;
        }
        if (any_pos && any_neg) {
            sum += pair_auc(s, pos);
            ++n;
        }
    }
    return n == 0 ? std::nan("") : sum / n;
}

/// Rectangle overlap by interval arithmetic.
inline double iou(double ax, double ay, double aw, double ah, double bx, double by, double bw, double bh) {
    const double ix = std::max(0.0, std::min(ax + aw, bx + bw) - std::max(ax, bx));
    const double iy = std::max(0.0, std::min(ay + ah, by + bh) - std::max(ay, by));
    const double inter = ix * iy;
    return inter / (aw * ah + bw * bh - inter);
}

/// KL between 1-d Gaussians.
inline double gauss_kl(double mp, double vp, double mq, double vq) {
    return 0.5 * (vp / vq + (mq - mp) * (mq - mp) / vq - 1.0 + std::log(vq / vp));
}

/// Central finite-difference gradient.
inline std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> x, double h = 1e-6) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f(x);
        x[i] = keep - h;
        const double down = f(x);
        x[i] = keep;
        g[i] = (up - down) / (2 * h);
    }
    return g;
}

/// Rule grade written as nested conditionals straight from the clinical table.
inline int rule_grade(const kgdg::FeatureVector& f, std::int64_t severe_hem = 20, std::int64_t cws_severe = 5) {
    const auto hem = f.hard_hemorrhage_count + f.soft_hemorrhage_count;
    if (f.neovascularization_present || f.subhyaloid_present) return 4;
    if ((hem > severe_hem && f.hemorrhage_quadrants == 4) || f.cotton_wool_count >= cws_severe) return 3;
    if (f.cotton_wool_count >= 1 || f.exudate_count >= 1 || hem >= 1) return 2;
    if (f.microaneurysm_count >= 1) return 1;
    return 0;
}

/// Every file under `dir` with its bytes, keyed by relative path.
inline std::vector<std::pair<std::string, std::string>> tree_bytes(const std::filesystem::path& dir) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::FILE* fp = std::fopen(e.path().c_str(), "rb");
        std::string bytes;
        char buf[4096];
        for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, fp)) > 0;) bytes.append(buf, n);
        std::fclose(fp);
        out.emplace_back(std::filesystem::relative(e.path(), dir).string(), bytes);
    }
    std::sort(out.begin(), out.end());
    return out;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    auto p = std::filesystem::temp_directory_path() / ("kgdg-test-" + tag + "-" + std::to_string(rng()));
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace oracle
