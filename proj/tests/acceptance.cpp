// Acceptance checks. One [PASS]/[FAIL] line per criterion; exit status is
// nonzero if any criterion fails. Tolerances and budgets are fixed here.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>

#include "cli.hpp"
#include "kgdg/fusion.hpp"
#include "kgdg/harness.hpp"
#include "kgdg/learn.hpp"
#include "kgdg/metrics.hpp"
#include "kgdg/rules.hpp"
#include "kgdg/synth.hpp"
#include "kgdg/util.hpp"
#include "oracles.hpp"

using namespace kgdg;

namespace {

constexpr double kMetricTol = 1e-9;
constexpr double kGradientRelTol = 1e-5;
constexpr double kKlTol = 1e-12;
constexpr double kAlignTol = 1e-9;
constexpr double kVeinMargin = 0.05;
constexpr double kNeuralGap = 0.15;
constexpr double kFusionSlack = 0.01;

struct Outcome {
    bool pass = true;
    std::string detail;
};

int failures = 0;

void criterion(const std::string& name, double budget_s, const std::function<Outcome()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > budget_s) {
        o.pass = false;
        o.detail += " (over time budget " + format_fixed(budget_s, 0) + " s)";
    }
    if (!o.pass) ++failures;
    std::printf("[%s] %s: %s [%.2f s]\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
}

ProbabilityVector random_pv(Rng& rng) {
    std::array<double, 5> r{};
    double s = 0;
    for (double& v : r) s += (v = rng.uniform() * rng.uniform() + 1e-12);
    for (double& v : r) v /= s;
    return validate_probability(r);
}

// ---------------------------------------------------------------------------

Outcome fusion_coincidence() {
    Rng rng(1001);
    long pairs = 0, agree = 0, collapse_bad = 0;
    while (pairs < 100000) {
        const auto a = random_pv(rng), b = random_pv(rng);
        std::vector<double> all(a.values().begin(), a.values().end());
        all.insert(all.end(), b.values().begin(), b.values().end());
        const double top = *std::max_element(all.begin(), all.end());
        if (std::count(all.begin(), all.end(), top) != 1) continue;
        ++pairs;
        const auto g = fusion::fuse_selective(a, b).grade;
        agree += g == fusion::fuse_max_confidence(a, b).grade && g == fusion::fuse_classwise_max(a, b).grade;
        collapse_bad += fusion::fuse_weighted(a, b, {1, 0}).grade != a.argmax();
        collapse_bad += fusion::fuse_weighted(a, b, {0, 1}).grade != b.argmax();
    }
    return {agree == pairs && collapse_bad == 0,
            std::to_string(agree) + "/" + std::to_string(pairs) + " agree, " + std::to_string(collapse_bad) +
                " weight-collapse mismatches"};
}

Outcome metric_oracles() {
    long sets = 0;
    double worst = 0.0;
    auto track = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };

    // label predictions: every (truth, prediction) pair over 3 grades, n <= 6
    for (int n = 1; n <= 6; ++n) {
        long combos = 1;
        for (int i = 0; i < 2 * n; ++i) combos *= 3;
        std::vector<int> t(static_cast<std::size_t>(n)), p(static_cast<std::size_t>(n));
        for (long code = 0; code < combos; ++code) {
            long c = code;
            for (int i = 0; i < n; ++i, c /= 9) {
                t[static_cast<std::size_t>(i)] = static_cast<int>(c % 3);
                p[static_cast<std::size_t>(i)] = static_cast<int>((c / 3) % 3);
            }
            track(metrics::accuracy(t, p), oracle::accuracy(t, p));
            track(metrics::macro_f1(t, p), oracle::macro_f1(t, p));
            ++sets;
        }
    }
    // each sample takes one of four rows over 3 grades; repeated rows give ties
    const std::array<std::array<double, 5>, 4> rows{{{0.6, 0.2, 0.2, 0, 0},
                                                     {0.2, 0.5, 0.3, 0, 0},
                                                     {0.4, 0.2, 0.4, 0, 0},
                                                     {1.0 / 3, 1.0 / 3, 1.0 / 3, 0, 0}}};
    std::vector<ProbabilityVector> row_pv;
    for (const auto& r : rows) row_pv.push_back(validate_probability(r));
    long no_class_ok = 0, no_class = 0;
    for (int n = 1; n <= 6; ++n) {
        long combos = 1;
        for (int i = 0; i < n; ++i) combos *= 12;
        std::vector<int> t(static_cast<std::size_t>(n));
        std::vector<std::array<double, 5>> raw(static_cast<std::size_t>(n));
        std::vector<ProbabilityVector> probs(static_cast<std::size_t>(n));
        for (long code = 0; code < combos; ++code) {
            long c = code;
            for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i, c /= 12) {
                t[i] = static_cast<int>(c % 3);
                raw[i] = rows[static_cast<std::size_t>((c / 3) % 4)];
                probs[i] = row_pv[static_cast<std::size_t>((c / 3) % 4)];
            }
            const double want = oracle::macro_auc(t, raw);
            if (std::isnan(want)) {
                ++no_class;
                try {
                    metrics::auc_ovr_macro(t, probs);
                } catch (const Error& e) {
                    no_class_ok += e.code() == ErrorCode::NoQualifyingClass;
                }
            } else {
                track(metrics::auc_ovr_macro(t, probs), want);
            }
            ++sets;
        }
    }
    const std::vector<int> ft{0, 0, 1, 2}, fp{0, 1, 1, 2};
    const std::vector<double> fs{0.1, 0.4, 0.35, 0.8};
    const std::array<bool, 4> fpos{false, false, true, true};
    const bool fixed = std::abs(metrics::macro_f1(ft, fp) - 7.0 / 9.0) < kMetricTol &&
                       std::abs(metrics::binary_auc(fs, fpos) - 0.75) < kMetricTol &&
                       std::abs(metrics::iou({0, 0, 0.2, 0.2}, {0.1, 0.1, 0.2, 0.2}) - 1.0 / 7.0) < kMetricTol &&
                       metrics::accuracy(ft, fp) == 0.75;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%ld sets, max abs error %.2e, fixed examples %s, undefined-AUC sets %ld/%ld",
                  sets, worst, fixed ? "exact" : "WRONG", no_class_ok, no_class);
    return {worst <= kMetricTol && fixed && no_class_ok == no_class, buf};
}

learn::TabularData random_table(Rng& rng, std::size_t rows, std::size_t cols) {
    std::vector<std::string> schema;
    for (std::size_t c = 0; c < cols; ++c) schema.push_back("f" + std::to_string(c));
    learn::TabularData d(schema);
    for (std::size_t r = 0; r < rows; ++r) {
        std::vector<double> x(cols);
        for (double& v : x) v = rng.normal();
        const int label = rng.bernoulli(0.6) ? std::clamp(static_cast<int>(std::floor(x[0] + 2.5)), 0, 4)
                                             : static_cast<int>(rng.below(5));
        d.add_row(x, label);
    }
    return d;
}

Outcome learner_correctness() {
    Rng rng(1003);
    double worst_rel = 0.0;
    for (int inst = 0; inst < 20; ++inst) {
        const auto d = random_table(rng, 4 + rng.below(8), 1 + rng.below(4));
        const auto w = learn::class_weights(d.labels(), inst % 2 == 1);
        std::vector<double> params(5 * (d.cols() + 1));
        for (double& v : params) v = rng.normal() * 0.7;
        const auto g = learn::logistic_loss_gradient(params, d, w).gradient;
        const auto fd = oracle::numeric_gradient(
            [&](const std::vector<double>& p) { return learn::logistic_loss_gradient(p, d, w).loss; }, params);
        for (std::size_t i = 0; i < g.size(); ++i)
            worst_rel = std::max(worst_rel, std::abs(g[i] - fd[i]) / std::max(1.0, std::abs(fd[i])));
    }
    int loss_increases = 0;
    for (int ds = 0; ds < 5; ++ds) {
        const auto d = random_table(rng, 200, 4);
        learn::TrainConfig cfg;
        cfg.n_trees = 100;
        learn::GbmTrainLog log;
        learn::fit_gbm(d, nullptr, cfg, &log);
        if (log.train_loss.size() != 101) ++loss_increases;
        for (std::size_t r = 1; r < log.train_loss.size(); ++r)
            loss_increases += log.train_loss[r] > log.train_loss[r - 1] + 1e-12;
    }
    learn::TabularData sep({"x", "y"});
    sep.add_row(std::vector<double>{0, 0}, 0);
    sep.add_row(std::vector<double>{0, 1}, 0);
    sep.add_row(std::vector<double>{1, 0}, 1);
    sep.add_row(std::vector<double>{1, 1}, 1);
    learn::TrainConfig cfg;
    cfg.max_depth = 1;
    cfg.n_trees = 10;
    cfg.min_leaf = 1;
    const auto m = learn::fit_gbm(sep, nullptr, cfg);
    int right = 0;
    for (std::size_t r = 0; r < 4; ++r) right += m.predict_proba(sep.row(r)).argmax().value() == sep.label(r);
    char buf[160];
    std::snprintf(buf, sizeof buf, "gradient max rel error %.2e, loss increases %d, separable fixture %d/4", worst_rel,
                  loss_increases, right);
    return {worst_rel < kGradientRelTol && loss_increases == 0 && right == 4, buf};
}

FeatureVector fv(std::int64_t ma, std::int64_t ex, std::int64_t hh, std::int64_t sh, std::int64_t cws, bool sub,
                 bool nv, int quads) {
    FeatureVector f;
    f.microaneurysm_count = ma;
    f.exudate_count = ex;
    f.hard_hemorrhage_count = hh;
    f.soft_hemorrhage_count = sh;
    f.cotton_wool_count = cws;
    f.subhyaloid_present = sub;
    f.neovascularization_present = nv;
    f.hemorrhage_quadrants = quads;
    return f;
}

Outcome rule_fixtures() {
    using rules::RuleId;
    struct Case {
        FeatureVector f;
        int grade;
        RuleId rule;
    };
    const std::vector<Case> cases = {
        {fv(0, 0, 0, 0, 0, false, true, 0), 4, RuleId::R1},    // neovascularization defines PDR
        {fv(0, 0, 0, 0, 0, true, false, 0), 4, RuleId::R2},    // subhyaloid hemorrhage
        {fv(5, 3, 10, 5, 2, true, true, 4), 4, RuleId::R1},    // everything present
        {fv(0, 0, 15, 10, 0, false, false, 4), 3, RuleId::R3}, // 25 hemorrhages, all quadrants
        {fv(0, 0, 21, 0, 0, false, false, 4), 3, RuleId::R3},
        {fv(0, 0, 20, 0, 0, false, false, 4), 2, RuleId::R6},  // 20 is not more than 20
        {fv(0, 0, 30, 0, 0, false, false, 3), 2, RuleId::R6},  // three quadrants only
        {fv(0, 0, 0, 0, 5, false, false, 0), 3, RuleId::R4},
        {fv(0, 0, 0, 0, 4, false, false, 0), 2, RuleId::R5},
        {fv(2, 0, 0, 0, 1, false, false, 0), 2, RuleId::R5},
        {fv(0, 2, 0, 0, 0, false, false, 0), 2, RuleId::R6},
        {fv(0, 0, 0, 1, 0, false, false, 1), 2, RuleId::R6},
        {fv(3, 0, 0, 0, 0, false, false, 0), 1, RuleId::R7},   // microaneurysms only
        {fv(0, 0, 0, 0, 0, false, false, 0), 0, RuleId::R8},
    };
    int ok = 0;
    for (const auto& c : cases) {
        const auto t = rules::grade_by_rules(c.f);
        ok += t.grade.value() == c.grade && t.fired_rules == std::vector{c.rule};
    }
    Rng rng(1004);
    int violations = 0;
    for (int trial = 0; trial < 10000; ++trial) {
        std::vector<Detection> dets;
        const auto n = rng.below(50);
        auto random_det = [&] {
            Detection d;
            d.lesion = kAllLesionTypes[rng.below(kAllLesionTypes.size())];
            d.box.w = rng.uniform(0.01, 0.1);
            d.box.h = rng.uniform(0.01, 0.1);
            d.box.x = rng.uniform(0.0, 1.0 - d.box.w);
            d.box.y = rng.uniform(0.0, 1.0 - d.box.h);
            d.score = 1.0;
            return d;
        };
        for (std::uint64_t i = 0; i < n; ++i) dets.push_back(random_det());
        const int before = rules::grade_by_rules(rules::aggregate_detections(dets, 0.0)).grade.value();
        dets.push_back(random_det());
        violations += rules::grade_by_rules(rules::aggregate_detections(dets, 0.0)).grade.value() < before;
    }
    return {ok == static_cast<int>(cases.size()) && violations == 0,
            std::to_string(ok) + "/" + std::to_string(cases.size()) + " fixtures, " + std::to_string(violations) +
                " monotonicity violations in 10000 trials"};
}

Outcome kl_diagnostic() {
    Rng rng(1005);
    double self = 0.0;
    for (int i = 0; i < 100; ++i) {
        std::vector<double> rows(60);
        for (double& v : rows) v = rng.normal() * 3;
        const auto s = metrics::compute_domain_stats(rows, 3);
        self = std::max(self, std::abs(metrics::domain_kl(s, s)));
    }
    const double shift = metrics::domain_kl({{0.0}, {1.0}, 1}, {{1.0}, {1.0}, 1});
    learn::TabularData a({"x", "y", "z"}), b({"x", "y", "z"});
    for (int i = 0; i < 1000; ++i) {
        const std::vector<double> x{rng.normal(), rng.normal() * 4, rng.uniform(0, 10)};
        a.add_row(x, i % 5);
        b.add_row(std::vector<double>{x[0] + 2.5, x[1] - 7.0, x[2] + 0.3}, i % 5);
    }
    const std::vector<learn::TabularData> pair{a, b};
    const auto r = dg::align_domains(pair, 0);
    char buf[160];
    std::snprintf(buf, sizeof buf, "KL(p,p) max %.1e, mean shift %.15f, aligned KL %.2e (before %.3f)", self, shift,
                  r.kl_after, r.kl_before);
    return {self <= kKlTol && std::abs(shift - 0.5) <= kKlTol && r.kl_after < kAlignTol, buf};
}

// Cross-domain accuracy of a GBM trained on each source's train split (early
// stopping on its validation split) and scored on the other domains in full.
double cross_domain_gbm(const synth::SynthDataset& data, FeatureSet set, std::uint64_t seed) {
    double sum = 0.0;
    int n = 0;
    for (std::size_t s = 0; s < data.domains.size(); ++s) {
        const auto& src = data.domains[s].examples;
        const auto split = dg::split_dataset(src, {}, derive_seed(seed, "acceptance/" + data.domains[s].name.str()));
        auto pick = [&](const std::vector<std::size_t>& idx) {
            std::vector<LabeledExample> out;
            for (auto i : idx) out.push_back(src[i]);
            return learn::TabularData::from_examples(out, set);
        };
        const auto train = pick(split.train), valid = pick(split.validation);
        learn::TrainConfig cfg;
        cfg.feature_set = set;
        cfg.seed = seed;
        const auto model = learn::fit_gbm(train, &valid, cfg);
        for (std::size_t t = 0; t < data.domains.size(); ++t) {
            if (t == s) continue;
            int hit = 0;
            for (const auto& ex : data.domains[t].examples)
                hit += model.predict_proba(to_row(ex.features, set)).argmax() == ex.grade;
            sum += static_cast<double>(hit) / static_cast<double>(data.domains[t].examples.size());
            ++n;
        }
    }
    return sum / n;
}

Outcome vein_ablation() {
    double lesions = 0.0, vein = 0.0;
    std::string per_seed;
    for (std::uint64_t seed : {0, 1, 2}) {
        auto cfg = synth::shift_profile("vein_hostile");
        cfg.domains.resize(3);
        for (auto& d : cfg.domains) d.n_samples = 2000;
        cfg.seed = seed;
        const auto data = synth::gen_dataset(cfg);
        const double l = cross_domain_gbm(data, FeatureSet::LesionsOnly, seed);
        const double v = cross_domain_gbm(data, FeatureSet::LesionsVein, seed);
        lesions += l / 3;
        vein += v / 3;
        per_seed += " " + format_fixed(100 * l, 1) + "/" + format_fixed(100 * v, 1);
    }
    char buf[200];
    std::snprintf(buf, sizeof buf, "lesions-only %.1f%% vs lesions+vein %.1f%% (gap %.1f points, need >= %.0f; per seed%s)",
                  100 * lesions, 100 * vein, 100 * (lesions - vein), 100 * kVeinMargin, per_seed.c_str());
    return {lesions - vein >= kVeinMargin, buf};
}

double row_average(const dg::ExperimentReport& r, std::string_view method) {
    double sum = 0.0;
    int n = 0;
    for (const auto& p : r.panels)
        for (const auto& row : p.rows)
            if (row.method == method) {
                sum += row.cells.back().accuracy.summary.mean;
                ++n;
            }
    return sum / n;
}

Outcome fusion_ablation() {
    auto scfg = synth::shift_profile("mild");
    scfg.domains.resize(3);
    for (auto& d : scfg.domains) d.n_samples = 2000;
    scfg.seed = 0;
    auto data = synth::gen_dataset(scfg);

    dg::ExperimentConfig cfg;
    cfg.mode = dg::Mode::Sdg;
    cfg.seeds = {0, 1, 2};
    cfg.strategies = {fusion::Strategy::MaxConfidence};
    auto domains_of = [&] {
        std::vector<dg::DomainDataset> out;
        for (const auto& d : data.domains) out.push_back({d.name, d.examples});
        return out;
    };
    const auto first = dg::run_experiment(cfg, domains_of(), true);
    const double symbolic = row_average(first, dg::kMethodSymbolic);

    // every target sees a deep branch 15 points below the measured symbolic accuracy
    const double target = symbolic - kNeuralGap;
    for (std::size_t i = 0; i < data.domains.size(); ++i) {
        auto& spec = scfg.domains[i];
        spec.neural_in_domain_accuracy = target;
        spec.neural_ood_accuracy = target;
        auto& d = data.domains[i];
        d.probabilities = synth::gen_neural_probabilities(scfg, spec, d.examples);
        for (auto& ex : d.examples) ex.neural_probs = d.probabilities.at(ex.image_id);
    }
    const auto second = dg::run_experiment(cfg, domains_of(), true);
    const double sym2 = row_average(second, dg::kMethodSymbolic);
    const double neural = row_average(second, dg::kMethodNeural);
    const double fused = row_average(second, dg::fusion_method_label(fusion::Strategy::MaxConfidence));
    char buf[200];
    std::snprintf(buf, sizeof buf, "max fusion %.1f%%, symbolic %.1f%%, neural %.1f%% (neural set to %.1f%%)",
                  100 * fused, 100 * sym2, 100 * neural, 100 * target);
    return {fused >= sym2 - kFusionSlack && fused > neural, buf};
}

int cli(const std::vector<std::string>& args, std::string* out = nullptr) {
    std::ostringstream o, e;
    const int code = cli::dispatch(args, o, e);
    if (out) *out = o.str();
    return code;
}

Outcome end_to_end() {
    const auto root = oracle::scratch_dir("acceptance");
    std::vector<std::string> reports, jsons, models;
    // both runs use the same paths; the manifest path is part of the config
    for (int run = 0; run < 2; ++run) {
        std::filesystem::remove_all(root / "run");
        const auto dir = (root / "run").string();
        if (cli({"synth", "--seed", "11", "--n-samples", "400", "--out", dir + "/data", "--quiet"}) != 0)
            return {false, "synth failed"};
        if (cli({"train", "--manifest", dir + "/data/manifest.json", "--seed", "11", "--out", dir + "/model.kgdg",
                 "--quiet"}) != 0)
            return {false, "train failed"};
        if (cli({"eval", "--mode", "mdg", "--manifest", dir + "/data/manifest.json", "--seed", "11", "--format",
                 "json", "--out", dir + "/report.json", "--quiet"}) != 0)
            return {false, "eval failed"};
        std::string md;
        if (cli({"report", "--input", dir + "/report.json"}, &md) != 0) return {false, "report failed"};
        reports.push_back(md);
        jsons.push_back(io::read_file(dir + "/report.json"));
        models.push_back(io::read_file(dir + "/model.kgdg"));
    }
    const bool same = reports[0] == reports[1] && jsons[0] == jsons[1] && models[0] == models[1];
    std::filesystem::remove_all(root);

    Rng rng(1008);
    int leaks = 0, runs = 0;
    for (; runs < 50; ++runs) {
        auto scfg = synth::shift_profile(runs % 2 ? "severe" : "mild");
        scfg.seed = rng.next() % 100000;
        scfg.domains.resize(2 + rng.below(3));
        for (auto& d : scfg.domains) d.n_samples = 60 + static_cast<std::int64_t>(rng.below(120));
        std::vector<dg::DomainDataset> domains;
        for (auto& d : synth::gen_dataset(scfg).domains) domains.push_back({d.name, std::move(d.examples)});
        dg::ExperimentConfig cfg;
        cfg.mode = rng.bernoulli(0.5) ? dg::Mode::Mdg : dg::Mode::Sdg;
        cfg.seeds = {rng.next() % 1000};
        cfg.symbolic.n_trees = 10;
        cfg.alignment = rng.bernoulli(0.3);
        const double train = rng.uniform(0.4, 0.8);
        cfg.split = {train, (1 - train) / 2, (1 - train) / 2};
        try {
            dg::run_experiment(cfg, domains, true);
        } catch (const Error& e) {
            if (e.code() == ErrorCode::LeakageDetected) ++leaks;
        }
    }
    return {same && leaks == 0, std::string(same ? "reports, JSON and models byte-identical" : "outputs DIFFER") +
                                    ", leakage guard fired " + std::to_string(leaks) + " times in " +
                                    std::to_string(runs) + " randomized runs"};
}

Outcome reference_fixtures() {
    std::size_t cells = 0, diffs = 0;
    for (const auto& t : dg::reference_tables()) {
        const auto d = dg::compare_tables(t, t, false);
        cells += d.compared;
        diffs += d.diffs.size();
    }
    auto cell = [](std::string_view id, std::string_view row, std::string_view col) -> std::string {
        const auto& t = dg::reference_table(id);
        const auto c = std::find(t.columns.begin(), t.columns.end(), col) - t.columns.begin();
        for (const auto& r : t.rows)
            if (r.label == row && c < static_cast<long>(r.values.size())) return r.values[static_cast<std::size_t>(c)];
        return "";
    };
    const bool spots = cell("mdg", "KL (Ours) [Knowledge (20M)]", "Avg.") == "63.67" &&
                       cell("sdg-messidor2", "Weighted (DL + KL)", "Average") == "65.5±0.3" &&
                       cell("sdg-aptos", "Non Weighted (DL + KL)", "Average") == "59.9±0.2" &&
                       cell("in-domain-aptos", "KG-DG (Gradient Boosting)", "Accuracy") == "84.65" &&
                       cell("in-domain-aptos", "ViT", "Accuracy") == "78.40";
    return {diffs == 0 && cells > 0 && spots, std::to_string(dg::reference_tables().size()) + " tables, " +
                                                  std::to_string(cells) + " cells self-compared, " +
                                                  std::to_string(diffs) + " diffs, spot values " +
                                                  (spots ? "verbatim" : "MISSING")};
}

}  // namespace

int main() {
    criterion("fusion coincidence", 5, fusion_coincidence);
    criterion("metric oracles", 30, metric_oracles);
    criterion("learner correctness", 60, learner_correctness);
    criterion("rule engine fixtures", 60, rule_fixtures);
    criterion("KL diagnostic", 60, kl_diagnostic);
    criterion("vein ablation direction (synthetic)", 300, vein_ablation);
    criterion("fusion ablation direction (synthetic)", 300, fusion_ablation);
    criterion("end-to-end determinism and leakage guard", 600, end_to_end);
    criterion("reference fixtures", 60, reference_fixtures);
    std::printf("%d of 9 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
