#include <cmath>
#include <set>

#include "doctest.h"
#include "kgdg/harness.hpp"
#include "kgdg/synth.hpp"
#include "kgdg/util.hpp"
#include "oracles.hpp"

using namespace kgdg;

namespace {

std::vector<dg::DomainDataset> synthetic_domains(std::int64_t n, std::uint64_t seed, std::size_t count = 4) {
    auto cfg = synth::shift_profile("mild");
    cfg.seed = seed;
    cfg.domains.resize(count);
    for (auto& d : cfg.domains) d.n_samples = n;
    std::vector<dg::DomainDataset> out;
    for (auto& d : synth::gen_dataset(cfg).domains) out.push_back({d.name, std::move(d.examples)});
    return out;
}

dg::ExperimentConfig small_config(dg::Mode mode) {
    dg::ExperimentConfig cfg;
    cfg.mode = mode;
    cfg.symbolic.n_trees = 30;
    return cfg;
}

std::vector<LabeledExample> balanced(int per_grade) {
    std::vector<LabeledExample> out;
    for (int g = 0; g < 5; ++g)
        for (int i = 0; i < per_grade; ++i) {
            LabeledExample ex;
            ex.image_id = "g" + std::to_string(g) + "-" + std::to_string(i);
            ex.domain = DomainId("d");
            ex.grade = Grade(g);
            out.push_back(ex);
        }
    return out;
}

}  // namespace

TEST_SUITE("harness") {
    TEST_CASE("stratified split sizes") {
        const auto ex = balanced(20);
        const auto s = dg::split_dataset(ex, {}, 1);
        CHECK(s.train.size() == 60);
        CHECK(s.validation.size() == 20);
        CHECK(s.test.size() == 20);
        for (int g = 0; g < 5; ++g) {
            auto count = [&](const std::vector<std::size_t>& idx) {
                return std::count_if(idx.begin(), idx.end(), [&](std::size_t i) { return ex[i].grade.value() == g; });
            };
            CHECK(count(s.train) == 12);
            CHECK(count(s.validation) == 4);
            CHECK(count(s.test) == 4);
        }
        const auto again = dg::split_dataset(ex, {}, 1);
        CHECK(again.train == s.train);
        CHECK(again.test == s.test);
    }

    TEST_CASE("split is disjoint and exhaustive for any size") {
        Rng rng(61);
        for (int trial = 0; trial < 200; ++trial) {
            std::vector<LabeledExample> ex;
            const auto n = 1 + rng.below(60);
            for (std::uint64_t i = 0; i < n; ++i) {
                LabeledExample e;
                e.image_id = std::to_string(i);
                e.grade = Grade(static_cast<int>(rng.below(5)));
                ex.push_back(e);
            }
            const auto s = dg::split_dataset(ex, {}, trial);
            std::set<std::size_t> all;
            for (const auto* part : {&s.train, &s.validation, &s.test}) all.insert(part->begin(), part->end());
            CHECK(all.size() == n);
            CHECK(s.train.size() + s.validation.size() + s.test.size() == n);
        }
    }

    TEST_CASE("a lone example goes to train") {
        auto ex = balanced(5);
        ex.resize(6);
        const auto s = dg::split_dataset(ex, {}, 3);
        CHECK(std::find(s.train.begin(), s.train.end(), 5u) != s.train.end());
    }

    TEST_CASE("bad fractions") {
        CHECK_THROWS_AS((dg::SplitFractions{0.5, 0.2, 0.2}.validate()), Error);
        CHECK_THROWS_AS((dg::SplitFractions{1.2, -0.1, -0.1}.validate()), Error);
    }

    TEST_CASE("alignment cancels a pure mean shift") {
        Rng rng(62);
        learn::TabularData a({"x", "y"}), b({"x", "y"});
        for (int i = 0; i < 500; ++i) {
            const double x = rng.normal(), y = rng.normal() * 2;
            a.add_row(std::vector<double>{x, y}, i % 5);
            b.add_row(std::vector<double>{x + 3.0, y - 1.5}, (i + 1) % 5);
        }
        const std::vector<learn::TabularData> domains{a, b};
        const auto r = dg::align_domains(domains, 0);
        CHECK(r.kl_before > 1.0);
        CHECK(r.kl_after < 1e-9);
        CHECK(r.transformed[1].labels() == b.labels());
        const std::vector<learn::TabularData> single{a};
        const auto s = dg::align_domains(single, 0);
        CHECK(s.kl_before == 0.0);
        CHECK(s.kl_after == 0.0);
        CHECK_THROWS_AS(dg::align_domains(domains, 2), Error);
    }

    TEST_CASE("weight selection prefers the deep side on ties") {
        const std::vector<ProbabilityVector> dl{validate_probability(std::array<double, 5>{0.6, 0.4, 0, 0, 0})};
        const std::vector<ProbabilityVector> kd{validate_probability(std::array<double, 5>{0.6, 0.4, 0, 0, 0})};
        const std::vector<int> y{0};
        const auto grid = dg::default_weight_grid();
        CHECK(grid.size() == 9);
        const auto w = dg::select_weights(dl, kd, y, grid);
        CHECK(w.alpha_kl == doctest::Approx(0.1));
        const std::vector<FusionWeights> none;
        CHECK_THROWS_AS(dg::select_weights(dl, kd, y, none), Error);
    }

    TEST_CASE("leakage guard") {
        CHECK_NOTHROW(dg::check_leakage({"a/1", "a/2"}, {"a/3", "b/1"}));
        try {
            dg::check_leakage({"a/1"}, {"a/1"});
            FAIL("expected LeakageDetected");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::LeakageDetected);
        }
    }

    TEST_CASE("mdg runs one fold per domain per seed") {
        const auto domains = synthetic_domains(300, 1);
        const auto r = dg::run_experiment(small_config(dg::Mode::Mdg), domains, true);
        REQUIRE(r.panels.size() == 1);
        CHECK(r.folds_run == 4 * 3);
        CHECK(r.panels[0].columns.size() == 5);
        CHECK(r.panels[0].columns.back() == "Average");
    }

    TEST_CASE("sdg report summaries equal seeded_summary of per-seed values") {
        const auto domains = synthetic_domains(300, 2, 3);
        const auto r = dg::run_experiment(small_config(dg::Mode::Sdg), domains, true);
        CHECK(r.panels.size() == 3);
        CHECK(r.folds_run == 9);
        for (const auto& panel : r.panels) {
            CHECK(panel.columns.size() == 3);
            for (const auto& row : panel.rows)
                for (const auto& cell : row.cells) {
                    REQUIRE(cell.accuracy.per_seed.size() == 3);
                    const auto s = metrics::seeded_summary(cell.accuracy.per_seed);
                    CHECK(cell.accuracy.summary.mean == s.mean);
                    CHECK(cell.accuracy.summary.std == s.std);
                    for (double v : cell.accuracy.per_seed) CHECK((v >= 0.0 && v <= 1.0));
                }
        }
    }

    TEST_CASE("average column is the per-seed mean of target columns") {
        const auto domains = synthetic_domains(250, 3, 3);
        const auto r = dg::run_experiment(small_config(dg::Mode::Sdg), domains, true);
        const auto& row = r.panels[0].rows[0];
        for (std::size_t s = 0; s < 3; ++s) {
            const double want = (row.cells[0].accuracy.per_seed[s] + row.cells[1].accuracy.per_seed[s]) / 2;
            CHECK(row.cells[2].accuracy.per_seed[s] == doctest::Approx(want));
        }
    }

    TEST_CASE("reports are reproducible and survive a JSON round trip") {
        const auto domains = synthetic_domains(250, 4, 3);
        auto cfg = small_config(dg::Mode::Sdg);
        cfg.alignment = true;
        const auto a = dg::run_experiment(cfg, domains, true);
        const auto b = dg::run_experiment(cfg, domains, true);
        for (auto f : {dg::ReportFormat::Markdown, dg::ReportFormat::Csv, dg::ReportFormat::Json})
            CHECK(dg::emit_report(a, f) == dg::emit_report(b, f));
        const auto json = dg::emit_report(a, dg::ReportFormat::Json);
        const auto back = dg::ExperimentReport::from_json(nlohmann::json::parse(json));
        CHECK(dg::emit_report(back, dg::ReportFormat::Json) == json);
        CHECK(dg::emit_report(back, dg::ReportFormat::Markdown) == dg::emit_report(a, dg::ReportFormat::Markdown));
        CHECK(a.panels[0].kl_after.has_value());
    }

    TEST_CASE("config parsing") {
        const auto j = nlohmann::json::parse(R"({
            "mode": "mdg",
            "domains": "data/manifest.json",
            "seeds": [5],
            "symbolic": {"n_trees": 10},
            "fusion": {"strategies": ["max", "weighted"], "weights": {"alpha_dl": 0.7, "alpha_kl": 0.3}}
        })");
        const auto cfg = dg::ExperimentConfig::from_json(j, "/base");
        CHECK(cfg.mode == dg::Mode::Mdg);
        CHECK(cfg.manifest_path == std::filesystem::path("/base/data/manifest.json"));
        CHECK(cfg.seeds == std::vector<std::uint64_t>{5});
        REQUIRE(cfg.weights.has_value());
        CHECK(cfg.weights->alpha_dl == 0.7);
        CHECK(dg::ExperimentConfig::from_json(cfg.to_json(), "/base").fingerprint() == cfg.fingerprint());

        auto bad = j;
        bad["mystery"] = 1;
        CHECK_THROWS_AS(dg::ExperimentConfig::from_json(bad, "."), Error);
        bad = j;
        bad["seeds"] = nlohmann::json::array();
        try {
            dg::ExperimentConfig::from_json(bad, ".");
            FAIL("expected InvalidConfig");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::InvalidConfig);
        }
    }

    TEST_CASE("reference fixtures") {
        const auto& tables = dg::reference_tables();
        CHECK(tables.size() >= 7);
        for (const auto& t : tables) {
            CAPTURE(t.id);
            const auto d = dg::compare_tables(t, t, false);
            CHECK(d.diffs.empty());
            CHECK(d.compared > 0);
        }
        try {
            dg::reference_table("table-99");
            FAIL("expected UnknownReference");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::UnknownReference);
        }
    }

    TEST_CASE("synthetic runs are annotated as not comparable") {
        const auto domains = synthetic_domains(200, 5);
        auto cfg = small_config(dg::Mode::Sdg);
        cfg.seeds = {0};
        cfg.sources = {DomainId("aptos")};
        const auto r = dg::run_experiment(cfg, domains, true);
        const auto d = dg::compare_to_reference(r, "sdg-aptos");
        REQUIRE_FALSE(d.diffs.empty());
        for (const auto& row : d.diffs) CHECK(row.annotation == "not comparable: synthetic data");
        CHECK(dg::format_diff(d).find("sdg-aptos") != std::string::npos);
    }
}
