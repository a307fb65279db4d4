#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "kgdg/metrics.hpp"
#include "kgdg/rules.hpp"
#include "kgdg/util.hpp"
#include "oracles.hpp"

using namespace kgdg;

namespace {

FeatureVector random_features(Rng& rng) {
    FeatureVector f;
    auto count = [&](double p, std::uint64_t hi) {
        return rng.bernoulli(p) ? static_cast<std::int64_t>(rng.below(hi)) : 0;
    };
    f.microaneurysm_count = count(0.6, 15);
    f.exudate_count = count(0.4, 10);
    f.hard_hemorrhage_count = count(0.4, 20);
    f.soft_hemorrhage_count = count(0.3, 15);
    f.cotton_wool_count = count(0.3, 8);
    f.subhyaloid_present = rng.bernoulli(0.05);
    f.neovascularization_present = rng.bernoulli(0.05);
    f.hemorrhage_quadrants = f.hemorrhage_total() > 0 ? 1 + static_cast<int>(rng.below(4)) : 0;
    return f;
}

Detection random_detection(Rng& rng) {
    Detection d;
    d.lesion = kAllLesionTypes[rng.below(kAllLesionTypes.size())];
    d.box.w = rng.uniform(0.01, 0.1);
    d.box.h = rng.uniform(0.01, 0.1);
    d.box.x = rng.uniform(0.0, 1.0 - d.box.w);
    d.box.y = rng.uniform(0.0, 1.0 - d.box.h);
    d.score = rng.uniform();
    return d;
}

ProbabilityVector pv(std::array<double, 5> p) { return validate_probability(p); }

}  // namespace

TEST_SUITE("rules") {
    struct Fixture {
        const char* name;
        FeatureVector f;
        int grade;
        rules::RuleId rule;
    };

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

    TEST_CASE("clinical fixtures") {
        using rules::RuleId;
        const std::vector<Fixture> fixtures = {
            {"neovascularization alone", fv(0, 0, 0, 0, 0, false, true, 0), 4, RuleId::R1},
            {"subhyaloid alone", fv(0, 0, 0, 0, 0, true, false, 0), 4, RuleId::R2},
            {"neovascularization beats subhyaloid", fv(0, 0, 0, 0, 0, true, true, 0), 4, RuleId::R1},
            {"25 hemorrhages in four quadrants", fv(0, 0, 15, 10, 0, false, false, 4), 3, RuleId::R3},
            {"25 hemorrhages in three quadrants", fv(0, 0, 15, 10, 0, false, false, 3), 2, RuleId::R6},
            {"exactly 20 hemorrhages in four quadrants", fv(0, 0, 20, 0, 0, false, false, 4), 2, RuleId::R6},
            {"21 hemorrhages in four quadrants", fv(0, 0, 0, 21, 0, false, false, 4), 3, RuleId::R3},
            {"five cotton wool spots", fv(0, 0, 0, 0, 5, false, false, 0), 3, RuleId::R4},
            {"four cotton wool spots", fv(0, 0, 0, 0, 4, false, false, 0), 2, RuleId::R5},
            {"one cotton wool spot", fv(0, 0, 0, 0, 1, false, false, 0), 2, RuleId::R5},
            {"exudate only", fv(0, 1, 0, 0, 0, false, false, 0), 2, RuleId::R6},
            {"single hemorrhage", fv(0, 0, 1, 0, 0, false, false, 1), 2, RuleId::R6},
            {"three microaneurysms", fv(3, 0, 0, 0, 0, false, false, 0), 1, RuleId::R7},
            {"nothing", fv(0, 0, 0, 0, 0, false, false, 0), 0, RuleId::R8},
            {"everything", fv(9, 9, 20, 20, 9, true, true, 4), 4, RuleId::R1},
        };
        for (const auto& fx : fixtures) {
            CAPTURE(fx.name);
            const auto t = rules::grade_by_rules(fx.f);
            CHECK(t.grade.value() == fx.grade);
            REQUIRE(t.fired_rules.size() == 1);
            CHECK(t.fired_rules[0] == fx.rule);
            CHECK(oracle::rule_grade(fx.f) == fx.grade);
        }
    }

    TEST_CASE("supporting rules list lower priority matches") {
        const auto t = rules::grade_by_rules(fv(3, 1, 0, 0, 0, false, false, 0));
        CHECK(t.fired_rules == std::vector{rules::RuleId::R6});
        CHECK(t.supporting_rules == std::vector{rules::RuleId::R7});
    }

    TEST_CASE("thresholds are configurable") {
        rules::RuleConfig cfg;
        cfg.cws_severe_threshold = 2;
        CHECK(rules::grade_by_rules(fv(0, 0, 0, 0, 2, false, false, 0), cfg).grade.value() == 3);
        cfg.cws_severe_threshold = 0;
        CHECK_THROWS_AS(cfg.validate(), Error);
    }

    TEST_CASE("agrees with the nested conditional oracle") {
        Rng rng(21);
        for (int i = 0; i < 20000; ++i) {
            const auto f = random_features(rng);
            CHECK(rules::grade_by_rules(f).grade.value() == oracle::rule_grade(f));
        }
    }

    TEST_CASE("adding a detection never lowers the grade") {
        Rng rng(22);
        for (int trial = 0; trial < 10000; ++trial) {
            std::vector<Detection> dets;
            const auto n = rng.below(40);
            for (std::uint64_t i = 0; i < n; ++i) dets.push_back(random_detection(rng));
            const int before = rules::grade_by_rules(rules::aggregate_detections(dets, 0.0)).grade.value();
            dets.push_back(random_detection(rng));
            const int after = rules::grade_by_rules(rules::aggregate_detections(dets, 0.0)).grade.value();
            REQUIRE(after >= before);
        }
    }

    TEST_CASE("aggregation is permutation invariant") {
        Rng rng(23);
        for (int trial = 0; trial < 500; ++trial) {
            std::vector<Detection> dets;
            for (int i = 0; i < 30; ++i) dets.push_back(random_detection(rng));
            const auto a = rules::aggregate_detections(dets, 0.0);
            rng.shuffle(dets);
            CHECK(rules::aggregate_detections(dets, 0.0) == a);
        }
    }

    TEST_CASE("quadrants") {
        CHECK(rules::assign_quadrant({0.1, 0.1, 0.1, 0.1}) == 1);
        CHECK(rules::assign_quadrant({0.7, 0.1, 0.1, 0.1}) == 2);
        CHECK(rules::assign_quadrant({0.1, 0.7, 0.1, 0.1}) == 3);
        CHECK(rules::assign_quadrant({0.7, 0.7, 0.1, 0.1}) == 4);
        CHECK(rules::assign_quadrant({0.45, 0.45, 0.1, 0.1}) == 1);
    }

    TEST_CASE("min_score filters detections") {
        std::vector<Detection> dets{{LesionType::Microaneurysm, {0.1, 0.1, 0.05, 0.05}, 0.2},
                                    {LesionType::HardExudate, {0.3, 0.3, 0.05, 0.05}, 0.9}};
        const auto f = rules::aggregate_detections(dets, 0.25);
        CHECK(f.microaneurysm_count == 0);
        CHECK(f.exudate_count == 1);
    }

    TEST_CASE("rule grade as probability") {
        rules::RuleTrace t;
        t.grade = Grade(4);
        CHECK(rules::rule_grade_as_probability(t, 0.0).values() == std::array<double, 5>{0, 0, 0, 0, 1});
        t.grade = Grade(2);
        const auto p = rules::rule_grade_as_probability(t, 0.2);
        CHECK(p[0] == doctest::Approx(0.05));
        CHECK(p[2] == doctest::Approx(0.8));
        CHECK_THROWS_AS(rules::rule_grade_as_probability(t, 1.0), Error);
    }
}

TEST_SUITE("metrics") {
    TEST_CASE("fixed examples") {
        const std::vector<int> t{0, 0, 1, 2}, p{0, 1, 1, 2};
        CHECK(metrics::accuracy(t, p) == 0.75);
        CHECK(metrics::macro_f1(t, p) == doctest::Approx(7.0 / 9.0).epsilon(1e-15));
        const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
        const std::array<bool, 4> pos{false, false, true, true};
        CHECK(metrics::binary_auc(s, pos) == 0.75);
        CHECK(std::abs(metrics::iou({0, 0, 0.2, 0.2}, {0.1, 0.1, 0.2, 0.2}) - 1.0 / 7.0) < 1e-12);
        CHECK(metrics::iou({0, 0, 0.2, 0.2}, {0, 0, 0.2, 0.2}) == 1.0);
        CHECK(metrics::iou({0, 0, 0.2, 0.2}, {0.5, 0.5, 0.2, 0.2}) == 0.0);
    }

    TEST_CASE("empty and degenerate inputs") {
        const std::vector<int> none;
        CHECK_THROWS_AS(metrics::accuracy(none, none), Error);
        const std::vector<double> s{0.3, 0.3, 0.3};
        const std::array<bool, 3> pos{true, false, false};
        CHECK(metrics::binary_auc(s, pos) == 0.5);
        const std::vector<int> one_class{1, 1};
        const std::vector<ProbabilityVector> probs(2);
        try {
            metrics::auc_ovr_macro(one_class, probs);
            FAIL("expected NoQualifyingClass");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::NoQualifyingClass);
        }
    }

    TEST_CASE("brute force over small label and score sets") {
        // every label vector of length <= 5 over 3 grades, predictions derived
        // from a fixed enumeration of score rows
        const std::array<std::array<double, 5>, 4> rows{{{0.6, 0.2, 0.2, 0, 0},
                                                         {0.2, 0.6, 0.2, 0, 0},
                                                         {0.2, 0.2, 0.6, 0, 0},
                                                         {0.4, 0.2, 0.4, 0, 0}}};
        int checked = 0;
        for (int n = 1; n <= 5; ++n) {
            int combos = 1;
            for (int i = 0; i < n; ++i) combos *= 12;
            for (int code = 0; code < combos; ++code) {
                std::vector<int> t, p;
                std::vector<std::array<double, 5>> raw;
                std::vector<ProbabilityVector> probs;
                for (int i = 0, c = code; i < n; ++i, c /= 12) {
                    t.push_back(c % 3);
                    const auto& r = rows[static_cast<std::size_t>((c / 3) % 4)];
                    raw.push_back(r);
                    probs.push_back(pv(r));
                    p.push_back(probs.back().argmax().value());
                }
                REQUIRE(std::abs(metrics::accuracy(t, p) - oracle::accuracy(t, p)) < 1e-9);
                REQUIRE(std::abs(metrics::macro_f1(t, p) - oracle::macro_f1(t, p)) < 1e-9);
                const double want = oracle::macro_auc(t, raw);
                if (std::isnan(want)) {
                    REQUIRE_THROWS_AS(metrics::auc_ovr_macro(t, probs), Error);
                } else {
                    REQUIRE(std::abs(metrics::auc_ovr_macro(t, probs) - want) < 1e-9);
                }
                ++checked;
            }
        }
        CHECK(checked > 0);
    }

    TEST_CASE("constant prediction macro F1 is below majority accuracy") {
        const std::vector<int> t{0, 0, 0, 1}, p{0, 0, 0, 0};
        CHECK(metrics::macro_f1(t, p) < metrics::accuracy(t, p));
    }

    TEST_CASE("report invariants") {
        Rng rng(31);
        std::vector<int> t;
        std::vector<ProbabilityVector> probs;
        for (int i = 0; i < 200; ++i) {
            t.push_back(static_cast<int>(rng.below(5)));
            std::array<double, 5> r{};
            double s = 0;
            for (double& v : r) s += (v = rng.uniform());
            for (double& v : r) v /= s;
            probs.push_back(pv(r));
        }
        const auto rep = metrics::evaluate(t, probs);
        std::int64_t trace = 0;
        for (int g = 0; g < 5; ++g) {
            std::int64_t row = 0;
            for (int h = 0; h < 5; ++h) row += rep.confusion[g][h];
            CHECK(row == rep.support[g]);
            trace += rep.confusion[g][g];
        }
        CHECK(rep.accuracy == doctest::Approx(static_cast<double>(trace) / 200.0));
    }

    TEST_CASE("detection matching") {
        const std::vector<Detection> truth{{LesionType::HardExudate, {0.1, 0.1, 0.2, 0.2}, 1.0},
                                           {LesionType::HardExudate, {0.2, 0.1, 0.2, 0.2}, 1.0}};
        SUBCASE("identical sets") {
            const auto r = metrics::detection_set_iou(truth, truth, 0.5);
            CHECK(r.precision == 1.0);
            CHECK(r.recall == 1.0);
            CHECK(r.mean_iou == doctest::Approx(1.0));
        }
        SUBCASE("one prediction overlapping two truths matches the closer one") {
            const std::vector<Detection> pred{{LesionType::HardExudate, {0.18, 0.1, 0.2, 0.2}, 0.9}};
            const auto r = metrics::detection_set_iou(pred, truth, 0.3);
            CHECK(r.matched == 1);
            CHECK(r.mean_iou == doctest::Approx(metrics::iou(pred[0].box, truth[1].box)));
        }
        SUBCASE("threshold 1 with jitter") {
            auto pred = truth;
            for (auto& d : pred) d.box.x += 0.01;
            CHECK(metrics::detection_set_iou(pred, truth, 1.0).matched == 0);
        }
        SUBCASE("different lesion kinds never match") {
            auto pred = truth;
            for (auto& d : pred) d.lesion = LesionType::Microaneurysm;
            CHECK(metrics::detection_set_iou(pred, truth, 0.1).matched == 0);
        }
    }

    TEST_CASE("iou against oracle") {
        Rng rng(32);
        for (int i = 0; i < 5000; ++i) {
            BoundingBox a{rng.uniform(0, 0.5), rng.uniform(0, 0.5), rng.uniform(0.01, 0.5), rng.uniform(0.01, 0.5)};
            BoundingBox b{rng.uniform(0, 0.5), rng.uniform(0, 0.5), rng.uniform(0.01, 0.5), rng.uniform(0.01, 0.5)};
            CHECK(metrics::iou(a, b) == doctest::Approx(oracle::iou(a.x, a.y, a.w, a.h, b.x, b.y, b.w, b.h)));
            CHECK(metrics::iou(a, b) == doctest::Approx(metrics::iou(b, a)));
        }
    }

    TEST_CASE("domain kl") {
        const std::vector<double> rows{0.0, 1.0, 2.0, 3.0};
        const auto p = metrics::compute_domain_stats(rows, 2);
        CHECK(std::abs(metrics::domain_kl(p, p)) < 1e-12);
        metrics::DomainStats a{{0.0}, {1.0}, 10}, b{{1.0}, {1.0}, 10};
        CHECK(std::abs(metrics::domain_kl(a, b) - 0.5) < 1e-12);
        metrics::DomainStats c{{0.3, -1.0}, {2.0, 0.5}, 5}, d{{-0.2, 0.4}, {0.7, 1.5}, 5};
        CHECK(metrics::domain_kl(c, d) ==
              doctest::Approx(oracle::gauss_kl(0.3, 2.0, -0.2, 0.7) + oracle::gauss_kl(-1.0, 0.5, 0.4, 1.5)));
        const std::vector<double> constant{5.0, 5.0, 5.0};
        CHECK(metrics::compute_domain_stats(constant, 1).variance[0] == metrics::kVarianceFloor);
    }

    TEST_CASE("summary and formatting") {
        const std::vector<double> v{0.72, 0.73, 0.74};
        const auto s = metrics::seeded_summary(v);
        CHECK(s.mean == doctest::Approx(0.73));
        CHECK(s.std == doctest::Approx(std::sqrt(2.0 / 3.0) * 0.01));
        CHECK(metrics::format_percent(s) == "73.0±0.8");
        CHECK(metrics::format_percent({std::nan(""), 0.0, 0}) == "n/a");
    }
}
