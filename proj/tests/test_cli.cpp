#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "kgdg/data_io.hpp"
#include "oracles.hpp"

using kgdg::cli::dispatch;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = dispatch(args, out, err);
    return {code, out.str(), err.str()};
}

}  // namespace

TEST_SUITE("cli") {
    TEST_CASE("help lists every subcommand") {
        const auto r = run({"--help"});
        CHECK(r.code == 0);
        for (const char* sub : {"synth", "grade", "train", "fuse", "eval", "metrics", "report"})
            CHECK(r.out.find(sub) != std::string::npos);
    }

    TEST_CASE("usage errors exit 2") {
        CHECK(run({}).code == 2);
        CHECK(run({"frobnicate"}).code == 2);
        const auto dir = oracle::scratch_dir("cli-usage");
        const auto p = (dir / "p.csv").string();
        kgdg::io::write_file(p, "image_id,p0,p1,p2,p3,p4\na,1,0,0,0,0\n");
        const auto r = run({"fuse", "--dl", p, "--kd", p, "--strategy", "weighted"});
        CHECK(r.code == 2);
        CHECK(r.err.find("InvalidArgument") != std::string::npos);
        CHECK(run({"report", "--fixture", "nope"}).code == 2);
        std::filesystem::remove_all(dir);
    }

    TEST_CASE("data errors exit 3") {
        const auto dir = oracle::scratch_dir("cli-data");
        const auto p = (dir / "p.csv").string();
        kgdg::io::write_file(p, "image_id,p0,p1,p2,p3,p4\na,0.9,0.9,0,0,0\n");
        const auto r = run({"fuse", "--dl", p, "--kd", p});
        CHECK(r.code == 3);
        CHECK(r.err.find("SumOutOfTolerance") != std::string::npos);
        CHECK(run({"fuse", "--dl", (dir / "missing.csv").string(), "--kd", p}).code == 3);
        std::filesystem::remove_all(dir);
    }

    TEST_CASE("fuse output") {
        const auto dir = oracle::scratch_dir("cli-fuse");
        kgdg::io::write_file(dir / "dl.csv", "image_id,p0,p1,p2,p3,p4\na,0.5,0.5,0,0,0\n");
        kgdg::io::write_file(dir / "kd.csv", "image_id,p0,p1,p2,p3,p4\na,0,1,0,0,0\n");
        const auto r = run({"fuse", "--dl", (dir / "dl.csv").string(), "--kd", (dir / "kd.csv").string(),
                            "--strategy", "weighted", "--alpha-dl", "0.6"});
        CHECK(r.code == 0);
        CHECK(r.out.find("a,1,blended,0.7") != std::string::npos);
        std::filesystem::remove_all(dir);
    }

    TEST_CASE("synth, grade, train, eval and report end to end") {
        const auto dir = oracle::scratch_dir("cli-e2e");
        const auto a = (dir / "a").string(), b = (dir / "b").string();
        REQUIRE(run({"synth", "--seed", "3", "--n-samples", "150", "--out", a, "--quiet"}).code == 0);
        REQUIRE(run({"synth", "--seed", "3", "--n-samples", "150", "--out", b, "--quiet"}).code == 0);
        CHECK(oracle::tree_bytes(a) == oracle::tree_bytes(b));

        const auto graded = run({"grade", "--features", a + "/aptos_features.csv"});
        CHECK(graded.code == 0);
        CHECK(graded.out.rfind("image_id,grade,rule,supporting", 0) == 0);

        const auto model = (dir / "m.kgdg").string();
        REQUIRE(run({"train", "--manifest", a + "/manifest.json", "--seed", "1", "--out", model}).code == 0);
        const auto probs = run({"grade", "--features", a + "/eyepacs_features.csv", "--model", model});
        CHECK(probs.code == 0);
        CHECK(probs.out.rfind("image_id,p0", 0) == 0);

        const auto json = (dir / "r.json").string();
        const auto e = run({"eval", "--mode", "mdg", "--manifest", a + "/manifest.json", "--seed", "2", "--format",
                            "json", "--out", json});
        CHECK(e.code == 0);
        CHECK(e.err.find("config fingerprint:") != std::string::npos);
        const auto md = run({"report", "--input", json});
        CHECK(md.code == 0);
        CHECK(md.out.find("MDG leave-one-domain-out") != std::string::npos);
        const auto cmp = run({"report", "--input", json, "--compare", "mdg"});
        CHECK(cmp.code == 0);
        CHECK(cmp.out.find("not comparable: synthetic data") != std::string::npos);
        std::filesystem::remove_all(dir);
    }

    TEST_CASE("reference listing") {
        const auto r = run({"report", "--list"});
        CHECK(r.code == 0);
        CHECK(r.out.find("sdg-aptos") != std::string::npos);
        const auto f = run({"report", "--fixture", "in-domain-aptos"});
        CHECK(f.out.find("84.65") != std::string::npos);
    }
}
