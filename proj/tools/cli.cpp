#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "kgdg/data_io.hpp"
#include "kgdg/fusion.hpp"
#include "kgdg/harness.hpp"
#include "kgdg/learn.hpp"
#include "kgdg/metrics.hpp"
#include "kgdg/rules.hpp"
#include "kgdg/synth.hpp"
#include "kgdg/util.hpp"

namespace kgdg::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFooter =
    "Seed precedence: --seed, then the KGDG_SEED environment variable, then the config file.\n"
    "Exit codes: 0 ok, 2 usage or config error, 3 data error, 4 internal error.";

struct Globals {
    std::uint64_t seed = 0;
    std::string config;
    std::string out;
    bool quiet = false;
    CLI::Option* seed_opt = nullptr;
};

struct Context {
    Globals g;
    std::ostream& out;
    std::ostream& err;

    /// Explicit seed from the flag or the environment, if any.
    std::optional<std::uint64_t> seed() const {
        if (g.seed_opt != nullptr && g.seed_opt->count() > 0) return g.seed;
        if (const char* env = std::getenv("KGDG_SEED"); env != nullptr && *env != '\0') {
            char* end = nullptr;
            const unsigned long long v = std::strtoull(env, &end, 10);
            if (*end != '\0') throw Error(ErrorCode::InvalidArgument, "KGDG_SEED must be a non-negative integer");
            return static_cast<std::uint64_t>(v);
        }
        return std::nullopt;
    }

    void note(const std::string& line) const {
        if (!g.quiet) err << line << "\n";
    }

    /// Always printed: the fingerprint is what lets a run be reproduced.
    void fingerprint(const json& resolved) const {
        err << "config fingerprint: " << Fnv1a().update(resolved.dump()).hex() << "\n";
    }

    void fingerprint_hex(const std::string& hex) const { err << "config fingerprint: " << hex << "\n"; }

    /// Writes machine output to --out, or to stdout for "-" or no --out.
    void emit(const std::string& bytes) const {
        if (g.out.empty() || g.out == "-") {
            out << bytes;
        } else {
            io::write_file(g.out, bytes);
            note("wrote " + g.out);
        }
    }
};

json load_json(const fs::path& path) {
    const std::string text = io::read_file(path);
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
    std::string profile = "mild";
    std::int64_t n_samples = 0;
};

int run_synth(const Context& ctx, const SynthArgs& a) {
    synth::SynthConfig cfg = ctx.g.config.empty() ? synth::shift_profile(a.profile)
                                                  : synth::SynthConfig::from_json(load_json(ctx.g.config));
    if (auto s = ctx.seed()) cfg.seed = *s;
    if (a.n_samples > 0)
        for (auto& d : cfg.domains) d.n_samples = a.n_samples;
    cfg.validate();
    if (ctx.g.out.empty() || ctx.g.out == "-") throw Error(ErrorCode::InvalidArgument, "synth needs --out DIR");
    ctx.fingerprint(cfg.to_json());
    const auto data = synth::gen_dataset(cfg);
    const auto manifest = synth::write_dataset(data, cfg, ctx.g.out);
    ctx.note("wrote " + manifest.string());
    return 0;
}

// ---------------------------------------------------------------------------
// grade

struct GradeArgs {
    std::string features;
    std::string detections;
    std::string model;
};

int run_grade(const Context& ctx, const GradeArgs& a) {
    if (a.features.empty() == a.detections.empty())
        throw Error(ErrorCode::InvalidArgument, "grade needs exactly one of --features or --detections");
    const rules::RuleConfig rc =
        ctx.g.config.empty() ? rules::RuleConfig{} : rules::RuleConfig::from_json(load_json(ctx.g.config));
    rc.validate();

    std::vector<std::pair<std::string, FeatureVector>> items;
    if (!a.features.empty()) {
        for (const auto& ex : io::load_feature_table(a.features).examples) items.emplace_back(ex.image_id, ex.features);
    } else {
        for (const auto& [id, dets] : io::load_detections(a.detections))
            items.emplace_back(id, rules::aggregate_detections(dets, rc.min_score));
    }

    if (!a.model.empty()) {
        const auto artifact = io::load_model(a.model);
        const auto model = learn::from_artifact(artifact);
        ctx.fingerprint({{"command", "grade"}, {"model", artifact.train_fingerprint}, {"rules", rc.to_json()}});
        io::ProbabilityTable table;
        for (const auto& [id, f] : items) table[id] = learn::predict_proba(model, f);
        ctx.emit(io::format_probability_table(table));
        return 0;
    }

    ctx.fingerprint({{"command", "grade"}, {"rules", rc.to_json()}});
    std::ostringstream csv;
    csv << "image_id,grade,rule,supporting\n";
    for (const auto& [id, f] : items) {
        const auto trace = rules::grade_by_rules(f, rc);
        csv << id << ',' << trace.grade.value() << ',' << rules::rule_name(trace.fired_rules.front()) << ',';
        for (std::size_t i = 0; i < trace.supporting_rules.size(); ++i)
            csv << (i ? ";" : "") << rules::rule_name(trace.supporting_rules[i]);
        csv << '\n';
    }
    ctx.emit(csv.str());
    return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    std::vector<std::string> features;
    std::string manifest;
    std::string model_kind;
    std::string feature_set;
};

int run_train(const Context& ctx, const TrainArgs& a) {
    learn::TrainConfig cfg =
        ctx.g.config.empty() ? learn::TrainConfig{} : learn::TrainConfig::from_json(load_json(ctx.g.config));
    if (auto s = ctx.seed()) cfg.seed = *s;
    if (!a.model_kind.empty()) cfg.model_kind = io::parse_model_kind(a.model_kind);
    if (!a.feature_set.empty()) cfg.feature_set = parse_feature_set(a.feature_set);
    cfg.validate();
    if (ctx.g.out.empty() || ctx.g.out == "-") throw Error(ErrorCode::InvalidArgument, "train needs --out MODEL");
    if (a.features.empty() == a.manifest.empty())
        throw Error(ErrorCode::InvalidArgument, "train needs --features FILE... or --manifest FILE");

    std::vector<std::vector<LabeledExample>> domains;
    if (!a.manifest.empty()) {
        for (auto& d : dg::load_domains(io::load_manifest(a.manifest))) domains.push_back(std::move(d.examples));
    } else {
        for (const auto& f : a.features) domains.push_back(io::load_feature_table(f).examples);
    }

    const auto& schema = feature_schema(cfg.feature_set);
    learn::TabularData train(schema), valid(schema), test(schema);
    for (const auto& examples : domains) {
        if (examples.empty()) continue;
        const auto split = dg::split_dataset(examples, dg::SplitFractions{},
                                             derive_seed(cfg.seed, "split/" + examples.front().domain.str()));
        auto add = [&](learn::TabularData& t, const std::vector<std::size_t>& idx) {
            for (auto i : idx) t.add_row(to_row(examples[i].features, cfg.feature_set), examples[i].grade.value());
        };
        add(train, split.train);
        add(valid, split.validation);
        add(test, split.test);
    }

    const std::string fp = learn::train_fingerprint(train, cfg);
    ctx.fingerprint_hex(fp);
    learn::GbmTrainLog log;
    const auto model = learn::fit_symbolic(train, &valid, cfg, &log);
    io::save_model(learn::to_artifact(model, fp), ctx.g.out);

    auto accuracy_on = [&](const learn::TabularData& t) {
        std::vector<ProbabilityVector> probs;
        for (std::size_t r = 0; r < t.rows(); ++r) probs.push_back(learn::predict_proba(model, t.row(r)));
        return metrics::evaluate(t.labels(), probs).accuracy;
    };
    if (cfg.model_kind == io::ModelKind::Gbm)
        ctx.note("rounds run " + std::to_string(log.rounds_run) + ", kept " + std::to_string(log.best_round));
    if (valid.rows() > 0) ctx.note("validation accuracy " + format_fixed(accuracy_on(valid), 4));
    if (test.rows() > 0) ctx.note("test accuracy " + format_fixed(accuracy_on(test), 4));
    ctx.note("wrote " + ctx.g.out);
    return 0;
}

// ---------------------------------------------------------------------------
// fuse

struct FuseArgs {
    std::string dl;
    std::string kd;
    std::string strategy = "max";
    double alpha_dl = 0.0;
    double alpha_kl = 0.0;
    CLI::Option* alpha_dl_opt = nullptr;
    CLI::Option* alpha_kl_opt = nullptr;
};

int run_fuse(const Context& ctx, const FuseArgs& a) {
    const auto strategy = fusion::parse_strategy(a.strategy);
    FusionWeights w;
    if (strategy == fusion::Strategy::Weighted) {
        if (a.alpha_dl_opt->count() == 0)
            throw Error(ErrorCode::InvalidArgument, "--strategy weighted requires --alpha-dl");
        w.alpha_dl = a.alpha_dl;
        w.alpha_kl = a.alpha_kl_opt->count() > 0 ? a.alpha_kl : 1.0 - a.alpha_dl;
        w.validate();
    }
    std::vector<std::string> warnings;
    const auto dl = io::load_probability_table(a.dl, &warnings);
    const auto kd = io::load_probability_table(a.kd, &warnings);
    for (const auto& m : warnings) ctx.note("warning: " + m);
    ctx.fingerprint({{"command", "fuse"},
                     {"strategy", std::string(fusion::strategy_name(strategy))},
                     {"alpha_dl", w.alpha_dl},
                     {"alpha_kl", w.alpha_kl}});
    std::ostringstream csv;
    csv << "image_id,grade,source,score\n";
    for (const auto& [id, f] : fusion::batch_fuse(strategy, dl, kd, w))
        csv << id << ',' << f.grade.value() << ',' << fusion::source_name(f.source) << ','
            << format_double(f.winning_score) << '\n';
    ctx.emit(csv.str());
    return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    std::string mode;
    std::string manifest;
    std::string format = "markdown";
};

int run_eval(const Context& ctx, const EvalArgs& a) {
    dg::ExperimentConfig cfg;
    if (!ctx.g.config.empty()) cfg = dg::ExperimentConfig::load(ctx.g.config);
    if (!a.mode.empty()) cfg.mode = dg::parse_mode(a.mode);
    if (!a.manifest.empty()) {
        cfg.domains_spec = a.manifest;
        cfg.manifest_path = fs::path(a.manifest);
        cfg.inline_manifest.reset();
    }
    // an explicit seed runs that single seed
    if (auto s = ctx.seed()) cfg.seeds = {*s};
    cfg.validate();
    const auto format = dg::parse_report_format(a.format);
    ctx.fingerprint_hex(cfg.fingerprint());
    const auto report = dg::run_experiment(cfg, cfg.manifest());
    ctx.note("folds run: " + std::to_string(report.folds_run));
    ctx.emit(dg::emit_report(report, format));
    return 0;
}

// ---------------------------------------------------------------------------
// metrics

struct MetricsArgs {
    std::string labels;
    std::string probs;
    std::string pred_detections;
    std::string true_detections;
    double iou_threshold = 0.5;
};

int run_metrics(const Context& ctx, const MetricsArgs& a) {
    const bool grading = !a.labels.empty() || !a.probs.empty();
    const bool detection = !a.pred_detections.empty() || !a.true_detections.empty();
    if (grading == detection)
        throw Error(ErrorCode::InvalidArgument,
                    "metrics needs --labels with --probs, or --pred-detections with --true-detections");
    json result;
    if (grading) {
        if (a.labels.empty() || a.probs.empty())
            throw Error(ErrorCode::InvalidArgument, "--labels and --probs go together");
        ctx.fingerprint({{"command", "metrics"}, {"kind", "grading"}});
        const auto examples = io::load_feature_table(a.labels).examples;
        const auto table = io::load_probability_table(a.probs);
        std::vector<int> truth;
        std::vector<ProbabilityVector> probs;
        for (const auto& ex : examples) {
            auto it = table.find(ex.image_id);
            if (it == table.end())
                throw Error(ErrorCode::UnknownImageId, "no probability row for image_id '" + ex.image_id + "'");
            truth.push_back(ex.grade.value());
            probs.push_back(it->second);
        }
        const auto r = metrics::evaluate(truth, probs);
        result = {{"n", truth.size()},
                  {"accuracy", r.accuracy},
                  {"macro_f1", r.macro_f1},
                  {"auc_ovr_macro", std::isnan(r.auc_ovr_macro) ? json(nullptr) : json(r.auc_ovr_macro)},
                  {"confusion", r.confusion},
                  {"support", r.support}};
    } else {
        if (a.pred_detections.empty() || a.true_detections.empty())
            throw Error(ErrorCode::InvalidArgument, "--pred-detections and --true-detections go together");
        ctx.fingerprint({{"command", "metrics"}, {"kind", "detection"}, {"iou_threshold", a.iou_threshold}});
        const auto pred = io::load_detections(a.pred_detections);
        const auto truth = io::load_detections(a.true_detections);
        std::set<std::string> ids;
        for (const auto& [id, d] : pred) ids.insert(id);
        for (const auto& [id, d] : truth) ids.insert(id);
        std::int64_t matched = 0, n_pred = 0, n_truth = 0;
        double iou_sum = 0.0;
        json per_image = json::object();
        for (const auto& id : ids) {
            static const std::vector<Detection> none;
            const auto& p = pred.contains(id) ? pred.at(id) : none;
            const auto& t = truth.contains(id) ? truth.at(id) : none;
            const auto r = metrics::detection_set_iou(p, t, a.iou_threshold);
            matched += r.matched;
            n_pred += static_cast<std::int64_t>(p.size());
            n_truth += static_cast<std::int64_t>(t.size());
            iou_sum += r.mean_iou * static_cast<double>(r.matched);
            per_image[id] = {{"matched", r.matched}, {"mean_iou", r.mean_iou}};
        }
        result = {{"images", ids.size()},
                  {"matched", matched},
                  {"predicted", n_pred},
                  {"truth", n_truth},
                  {"mean_iou", matched > 0 ? iou_sum / static_cast<double>(matched) : 0.0},
                  {"precision", n_pred > 0 ? static_cast<double>(matched) / static_cast<double>(n_pred) : 0.0},
                  {"recall", n_truth > 0 ? static_cast<double>(matched) / static_cast<double>(n_truth) : 0.0},
                  {"per_image", per_image}};
    }
    ctx.emit(result.dump(2) + "\n");
    return 0;
}

// ---------------------------------------------------------------------------
// report

struct ReportArgs {
    std::string input;
    std::string format = "markdown";
    std::string compare;
    std::string fixture;
    bool list = false;
};

std::string fixture_markdown(const dg::ReferenceTable& t) {
    std::ostringstream out;
    out << "# " << t.id << ": " << t.caption << "\n\n| Method |";
    for (const auto& c : t.columns) out << ' ' << c << " |";
    out << "\n|---|";
    for (std::size_t i = 0; i < t.columns.size(); ++i) out << "---|";
    out << '\n';
    for (const auto& r : t.rows) {
        out << "| " << r.label << " |";
        for (const auto& v : r.values) out << ' ' << v << " |";
        out << '\n';
    }
    return out.str();
}

int run_report(const Context& ctx, const ReportArgs& a) {
    if (a.list) {
        ctx.fingerprint({{"command", "report"}, {"list", true}});
        std::string text;
        for (const auto& t : dg::reference_tables()) text += t.id + "\t" + t.caption + "\n";
        ctx.emit(text);
        return 0;
    }
    if (!a.fixture.empty()) {
        ctx.fingerprint({{"command", "report"}, {"fixture", a.fixture}});
        ctx.emit(fixture_markdown(dg::reference_table(a.fixture)));
        return 0;
    }
    if (a.input.empty()) throw Error(ErrorCode::InvalidArgument, "report needs --input REPORT.json, --fixture or --list");
    json j;
    try {
        j = json::parse(io::read_file(a.input));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::SchemaMismatch, a.input + ": " + e.what());
    }
    const auto report = dg::ExperimentReport::from_json(j);
    ctx.fingerprint_hex(report.config_fingerprint);
    if (!a.compare.empty()) {
        ctx.emit(dg::format_diff(dg::compare_to_reference(report, a.compare)));
        return 0;
    }
    ctx.emit(dg::emit_report(report, dg::parse_report_format(a.format)));
    return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Knowledge-guided diabetic retinopathy grading and domain-generalization toolkit", "kgdg"};
    app.footer(kFooter);
    app.require_subcommand(1, 1);
    app.fallthrough();

    Context ctx{{}, out, err};
    Globals& g = ctx.g;
    g.seed_opt = app.add_option("--seed", g.seed, "Seed for every random stream")->option_text("N");
    app.add_option("--config", g.config, "JSON config for the subcommand")->option_text("FILE");
    app.add_option("--out", g.out, "Output path; '-' for standard output")->option_text("PATH");
    app.add_flag("--quiet", g.quiet, "Suppress diagnostics (never changes output bytes)");

    SynthArgs synth_a;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic multi-domain dataset into --out DIR");
    synth->add_option("--profile", synth_a.profile, "Shift profile: mild, severe, vein_hostile")
        ->capture_default_str();
    synth->add_option("--n-samples", synth_a.n_samples, "Override samples per domain")->option_text("N");

    GradeArgs grade_a;
    auto* grade = app.add_subcommand("grade", "Grade images with the clinical rules, or with a symbolic model");
    grade->add_option("--features", grade_a.features, "Feature table CSV")->option_text("FILE");
    grade->add_option("--detections", grade_a.detections, "Detections JSON")->option_text("FILE");
    grade->add_option("--model", grade_a.model, "Symbolic model; emits a probability table")->option_text("FILE");

    TrainArgs train_a;
    auto* train = app.add_subcommand("train", "Train a symbolic classifier and save it to --out");
    train->add_option("--features", train_a.features, "Feature tables, one per domain")->option_text("FILE...");
    train->add_option("--manifest", train_a.manifest, "Dataset manifest")->option_text("FILE");
    train->add_option("--model-kind", train_a.model_kind, "gbm, logistic, forest or knn");
    train->add_option("--feature-set", train_a.feature_set, "lesions_only or lesions_vein");

    FuseArgs fuse_a;
    auto* fuse = app.add_subcommand("fuse", "Fuse deep and symbolic probability tables");
    fuse->add_option("--dl", fuse_a.dl, "Deep-branch probability table")->required()->option_text("FILE");
    fuse->add_option("--kd", fuse_a.kd, "Symbolic-branch probability table")->required()->option_text("FILE");
    fuse->add_option("--strategy", fuse_a.strategy, "selective, max, classwise or weighted")->capture_default_str();
    fuse_a.alpha_dl_opt = fuse->add_option("--alpha-dl", fuse_a.alpha_dl, "Deep weight (weighted strategy)");
    fuse_a.alpha_kl_opt =
        fuse->add_option("--alpha-kl", fuse_a.alpha_kl, "Symbolic weight (default 1 - alpha-dl)");

    EvalArgs eval_a;
    auto* eval = app.add_subcommand("eval", "Run a single- or multi-domain generalization experiment");
    eval->add_option("--mode", eval_a.mode, "sdg or mdg (overrides the config)");
    eval->add_option("--manifest", eval_a.manifest, "Dataset manifest (overrides the config)")->option_text("FILE");
    eval->add_option("--format", eval_a.format, "markdown, csv or json")->capture_default_str();

    MetricsArgs metrics_a;
    auto* metrics_cmd = app.add_subcommand("metrics", "Score probability tables or detections");
    metrics_cmd->add_option("--labels", metrics_a.labels, "Feature table holding true grades")->option_text("FILE");
    metrics_cmd->add_option("--probs", metrics_a.probs, "Probability table")->option_text("FILE");
    metrics_cmd->add_option("--pred-detections", metrics_a.pred_detections, "Predicted detections JSON")
        ->option_text("FILE");
    metrics_cmd->add_option("--true-detections", metrics_a.true_detections, "Ground-truth detections JSON")
        ->option_text("FILE");
    metrics_cmd->add_option("--iou-threshold", metrics_a.iou_threshold, "Minimum IoU for a match")
        ->capture_default_str();

    ReportArgs report_a;
    auto* report = app.add_subcommand("report", "Re-render a JSON report or show reference tables");
    report->add_option("--input", report_a.input, "Report JSON from eval --format json")->option_text("FILE");
    report->add_option("--format", report_a.format, "markdown, csv or json")->capture_default_str();
    report->add_option("--compare", report_a.compare, "Diff against a reference table")->option_text("ID");
    report->add_option("--fixture", report_a.fixture, "Print a reference table")->option_text("ID");
    report->add_flag("--list", report_a.list, "List reference tables");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        const auto subs = app.get_subcommands();
        err << (subs.empty() ? app.help() : subs.front()->help());
        return 2;
    }

    CLI::App* chosen = app.get_subcommands().front();
    try {
        if (chosen == synth) return run_synth(ctx, synth_a);
        if (chosen == grade) return run_grade(ctx, grade_a);
        if (chosen == train) return run_train(ctx, train_a);
        if (chosen == fuse) return run_fuse(ctx, fuse_a);
        if (chosen == eval) return run_eval(ctx, eval_a);
        if (chosen == metrics_cmd) return run_metrics(ctx, metrics_a);
        if (chosen == report) return run_report(ctx, report_a);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        if (e.category() == ErrorCategory::Usage && e.code() == ErrorCode::InvalidArgument) err << chosen->help();
        return exit_code_for(e.category());
    } catch (const std::exception& e) {
        err << "error: InternalInvariant: " << e.what() << "\n";
        return 4;
    }
    return 4;
}

}  // namespace kgdg::cli
