#include <cmath>
#include <sstream>

#include "kgdg/harness.hpp"
#include "kgdg/util.hpp"

namespace kgdg::dg {

namespace {

using Rows = std::vector<ReferenceRow>;

ReferenceTable sdg_table(std::string id, std::string caption, std::string setting, std::vector<std::string> columns,
                         Rows rows) {
    return {std::move(id), std::move(caption), std::move(setting), "accuracy", std::move(columns), std::move(rows), false};
}

std::vector<ReferenceTable> build_tables() {
    const std::string dl(kMethodNeural), kl(kMethodSymbolic);
    const std::string nonw = fusion_method_label(fusion::Strategy::MaxConfidence);
    const std::string w = fusion_method_label(fusion::Strategy::Weighted);
    std::vector<ReferenceTable> t;

    t.push_back(sdg_table("sdg-aptos", "SDG trained on APTOS, cross-domain accuracy (%)", "aptos",
                          {"Eyepacs", "Messidor", "Messidor2", "Average"},
                          {
                              {"DRGen", "", {"67.5±1.8", "46.7±0.1", "61.0±0.1", "58.4±0.57"}},
                              {"ERM-ViT", "", {"67.8±1.4", "45.5±0.2", "58.8±0.4", "57.3±0.76"}},
                              {"SD-ViT", "", {"72.0±0.8", "45.4±0.1", "58.5±0.2", "58.6±0.22"}},
                              {"SPSD-ViT", "", {"71.4±0.8", "45.6±0.1", "58.8±0.2", "58.6±0.42"}},
                              {"VIT (DL)", dl, {"66.6±0.4", "46.4±0.3", "48.9±0.2", "53.9±0.5"}},
                              {"Knowledge (KL)", kl, {"66.4±0.8", "49.6±0.2", "53.9±0.7", "56.6±0.3"}},
                              {"Non Weighted (DL + KL)", nonw, {"72.8±0.5", "50.6±0.4", "54.3±0.4", "59.9±0.2"}},
                              {"Weighted (DL + KL)", w, {"67.4±0.3", "49.6±0.3", "53.9±0.6", "57.0±0.2"}},
                          }));

    t.push_back(sdg_table("sdg-messidor", "SDG trained on MESSIDOR, cross-domain accuracy (%)", "messidor",
                          {"Aptos", "Eyepacs", "Messidor2", "Average"},
                          {
                              {"DRGen", "", {"41.7±4.3", "43.1±7.9", "44.8±0.9", "43.2±0.65"}},
                              {"ERM-ViT", "", {"45.3±1.3", "52.4±3.2", "58.2±3.2", "51.9±0.71"}},
                              {"SD-ViT", "", {"44.3±0.9", "53.2±1.6", "57.8±2.4", "51.7±0.35"}},
                              {"SPSD-ViT", "", {"48.3±1.1", "57.4±2.1", "62.2±1.6", "55.9±0.88"}},
                              {"VIT (DL)", dl, {"49.8±0.4", "62.1±0.3", "59.1±0.3", "57.0±0.5"}},
                              {"Knowledge (KL)", kl, {"74.0±0.5", "63.6±0.4", "63.8±0.3", "67.1±0.2"}},
                              {"Non Weighted (DL + KL)", nonw, {"52.7±0.7", "63.4±0.4", "61.4±0.5", "59.2±0.4"}},
                              {"Weighted (DL + KL)", w, {"74.1±0.5", "63.3±0.2", "63.8±0.6", "67.1±0.7"}},
                          }));

    t.push_back(sdg_table("sdg-messidor2", "SDG trained on MESSIDOR2, cross-domain accuracy (%)", "messidor2",
                          {"Aptos", "Eyepacs", "Messidor", "Average"},
                          {
                              {"DRGen", "", {"40.9±3.9", "69.3±1.0", "61.3±0.8", "57.7±0.67"}},
                              {"ERM-ViT", "", {"47.9±2.1", "67.4±0.9", "59.6±3.9", "58.3±0.33"}},
                              {"SD-ViT", "", {"51.8±0.9", "68.7±0.6", "62.0±1.7", "60.8±0.58"}},
                              {"SPSD-ViT", "", {"52.8±2.0", "72.5±0.3", "61.0±0.8", "62.1±0.85"}},
                              {"VIT (DL)", dl, {"29.2±0.4", "44.7±0.5", "49.4±0.7", "41.1±0.7"}},
                              {"Knowledge (KL)", kl, {"69.1±0.3", "71.1±0.4", "55.3±0.9", "65.2±0.5"}},
                              {"Non Weighted (DL + KL)", nonw, {"63.6±0.6", "71.1±0.8", "56.4±0.2", "63.7±0.6"}},
                              {"Weighted (DL + KL)", w, {"69.5±0.4", "71.0±0.2", "55.9±0.6", "65.5±0.3"}},
                          }));

    t.push_back(sdg_table("sdg-eyepacs", "SDG trained on EYEPACS, cross-domain accuracy (%)", "eyepacs",
                          {"Aptos", "Messidor", "Messidor2", "Average"},
                          {
                              {"DRGen", "", {"61.3±1.9", "54.6±1.5", "65.4±0.1", "60.4±0.25"}},
                              {"ERM-ViT", "", {"69.1±1.4", "50.4±0.3", "62.8±0.2", "60.8±0.58"}},
                              {"SD-ViT", "", {"69.3±0.3", "50.0±0.5", "62.9±0.2", "60.7±0.41"}},
                              {"SPSD-ViT", "", {"75.1±0.5", "50.5±0.8", "62.2±0.4", "62.5±0.62"}},
                              {"VIT (DL)", dl, {"49.7±0.9", "52.9±0.2", "49.1±0.9", "50.6±0.4"}},
                              {"Knowledge (KL)", kl, {"60.2±0.2", "53.7±0.6", "66.5±0.4", "60.13±0.5"}},
                              {"Non Weighted (DL + KL)", nonw, {"63.9±0.2", "53.8±0.3", "67.2±0.6", "61.7±0.4"}},
                              {"Weighted (DL + KL)", w, {"60.2±0.3", "48.7±0.2", "66.4±0.7", "58.4±0.9"}},
                          }));

    t.push_back({"mdg",
                 "Multi-domain generalization, accuracy (%) on the held-out domain",
                 "mdg",
                 "accuracy",
                 {"Aptos", "Eyepacs", "Messidor", "Messidor 2", "Avg."},
                 {
                     {"ERM [ResNet50 (23.5M)]", "", {"47.6±1.7", "71.3±0.3", "63.0±0.4", "69.0±1.5", "62.7"}},
                     {"IRM [ResNet50]", "", {"52.1±1.7", "73.2±0.3", "51.3±3.8", "57.2±1.7", "58.4"}},
                     {"ARM [ResNet50]", "", {"45.6±1.5", "71.7±0.5", "62.4±1.0", "60.0±3.4", "59.9"}},
                     {"Fish [ResNet50]", "", {"44.6±2.2", "72.7±0.7", "62.1±0.7", "66.4±1.7", "61.4"}},
                     {"Fishr [ResNet50]", "", {"47.0±1.8", "71.9±0.6", "63.3±0.5", "66.4±0.2", "62.2"}},
                     {"GroupDRO [ResNet50]", "", {"44.9±3.8", "72.0±0.3", "63.1±0.9", "67.8±1.9", "62.0"}},
                     {"MLDG [ResNet50]", "", {"44.1±1.6", "72.7±0.6", "62.7±0.6", "64.4±0.4", "61.0"}},
                     {"Mixup [ResNet50]", "", {"47.3±1.7", "72.0±0.3", "59.8±2.8", "65.8±1.4", "61.2"}},
                     {"Coral [ResNet50]", "", {"49.8±1.0", "71.7±0.9", "58.6±2.8", "68.2±0.6", "62.1"}},
                     {"MMD [ResNet50]", "", {"49.3±1.0", "69.3±1.1", "64.1±4.8", "69.6±0.6", "63.1"}},
                     {"DANN [ResNet50]", "", {"54.4±0.8", "72.9±1.4", "57.0±1.1", "58.6±1.7", "60.7"}},
                     {"CDANN [ResNet50]", "", {"48.1±0.7", "73.1±0.3", "55.8±1.8", "61.2±1.3", "59.5"}},
                     {"ERM-ViT [DeiT-Small (22M)]", "", {"48.5±0.9", "70.7±1.7", "62.7±1.6", "69.5±2.5", "62.9"}},
                     {"ERM-ViT [T2T-14 (21.5M)]", "", {"54.0±3.0", "73.2±0.4", "60.8±1.7", "72.0±0.2", "62.5"}},
                     {"ERM-ViT [CvT-13 (20M)]", "", {"51.3±1.7", "73.3±0.2", "64.8±0.6", "72.4±0.6", "65.5"}},
                     {"SD-ViT [DeiT-Small (22M)]", "", {"48.2±2.5", "69.6±1.5", "63.9±1.3", "65.0±1.7", "61.8"}},
                     {"SD-ViT [T2T-14 (21.5M)]", "", {"46.5±0.8", "71.1±0.7", "63.9±0.9", "71.4±0.2", "63.2"}},
                     {"SPSD-ViT [DeiT-Small (22M)]", "", {"51.6±1.1", "73.3±0.4", "64.0±1.4", "72.9±0.1", "65.5"}},
                     {"SPSD-ViT [T2T-14 (21.5M)]", "", {"50.0±2.8", "73.6±0.3", "65.2±0.3", "73.3±0.2", "65.5"}},
                     {"SPSD-ViT [CvT-13 (20M)]", "", {"51.7±1.2", "73.3±0.2", "64.8±0.6", "72.4±0.6", "65.5"}},
                     {"ViT (Ours) [Vit (22M)]", dl, {"50.1±1.7", "69.4±0.3", "58.13±3.8", "67.1±1.7", "61.18"}},
                     {"ViT +KL (Ours) [Vit (21.5M)]", nonw, {"53.1±1.7", "72.2±0.3", "51.3±3.8", "56.2±1.7", "58.4"}},
                     {"KL (Ours) [Knowledge (20M)]", kl, {"60.70±1.2", "68.45±0.2", "58.67±0.6", "67.66±0.6", "63.67"}},
                 },
                 false});

    t.push_back({"ablation-fusion-aptos",
                 "Neural, symbolic and fused models trained on APTOS, accuracy (%)",
                 "aptos",
                 "accuracy",
                 {"Eyepacs", "Messidor", "Messidor2"},
                 {
                     {"Neural Only (ViT)", dl, {"66.6", "46.4", "48.9"}},
                     {"Symbolic Only (KL)", kl, {"66.4", "49.6", "53.9"}},
                     {"Neural + Symbolic (Non-Weighted)", nonw, {"72.8", "50.6", "54.3"}},
                     {"Neural + Symbolic (Weighted)", w, {"67.4", "49.6", "53.9"}},
                 },
                 false});

    t.push_back({"ablation-vein",
                 "Symbolic classifiers on APTOS with lesion features, with and without vein features",
                 "aptos",
                 "mixed",
                 {"Accuracy", "F1-Score", "Precision", "Recall", "AUC"},
                 {
                     {"Logistic Regression (Lesions Only)", "", {"0.7732", "0.7322", "0.59", "0.49", "0.74"}},
                     {"Random Forest (Lesions Only)", "", {"0.8169", "0.8115", "0.82", "0.80", "0.81"}},
                     {"SVM (Lesions Only)", "", {"0.7814", "0.7432", "0.59", "0.50", "0.76"}},
                     {"Gradient Boosting (Lesions Only)", "", {"0.8465", "0.8412", "0.82", "0.76", "0.84"}},
                     {"K-Nearest Neighbors (Lesions Only)", "", {"0.7814", "0.7896", "0.63", "0.56", "0.77"}},
                     {"Logistic Regression (Lesions + Vein)", "", {"0.6424", "0.6019", "0.25", "0.33", "0.58"}},
                     {"Random Forest (Lesions + Vein)", "", {"0.7384", "0.7038", "0.55", "0.47", "0.70"}},
                     {"SVM (Lesions + Vein)", "", {"0.6556", "0.6083", "0.26", "0.34", "0.58"}},
                     {"Gradient Boosting (Lesions + Vein)", "", {"0.7252", "0.7389", "0.51", "0.44", "0.69"}},
                     {"K-Nearest Neighbors (Lesions + Vein)", "", {"0.6987", "0.6369", "0.43", "0.44", "0.66"}},
                 },
                 false});

    t.push_back({"in-domain-aptos",
                 "In-domain test accuracy (%) on APTOS with a 60/20/20 split",
                 "aptos",
                 "accuracy",
                 {"Accuracy"},
                 {
                     {"KG-DG (Gradient Boosting)", kl, {"84.65"}},
                     {"ViT", dl, {"78.40"}},
                 },
                 true});
    return t;
}

/// "Avg." and "Average" are the same column; case and spaces are ignored.
std::string column_key(std::string_view name) {
    std::string k;
    for (char c : to_lower(name))
        if (c != ' ' && c != '.') k += c;
    if (k == "avg") k = "average";
    return k;
}

const Panel* find_panel(const ExperimentReport& report, const ReferenceTable& ref) {
    if (ref.setting == "mdg") {
        if (report.mode != Mode::Mdg || report.panels.empty()) return nullptr;
        return &report.panels.front();
    }
    if (report.mode != Mode::Sdg) return nullptr;
    for (const auto& p : report.panels)
        if (p.sources.size() == 1 && p.sources.front() == ref.setting) return &p;
    return nullptr;
}

/// Renders like the reference cell: "mean±std" when it has a spread,
/// otherwise the mean with as many decimals as the reference shows.
std::string render_like(const metrics::Summary& s, const std::string& reference) {
    if (reference.find("±") != std::string::npos) return metrics::format_percent(s);
    const auto dot = reference.find('.');
    const int decimals = dot == std::string::npos ? 0 : static_cast<int>(reference.size() - dot - 1);
    if (std::isnan(s.mean)) return "n/a";
    return format_fixed(100.0 * s.mean, decimals);
}

}  // namespace

const std::vector<ReferenceTable>& reference_tables() {
    static const std::vector<ReferenceTable> tables = build_tables();
    return tables;
}

const ReferenceTable& reference_table(std::string_view id) {
    for (const auto& t : reference_tables())
        if (t.id == id) return t;
    std::string known;
    for (const auto& t : reference_tables()) known += (known.empty() ? "" : ", ") + t.id;
    throw Error(ErrorCode::UnknownReference, "unknown reference '" + std::string(id) + "' (known: " + known + ")");
}

ReferenceTable report_as_table(const ExperimentReport& report, const ReferenceTable& ref) {
    ReferenceTable out{ref.id, ref.caption, ref.setting, ref.metric, ref.columns, {}, ref.in_domain};
    const Panel* panel = find_panel(report, ref);
    if (panel == nullptr) return out;
    for (const auto& rrow : ref.rows) {
        if (rrow.report_method.empty()) continue;
        const MethodRow* mrow = nullptr;
        for (const auto& m : panel->rows)
            if (m.method == rrow.report_method) mrow = &m;
        if (mrow == nullptr) continue;
        ReferenceRow row{rrow.label, rrow.report_method, {}};
        for (std::size_t c = 0; c < ref.columns.size(); ++c) {
            const metrics::Summary* s = nullptr;
            if (ref.in_domain) {
                const std::string key = column_key(ref.columns[c]);
                if (key == "accuracy") s = &mrow->in_domain.accuracy.summary;
                else if (key == "macrof1" || key == "f1-score") s = &mrow->in_domain.macro_f1.summary;
                else if (key == "auc") s = &mrow->in_domain.auc.summary;
            } else {
                for (std::size_t pc = 0; pc < panel->columns.size(); ++pc)
                    if (column_key(panel->columns[pc]) == column_key(ref.columns[c]))
                        s = &mrow->cells[pc].accuracy.summary;
            }
            row.values.push_back(s ? render_like(*s, rrow.values[c]) : "");
        }
        out.rows.push_back(std::move(row));
    }
    return out;
}

DiffSummary compare_tables(const ReferenceTable& observed, const ReferenceTable& reference, bool synthetic) {
    DiffSummary d;
    d.reference_id = reference.id;
    for (const auto& rrow : reference.rows) {
        const ReferenceRow* orow = nullptr;
        for (const auto& o : observed.rows)
            if (o.label == rrow.label) orow = &o;
        // published baselines have no counterpart in a report
        if (orow == nullptr && rrow.report_method.empty()) continue;
        for (std::size_t c = 0; c < reference.columns.size(); ++c) {
            const std::string& want = rrow.values[c];
            std::string got;
            if (orow != nullptr) {
                for (std::size_t oc = 0; oc < observed.columns.size(); ++oc)
                    if (column_key(observed.columns[oc]) == column_key(reference.columns[c]) &&
                        oc < orow->values.size())
                        got = orow->values[oc];
            }
            ++d.compared;
            if (synthetic) {
                d.diffs.push_back({rrow.label, reference.columns[c], want, got, "not comparable: synthetic data"});
            } else if (got.empty()) {
                d.diffs.push_back({rrow.label, reference.columns[c], want, got, "missing in report"});
            } else if (trim(got) != trim(want)) {
                d.diffs.push_back({rrow.label, reference.columns[c], want, got, "differs"});
            }
        }
    }
    return d;
}

DiffSummary compare_to_reference(const ExperimentReport& report, std::string_view reference_id) {
    const ReferenceTable& ref = reference_table(reference_id);
    return compare_tables(report_as_table(report, ref), ref, report.synthetic);
}

std::string format_diff(const DiffSummary& diff) {
    std::ostringstream out;
    out << "reference " << diff.reference_id << ": " << diff.compared << " cells compared, " << diff.diffs.size()
        << " diffs\n";
    if (diff.diffs.empty()) return out.str();
    out << "| Row | Column | Reference | Observed | Note |\n|---|---|---|---|---|\n";
    for (const auto& r : diff.diffs)
        out << "| " << r.row << " | " << r.column << " | " << r.reference << " | "
            << (r.observed.empty() ? "-" : r.observed) << " | " << r.annotation << " |\n";
    return out.str();
}

}  // namespace kgdg::dg
