#include <cmath>
#include <limits>
#include <sstream>

#include "kgdg/harness.hpp"
#include "kgdg/util.hpp"

namespace kgdg::dg {

using nlohmann::json;

namespace {

json number_or_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

double number_from(const json& j) {
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

json seeded_to_json(const SeededValue& v) {
    json a = json::array();
    for (double x : v.per_seed) a.push_back(number_or_null(x));
    return a;
}

SeededValue seeded_from_json(const json& j) {
    SeededValue v;
    for (const auto& x : j) v.per_seed.push_back(number_from(x));
    v.summary = metrics::seeded_summary(v.per_seed);
    return v;
}

json cell_to_json(const Cell& c) {
    return {{"accuracy", seeded_to_json(c.accuracy)},
            {"macro_f1", seeded_to_json(c.macro_f1)},
            {"auc", seeded_to_json(c.auc)}};
}

Cell cell_from_json(const json& j) {
    return {seeded_from_json(j.at("accuracy")), seeded_from_json(j.at("macro_f1")), seeded_from_json(j.at("auc"))};
}

enum class Metric { Accuracy, MacroF1, Auc };

const SeededValue& pick(const Cell& c, Metric m) {
    switch (m) {
        case Metric::Accuracy: return c.accuracy;
        case Metric::MacroF1: return c.macro_f1;
        case Metric::Auc: return c.auc;
    }
    return c.accuracy;
}

std::string_view metric_key(Metric m) {
    switch (m) {
        case Metric::Accuracy: return "accuracy";
        case Metric::MacroF1: return "macro_f1";
        case Metric::Auc: return "auc";
    }
    return "accuracy";
}

constexpr Metric kMetrics[] = {Metric::Accuracy, Metric::MacroF1, Metric::Auc};

/// Markdown table; the best formatted mean in each column is bold.
void markdown_table(std::ostringstream& out, const std::vector<std::string>& columns,
                    const std::vector<std::string>& labels, const std::vector<std::vector<const SeededValue*>>& cells) {
    const std::size_t n_cols = columns.size();
    std::vector<std::string> best(n_cols);
    std::vector<double> best_mean(n_cols, -1.0);
    for (const auto& row : cells)
        for (std::size_t c = 0; c < n_cols; ++c) {
            const auto& s = row[c]->summary;
            if (std::isnan(s.mean)) continue;
            // compare as rendered so equal-looking cells are all bold
            const double shown = std::round(s.mean * 1000.0) / 1000.0;
            if (shown > best_mean[c]) best_mean[c] = shown;
        }
    out << "| Method |";
    for (const auto& c : columns) out << ' ' << c << " |";
    out << "\n|---|";
    for (std::size_t c = 0; c < n_cols; ++c) out << "---|";
    out << '\n';
    for (std::size_t r = 0; r < cells.size(); ++r) {
        out << "| " << labels[r] << " |";
        for (std::size_t c = 0; c < n_cols; ++c) {
            const auto& s = cells[r][c]->summary;
            const std::string text = metrics::format_percent(s);
            const bool bold = !std::isnan(s.mean) && std::round(s.mean * 1000.0) / 1000.0 == best_mean[c];
            out << ' ' << (bold ? "**" + text + "**" : text) << " |";
        }
        out << '\n';
    }
    out << '\n';
}

std::string markdown(const ExperimentReport& report) {
    std::ostringstream out;
    for (const Panel& p : report.panels) {
        out << "# " << p.title << "\n\n";
        out << "Sources: ";
        for (std::size_t i = 0; i < p.sources.size(); ++i) out << (i ? ", " : "") << p.sources[i];
        out << "\n\n";
        std::vector<std::string> labels;
        for (const auto& row : p.rows) labels.push_back(row.method);
        const std::pair<Metric, const char*> titles[] = {{Metric::Accuracy, "Cross-domain Accuracy (%)"},
                                                         {Metric::MacroF1, "Macro F1 (%)"},
                                                         {Metric::Auc, "AUC (%)"}};
        for (const auto& [metric, title] : titles) {
            out << "## " << title << "\n\n";
            std::vector<std::vector<const SeededValue*>> cells;
            for (const auto& row : p.rows) {
                std::vector<const SeededValue*> r;
                for (const auto& c : row.cells) r.push_back(&pick(c, metric));
                cells.push_back(r);
            }
            markdown_table(out, p.columns, labels, cells);
        }
        out << "## In-domain test (%)\n\n";
        std::vector<std::vector<const SeededValue*>> cells;
        for (const auto& row : p.rows)
            cells.push_back({&row.in_domain.accuracy, &row.in_domain.macro_f1, &row.in_domain.auc});
        markdown_table(out, {"Accuracy", "Macro F1", "AUC"}, labels, cells);

        out << "Domain KL (summed pairwise): before " << format_fixed(p.kl_before, 4);
        if (p.kl_after) out << ", after alignment " << format_fixed(*p.kl_after, 4);
        out << "\n";
        if (!p.selected_weights.empty()) {
            out << "Selected weights (alpha_DL, alpha_KL):";
            for (const auto& w : p.selected_weights)
                out << " (" << format_fixed(w.alpha_dl, 2) << ", " << format_fixed(w.alpha_kl, 2) << ")";
            out << "\n";
        }
        out << "\n";
    }
    out << "## Notes\n\n";
    for (const auto& n : report.notes) out << "- " << n << "\n";
    out << "- Config fingerprint: " << report.config_fingerprint << "\n";
    out << "- Data fingerprint: " << report.data_fingerprint << "\n";
    out << "- Seeds:";
    for (auto s : report.seeds) out << ' ' << s;
    out << "\n- Folds run: " << report.folds_run << "\n";
    return out.str();
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
        if (c == '"') q += '"';
        q += c;
    }
    return q + "\"";
}

std::string csv_number(double v) { return std::isnan(v) ? "" : format_double(v); }

void csv_line(std::ostringstream& out, const std::string& panel, std::string_view metric, const std::string& method,
              const std::string& column, const SeededValue& v) {
    out << csv_field(panel) << ',' << metric << ',' << csv_field(method) << ',' << csv_field(column) << ','
        << csv_number(v.summary.mean) << ',' << csv_number(v.summary.std) << ',' << v.per_seed.size() << ',';
    for (std::size_t i = 0; i < v.per_seed.size(); ++i) out << (i ? ";" : "") << csv_number(v.per_seed[i]);
    out << '\n';
}

std::string csv(const ExperimentReport& report) {
    std::ostringstream out;
    out << "panel,metric,method,column,mean,std,n_seeds,per_seed\n";
    for (const Panel& p : report.panels)
        for (const auto& row : p.rows) {
            for (Metric m : kMetrics)
                for (std::size_t c = 0; c < p.columns.size(); ++c)
                    csv_line(out, p.title, metric_key(m), row.method, p.columns[c], pick(row.cells[c], m));
            for (Metric m : kMetrics) csv_line(out, p.title, metric_key(m), row.method, "in_domain", pick(row.in_domain, m));
        }
    return out.str();
}

}  // namespace

json ExperimentReport::to_json() const {
    json panels_j = json::array();
    for (const Panel& p : panels) {
        json rows_j = json::array();
        for (const auto& row : p.rows) {
            json cells_j = json::array();
            for (const auto& c : row.cells) cells_j.push_back(cell_to_json(c));
            rows_j.push_back({{"method", row.method}, {"cells", cells_j}, {"in_domain", cell_to_json(row.in_domain)}});
        }
        json weights_j = json::array();
        for (const auto& w : p.selected_weights) weights_j.push_back({w.alpha_dl, w.alpha_kl});
        panels_j.push_back({{"title", p.title},
                            {"sources", p.sources},
                            {"columns", p.columns},
                            {"rows", rows_j},
                            {"kl_before", p.kl_before},
                            {"kl_after", p.kl_after ? json(*p.kl_after) : json(nullptr)},
                            {"selected_weights", weights_j}});
    }
    return {{"mode", std::string(mode_name(mode))},
            {"panels", panels_j},
            {"seeds", seeds},
            {"config_fingerprint", config_fingerprint},
            {"data_fingerprint", data_fingerprint},
            {"synthetic", synthetic},
            {"folds_run", folds_run},
            {"notes", notes}};
}

ExperimentReport ExperimentReport::from_json(const json& j) {
    ExperimentReport r;
    try {
        r.mode = parse_mode(j.at("mode").get<std::string>());
        r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        r.config_fingerprint = j.at("config_fingerprint").get<std::string>();
        r.data_fingerprint = j.at("data_fingerprint").get<std::string>();
        r.synthetic = j.at("synthetic").get<bool>();
        r.folds_run = j.at("folds_run").get<int>();
        r.notes = j.at("notes").get<std::vector<std::string>>();
        for (const auto& pj : j.at("panels")) {
            Panel p;
            p.title = pj.at("title").get<std::string>();
            p.sources = pj.at("sources").get<std::vector<std::string>>();
            p.columns = pj.at("columns").get<std::vector<std::string>>();
            p.kl_before = pj.at("kl_before").get<double>();
            if (!pj.at("kl_after").is_null()) p.kl_after = pj["kl_after"].get<double>();
            for (const auto& w : pj.at("selected_weights"))
                p.selected_weights.push_back({w.at(0).get<double>(), w.at(1).get<double>()});
            for (const auto& rj : pj.at("rows")) {
                MethodRow row;
                row.method = rj.at("method").get<std::string>();
                for (const auto& c : rj.at("cells")) row.cells.push_back(cell_from_json(c));
                if (row.cells.size() != p.columns.size())
                    throw Error(ErrorCode::SchemaMismatch, "report row '" + row.method + "' has the wrong cell count");
                row.in_domain = cell_from_json(rj.at("in_domain"));
                p.rows.push_back(std::move(row));
            }
            r.panels.push_back(std::move(p));
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::SchemaMismatch, std::string("report JSON: ") + e.what());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::SchemaMismatch) throw;
        throw Error(ErrorCode::SchemaMismatch, std::string("report JSON: ") + e.what());
    }
    return r;
}

ReportFormat parse_report_format(std::string_view s) {
    const std::string v = to_lower(s);
    if (v == "markdown" || v == "md") return ReportFormat::Markdown;
    if (v == "csv") return ReportFormat::Csv;
    if (v == "json") return ReportFormat::Json;
    throw Error(ErrorCode::InvalidArgument, "report format must be markdown, csv or json");
}

std::string emit_report(const ExperimentReport& report, ReportFormat format) {
    switch (format) {
        case ReportFormat::Markdown: return markdown(report);
        case ReportFormat::Csv: return csv(report);
        case ReportFormat::Json: return report.to_json().dump(2) + "\n";
    }
    return {};
}

}  // namespace kgdg::dg
