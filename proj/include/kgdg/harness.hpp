#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "kgdg/core.hpp"
#include "kgdg/data_io.hpp"
#include "kgdg/fusion.hpp"
#include "kgdg/learn.hpp"
#include "kgdg/metrics.hpp"
#include "kgdg/rules.hpp"

namespace kgdg::dg {

namespace fs = std::filesystem;

struct DomainDataset {
    DomainId name;
    std::vector<LabeledExample> examples;
};

/// Loads every manifest domain, joining probability tables when listed.
std::vector<DomainDataset> load_domains(const io::Manifest& manifest);

// ---------------------------------------------------------------------------
// splitting

struct SplitFractions {
    double train = 0.6;
    double validation = 0.2;
    double test = 0.2;

    void validate() const;
};

/// Row indices into the dataset, each list ascending.
struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;
};

/// Stratified by grade. Per grade, floor(n * fraction) rows go to each part and
/// leftover rows go to the largest fractional remainders (ties: train, then
/// validation, then test).
SplitIndices split_dataset(std::span<const LabeledExample> examples, const SplitFractions& fractions,
                           std::uint64_t seed);

// ---------------------------------------------------------------------------
// alignment

/// Per-column affine map x' = (x - mean) / std * ref_std + ref_mean.
struct AffineAlignment {
    std::vector<double> mean, std, ref_mean, ref_std;

    std::vector<double> apply(std::span<const double> x) const;
    learn::TabularData apply(const learn::TabularData& data) const;
};

/// Maps `domain` statistics onto `reference` statistics (variances floored).
AffineAlignment fit_alignment(const metrics::DomainStats& domain, const metrics::DomainStats& reference);

metrics::DomainStats table_stats(const learn::TabularData& data);

/// Sum of domain_kl over all ordered pairs of distinct domains.
double summed_pairwise_kl(std::span<const metrics::DomainStats> stats);

struct AlignmentResult {
    std::vector<learn::TabularData> transformed;
    double kl_before = 0.0;
    double kl_after = 0.0;
};

/// Standardizes each domain and maps it onto the reference domain's mean and
/// variance. Labels are untouched.
AlignmentResult align_domains(std::span<const learn::TabularData> domains, std::size_t reference);

// ---------------------------------------------------------------------------
// fusion weights

/// (a, 1 - a) for a = 0.1 .. 0.9.
std::vector<FusionWeights> default_weight_grid();

/// Highest validation accuracy wins; ties go to the smallest alpha_kl.
FusionWeights select_weights(std::span<const ProbabilityVector> dl, std::span<const ProbabilityVector> kd,
                             std::span<const int> labels, std::span<const FusionWeights> grid);

// ---------------------------------------------------------------------------
// configuration

enum class Mode { Sdg, Mdg };
std::string_view mode_name(Mode m);
Mode parse_mode(std::string_view s);

struct ExperimentConfig {
    Mode mode = Mode::Sdg;
    /// The "domains" entry as written: a manifest path or an inline manifest.
    nlohmann::json domains_spec;
    /// Resolved form of domains_spec.
    std::optional<fs::path> manifest_path;
    std::optional<io::Manifest> inline_manifest;
    /// SDG source domains; empty means every domain in turn.
    std::vector<DomainId> sources;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    SplitFractions split;
    learn::TrainConfig symbolic;
    std::vector<fusion::Strategy> strategies{fusion::Strategy::MaxConfidence, fusion::Strategy::Weighted};
    /// Fixed weights for the weighted row; otherwise grid-searched.
    std::optional<FusionWeights> weights;
    std::vector<FusionWeights> weight_grid = default_weight_grid();
    rules::RuleConfig rules;
    bool neural_row = true;
    bool rules_row = false;
    bool alignment = false;
    std::optional<DomainId> alignment_reference;

    void validate() const;
    /// Canonical form; the manifest appears as given.
    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j, const fs::path& base_dir);
    static ExperimentConfig load(const fs::path& path);
    std::string fingerprint() const;
    /// Loads the manifest named by the config. Throws InvalidConfig if there is none.
    io::Manifest manifest() const;
};

// ---------------------------------------------------------------------------
// report

/// Per-seed values of one metric plus their summary.
struct SeededValue {
    std::vector<double> per_seed;
    metrics::Summary summary;
};

struct Cell {
    SeededValue accuracy;
    SeededValue macro_f1;
    SeededValue auc;  // NaN entries when AUC was undefined
};

struct MethodRow {
    std::string method;
    std::vector<Cell> cells;  // one per column, Average last
    Cell in_domain;
};

struct Panel {
    std::string title;
    std::vector<std::string> sources;
    std::vector<std::string> columns;  // display names, "Average" last
    std::vector<MethodRow> rows;
    double kl_before = 0.0;
    std::optional<double> kl_after;
    /// Weighted-row weights chosen per seed (per fold for mdg).
    std::vector<FusionWeights> selected_weights;
};

struct ExperimentReport {
    Mode mode = Mode::Sdg;
    std::vector<Panel> panels;
    std::vector<std::uint64_t> seeds;
    std::string config_fingerprint;
    std::string data_fingerprint;
    bool synthetic = false;
    int folds_run = 0;
    std::vector<std::string> notes;

    nlohmann::json to_json() const;
    static ExperimentReport from_json(const nlohmann::json& j);
};

inline constexpr std::string_view kMethodNeural = "VIT (DL)";
inline constexpr std::string_view kMethodSymbolic = "Knowledge (KL)";
inline constexpr std::string_view kMethodRules = "Rules (clinical)";
std::string fusion_method_label(fusion::Strategy s);

/// Display name of a domain id in report columns ("messidor2" -> "Messidor2").
std::string display_name(const DomainId& d);

ExperimentReport run_sdg(const ExperimentConfig& cfg, const io::Manifest& manifest);
ExperimentReport run_mdg(const ExperimentConfig& cfg, const io::Manifest& manifest);
ExperimentReport run_experiment(const ExperimentConfig& cfg, const io::Manifest& manifest);

/// Same as above on already loaded domains.
ExperimentReport run_experiment(const ExperimentConfig& cfg, std::span<const DomainDataset> domains,
                                bool synthetic = false);

/// Throws LeakageDetected if any training key appears among `evaluated`.
/// Keys are "domain/image_id".
void check_leakage(const std::set<std::string>& train_keys, const std::set<std::string>& evaluated);

enum class ReportFormat { Markdown, Csv, Json };
ReportFormat parse_report_format(std::string_view s);
std::string emit_report(const ExperimentReport& report, ReportFormat format);

// ---------------------------------------------------------------------------
// reference fixtures

struct ReferenceRow {
    std::string label;
    /// Report method this row corresponds to, empty when none.
    std::string report_method;
    std::vector<std::string> values;  // verbatim, e.g. "72.8±0.5"
};

struct ReferenceTable {
    std::string id;
    std::string caption;
    /// Source domain for SDG tables, "mdg" for the multi-domain table.
    std::string setting;
    std::string metric;  // "accuracy" or a column-wise mix
    std::vector<std::string> columns;
    std::vector<ReferenceRow> rows;
    /// Cells come from in-domain test rows rather than target columns.
    bool in_domain = false;
};

const std::vector<ReferenceTable>& reference_tables();
/// Throws UnknownReference.
const ReferenceTable& reference_table(std::string_view id);

struct DiffRow {
    std::string row;
    std::string column;
    std::string reference;
    std::string observed;  // empty when the report lacks the cell
    std::string annotation;
};

struct DiffSummary {
    std::string reference_id;
    std::size_t compared = 0;
    std::vector<DiffRow> diffs;
};

/// Cell-by-cell diff of two tables with identical layout semantics.
DiffSummary compare_tables(const ReferenceTable& observed, const ReferenceTable& reference, bool synthetic);

/// Renders the matching panel of `report` as a table and diffs it. Output is
/// informational only.
DiffSummary compare_to_reference(const ExperimentReport& report, std::string_view reference_id);

/// The report panel that corresponds to `ref`, rendered in its row/column layout.
ReferenceTable report_as_table(const ExperimentReport& report, const ReferenceTable& ref);

std::string format_diff(const DiffSummary& diff);

}  // namespace kgdg::dg
