#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "kgdg/core.hpp"

namespace kgdg::io {

namespace fs = std::filesystem;

/// Result of reading a feature table. `feature_set` reports which of the two
/// fixed schemas the header named.
struct FeatureTable {
    FeatureSet feature_set = FeatureSet::LesionsOnly;
    std::vector<LabeledExample> examples;
};

FeatureTable parse_feature_table(const std::string& text, const std::string& origin = "<memory>");
FeatureTable load_feature_table(const fs::path& path);
std::string format_feature_table(const std::vector<LabeledExample>& examples, FeatureSet set);

using ProbabilityTable = std::map<std::string, ProbabilityVector>;

ProbabilityTable parse_probability_table(const std::string& text, const std::string& origin = "<memory>",
                                         std::vector<std::string>* warnings = nullptr);
ProbabilityTable load_probability_table(const fs::path& path, std::vector<std::string>* warnings = nullptr);
std::string format_probability_table(const ProbabilityTable& table);

/// Attaches neural probabilities to every example. Throws UnknownImageId when
/// an example has no row in the table.
void join_probabilities(std::vector<LabeledExample>& examples, const ProbabilityTable& table);

using DetectionTable = std::map<std::string, std::vector<Detection>>;

DetectionTable parse_detections(const std::string& text, const std::string& origin = "<memory>");
DetectionTable load_detections(const fs::path& path);
std::string format_detections(const DetectionTable& table);

struct ManifestDomain {
    DomainId name;
    fs::path features;
    std::optional<fs::path> probabilities;
    std::optional<fs::path> detections;
};

struct Manifest {
    std::vector<ManifestDomain> domains;
    std::vector<std::int64_t> seeds;
    bool synthetic = false;
};

/// Relative paths are resolved against `base_dir`.
Manifest parse_manifest(const nlohmann::json& j, const fs::path& base_dir);
Manifest load_manifest(const fs::path& path);
/// Paths are written as given (callers pass paths relative to the manifest).
std::string format_manifest(const Manifest& m);

enum class ModelKind { Gbm, Logistic, Forest, Knn };

std::string_view model_kind_name(ModelKind kind) noexcept;
ModelKind parse_model_kind(std::string_view name);

/// Serialized symbolic learner. `parameters` is opaque to this module.
struct ModelArtifact {
    ModelKind model_kind = ModelKind::Gbm;
    nlohmann::json parameters;
    std::vector<std::string> feature_schema;
    std::string train_fingerprint;
    /// Input arity the parameters expect; must equal feature_schema.size().
    std::size_t input_arity = 0;
};

inline constexpr std::string_view kArtifactMagic = "KGDG1";

std::string serialize_model(const ModelArtifact& model);
/// Throws CorruptArtifact (bad magic, truncation, checksum) or SchemaMismatch
/// (schema edited, arity mismatch, or differs from `expected_schema`).
ModelArtifact deserialize_model(const std::string& bytes,
                                const std::vector<std::string>* expected_schema = nullptr);

void save_model(const ModelArtifact& model, const fs::path& path);
ModelArtifact load_model(const fs::path& path, const std::vector<std::string>* expected_schema = nullptr);

std::string read_file(const fs::path& path);
/// Writes to a sibling temp file then renames over `path`.
void write_file(const fs::path& path, const std::string& bytes);

}  // namespace kgdg::io
