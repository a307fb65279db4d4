#include "kgdg/data_io.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "kgdg/util.hpp"

namespace kgdg::io {

using nlohmann::json;

namespace {

std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        cells.push_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return cells;
}

struct CsvDocument {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;
};

CsvDocument parse_csv(const std::string& text, const std::string& origin) {
    CsvDocument doc;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        auto cells = split_csv_line(line);
        if (doc.header.empty()) {
            doc.header = std::move(cells);
            continue;
        }
        if (cells.size() != doc.header.size())
            throw Error(ErrorCode::MissingColumn, origin + ":" + std::to_string(line_no) + ": row has " +
                                                      std::to_string(cells.size()) + " cells, header has " +
                                                      std::to_string(doc.header.size()));
        doc.rows.push_back(std::move(cells));
        doc.line_numbers.push_back(line_no);
    }
    if (doc.header.empty()) throw Error(ErrorCode::MissingColumn, origin + ": missing header row");
    return doc;
}

std::string where(const std::string& origin, std::size_t line, const std::string& column) {
    return origin + ":" + std::to_string(line) + ": column '" + column + "'";
}

std::int64_t parse_count(const std::string& cell, const std::string& ctx) {
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty())
        throw Error(ErrorCode::NonNumericCell, ctx + ": '" + cell + "' is not an integer");
    if (v < 0) throw Error(ErrorCode::NonNumericCell, ctx + ": count " + cell + " is negative");
    return v;
}

bool parse_flag(const std::string& cell, const std::string& ctx) {
    const std::string c = to_lower(cell);
    if (c == "1" || c == "true") return true;
    if (c == "0" || c == "false") return false;
    throw Error(ErrorCode::NonNumericCell, ctx + ": '" + cell + "' is not a 0/1 flag");
}

double parse_real(const std::string& cell, const std::string& ctx) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty() || !std::isfinite(v))
        throw Error(ErrorCode::NonNumericCell, ctx + ": '" + cell + "' is not a number");
    return v;
}

const std::vector<std::string>& vein_columns() {
    static const std::vector<std::string> cols = {"vein_tortuosity", "vein_caliber_mean",
                                                  "vein_branch_angle_mean"};
    return cols;
}

}  // namespace

// ---------------------------------------------------------------------------
// feature tables

FeatureTable parse_feature_table(const std::string& text, const std::string& origin) {
    const CsvDocument doc = parse_csv(text, origin);

    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < doc.header.size(); ++i) {
        if (!col.emplace(doc.header[i], i).second)
            throw Error(ErrorCode::SchemaMismatch, origin + ": duplicate column '" + doc.header[i] + "'");
    }
    std::vector<std::string> required = {"image_id", "domain", "grade"};
    const auto& lesion_cols = feature_schema(FeatureSet::LesionsOnly);
    required.insert(required.end(), lesion_cols.begin(), lesion_cols.end());
    for (const auto& name : required)
        if (!col.count(name)) throw Error(ErrorCode::MissingColumn, origin + ": missing column '" + name + "'");

    std::size_t vein_present = 0;
    for (const auto& name : vein_columns()) vein_present += col.count(name);
    if (vein_present != 0 && vein_present != vein_columns().size()) {
        for (const auto& name : vein_columns())
            if (!col.count(name))
                throw Error(ErrorCode::MissingColumn,
                            origin + ": vein columns must be all present or all absent; missing '" + name + "'");
    }
    FeatureTable table;
    table.feature_set = vein_present ? FeatureSet::LesionsVein : FeatureSet::LesionsOnly;
    if (doc.header.size() != required.size() + vein_present) {
        std::set<std::string> known(required.begin(), required.end());
        known.insert(vein_columns().begin(), vein_columns().end());
        for (const auto& name : doc.header)
            if (!known.count(name))
                throw Error(ErrorCode::SchemaMismatch, origin + ": unknown column '" + name + "'");
    }

    std::set<std::string> seen;
    for (std::size_t r = 0; r < doc.rows.size(); ++r) {
        const auto& row = doc.rows[r];
        const std::size_t line = doc.line_numbers[r];
        auto cell = [&](const std::string& name) -> const std::string& { return row[col.at(name)]; };
        auto ctx = [&](const std::string& name) { return where(origin, line, name); };

        LabeledExample ex;
        ex.image_id = cell("image_id");
        if (ex.image_id.empty()) throw Error(ErrorCode::NonNumericCell, ctx("image_id") + ": empty image id");
        if (!seen.insert(ex.image_id).second)
            throw Error(ErrorCode::DuplicateImageId, origin + ": image_id '" + ex.image_id + "' appears twice");
        try {
            ex.domain = DomainId(cell("domain"));
        } catch (const Error&) {
            throw Error(ErrorCode::NonNumericCell, ctx("domain") + ": empty domain");
        }
        const std::int64_t g = parse_count(cell("grade"), ctx("grade"));
        if (g >= kNumGrades) throw Error(ErrorCode::NonNumericCell, ctx("grade") + ": grade outside [0,4]");
        ex.grade = Grade(static_cast<int>(g));

        FeatureVector& f = ex.features;
        f.microaneurysm_count = parse_count(cell("microaneurysm_count"), ctx("microaneurysm_count"));
        f.exudate_count = parse_count(cell("exudate_count"), ctx("exudate_count"));
        f.hard_hemorrhage_count = parse_count(cell("hard_hemorrhage_count"), ctx("hard_hemorrhage_count"));
        f.soft_hemorrhage_count = parse_count(cell("soft_hemorrhage_count"), ctx("soft_hemorrhage_count"));
        f.cotton_wool_count = parse_count(cell("cotton_wool_count"), ctx("cotton_wool_count"));
        f.subhyaloid_present = parse_flag(cell("subhyaloid_present"), ctx("subhyaloid_present"));
        f.neovascularization_present =
            parse_flag(cell("neovascularization_present"), ctx("neovascularization_present"));
        const std::int64_t quadrants = parse_count(cell("hemorrhage_quadrants"), ctx("hemorrhage_quadrants"));
        if (quadrants > 4)
            throw Error(ErrorCode::NonNumericCell, ctx("hemorrhage_quadrants") + ": value outside [0,4]");
        f.hemorrhage_quadrants = static_cast<int>(quadrants);
        if (vein_present) {
            VeinFeatures v;
            v.tortuosity = parse_real(cell("vein_tortuosity"), ctx("vein_tortuosity"));
            v.caliber_mean = parse_real(cell("vein_caliber_mean"), ctx("vein_caliber_mean"));
            v.branch_angle_mean = parse_real(cell("vein_branch_angle_mean"), ctx("vein_branch_angle_mean"));
            f.vein = v;
        }
        try {
            validate_features(f);
        } catch (const Error& e) {
            throw Error(ErrorCode::NonNumericCell, origin + ":" + std::to_string(line) + ": " + e.what());
        }
        table.examples.push_back(std::move(ex));
    }
    return table;
}

FeatureTable load_feature_table(const fs::path& path) {
    return parse_feature_table(read_file(path), path.string());
}

std::string format_feature_table(const std::vector<LabeledExample>& examples, FeatureSet set) {
    std::string out = "image_id,domain,grade";
    for (const auto& name : feature_schema(set)) out += "," + name;
    out += "\n";
    for (const auto& ex : examples) {
        const FeatureVector& f = ex.features;
        out += ex.image_id + "," + ex.domain.str() + "," + std::to_string(ex.grade.value());
        for (std::int64_t v : {f.microaneurysm_count, f.exudate_count, f.hard_hemorrhage_count,
                               f.soft_hemorrhage_count, f.cotton_wool_count})
            out += "," + std::to_string(v);
        out += f.subhyaloid_present ? ",1" : ",0";
        out += f.neovascularization_present ? ",1" : ",0";
        out += "," + std::to_string(f.hemorrhage_quadrants);
        if (set == FeatureSet::LesionsVein) {
            if (!f.vein)
                throw Error(ErrorCode::SchemaMismatch, "example '" + ex.image_id + "' has no vein features");
            out += "," + format_double(f.vein->tortuosity) + "," + format_double(f.vein->caliber_mean) + "," +
                   format_double(f.vein->branch_angle_mean);
        }
        out += "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// probability tables

ProbabilityTable parse_probability_table(const std::string& text, const std::string& origin,
                                         std::vector<std::string>* warnings) {
    const CsvDocument doc = parse_csv(text, origin);
    static const std::vector<std::string> expected = {"image_id", "p0", "p1", "p2", "p3", "p4"};
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < doc.header.size(); ++i) col.emplace(doc.header[i], i);
    for (const auto& name : expected)
        if (!col.count(name)) throw Error(ErrorCode::MissingColumn, origin + ": missing column '" + name + "'");
    if (doc.header.size() != expected.size())
        throw Error(ErrorCode::SchemaMismatch, origin + ": probability table must have exactly image_id,p0..p4");

    ProbabilityTable table;
    for (std::size_t r = 0; r < doc.rows.size(); ++r) {
        const auto& row = doc.rows[r];
        const std::string& id = row[col.at("image_id")];
        std::array<double, kNumGrades> p{};
        for (int g = 0; g < kNumGrades; ++g) {
            const std::string name = "p" + std::to_string(g);
            p[static_cast<std::size_t>(g)] = parse_real(row[col.at(name)], where(origin, doc.line_numbers[r], name));
        }
        std::vector<std::string> local;
        ProbabilityVector pv = [&] {
            try {
                return validate_probability(p, &local);
            } catch (const Error& e) {
                throw Error(e.code(), origin + ":" + std::to_string(doc.line_numbers[r]) + ": " + e.what());
            }
        }();
        if (warnings)
            for (auto& w : local) warnings->push_back(origin + ": " + id + ": " + w);
        if (!table.emplace(id, pv).second)
            throw Error(ErrorCode::DuplicateImageId, origin + ": image_id '" + id + "' appears twice");
    }
    return table;
}

ProbabilityTable load_probability_table(const fs::path& path, std::vector<std::string>* warnings) {
    return parse_probability_table(read_file(path), path.string(), warnings);
}

std::string format_probability_table(const ProbabilityTable& table) {
    std::string out = "image_id,p0,p1,p2,p3,p4\n";
    for (const auto& [id, p] : table) {
        out += id;
        for (double v : p.values()) out += "," + format_double(v);
        out += "\n";
    }
    return out;
}

void join_probabilities(std::vector<LabeledExample>& examples, const ProbabilityTable& table) {
    for (auto& ex : examples) {
        auto it = table.find(ex.image_id);
        if (it == table.end())
            throw Error(ErrorCode::UnknownImageId, "no probability row for image_id '" + ex.image_id + "'");
        ex.neural_probs = it->second;
    }
}

// ---------------------------------------------------------------------------
// detections

DetectionTable parse_detections(const std::string& text, const std::string& origin) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::NonNumericCell, origin + ": invalid JSON: " + e.what());
    }
    if (!doc.is_array()) throw Error(ErrorCode::SchemaMismatch, origin + ": detections must be a JSON list");

    DetectionTable table;
    std::size_t index = 0;
    for (const auto& rec : doc) {
        const std::string ctx = origin + ": record " + std::to_string(index++);
        if (!rec.is_object()) throw Error(ErrorCode::SchemaMismatch, ctx + ": not an object");
        for (const char* key : {"image_id", "lesion", "x", "y", "w", "h", "score"})
            if (!rec.contains(key)) throw Error(ErrorCode::MissingColumn, ctx + ": missing field '" + key + "'");
        if (!rec["image_id"].is_string() || !rec["lesion"].is_string())
            throw Error(ErrorCode::NonNumericCell, ctx + ": image_id and lesion must be strings");
        auto number = [&](const char* key) {
            if (!rec[key].is_number()) throw Error(ErrorCode::NonNumericCell, ctx + ": field '" + key + "' not numeric");
            return rec[key].get<double>();
        };
        Detection d;
        d.lesion = parse_lesion(rec["lesion"].get<std::string>());
        d.box = {number("x"), number("y"), number("w"), number("h")};
        d.score = number("score");
        try {
            validate_detection(d);
        } catch (const Error& e) {
            throw Error(e.code(), ctx + ": " + e.what());
        }
        table[rec["image_id"].get<std::string>()].push_back(d);
    }
    return table;
}

DetectionTable load_detections(const fs::path& path) { return parse_detections(read_file(path), path.string()); }

std::string format_detections(const DetectionTable& table) {
    // One record per line keeps large files diffable.
    std::string out = "[";
    bool first = true;
    for (const auto& [id, dets] : table) {
        for (const auto& d : dets) {
            json rec = json::object();
            rec["image_id"] = id;
            rec["lesion"] = std::string(lesion_name(d.lesion));
            rec["x"] = d.box.x;
            rec["y"] = d.box.y;
            rec["w"] = d.box.w;
            rec["h"] = d.box.h;
            rec["score"] = d.score;
            out += first ? "\n  " : ",\n  ";
            out += rec.dump();
            first = false;
        }
    }
    out += first ? "]\n" : "\n]\n";
    return out;
}

// ---------------------------------------------------------------------------
// manifest

Manifest parse_manifest(const json& j, const fs::path& base_dir) {
    if (!j.is_object() || !j.contains("domains") || !j["domains"].is_array())
        throw Error(ErrorCode::InvalidConfig, "manifest must be an object with a 'domains' list");
    Manifest m;
    std::set<DomainId> names;
    auto resolve = [&](const std::string& p) {
        fs::path path(p);
        return path.is_absolute() ? path : base_dir / path;
    };
    for (const auto& d : j["domains"]) {
        if (!d.is_object() || !d.contains("name") || !d.contains("features"))
            throw Error(ErrorCode::InvalidConfig, "manifest domain entries need 'name' and 'features'");
        ManifestDomain md;
        md.name = DomainId(d["name"].get<std::string>());
        md.features = resolve(d["features"].get<std::string>());
        if (d.contains("probabilities") && !d["probabilities"].is_null())
            md.probabilities = resolve(d["probabilities"].get<std::string>());
        if (d.contains("detections") && !d["detections"].is_null())
            md.detections = resolve(d["detections"].get<std::string>());
        if (!names.insert(md.name).second)
            throw Error(ErrorCode::InvalidConfig, "duplicate domain '" + md.name.str() + "' in manifest");
        m.domains.push_back(std::move(md));
    }
    if (m.domains.empty()) throw Error(ErrorCode::InvalidConfig, "manifest lists no domains");
    if (j.contains("seed_list")) m.seeds = j["seed_list"].get<std::vector<std::int64_t>>();
    if (j.contains("synthetic")) m.synthetic = j["synthetic"].get<bool>();
    return m;
}

Manifest load_manifest(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, path.string() + ": invalid JSON: " + e.what());
    }
    return parse_manifest(j, path.parent_path());
}

std::string format_manifest(const Manifest& m) {
    json j = json::object();
    json domains = json::array();
    for (const auto& d : m.domains) {
        json e = json::object();
        e["name"] = d.name.str();
        e["features"] = d.features.generic_string();
        if (d.probabilities) e["probabilities"] = d.probabilities->generic_string();
        if (d.detections) e["detections"] = d.detections->generic_string();
        domains.push_back(e);
    }
    j["domains"] = domains;
    j["seed_list"] = m.seeds;
    j["synthetic"] = m.synthetic;
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// model artifacts

std::string_view model_kind_name(ModelKind kind) noexcept {
    switch (kind) {
        case ModelKind::Gbm: return "gbm";
        case ModelKind::Logistic: return "logistic";
        case ModelKind::Forest: return "forest";
        case ModelKind::Knn: return "knn";
    }
    return "unknown";
}

ModelKind parse_model_kind(std::string_view name) {
    for (ModelKind k : {ModelKind::Gbm, ModelKind::Logistic, ModelKind::Forest, ModelKind::Knn})
        if (model_kind_name(k) == to_lower(name)) return k;
    throw Error(ErrorCode::InvalidConfig, "unknown model kind '" + std::string(name) + "'");
}

namespace {

std::string schema_digest(const std::vector<std::string>& schema) {
    Fnv1a h;
    for (const auto& name : schema) h.update(name).update(std::string_view("\n"));
    return h.hex();
}

bool is_hex16(const std::string& s) {
    return s.size() == 16 && std::all_of(s.begin(), s.end(), [](char c) {
               return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
           });
}

}  // namespace

std::string serialize_model(const ModelArtifact& model) {
    if (model.input_arity != model.feature_schema.size())
        throw Error(ErrorCode::SchemaMismatch, "feature schema arity does not match model input arity");
    json payload = json::object();
    payload["model_kind"] = std::string(model_kind_name(model.model_kind));
    payload["feature_schema"] = model.feature_schema;
    payload["schema_digest"] = schema_digest(model.feature_schema);
    payload["input_arity"] = model.input_arity;
    payload["train_fingerprint"] = model.train_fingerprint;
    payload["parameters"] = model.parameters;
    const std::string body = payload.dump();
    return std::string(kArtifactMagic) + "\n" + body + "\nchecksum " + Fnv1a().update(body).hex() + "\n";
}

ModelArtifact deserialize_model(const std::string& bytes, const std::vector<std::string>* expected_schema) {
    const std::string magic = std::string(kArtifactMagic) + "\n";
    if (bytes.compare(0, magic.size(), magic) != 0)
        throw Error(ErrorCode::CorruptArtifact, "missing KGDG1 header");
    const auto trailer = bytes.rfind("\nchecksum ");
    if (trailer == std::string::npos || trailer < magic.size() || bytes.back() != '\n')
        throw Error(ErrorCode::CorruptArtifact, "artifact is truncated (no checksum trailer)");
    const std::string body = bytes.substr(magic.size(), trailer - magic.size());
    const std::string stored_sum = trim(bytes.substr(trailer + 10));

    json payload;
    try {
        payload = json::parse(body);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::CorruptArtifact, std::string("artifact body is not valid JSON: ") + e.what());
    }

    ModelArtifact m;
    try {
        m.model_kind = parse_model_kind(payload.at("model_kind").get<std::string>());
        m.feature_schema = payload.at("feature_schema").get<std::vector<std::string>>();
        m.input_arity = payload.at("input_arity").get<std::size_t>();
        m.train_fingerprint = payload.at("train_fingerprint").get<std::string>();
        m.parameters = payload.at("parameters");
        const std::string digest = payload.at("schema_digest").get<std::string>();
        if (digest != schema_digest(m.feature_schema))
            throw Error(ErrorCode::SchemaMismatch, "feature_schema does not match its recorded digest");
    } catch (const json::exception& e) {
        throw Error(ErrorCode::CorruptArtifact, std::string("artifact field error: ") + e.what());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::SchemaMismatch) throw;
        throw Error(ErrorCode::CorruptArtifact, e.what());
    }
    if (m.feature_schema.size() != m.input_arity)
        throw Error(ErrorCode::SchemaMismatch, "feature_schema has " + std::to_string(m.feature_schema.size()) +
                                                   " names but the model expects " +
                                                   std::to_string(m.input_arity));
    if (expected_schema && *expected_schema != m.feature_schema)
        throw Error(ErrorCode::SchemaMismatch, "artifact schema differs from the expected feature schema");
    if (stored_sum != Fnv1a().update(body).hex())
        throw Error(ErrorCode::CorruptArtifact, "checksum mismatch");
    if (!is_hex16(m.train_fingerprint))
        throw Error(ErrorCode::CorruptArtifact, "malformed train fingerprint");
    return m;
}

void save_model(const ModelArtifact& model, const fs::path& path) { write_file(path, serialize_model(model)); }

ModelArtifact load_model(const fs::path& path, const std::vector<std::string>* expected_schema) {
    return deserialize_model(read_file(path), expected_schema);
}

// ---------------------------------------------------------------------------
// files

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::IoFailure, "cannot write '" + tmp.string() + "'");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error(ErrorCode::IoFailure, "short write to '" + tmp.string() + "'");
    }
    fs::rename(tmp, path);
}

}  // namespace kgdg::io
