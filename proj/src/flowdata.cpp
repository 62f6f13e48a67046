#include "idsrag/flowdata.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace idsrag::flowdata {

using nlohmann::json;

namespace {

std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cell += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cell += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            cells.push_back(std::move(cell));
            cell.clear();
        } else {
            cell += c;
        }
    }
    cells.push_back(std::move(cell));
    return cells;
}

bool is_missing_token(std::string_view cell) {
    const std::string v = lowercase(cell);
    return v.empty() || v == "na" || v == "n/a" || v == "?" || v == "-";
}

std::optional<double> parse_number(std::string_view cell) {
    const std::string text(trim(cell));
    if (text.empty()) return std::nullopt;
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(text.c_str(), &end);
    if (end != text.c_str() + text.size()) return std::nullopt;
    return v;
}

std::uint16_t parse_port(std::string_view cell, const char* what) {
    const std::string text(trim(cell));
    if (text.empty() || text == "-") return 0;
    long long value = 0;
    char* end = nullptr;
    if (text.size() > 2 && text[0] == '0' && (text[1] == 'x' || text[1] == 'X')) {
        value = std::strtoll(text.c_str() + 2, &end, 16);
    } else {
        const auto num = parse_number(text);
        if (!num || *num != std::floor(*num)) {
            throw Error(std::string(what) + " is not an integer: '" + text + "'");
        }
        value = static_cast<long long>(*num);
        end = nullptr;
    }
    if (end != nullptr && *end != '\0') {
        throw Error(std::string(what) + " is not an integer: '" + text + "'");
    }
    if (value < 0 || value > 65535) {
        throw Error(std::string(what) + " " + std::to_string(value) + " out of range 0-65535");
    }
    return static_cast<std::uint16_t>(value);
}

std::string category_key(const RawValue& v) {
    if (v.kind == RawValue::Kind::Categorical) return lowercase(trim(v.category));
    if (v.kind == RawValue::Kind::Numeric) {
        char buf[64];
        if (v.number == std::floor(v.number) && std::abs(v.number) < 1e15) {
            std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(v.number));
        } else {
            std::snprintf(buf, sizeof buf, "%.17g", v.number);
        }
        return buf;
    }
    return {};
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

LabelScheme parse_scheme(const std::string& s) {
    const std::string key = lowercase(s);
    if (key == "cicids" || key == "cicids2018") return LabelScheme::Cicids;
    if (key == "unsw" || key == "unsw-nb15") return LabelScheme::Unsw;
    if (key == "direct") return LabelScheme::Direct;
    throw Error("unknown label scheme: " + s);
}

std::string scheme_name(LabelScheme scheme) {
    switch (scheme) {
    case LabelScheme::Cicids: return "cicids";
    case LabelScheme::Unsw: return "unsw";
    case LabelScheme::Direct: return "direct";
    }
    return "direct";
}

}  // namespace

const RawFeature* FlowRecord::find(std::string_view name) const {
    for (const auto& f : raw_features) {
        if (f.name == name) return &f;
    }
    return nullptr;
}

// ---------------------------------------------------------------------------
// FeatureSchema

std::size_t FeatureSchema::resolved_width() const {
    std::size_t width = numeric_features.size();
    for (const auto& c : categorical_features) width += c.categories.size();
    return width;
}

std::string FeatureSchema::encoded_name(std::size_t index) const {
    if (index < numeric_features.size()) return numeric_features[index];
    std::size_t offset = numeric_features.size();
    for (const auto& c : categorical_features) {
        if (index < offset + c.categories.size()) return c.name + "=" + c.categories[index - offset];
        offset += c.categories.size();
    }
    return "pad_" + std::to_string(index);
}

std::string FeatureSchema::base_feature(std::size_t index) const {
    if (index < numeric_features.size()) return numeric_features[index];
    std::size_t offset = numeric_features.size();
    for (const auto& c : categorical_features) {
        if (index < offset + c.categories.size()) return c.name;
        offset += c.categories.size();
    }
    return "pad_" + std::to_string(index);
}

std::optional<std::size_t> FeatureSchema::encoded_index(std::string_view name) const {
    for (std::size_t i = 0; i < pad_to; ++i) {
        if (encoded_name(i) == name) return i;
    }
    // A bare categorical name resolves to the first slot of its block.
    std::size_t offset = numeric_features.size();
    for (const auto& c : categorical_features) {
        if (c.name == name && !c.categories.empty()) return offset;
        offset += c.categories.size();
    }
    return std::nullopt;
}

bool FeatureSchema::is_schema_feature(std::string_view name) const {
    if (std::find(numeric_features.begin(), numeric_features.end(), name) != numeric_features.end()) {
        return true;
    }
    return categorical(name) != nullptr;
}

const CategoricalFeature* FeatureSchema::categorical(std::string_view name) const {
    for (const auto& c : categorical_features) {
        if (c.name == name) return &c;
    }
    return nullptr;
}

void FeatureSchema::validate() const {
    if (pad_to != kFeatureWidth) {
        throw Error("schema " + id + ": pad_to must be " + std::to_string(kFeatureWidth));
    }
    if (resolved_width() > pad_to) {
        throw Error("schema " + id + ": encoded width " + std::to_string(resolved_width()) +
                    " exceeds pad_to " + std::to_string(pad_to));
    }
    std::unordered_set<std::string> seen;
    for (const auto& n : numeric_features) {
        if (!seen.insert(n).second) throw Error("schema " + id + ": duplicate feature " + n);
    }
    for (const auto& c : categorical_features) {
        if (!seen.insert(c.name).second) throw Error("schema " + id + ": duplicate feature " + c.name);
        if (c.categories.empty()) throw Error("schema " + id + ": categorical " + c.name + " has no categories");
    }
    for (const auto& [name, _] : interpretation) {
        if (!is_schema_feature(name)) {
            throw Error("schema " + id + ": interpretation key '" + name + "' is not a schema feature");
        }
    }
    for (const auto& name : override_features) {
        if (!encoded_index(name)) throw Error("schema " + id + ": override feature '" + name + "' unknown");
    }
}

FeatureSchema FeatureSchema::from_json(const json& doc) {
    FeatureSchema s;
    s.id = doc.value("id", std::string("schema"));
    s.numeric_features = doc.value("numeric_features", std::vector<std::string>{});
    if (doc.contains("categorical_features")) {
        for (const auto& item : doc.at("categorical_features")) {
            CategoricalFeature c;
            c.name = item.at("name").get<std::string>();
            for (const auto& cat : item.at("categories")) c.categories.push_back(lowercase(cat.get<std::string>()));
            s.categorical_features.push_back(std::move(c));
        }
    }
    s.pad_to = doc.value("pad_to", kFeatureWidth);
    if (doc.contains("interpretation")) {
        for (const auto& [name, entry] : doc.at("interpretation").items()) {
            s.interpretation[name] = {entry.at("description").get<std::string>(),
                                      entry.at("security_implication").get<std::string>()};
        }
    }
    if (doc.contains("columns")) {
        const auto& c = doc.at("columns");
        auto& m = s.columns;
        m.flow_id = c.value("flow_id", m.flow_id);
        m.timestamp = c.value("timestamp", m.timestamp);
        m.src_ip = c.value("src_ip", m.src_ip);
        m.src_port = c.value("src_port", m.src_port);
        m.dst_ip = c.value("dst_ip", m.dst_ip);
        m.dst_port = c.value("dst_port", m.dst_port);
        m.protocol = c.value("protocol", m.protocol);
        m.label = c.value("label", m.label);
    }
    s.label_scheme = parse_scheme(doc.value("label_scheme", std::string("direct")));
    s.override_features = doc.value("override_features", std::vector<std::string>{});
    s.validate();
    return s;
}

FeatureSchema FeatureSchema::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open schema file " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw Error("schema " + path.string() + ": " + e.what());
    }
    return from_json(doc);
}

json FeatureSchema::to_json() const {
    json doc;
    doc["id"] = id;
    doc["numeric_features"] = numeric_features;
    json cats = json::array();
    for (const auto& c : categorical_features) cats.push_back({{"name", c.name}, {"categories", c.categories}});
    doc["categorical_features"] = cats;
    doc["pad_to"] = pad_to;
    json interp = json::object();
    for (const auto& [name, e] : interpretation) {
        interp[name] = {{"description", e.description}, {"security_implication", e.security_implication}};
    }
    doc["interpretation"] = interp;
    doc["columns"] = {{"flow_id", columns.flow_id},   {"timestamp", columns.timestamp},
                      {"src_ip", columns.src_ip},     {"src_port", columns.src_port},
                      {"dst_ip", columns.dst_ip},     {"dst_port", columns.dst_port},
                      {"protocol", columns.protocol}, {"label", columns.label}};
    doc["label_scheme"] = scheme_name(label_scheme);
    doc["override_features"] = override_features;
    return doc;
}

// ---------------------------------------------------------------------------
// Labels

ClassLabel remap_labels(std::string_view unsw_label) {
    const std::string key = lowercase(trim(unsw_label));
    if (key == "normal") return ClassLabel::Benign;
    if (key == "fuzzers" || key == "exploits" || key == "generic" || key == "reconnaissance") {
        return ClassLabel::DDoS;
    }
    if (key == "dos" || key == "backdoor" || key == "backdoors" || key == "shellcode" || key == "worms" ||
        key == "analysis") {
        return ClassLabel::DoS;
    }
    throw Error("unknown UNSW-NB15 label: '" + std::string(unsw_label) + "'");
}

ClassLabel map_cicids_label(std::string_view label) {
    const std::string key = lowercase(trim(label));
    if (key == "benign") return ClassLabel::Benign;
    if (key.find("ddos") != std::string::npos) return ClassLabel::DDoS;
    if (key.find("dos") != std::string::npos) return ClassLabel::DoS;
    throw Error("unknown CICIDS2018 label: '" + std::string(label) + "'");
}

// ---------------------------------------------------------------------------
// Loading

LoadResult load_flows(std::istream& source, const FeatureSchema& schema) {
    LoadResult result;
    std::string line;
    if (!std::getline(source, line)) return result;
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);
    if (!line.empty() && line.back() == '\r') line.pop_back();

    std::vector<std::string> header = split_csv_line(line);
    for (auto& h : header) h = std::string(trim(h));
    std::unordered_map<std::string, std::size_t> column;
    for (std::size_t i = 0; i < header.size(); ++i) column.emplace(header[i], i);

    const auto& mc = schema.columns;
    const std::unordered_set<std::string> metadata = {mc.flow_id, mc.timestamp, mc.src_ip, mc.src_port,
                                                      mc.dst_ip,  mc.dst_port,  mc.protocol, mc.label};
    for (const auto& h : header) {
        if (!metadata.count(h) && !schema.is_schema_feature(h)) {
            result.warnings.push_back("ignoring unknown column '" + h + "'");
        }
    }

    struct FeatureColumn {
        std::string name;
        std::optional<std::size_t> index;
        bool categorical;
    };
    std::vector<FeatureColumn> features;
    for (const auto& n : schema.numeric_features) features.push_back({n, std::nullopt, false});
    for (const auto& c : schema.categorical_features) features.push_back({c.name, std::nullopt, true});
    for (auto& f : features) {
        if (auto it = column.find(f.name); it != column.end()) {
            f.index = it->second;
        } else {
            result.warnings.push_back("schema feature '" + f.name + "' absent from header; treated as missing");
        }
    }
    const auto col = [&](const std::string& name) -> std::optional<std::size_t> {
        if (auto it = column.find(name); it != column.end()) return it->second;
        return std::nullopt;
    };
    const auto c_flow = col(mc.flow_id), c_time = col(mc.timestamp), c_sip = col(mc.src_ip),
               c_sport = col(mc.src_port), c_dip = col(mc.dst_ip), c_dport = col(mc.dst_port),
               c_proto = col(mc.protocol), c_label = col(mc.label);

    std::size_t line_no = 1;
    std::size_t nonfinite = 0;
    while (std::getline(source, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size()) {
            result.errors.push_back({line_no, "expected " + std::to_string(header.size()) + " columns, got " +
                                                  std::to_string(cells.size())});
            continue;
        }
        const auto cell = [&](std::optional<std::size_t> idx) -> std::string {
            return idx ? std::string(trim(cells[*idx])) : std::string();
        };
        try {
            FlowRecord rec;
            rec.flow_id = cell(c_flow);
            if (rec.flow_id.empty()) rec.flow_id = "row-" + std::to_string(line_no);
            rec.timestamp = cell(c_time);
            rec.src_ip = cell(c_sip);
            rec.dst_ip = cell(c_dip);
            rec.src_port = parse_port(cell(c_sport), "src_port");
            rec.dst_port = parse_port(cell(c_dport), "dst_port");
            rec.protocol = cell(c_proto);
            for (const auto& f : features) {
                if (!f.index) continue;
                const std::string v = cell(f.index);
                RawFeature raw{f.name, RawValue::missing()};
                if (f.categorical) {
                    if (!is_missing_token(v)) raw.value = RawValue::categorical(v);
                } else if (!is_missing_token(v)) {
                    const auto num = parse_number(v);
                    if (!num) throw Error("feature '" + f.name + "' is not numeric: '" + v + "'");
                    if (std::isfinite(*num)) {
                        raw.value = RawValue::numeric(*num);
                    } else {
                        ++nonfinite;
                    }
                }
                rec.raw_features.push_back(std::move(raw));
            }
            if (c_label) {
                rec.original_label = cell(c_label);
                switch (schema.label_scheme) {
                case LabelScheme::Unsw:
                    rec.label = rec.original_label.empty() ? ClassLabel::Benign : remap_labels(rec.original_label);
                    break;
                case LabelScheme::Cicids:
                    if (!rec.original_label.empty()) rec.label = map_cicids_label(rec.original_label);
                    break;
                case LabelScheme::Direct:
                    if (!rec.original_label.empty()) rec.label = parse_class_label(rec.original_label);
                    break;
                }
            }
            result.records.push_back(std::move(rec));
        } catch (const Error& e) {
            result.errors.push_back({line_no, e.what()});
        }
    }
    if (nonfinite > 0) {
        result.warnings.push_back(std::to_string(nonfinite) + " non-finite numeric cells treated as missing");
    }
    return result;
}

// ---------------------------------------------------------------------------
// Encoding and normalization

FeatureVector encode_features(const FlowRecord& record, const FeatureSchema& schema,
                              EncodeDiagnostics* diagnostics) {
    FeatureVector out;
    out.schema_id = schema.id;
    std::size_t slot = 0;
    for (const auto& name : schema.numeric_features) {
        const RawFeature* raw = record.find(name);
        if (raw == nullptr || raw->value.kind == RawValue::Kind::Missing) {
            out.missing.set(slot);
        } else {
            double v = raw->value.number;
            if (raw->value.kind == RawValue::Kind::Categorical) {
                const auto parsed = parse_number(raw->value.category);
                if (!parsed) throw Error("flow " + record.flow_id + ": feature '" + name + "' is not numeric");
                v = *parsed;
            }
            if (!std::isfinite(v)) {
                throw Error("flow " + record.flow_id + ": feature '" + name + "' is not finite");
            }
            out.values[slot] = v;
        }
        ++slot;
    }
    for (const auto& cat : schema.categorical_features) {
        const RawFeature* raw = record.find(cat.name);
        if (raw != nullptr && raw->value.kind != RawValue::Kind::Missing) {
            const std::string key = category_key(raw->value);
            const auto it = std::find(cat.categories.begin(), cat.categories.end(), key);
            if (it != cat.categories.end()) {
                out.values[slot + static_cast<std::size_t>(it - cat.categories.begin())] = 1.0;
            } else if (diagnostics != nullptr) {
                ++diagnostics->unseen_categories;
            }
        }
        slot += cat.categories.size();
    }
    return out;
}

NormalizationStats fit_normalizer(std::span<const FeatureVector> train, std::size_t numeric_width,
                                  std::string fitted_on) {
    if (train.empty()) throw Error("fit_normalizer: empty training set");
    if (numeric_width > kFeatureWidth) throw Error("fit_normalizer: numeric width exceeds vector width");
    NormalizationStats stats;
    stats.fitted_on = std::move(fitted_on);
    stats.mean.assign(numeric_width, 0.0);
    stats.stddev.assign(numeric_width, 0.0);
    for (std::size_t j = 0; j < numeric_width; ++j) {
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& v : train) {
            if (v.missing.test(j)) continue;
            sum += v.values[j];
            ++n;
        }
        if (n == 0) continue;
        const double mean = sum / static_cast<double>(n);
        double sq = 0.0;
        for (const auto& v : train) {
            if (v.missing.test(j)) continue;
            const double d = v.values[j] - mean;
            sq += d * d;
        }
        stats.mean[j] = mean;
        stats.stddev[j] = std::sqrt(sq / static_cast<double>(n));
    }
    return stats;
}

FeatureVector apply_normalizer(const NormalizationStats& stats, const FeatureVector& vec) {
    FeatureVector out = vec;
    for (std::size_t j = 0; j < stats.mean.size(); ++j) {
        if (vec.missing.test(j) || stats.stddev[j] == 0.0) {
            out.values[j] = 0.0;
        } else {
            out.values[j] = (vec.values[j] - stats.mean[j]) / stats.stddev[j];
        }
    }
    out.missing.reset();
    return out;
}

std::pair<NormalizationStats, std::vector<FeatureVector>> fit_apply_normalizer(
    std::span<const FeatureVector> train, std::span<const FeatureVector> apply_to,
    std::size_t numeric_width) {
    auto stats = fit_normalizer(train, numeric_width);
    std::vector<FeatureVector> out;
    out.reserve(apply_to.size());
    for (const auto& v : apply_to) out.push_back(apply_normalizer(stats, v));
    return {std::move(stats), std::move(out)};
}

json NormalizationStats::to_json() const {
    return {{"mean", mean}, {"stddev", stddev}, {"fitted_on", fitted_on}};
}

NormalizationStats NormalizationStats::from_json(const json& doc) {
    NormalizationStats s;
    s.mean = doc.at("mean").get<std::vector<double>>();
    s.stddev = doc.at("stddev").get<std::vector<double>>();
    s.fitted_on = doc.value("fitted_on", std::string("train"));
    if (s.mean.size() != s.stddev.size()) throw Error("normalization stats: mean/stddev length mismatch");
    for (double sd : s.stddev) {
        if (!(sd >= 0.0)) throw Error("normalization stats: negative stddev");
    }
    return s;
}

// ---------------------------------------------------------------------------
// Splitting and rebalancing

DatasetSplit stratified_split(std::span<const ClassLabel> labels, std::array<double, 3> ratios,
                              std::uint64_t seed) {
    const double total = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(total - 1.0) > 1e-9) throw Error("stratified_split: ratios must sum to 1");
    for (double r : ratios) {
        if (r < 0.0) throw Error("stratified_split: negative ratio");
    }
    std::array<std::vector<std::size_t>, kNumClasses> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[index_of(labels[i])].push_back(i);

    DatasetSplit split;
    split.ratios = ratios;
    split.seed = seed;
    std::mt19937_64 rng(seed);
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        auto& members = by_class[c];
        if (members.empty()) continue;
        if (members.size() < 3) {
            throw Error("stratified_split: class " + std::string(to_string(static_cast<ClassLabel>(c))) +
                        " has fewer than 3 samples");
        }
        std::shuffle(members.begin(), members.end(), rng);

        // Largest-remainder apportionment; remainder ties go to the earlier split.
        const auto n = static_cast<double>(members.size());
        std::array<std::size_t, 3> counts{};
        std::array<double, 3> remainders{};
        std::size_t assigned = 0;
        for (std::size_t s = 0; s < 3; ++s) {
            const double exact = ratios[s] * n;
            counts[s] = static_cast<std::size_t>(std::floor(exact + 1e-9));
            remainders[s] = exact - static_cast<double>(counts[s]);
            assigned += counts[s];
        }
        std::array<std::size_t, 3> order{0, 1, 2};
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b] + 1e-12; });
        for (std::size_t k = 0; assigned < members.size(); ++k, ++assigned) ++counts[order[k % 3]];

        auto it = members.begin();
        std::array<std::vector<std::size_t>*, 3> dest{&split.train, &split.validation, &split.test};
        for (std::size_t s = 0; s < 3; ++s) {
            dest[s]->insert(dest[s]->end(), it, it + static_cast<std::ptrdiff_t>(counts[s]));
            it += static_cast<std::ptrdiff_t>(counts[s]);
        }
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.validation.begin(), split.validation.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

std::vector<std::size_t> rebalance(std::span<const std::size_t> indices, std::span<const int> labels,
                                   const BalancingPlan& plan) {
    if (plan.oversample_ratio) {
        const auto [num, den] = *plan.oversample_ratio;
        if (num == 0 || den == 0) throw Error("rebalance: ratio terms must be positive");
    }
    std::map<int, std::vector<std::size_t>> members;
    for (std::size_t idx : indices) {
        if (idx >= labels.size()) throw Error("rebalance: index out of range");
        members[labels[idx]].push_back(idx);
    }
    if (members.size() < 2) throw Error("rebalance: need at least two non-empty classes");

    int minority = members.begin()->first;
    int majority = members.begin()->first;
    for (const auto& [label, list] : members) {
        if (list.size() < members[minority].size()) minority = label;
        if (list.size() > members[majority].size()) majority = label;
    }
    std::mt19937_64 rng(plan.seed);
    const std::size_t majority_count = members[majority].size();

    std::vector<std::size_t> extra;
    if (plan.oversample_ratio && minority != majority) {
        const auto [num, den] = *plan.oversample_ratio;
        const std::size_t target = (majority_count * num + den - 1) / den;
        const auto& pool = members[minority];
        if (pool.size() < target) {
            std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
            extra.reserve(target - pool.size());
            for (std::size_t i = pool.size(); i < target; ++i) extra.push_back(pool[pick(rng)]);
        }
    }

    std::unordered_set<std::size_t> dropped;
    if (plan.undersample_cap && majority_count > *plan.undersample_cap && minority != majority) {
        std::vector<std::size_t> shuffled = members[majority];
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        dropped.insert(shuffled.begin() + static_cast<std::ptrdiff_t>(*plan.undersample_cap), shuffled.end());
    }

    std::vector<std::size_t> out;
    out.reserve(indices.size() + extra.size());
    for (std::size_t idx : indices) {
        if (!dropped.count(idx)) out.push_back(idx);
    }
    out.insert(out.end(), extra.begin(), extra.end());
    return out;
}

// ---------------------------------------------------------------------------
// Persistence

json flow_metadata_json(const FlowRecord& r) {
    json doc = {{"flow_id", r.flow_id}, {"timestamp", r.timestamp}, {"src_ip", r.src_ip},
                {"src_port", r.src_port}, {"dst_ip", r.dst_ip},     {"dst_port", r.dst_port},
                {"protocol", r.protocol}};
    doc["label"] = r.label ? json(std::string(to_string(*r.label))) : json(nullptr);
    doc["original_label"] = r.original_label;
    return doc;
}

FlowRecord flow_metadata_from_json(const json& doc) {
    FlowRecord r;
    r.flow_id = doc.at("flow_id").get<std::string>();
    r.timestamp = doc.value("timestamp", std::string());
    r.src_ip = doc.value("src_ip", std::string());
    r.dst_ip = doc.value("dst_ip", std::string());
    r.src_port = doc.value("src_port", std::uint16_t{0});
    r.dst_port = doc.value("dst_port", std::uint16_t{0});
    r.protocol = doc.value("protocol", std::string());
    if (doc.contains("label") && !doc.at("label").is_null()) {
        r.label = parse_class_label(doc.at("label").get<std::string>());
    }
    r.original_label = doc.value("original_label", std::string());
    return r;
}

void EncodedDataset::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    const auto write_json = [&](const std::string& name, const json& doc) {
        std::ofstream out(dir / name);
        if (!out) throw Error("cannot write " + (dir / name).string());
        out << doc.dump(2) << '\n';
    };
    write_json("dataset.json", {{"format", "idsrag-dataset"},
                                {"version", 1},
                                {"schema_id", schema_id},
                                {"feature_names", feature_names},
                                {"count", flows.size()}});
    write_json("stats.json", stats.to_json());
    write_json("split.json", {{"train", split.train},
                              {"validation", split.validation},
                              {"test", split.test},
                              {"ratios", split.ratios},
                              {"seed", split.seed}});

    std::ofstream flows_out(dir / "flows.jsonl");
    for (std::size_t i = 0; i < flows.size(); ++i) {
        json doc = flow_metadata_json(flows[i]);
        json values = json::array();
        for (std::size_t j = 0; j < kFeatureWidth; ++j) {
            values.push_back(raw[i].missing.test(j) ? json(nullptr) : json(raw[i].values[j]));
        }
        doc["raw"] = std::move(values);
        flows_out << doc.dump() << '\n';
    }

    std::ofstream csv(dir / "encoded.csv");
    csv << "flow_id,label";
    for (const auto& n : feature_names) csv << ",\"" << n << '"';
    csv << '\n';
    for (std::size_t i = 0; i < flows.size(); ++i) {
        csv << '"' << flows[i].flow_id << "\"," << (flows[i].label ? to_string(*flows[i].label) : "");
        for (double v : normalized[i].values) csv << ',' << format_double(v);
        csv << '\n';
    }
}

EncodedDataset EncodedDataset::load(const std::filesystem::path& dir) {
    const auto read_json = [&](const std::string& name) {
        std::ifstream in(dir / name);
        if (!in) throw Error("cannot open " + (dir / name).string());
        return json::parse(in);
    };
    EncodedDataset ds;
    const json meta = read_json("dataset.json");
    if (meta.value("version", 0) != 1) throw Error("dataset: unsupported version");
    ds.schema_id = meta.at("schema_id").get<std::string>();
    ds.feature_names = meta.at("feature_names").get<std::vector<std::string>>();
    ds.stats = NormalizationStats::from_json(read_json("stats.json"));
    const json sp = read_json("split.json");
    ds.split.train = sp.at("train").get<std::vector<std::size_t>>();
    ds.split.validation = sp.at("validation").get<std::vector<std::size_t>>();
    ds.split.test = sp.at("test").get<std::vector<std::size_t>>();
    ds.split.ratios = sp.at("ratios").get<std::array<double, 3>>();
    ds.split.seed = sp.at("seed").get<std::uint64_t>();

    std::ifstream flows_in(dir / "flows.jsonl");
    if (!flows_in) throw Error("cannot open " + (dir / "flows.jsonl").string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(flows_in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json doc;
        try {
            doc = json::parse(line);
        } catch (const json::exception& e) {
            throw Error("flows.jsonl line " + std::to_string(line_no) + ": " + e.what());
        }
        ds.flows.push_back(flow_metadata_from_json(doc));
        const json& values = doc.at("raw");
        if (values.size() != kFeatureWidth) {
            throw Error("flows.jsonl line " + std::to_string(line_no) + ": expected 66 values");
        }
        FeatureVector fv;
        fv.schema_id = ds.schema_id;
        for (std::size_t j = 0; j < kFeatureWidth; ++j) {
            if (values[j].is_null()) {
                fv.missing.set(j);
            } else {
                fv.values[j] = values[j].get<double>();
            }
        }
        ds.raw.push_back(fv);
    }
    if (ds.flows.size() != meta.at("count").get<std::size_t>()) throw Error("dataset: flow count mismatch");
    for (const auto& r : ds.raw) ds.normalized.push_back(apply_normalizer(ds.stats, r));
    return ds;
}

EncodedDataset build_dataset(std::vector<FlowRecord> records, const FeatureSchema& schema,
                             std::array<double, 3> ratios, std::uint64_t seed) {
    EncodedDataset ds;
    ds.schema_id = schema.id;
    for (std::size_t j = 0; j < kFeatureWidth; ++j) ds.feature_names.push_back(schema.encoded_name(j));
    std::vector<ClassLabel> labels;
    for (auto& r : records) {
        if (!r.label) throw Error("build_dataset: flow " + r.flow_id + " is unlabeled");
        labels.push_back(*r.label);
        ds.raw.push_back(encode_features(r, schema));
        r.raw_features.clear();
    }
    ds.flows = std::move(records);
    ds.split = stratified_split(labels, ratios, seed);
    std::vector<FeatureVector> train;
    for (auto i : ds.split.train) train.push_back(ds.raw[i]);
    ds.stats = fit_normalizer(train, schema.numeric_width());
    for (const auto& r : ds.raw) ds.normalized.push_back(apply_normalizer(ds.stats, r));
    return ds;
}

}  // namespace idsrag::flowdata
