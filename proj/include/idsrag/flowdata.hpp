#pragma once

#include <array>
#include <bitset>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "idsrag/common.hpp"

namespace idsrag::flowdata {

inline constexpr std::size_t kFeatureWidth = 66;

// A raw cell. Missing numeric cells keep kind == Missing until normalization
// imputes them to the training mean.
struct RawValue {
    enum class Kind : std::uint8_t { Missing, Numeric, Categorical };
    Kind kind = Kind::Missing;
    double number = 0.0;
    std::string category;

    static RawValue missing() { return {}; }
    static RawValue numeric(double v) { return {Kind::Numeric, v, {}}; }
    static RawValue categorical(std::string v) { return {Kind::Categorical, 0.0, std::move(v)}; }
};

struct RawFeature {
    std::string name;
    RawValue value;
};

struct FlowRecord {
    std::string flow_id;
    std::string timestamp;
    std::string src_ip;
    std::string dst_ip;
    std::uint16_t src_port = 0;
    std::uint16_t dst_port = 0;
    std::string protocol;
    std::vector<RawFeature> raw_features;
    std::optional<ClassLabel> label;
    std::string original_label;

    const RawFeature* find(std::string_view name) const;
};

struct Interpretation {
    std::string description;
    std::string security_implication;
};

enum class LabelScheme { Direct, Cicids, Unsw };

// Column names of the non-feature fields in the source CSV.
struct MetadataColumns {
    std::string flow_id = "Flow ID";
    std::string timestamp = "Timestamp";
    std::string src_ip = "Src IP";
    std::string src_port = "Src Port";
    std::string dst_ip = "Dst IP";
    std::string dst_port = "Dst Port";
    std::string protocol = "Protocol";
    std::string label = "Label";
};

struct CategoricalFeature {
    std::string name;
    std::vector<std::string> categories;
};

// Encoded layout: numeric features in order, then one-hot blocks in order,
// then zero padding up to pad_to.
struct FeatureSchema {
    std::string id;
    std::vector<std::string> numeric_features;
    std::vector<CategoricalFeature> categorical_features;
    std::size_t pad_to = kFeatureWidth;
    std::map<std::string, Interpretation> interpretation;
    MetadataColumns columns;
    LabelScheme label_scheme = LabelScheme::Direct;
    // Features named here replace gradient top-K selection when non-empty.
    std::vector<std::string> override_features;

    std::size_t numeric_width() const { return numeric_features.size(); }
    std::size_t resolved_width() const;
    // "proto=tcp" for one-hot slots, "pad_<i>" for padding.
    std::string encoded_name(std::size_t index) const;
    // Schema feature owning an encoded slot (the categorical name for one-hot slots).
    std::string base_feature(std::size_t index) const;
    std::optional<std::size_t> encoded_index(std::string_view name) const;
    bool is_schema_feature(std::string_view name) const;
    const CategoricalFeature* categorical(std::string_view name) const;

    void validate() const;

    static FeatureSchema from_json(const nlohmann::json& doc);
    static FeatureSchema load(const std::filesystem::path& path);
    nlohmann::json to_json() const;
};

struct FeatureVector {
    std::array<double, kFeatureWidth> values{};
    std::bitset<kFeatureWidth> missing;
    std::string schema_id;
};

struct NormalizationStats {
    std::vector<double> mean;
    std::vector<double> stddev;
    std::string fitted_on;

    nlohmann::json to_json() const;
    static NormalizationStats from_json(const nlohmann::json& doc);
};

struct DatasetSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;
    std::array<double, 3> ratios{0.70, 0.15, 0.15};
    std::uint64_t seed = 0;
};

struct BalancingPlan {
    // minority:majority target, e.g. {1, 5}.
    std::optional<std::pair<std::size_t, std::size_t>> oversample_ratio;
    std::optional<std::size_t> undersample_cap;
    std::uint64_t seed = 0;
};

struct RowError {
    std::size_t line = 0;
    std::string message;
};

struct LoadResult {
    std::vector<FlowRecord> records;
    std::vector<RowError> errors;
    std::vector<std::string> warnings;
};

struct EncodeDiagnostics {
    std::size_t unseen_categories = 0;
};

LoadResult load_flows(std::istream& source, const FeatureSchema& schema);

FeatureVector encode_features(const FlowRecord& record, const FeatureSchema& schema,
                              EncodeDiagnostics* diagnostics = nullptr);

// Population statistics over the numeric slots of `train`, skipping missing cells.
NormalizationStats fit_normalizer(std::span<const FeatureVector> train, std::size_t numeric_width,
                                  std::string fitted_on = "train");

// z-scores numeric slots; missing cells and zero-variance features become 0.
// One-hot and padding slots pass through.
FeatureVector apply_normalizer(const NormalizationStats& stats, const FeatureVector& vec);

std::pair<NormalizationStats, std::vector<FeatureVector>> fit_apply_normalizer(
    std::span<const FeatureVector> train, std::span<const FeatureVector> apply_to,
    std::size_t numeric_width);

DatasetSplit stratified_split(std::span<const ClassLabel> labels,
                              std::array<double, 3> ratios = {0.70, 0.15, 0.15},
                              std::uint64_t seed = 0);

ClassLabel remap_labels(std::string_view unsw_label);
ClassLabel map_cicids_label(std::string_view label);

// `indices` point into `labels`. Minority/majority are the least/most frequent
// classes among `indices`; other classes pass through unchanged.
std::vector<std::size_t> rebalance(std::span<const std::size_t> indices,
                                   std::span<const int> labels, const BalancingPlan& plan);

// Preprocessed dataset as persisted by the `preprocess` command.
struct EncodedDataset {
    std::string schema_id;
    std::vector<std::string> feature_names;
    std::vector<FlowRecord> flows;  // metadata and labels; raw_features dropped on save
    std::vector<FeatureVector> raw;
    std::vector<FeatureVector> normalized;
    NormalizationStats stats;
    DatasetSplit split;

    void save(const std::filesystem::path& dir) const;
    static EncodedDataset load(const std::filesystem::path& dir);
};

// Encodes labeled records, splits them stratified and fits the normalizer on
// the train split only.
EncodedDataset build_dataset(std::vector<FlowRecord> records, const FeatureSchema& schema,
                             std::array<double, 3> ratios = {0.70, 0.15, 0.15}, std::uint64_t seed = 0);

nlohmann::json flow_metadata_json(const FlowRecord& record);
FlowRecord flow_metadata_from_json(const nlohmann::json& doc);

}  // namespace idsrag::flowdata
