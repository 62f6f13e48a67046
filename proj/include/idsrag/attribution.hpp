#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "idsrag/ensemble.hpp"
#include "idsrag/flowdata.hpp"

namespace idsrag::attribution {

inline constexpr std::size_t kDefaultTopK = 5;
inline constexpr const char* kNoImplication = "no documented security implication";

struct FeatureImportance {
    std::vector<double> importance;  // |d p_hat / d x_j|, one per input dimension
    ClassLabel predicted_class = ClassLabel::Benign;
};

// Signed gradient of the positive-class softmax probability w.r.t. the input
// (eval mode), through the training backpropagation path.
std::vector<double> input_gradient(const ensemble::MLPModel& model, std::span<const double> x);

// Importances from the head of the predicted class.
FeatureImportance gradient_importance(const ensemble::Ensemble& models, std::span<const double> x,
                                      const ensemble::EnsemblePrediction& prediction);

// Descending importance; ties by ascending index.
std::vector<std::size_t> select_top_k(const FeatureImportance& importances, std::size_t k = kDefaultTopK);

struct SelectedFeature {
    std::string name;       // encoded slot name, e.g. "sttl" or "proto=udp"
    std::string base_name;  // schema feature owning the slot
    double value = 0.0;     // raw (unnormalized) value
    std::string value_text;
    double importance = 0.0;
};

struct EvidenceItem {
    std::string feature_name;
    double raw_value = 0.0;
    std::string value_text;
    double importance = 0.0;
    std::string description;
    std::string security_implication;
    std::string rendered;

    nlohmann::json to_json() const;
    static EvidenceItem from_json(const nlohmann::json& doc);
};

std::string format_value(double value);

// Gathers slot names and raw values for the chosen indices.
std::vector<SelectedFeature> describe_selection(std::span<const std::size_t> indices,
                                                const flowdata::FeatureVector& raw,
                                                const FeatureImportance& importances,
                                                const flowdata::FeatureSchema& schema);

// Renders "<Description> of <value>", a dash separator, then the security implication; order preserved.
std::vector<EvidenceItem> interpret_features(std::span<const SelectedFeature> features,
                                             const flowdata::FeatureSchema& schema);

// Encoded indices of the schema's override list, or empty when none is configured.
std::vector<std::size_t> override_indices(const flowdata::FeatureSchema& schema, std::size_t k);

}  // namespace idsrag::attribution
