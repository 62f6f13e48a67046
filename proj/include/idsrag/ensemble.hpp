#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "idsrag/common.hpp"
#include "idsrag/mlp.hpp"

namespace idsrag::ensemble {

// SOC triage bands over the ensemble confidence.
enum class ConfidenceTier { VeryHigh, High, Medium, Low };

std::string_view to_string(ConfidenceTier tier);
ConfidenceTier parse_tier(std::string_view text);

// >= 0.95 VeryHigh, [0.70, 0.95) High, [0.50, 0.70) Medium, < 0.50 Low.
ConfidenceTier assign_tier(double confidence);

struct EnsemblePrediction {
    ClassLabel predicted = ClassLabel::Benign;
    double confidence = 0.0;
    ConfidenceTier tier = ConfidenceTier::Low;
    std::array<double, kNumClasses> per_class_probs{};
};

// argmax with ties resolved by label order Benign < DoS < DDoS.
EnsemblePrediction fuse_probabilities(const std::array<double, kNumClasses>& probs);

// The three one-vs-rest heads, indexed by ClassLabel.
struct Ensemble {
    std::vector<MLPModel> models;

    const MLPModel& model_for(ClassLabel label) const;
    // Throws unless the models cover exactly {Benign, DoS, DDoS}.
    void validate() const;

    void save(const std::filesystem::path& dir) const;
    static Ensemble load(const std::filesystem::path& dir);
};

EnsemblePrediction ensemble_predict(std::span<const double> x, const Ensemble& ensemble);
std::vector<EnsemblePrediction> ensemble_predict_batch(const Matrix& inputs, const Ensemble& ensemble);

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;
};

struct RocPoint {
    double threshold = 0.0;
    double fpr = 0.0;
    double tpr = 0.0;
};

struct ClassificationReport {
    std::vector<ClassMetrics> per_class;
    std::vector<std::vector<std::size_t>> confusion;  // [truth][predicted]
    double accuracy = 0.0;
    ClassMetrics macro;
    ClassMetrics weighted;
    std::vector<std::vector<RocPoint>> roc;  // one-vs-rest per class, when scores given
    std::vector<double> auc;

    nlohmann::json to_json() const;
};

// Threshold sweep over distinct scores, descending; starts at (0, 0) and ends at (1, 1).
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> positives);
double roc_auc(const std::vector<RocPoint>& curve);

// `scores[c][i]` is the score of class c for sample i (optional).
ClassificationReport classification_report(std::span<const int> truth, std::span<const int> predicted,
                                           std::size_t num_classes,
                                           const std::vector<std::vector<double>>* scores = nullptr);

ClassificationReport evaluate_classifier(const MLPModel& model, const BinaryDataset& data);
ClassificationReport evaluate_classifier(const Ensemble& ensemble, const Matrix& inputs,
                                         std::span<const ClassLabel> truth);

}  // namespace idsrag::ensemble
