#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "idsrag/flowdata.hpp"
#include "idsrag/mlp.hpp"
#include "idsrag/training.hpp"

namespace idsrag::synthetic {

// Class-conditional log-normal flows over the schema's numeric features.
// Class centres come from `profile_seed` alone, so flows drawn with different
// `seed`s share one distribution.
struct FlowOptions {
    std::size_t count = 1000;
    std::array<double, kNumClasses> mix{0.5, 0.25, 0.25};  // Benign, DoS, DDoS
    double separation = 1.0;
    double noise = 1.0;
    double missing_rate = 0.0;
    std::uint64_t seed = 1;
    std::uint64_t profile_seed = 7;
    std::string id_prefix = "flow";
};

std::vector<flowdata::FlowRecord> generate_flows(const flowdata::FeatureSchema& schema, const FlowOptions& options);

// Header-bearing CSV readable by load_flows with the same schema.
void write_flows_csv(std::ostream& out, std::span<const flowdata::FlowRecord> flows,
                     const flowdata::FeatureSchema& schema);

// Two isotropic Gaussians whose means are `separation` apart, minority:majority = 1:ratio.
struct TwoGaussianOptions {
    std::size_t dim = 8;
    double separation = 2.0;
    std::size_t ratio = 156;
    std::size_t minority_train = 200;
    std::size_t minority_validation = 60;
    std::size_t minority_test = 400;
    std::uint64_t seed = 11;
};

struct ImbalancedTask {
    ensemble::BinaryDataset train;
    ensemble::BinaryDataset validation;
    ensemble::BinaryDataset test;
};

ImbalancedTask two_gaussian_task(const TwoGaussianOptions& options);

struct AblationRow {
    std::string configuration;
    double recall = 0.0;
    double precision = 0.0;
    double f1 = 0.0;
    std::size_t epochs = 0;
    std::size_t selected_epoch = 0;
    std::size_t train_rows = 0;
};

struct AblationOptions {
    ensemble::MLPConfig mlp;
    ensemble::TrainConfig train;
    std::pair<std::size_t, std::size_t> oversample_ratio{1, 5};
    double undersample_fraction = 0.25;  // cap = fraction * majority count
    ensemble::WeightBasis weight_basis = ensemble::WeightBasis::Original;
    std::uint64_t seed = 3;

    static AblationOptions defaults(std::size_t input_dim);
};

inline constexpr std::array<const char*, 5> kAblationConfigurations = {
    "Baseline (no balancing)", "+ Class-weighted BCE", "+ Random oversampling (1:5)", "+ Controlled undersampling",
    "+ F1-based model selection"};

// Cumulative interventions; minority recall measured on the test split.
std::vector<AblationRow> run_balancing_ablation(const ImbalancedTask& task, const AblationOptions& options);

}  // namespace idsrag::synthetic
