#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "idsrag/ensemble.hpp"
#include "idsrag/flowdata.hpp"

namespace idsrag::ensemble {

// Counts used for the inverse-frequency weights when resampling is on.
enum class WeightBasis { Original, Resampled };

struct HeadOptions {
    MLPConfig mlp = MLPConfig::cicids();
    TrainConfig train;
    bool class_weighting = true;
    WeightBasis weight_basis = WeightBasis::Original;
    std::optional<flowdata::BalancingPlan> balancing;

    nlohmann::json to_json() const;
    static HeadOptions from_json(const nlohmann::json& doc);
};

struct HeadResult {
    MLPModel model;
    TrainHistory history;
    ClassWeights weights;
    std::size_t train_rows = 0;  // after resampling
};

// Rows of `vectors` selected by `indices`; label 1 where the class equals `target`.
BinaryDataset make_binary(std::span<const flowdata::FeatureVector> vectors, std::span<const ClassLabel> labels,
                          std::span<const std::size_t> indices, ClassLabel target);

BinaryDataset subset(const BinaryDataset& data, std::span<const std::size_t> rows);

HeadResult train_head(const BinaryDataset& train, const BinaryDataset& validation, ClassLabel target,
                      const HeadOptions& options, const EpochCallback& on_epoch = {});

struct EnsembleTrainingResult {
    Ensemble ensemble;
    std::array<TrainHistory, kNumClasses> histories;
};

// Trains the three heads on the dataset's train split, selecting on its validation split.
EnsembleTrainingResult train_ensemble(const flowdata::EncodedDataset& dataset,
                                      const std::array<HeadOptions, kNumClasses>& options);

std::vector<ClassLabel> dataset_labels(const flowdata::EncodedDataset& dataset);

}  // namespace idsrag::ensemble
