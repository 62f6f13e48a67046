#include "idsrag/training.hpp"

#include <numeric>

namespace idsrag::ensemble {

using nlohmann::json;

json HeadOptions::to_json() const {
    json doc{{"mlp", mlp.to_json()},
             {"train", train.to_json()},
             {"class_weighting", class_weighting},
             {"weight_basis", weight_basis == WeightBasis::Original ? "original" : "resampled"}};
    if (balancing) {
        json b{{"seed", balancing->seed}};
        if (balancing->oversample_ratio) {
            b["oversample_ratio"] = {balancing->oversample_ratio->first, balancing->oversample_ratio->second};
        }
        if (balancing->undersample_cap) b["undersample_cap"] = *balancing->undersample_cap;
        doc["balancing"] = b;
    }
    return doc;
}

HeadOptions HeadOptions::from_json(const json& doc) {
    HeadOptions o;
    if (doc.contains("mlp")) o.mlp = MLPConfig::from_json(doc.at("mlp"));
    if (doc.contains("train")) o.train = TrainConfig::from_json(doc.at("train"));
    o.class_weighting = doc.value("class_weighting", o.class_weighting);
    const auto basis = doc.value("weight_basis", std::string("original"));
    if (basis == "original") {
        o.weight_basis = WeightBasis::Original;
    } else if (basis == "resampled") {
        o.weight_basis = WeightBasis::Resampled;
    } else {
        throw Error("head options: unknown weight_basis " + basis);
    }
    if (doc.contains("balancing") && !doc.at("balancing").is_null()) {
        const auto& b = doc.at("balancing");
        flowdata::BalancingPlan plan;
        plan.seed = b.value("seed", std::uint64_t{0});
        if (b.contains("oversample_ratio")) {
            const auto r = b.at("oversample_ratio").get<std::vector<std::size_t>>();
            if (r.size() != 2 || r[0] == 0 || r[1] == 0) throw Error("head options: oversample_ratio must be [num, den] > 0");
            plan.oversample_ratio = std::make_pair(r[0], r[1]);
        }
        if (b.contains("undersample_cap")) plan.undersample_cap = b.at("undersample_cap").get<std::size_t>();
        o.balancing = plan;
    }
    return o;
}

BinaryDataset make_binary(std::span<const flowdata::FeatureVector> vectors, std::span<const ClassLabel> labels,
                          std::span<const std::size_t> indices, ClassLabel target) {
    if (vectors.size() != labels.size()) throw Error("make_binary: vectors and labels differ in length");
    BinaryDataset d;
    d.features.resize(static_cast<Eigen::Index>(indices.size()), static_cast<Eigen::Index>(flowdata::kFeatureWidth));
    d.labels.reserve(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const std::size_t i = indices[r];
        if (i >= vectors.size()) throw Error("make_binary: index out of range");
        for (std::size_t j = 0; j < flowdata::kFeatureWidth; ++j) {
            d.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = vectors[i].values[j];
        }
        d.labels.push_back(labels[i] == target ? 1 : 0);
    }
    return d;
}

BinaryDataset subset(const BinaryDataset& data, std::span<const std::size_t> rows) {
    BinaryDataset out;
    out.features.resize(static_cast<Eigen::Index>(rows.size()), data.features.cols());
    out.labels.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        out.features.row(static_cast<Eigen::Index>(r)) = data.features.row(static_cast<Eigen::Index>(rows[r]));
        out.labels.push_back(data.labels.at(rows[r]));
    }
    return out;
}

namespace {

std::pair<std::size_t, std::size_t> count_labels(std::span<const int> labels) {
    std::size_t pos = 0;
    for (int y : labels) pos += y == 1;
    return {labels.size() - pos, pos};
}

}  // namespace

HeadResult train_head(const BinaryDataset& train, const BinaryDataset& validation, ClassLabel target,
                      const HeadOptions& options, const EpochCallback& on_epoch) {
    HeadResult result;
    const auto [neg0, pos0] = count_labels(train.labels);
    const BinaryDataset* fit = &train;
    BinaryDataset resampled;
    if (options.balancing) {
        std::vector<std::size_t> all(train.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        const auto rows = flowdata::rebalance(all, train.labels, *options.balancing);
        resampled = subset(train, rows);
        fit = &resampled;
    }
    if (options.class_weighting) {
        const auto [neg, pos] = options.weight_basis == WeightBasis::Original ? std::make_pair(neg0, pos0)
                                                                              : count_labels(fit->labels);
        result.weights = class_weights(neg, pos);
    }
    auto [model, history] =
        train_binary_classifier(*fit, validation, options.mlp, options.train, result.weights, target, on_epoch);
    model.training_metadata["options"] = options.to_json();
    model.training_metadata["train_rows"] = fit->size();
    result.model = std::move(model);
    result.history = std::move(history);
    result.train_rows = fit->size();
    return result;
}

std::vector<ClassLabel> dataset_labels(const flowdata::EncodedDataset& dataset) {
    std::vector<ClassLabel> labels;
    labels.reserve(dataset.flows.size());
    for (const auto& f : dataset.flows) {
        if (!f.label) throw Error("dataset: flow " + f.flow_id + " is unlabeled");
        labels.push_back(*f.label);
    }
    return labels;
}

EnsembleTrainingResult train_ensemble(const flowdata::EncodedDataset& dataset,
                                      const std::array<HeadOptions, kNumClasses>& options) {
    const auto labels = dataset_labels(dataset);
    EnsembleTrainingResult out;
    for (ClassLabel c : kAllClasses) {
        const auto train = make_binary(dataset.normalized, labels, dataset.split.train, c);
        const auto val = make_binary(dataset.normalized, labels, dataset.split.validation, c);
        auto head = train_head(train, val, c, options[index_of(c)]);
        out.ensemble.models.push_back(std::move(head.model));
        out.histories[index_of(c)] = std::move(head.history);
    }
    return out;
}

}  // namespace idsrag::ensemble
