#include "idsrag/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace idsrag::attribution {

using ensemble::Matrix;

std::vector<double> input_gradient(const ensemble::MLPModel& model, std::span<const double> x) {
    const Matrix row = Eigen::Map<const Matrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
    ensemble::ForwardCache cache;
    const Matrix probs = ensemble::forward_batch(model, row, &cache);
    // d p1 / d logits for a 2-way softmax.
    const double s = probs(0, 0) * probs(0, 1);
    Matrix grad_logits(1, 2);
    grad_logits << -s, s;
    const Matrix grad = ensemble::backward(model, cache, grad_logits, nullptr);
    return {grad.data(), grad.data() + grad.size()};
}

FeatureImportance gradient_importance(const ensemble::Ensemble& models, std::span<const double> x,
                                      const ensemble::EnsemblePrediction& prediction) {
    const auto grad = input_gradient(models.model_for(prediction.predicted), x);
    FeatureImportance out;
    out.predicted_class = prediction.predicted;
    out.importance.reserve(grad.size());
    for (double g : grad) {
        if (!std::isfinite(g)) throw Error("gradient_importance: non-finite gradient");
        out.importance.push_back(std::abs(g));
    }
    return out;
}

std::vector<std::size_t> select_top_k(const FeatureImportance& importances, std::size_t k) {
    const auto& imp = importances.importance;
    if (k < 1 || k > imp.size()) {
        throw Error("select_top_k: k=" + std::to_string(k) + " outside [1, " + std::to_string(imp.size()) + "]");
    }
    std::vector<std::size_t> order(imp.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) { return imp[a] > imp[b] || (imp[a] == imp[b] && a < b); });
    order.resize(k);
    return order;
}

std::string format_value(double value) {
    char buf[64];
    if (value == std::floor(value) && std::abs(value) < 1e15) {
        std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(value));
    } else {
        std::snprintf(buf, sizeof buf, "%.6g", value);
    }
    return buf;
}

std::vector<SelectedFeature> describe_selection(std::span<const std::size_t> indices,
                                                const flowdata::FeatureVector& raw,
                                                const FeatureImportance& importances,
                                                const flowdata::FeatureSchema& schema) {
    std::vector<SelectedFeature> out;
    for (std::size_t idx : indices) {
        if (idx >= flowdata::kFeatureWidth) throw Error("describe_selection: index out of range");
        SelectedFeature f;
        f.name = schema.encoded_name(idx);
        f.base_name = schema.base_feature(idx);
        f.value = raw.values[idx];
        f.importance = idx < importances.importance.size() ? importances.importance[idx] : 0.0;
        if (const auto* cat = schema.categorical(f.base_name)) {
            // Report the active category of the block rather than the 0/1 slot.
            const std::size_t first = *schema.encoded_index(cat->name);
            f.value_text = "unknown";
            for (std::size_t c = 0; c < cat->categories.size(); ++c) {
                if (raw.values[first + c] == 1.0) f.value_text = cat->categories[c];
            }
        } else if (raw.missing.test(idx)) {
            f.value_text = "missing";
        } else {
            f.value_text = format_value(f.value);
        }
        out.push_back(std::move(f));
    }
    return out;
}

std::vector<EvidenceItem> interpret_features(std::span<const SelectedFeature> features,
                                             const flowdata::FeatureSchema& schema) {
    std::vector<EvidenceItem> out;
    out.reserve(features.size());
    for (const auto& f : features) {
        EvidenceItem item;
        item.feature_name = f.name;
        item.raw_value = f.value;
        item.value_text = f.value_text.empty() ? format_value(f.value) : f.value_text;
        item.importance = f.importance;
        const std::string& key = f.base_name.empty() ? f.name : f.base_name;
        if (auto it = schema.interpretation.find(key); it != schema.interpretation.end()) {
            item.description = it->second.description;
            item.security_implication = it->second.security_implication;
        } else {
            item.description = f.name;
            item.security_implication = kNoImplication;
        }
        item.rendered = item.description + " of " + item.value_text + " — " + item.security_implication;
        out.push_back(std::move(item));
    }
    return out;
}

std::vector<std::size_t> override_indices(const flowdata::FeatureSchema& schema, std::size_t k) {
    std::vector<std::size_t> out;
    for (const auto& name : schema.override_features) {
        if (out.size() == k) break;
        const auto idx = schema.encoded_index(name);
        if (!idx) throw Error("override feature '" + name + "' not in schema");
        out.push_back(*idx);
    }
    return out;
}

nlohmann::json EvidenceItem::to_json() const {
    return {{"name", feature_name},           {"value", raw_value},
            {"value_text", value_text},       {"importance", importance},
            {"description", description},     {"security_implication", security_implication},
            {"interpretation", rendered}};
}

EvidenceItem EvidenceItem::from_json(const nlohmann::json& doc) {
    EvidenceItem e;
    e.feature_name = doc.at("name").get<std::string>();
    e.raw_value = doc.at("value").get<double>();
    e.value_text = doc.value("value_text", format_value(e.raw_value));
    e.importance = doc.value("importance", 0.0);
    e.description = doc.value("description", std::string());
    e.security_implication = doc.value("security_implication", std::string());
    e.rendered = doc.at("interpretation").get<std::string>();
    return e;
}

}  // namespace idsrag::attribution
