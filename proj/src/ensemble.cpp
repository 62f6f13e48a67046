#include "idsrag/ensemble.hpp"

#include <algorithm>
#include <numeric>

namespace idsrag::ensemble {

using nlohmann::json;

std::string_view to_string(ConfidenceTier tier) {
    switch (tier) {
    case ConfidenceTier::VeryHigh: return "Very High";
    case ConfidenceTier::High: return "High";
    case ConfidenceTier::Medium: return "Medium";
    case ConfidenceTier::Low: return "Low";
    }
    return "?";
}

ConfidenceTier parse_tier(std::string_view text) {
    for (auto t : {ConfidenceTier::VeryHigh, ConfidenceTier::High, ConfidenceTier::Medium, ConfidenceTier::Low}) {
        if (to_string(t) == text) return t;
    }
    throw Error("unknown confidence tier: " + std::string(text));
}

ConfidenceTier assign_tier(double confidence) {
    if (!(confidence >= 0.0 && confidence <= 1.0)) {
        throw Error("assign_tier: confidence " + std::to_string(confidence) + " outside [0, 1]");
    }
    if (confidence >= 0.95) return ConfidenceTier::VeryHigh;
    if (confidence >= 0.70) return ConfidenceTier::High;
    if (confidence >= 0.50) return ConfidenceTier::Medium;
    return ConfidenceTier::Low;
}

EnsemblePrediction fuse_probabilities(const std::array<double, kNumClasses>& probs) {
    EnsemblePrediction p;
    p.per_class_probs = probs;
    std::size_t best = 0;
    for (std::size_t c = 1; c < kNumClasses; ++c) {
        if (probs[c] > probs[best]) best = c;
    }
    p.predicted = static_cast<ClassLabel>(best);
    p.confidence = probs[best];
    p.tier = assign_tier(p.confidence);
    return p;
}

const MLPModel& Ensemble::model_for(ClassLabel label) const {
    for (const auto& m : models) {
        if (m.target_class == label) return m;
    }
    throw Error("ensemble: no model for class " + std::string(idsrag::to_string(label)));
}

void Ensemble::validate() const {
    if (models.size() != kNumClasses) {
        throw Error("ensemble: expected 3 models, got " + std::to_string(models.size()));
    }
    std::array<bool, kNumClasses> seen{};
    for (const auto& m : models) {
        if (seen[index_of(m.target_class)]) {
            throw Error("ensemble: duplicate model for " + std::string(idsrag::to_string(m.target_class)));
        }
        seen[index_of(m.target_class)] = true;
    }
}

void Ensemble::save(const std::filesystem::path& dir) const {
    validate();
    std::filesystem::create_directories(dir);
    for (const auto& m : models) m.save(dir / (lowercase(idsrag::to_string(m.target_class)) + ".model.json"));
}

Ensemble Ensemble::load(const std::filesystem::path& dir) {
    Ensemble e;
    for (auto c : kAllClasses) {
        const auto path = dir / (lowercase(idsrag::to_string(c)) + ".model.json");
        if (!std::filesystem::exists(path)) throw Error("ensemble: missing model " + path.string());
        e.models.push_back(MLPModel::load(path));
        if (e.models.back().target_class != c) throw Error("ensemble: " + path.string() + " targets another class");
    }
    return e;
}

EnsemblePrediction ensemble_predict(std::span<const double> x, const Ensemble& ensemble) {
    ensemble.validate();
    std::array<double, kNumClasses> probs{};
    for (auto c : kAllClasses) probs[index_of(c)] = forward(ensemble.model_for(c), x)[1];
    return fuse_probabilities(probs);
}

std::vector<EnsemblePrediction> ensemble_predict_batch(const Matrix& inputs, const Ensemble& ensemble) {
    ensemble.validate();
    std::array<std::vector<double>, kNumClasses> scores;
    for (auto c : kAllClasses) scores[index_of(c)] = predict_positive(ensemble.model_for(c), inputs);
    std::vector<EnsemblePrediction> out;
    out.reserve(static_cast<std::size_t>(inputs.rows()));
    for (std::size_t i = 0; i < static_cast<std::size_t>(inputs.rows()); ++i) {
        out.push_back(fuse_probabilities({scores[0][i], scores[1][i], scores[2][i]}));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> positives) {
    if (scores.size() != positives.size()) throw Error("roc_curve: size mismatch");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    const auto pos = static_cast<double>(std::count(positives.begin(), positives.end(), 1));
    const auto neg = static_cast<double>(scores.size()) - pos;
    std::vector<RocPoint> curve;
    curve.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    double tp = 0.0, fp = 0.0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        if (positives[order[k]] == 1) tp += 1.0;
        else fp += 1.0;
        if (k + 1 < order.size() && scores[order[k + 1]] == scores[order[k]]) continue;
        curve.push_back({scores[order[k]], neg > 0 ? fp / neg : 0.0, pos > 0 ? tp / pos : 0.0});
    }
    return curve;
}

double roc_auc(const std::vector<RocPoint>& curve) {
    double area = 0.0;
    for (std::size_t i = 1; i < curve.size(); ++i) {
        area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) * 0.5;
    }
    return area;
}

ClassificationReport classification_report(std::span<const int> truth, std::span<const int> predicted,
                                           std::size_t num_classes,
                                           const std::vector<std::vector<double>>* scores) {
    if (truth.empty()) throw Error("evaluate_classifier: empty data");
    if (truth.size() != predicted.size()) throw Error("evaluate_classifier: size mismatch");
    ClassificationReport r;
    r.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const auto t = static_cast<std::size_t>(truth[i]);
        const auto p = static_cast<std::size_t>(predicted[i]);
        if (t >= num_classes || p >= num_classes) throw Error("evaluate_classifier: label out of range");
        ++r.confusion[t][p];
        if (t == p) ++correct;
    }
    const auto n = static_cast<double>(truth.size());
    r.accuracy = static_cast<double>(correct) / n;
    for (std::size_t c = 0; c < num_classes; ++c) {
        std::size_t tp = r.confusion[c][c], fp = 0, fn = 0;
        for (std::size_t o = 0; o < num_classes; ++o) {
            if (o == c) continue;
            fp += r.confusion[o][c];
            fn += r.confusion[c][o];
        }
        ClassMetrics m;
        m.support = tp + fn;
        m.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
        m.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
        m.f1 = m.precision + m.recall > 0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
        r.per_class.push_back(m);
        const auto k = static_cast<double>(num_classes);
        const auto w = static_cast<double>(m.support) / n;
        r.macro.precision += m.precision / k;
        r.macro.recall += m.recall / k;
        r.macro.f1 += m.f1 / k;
        r.weighted.precision += m.precision * w;
        r.weighted.recall += m.recall * w;
        r.weighted.f1 += m.f1 * w;
    }
    r.macro.support = r.weighted.support = truth.size();
    if (scores) {
        for (std::size_t c = 0; c < num_classes && c < scores->size(); ++c) {
            std::vector<int> pos(truth.size());
            for (std::size_t i = 0; i < truth.size(); ++i) pos[i] = truth[i] == static_cast<int>(c) ? 1 : 0;
            r.roc.push_back(roc_curve((*scores)[c], pos));
            r.auc.push_back(roc_auc(r.roc.back()));
        }
    }
    return r;
}

ClassificationReport evaluate_classifier(const MLPModel& model, const BinaryDataset& data) {
    if (data.size() == 0) throw Error("evaluate_classifier: empty data");
    const auto probs = predict_positive(model, data.features);
    std::vector<int> predicted(probs.size());
    std::vector<double> negative(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
        predicted[i] = probs[i] > 0.5 ? 1 : 0;
        negative[i] = 1.0 - probs[i];
    }
    const std::vector<std::vector<double>> scores = {negative, probs};
    return classification_report(data.labels, predicted, 2, &scores);
}

ClassificationReport evaluate_classifier(const Ensemble& ensemble, const Matrix& inputs,
                                         std::span<const ClassLabel> truth) {
    if (truth.empty()) throw Error("evaluate_classifier: empty data");
    const auto preds = ensemble_predict_batch(inputs, ensemble);
    std::vector<int> t(truth.size()), p(truth.size());
    std::vector<std::vector<double>> scores(kNumClasses, std::vector<double>(truth.size()));
    for (std::size_t i = 0; i < truth.size(); ++i) {
        t[i] = static_cast<int>(index_of(truth[i]));
        p[i] = static_cast<int>(index_of(preds[i].predicted));
        for (std::size_t c = 0; c < kNumClasses; ++c) scores[c][i] = preds[i].per_class_probs[c];
    }
    return classification_report(t, p, kNumClasses, &scores);
}

json ClassificationReport::to_json() const {
    json doc;
    doc["accuracy"] = accuracy;
    json classes = json::array();
    for (const auto& m : per_class) {
        classes.push_back({{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"support", m.support}});
    }
    doc["per_class"] = classes;
    doc["macro"] = {{"precision", macro.precision}, {"recall", macro.recall}, {"f1", macro.f1}};
    doc["weighted"] = {{"precision", weighted.precision}, {"recall", weighted.recall}, {"f1", weighted.f1}};
    doc["confusion"] = confusion;
    doc["auc"] = auc;
    return doc;
}

}  // namespace idsrag::ensemble
