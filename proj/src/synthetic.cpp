#include "idsrag/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>

namespace idsrag::synthetic {

using ensemble::BinaryDataset;
using flowdata::FlowRecord;
using flowdata::RawFeature;
using flowdata::RawValue;

namespace {

// Largest-remainder split of `total` by `weights`.
std::array<std::size_t, kNumClasses> apportion(std::size_t total, const std::array<double, kNumClasses>& weights) {
    const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (!(sum > 0.0)) throw Error("synthetic: class mix must have a positive sum");
    std::array<std::size_t, kNumClasses> counts{};
    std::array<double, kNumClasses> rem{};
    std::size_t used = 0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        if (weights[c] < 0.0) throw Error("synthetic: class mix must be non-negative");
        const double exact = static_cast<double>(total) * weights[c] / sum;
        counts[c] = static_cast<std::size_t>(std::floor(exact));
        rem[c] = exact - static_cast<double>(counts[c]);
        used += counts[c];
    }
    while (used < total) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < kNumClasses; ++c) {
            if (rem[c] > rem[best]) best = c;
        }
        ++counts[best];
        rem[best] = -1.0;
        ++used;
    }
    return counts;
}

std::string format_number(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

std::string csv_cell(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

std::vector<FlowRecord> generate_flows(const flowdata::FeatureSchema& schema, const FlowOptions& options) {
    if (options.noise < 0.0 || options.separation < 0.0) throw Error("synthetic: noise and separation must be >= 0");
    if (options.missing_rate < 0.0 || options.missing_rate >= 1.0) throw Error("synthetic: missing_rate outside [0, 1)");

    std::mt19937_64 profile(options.profile_seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const std::size_t nnum = schema.numeric_features.size();
    std::vector<std::array<double, kNumClasses>> centre(nnum);
    for (auto& f : centre) {
        for (auto& c : f) c = options.separation * gauss(profile);
    }
    std::vector<std::array<std::vector<double>, kNumClasses>> cat_probs(schema.categorical_features.size());
    for (std::size_t k = 0; k < cat_probs.size(); ++k) {
        for (auto& probs : cat_probs[k]) {
            for (std::size_t i = 0; i < schema.categorical_features[k].categories.size(); ++i) {
                probs.push_back(std::exp(1.5 * options.separation * gauss(profile)));
            }
        }
    }

    const auto counts = apportion(options.count, options.mix);
    std::vector<ClassLabel> order;
    for (ClassLabel c : kAllClasses) order.insert(order.end(), counts[index_of(c)], c);
    std::mt19937_64 rng(options.seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> octet(1, 254);
    std::uniform_int_distribution<int> ephemeral(49152, 65535);

    std::vector<FlowRecord> flows;
    flows.reserve(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        const ClassLabel c = order[i];
        const std::size_t ci = index_of(c);
        FlowRecord r;
        char buf[64];
        std::snprintf(buf, sizeof buf, "%s-%06zu", options.id_prefix.c_str(), i);
        r.flow_id = buf;
        std::snprintf(buf, sizeof buf, "2018-02-16T%02zu:%02zu:%02zu", 8 + (i / 3600) % 12, (i / 60) % 60, i % 60);
        r.timestamp = buf;
        switch (c) {
        case ClassLabel::Benign:
            std::snprintf(buf, sizeof buf, "192.168.1.%d", octet(rng));
            break;
        case ClassLabel::DoS:
            std::snprintf(buf, sizeof buf, "172.16.0.%d", 1 + octet(rng) % 4);
            break;
        case ClassLabel::DDoS:
            std::snprintf(buf, sizeof buf, "10.%d.%d.%d", octet(rng), octet(rng), octet(rng));
            break;
        }
        r.src_ip = buf;
        r.dst_ip = "192.168.10.50";
        r.src_port = static_cast<std::uint16_t>(ephemeral(rng));
        r.dst_port = c == ClassLabel::Benign ? 443 : 80;
        r.protocol = "6";
        for (std::size_t j = 0; j < nnum; ++j) {
            const double scale = std::pow(10.0, static_cast<double>(j % 4));
            double v = scale * std::exp(0.5 * (centre[j][ci] + options.noise * gauss(rng)));
            v = std::stod(format_number(v));  // what a CSV round trip would keep
            RawFeature f{schema.numeric_features[j], RawValue::numeric(v)};
            if (options.missing_rate > 0.0 && unit(rng) < options.missing_rate) f.value = RawValue::missing();
            r.raw_features.push_back(std::move(f));
        }
        for (std::size_t k = 0; k < schema.categorical_features.size(); ++k) {
            const auto& cat = schema.categorical_features[k];
            const auto& probs = cat_probs[k][ci];
            std::discrete_distribution<std::size_t> pick(probs.begin(), probs.end());
            const std::string value = cat.categories[pick(rng)];
            if (cat.name == schema.columns.protocol) r.protocol = value;
            r.raw_features.push_back({cat.name, RawValue::categorical(value)});
        }
        r.label = c;
        r.original_label = std::string(to_string(c));
        flows.push_back(std::move(r));
    }
    return flows;
}

void write_flows_csv(std::ostream& out, std::span<const FlowRecord> flows, const flowdata::FeatureSchema& schema) {
    const auto& mc = schema.columns;
    const bool protocol_is_feature = schema.is_schema_feature(mc.protocol);
    std::vector<std::string> header = {mc.flow_id, mc.timestamp, mc.src_ip, mc.src_port, mc.dst_ip, mc.dst_port};
    if (!protocol_is_feature) header.push_back(mc.protocol);
    for (const auto& n : schema.numeric_features) header.push_back(n);
    for (const auto& c : schema.categorical_features) header.push_back(c.name);
    header.push_back(mc.label);
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << csv_cell(header[i]);
    out << '\n';

    for (const auto& r : flows) {
        std::vector<std::string> row = {r.flow_id, r.timestamp, r.src_ip, std::to_string(r.src_port), r.dst_ip,
                                        std::to_string(r.dst_port)};
        if (!protocol_is_feature) row.push_back(r.protocol);
        const auto cell = [&](const std::string& name) -> std::string {
            const auto* f = r.find(name);
            if (!f) return "";
            switch (f->value.kind) {
            case RawValue::Kind::Missing: return "";
            case RawValue::Kind::Numeric: return format_number(f->value.number);
            case RawValue::Kind::Categorical: return f->value.category;
            }
            return "";
        };
        for (const auto& n : schema.numeric_features) row.push_back(cell(n));
        for (const auto& c : schema.categorical_features) row.push_back(cell(c.name));
        row.push_back(r.original_label.empty() && r.label ? std::string(to_string(*r.label)) : r.original_label);
        for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << csv_cell(row[i]);
        out << '\n';
    }
}

ImbalancedTask two_gaussian_task(const TwoGaussianOptions& o) {
    if (o.dim == 0 || o.ratio == 0) throw Error("two_gaussian_task: dim and ratio must be positive");
    std::mt19937_64 rng(o.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double shift = o.separation / std::sqrt(static_cast<double>(o.dim));
    const auto make = [&](std::size_t minority) {
        const std::size_t majority = minority * o.ratio;
        std::vector<int> labels(majority, 0);
        labels.insert(labels.end(), minority, 1);
        std::shuffle(labels.begin(), labels.end(), rng);
        BinaryDataset d;
        d.features.resize(static_cast<Eigen::Index>(labels.size()), static_cast<Eigen::Index>(o.dim));
        for (std::size_t i = 0; i < labels.size(); ++i) {
            for (std::size_t j = 0; j < o.dim; ++j) {
                d.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                    gauss(rng) + (labels[i] ? shift : 0.0);
            }
        }
        d.labels = std::move(labels);
        return d;
    };
    ImbalancedTask t;
    t.train = make(o.minority_train);
    t.validation = make(o.minority_validation);
    t.test = make(o.minority_test);
    return t;
}

AblationOptions AblationOptions::defaults(std::size_t input_dim) {
    AblationOptions o;
    o.mlp.input_dim = input_dim;
    o.mlp.layer_widths = {16, 8};
    o.mlp.dropout = {0.0, 0.0};
    o.mlp.use_batchnorm = false;
    o.train.learning_rate = 1e-3;
    o.train.batch_size = 512;
    o.train.patience = 5;
    o.train.max_epochs = 30;
    o.train.selection_metric = ensemble::SelectionMetric::Accuracy;
    return o;
}

std::vector<AblationRow> run_balancing_ablation(const ImbalancedTask& task, const AblationOptions& options) {
    std::size_t majority = 0;
    for (int y : task.train.labels) majority += y == 0;

    std::vector<AblationRow> rows;
    for (std::size_t step = 0; step < kAblationConfigurations.size(); ++step) {
        ensemble::HeadOptions head;
        head.mlp = options.mlp;
        head.train = options.train;
        head.train.seed = options.seed;
        head.train.selection_metric =
            step >= 4 ? ensemble::SelectionMetric::MacroF1 : ensemble::SelectionMetric::Accuracy;
        head.class_weighting = step >= 1;
        head.weight_basis = options.weight_basis;
        if (step >= 2) {
            flowdata::BalancingPlan plan;
            plan.seed = options.seed;
            plan.oversample_ratio = options.oversample_ratio;
            if (step >= 3) {
                plan.undersample_cap =
                    static_cast<std::size_t>(std::ceil(options.undersample_fraction * static_cast<double>(majority)));
            }
            head.balancing = plan;
        }
        const auto result = ensemble::train_head(task.train, task.validation, ClassLabel::DoS, head);
        const auto report = ensemble::evaluate_classifier(result.model, task.test);
        AblationRow row;
        row.configuration = kAblationConfigurations[step];
        row.recall = report.per_class.at(1).recall;
        row.precision = report.per_class.at(1).precision;
        row.f1 = report.per_class.at(1).f1;
        row.epochs = result.history.epochs_trained();
        row.selected_epoch = result.history.selected_epoch;
        row.train_rows = result.train_rows;
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace idsrag::synthetic
