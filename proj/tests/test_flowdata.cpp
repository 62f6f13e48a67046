#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "idsrag/flowdata.hpp"
#include "idsrag/synthetic.hpp"

using namespace idsrag;
using namespace idsrag::flowdata;

namespace {

const std::string kFixtures = IDSRAG_FIXTURES;

FeatureSchema tiny_schema() {
    return FeatureSchema::from_json({{"id", "tiny"},
                                     {"numeric_features", {"bytes", "pkts"}},
                                     {"categorical_features", {{{"name", "proto"}, {"categories", {"tcp", "udp", "icmp"}}}}},
                                     {"pad_to", 66},
                                     {"columns", {{"protocol", "proto"}}}});
}

LoadResult load_text(const std::string& csv, const FeatureSchema& schema) {
    std::istringstream in(csv);
    return load_flows(in, schema);
}

}  // namespace

TEST(Schema, RejectsWidthOverflowAndUnknownInterpretation) {
    nlohmann::json doc = {{"id", "big"}, {"pad_to", 66}};
    std::vector<std::string> names;
    for (int i = 0; i < 67; ++i) names.push_back("f" + std::to_string(i));
    doc["numeric_features"] = names;
    EXPECT_THROW(FeatureSchema::from_json(doc), Error);
    EXPECT_THROW(FeatureSchema::from_json({{"numeric_features", {"a"}}, {"pad_to", 50}}), Error);
    EXPECT_THROW(FeatureSchema::from_json({{"numeric_features", {"a"}},
                                           {"interpretation", {{"b", {{"description", "x"}, {"security_implication", "y"}}}}}}),
                 Error);
}

TEST(Schema, UnswResolvesTo49) {
    const auto s = FeatureSchema::load(kFixtures + "/unsw_schema.json");
    EXPECT_EQ(s.resolved_width(), 49u);
    EXPECT_EQ(s.encoded_name(39), "proto=tcp");
    EXPECT_EQ(s.encoded_name(50), "pad_50");
    EXPECT_EQ(s.base_feature(40), "proto");
}

TEST(LoadFlows, ThreeRows) {
    const auto r = load_text("Flow ID,Dst Port,bytes,pkts,proto,Label\n"
                             "a,80,1,2,tcp,Benign\nb,81,3,4,udp,DoS\nc,82,5,6,icmp,DDoS\n",
                             tiny_schema());
    ASSERT_EQ(r.records.size(), 3u);
    EXPECT_TRUE(r.errors.empty());
    EXPECT_EQ(r.records[1].label, ClassLabel::DoS);
    EXPECT_EQ(r.records[2].protocol, "icmp");
}

TEST(LoadFlows, PortOutOfRangeIsRowError) {
    const auto r = load_text("Flow ID,Dst Port,bytes,pkts,proto,Label\n"
                             "a,70000,1,2,tcp,Benign\nb,80,1,2,tcp,Benign\n",
                             tiny_schema());
    ASSERT_EQ(r.records.size(), 1u);
    ASSERT_EQ(r.errors.size(), 1u);
    EXPECT_EQ(r.errors[0].line, 2u);
}

TEST(LoadFlows, BadNumericAndColumnCountAreRowErrors) {
    const auto r = load_text("Flow ID,bytes,pkts,proto,Label\n"
                             "a,abc,2,tcp,Benign\nb,1,2,tcp\nc,1,2,tcp,Benign\n",
                             tiny_schema());
    EXPECT_EQ(r.records.size(), 1u);
    EXPECT_EQ(r.errors.size(), 2u);
}

TEST(LoadFlows, CicFixtureTenRows) {
    const auto schema = FeatureSchema::load(kFixtures + "/cic_schema.json");
    std::ifstream in(kFixtures + "/cic_sample.csv");
    const auto r = load_flows(in, schema);
    ASSERT_EQ(r.records.size(), 10u);
    EXPECT_TRUE(r.errors.empty());
    std::array<int, 3> counts{};
    for (const auto& rec : r.records) {
        const auto v = encode_features(rec, schema);
        EXPECT_EQ(v.values.size(), 66u);
        for (double x : v.values) EXPECT_TRUE(std::isfinite(x));
        ++counts[index_of(*rec.label)];
    }
    EXPECT_EQ(counts, (std::array<int, 3>{4, 3, 3}));
    EXPECT_TRUE(encode_features(r.records[3], schema).missing.test(11));
}

TEST(Encode, UnswPadsSeventeenZeros) {
    const auto schema = FeatureSchema::load(kFixtures + "/unsw_schema.json");
    FlowRecord rec;
    for (const auto& n : schema.numeric_features) rec.raw_features.push_back({n, RawValue::numeric(3.0)});
    rec.raw_features.push_back({"proto", RawValue::categorical("udp")});
    rec.raw_features.push_back({"service", RawValue::categorical("dns")});
    rec.raw_features.push_back({"state", RawValue::categorical("con")});
    const auto v = encode_features(rec, schema);
    for (std::size_t i = 0; i < 39; ++i) EXPECT_EQ(v.values[i], 3.0);
    EXPECT_EQ(v.values[40], 1.0);  // proto=udp
    EXPECT_EQ(v.values[44], 1.0);  // service=dns
    EXPECT_EQ(v.values[48], 1.0);  // state=con
    double block = 0;
    for (std::size_t i = 39; i < 49; ++i) block += v.values[i];
    EXPECT_EQ(block, 3.0);
    for (std::size_t i = 49; i < 66; ++i) EXPECT_EQ(v.values[i], 0.0);
}

TEST(Encode, OneHotBlock) {
    FlowRecord rec;
    rec.raw_features.push_back({"proto", RawValue::categorical("TCP")});
    const auto v = encode_features(rec, tiny_schema());
    EXPECT_EQ(v.values[2], 1.0);
    EXPECT_EQ(v.values[3], 0.0);
    EXPECT_EQ(v.values[4], 0.0);
}

TEST(Encode, UnseenCategoryIsAllZeroBlock) {
    FlowRecord rec;
    rec.raw_features.push_back({"proto", RawValue::categorical("gre")});
    EncodeDiagnostics diag;
    const auto v = encode_features(rec, tiny_schema(), &diag);
    EXPECT_EQ(v.values[2] + v.values[3] + v.values[4], 0.0);
    EXPECT_EQ(diag.unseen_categories, 1u);
}

TEST(Encode, AllDefaultsIsZeroVector) {
    const auto v = encode_features(FlowRecord{}, tiny_schema());
    for (double x : v.values) EXPECT_EQ(x, 0.0);
}

TEST(Normalize, HandComputed) {
    std::vector<FeatureVector> train(3);
    for (int i = 0; i < 3; ++i) train[i].values[0] = i + 1.0;
    const auto stats = fit_normalizer(train, 1);
    EXPECT_DOUBLE_EQ(stats.mean[0], 2.0);
    EXPECT_NEAR(stats.stddev[0], std::sqrt(2.0 / 3.0), 1e-15);
    FeatureVector x;
    x.values[0] = 2.0;
    EXPECT_EQ(apply_normalizer(stats, x).values[0], 0.0);
    x.values[0] = 3.0;
    EXPECT_NEAR(apply_normalizer(stats, x).values[0], 1.224744871391589, 1e-12);
}

TEST(Normalize, IdentityAndPassThrough) {
    NormalizationStats s{{0.0, 0.0}, {1.0, 1.0}, "train"};
    FeatureVector x;
    x.values[0] = 4.5;
    x.values[1] = -2.0;
    x.values[5] = 1.0;  // one-hot slot
    const auto y = apply_normalizer(s, x);
    EXPECT_EQ(y.values[0], 4.5);
    EXPECT_EQ(y.values[1], -2.0);
    EXPECT_EQ(y.values[5], 1.0);
}

TEST(Normalize, ZeroVarianceAndMissingMapToZero) {
    std::vector<FeatureVector> train(4);
    for (auto& v : train) v.values[0] = 7.0;
    train[2].missing.set(1);
    train[0].values[1] = 1.0;
    train[1].values[1] = 2.0;
    train[3].values[1] = 3.0;
    const auto stats = fit_normalizer(train, 2);
    EXPECT_EQ(stats.stddev[0], 0.0);
    EXPECT_DOUBLE_EQ(stats.mean[1], 2.0);
    FeatureVector x;
    x.values[0] = 100.0;
    x.missing.set(1);
    const auto y = apply_normalizer(stats, x);
    EXPECT_EQ(y.values[0], 0.0);
    EXPECT_EQ(y.values[1], 0.0);
}

TEST(Normalize, PropertyTrainMomentsAreStandard) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(5.0, 3.0);
    std::vector<FeatureVector> train(200);
    for (auto& v : train) {
        for (std::size_t j = 0; j < 10; ++j) v.values[j] = g(rng) * (j + 1);
        v.values[10] = 2.0;
    }
    const auto stats = fit_normalizer(train, 11);
    std::vector<double> sum(11, 0.0), sq(11, 0.0);
    for (const auto& v : train) {
        const auto y = apply_normalizer(stats, v);
        for (std::size_t j = 0; j < 11; ++j) {
            sum[j] += y.values[j];
            sq[j] += y.values[j] * y.values[j];
        }
    }
    for (std::size_t j = 0; j < 11; ++j) {
        const double m = sum[j] / 200.0;
        const double sd = std::sqrt(sq[j] / 200.0 - m * m);
        EXPECT_LT(std::abs(m), 1e-9);
        EXPECT_TRUE(sd == 0.0 || std::abs(sd - 1.0) < 1e-9) << j << ' ' << sd;
    }
}

TEST(Split, SingleClassHundred) {
    std::vector<ClassLabel> labels(100, ClassLabel::DoS);
    const auto s = stratified_split(labels);
    EXPECT_EQ(s.train.size(), 70u);
    EXPECT_EQ(s.validation.size(), 15u);
    EXPECT_EQ(s.test.size(), 15u);
}

TEST(Split, DegenerateRatio) {
    std::vector<ClassLabel> labels(9, ClassLabel::Benign);
    const auto s = stratified_split(labels, {1.0, 0.0, 0.0});
    EXPECT_EQ(s.train.size(), 9u);
    EXPECT_TRUE(s.validation.empty());
    EXPECT_TRUE(s.test.empty());
}

TEST(Split, TenPerClassPartition) {
    std::vector<ClassLabel> labels;
    for (ClassLabel c : kAllClasses) labels.insert(labels.end(), 10, c);
    const auto s = stratified_split(labels, {0.70, 0.15, 0.15}, 4);
    std::set<std::size_t> all;
    for (const auto* part : {&s.train, &s.validation, &s.test}) {
        for (auto i : *part) EXPECT_TRUE(all.insert(i).second);
    }
    EXPECT_EQ(all.size(), 30u);
    for (ClassLabel c : kAllClasses) {
        std::array<int, 3> n{};
        int k = 0;
        for (const auto* part : {&s.train, &s.validation, &s.test}) {
            for (auto i : *part) n[k] += labels[i] == c;
            ++k;
        }
        EXPECT_EQ(n[0], 7);
        EXPECT_GE(n[1], 1);
        EXPECT_LE(n[1], 2);
        EXPECT_GE(n[2], 1);
        EXPECT_LE(n[2], 2);
    }
}

TEST(Split, PropertyProportionsWithinOnePercent) {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<ClassLabel> labels;
        const std::array<std::size_t, 3> sizes{500 + rng() % 3000, 300 + rng() % 2000, 300 + rng() % 2000};
        for (ClassLabel c : kAllClasses) labels.insert(labels.end(), sizes[index_of(c)], c);
        std::shuffle(labels.begin(), labels.end(), rng);
        const auto s = stratified_split(labels, {0.70, 0.15, 0.15}, trial);
        EXPECT_EQ(s.train.size() + s.validation.size() + s.test.size(), labels.size());
        for (const auto* part : {&s.train, &s.validation, &s.test}) {
            for (ClassLabel c : kAllClasses) {
                double n = 0;
                for (auto i : *part) n += labels[i] == c;
                const double overall = static_cast<double>(sizes[index_of(c)]) / labels.size();
                EXPECT_LT(std::abs(n / part->size() - overall), 0.01);
            }
        }
    }
}

TEST(Labels, UnswRemap) {
    EXPECT_EQ(remap_labels("Normal"), ClassLabel::Benign);
    EXPECT_EQ(remap_labels("Generic"), ClassLabel::DDoS);
    EXPECT_EQ(remap_labels("Worms"), ClassLabel::DoS);
    std::set<ClassLabel> image;
    for (const char* l : {"Normal", "Generic", "Exploits", "Fuzzers", "DoS", "Reconnaissance", "Analysis", "Backdoor",
                          "Shellcode", "Worms"}) {
        image.insert(remap_labels(l));
    }
    EXPECT_EQ(image.size(), 3u);
    EXPECT_THROW(remap_labels("Botnet"), Error);
}

TEST(Labels, Cicids) {
    EXPECT_EQ(map_cicids_label("Benign"), ClassLabel::Benign);
    EXPECT_EQ(map_cicids_label("DoS attacks-Hulk"), ClassLabel::DoS);
    EXPECT_EQ(map_cicids_label("DDOS attack-HOIC"), ClassLabel::DDoS);
    EXPECT_THROW(map_cicids_label("Infilteration"), Error);
}

TEST(Rebalance, OversampleToRatio) {
    std::vector<int> labels(10000, 0);
    labels.insert(labels.end(), 100, 1);
    std::vector<std::size_t> idx(labels.size());
    std::iota(idx.begin(), idx.end(), 0);
    BalancingPlan plan;
    plan.oversample_ratio = std::make_pair(1, 5);
    const auto out = rebalance(idx, labels, plan);
    std::size_t minority = 0;
    for (auto i : out) minority += labels[i] == 1;
    EXPECT_EQ(minority, 2000u);
    EXPECT_EQ(out.size() - minority, 10000u);
}

TEST(Rebalance, AtRatioUnchangedAndCap) {
    std::vector<int> labels(500, 0);
    labels.insert(labels.end(), 100, 1);
    std::vector<std::size_t> idx(labels.size());
    std::iota(idx.begin(), idx.end(), 0);
    BalancingPlan plan;
    plan.oversample_ratio = std::make_pair(1, 5);
    EXPECT_EQ(rebalance(idx, labels, plan), idx);

    std::vector<int> big(10000, 0);
    big.insert(big.end(), 50, 1);
    std::vector<std::size_t> all(big.size());
    std::iota(all.begin(), all.end(), 0);
    BalancingPlan cap;
    cap.undersample_cap = 5000;
    const auto out = rebalance(all, big, cap);
    std::size_t majority = 0;
    for (auto i : out) majority += big[i] == 0;
    EXPECT_EQ(majority, 5000u);
}

TEST(Rebalance, PropertyKeepsMinorityAndOnlyDuplicates) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t maj = 200 + rng() % 800, min = 5 + rng() % 50;
        std::vector<int> labels(maj, 0);
        labels.insert(labels.end(), min, 1);
        std::shuffle(labels.begin(), labels.end(), rng);
        std::vector<std::size_t> idx(labels.size());
        std::iota(idx.begin(), idx.end(), 0);
        BalancingPlan plan;
        plan.seed = trial;
        plan.oversample_ratio = std::make_pair(1, 1 + rng() % 6);
        plan.undersample_cap = maj / 2;
        const auto out = rebalance(idx, labels, plan);
        std::set<std::size_t> seen(out.begin(), out.end());
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] == 1) EXPECT_TRUE(seen.count(i));
        }
        for (auto i : out) EXPECT_LT(i, labels.size());
    }
}

TEST(Dataset, BuildSaveLoadRoundTrip) {
    const auto schema = FeatureSchema::load(kFixtures + "/cic_schema.json");
    synthetic::FlowOptions o;
    o.count = 60;
    o.missing_rate = 0.05;
    auto flows = synthetic::generate_flows(schema, o);
    const auto ds = build_dataset(flows, schema, {0.7, 0.15, 0.15}, 2);
    const auto dir = std::filesystem::temp_directory_path() / "idsrag_ds_roundtrip";
    std::filesystem::remove_all(dir);
    ds.save(dir);
    const auto back = EncodedDataset::load(dir);
    ASSERT_EQ(back.flows.size(), 60u);
    EXPECT_EQ(back.split.train, ds.split.train);
    for (std::size_t i = 0; i < 60; ++i) {
        EXPECT_EQ(back.flows[i].flow_id, ds.flows[i].flow_id);
        EXPECT_EQ(back.flows[i].label, ds.flows[i].label);
        EXPECT_EQ(back.raw[i].missing, ds.raw[i].missing);
        for (std::size_t j = 0; j < kFeatureWidth; ++j) EXPECT_EQ(back.normalized[i].values[j], ds.normalized[i].values[j]);
    }
    std::filesystem::remove_all(dir);
}

TEST(Synthetic, CsvRoundTrip) {
    const auto schema = FeatureSchema::load(kFixtures + "/cic_schema.json");
    synthetic::FlowOptions o;
    o.count = 25;
    const auto flows = synthetic::generate_flows(schema, o);
    std::stringstream csv;
    synthetic::write_flows_csv(csv, flows, schema);
    const auto r = load_flows(csv, schema);
    ASSERT_EQ(r.records.size(), 25u);
    EXPECT_TRUE(r.errors.empty());
    for (std::size_t i = 0; i < 25; ++i) {
        const auto a = encode_features(flows[i], schema), b = encode_features(r.records[i], schema);
        EXPECT_EQ(a.values, b.values);
        EXPECT_EQ(r.records[i].label, flows[i].label);
    }
}
