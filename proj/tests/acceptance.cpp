// One PASS/FAIL line per acceptance criterion. Exit status is non-zero when any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "idsrag/evalkit.hpp"
#include "idsrag/knowledge.hpp"
#include "idsrag/pipeline.hpp"
#include "idsrag/retrieval.hpp"
#include "idsrag/synthetic.hpp"
#include "idsrag/text.hpp"
#include "idsrag/training.hpp"
#include "oracles.hpp"
#include "scenario.hpp"

using namespace idsrag;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = IDSRAG_FIXTURES;

// Tolerances and budgets.
constexpr double kGradRelTol = 1e-4;
constexpr double kGradRelFloor = 1e-8;
constexpr double kGradStep = 1e-6;
constexpr std::size_t kGradNets = 20;
constexpr double kGradBudgetS = 30.0;

constexpr double kAblationFullRecall = 0.90;
constexpr double kAblationBaselineRecall = 0.10;
constexpr double kAblationBudgetS = 300.0;

constexpr std::size_t kClassifyFlows = 50000;
constexpr double kClassifyAccuracy = 0.95;
constexpr double kClassifyF1 = 0.90;
constexpr double kClassifyBudgetS = 600.0;

constexpr std::size_t kBm25Corpora = 100;
constexpr std::size_t kBm25Queries = 10;
constexpr double kBm25Tol = 1e-9;
constexpr std::size_t kBm25Perturbations = 1000;

constexpr std::size_t kFixtureQueries = 33;
constexpr std::size_t kFixtureChunks = 50;
constexpr std::size_t kLatencyChunks = 5000;
constexpr double kLatencyBudgetMs = 2000.0;

constexpr std::size_t kMetricCases = 100;
constexpr double kMetricTol = 1e-9;

constexpr double kTierEps = 1e-9;

constexpr std::size_t kRagPerClass = 12;
constexpr double kRagWinShare = 0.90;
constexpr double kRagAlpha = 0.05;

constexpr std::size_t kChunkSize = 500;
constexpr std::size_t kChunkOverlap = 200;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// ---------------------------------------------------------------------------

Outcome gradient_check() {
    const auto start = Clock::now();
    std::mt19937_64 rng(2024);
    double worst = 0.0;
    std::size_t checked = 0;
    for (std::size_t net = 0; net < kGradNets; ++net) {
        ensemble::MLPConfig c;
        c.input_dim = 2 + rng() % 5;
        const std::size_t depth = 1 + rng() % 3;
        for (std::size_t l = 0; l < depth; ++l) c.layer_widths.push_back(2 + rng() % 6);
        c.dropout.assign(depth, 0.0);
        c.use_batchnorm = net % 2 == 1;
        auto model = ensemble::MLPModel::initialize(c, ClassLabel::DoS, net);
        std::normal_distribution<double> g(0.0, 1.0);
        for (auto& layer : model.layers) {
            for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = 0.1 * g(rng);
            if (!layer.batchnorm) continue;
            auto& bn = *layer.batchnorm;
            for (Eigen::Index i = 0; i < bn.gamma.size(); ++i) {
                bn.gamma(i) = 1.0 + 0.2 * g(rng);
                bn.beta(i) = 0.1 * g(rng);
                bn.running_mean(i) = 0.1 * g(rng);
                bn.running_var(i) = 0.5 + std::abs(g(rng));
            }
        }
        const std::size_t rows = 3 + rng() % 6;
        ensemble::Matrix x(rows, c.input_dim);
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
        std::vector<int> y(rows);
        for (auto& v : y) v = static_cast<int>(rng() % 2);
        const ensemble::ClassWeights w{0.5 + (rng() % 100) / 100.0, 0.5 + (rng() % 300) / 100.0};

        ensemble::ForwardCache cache;
        const auto probs = ensemble::forward_batch(model, x, &cache);
        ensemble::Matrix grad_logits;
        ensemble::batch_loss(probs, y, w, &grad_logits);
        auto grads = ensemble::Gradients::zeros_like(model);
        ensemble::backward(model, cache, grad_logits, &grads);

        const auto check = [&](double& param, double analytic) {
            const double v = param;
            param = v + kGradStep;
            const double up = ensemble::batch_loss(ensemble::forward_batch(model, x), y, w, nullptr);
            param = v - kGradStep;
            const double down = ensemble::batch_loss(ensemble::forward_batch(model, x), y, w, nullptr);
            param = v;
            const double fd = (up - down) / (2 * kGradStep);
            worst = std::max(worst, std::abs(fd - analytic) / std::max(kGradRelFloor, std::abs(fd) + std::abs(analytic)));
            ++checked;
        };
        for (std::size_t l = 0; l < model.layers.size(); ++l) {
            auto& layer = model.layers[l];
            for (Eigen::Index i = 0; i < layer.weights.size(); ++i) {
                check(layer.weights.data()[i], grads.weights[l].data()[i]);
            }
            for (Eigen::Index i = 0; i < layer.bias.size(); ++i) check(layer.bias(i), grads.bias[l](i));
            if (layer.batchnorm) {
                for (Eigen::Index i = 0; i < layer.batchnorm->gamma.size(); ++i) {
                    check(layer.batchnorm->gamma(i), grads.gamma[l](i));
                    check(layer.batchnorm->beta(i), grads.beta[l](i));
                }
            }
        }
    }
    const double secs = seconds_since(start);
    return {worst < kGradRelTol && secs < kGradBudgetS,
            fmt("%zu nets, %zu parameters, max relative error %.3g (< %.0e), %.1f s (< %.0f s)", kGradNets, checked,
                worst, kGradRelTol, secs, kGradBudgetS)};
}

Outcome ablation_trend() {
    const auto start = Clock::now();
    const synthetic::TwoGaussianOptions task_options;
    const auto task = synthetic::two_gaussian_task(task_options);
    const auto rows = synthetic::run_balancing_ablation(task, synthetic::AblationOptions::defaults(task_options.dim));
    const double secs = seconds_since(start);
    bool monotone = rows.size() == synthetic::kAblationConfigurations.size();
    std::string trend;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (i > 0 && rows[i].recall < rows[i - 1].recall) monotone = false;
        trend += fmt("%s%.4f", i ? " -> " : "", rows[i].recall);
    }
    const bool pass = monotone && !rows.empty() && rows.back().recall >= kAblationFullRecall &&
                      rows.front().recall < kAblationBaselineRecall && secs < kAblationBudgetS;
    return {pass, fmt("1:%zu task, minority recall %s, %s, %.1f s (< %.0f s)", task_options.ratio, trend.c_str(),
                      monotone ? "non-decreasing" : "NOT non-decreasing", secs, kAblationBudgetS)};
}

Outcome desk_classification() {
    const auto start = Clock::now();
    const auto schema = flowdata::FeatureSchema::load(kFixtures / "cic_schema.json");
    synthetic::FlowOptions fo;
    fo.count = kClassifyFlows;
    fo.seed = 50;
    const auto ds = flowdata::build_dataset(synthetic::generate_flows(schema, fo), schema, {0.70, 0.15, 0.15}, 50);
    std::array<ensemble::HeadOptions, kNumClasses> opts;
    for (auto& o : opts) {
        o.mlp = ensemble::MLPConfig::cicids();
        o.train.seed = 50;
    }
    const auto result = ensemble::train_ensemble(ds, opts);
    const auto labels = ensemble::dataset_labels(ds);
    ensemble::Matrix x(ds.split.test.size(), flowdata::kFeatureWidth);
    std::vector<ClassLabel> truth;
    for (std::size_t i = 0; i < ds.split.test.size(); ++i) {
        const auto& v = ds.normalized[ds.split.test[i]].values;
        for (std::size_t j = 0; j < flowdata::kFeatureWidth; ++j) x(i, j) = v[j];
        truth.push_back(labels[ds.split.test[i]]);
    }
    const auto report = ensemble::evaluate_classifier(result.ensemble, x, truth);
    const double secs = seconds_since(start);
    double min_f1 = 1.0;
    for (const auto& m : report.per_class) min_f1 = std::min(min_f1, m.f1);
    return {report.accuracy >= kClassifyAccuracy && min_f1 >= kClassifyF1 && secs < kClassifyBudgetS,
            fmt("%zu synthetic flows, test accuracy %.4f (>= %.2f), F1 Benign %.4f DoS %.4f DDoS %.4f (>= %.2f), "
                "%.1f s (< %.0f s)",
                kClassifyFlows, report.accuracy, kClassifyAccuracy, report.per_class[0].f1, report.per_class[1].f1,
                report.per_class[2].f1, kClassifyF1, secs, kClassifyBudgetS)};
}

knowledge::KnowledgeBase kb_from_texts(const std::vector<std::string>& texts) {
    std::vector<knowledge::Chunk> chunks;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        knowledge::Chunk c;
        c.doc_id = "d" + std::to_string(i);
        c.chunk_id = c.doc_id + "#0";
        c.text = texts[i];
        c.citation_label = "NIST SP 800-61";
        c.token_span = {0, text::tokenize(texts[i]).size()};
        chunks.push_back(std::move(c));
    }
    return knowledge::KnowledgeBase(std::move(chunks), "acceptance");
}

std::string random_text(std::mt19937_64& rng, std::size_t min_len, std::size_t max_len, std::size_t vocab) {
    std::uniform_int_distribution<std::size_t> len(min_len, max_len), word(0, vocab - 1);
    std::string s;
    const auto n = len(rng);
    for (std::size_t i = 0; i < n; ++i) s += "t" + std::to_string(word(rng)) + " ";
    return s;
}

Outcome bm25_oracle() {
    std::mt19937_64 rng(404);
    double worst = 0.0;
    std::size_t scores = 0;
    for (std::size_t corpus = 0; corpus < kBm25Corpora; ++corpus) {
        const std::size_t docs = 5 + rng() % 60, vocab = 10 + rng() % 80;
        std::vector<std::string> texts;
        for (std::size_t d = 0; d < docs; ++d) texts.push_back(random_text(rng, 1, 60, vocab));
        const auto kb = kb_from_texts(texts);
        const auto idx = retrieval::LexicalIndex::build(kb);
        std::vector<oracle::Tokens> toks;
        for (const auto& t : texts) toks.push_back(text::tokenize(t));
        for (std::size_t q = 0; q < kBm25Queries; ++q) {
            const auto query = text::tokenize(random_text(rng, 1, 8, vocab + 10));
            for (std::size_t d = 0; d < docs; ++d) {
                worst = std::max(worst, std::abs(retrieval::bm25_score(query, d, idx) - oracle::bm25(toks, query, d)));
                ++scores;
            }
        }
    }

    // Swapping one other token of a document for a query term raises tf at fixed length.
    std::size_t applied = 0, violations = 0;
    while (applied < kBm25Perturbations) {
        std::vector<std::string> texts;
        const std::size_t docs = 3 + rng() % 30, vocab = 5 + rng() % 30;
        for (std::size_t d = 0; d < docs; ++d) texts.push_back(random_text(rng, 2, 40, vocab));
        const std::size_t d = rng() % docs;
        auto toks = text::tokenize(texts[d]);
        const std::string term = toks[rng() % toks.size()];
        std::vector<std::size_t> others;
        for (std::size_t i = 0; i < toks.size(); ++i) {
            if (toks[i] != term) others.push_back(i);
        }
        if (others.empty()) continue;
        const std::vector<std::string> query{term};
        const double before = retrieval::bm25_score(query, d, retrieval::LexicalIndex::build(kb_from_texts(texts)));
        toks[others[rng() % others.size()]] = term;
        texts[d] = text::join(toks, " ");
        const double after = retrieval::bm25_score(query, d, retrieval::LexicalIndex::build(kb_from_texts(texts)));
        violations += after < before;
        ++applied;
    }
    return {worst <= kBm25Tol && violations == 0,
            fmt("%zu corpora x %zu queries (%zu scores), max |engine - oracle| %.3g (<= %.0e); "
                "%zu/%zu tf perturbations monotone",
                kBm25Corpora, kBm25Queries, scores, worst, kBm25Tol, applied - violations, applied)};
}

std::vector<std::pair<std::string, std::set<std::string>>> fixture_queries() {
    std::ifstream in(kFixtures / "queries.json");
    const auto doc = nlohmann::json::parse(in);
    std::vector<std::pair<std::string, std::set<std::string>>> out;
    for (const auto& q : doc) {
        out.emplace_back(q.at("query").get<std::string>(), q.at("relevant").get<std::set<std::string>>());
    }
    return out;
}

// Chunks of 300 to 500 tokens drawn from the fixture vocabulary at its corpus frequencies.
knowledge::KnowledgeBase large_kb(const knowledge::KnowledgeBase& fixture, std::size_t n) {
    std::vector<std::string> pool;
    for (const auto& c : fixture.chunks()) {
        const auto t = text::tokenize(c.text);
        pool.insert(pool.end(), t.begin(), t.end());
    }
    std::mt19937_64 rng(5000);
    std::vector<std::string> texts;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t len = 300 + rng() % 201;
        std::string s;
        for (std::size_t j = 0; j < len; ++j) s += pool[rng() % pool.size()] + (j % 17 == 16 ? ". " : " ");
        texts.push_back(std::move(s));
    }
    return kb_from_texts(texts);
}

Outcome retrieval_correctness() {
    const auto kb = knowledge::ingest_directory(kFixtures / "kb_docs", {}, "fixture");
    const retrieval::HashEmbedder embedder(768, 0);
    const retrieval::JaccardReranker reranker;
    const auto thesaurus = retrieval::ExpansionThesaurus::load(kFixtures / "thesaurus.json");
    const retrieval::Retriever retriever(kb, embedder, reranker, thesaurus);
    const auto queries = fixture_queries();

    std::size_t oracle_matches = 0, metric_matches = 0;
    std::vector<evalkit::QueryJudgment> judgments;
    std::size_t total_hits = 0;
    double hand_p = 0.0, hand_r = 0.0, hand_mrr = 0.0;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        const auto& [query, relevant] = queries[i];
        const auto res = retriever.retrieve(query, 5);
        std::vector<std::string> got;
        for (const auto& c : res.ranked) got.push_back(c.chunk_id);
        const auto want = oracle::retrieve_top_k(kb, embedder, thesaurus.entries(), query, 5);
        oracle_matches += got == want;

        // Hand tally over the oracle ranking: hits and rank of the first relevant chunk.
        std::size_t hits = 0, first = 0;
        for (std::size_t r = 0; r < want.size(); ++r) {
            if (relevant.count(want[r])) {
                ++hits;
                if (first == 0) first = r + 1;
            }
        }
        total_hits += hits;
        const double p = static_cast<double>(hits) / 5.0;
        const double rec = static_cast<double>(hits) / static_cast<double>(relevant.size());
        const double rr = first ? 1.0 / static_cast<double>(first) : 0.0;
        hand_p += p;
        hand_r += rec;
        hand_mrr += rr;
        evalkit::QueryJudgment j{"q" + std::to_string(i), relevant, got};
        const std::vector<evalkit::QueryJudgment> one{j};
        const auto m = evalkit::retrieval_metrics(one, 5);
        metric_matches += m.precision_at_k == p && m.recall_at_k == rec && m.mrr == rr;
        judgments.push_back(std::move(j));
    }
    const auto agg = evalkit::retrieval_metrics(judgments, 5);
    const double n = static_cast<double>(queries.size());
    const bool agg_match = agg.precision_at_k == hand_p / n && agg.recall_at_k == hand_r / n && agg.mrr == hand_mrr / n;

    const auto big = large_kb(kb, kLatencyChunks);
    const auto build_start = Clock::now();
    const retrieval::Retriever big_retriever(big, embedder, reranker, thesaurus);
    const double build_s = seconds_since(build_start);
    double worst_ms = 0.0;
    for (const auto& [query, relevant] : queries) {
        const auto t = Clock::now();
        (void)big_retriever.retrieve(query, 5);
        worst_ms = std::max(worst_ms, 1000.0 * seconds_since(t));
    }

    const bool pass = kb.size() == kFixtureChunks && queries.size() == kFixtureQueries &&
                      oracle_matches == queries.size() && metric_matches == queries.size() && agg_match &&
                      worst_ms <= kLatencyBudgetMs;
    return {pass, fmt("%zu-chunk KB: top-5 equals oracle on %zu/%zu queries; per-query P@5/R@5/RR equal hand tally "
                      "on %zu/%zu, aggregate %s (P@5 %.4f, R@5 %.4f, MRR %.4f, %zu hits); "
                      "%zu chunks: max latency %.1f ms (<= %.0f ms), index build %.1f s",
                      kb.size(), oracle_matches, queries.size(), metric_matches, queries.size(),
                      agg_match ? "equal" : "DIFFERS", agg.precision_at_k, agg.recall_at_k, agg.mrr, total_hits,
                      big.size(), worst_ms, kLatencyBudgetMs, build_s)};
}

oracle::Tokens random_tokens(std::mt19937_64& rng, std::size_t max_len, std::size_t vocab) {
    oracle::Tokens t(1 + rng() % max_len);
    for (auto& w : t) w = "w" + std::to_string(rng() % vocab);
    return t;
}

Outcome metric_oracles() {
    std::mt19937_64 rng(606);
    std::map<std::string, double> worst;
    std::map<std::string, std::size_t> cases;
    const auto record = [&](const std::string& name, double got, double want) {
        worst[name] = std::max(worst[name], std::abs(got - want));
    };
    for (std::size_t i = 0; i < kMetricCases; ++i) {
        const auto c = random_tokens(rng, 30, 8), r = random_tokens(rng, 30, 8);
        const auto r1 = evalkit::rouge_n(c, r, 1), r2 = evalkit::rouge_n(c, r, 2);
        const auto rl = evalkit::rouge_l(c, r);
        const auto o1 = oracle::rouge_n(c, r, 1), o2 = oracle::rouge_n(c, r, 2), ol = oracle::rouge_l(c, r);
        for (auto [name, got, want] : {std::tuple{"ROUGE-1", r1, o1}, {"ROUGE-2", r2, o2}, {"ROUGE-L", rl, ol}}) {
            record(name, got.precision, want.p);
            record(name, got.recall, want.r);
            record(name, got.f1, want.f);
            ++cases[name];
        }
        record("BLEU", evalkit::bleu(c, r), oracle::bleu(c, r));
        ++cases["BLEU"];
    }
    for (std::size_t i = 0; i < kMetricCases; ++i) {
        evalkit::QueryJudgment j;
        j.query_id = std::to_string(i);
        const std::size_t nrel = 1 + rng() % 6;
        while (j.relevant.size() < nrel) j.relevant.insert("c" + std::to_string(rng() % 15));
        std::set<std::string> used;
        const std::size_t nrank = rng() % 6;
        while (j.ranked.size() < nrank) {
            auto id = "c" + std::to_string(rng() % 15);
            if (used.insert(id).second) j.ranked.push_back(id);
        }
        const std::vector<evalkit::QueryJudgment> js{j};
        const auto m = evalkit::retrieval_metrics(js, 5);
        record("P@k", m.precision_at_k, oracle::precision_at_k(j.ranked, j.relevant, 5));
        record("R@k", m.recall_at_k, oracle::recall_at_k(j.ranked, j.relevant, 5));
        record("MRR", m.mrr, oracle::reciprocal_rank(j.ranked, j.relevant));
        ++cases["P@k"];
        ++cases["R@k"];
        ++cases["MRR"];
    }
    std::uniform_int_distribution<int> diff(-4, 4);
    while (cases["Wilcoxon"] < kMetricCases) {
        const std::size_t n = 1 + rng() % 12;
        std::vector<double> a(n), b(n);
        for (std::size_t j = 0; j < n; ++j) {
            a[j] = diff(rng);
            b[j] = diff(rng);
        }
        if (a == b) continue;
        const auto got = evalkit::wilcoxon_signed_rank(a, b);
        const auto want = oracle::wilcoxon_enumerate(a, b);
        record("Wilcoxon", got.w_plus, want.w_plus);
        record("Wilcoxon", got.w_minus, want.w_minus);
        record("Wilcoxon", got.p_value, want.p);
        ++cases["Wilcoxon"];
    }
    bool pass = true;
    std::string detail;
    for (const auto& [name, err] : worst) {
        pass = pass && err <= kMetricTol && cases[name] >= 50;
        detail += fmt("%s%s %.2g/%zu", detail.empty() ? "" : ", ", name.c_str(), err, cases[name]);
    }
    return {pass, "max |engine - oracle| / cases: " + detail + fmt(" (<= %.0e)", kMetricTol)};
}

Outcome tier_boundaries() {
    using ensemble::ConfidenceTier;
    const std::vector<std::pair<double, ConfidenceTier>> cases{
        {0.95 + kTierEps, ConfidenceTier::VeryHigh}, {0.95, ConfidenceTier::VeryHigh},
        {0.95 - kTierEps, ConfidenceTier::High},     {0.70 + kTierEps, ConfidenceTier::High},
        {0.70, ConfidenceTier::High},                {0.70 - kTierEps, ConfidenceTier::Medium},
        {0.50 + kTierEps, ConfidenceTier::Medium},   {0.50, ConfidenceTier::Medium},
        {0.50 - kTierEps, ConfidenceTier::Low},      {1.0, ConfidenceTier::VeryHigh},
        {0.0, ConfidenceTier::Low}};
    std::size_t ok = 0;
    std::string misses;
    for (const auto& [c, want] : cases) {
        const auto got = ensemble::assign_tier(c);
        if (got == want) {
            ++ok;
        } else {
            misses += fmt(" %.10f->%s", c, std::string(ensemble::to_string(got)).c_str());
        }
    }
    return {ok == cases.size(), fmt("%zu/%zu boundary values and +-%.0e neighbours map exactly%s", ok, cases.size(),
                                    kTierEps, misses.c_str())};
}

Outcome rag_direction() {
    pipeline::PipelineConfig config;
    config.seed = 0;
    const pipeline::Pipeline p(config, scenario::components(std::make_shared<promptgen::ChunkCopyClient>()));
    const auto flows = scenario::flows(kRagPerClass, 42);
    const auto outcomes = p.run(flows);
    std::vector<double> rag, vanilla;
    std::size_t wins = 0;
    for (const auto& o : outcomes) {
        const auto* r = o.report(promptgen::PromptMode::Rag);
        const auto* v = o.report(promptgen::PromptMode::Vanilla);
        if (!r || !v || !r->scores || !v->scores) continue;
        rag.push_back(r->scores->rouge.rouge1.f1);
        vanilla.push_back(v->scores->rouge.rouge1.f1);
        wins += rag.back() > vanilla.back();
    }
    const std::size_t pairs = rag.size();
    const double share = pairs ? static_cast<double>(wins) / static_cast<double>(pairs) : 0.0;
    double pv = 1.0;
    std::string test = "n/a";
    if (pairs > 0 && rag != vanilla) {
        const auto w = evalkit::wilcoxon_signed_rank(rag, vanilla);
        pv = w.p_value;
        test = w.exact ? "exact" : "normal approximation";
    }
    double mr = 0.0, mv = 0.0;
    for (std::size_t i = 0; i < pairs; ++i) {
        mr += rag[i] / static_cast<double>(pairs);
        mv += vanilla[i] / static_cast<double>(pairs);
    }
    const bool pass = pairs == kRagPerClass * kNumClasses && share >= kRagWinShare && pv < kRagAlpha;
    return {pass, fmt("%zu/%zu pairs with rag ROUGE-1 > vanilla (%.1f%%, >= %.0f%%), mean %.4f vs %.4f, "
                      "Wilcoxon p %.3g (%s, < %.2f)",
                      wins, pairs, 100.0 * share, 100.0 * kRagWinShare, mr, mv, pv, test.c_str(), kRagAlpha)};
}

Outcome chunking_contract() {
    knowledge::ChunkingOptions o;
    o.chunk_size = kChunkSize;
    o.overlap = kChunkOverlap;
    o.snap_to_sentences = false;
    std::size_t docs = 0, exact = 0, pairs = 0, pairs_ok = 0, multi = 0;
    for (const char* sub : {"kb_docs", "long_docs"}) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(kFixtures / sub)) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            const auto doc = knowledge::SourceDocument::load(f);
            const auto chunks = knowledge::chunk_document(doc, o);
            std::vector<std::string> rebuilt;
            std::vector<std::vector<std::string>> toks;
            for (const auto& c : chunks) toks.push_back(text::tokenize(c.text));
            for (std::size_t i = 0; i < toks.size(); ++i) {
                rebuilt.insert(rebuilt.end(), toks[i].begin() + (i == 0 ? 0 : static_cast<std::ptrdiff_t>(kChunkOverlap)),
                               toks[i].end());
            }
            ++docs;
            exact += rebuilt == text::tokenize(doc.body);
            multi += chunks.size() > 1;
            for (std::size_t i = 1; i < chunks.size(); ++i) {
                ++pairs;
                const auto& prev = toks[i - 1];
                const auto& next = toks[i];
                const bool tokens_shared =
                    prev.size() >= kChunkOverlap && next.size() >= kChunkOverlap &&
                    std::equal(prev.end() - static_cast<std::ptrdiff_t>(kChunkOverlap), prev.end(), next.begin());
                const bool spans_shared = chunks[i - 1].token_span.second - chunks[i].token_span.first == kChunkOverlap;
                pairs_ok += tokens_shared && spans_shared;
            }
        }
    }
    return {docs > 0 && exact == docs && pairs > 0 && pairs_ok == pairs,
            fmt("%zu/%zu documents reconstructed exactly (%zu multi-chunk); %zu/%zu adjacent pairs share exactly %zu "
                "tokens",
                exact, docs, multi, pairs_ok, pairs, kChunkOverlap)};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

Outcome determinism() {
    scenario::TempDir dir("determinism");
    const auto doc = scenario::write_artifacts(dir.path());
    const auto flows = scenario::flows(4, 77);
    std::array<std::string, 2> sidecars;
    for (std::size_t run = 0; run < 2; ++run) {
        const auto config = pipeline::PipelineConfig::from_json(doc, dir.path());
        const pipeline::Pipeline p(config, pipeline::Components::load(config));
        const auto out = dir.path() / ("run" + std::to_string(run));
        p.run(flows, out);
        sidecars[run] = slurp(out / "outcomes.jsonl");
    }
    const std::size_t lines = static_cast<std::size_t>(std::count(sidecars[0].begin(), sidecars[0].end(), '\n'));
    const bool same = !sidecars[0].empty() && sidecars[0] == sidecars[1];
    return {same && lines == flows.size(),
            fmt("two runs over %zu flows: sidecars %s (%zu bytes, %zu records)", flows.size(),
                same ? "bitwise identical" : "DIFFER", sidecars[0].size(), lines)};
}

struct Criterion {
    const char* name;
    std::function<Outcome()> run;
};

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {"gradient correctness", gradient_check},
        {"balancing ablation trend", ablation_trend},
        {"desk-scale classification", desk_classification},
        {"BM25 oracle equivalence", bm25_oracle},
        {"retrieval pipeline correctness", retrieval_correctness},
        {"metric oracle equivalence", metric_oracles},
        {"tier mapping exactness", tier_boundaries},
        {"rag vs vanilla direction", rag_direction},
        {"chunking contract", chunking_contract},
        {"determinism", determinism},
    };
    std::size_t failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].name, o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
