#pragma once

#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "idsrag/promptgen.hpp"
#include "idsrag/retrieval.hpp"

namespace idsrag::evalkit {

struct MetricScore {
    std::string name;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double scalar = 0.0;  // f1 for P/R metrics, the score itself for BLEU

    nlohmann::json to_json() const;
};

struct RougeScores {
    MetricScore rouge1;
    MetricScore rouge2;
    MetricScore rouge_l;
};

// Clipped n-gram overlap. A side with no n-grams yields 0 for its ratio.
MetricScore rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference, std::size_t n);
// Longest common subsequence over tokens.
MetricScore rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference);
// Throws on an empty reference; an empty candidate scores all zeros.
RougeScores rouge(std::span<const std::string> candidate, std::span<const std::string> reference);

// Modified n-gram precisions up to 4-grams, add-one smoothing for orders >= 2,
// geometric mean, times exp(1 - r/c) when c < r. 0 when the candidate is empty
// or shares no unigram with the reference.
double bleu(std::span<const std::string> candidate, std::span<const std::string> reference);

// Greedy matching over a candidate x reference similarity matrix, cosines
// floored at 0. Either side empty yields zeros.
MetricScore greedy_f1_from_similarity(const std::vector<std::vector<double>>& similarity);

// Embeds every token with `embedder` and applies greedy matching.
MetricScore greedy_embedding_f1(std::span<const std::string> candidate, std::span<const std::string> reference,
                                const retrieval::EmbeddingProvider& embedder);

struct QueryJudgment {
    std::string query_id;
    std::set<std::string> relevant;
    std::vector<std::string> ranked;  // at most k
};

struct RetrievalMetrics {
    double precision_at_k = 0.0;
    double recall_at_k = 0.0;
    double mrr = 0.0;
    double success_rate = 0.0;
    std::size_t queries = 0;

    nlohmann::json to_json() const;
};

// 1 / rank of the first relevant item, 0 when none is relevant.
double reciprocal_rank(const QueryJudgment& judgment);

RetrievalMetrics retrieval_metrics(std::span<const QueryJudgment> judgments, std::size_t k = 5);

struct CitationStats {
    double nist_rate = 0.0;
    double mitre_rate = 0.0;
    double mean_citations = 0.0;

    nlohmann::json to_json() const;
};

bool is_nist_citation(std::string_view citation);
bool is_mitre_citation(std::string_view citation);

CitationStats citation_stats(std::span<const promptgen::ReportSections> reports);

struct WilcoxonResult {
    double statistic = 0.0;  // min(W+, W-)
    double w_plus = 0.0;
    double w_minus = 0.0;
    double p_value = 1.0;  // two-sided
    std::size_t n_effective = 0;
    bool exact = false;

    nlohmann::json to_json() const;
};

inline constexpr std::size_t kExactWilcoxonLimit = 20;

// Zero differences dropped, tied magnitudes share average ranks. Exact null
// distribution up to 20 non-zero pairs, otherwise a normal approximation with
// tie and continuity corrections.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b);

struct ReportScores {
    RougeScores rouge;
    double bleu = 0.0;
    MetricScore greedy_f1;

    nlohmann::json to_json() const;
};

// Tokenizes both texts with the shared tokenizer.
ReportScores score_report(std::string_view candidate, std::string_view reference,
                          const retrieval::EmbeddingProvider& token_embedder);

// Row names of the summary table, in order.
inline constexpr std::array<const char*, 5> kSummaryRows = {
    "Greedy Embedding F1 (BERTScore stand-in)", "ROUGE-1", "ROUGE-2", "ROUGE-L", "BLEU"};

std::array<double, 5> summary_values(const ReportScores& scores);

}  // namespace idsrag::evalkit
