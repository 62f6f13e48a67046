#include "idsrag/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <Eigen/Dense>

#include "idsrag/text.hpp"

namespace idsrag::evalkit {

using nlohmann::json;

namespace {

MetricScore make_pr(std::string name, double matches, double cand_total, double ref_total) {
    MetricScore m;
    m.name = std::move(name);
    m.precision = cand_total > 0 ? matches / cand_total : 0.0;
    m.recall = ref_total > 0 ? matches / ref_total : 0.0;
    m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    m.scalar = m.f1;
    return m;
}

std::map<std::vector<std::string>, std::size_t> ngram_counts(std::span<const std::string> tokens, std::size_t n) {
    std::map<std::vector<std::string>, std::size_t> out;
    if (tokens.size() < n) return out;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) ++out[{tokens.begin() + i, tokens.begin() + i + n}];
    return out;
}

std::size_t clipped_matches(const std::map<std::vector<std::string>, std::size_t>& cand,
                            const std::map<std::vector<std::string>, std::size_t>& ref) {
    std::size_t m = 0;
    for (const auto& [g, c] : cand) {
        if (auto it = ref.find(g); it != ref.end()) m += std::min(c, it->second);
    }
    return m;
}

std::size_t ngram_total(std::size_t len, std::size_t n) { return len >= n ? len - n + 1 : 0; }

}  // namespace

nlohmann::json MetricScore::to_json() const {
    return {{"name", name}, {"precision", precision}, {"recall", recall}, {"f1", f1}, {"scalar", scalar}};
}

MetricScore rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference, std::size_t n) {
    if (n == 0) throw Error("rouge_n: n must be positive");
    const auto m = clipped_matches(ngram_counts(candidate, n), ngram_counts(reference, n));
    return make_pr("ROUGE-" + std::to_string(n), static_cast<double>(m),
                   static_cast<double>(ngram_total(candidate.size(), n)),
                   static_cast<double>(ngram_total(reference.size(), n)));
}

MetricScore rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference) {
    // Two-row LCS table.
    std::vector<std::size_t> prev(reference.size() + 1, 0), cur(reference.size() + 1, 0);
    for (std::size_t i = 1; i <= candidate.size(); ++i) {
        for (std::size_t j = 1; j <= reference.size(); ++j) {
            cur[j] = candidate[i - 1] == reference[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return make_pr("ROUGE-L", static_cast<double>(prev[reference.size()]), static_cast<double>(candidate.size()),
                   static_cast<double>(reference.size()));
}

RougeScores rouge(std::span<const std::string> candidate, std::span<const std::string> reference) {
    if (reference.empty()) throw Error("rouge: empty reference");
    return {rouge_n(candidate, reference, 1), rouge_n(candidate, reference, 2), rouge_l(candidate, reference)};
}

double bleu(std::span<const std::string> candidate, std::span<const std::string> reference) {
    const std::size_t c = candidate.size();
    const std::size_t r = reference.size();
    if (c == 0) return 0.0;
    double log_sum = 0.0;
    for (std::size_t n = 1; n <= 4; ++n) {
        const double m = static_cast<double>(clipped_matches(ngram_counts(candidate, n), ngram_counts(reference, n)));
        const double total = static_cast<double>(ngram_total(c, n));
        const double p = n == 1 ? m / total : (m + 1.0) / (total + 1.0);
        if (p == 0.0) return 0.0;
        log_sum += std::log(p);
    }
    const double bp = c < r ? std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c)) : 1.0;
    return bp * std::exp(log_sum / 4.0);
}

MetricScore greedy_f1_from_similarity(const std::vector<std::vector<double>>& sim) {
    MetricScore m;
    m.name = "greedy-embedding-f1";
    const std::size_t rows = sim.size();
    const std::size_t cols = rows ? sim.front().size() : 0;
    if (rows == 0 || cols == 0) return m;
    std::vector<double> col_best(cols, 0.0);
    double p = 0.0;
    for (const auto& row : sim) {
        if (row.size() != cols) throw Error("greedy_f1: ragged similarity matrix");
        double best = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            const double s = std::max(0.0, row[j]);
            best = std::max(best, s);
            col_best[j] = std::max(col_best[j], s);
        }
        p += best;
    }
    m.precision = std::min(1.0, p / static_cast<double>(rows));
    m.recall = std::min(1.0, std::accumulate(col_best.begin(), col_best.end(), 0.0) / static_cast<double>(cols));
    m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    m.scalar = m.f1;
    return m;
}

MetricScore greedy_embedding_f1(std::span<const std::string> candidate, std::span<const std::string> reference,
                                const retrieval::EmbeddingProvider& embedder) {
    using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const auto width = static_cast<Eigen::Index>(embedder.width());
    std::map<std::string, Eigen::VectorXd> cache;
    const auto unit_rows = [&](std::span<const std::string> tokens) {
        Mat m(static_cast<Eigen::Index>(tokens.size()), width);
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            auto it = cache.find(tokens[i]);
            if (it == cache.end()) {
                const auto v = embedder.embed(tokens[i]).values;
                if (static_cast<Eigen::Index>(v.size()) != width) throw Error("greedy_f1: embedding width mismatch");
                Eigen::VectorXd e = Eigen::Map<const Eigen::VectorXd>(v.data(), width);
                const double norm = e.norm();
                if (norm > 0) e /= norm;
                it = cache.emplace(tokens[i], std::move(e)).first;
            }
            m.row(static_cast<Eigen::Index>(i)) = it->second.transpose();
        }
        return m;
    };
    const Mat c = unit_rows(candidate);
    const Mat r = unit_rows(reference);
    const Mat prod = c * r.transpose();
    std::vector<std::vector<double>> sim(candidate.size(), std::vector<double>(reference.size()));
    for (std::size_t i = 0; i < candidate.size(); ++i) {
        for (std::size_t j = 0; j < reference.size(); ++j) {
            sim[i][j] = candidate[i] == reference[j]
                            ? 1.0
                            : std::clamp(prod(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)), -1.0, 1.0);
        }
    }
    return greedy_f1_from_similarity(sim);
}

nlohmann::json RetrievalMetrics::to_json() const {
    return {{"precision_at_k", precision_at_k},
            {"recall_at_k", recall_at_k},
            {"mrr", mrr},
            {"success_rate", success_rate},
            {"queries", queries}};
}

double reciprocal_rank(const QueryJudgment& j) {
    for (std::size_t i = 0; i < j.ranked.size(); ++i) {
        if (j.relevant.count(j.ranked[i])) return 1.0 / static_cast<double>(i + 1);
    }
    return 0.0;
}

RetrievalMetrics retrieval_metrics(std::span<const QueryJudgment> judgments, std::size_t k) {
    if (judgments.empty()) throw Error("retrieval_metrics: no judgments");
    if (k == 0) throw Error("retrieval_metrics: k must be positive");
    RetrievalMetrics out;
    out.queries = judgments.size();
    for (const auto& j : judgments) {
        if (j.ranked.size() > k) throw Error("retrieval_metrics: query " + j.query_id + " returned more than k items");
        if (j.relevant.empty()) throw Error("retrieval_metrics: query " + j.query_id + " has no relevant items");
        std::size_t hits = 0;
        for (const auto& id : j.ranked) hits += j.relevant.count(id);
        out.precision_at_k += static_cast<double>(hits) / static_cast<double>(k);
        out.recall_at_k += static_cast<double>(hits) / static_cast<double>(j.relevant.size());
        out.mrr += reciprocal_rank(j);
        out.success_rate += hits > 0 ? 1.0 : 0.0;
    }
    const double n = static_cast<double>(judgments.size());
    out.precision_at_k /= n;
    out.recall_at_k /= n;
    out.mrr /= n;
    out.success_rate /= n;
    return out;
}

nlohmann::json CitationStats::to_json() const {
    return {{"nist_rate", nist_rate}, {"mitre_rate", mitre_rate}, {"mean_citations", mean_citations}};
}

bool is_nist_citation(std::string_view c) { return c.rfind("NIST SP 800-", 0) == 0; }
bool is_mitre_citation(std::string_view c) { return c.size() >= 5 && c[0] == 'T' && std::isdigit(static_cast<unsigned char>(c[1])); }

CitationStats citation_stats(std::span<const promptgen::ReportSections> reports) {
    if (reports.empty()) throw Error("citation_stats: no reports");
    CitationStats s;
    for (const auto& r : reports) {
        s.nist_rate += std::any_of(r.citations.begin(), r.citations.end(), [](const auto& c) { return is_nist_citation(c); });
        s.mitre_rate += std::any_of(r.citations.begin(), r.citations.end(), [](const auto& c) { return is_mitre_citation(c); });
        s.mean_citations += static_cast<double>(r.citations.size());
    }
    const double n = static_cast<double>(reports.size());
    s.nist_rate /= n;
    s.mitre_rate /= n;
    s.mean_citations /= n;
    return s;
}

nlohmann::json WilcoxonResult::to_json() const {
    return {{"statistic", statistic}, {"w_plus", w_plus},       {"w_minus", w_minus},
            {"p_value", p_value},     {"n_effective", n_effective}, {"exact", exact}};
}

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw Error("wilcoxon: paired samples differ in length");
    std::vector<double> d;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        if (!std::isfinite(diff)) throw Error("wilcoxon: non-finite difference");
        if (diff != 0.0) d.push_back(diff);
    }
    if (d.empty()) throw Error("wilcoxon: degenerate pairing (all differences are zero)");
    const std::size_t n = d.size();

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return std::abs(d[x]) < std::abs(d[y]); });
    // Ranks doubled so tied averages stay integral.
    std::vector<long> rank2(n);
    double tie_term = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
        const long avg2 = static_cast<long>(i + 1 + j + 1);  // 2 * mean of ranks i+1..j+1
        for (std::size_t t = i; t <= j; ++t) rank2[order[t]] = avg2;
        const double t = static_cast<double>(j - i + 1);
        tie_term += t * t * t - t;
        i = j + 1;
    }

    WilcoxonResult res;
    res.n_effective = n;
    long wp2 = 0, total2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
        total2 += rank2[i];
        if (d[i] > 0) wp2 += rank2[i];
    }
    res.w_plus = static_cast<double>(wp2) / 2.0;
    res.w_minus = static_cast<double>(total2 - wp2) / 2.0;
    res.statistic = std::min(res.w_plus, res.w_minus);
    const long w2 = std::min(wp2, total2 - wp2);

    if (n <= kExactWilcoxonLimit) {
        // Count sign patterns by achievable doubled W+ value.
        std::vector<double> ways(static_cast<std::size_t>(total2) + 1, 0.0);
        ways[0] = 1.0;
        long reach = 0;
        for (std::size_t i = 0; i < n; ++i) {
            for (long s = reach; s >= 0; --s) {
                if (ways[static_cast<std::size_t>(s)] != 0.0) ways[static_cast<std::size_t>(s + rank2[i])] += ways[static_cast<std::size_t>(s)];
            }
            reach += rank2[i];
        }
        double le = 0.0;
        for (long s = 0; s <= w2; ++s) le += ways[static_cast<std::size_t>(s)];
        res.p_value = std::min(1.0, 2.0 * le / std::ldexp(1.0, static_cast<int>(n)));
        res.exact = true;
    } else {
        const double nn = static_cast<double>(n);
        const double mean = nn * (nn + 1) / 4.0;
        const double var = nn * (nn + 1) * (2 * nn + 1) / 24.0 - tie_term / 48.0;
        if (var <= 0.0) {
            res.p_value = 1.0;
        } else {
            const double z = std::min(0.0, res.statistic - mean + 0.5) / std::sqrt(var);
            res.p_value = std::min(1.0, 2.0 * normal_cdf(z));
        }
    }
    return res;
}

nlohmann::json ReportScores::to_json() const {
    return {{"rouge1", rouge.rouge1.to_json()},
            {"rouge2", rouge.rouge2.to_json()},
            {"rougeL", rouge.rouge_l.to_json()},
            {"bleu", bleu},
            {"greedy_embedding_f1", greedy_f1.to_json()}};
}

ReportScores score_report(std::string_view candidate, std::string_view reference,
                          const retrieval::EmbeddingProvider& token_embedder) {
    const auto c = text::tokenize(candidate);
    const auto r = text::tokenize(reference);
    ReportScores s;
    s.rouge = rouge(c, r);
    s.bleu = bleu(c, r);
    s.greedy_f1 = greedy_embedding_f1(c, r, token_embedder);
    return s;
}

std::array<double, 5> summary_values(const ReportScores& s) {
    return {s.greedy_f1.f1, s.rouge.rouge1.f1, s.rouge.rouge2.f1, s.rouge.rouge_l.f1, s.bleu};
}

}  // namespace idsrag::evalkit
