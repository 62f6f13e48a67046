#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "idsrag/evalkit.hpp"
#include "idsrag/text.hpp"
#include "oracles.hpp"

using namespace idsrag;
using namespace idsrag::evalkit;

namespace {

using Tokens = std::vector<std::string>;

Tokens toks(std::string_view s) { return text::tokenize(s); }

Tokens random_tokens(std::mt19937_64& rng, std::size_t max_len, std::size_t vocab) {
    Tokens t(1 + rng() % max_len);
    for (auto& w : t) w = "w" + std::to_string(rng() % vocab);
    return t;
}

// One basis vector per distinct token.
class OneHotEmbedder final : public retrieval::EmbeddingProvider {
public:
    retrieval::EmbeddingVector embed(std::string_view text) const override {
        std::vector<double> v(64, 0.0);
        v[std::hash<std::string_view>{}(text) % 64] = 1.0;
        return {v, "onehot"};
    }
    std::size_t width() const override { return 64; }
    bool deterministic() const override { return true; }
    bool thread_safe() const override { return true; }
    std::string id() const override { return "onehot"; }
};

}  // namespace

TEST(Rouge, Examples) {
    const auto same = rouge(toks("the cat sat on the mat"), toks("the cat sat on the mat"));
    EXPECT_DOUBLE_EQ(same.rouge1.f1, 1.0);
    EXPECT_DOUBLE_EQ(same.rouge2.f1, 1.0);
    EXPECT_DOUBLE_EQ(same.rouge_l.f1, 1.0);
    const auto none = rouge(toks("alpha beta"), toks("gamma delta"));
    EXPECT_EQ(none.rouge1.f1, 0.0);
    EXPECT_EQ(none.rouge_l.f1, 0.0);
    const auto r = rouge(toks("the cat"), toks("the cat sat"));
    EXPECT_DOUBLE_EQ(r.rouge1.precision, 1.0);
    EXPECT_NEAR(r.rouge1.recall, 0.6667, 1e-4);
    EXPECT_NEAR(r.rouge1.f1, 0.8, 1e-12);
    const auto empty = rouge(Tokens{}, toks("a b"));
    EXPECT_EQ(empty.rouge1.f1, 0.0);
    EXPECT_EQ(empty.rouge_l.f1, 0.0);
    EXPECT_THROW(rouge(toks("a"), Tokens{}), Error);
}

TEST(Rouge, MatchesOracle) {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 300; ++i) {
        const auto c = random_tokens(rng, 30, 8), r = random_tokens(rng, 30, 8);
        for (std::size_t n : {1u, 2u}) {
            const auto got = rouge_n(c, r, n);
            const auto want = oracle::rouge_n(c, r, n);
            EXPECT_NEAR(got.precision, want.p, 1e-9);
            EXPECT_NEAR(got.recall, want.r, 1e-9);
            EXPECT_NEAR(got.f1, want.f, 1e-9);
        }
        const auto l = rouge_l(c, r);
        const auto ol = oracle::rouge_l(c, r);
        EXPECT_NEAR(l.precision, ol.p, 1e-9);
        EXPECT_NEAR(l.recall, ol.r, 1e-9);
        EXPECT_NEAR(l.f1, ol.f, 1e-9);
    }
}

TEST(Rouge, SwapSymmetryAndBounds) {
    std::mt19937_64 rng(2);
    for (int i = 0; i < 200; ++i) {
        const auto a = random_tokens(rng, 20, 6), b = random_tokens(rng, 20, 6);
        const auto x = rouge(a, b), y = rouge(b, a);
        for (auto [p, q] : {std::pair{x.rouge1, y.rouge1}, {x.rouge2, y.rouge2}, {x.rouge_l, y.rouge_l}}) {
            EXPECT_DOUBLE_EQ(p.precision, q.recall);
            EXPECT_DOUBLE_EQ(p.recall, q.precision);
            EXPECT_NEAR(p.f1, q.f1, 1e-15);
            EXPECT_GE(p.f1, 0.0);
            EXPECT_LE(p.f1, 1.0);
        }
    }
}

TEST(Bleu, Examples) {
    const auto t = toks("ingress filtering blocks spoofed source addresses at the edge");
    EXPECT_DOUBLE_EQ(bleu(t, t), 1.0);
    EXPECT_EQ(bleu(toks("alpha beta"), toks("gamma delta")), 0.0);
    EXPECT_EQ(bleu(Tokens{}, t), 0.0);
    const auto c = toks("the syn flood exhausts the backlog queue of the server");
    const auto r = toks("a syn flood exhausts the connection backlog of a server quickly");
    EXPECT_NEAR(bleu(c, r), oracle::bleu(c, r), 1e-9);
}

TEST(Bleu, MatchesOracle) {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 300; ++i) {
        const auto c = random_tokens(rng, 25, 6), r = random_tokens(rng, 25, 6);
        const double b = bleu(c, r);
        EXPECT_NEAR(b, oracle::bleu(c, r), 1e-9);
        EXPECT_GE(b, 0.0);
        EXPECT_LE(b, 1.0);
    }
}

TEST(Bleu, BoundedByUnigramPrecision) {
    std::mt19937_64 rng(4);
    for (int i = 0; i < 300; ++i) {
        const auto c = random_tokens(rng, 25, 10), r = random_tokens(rng, 25, 10);
        EXPECT_LE(bleu(c, r), rouge_n(c, r, 1).precision + 1e-12) << text::join(c, " ") << " | " << text::join(r, " ");
    }
}

TEST(Greedy, HandMatrix) {
    const std::vector<std::vector<double>> s{{0.9, 0.95, 0.3}, {0.2, 0.1, 0.4}, {-0.5, 0.6, 0.7}};
    const auto m = greedy_f1_from_similarity(s);
    const double p = (0.95 + 0.4 + 0.7) / 3.0, r = (0.9 + 0.95 + 0.7) / 3.0;
    EXPECT_NEAR(m.precision, p, 1e-15);
    EXPECT_NEAR(m.recall, r, 1e-15);
    EXPECT_NEAR(m.f1, 2 * p * r / (p + r), 1e-15);
    const std::vector<std::vector<double>> neg{{-0.4, -0.1}};
    EXPECT_EQ(greedy_f1_from_similarity(neg).f1, 0.0);
    EXPECT_EQ(greedy_f1_from_similarity({}).f1, 0.0);
}

TEST(Greedy, IdentityOrthogonalAndSwap) {
    retrieval::HashEmbedder emb(128, 2);
    const auto a = toks("rate limiting at the upstream provider");
    EXPECT_NEAR(greedy_embedding_f1(a, a, emb).f1, 1.0, 1e-12);
    OneHotEmbedder onehot;
    // Distinct buckets for these strings under the test hash are not guaranteed; pick tokens that differ.
    Tokens x{"alpha"}, y{"omega"};
    if (onehot.embed("alpha").values != onehot.embed("omega").values) {
        EXPECT_EQ(greedy_embedding_f1(x, y, onehot).f1, 0.0);
    }
    const auto b = toks("upstream scrubbing of volumetric floods");
    const auto ab = greedy_embedding_f1(a, b, emb), ba = greedy_embedding_f1(b, a, emb);
    EXPECT_NEAR(ab.precision, ba.recall, 1e-15);
    EXPECT_NEAR(ab.f1, ba.f1, 1e-15);
    EXPECT_EQ(greedy_embedding_f1(Tokens{}, a, emb).f1, 0.0);
}

TEST(RetrievalMetrics, Examples) {
    QueryJudgment j{"q", {"a", "b", "c", "d"}, {"a", "x", "b", "y", "c"}};
    const std::vector<QueryJudgment> one{j};
    const auto m = retrieval_metrics(one);
    EXPECT_DOUBLE_EQ(m.precision_at_k, 0.6);
    EXPECT_DOUBLE_EQ(m.recall_at_k, 0.75);
    EXPECT_DOUBLE_EQ(m.mrr, 1.0);
    EXPECT_DOUBLE_EQ(m.success_rate, 1.0);
    const QueryJudgment miss{"m", {"a"}, {"x", "y"}};
    EXPECT_EQ(reciprocal_rank(miss), 0.0);
    const std::vector<QueryJudgment> both{j, miss};
    const auto mm = retrieval_metrics(both);
    EXPECT_DOUBLE_EQ(mm.success_rate, 0.5);
    EXPECT_DOUBLE_EQ(mm.mrr, 0.5);
    EXPECT_THROW(retrieval_metrics(std::vector<QueryJudgment>{}), Error);
    const std::vector<QueryJudgment> too_long{{"l", {"a"}, {"1", "2", "3", "4", "5", "6"}}};
    EXPECT_THROW(retrieval_metrics(too_long), Error);
}

TEST(RetrievalMetrics, MatchesOracle) {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 200; ++i) {
        QueryJudgment j;
        j.query_id = std::to_string(i);
        const std::size_t nrel = 1 + rng() % 6;
        while (j.relevant.size() < nrel) j.relevant.insert("c" + std::to_string(rng() % 15));
        std::set<std::string> used;
        const std::size_t nrank = rng() % 6;
        while (j.ranked.size() < nrank) {
            auto c = "c" + std::to_string(rng() % 15);
            if (used.insert(c).second) j.ranked.push_back(c);
        }
        const std::vector<QueryJudgment> js{j};
        const auto m = retrieval_metrics(js, 5);
        EXPECT_NEAR(m.precision_at_k, oracle::precision_at_k(j.ranked, j.relevant, 5), 1e-12);
        EXPECT_NEAR(m.recall_at_k, oracle::recall_at_k(j.ranked, j.relevant, 5), 1e-12);
        EXPECT_NEAR(m.mrr, oracle::reciprocal_rank(j.ranked, j.relevant), 1e-12);
        if (!j.ranked.empty() && j.relevant.count(j.ranked[0])) EXPECT_EQ(m.mrr, 1.0);
    }
}

TEST(Citations, Stats) {
    const auto a = promptgen::make_sections({"Per NIST SP 800-61 and T1498.", "b", "c", "d", "e"});
    EXPECT_EQ(a.citations.size(), 2u);
    const auto one = std::vector<promptgen::ReportSections>{a};
    auto s = citation_stats(one);
    EXPECT_EQ(s.nist_rate, 1.0);
    EXPECT_EQ(s.mitre_rate, 1.0);
    EXPECT_EQ(s.mean_citations, 2.0);
    const auto none = promptgen::make_sections({"a", "b", "c", "d", "e"});
    const auto mixed = std::vector<promptgen::ReportSections>{a, none};
    s = citation_stats(mixed);
    EXPECT_EQ(s.nist_rate, 0.5);
    EXPECT_EQ(s.mean_citations, 1.0);
    const auto r2 = promptgen::make_sections({"T1498 T1499", "", "", "", ""});
    const auto r4 = promptgen::make_sections({"T1498 T1499 T1071 T1046", "", "", "", ""});
    const auto r6 = promptgen::make_sections({"T1498 T1499 T1071 T1046 NIST SP 800-53 NIST SP 800-94", "", "", "", ""});
    const auto three = std::vector<promptgen::ReportSections>{r2, r4, r6};
    EXPECT_DOUBLE_EQ(citation_stats(three).mean_citations, 4.0);
    EXPECT_THROW(citation_stats(std::vector<promptgen::ReportSections>{}), Error);
    EXPECT_TRUE(is_nist_citation("NIST SP 800-61"));
    EXPECT_TRUE(is_mitre_citation("T1498.001"));
    EXPECT_FALSE(is_mitre_citation("NIST SP 800-61"));
}

TEST(Wilcoxon, SixPositive) {
    const std::vector<double> a{2, 3, 4, 5, 6, 7}, b{1, 1, 1, 1, 1, 1};
    const auto w = wilcoxon_signed_rank(a, b);
    EXPECT_EQ(w.statistic, 0.0);
    EXPECT_TRUE(w.exact);
    EXPECT_NEAR(w.p_value, 0.03125, 1e-15);
}

TEST(Wilcoxon, AntisymmetricAndDegenerate) {
    const std::vector<double> a{1, 5, 2, 8}, b{5, 1, 8, 2};
    const std::vector<double> x{1, 5, 2, 8, 5, 1, 8, 2}, y{5, 1, 8, 2, 1, 5, 2, 8};
    const auto w = wilcoxon_signed_rank(x, y);
    EXPECT_EQ(w.w_plus, w.w_minus);
    EXPECT_DOUBLE_EQ(w.p_value, 1.0);
    EXPECT_THROW(wilcoxon_signed_rank(a, a), Error);
    EXPECT_THROW(wilcoxon_signed_rank(a, std::vector<double>{1.0}), Error);
    (void)b;
}

TEST(Wilcoxon, MatchesEnumerationOracle) {
    std::mt19937_64 rng(6);
    std::uniform_int_distribution<int> d(-4, 4);
    for (int i = 0; i < 200; ++i) {
        const std::size_t n = 1 + rng() % 12;
        std::vector<double> a(n), b(n);
        for (std::size_t j = 0; j < n; ++j) {
            a[j] = d(rng);
            b[j] = d(rng);
        }
        if (a == b) continue;
        const auto got = wilcoxon_signed_rank(a, b);
        const auto want = oracle::wilcoxon_enumerate(a, b);
        EXPECT_NEAR(got.w_plus, want.w_plus, 1e-9);
        EXPECT_NEAR(got.w_minus, want.w_minus, 1e-9);
        EXPECT_NEAR(got.p_value, want.p, 1e-9);
    }
}

TEST(Wilcoxon, NormalApproximationLargeN) {
    std::vector<double> a, b;
    for (int i = 0; i < 40; ++i) {
        a.push_back(1.0 + i * 0.01);
        b.push_back(i % 10 == 0 ? 2.0 : 0.5);
    }
    const auto w = wilcoxon_signed_rank(a, b);
    EXPECT_FALSE(w.exact);
    EXPECT_LT(w.p_value, 0.001);
    EXPECT_GT(w.p_value, 0.0);
}

TEST(Score, ReportAndSummaryRows) {
    retrieval::HashEmbedder emb(64, 0);
    const auto s = score_report("syn flood mitigation with syn cookies", "syn cookies mitigate a syn flood", emb);
    const auto v = summary_values(s);
    EXPECT_DOUBLE_EQ(v[0], s.greedy_f1.f1);
    EXPECT_DOUBLE_EQ(v[1], s.rouge.rouge1.f1);
    EXPECT_DOUBLE_EQ(v[4], s.bleu);
    for (double x : v) {
        EXPECT_GE(x, 0.0);
        EXPECT_LE(x, 1.0);
    }
}
