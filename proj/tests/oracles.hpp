#pragma once

// Brute-force reference implementations. They share no code with the library
// beyond the tokenizer and the provider interfaces.

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "idsrag/knowledge.hpp"
#include "idsrag/retrieval.hpp"

namespace oracle {

using Tokens = std::vector<std::string>;

struct PRF {
    double p = 0.0;
    double r = 0.0;
    double f = 0.0;
};

// Sum over query tokens (duplicates included) of the Okapi term weight,
// with df, N and avgdl recounted from `docs`.
double bm25(const std::vector<Tokens>& docs, const Tokens& query, std::size_t doc, double k1 = 1.5, double b = 0.75);

PRF rouge_n(const Tokens& cand, const Tokens& ref, std::size_t n);
std::size_t lcs_length(const Tokens& a, const Tokens& b);
PRF rouge_l(const Tokens& cand, const Tokens& ref);
double bleu(const Tokens& cand, const Tokens& ref);

double precision_at_k(const std::vector<std::string>& ranked, const std::set<std::string>& relevant, std::size_t k);
double recall_at_k(const std::vector<std::string>& ranked, const std::set<std::string>& relevant, std::size_t k);
double reciprocal_rank(const std::vector<std::string>& ranked, const std::set<std::string>& relevant);

struct Wilcoxon {
    double w_plus = 0.0;
    double w_minus = 0.0;
    double p = 1.0;
};

// Two-sided p over all 2^n sign patterns of the mid-ranks of |a - b|, zeros dropped.
Wilcoxon wilcoxon_enumerate(const std::vector<double>& a, const std::vector<double>& b);

// Central differences with step h.
std::vector<double> finite_difference(const std::function<double(const std::vector<double>&)>& f,
                                      std::vector<double> x, double h);

double jaccard(const std::string& a, const std::string& b);

// Scores every chunk and applies the engine's documented stage cut-offs.
std::vector<std::string> retrieve_top_k(const idsrag::knowledge::KnowledgeBase& kb,
                                        const idsrag::retrieval::EmbeddingProvider& embedder,
                                        const std::map<std::string, std::vector<std::string>>& thesaurus,
                                        const std::string& query, std::size_t k, std::size_t depth = 30);

}  // namespace oracle
