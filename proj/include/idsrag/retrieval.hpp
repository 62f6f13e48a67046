#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "idsrag/knowledge.hpp"

namespace idsrag::retrieval {

struct BM25Params {
    double k1 = 1.5;
    double b = 0.75;

    void validate() const;
};

// Inverted index over the knowledge base chunks (one BM25 "document" per chunk).
class LexicalIndex {
public:
    struct Posting {
        std::uint32_t doc;
        std::uint32_t tf;
    };

    static LexicalIndex build(const knowledge::KnowledgeBase& kb);

    std::size_t doc_count() const { return doc_lengths_.size(); }
    std::size_t doc_length(std::size_t doc) const { return doc_lengths_.at(doc); }
    double avgdl() const { return avgdl_; }
    std::size_t doc_freq(std::string_view term) const;
    std::size_t term_frequency(std::string_view term, std::size_t doc) const;
    const std::vector<Posting>* postings(std::string_view term) const;
    std::size_t vocabulary_size() const { return postings_.size(); }

    // ln(((N - n + 0.5) / (n + 0.5)) + 1)
    double idf(std::string_view term) const;

    // Sum over query terms (repeats included); absent terms contribute 0.
    double score(std::span<const std::string> query_terms, std::size_t doc, const BM25Params& params = {}) const;

    // Highest scoring chunks that share at least one term with the query,
    // descending, ties by ascending chunk index.
    std::vector<std::pair<std::size_t, double>> top_n(std::span<const std::string> query_terms, std::size_t n,
                                                      const BM25Params& params = {}) const;

    bool operator==(const LexicalIndex& other) const;

private:
    std::unordered_map<std::string, std::vector<Posting>> postings_;
    std::vector<std::size_t> doc_lengths_;
    double avgdl_ = 0.0;
};

double bm25_score(std::span<const std::string> query_terms, std::size_t chunk, const LexicalIndex& index,
                  const BM25Params& params = {});

struct EmbeddingVector {
    std::vector<double> values;
    std::string provider_id;
};

double cosine_similarity(std::span<const double> a, std::span<const double> b);

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual EmbeddingVector embed(std::string_view text) const = 0;
    virtual std::size_t width() const = 0;
    virtual bool deterministic() const = 0;
    virtual bool thread_safe() const = 0;
    virtual std::string id() const = 0;
};

// Bag of tokens feature-hashed into `width` non-negative buckets, L2-normalized.
// With char_ngrams on, each token also contributes its character trigrams.
class HashEmbedder final : public EmbeddingProvider {
public:
    explicit HashEmbedder(std::size_t width = 768, std::uint64_t seed = 0, bool char_ngrams = false);
    EmbeddingVector embed(std::string_view text) const override;
    std::size_t width() const override { return width_; }
    bool deterministic() const override { return true; }
    bool thread_safe() const override { return true; }
    std::string id() const override;

private:
    std::size_t width_;
    std::uint64_t seed_;
    bool char_ngrams_;
};

// Serializes calls into a provider that is not safe for concurrent use.
class SerializedEmbeddingProvider final : public EmbeddingProvider {
public:
    explicit SerializedEmbeddingProvider(EmbeddingProvider& inner) : inner_(inner) {}
    EmbeddingVector embed(std::string_view text) const override;
    std::size_t width() const override { return inner_.width(); }
    bool deterministic() const override { return inner_.deterministic(); }
    bool thread_safe() const override { return true; }
    std::string id() const override { return inner_.id(); }

private:
    EmbeddingProvider& inner_;
    mutable std::mutex mutex_;
};

class VectorIndex {
public:
    virtual ~VectorIndex() = default;
    virtual std::size_t size() const = 0;
    // Up to n (chunk index, cosine) pairs, descending, ties by ascending index.
    virtual std::vector<std::pair<std::size_t, double>> search(std::span<const double> query, std::size_t n) const = 0;
    virtual double similarity(std::span<const double> query, std::size_t chunk) const = 0;
};

// Exact cosine scan over unit-normalized rows.
class FlatCosineIndex final : public VectorIndex {
public:
    FlatCosineIndex(std::size_t width, std::vector<EmbeddingVector> vectors);
    std::size_t size() const override { return norms_.size(); }
    std::vector<std::pair<std::size_t, double>> search(std::span<const double> query, std::size_t n) const override;
    double similarity(std::span<const double> query, std::size_t chunk) const override;
    const std::vector<double>& data() const { return data_; }

private:
    std::size_t width_;
    std::vector<double> data_;  // row-major, rows normalized (zero rows stay zero)
    std::vector<double> norms_;
};

class RerankScorer {
public:
    virtual ~RerankScorer() = default;
    // Relevance in [0, 1].
    virtual double score(std::string_view query, std::string_view chunk_text) const = 0;
    virtual bool thread_safe() const = 0;
};

// |A ∩ B| / |A ∪ B| over token sets.
class JaccardReranker final : public RerankScorer {
public:
    double score(std::string_view query, std::string_view chunk_text) const override;
    bool thread_safe() const override { return true; }
};

class SerializedRerankScorer final : public RerankScorer {
public:
    explicit SerializedRerankScorer(RerankScorer& inner) : inner_(inner) {}
    double score(std::string_view query, std::string_view chunk_text) const override;
    bool thread_safe() const override { return true; }

private:
    RerankScorer& inner_;
    mutable std::mutex mutex_;
};

class ExpansionThesaurus {
public:
    ExpansionThesaurus() = default;
    // Keys and synonyms are lowercased; a key may span several tokens.
    explicit ExpansionThesaurus(std::map<std::string, std::vector<std::string>> entries);

    static ExpansionThesaurus cybersecurity_default();
    static ExpansionThesaurus load(const std::filesystem::path& path);

    const std::map<std::string, std::vector<std::string>>& entries() const { return entries_; }

private:
    std::map<std::string, std::vector<std::string>> entries_;
};

// Original text followed by the synonyms of every matched key, each appended once.
std::string expand_query(std::string_view query, const ExpansionThesaurus& thesaurus);

inline constexpr double kSemanticWeight = 0.60;
inline constexpr double kLexicalWeight = 0.40;

struct FusionCandidate {
    std::size_t chunk = 0;
    std::string chunk_id;
    double bm25 = 0.0;
    double cosine = 0.0;
};

struct ScoredChunk {
    std::size_t chunk = 0;
    std::string chunk_id;
    double bm25_raw = 0.0;
    double bm25_norm = 0.0;
    double cosine = 0.0;
    double sem_sim = 0.0;  // (cosine + 1) / 2
    double fused = 0.0;
    std::optional<double> rerank;
};

// Min-max normalizes bm25 over the candidates (a zero range maps to 1.0),
// maps cosine to [0, 1] and fuses 0.60 * sem + 0.40 * lex. Sorted by fused
// descending, ties by chunk_id.
std::vector<ScoredChunk> fuse_scores(std::span<const FusionCandidate> candidates);

struct RetrievalOptions {
    std::size_t k = 5;
    std::size_t candidate_depth = 30;  // per-stage depth
    std::size_t rerank_depth = 30;     // fused candidates sent to the reranker
    double rerank_threshold = 0.5;
    std::size_t min_confident = 3;
    std::vector<std::string> fallback_chunk_ids;
    BM25Params bm25;
};

struct RetrievalResult {
    std::string query;
    std::string expanded_query;
    std::vector<ScoredChunk> ranked;  // at most k, rerank descending
    bool fallback_used = false;
    std::vector<std::size_t> fallback_chunks;
    std::size_t candidate_count = 0;
};

struct RetrievalIndexes {
    LexicalIndex lexical;
    std::unique_ptr<VectorIndex> vectors;
    std::string provider_id;
};

RetrievalIndexes build_indexes(const knowledge::KnowledgeBase& kb, const EmbeddingProvider& provider);

// Expand, BM25 top-n, vector top-n, dedup union, fuse, keep the best
// rerank_depth, rerank with the original query, keep the top k; attach the
// fallback chunk set when fewer than min_confident results clear the threshold.
class Retriever {
public:
    Retriever(const knowledge::KnowledgeBase& kb, const EmbeddingProvider& provider, const RerankScorer& reranker,
              ExpansionThesaurus thesaurus, RetrievalOptions options = {});

    RetrievalResult retrieve(std::string_view query) const;
    RetrievalResult retrieve(std::string_view query, std::size_t k) const;

    const knowledge::KnowledgeBase& kb() const { return kb_; }
    const RetrievalIndexes& indexes() const { return indexes_; }
    const RetrievalOptions& options() const { return options_; }

private:
    const knowledge::KnowledgeBase& kb_;
    const EmbeddingProvider& provider_;
    const RerankScorer& reranker_;
    ExpansionThesaurus thesaurus_;
    RetrievalOptions options_;
    RetrievalIndexes indexes_;
    std::vector<std::size_t> fallback_;
};

}  // namespace idsrag::retrieval
