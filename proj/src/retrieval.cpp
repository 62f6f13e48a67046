#include "idsrag/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "idsrag/text.hpp"

namespace idsrag::retrieval {

void BM25Params::validate() const {
    if (!(k1 >= 0.0) || !std::isfinite(k1)) throw Error("bm25: k1 must be a finite non-negative number");
    if (!(b >= 0.0 && b <= 1.0)) throw Error("bm25: b must lie in [0, 1]");
}

LexicalIndex LexicalIndex::build(const knowledge::KnowledgeBase& kb) {
    LexicalIndex index;
    index.doc_lengths_.reserve(kb.size());
    std::size_t total = 0;
    for (std::size_t d = 0; d < kb.size(); ++d) {
        const auto tokens = text::tokenize(kb.at(d).text);
        index.doc_lengths_.push_back(tokens.size());
        total += tokens.size();
        std::unordered_map<std::string, std::uint32_t> tf;
        for (const auto& t : tokens) ++tf[t];
        for (auto& [term, count] : tf) {
            index.postings_[term].push_back({static_cast<std::uint32_t>(d), count});
        }
    }
    index.avgdl_ = kb.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(kb.size());
    return index;
}

const std::vector<LexicalIndex::Posting>* LexicalIndex::postings(std::string_view term) const {
    const auto it = postings_.find(std::string(term));
    return it == postings_.end() ? nullptr : &it->second;
}

std::size_t LexicalIndex::doc_freq(std::string_view term) const {
    const auto* p = postings(term);
    return p ? p->size() : 0;
}

std::size_t LexicalIndex::term_frequency(std::string_view term, std::size_t doc) const {
    const auto* p = postings(term);
    if (!p) return 0;
    const auto it = std::lower_bound(p->begin(), p->end(), doc,
                                     [](const Posting& a, std::size_t d) { return a.doc < d; });
    return it != p->end() && it->doc == doc ? it->tf : 0;
}

double LexicalIndex::idf(std::string_view term) const {
    const double n = static_cast<double>(doc_freq(term));
    const double N = static_cast<double>(doc_count());
    return std::log((N - n + 0.5) / (n + 0.5) + 1.0);
}

namespace {

double term_weight(double idf, double tf, double dl, double avgdl, const BM25Params& p) {
    if (tf <= 0.0) return 0.0;
    const double norm = avgdl > 0.0 ? dl / avgdl : 0.0;
    return idf * tf * (p.k1 + 1.0) / (tf + p.k1 * (1.0 - p.b + p.b * norm));
}

}  // namespace

double LexicalIndex::score(std::span<const std::string> query_terms, std::size_t doc,
                           const BM25Params& params) const {
    if (doc >= doc_count()) throw Error("bm25: chunk index out of range");
    const double dl = static_cast<double>(doc_lengths_[doc]);
    double s = 0.0;
    for (const auto& term : query_terms) {
        s += term_weight(idf(term), static_cast<double>(term_frequency(term, doc)), dl, avgdl_, params);
    }
    return s;
}

std::vector<std::pair<std::size_t, double>> LexicalIndex::top_n(std::span<const std::string> query_terms,
                                                                std::size_t n, const BM25Params& params) const {
    std::unordered_map<std::size_t, double> acc;
    for (const auto& term : query_terms) {
        const auto* p = postings(term);
        if (!p) continue;
        const double w = idf(term);
        for (const auto& post : *p) {
            acc[post.doc] += term_weight(w, post.tf, static_cast<double>(doc_lengths_[post.doc]), avgdl_, params);
        }
    }
    std::vector<std::pair<std::size_t, double>> out(acc.begin(), acc.end());
    const auto better = [](const auto& a, const auto& b) {
        return a.second > b.second || (a.second == b.second && a.first < b.first);
    };
    if (out.size() > n) {
        std::partial_sort(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(n), out.end(), better);
        out.resize(n);
    } else {
        std::sort(out.begin(), out.end(), better);
    }
    return out;
}

bool LexicalIndex::operator==(const LexicalIndex& other) const {
    if (doc_lengths_ != other.doc_lengths_ || avgdl_ != other.avgdl_ || postings_.size() != other.postings_.size()) {
        return false;
    }
    for (const auto& [term, list] : postings_) {
        const auto* o = other.postings(term);
        if (!o || o->size() != list.size()) return false;
        for (std::size_t i = 0; i < list.size(); ++i) {
            if (list[i].doc != (*o)[i].doc || list[i].tf != (*o)[i].tf) return false;
        }
    }
    return true;
}

double bm25_score(std::span<const std::string> query_terms, std::size_t chunk, const LexicalIndex& index,
                  const BM25Params& params) {
    return index.score(query_terms, chunk, params);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw Error("cosine_similarity: width mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

HashEmbedder::HashEmbedder(std::size_t width, std::uint64_t seed, bool char_ngrams)
    : width_(width), seed_(seed), char_ngrams_(char_ngrams) {
    if (width_ == 0) throw Error("HashEmbedder: width must be positive");
}

std::string HashEmbedder::id() const {
    return "hash-" + std::to_string(width_) + "-" + std::to_string(seed_) + (char_ngrams_ ? "-ngram" : "");
}

EmbeddingVector HashEmbedder::embed(std::string_view text) const {
    EmbeddingVector v;
    v.provider_id = id();
    v.values.assign(width_, 0.0);
    const std::uint64_t basis = fnv1a64(std::to_string(seed_));
    const auto add = [&](std::string_view feature, double weight) {
        v.values[fnv1a64(feature, basis) % width_] += weight;
    };
    for (const auto& tok : text::tokenize(text)) {
        add(tok, 1.0);
        if (char_ngrams_ && tok.size() > 3) {
            const std::string padded = "<" + tok + ">";
            for (std::size_t i = 0; i + 3 <= padded.size(); ++i) add("#" + padded.substr(i, 3), 0.5);
        }
    }
    double norm = 0.0;
    for (double x : v.values) norm += x * x;
    if (norm > 0.0) {
        norm = std::sqrt(norm);
        for (double& x : v.values) x /= norm;
    }
    return v;
}

EmbeddingVector SerializedEmbeddingProvider::embed(std::string_view text) const {
    std::lock_guard lock(mutex_);
    return inner_.embed(text);
}

FlatCosineIndex::FlatCosineIndex(std::size_t width, std::vector<EmbeddingVector> vectors) : width_(width) {
    data_.reserve(width * vectors.size());
    norms_.reserve(vectors.size());
    for (std::size_t i = 0; i < vectors.size(); ++i) {
        const auto& v = vectors[i].values;
        if (v.size() != width) {
            throw Error("vector index: row " + std::to_string(i) + " has width " + std::to_string(v.size()) +
                        ", expected " + std::to_string(width));
        }
        double norm = 0.0;
        for (double x : v) {
            if (!std::isfinite(x)) throw Error("vector index: row " + std::to_string(i) + " is not finite");
            norm += x * x;
        }
        norm = std::sqrt(norm);
        norms_.push_back(norm);
        for (double x : v) data_.push_back(norm > 0.0 ? x / norm : 0.0);
    }
}

double FlatCosineIndex::similarity(std::span<const double> query, std::size_t chunk) const {
    if (query.size() != width_) throw Error("vector index: query width mismatch");
    if (chunk >= size()) throw Error("vector index: chunk index out of range");
    double qn = 0.0;
    for (double x : query) qn += x * x;
    if (qn == 0.0 || norms_[chunk] == 0.0) return 0.0;
    const double* row = data_.data() + chunk * width_;
    double dot = 0.0;
    for (std::size_t j = 0; j < width_; ++j) dot += row[j] * query[j];
    return std::clamp(dot / std::sqrt(qn), -1.0, 1.0);
}

std::vector<std::pair<std::size_t, double>> FlatCosineIndex::search(std::span<const double> query,
                                                                    std::size_t n) const {
    if (query.size() != width_) throw Error("vector index: query width mismatch");
    double qn = 0.0;
    for (double x : query) qn += x * x;
    qn = std::sqrt(qn);
    std::vector<std::pair<std::size_t, double>> out(size());
    for (std::size_t i = 0; i < size(); ++i) {
        double c = 0.0;
        if (qn > 0.0 && norms_[i] > 0.0) {
            const double* row = data_.data() + i * width_;
            double dot = 0.0;
            for (std::size_t j = 0; j < width_; ++j) dot += row[j] * query[j];
            c = std::clamp(dot / qn, -1.0, 1.0);
        }
        out[i] = {i, c};
    }
    const auto better = [](const auto& a, const auto& b) {
        return a.second > b.second || (a.second == b.second && a.first < b.first);
    };
    if (out.size() > n) {
        std::partial_sort(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(n), out.end(), better);
        out.resize(n);
    } else {
        std::sort(out.begin(), out.end(), better);
    }
    return out;
}

double JaccardReranker::score(std::string_view query, std::string_view chunk_text) const {
    const auto q = text::tokenize(query);
    const auto c = text::tokenize(chunk_text);
    const std::set<std::string> a(q.begin(), q.end());
    const std::set<std::string> b(c.begin(), c.end());
    if (a.empty() && b.empty()) return 0.0;
    std::size_t inter = 0;
    for (const auto& t : a) inter += b.count(t);
    return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

double SerializedRerankScorer::score(std::string_view query, std::string_view chunk_text) const {
    std::lock_guard lock(mutex_);
    return inner_.score(query, chunk_text);
}

ExpansionThesaurus::ExpansionThesaurus(std::map<std::string, std::vector<std::string>> entries) {
    for (auto& [key, synonyms] : entries) {
        const auto key_tokens = text::tokenize(key);
        if (key_tokens.empty()) throw Error("thesaurus: empty key");
        const std::string norm_key = text::join(key_tokens, " ");
        auto& out = entries_[norm_key];
        for (const auto& s : synonyms) {
            const std::string norm = text::join(text::tokenize(s), " ");
            if (norm.empty()) throw Error("thesaurus: empty synonym for '" + key + "'");
            if (norm == norm_key) throw Error("thesaurus: '" + key + "' maps to itself");
            if (std::find(out.begin(), out.end(), norm) == out.end()) out.push_back(norm);
        }
    }
}

ExpansionThesaurus ExpansionThesaurus::cybersecurity_default() {
    return ExpansionThesaurus({
        {"dos", {"denial of service", "resource exhaustion", "flooding"}},
        {"ddos", {"distributed denial of service", "botnet flood", "amplification attack"}},
        {"syn flood", {"tcp handshake exhaustion", "half-open connections"}},
        {"benign", {"normal traffic", "legitimate activity"}},
        {"mitigation", {"countermeasure", "response"}},
    });
}

ExpansionThesaurus ExpansionThesaurus::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("thesaurus: cannot open " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error("thesaurus: " + path.string() + ": " + e.what());
    }
    if (!doc.is_object()) throw Error("thesaurus: top level must be an object");
    std::map<std::string, std::vector<std::string>> entries;
    for (const auto& [key, value] : doc.items()) {
        if (!value.is_array()) throw Error("thesaurus: entry '" + key + "' must be an array");
        for (const auto& s : value) entries[key].push_back(s.get<std::string>());
    }
    return ExpansionThesaurus(std::move(entries));
}

std::string expand_query(std::string_view query, const ExpansionThesaurus& thesaurus) {
    const auto tokens = text::tokenize(query);
    std::string out(query);
    std::vector<std::string> appended;
    for (const auto& [key, synonyms] : thesaurus.entries()) {
        const auto key_tokens = text::tokenize(key);
        bool hit = false;
        for (std::size_t i = 0; !hit && i + key_tokens.size() <= tokens.size(); ++i) {
            hit = std::equal(key_tokens.begin(), key_tokens.end(), tokens.begin() + static_cast<std::ptrdiff_t>(i));
        }
        if (!hit) continue;
        for (const auto& s : synonyms) {
            if (std::find(appended.begin(), appended.end(), s) == appended.end()) appended.push_back(s);
        }
    }
    for (const auto& s : appended) {
        out += ' ';
        out += s;
    }
    return out;
}

std::vector<ScoredChunk> fuse_scores(std::span<const FusionCandidate> candidates) {
    if (candidates.empty()) throw Error("fuse_scores: no candidates");
    std::vector<ScoredChunk> out;
    double lo = candidates.front().bm25, hi = lo;
    for (const auto& c : candidates) {
        lo = std::min(lo, c.bm25);
        hi = std::max(hi, c.bm25);
    }
    const double range = hi - lo;
    out.reserve(candidates.size());
    for (const auto& c : candidates) {
        ScoredChunk s;
        s.chunk = c.chunk;
        s.chunk_id = c.chunk_id;
        s.bm25_raw = c.bm25;
        s.bm25_norm = range > 0.0 ? (c.bm25 - lo) / range : 1.0;
        s.cosine = c.cosine;
        s.sem_sim = (std::clamp(c.cosine, -1.0, 1.0) + 1.0) / 2.0;
        s.fused = kSemanticWeight * s.sem_sim + kLexicalWeight * s.bm25_norm;
        out.push_back(std::move(s));
    }
    std::sort(out.begin(), out.end(), [](const ScoredChunk& a, const ScoredChunk& b) {
        return a.fused > b.fused || (a.fused == b.fused && a.chunk_id < b.chunk_id);
    });
    return out;
}

RetrievalIndexes build_indexes(const knowledge::KnowledgeBase& kb, const EmbeddingProvider& provider) {
    if (kb.empty()) throw Error("build_indexes: knowledge base is empty");
    RetrievalIndexes idx;
    idx.lexical = LexicalIndex::build(kb);
    std::vector<EmbeddingVector> rows;
    rows.reserve(kb.size());
    for (std::size_t i = 0; i < kb.size(); ++i) {
        try {
            rows.push_back(provider.embed(kb.at(i).text));
        } catch (const std::exception& e) {
            throw Error("embedding failed for chunk " + kb.at(i).chunk_id + ": " + e.what());
        }
    }
    idx.vectors = std::make_unique<FlatCosineIndex>(provider.width(), std::move(rows));
    idx.provider_id = provider.id();
    return idx;
}

Retriever::Retriever(const knowledge::KnowledgeBase& kb, const EmbeddingProvider& provider,
                     const RerankScorer& reranker, ExpansionThesaurus thesaurus, RetrievalOptions options)
    : kb_(kb),
      provider_(provider),
      reranker_(reranker),
      thesaurus_(std::move(thesaurus)),
      options_(std::move(options)) {
    if (kb_.empty()) throw Error("retrieval: knowledge base is empty");
    options_.bm25.validate();
    if (options_.k == 0) throw Error("retrieval: k must be positive");
    if (options_.candidate_depth == 0 || options_.rerank_depth == 0) throw Error("retrieval: depths must be positive");
    for (const auto& id : options_.fallback_chunk_ids) {
        const auto i = kb_.index_of(id);
        if (!i) throw Error("retrieval: fallback chunk '" + id + "' not in knowledge base");
        fallback_.push_back(*i);
    }
    indexes_ = build_indexes(kb_, provider_);
}

RetrievalResult Retriever::retrieve(std::string_view query) const { return retrieve(query, options_.k); }

RetrievalResult Retriever::retrieve(std::string_view query, std::size_t k) const {
    if (k == 0) throw Error("retrieval: k must be positive");
    RetrievalResult result;
    result.query = std::string(query);
    result.expanded_query = expand_query(query, thesaurus_);
    const auto terms = text::tokenize(result.expanded_query);

    const auto lexical = indexes_.lexical.top_n(terms, options_.candidate_depth, options_.bm25);
    const auto qvec = provider_.embed(result.expanded_query);
    if (qvec.values.size() != provider_.width()) throw Error("retrieval: query embedding has the wrong width");
    const auto semantic = indexes_.vectors->search(qvec.values, options_.candidate_depth);

    std::vector<std::size_t> pool;
    std::unordered_set<std::size_t> seen;
    for (const auto& [i, s] : lexical) {
        if (seen.insert(i).second) pool.push_back(i);
    }
    for (const auto& [i, s] : semantic) {
        if (seen.insert(i).second) pool.push_back(i);
    }
    result.candidate_count = pool.size();

    std::vector<FusionCandidate> cands;
    cands.reserve(pool.size());
    for (std::size_t i : pool) {
        cands.push_back({i, kb_.at(i).chunk_id, indexes_.lexical.score(terms, i, options_.bm25),
                         indexes_.vectors->similarity(qvec.values, i)});
    }
    auto fused = fuse_scores(cands);
    if (fused.size() > options_.rerank_depth) fused.resize(options_.rerank_depth);

    for (auto& c : fused) {
        const double r = reranker_.score(query, kb_.at(c.chunk).text);
        if (!std::isfinite(r)) throw Error("retrieval: reranker returned a non-finite score");
        c.rerank = r;
    }
    std::stable_sort(fused.begin(), fused.end(), [](const ScoredChunk& a, const ScoredChunk& b) {
        if (*a.rerank != *b.rerank) return *a.rerank > *b.rerank;
        if (a.fused != b.fused) return a.fused > b.fused;
        return a.chunk_id < b.chunk_id;
    });
    if (fused.size() > k) fused.resize(k);
    result.ranked = std::move(fused);

    const auto confident = static_cast<std::size_t>(std::count_if(
        result.ranked.begin(), result.ranked.end(),
        [&](const ScoredChunk& c) { return *c.rerank > options_.rerank_threshold; }));
    if (confident < options_.min_confident) {
        result.fallback_used = true;
        for (std::size_t i : fallback_) {
            const bool present = std::any_of(result.ranked.begin(), result.ranked.end(),
                                             [&](const ScoredChunk& c) { return c.chunk == i; });
            if (!present) result.fallback_chunks.push_back(i);
        }
    }
    return result;
}

}  // namespace idsrag::retrieval
