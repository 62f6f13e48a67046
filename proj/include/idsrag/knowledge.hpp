#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "idsrag/common.hpp"

namespace idsrag::knowledge {

enum class SourceKind { NistSp, MitreAttack, Cis, Playbook, SignatureDb };
enum class RelevanceLabel { Benign, DoS, DDoS, General };

std::string_view to_string(SourceKind kind);
SourceKind parse_source_kind(std::string_view text);
std::string_view to_string(RelevanceLabel label);
RelevanceLabel parse_relevance(std::string_view text);

struct SectionMarker {
    std::size_t token_offset = 0;
    std::string section_id;
};

struct SourceDocument {
    std::string doc_id;
    std::string title;
    SourceKind kind = SourceKind::NistSp;
    std::string citation_label;
    std::string body;
    std::vector<SectionMarker> sections;  // ordered by token_offset

    // Plain text with optional directive lines:
    //   @doc_id: ...  @title: ...  @kind: ...  @citation: ...
    //   @section: <id>   (positional; applies from the next body token on)
    static SourceDocument parse(std::string_view text, const std::string& fallback_id);
    static SourceDocument load(const std::filesystem::path& path);
};

struct Chunk {
    std::string chunk_id;
    std::string doc_id;
    std::string text;
    std::pair<std::size_t, std::size_t> token_span;  // [start, end) in document tokens
    RelevanceLabel relevance = RelevanceLabel::General;
    std::string citation_label;
    std::string section_id;
    bool snapped = false;  // start moved back to a sentence boundary

    std::size_t token_count() const { return token_span.second - token_span.first; }
    bool operator==(const Chunk&) const = default;
};

struct KeywordRule {
    std::string keyword;  // lowercase; may span several tokens
    RelevanceLabel label;
};

std::vector<KeywordRule> default_relevance_rules();

// Most keyword hits wins; ties prefer DDoS, then DoS, then Benign; no hits -> General.
RelevanceLabel assign_relevance(const std::vector<std::string>& tokens, const std::vector<KeywordRule>& rules);

struct ChunkingOptions {
    std::size_t chunk_size = 500;
    std::size_t overlap = 200;
    bool snap_to_sentences = true;
    std::size_t snap_lookback = 50;
    std::vector<KeywordRule> rules = default_relevance_rules();
};

// Sliding token window with stride chunk_size - overlap. With snapping on, each
// window start after the first moves back to the closest sentence boundary
// within `snap_lookback` tokens.
std::vector<Chunk> chunk_document(const SourceDocument& doc, const ChunkingOptions& options = {});

struct CorpusStats {
    std::size_t chunk_count = 0;
    std::size_t total_tokens = 0;
    double avgdl = 0.0;
    std::map<std::string, std::size_t> doc_freq;

    bool operator==(const CorpusStats&) const = default;
};

CorpusStats compute_corpus_stats(const std::vector<Chunk>& chunks);

inline constexpr int kKbFormatVersion = 1;

// Loaded knowledge bases are never mutated; concurrent readers are safe.
class KnowledgeBase {
public:
    KnowledgeBase() = default;
    KnowledgeBase(std::vector<Chunk> chunks, std::string version_tag = "v1");

    const std::vector<Chunk>& chunks() const { return chunks_; }
    const CorpusStats& stats() const { return stats_; }
    const std::string& version_tag() const { return version_tag_; }
    std::size_t size() const { return chunks_.size(); }
    bool empty() const { return chunks_.empty(); }

    std::optional<std::size_t> index_of(std::string_view chunk_id) const;
    const Chunk& at(std::size_t index) const { return chunks_.at(index); }

    bool operator==(const KnowledgeBase& other) const {
        return chunks_ == other.chunks_ && stats_ == other.stats_ && version_tag_ == other.version_tag_;
    }

private:
    friend KnowledgeBase load_kb(std::istream& source);
    std::vector<Chunk> chunks_;
    CorpusStats stats_;
    std::string version_tag_ = "v1";
    std::unordered_map<std::string, std::size_t> by_id_;
};

class KbFormatError : public Error {
public:
    KbFormatError(std::size_t line, const std::string& what)
        : Error("knowledge base line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

// Line-delimited JSON: one header record (format, version, corpus stats)
// followed by one record per chunk.
void persist_kb(const KnowledgeBase& kb, std::ostream& sink);
KnowledgeBase load_kb(std::istream& source);
void save_kb(const KnowledgeBase& kb, const std::filesystem::path& path);
KnowledgeBase load_kb(const std::filesystem::path& path);

// Chunks every document file (*.txt, *.md) under `dir`, sorted by file name.
KnowledgeBase ingest_directory(const std::filesystem::path& dir, const ChunkingOptions& options = {},
                               const std::string& version_tag = "v1");

}  // namespace idsrag::knowledge
