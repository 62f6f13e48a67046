#include "idsrag/knowledge.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "idsrag/text.hpp"

namespace idsrag::knowledge {

using nlohmann::json;

std::string_view to_string(SourceKind kind) {
    switch (kind) {
    case SourceKind::NistSp: return "NIST-SP";
    case SourceKind::MitreAttack: return "MITRE-ATTACK";
    case SourceKind::Cis: return "CIS";
    case SourceKind::Playbook: return "playbook";
    case SourceKind::SignatureDb: return "signature-db";
    }
    return "?";
}

SourceKind parse_source_kind(std::string_view text) {
    const std::string key = lowercase(trim(text));
    if (key == "nist-sp" || key == "nist") return SourceKind::NistSp;
    if (key == "mitre-attack" || key == "mitre") return SourceKind::MitreAttack;
    if (key == "cis") return SourceKind::Cis;
    if (key == "playbook") return SourceKind::Playbook;
    if (key == "signature-db" || key == "signatures") return SourceKind::SignatureDb;
    throw Error("unknown source kind: " + std::string(text));
}

std::string_view to_string(RelevanceLabel label) {
    switch (label) {
    case RelevanceLabel::Benign: return "Benign";
    case RelevanceLabel::DoS: return "DoS";
    case RelevanceLabel::DDoS: return "DDoS";
    case RelevanceLabel::General: return "general";
    }
    return "?";
}

RelevanceLabel parse_relevance(std::string_view text) {
    const std::string key = lowercase(trim(text));
    if (key == "benign") return RelevanceLabel::Benign;
    if (key == "dos") return RelevanceLabel::DoS;
    if (key == "ddos") return RelevanceLabel::DDoS;
    if (key == "general") return RelevanceLabel::General;
    throw Error("unknown relevance label: " + std::string(text));
}

// ---------------------------------------------------------------------------
// Documents

SourceDocument SourceDocument::parse(std::string_view text, const std::string& fallback_id) {
    SourceDocument doc;
    doc.doc_id = fallback_id;
    std::vector<std::pair<std::size_t, std::string>> char_markers;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::string_view view = trim(line);
        if (view.size() > 1 && view.front() == '@') {
            const auto colon = view.find(':');
            if (colon != std::string_view::npos) {
                const std::string key = lowercase(trim(view.substr(1, colon - 1)));
                const std::string value(trim(view.substr(colon + 1)));
                if (key == "doc_id") { doc.doc_id = value; continue; }
                if (key == "title") { doc.title = value; continue; }
                if (key == "kind") { doc.kind = parse_source_kind(value); continue; }
                if (key == "citation") { doc.citation_label = value; continue; }
                if (key == "section") { char_markers.emplace_back(doc.body.size(), value); continue; }
            }
        }
        doc.body += line;
        doc.body += '\n';
    }
    if (doc.citation_label.empty()) doc.citation_label = doc.title.empty() ? doc.doc_id : doc.title;

    const auto tokens = text::tokenize_with_spans(doc.body);
    for (const auto& [offset, id] : char_markers) {
        const auto it = std::lower_bound(tokens.begin(), tokens.end(), offset,
                                         [](const text::Token& t, std::size_t off) { return t.begin < off; });
        doc.sections.push_back({static_cast<std::size_t>(it - tokens.begin()), id});
    }
    return doc;
}

SourceDocument SourceDocument::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open document " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path.stem().string());
}

// ---------------------------------------------------------------------------
// Chunking

std::vector<KeywordRule> default_relevance_rules() {
    using R = RelevanceLabel;
    return {
        {"ddos", R::DDoS},          {"distributed", R::DDoS},     {"botnet", R::DDoS},
        {"amplification", R::DDoS}, {"reflection", R::DDoS},      {"reflector", R::DDoS},
        {"zombie", R::DDoS},        {"dos", R::DoS},              {"denial", R::DoS},
        {"flood", R::DoS},          {"flooding", R::DoS},         {"syn", R::DoS},
        {"exhaustion", R::DoS},     {"slowloris", R::DoS},        {"volumetric", R::DoS},
        {"t1498", R::DoS},          {"t1498.001", R::DoS},        {"benign", R::Benign},
        {"baseline", R::Benign},    {"legitimate", R::Benign},    {"normal", R::Benign},
        {"handshake", R::Benign},
    };
}

RelevanceLabel assign_relevance(const std::vector<std::string>& tokens, const std::vector<KeywordRule>& rules) {
    std::array<std::size_t, 3> hits{};  // Benign, DoS, DDoS
    for (const auto& rule : rules) {
        if (rule.label == RelevanceLabel::General) continue;
        const auto phrase = text::tokenize(rule.keyword);
        if (phrase.empty() || phrase.size() > tokens.size()) continue;
        std::size_t count = 0;
        for (std::size_t i = 0; i + phrase.size() <= tokens.size(); ++i) {
            if (std::equal(phrase.begin(), phrase.end(), tokens.begin() + static_cast<std::ptrdiff_t>(i))) ++count;
        }
        hits[static_cast<std::size_t>(rule.label)] += count;
    }
    if (hits[0] == 0 && hits[1] == 0 && hits[2] == 0) return RelevanceLabel::General;
    if (hits[2] >= hits[1] && hits[2] >= hits[0]) return RelevanceLabel::DDoS;
    if (hits[1] >= hits[0]) return RelevanceLabel::DoS;
    return RelevanceLabel::Benign;
}

std::vector<Chunk> chunk_document(const SourceDocument& doc, const ChunkingOptions& options) {
    if (options.chunk_size == 0 || options.overlap >= options.chunk_size) {
        throw Error("chunk_document: require chunk_size > overlap >= 0");
    }
    const auto tokens = text::tokenize_with_spans(doc.body);
    std::vector<Chunk> chunks;
    const std::size_t n = tokens.size();
    if (n == 0) return chunks;
    const std::size_t stride = options.chunk_size - options.overlap;

    std::size_t start = 0;
    bool snapped = false;
    for (std::size_t index = 0;; ++index) {
        const std::size_t end = std::min(start + options.chunk_size, n);
        Chunk c;
        c.chunk_id = doc.doc_id + "#" + std::to_string(index);
        c.doc_id = doc.doc_id;
        c.token_span = {start, end};
        c.text = doc.body.substr(tokens[start].begin, tokens[end - 1].end - tokens[start].begin);
        c.citation_label = doc.citation_label;
        c.section_id = "0";
        for (const auto& m : doc.sections) {
            if (m.token_offset <= start) c.section_id = m.section_id;
        }
        c.snapped = snapped;
        std::vector<std::string> lowered;
        lowered.reserve(end - start);
        for (std::size_t t = start; t < end; ++t) lowered.push_back(lowercase(tokens[t].surface));
        c.relevance = assign_relevance(lowered, options.rules);
        chunks.push_back(std::move(c));
        if (end == n) break;

        std::size_t next = start + stride;
        snapped = false;
        if (options.snap_to_sentences) {
            const std::size_t floor = next > options.snap_lookback ? next - options.snap_lookback : 0;
            for (std::size_t p = next; p > start && p >= floor; --p) {
                if (tokens[p - 1].ends_sentence) {
                    snapped = p != next;
                    next = p;
                    break;
                }
            }
        }
        start = next;
    }
    return chunks;
}

CorpusStats compute_corpus_stats(const std::vector<Chunk>& chunks) {
    CorpusStats stats;
    stats.chunk_count = chunks.size();
    for (const auto& c : chunks) {
        const auto tokens = text::tokenize(c.text);
        stats.total_tokens += tokens.size();
        const std::set<std::string> unique(tokens.begin(), tokens.end());
        for (const auto& t : unique) ++stats.doc_freq[t];
    }
    stats.avgdl = chunks.empty() ? 0.0 : static_cast<double>(stats.total_tokens) / static_cast<double>(chunks.size());
    return stats;
}

// ---------------------------------------------------------------------------
// Knowledge base

KnowledgeBase::KnowledgeBase(std::vector<Chunk> chunks, std::string version_tag)
    : chunks_(std::move(chunks)), version_tag_(std::move(version_tag)) {
    for (std::size_t i = 0; i < chunks_.size(); ++i) {
        const auto& c = chunks_[i];
        if (c.citation_label.empty()) throw Error("knowledge base: chunk " + c.chunk_id + " has no citation label");
        if (c.token_span.second <= c.token_span.first) throw Error("knowledge base: chunk " + c.chunk_id + " is empty");
        if (!by_id_.emplace(c.chunk_id, i).second) throw Error("knowledge base: duplicate chunk id " + c.chunk_id);
    }
    stats_ = compute_corpus_stats(chunks_);
}

std::optional<std::size_t> KnowledgeBase::index_of(std::string_view chunk_id) const {
    if (auto it = by_id_.find(std::string(chunk_id)); it != by_id_.end()) return it->second;
    return std::nullopt;
}

void persist_kb(const KnowledgeBase& kb, std::ostream& sink) {
    const auto& s = kb.stats();
    json header = {{"format", "idsrag-kb"},      {"version", kKbFormatVersion}, {"version_tag", kb.version_tag()},
                   {"chunk_count", s.chunk_count}, {"total_tokens", s.total_tokens}, {"avgdl", s.avgdl},
                   {"doc_freq", s.doc_freq}};
    sink << header.dump() << '\n';
    for (const auto& c : kb.chunks()) {
        json rec = {{"id", c.chunk_id},
                    {"doc_id", c.doc_id},
                    {"span", {c.token_span.first, c.token_span.second}},
                    {"relevance", std::string(to_string(c.relevance))},
                    {"citation", c.citation_label},
                    {"section", c.section_id},
                    {"snapped", c.snapped},
                    {"text", c.text}};
        sink << rec.dump() << '\n';
    }
}

KnowledgeBase load_kb(std::istream& source) {
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(source, line)) throw KbFormatError(1, "missing header record");
    ++line_no;
    json header;
    try {
        header = json::parse(line);
    } catch (const json::exception& e) {
        throw KbFormatError(line_no, std::string("corrupt header: ") + e.what());
    }
    if (header.value("format", std::string()) != "idsrag-kb") throw KbFormatError(line_no, "not a knowledge base file");
    const int version = header.value("version", -1);
    if (version != kKbFormatVersion) {
        throw KbFormatError(line_no, "version mismatch: file has " + std::to_string(version) + ", expected " +
                                         std::to_string(kKbFormatVersion));
    }
    CorpusStats stored;
    std::string tag;
    try {
        stored.chunk_count = header.at("chunk_count").get<std::size_t>();
        stored.total_tokens = header.at("total_tokens").get<std::size_t>();
        stored.avgdl = header.at("avgdl").get<double>();
        stored.doc_freq = header.at("doc_freq").get<std::map<std::string, std::size_t>>();
        tag = header.value("version_tag", std::string("v1"));
    } catch (const json::exception& e) {
        throw KbFormatError(line_no, std::string("corrupt header: ") + e.what());
    }

    std::vector<Chunk> chunks;
    std::size_t byte_offset = line.size() + 1;
    while (std::getline(source, line)) {
        ++line_no;
        const bool complete = !source.eof();
        if (line.empty() && !complete) break;
        try {
            const json rec = json::parse(line);
            Chunk c;
            c.chunk_id = rec.at("id").get<std::string>();
            c.doc_id = rec.at("doc_id").get<std::string>();
            const auto span = rec.at("span").get<std::vector<std::size_t>>();
            if (span.size() != 2) throw Error("span must have two entries");
            c.token_span = {span[0], span[1]};
            c.relevance = parse_relevance(rec.at("relevance").get<std::string>());
            c.citation_label = rec.at("citation").get<std::string>();
            c.section_id = rec.at("section").get<std::string>();
            c.snapped = rec.value("snapped", false);
            c.text = rec.at("text").get<std::string>();
            chunks.push_back(std::move(c));
        } catch (const std::exception& e) {
            throw KbFormatError(line_no, "corrupt chunk record at byte offset " + std::to_string(byte_offset) + ": " +
                                             e.what());
        }
        byte_offset += line.size() + 1;
    }
    if (chunks.size() != stored.chunk_count) {
        throw KbFormatError(line_no, "truncated: header declares " + std::to_string(stored.chunk_count) +
                                         " chunks, found " + std::to_string(chunks.size()) + " (byte offset " +
                                         std::to_string(byte_offset) + ")");
    }
    KnowledgeBase kb;
    try {
        kb = KnowledgeBase(std::move(chunks), tag);
    } catch (const Error& e) {
        throw KbFormatError(line_no, e.what());
    }
    if (!(kb.stats() == stored)) throw KbFormatError(1, "stored corpus stats do not match chunks");
    return kb;
}

void save_kb(const KnowledgeBase& kb, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write knowledge base " + path.string());
    persist_kb(kb, out);
}

KnowledgeBase load_kb(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open knowledge base " + path.string());
    return load_kb(in);
}

KnowledgeBase ingest_directory(const std::filesystem::path& dir, const ChunkingOptions& options,
                               const std::string& version_tag) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const auto ext = entry.path().extension();
        if (entry.is_regular_file() && (ext == ".txt" || ext == ".md")) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<Chunk> chunks;
    std::set<std::string> ids;
    for (const auto& f : files) {
        const auto doc = SourceDocument::load(f);
        if (!ids.insert(doc.doc_id).second) throw Error("duplicate doc_id " + doc.doc_id + " in " + f.string());
        auto part = chunk_document(doc, options);
        chunks.insert(chunks.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
    return KnowledgeBase(std::move(chunks), version_tag);
}

}  // namespace idsrag::knowledge
