#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "idsrag/attribution.hpp"
#include "idsrag/ensemble.hpp"
#include "idsrag/flowdata.hpp"

namespace idsrag::promptgen {

enum class PromptMode { Rag, Vanilla };

std::string_view to_string(PromptMode mode);
PromptMode parse_mode(std::string_view text);

struct DetectionContext {
    ClassLabel attack_class = ClassLabel::Benign;
    double confidence_score = 0.0;
    ensemble::ConfidenceTier confidence_tier = ensemble::ConfidenceTier::Low;
    std::string dataset;

    // Throws when the tier does not match the score.
    void validate() const;
    static DetectionContext from_prediction(const ensemble::EnsemblePrediction& prediction, std::string dataset);
};

struct FlowMetadata {
    std::string flow_id;
    std::string timestamp;
    std::string src_ip;
    std::uint16_t src_port = 0;
    std::string dst_ip;
    std::uint16_t dst_port = 0;
    std::string protocol;

    static FlowMetadata from_record(const flowdata::FlowRecord& record);
};

struct RetrievedChunk {
    std::string chunk_id;
    std::string citation_label;
    std::string text;
};

inline constexpr const char* kKnowledgeHeader = "[RETRIEVED KNOWLEDGE CONTEXT]";
inline constexpr const char* kRequestHeader = "[REPORT REQUEST]";

struct PromptDocument {
    std::string system_instruction;
    std::string user_text;       // all five blocks, in order
    std::string knowledge_body;  // empty in vanilla mode
    PromptMode mode = PromptMode::Rag;
    std::size_t evidence_count = 0;

    // "SYSTEM:\n<instruction>\n\nUSER:\n<user_text>"
    std::string text() const;
    // FNV-1a of text(), 16 hex digits.
    std::string hash() const;
};

std::string_view system_instruction();

class TemplateError : public Error {
public:
    explicit TemplateError(std::vector<std::string> missing);
    const std::vector<std::string>& missing() const { return missing_; }

private:
    std::vector<std::string> missing_;
};

// Substitutes {name} placeholders. Every placeholder must be bound; the
// error lists all unbound names in order of first appearance.
std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& vars);

// The user-message template for k indicator slots.
std::string prompt_template(std::size_t k);

// Rag mode requires at least one retrieved chunk; vanilla ignores `retrieved`.
PromptDocument build_prompt(const DetectionContext& ctx, const FlowMetadata& meta,
                            std::span<const attribution::EvidenceItem> evidence,
                            std::span<const RetrievedChunk> retrieved, PromptMode mode,
                            std::size_t k = attribution::kDefaultTopK);

struct GenerationRequest {
    std::string model;
    std::string prompt;
    std::size_t max_length = 700;  // words
    double temperature = 0.0;
};

struct GenerationResponse {
    std::string text;
    std::size_t word_count = 0;
    std::size_t token_count = 0;
};

class GenerationClient {
public:
    virtual ~GenerationClient() = default;
    virtual GenerationResponse generate(const GenerationRequest& request) const = 0;
    virtual std::string model_id() const = 0;
    virtual bool deterministic() const = 0;
    virtual bool thread_safe() const = 0;
};

// Returns the prompt unchanged.
class EchoClient final : public GenerationClient {
public:
    GenerationResponse generate(const GenerationRequest& request) const override;
    std::string model_id() const override { return "echo-stub"; }
    bool deterministic() const override { return true; }
    bool thread_safe() const override { return true; }
};

// Writes a five-section report assembled from the prompt: detection context,
// indicator lines and, when present, the retrieved chunk texts with their
// source labels.
class ChunkCopyClient final : public GenerationClient {
public:
    GenerationResponse generate(const GenerationRequest& request) const override;
    std::string model_id() const override { return "chunk-copy-stub"; }
    bool deterministic() const override { return true; }
    bool thread_safe() const override { return true; }
};

class SerializedGenerationClient final : public GenerationClient {
public:
    explicit SerializedGenerationClient(const GenerationClient& inner) : inner_(inner) {}
    GenerationResponse generate(const GenerationRequest& request) const override;
    std::string model_id() const override { return inner_.model_id(); }
    bool deterministic() const override { return inner_.deterministic(); }
    bool thread_safe() const override { return true; }

private:
    const GenerationClient& inner_;
    mutable std::mutex mutex_;
};

struct GenerationLimits {
    std::size_t max_words = 700;
    double temperature = 0.0;
};

class GenerationError : public Error {
public:
    GenerationError(std::string prompt_hash, const std::string& what)
        : Error("generation failed (prompt " + prompt_hash + "): " + what), prompt_hash_(std::move(prompt_hash)) {}
    const std::string& prompt_hash() const { return prompt_hash_; }

private:
    std::string prompt_hash_;
};

// Serialized line-delimited sink of (flow_id, prompt_hash, model_id, response).
class AuditLog {
public:
    explicit AuditLog(const std::filesystem::path& path);
    explicit AuditLog(std::ostream& sink) : sink_(&sink) {}

    void record(std::string_view flow_id, std::string_view prompt_hash, std::string_view model_id,
                std::string_view response);

private:
    std::ofstream file_;
    std::ostream* sink_;
    std::mutex mutex_;
};

struct GeneratedReport {
    std::string text;
    bool truncated = false;
    std::string prompt_hash;
    std::string model_id;
    std::size_t word_count = 0;
};

// Keeps the first max_words whitespace-separated words.
std::string truncate_words(std::string_view text, std::size_t max_words, bool* truncated = nullptr);

GeneratedReport generate_report(const PromptDocument& prompt, const GenerationClient& client,
                                const GenerationLimits& limits = {}, AuditLog* audit = nullptr,
                                std::string_view flow_id = {});

inline constexpr std::array<const char*, 5> kSectionNames = {
    "Rationale", "Key Indicators", "Confidence Assessment", "Threat Assessment", "Recommendations"};

struct ReportSections {
    std::array<std::string, 5> sections;  // kSectionNames order
    std::size_t word_count = 0;
    std::vector<std::string> citations;

    const std::string& rationale() const { return sections[0]; }
    const std::string& key_indicators() const { return sections[1]; }
    const std::string& confidence_assessment() const { return sections[2]; }
    const std::string& threat_assessment() const { return sections[3]; }
    const std::string& recommendations() const { return sections[4]; }

    nlohmann::json to_json() const;
    bool operator==(const ReportSections&) const = default;
};

class ReportParseError : public Error {
public:
    ReportParseError(std::vector<std::string> missing, std::vector<std::string> duplicated);
    const std::vector<std::string>& missing() const { return missing_; }
    const std::vector<std::string>& duplicated() const { return duplicated_; }

private:
    std::vector<std::string> missing_;
    std::vector<std::string> duplicated_;
};

// "NIST SP 800-<n>" and "T####" / "T####.###", unique, in order of appearance.
std::vector<std::string> extract_citations(std::string_view text);

// Headings match case-insensitively, optionally numbered ("1." / "1)"),
// markdown-decorated ("#", "**") and colon-terminated; text after a colon on
// the heading line starts the section. Text before the first heading is ignored.
ReportSections parse_report(std::string_view raw);

// Canonical rendering: "<i>. <Name>\n<body>\n\n" per section.
std::string render(const ReportSections& sections);

// Builds a ReportSections with derived word count and citations.
ReportSections make_sections(std::array<std::string, 5> bodies);

}  // namespace idsrag::promptgen
