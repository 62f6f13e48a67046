#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "idsrag/attribution.hpp"
#include "idsrag/ensemble.hpp"
#include "idsrag/evalkit.hpp"
#include "idsrag/flowdata.hpp"
#include "idsrag/knowledge.hpp"
#include "idsrag/promptgen.hpp"
#include "idsrag/remote.hpp"
#include "idsrag/retrieval.hpp"

namespace idsrag::pipeline {

enum class ModeSet { Rag, Vanilla, Both };

std::string_view to_string(ModeSet modes);
ModeSet parse_modes(std::string_view text);
std::vector<promptgen::PromptMode> expand_modes(ModeSet modes);

struct EmbeddingConfig {
    std::string kind = "hash";  // hash | http
    std::size_t width = 768;
    std::uint64_t seed = 0;
    bool char_ngrams = false;
    std::optional<remote::Endpoint> endpoint;

    static EmbeddingConfig from_json(const nlohmann::json& doc);
    nlohmann::json to_json() const;
};

struct RerankConfig {
    std::string kind = "jaccard";  // jaccard | http
    std::optional<remote::Endpoint> endpoint;

    static RerankConfig from_json(const nlohmann::json& doc);
    nlohmann::json to_json() const;
};

struct GeneratorConfig {
    std::string kind = "chunk-copy";  // chunk-copy | echo | http
    std::string model = "llama3:8b";
    std::size_t max_words = 700;
    double temperature = 0.0;
    std::size_t concurrency = 1;
    std::optional<remote::Endpoint> endpoint;

    static GeneratorConfig from_json(const nlohmann::json& doc);
    nlohmann::json to_json() const;
};

// Relative paths resolve against the directory of the configuration file.
struct PipelineConfig {
    std::filesystem::path schema;
    std::filesystem::path stats;   // normalization stats written by preprocess
    std::filesystem::path models;  // directory with <class>.model.json
    std::filesystem::path kb;
    std::filesystem::path thesaurus;     // empty: built-in dictionary
    std::filesystem::path ground_truth;  // directory with benign.txt, dos.txt, ddos.txt; empty: no evaluation
    std::filesystem::path flows;         // CSV input for `pipeline`
    std::filesystem::path output_dir = "pipeline-out";
    std::vector<std::string> fallback_chunk_ids;
    std::string kb_version;  // when set, must equal the KB version tag
    std::string dataset = "CICIDS2018";
    std::size_t top_k_features = attribution::kDefaultTopK;
    std::size_t retrieval_k = 5;
    ModeSet modes = ModeSet::Both;
    EmbeddingConfig embedding;
    RerankConfig reranker;
    GeneratorConfig generator;
    EmbeddingConfig token_embedding;  // greedy embedding F1
    std::size_t workers = 1;
    std::uint64_t seed = 0;
    bool resume = false;

    static PipelineConfig from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);
    static PipelineConfig load(const std::filesystem::path& path);
    nlohmann::json to_json() const;
    // Throws ConfigError when a referenced artifact is absent or a knob is out of range.
    void validate() const;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Everything a run needs, loaded once and shared read-only across workers.
struct Components {
    flowdata::FeatureSchema schema;
    flowdata::NormalizationStats stats;
    ensemble::Ensemble ensemble;
    knowledge::KnowledgeBase kb;
    retrieval::ExpansionThesaurus thesaurus = retrieval::ExpansionThesaurus::cybersecurity_default();
    std::map<ClassLabel, std::string> ground_truth;
    std::shared_ptr<retrieval::EmbeddingProvider> embedder;
    std::shared_ptr<retrieval::RerankScorer> reranker;
    std::shared_ptr<promptgen::GenerationClient> generator;
    std::shared_ptr<retrieval::EmbeddingProvider> token_embedder;

    static Components load(const PipelineConfig& config);
};

std::map<ClassLabel, std::string> load_ground_truth(const std::filesystem::path& dir);

struct ModeReport {
    promptgen::PromptMode mode = promptgen::PromptMode::Rag;
    std::string prompt_hash;
    std::string raw_text;
    bool truncated = false;
    std::optional<promptgen::ReportSections> sections;
    std::optional<evalkit::ReportScores> scores;
    std::string reference_class;
    std::string error;

    nlohmann::json to_json() const;
};

struct StageTimings {
    double classify_ms = 0.0;
    double attribute_ms = 0.0;
    double retrieve_ms = 0.0;
    double prompt_ms = 0.0;
    double generate_ms = 0.0;
    double parse_ms = 0.0;
    double evaluate_ms = 0.0;
    double total_ms = 0.0;

    double stage_sum() const;
    nlohmann::json to_json() const;
};

struct FlowOutcome {
    std::size_t index = 0;
    std::string flow_id;
    std::optional<ClassLabel> truth;
    std::optional<ensemble::EnsemblePrediction> prediction;
    std::vector<attribution::EvidenceItem> evidence;
    std::string query;
    std::optional<retrieval::RetrievalResult> retrieval;
    std::vector<std::string> retrieved_chunk_ids;
    std::vector<std::string> fallback_chunk_ids;
    std::vector<ModeReport> reports;
    std::string error;
    StageTimings timings;

    bool ok() const;
    const ModeReport* report(promptgen::PromptMode mode) const;
    // Deterministic record; timings are excluded.
    nlohmann::json to_json() const;
};

// "<class> attack ... indicators ... protocol ..." text handed to retrieval.
std::string build_query(const ensemble::EnsemblePrediction& prediction,
                        std::span<const attribution::EvidenceItem> evidence, const flowdata::FlowRecord& flow);

class Pipeline {
public:
    Pipeline(PipelineConfig config, Components components);
    Pipeline(const Pipeline&) = delete;
    Pipeline& operator=(const Pipeline&) = delete;

    const PipelineConfig& config() const { return config_; }
    const Components& components() const { return components_; }

    // Never throws for per-flow problems; they are recorded in the outcome.
    FlowOutcome process(const flowdata::FlowRecord& flow, std::size_t index) const;

    // Classification and attribution only (no retrieval or generation).
    FlowOutcome classify(const flowdata::FlowRecord& flow, std::size_t index) const;

    // Runs every flow with the worker pool. When `output_dir` is non-empty,
    // outcomes are appended to outcomes.jsonl in flow order as they complete,
    // stage timings go to timings.jsonl and reports to reports/. With resume
    // on, flows already present in outcomes.jsonl are skipped.
    std::vector<FlowOutcome> run(std::span<const flowdata::FlowRecord> flows,
                                 const std::filesystem::path& output_dir = {}) const;

private:
    void attribute(FlowOutcome& out, const flowdata::FeatureVector& raw, std::span<const double> x) const;

    PipelineConfig config_;
    Components components_;
    std::unique_ptr<retrieval::Retriever> retriever_;
    std::shared_ptr<promptgen::GenerationClient> generator_;
    std::shared_ptr<retrieval::EmbeddingProvider> token_embedder_;
    std::vector<std::shared_ptr<const void>> keepalive_;  // providers wrapped by serializers
    std::unique_ptr<std::counting_semaphore<64>> gen_slots_;
    mutable std::unique_ptr<promptgen::AuditLog> audit_;  // opened by run() when writing outputs
};

struct RunSummary {
    std::size_t flows = 0;
    std::size_t failed = 0;
    std::map<std::string, std::array<double, 5>> mean_scores;  // per mode, evalkit::kSummaryRows order
    std::optional<evalkit::WilcoxonResult> rouge1_wilcoxon;    // rag vs vanilla
    std::map<std::string, evalkit::CitationStats> citations;   // per mode
    std::size_t fallback_count = 0;

    nlohmann::json to_json() const;
};

RunSummary summarize(std::span<const FlowOutcome> outcomes);

// Reads outcomes.jsonl flow ids, in file order.
std::vector<std::string> completed_flow_ids(const std::filesystem::path& sidecar);

struct ManifestEntry {
    std::string flow_id;
    std::filesystem::path vanilla;
    std::filesystem::path rag;
    std::filesystem::path ground_truth;
};

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);

struct ManifestEvaluation {
    std::vector<std::string> flow_ids;
    std::vector<evalkit::ReportScores> vanilla;
    std::vector<evalkit::ReportScores> rag;

    // One row per (flow, mode) with the summary metrics.
    void write_table(std::ostream& out) const;
    nlohmann::json summary() const;
};

ManifestEvaluation evaluate_manifest(std::span<const ManifestEntry> entries,
                                     const retrieval::EmbeddingProvider& token_embedder);

}  // namespace idsrag::pipeline
