#pragma once

#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "idsrag/promptgen.hpp"
#include "idsrag/retrieval.hpp"

namespace idsrag::remote {

struct Endpoint {
    std::string url;  // http://host:port/path
    int timeout_ms = 30000;
    int retries = 2;

    static Endpoint from_json(const nlohmann::json& doc);
    nlohmann::json to_json() const;
};

struct ParsedUrl {
    std::string origin;  // scheme://host:port
    std::string path;
};

ParsedUrl parse_url(const std::string& url);

// POSTs `body` as JSON and parses the JSON reply, retrying transport errors
// and 5xx replies up to `retries` extra times.
nlohmann::json post_json(const Endpoint& endpoint, const nlohmann::json& body);

// Request {"text"}, reply {"embedding": [...]}.
class HttpEmbeddingProvider final : public retrieval::EmbeddingProvider {
public:
    HttpEmbeddingProvider(Endpoint endpoint, std::size_t width, bool deterministic = true);
    retrieval::EmbeddingVector embed(std::string_view text) const override;
    std::size_t width() const override { return width_; }
    bool deterministic() const override { return deterministic_; }
    bool thread_safe() const override { return true; }
    std::string id() const override { return "http:" + endpoint_.url; }

private:
    Endpoint endpoint_;
    std::size_t width_;
    bool deterministic_;
};

// Request {"query", "text"}, reply {"score"} in [0, 1].
class HttpRerankScorer final : public retrieval::RerankScorer {
public:
    explicit HttpRerankScorer(Endpoint endpoint) : endpoint_(std::move(endpoint)) {}
    double score(std::string_view query, std::string_view chunk_text) const override;
    bool thread_safe() const override { return true; }

private:
    Endpoint endpoint_;
};

// Request {"model", "prompt", "max_length", "temperature"},
// reply {"text", "word_count", "token_count"}.
class HttpGenerationClient final : public promptgen::GenerationClient {
public:
    HttpGenerationClient(Endpoint endpoint, std::string model);
    promptgen::GenerationResponse generate(const promptgen::GenerationRequest& request) const override;
    std::string model_id() const override { return model_; }
    bool deterministic() const override { return false; }
    bool thread_safe() const override { return true; }

private:
    Endpoint endpoint_;
    std::string model_;
};

}  // namespace idsrag::remote
