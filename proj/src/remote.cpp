#include "idsrag/remote.hpp"

#include <cmath>

#include "httplib.h"
#include "idsrag/text.hpp"

namespace idsrag::remote {

using nlohmann::json;

Endpoint Endpoint::from_json(const json& doc) {
    Endpoint e;
    e.url = doc.at("url").get<std::string>();
    e.timeout_ms = doc.value("timeout_ms", e.timeout_ms);
    e.retries = doc.value("retries", e.retries);
    if (e.timeout_ms <= 0) throw Error("endpoint: timeout_ms must be positive");
    if (e.retries < 0) throw Error("endpoint: retries must be non-negative");
    parse_url(e.url);
    return e;
}

json Endpoint::to_json() const { return {{"url", url}, {"timeout_ms", timeout_ms}, {"retries", retries}}; }

ParsedUrl parse_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw Error("endpoint url lacks a scheme: " + url);
    const std::string scheme = url.substr(0, scheme_end);
    if (scheme != "http") throw Error("endpoint url must use http: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    ParsedUrl p;
    p.origin = url.substr(0, path_start);
    p.path = path_start == std::string::npos ? "/" : url.substr(path_start);
    if (p.origin.size() <= scheme_end + 3) throw Error("endpoint url lacks a host: " + url);
    return p;
}

json post_json(const Endpoint& endpoint, const json& body) {
    const auto url = parse_url(endpoint.url);
    httplib::Client client(url.origin);
    const auto secs = endpoint.timeout_ms / 1000;
    const auto usecs = (endpoint.timeout_ms % 1000) * 1000;
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    const std::string payload = body.dump();
    std::string last_error;
    for (int attempt = 0; attempt <= endpoint.retries; ++attempt) {
        auto res = client.Post(url.path, payload, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 500) {
            last_error = "server error " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200) throw Error(endpoint.url + ": HTTP " + std::to_string(res->status));
        try {
            return json::parse(res->body);
        } catch (const json::exception& e) {
            throw Error(endpoint.url + ": malformed reply: " + e.what());
        }
    }
    throw Error(endpoint.url + ": " + last_error + " after " + std::to_string(endpoint.retries + 1) + " attempts");
}

HttpEmbeddingProvider::HttpEmbeddingProvider(Endpoint endpoint, std::size_t width, bool deterministic)
    : endpoint_(std::move(endpoint)), width_(width), deterministic_(deterministic) {
    if (width_ == 0) throw Error("http embedding: width must be positive");
}

retrieval::EmbeddingVector HttpEmbeddingProvider::embed(std::string_view text) const {
    const json reply = post_json(endpoint_, {{"text", text}});
    retrieval::EmbeddingVector v;
    v.provider_id = id();
    try {
        v.values = reply.at("embedding").get<std::vector<double>>();
    } catch (const json::exception& e) {
        throw Error("http embedding: reply lacks an embedding array: " + std::string(e.what()));
    }
    if (v.values.size() != width_) {
        throw Error("http embedding: width " + std::to_string(v.values.size()) + ", expected " + std::to_string(width_));
    }
    return v;
}

double HttpRerankScorer::score(std::string_view query, std::string_view chunk_text) const {
    const json reply = post_json(endpoint_, {{"query", query}, {"text", chunk_text}});
    double s = 0.0;
    try {
        s = reply.at("score").get<double>();
    } catch (const json::exception& e) {
        throw Error("http rerank: reply lacks a score: " + std::string(e.what()));
    }
    if (!std::isfinite(s) || s < 0.0 || s > 1.0) throw Error("http rerank: score outside [0, 1]");
    return s;
}

HttpGenerationClient::HttpGenerationClient(Endpoint endpoint, std::string model)
    : endpoint_(std::move(endpoint)), model_(std::move(model)) {}

promptgen::GenerationResponse HttpGenerationClient::generate(const promptgen::GenerationRequest& request) const {
    const json reply = post_json(endpoint_, {{"model", request.model.empty() ? model_ : request.model},
                                             {"prompt", request.prompt},
                                             {"max_length", request.max_length},
                                             {"temperature", request.temperature}});
    promptgen::GenerationResponse r;
    try {
        r.text = reply.at("text").get<std::string>();
    } catch (const json::exception& e) {
        throw Error("http generation: reply lacks text: " + std::string(e.what()));
    }
    r.word_count = reply.value("word_count", text::word_count(r.text));
    r.token_count = reply.value("token_count", text::tokenize(r.text).size());
    return r;
}

}  // namespace idsrag::remote
