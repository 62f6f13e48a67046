#include "idsrag/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <semaphore>
#include <sstream>
#include <thread>

#include "idsrag/text.hpp"

namespace idsrag::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(ModeSet m) {
    switch (m) {
    case ModeSet::Rag: return "rag";
    case ModeSet::Vanilla: return "vanilla";
    case ModeSet::Both: return "both";
    }
    return "?";
}

ModeSet parse_modes(std::string_view text) {
    const auto t = lowercase(trim(text));
    if (t == "rag") return ModeSet::Rag;
    if (t == "vanilla") return ModeSet::Vanilla;
    if (t == "both") return ModeSet::Both;
    throw Error("unknown mode set: " + std::string(text));
}

std::vector<promptgen::PromptMode> expand_modes(ModeSet m) {
    switch (m) {
    case ModeSet::Rag: return {promptgen::PromptMode::Rag};
    case ModeSet::Vanilla: return {promptgen::PromptMode::Vanilla};
    case ModeSet::Both: return {promptgen::PromptMode::Vanilla, promptgen::PromptMode::Rag};
    }
    return {};
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

std::optional<remote::Endpoint> endpoint_of(const json& doc) {
    if (!doc.contains("endpoint") || doc.at("endpoint").is_null()) return std::nullopt;
    return remote::Endpoint::from_json(doc.at("endpoint"));
}

void put_endpoint(json& doc, const std::optional<remote::Endpoint>& e) {
    if (e) doc["endpoint"] = e->to_json();
}

fs::path resolve(const json& doc, const char* key, const fs::path& base) {
    if (!doc.contains(key) || doc.at(key).is_null()) return {};
    const fs::path p = doc.at(key).get<std::string>();
    if (p.empty()) return {};
    return p.is_absolute() ? p : base / p;
}

}  // namespace

EmbeddingConfig EmbeddingConfig::from_json(const json& doc) {
    EmbeddingConfig c;
    c.kind = doc.value("kind", c.kind);
    c.width = doc.value("width", c.width);
    c.seed = doc.value("seed", c.seed);
    c.char_ngrams = doc.value("char_ngrams", c.char_ngrams);
    c.endpoint = endpoint_of(doc);
    return c;
}

json EmbeddingConfig::to_json() const {
    json doc{{"kind", kind}, {"width", width}, {"seed", seed}, {"char_ngrams", char_ngrams}};
    put_endpoint(doc, endpoint);
    return doc;
}

RerankConfig RerankConfig::from_json(const json& doc) {
    RerankConfig c;
    c.kind = doc.value("kind", c.kind);
    c.endpoint = endpoint_of(doc);
    return c;
}

json RerankConfig::to_json() const {
    json doc{{"kind", kind}};
    put_endpoint(doc, endpoint);
    return doc;
}

GeneratorConfig GeneratorConfig::from_json(const json& doc) {
    GeneratorConfig c;
    c.kind = doc.value("kind", c.kind);
    c.model = doc.value("model", c.model);
    c.max_words = doc.value("max_words", c.max_words);
    c.temperature = doc.value("temperature", c.temperature);
    c.concurrency = doc.value("concurrency", c.concurrency);
    c.endpoint = endpoint_of(doc);
    return c;
}

json GeneratorConfig::to_json() const {
    json doc{{"kind", kind},
             {"model", model},
             {"max_words", max_words},
             {"temperature", temperature},
             {"concurrency", concurrency}};
    put_endpoint(doc, endpoint);
    return doc;
}

PipelineConfig PipelineConfig::from_json(const json& doc, const fs::path& base_dir) {
    if (!doc.is_object()) throw ConfigError("pipeline config must be an object");
    if (!doc.contains("seed")) throw ConfigError("pipeline config: 'seed' must be given explicitly");
    PipelineConfig c;
    try {
        c.schema = resolve(doc, "schema", base_dir);
        c.stats = resolve(doc, "stats", base_dir);
        c.models = resolve(doc, "models", base_dir);
        c.kb = resolve(doc, "kb", base_dir);
        c.thesaurus = resolve(doc, "thesaurus", base_dir);
        c.ground_truth = resolve(doc, "ground_truth", base_dir);
        c.flows = resolve(doc, "flows", base_dir);
        if (auto out = resolve(doc, "output_dir", base_dir); !out.empty()) {
            c.output_dir = out;
        } else if (c.output_dir.is_relative()) {
            c.output_dir = base_dir / c.output_dir;
        }
        c.fallback_chunk_ids = doc.value("fallback_chunk_ids", std::vector<std::string>{});
        c.kb_version = doc.value("kb_version", std::string());
        c.dataset = doc.value("dataset", c.dataset);
        c.top_k_features = doc.value("top_k_features", c.top_k_features);
        c.retrieval_k = doc.value("retrieval_k", c.retrieval_k);
        c.modes = parse_modes(doc.value("modes", std::string("both")));
        c.seed = doc.at("seed").get<std::uint64_t>();
        c.embedding.seed = c.seed;
        c.token_embedding.seed = c.seed;
        if (doc.contains("embedding")) {
            json e = doc.at("embedding");
            if (!e.contains("seed")) e["seed"] = c.seed;
            c.embedding = EmbeddingConfig::from_json(e);
        }
        if (doc.contains("reranker")) c.reranker = RerankConfig::from_json(doc.at("reranker"));
        if (doc.contains("generator")) c.generator = GeneratorConfig::from_json(doc.at("generator"));
        if (doc.contains("token_embedding")) {
            json e = doc.at("token_embedding");
            if (!e.contains("seed")) e["seed"] = c.seed;
            c.token_embedding = EmbeddingConfig::from_json(e);
        }
        c.workers = doc.value("workers", c.workers);
        c.resume = doc.value("resume", c.resume);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("pipeline config: ") + e.what());
    }
    return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open pipeline config " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("pipeline config " + path.string() + ": " + e.what());
    }
    return from_json(doc, fs::absolute(path).parent_path());
}

json PipelineConfig::to_json() const {
    return {{"schema", schema.string()},
            {"stats", stats.string()},
            {"models", models.string()},
            {"kb", kb.string()},
            {"thesaurus", thesaurus.string()},
            {"ground_truth", ground_truth.string()},
            {"flows", flows.string()},
            {"output_dir", output_dir.string()},
            {"fallback_chunk_ids", fallback_chunk_ids},
            {"kb_version", kb_version},
            {"dataset", dataset},
            {"top_k_features", top_k_features},
            {"retrieval_k", retrieval_k},
            {"modes", to_string(modes)},
            {"embedding", embedding.to_json()},
            {"reranker", reranker.to_json()},
            {"generator", generator.to_json()},
            {"token_embedding", token_embedding.to_json()},
            {"workers", workers},
            {"seed", seed},
            {"resume", resume}};
}

void PipelineConfig::validate() const {
    const auto need = [](const fs::path& p, const char* what) {
        if (p.empty()) throw ConfigError(std::string("pipeline config: '") + what + "' is required");
        if (!fs::exists(p)) throw ConfigError(std::string("pipeline config: ") + what + " not found: " + p.string());
    };
    need(schema, "schema");
    need(stats, "stats");
    need(models, "models");
    need(kb, "kb");
    if (!thesaurus.empty()) need(thesaurus, "thesaurus");
    if (!ground_truth.empty()) need(ground_truth, "ground_truth");
    if (top_k_features < 1 || top_k_features > flowdata::kFeatureWidth) {
        throw ConfigError("pipeline config: top_k_features outside [1, 66]");
    }
    if (retrieval_k < 1 || retrieval_k > 5) throw ConfigError("pipeline config: retrieval_k outside [1, 5]");
    if (workers < 1) throw ConfigError("pipeline config: workers must be >= 1");
    if (generator.concurrency < 1 || generator.concurrency > 64) {
        throw ConfigError("pipeline config: generator concurrency outside [1, 64]");
    }
    if (generator.max_words < 1) throw ConfigError("pipeline config: generator max_words must be >= 1");
    for (const auto* e : {&embedding, &token_embedding}) {
        if (e->kind != "hash" && e->kind != "http") throw ConfigError("pipeline config: unknown embedding kind " + e->kind);
        if (e->kind == "http" && !e->endpoint) throw ConfigError("pipeline config: http embedding needs an endpoint");
    }
    if (reranker.kind != "jaccard" && reranker.kind != "http") {
        throw ConfigError("pipeline config: unknown reranker kind " + reranker.kind);
    }
    if (reranker.kind == "http" && !reranker.endpoint) throw ConfigError("pipeline config: http reranker needs an endpoint");
    if (generator.kind != "chunk-copy" && generator.kind != "echo" && generator.kind != "http") {
        throw ConfigError("pipeline config: unknown generator kind " + generator.kind);
    }
    if (generator.kind == "http" && !generator.endpoint) throw ConfigError("pipeline config: http generator needs an endpoint");
}

// ---------------------------------------------------------------------------
// Components

namespace {

std::shared_ptr<retrieval::EmbeddingProvider> make_embedder(const EmbeddingConfig& c) {
    if (c.kind == "http") return std::make_shared<remote::HttpEmbeddingProvider>(*c.endpoint, c.width);
    return std::make_shared<retrieval::HashEmbedder>(c.width, c.seed, c.char_ngrams);
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

std::map<ClassLabel, std::string> load_ground_truth(const fs::path& dir) {
    std::map<ClassLabel, std::string> out;
    for (ClassLabel c : kAllClasses) {
        const auto p = dir / (lowercase(to_string(c)) + ".txt");
        if (fs::exists(p)) out[c] = read_file(p);
    }
    if (out.empty()) throw ConfigError("ground truth directory " + dir.string() + " has no <class>.txt documents");
    return out;
}

Components Components::load(const PipelineConfig& config) {
    config.validate();
    Components c;
    try {
        c.schema = flowdata::FeatureSchema::load(config.schema);
        c.stats = flowdata::NormalizationStats::from_json(json::parse(read_file(config.stats)));
        c.ensemble = ensemble::Ensemble::load(config.models);
        c.ensemble.validate();
        c.kb = knowledge::load_kb(config.kb);
        if (!config.thesaurus.empty()) c.thesaurus = retrieval::ExpansionThesaurus::load(config.thesaurus);
        if (!config.ground_truth.empty()) c.ground_truth = load_ground_truth(config.ground_truth);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("loading artifacts: ") + e.what());
    }
    if (c.stats.mean.size() != c.schema.numeric_width()) {
        throw ConfigError("normalization stats cover " + std::to_string(c.stats.mean.size()) +
                          " features but schema " + c.schema.id + " has " + std::to_string(c.schema.numeric_width()));
    }
    for (const auto& m : c.ensemble.models) {
        if (m.config.input_dim != flowdata::kFeatureWidth) throw ConfigError("model input width is not 66");
    }
    if (!config.kb_version.empty() && c.kb.version_tag() != config.kb_version) {
        throw ConfigError("knowledge base version " + c.kb.version_tag() + " does not match " + config.kb_version);
    }
    c.embedder = make_embedder(config.embedding);
    if (config.reranker.kind == "http") {
        c.reranker = std::make_shared<remote::HttpRerankScorer>(*config.reranker.endpoint);
    } else {
        c.reranker = std::make_shared<retrieval::JaccardReranker>();
    }
    if (config.generator.kind == "http") {
        c.generator = std::make_shared<remote::HttpGenerationClient>(*config.generator.endpoint, config.generator.model);
    } else if (config.generator.kind == "echo") {
        c.generator = std::make_shared<promptgen::EchoClient>();
    } else {
        c.generator = std::make_shared<promptgen::ChunkCopyClient>();
    }
    c.token_embedder = make_embedder(config.token_embedding);
    return c;
}

// ---------------------------------------------------------------------------
// Outcomes

namespace {

json prediction_json(const ensemble::EnsemblePrediction& p) {
    return {{"class", to_string(p.predicted)},
            {"confidence", p.confidence},
            {"tier", ensemble::to_string(p.tier)},
            {"per_class_probs",
             {{"Benign", p.per_class_probs[0]}, {"DoS", p.per_class_probs[1]}, {"DDoS", p.per_class_probs[2]}}}};
}

json retrieval_json(const retrieval::RetrievalResult& r) {
    json ranked = json::array();
    for (const auto& c : r.ranked) {
        ranked.push_back({{"chunk_id", c.chunk_id},
                          {"bm25_norm", c.bm25_norm},
                          {"sem_sim", c.sem_sim},
                          {"fused", c.fused},
                          {"rerank", c.rerank ? json(*c.rerank) : json(nullptr)}});
    }
    return {{"expanded_query", r.expanded_query},
            {"ranked", ranked},
            {"candidate_count", r.candidate_count}};
}

}  // namespace

json ModeReport::to_json() const {
    json doc{{"mode", promptgen::to_string(mode)},
             {"prompt_hash", prompt_hash},
             {"text", raw_text},
             {"truncated", truncated}};
    if (sections) doc["report"] = sections->to_json();
    if (scores) {
        doc["scores"] = scores->to_json();
        doc["reference_class"] = reference_class;
    }
    if (!error.empty()) doc["error"] = error;
    return doc;
}

double StageTimings::stage_sum() const {
    return classify_ms + attribute_ms + retrieve_ms + prompt_ms + generate_ms + parse_ms + evaluate_ms;
}

json StageTimings::to_json() const {
    return {{"classify_ms", classify_ms}, {"attribute_ms", attribute_ms}, {"retrieve_ms", retrieve_ms},
            {"prompt_ms", prompt_ms},     {"generate_ms", generate_ms},   {"parse_ms", parse_ms},
            {"evaluate_ms", evaluate_ms}, {"total_ms", total_ms}};
}

bool FlowOutcome::ok() const {
    return error.empty() && std::all_of(reports.begin(), reports.end(), [](const auto& r) { return r.error.empty(); });
}

const ModeReport* FlowOutcome::report(promptgen::PromptMode mode) const {
    for (const auto& r : reports) {
        if (r.mode == mode) return &r;
    }
    return nullptr;
}

json FlowOutcome::to_json() const {
    json doc{{"index", index}, {"flow_id", flow_id}};
    doc["truth"] = truth ? json(std::string(to_string(*truth))) : json(nullptr);
    doc["prediction"] = prediction ? prediction_json(*prediction) : json(nullptr);
    json ev = json::array();
    for (const auto& e : evidence) ev.push_back(e.to_json());
    doc["evidence"] = ev;
    doc["query"] = query;
    doc["retrieved_chunks"] = retrieved_chunk_ids;
    doc["fallback_chunks"] = fallback_chunk_ids;
    doc["fallback_used"] = retrieval ? retrieval->fallback_used : false;
    doc["retrieval"] = retrieval ? retrieval_json(*retrieval) : json(nullptr);
    json reps = json::array();
    for (const auto& r : reports) reps.push_back(r.to_json());
    doc["reports"] = reps;
    doc["ok"] = ok();
    if (!error.empty()) doc["error"] = error;
    return doc;
}

std::string build_query(const ensemble::EnsemblePrediction& prediction,
                        std::span<const attribution::EvidenceItem> evidence, const flowdata::FlowRecord& flow) {
    std::string q = std::string(to_string(prediction.predicted));
    q += prediction.predicted == ClassLabel::Benign ? " traffic baseline monitoring" : " attack detection and mitigation";
    q += ". Indicators:";
    for (const auto& e : evidence) q += " " + e.description + " " + e.value_text + ", " + e.security_implication + ";";
    if (!flow.protocol.empty()) q += " protocol " + flow.protocol;
    q += " destination port " + std::to_string(flow.dst_port);
    return q;
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
    return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

}  // namespace

Pipeline::Pipeline(PipelineConfig config, Components components)
    : config_(std::move(config)), components_(std::move(components)) {
    auto& c = components_;
    if (!c.embedder || !c.reranker || !c.generator || !c.token_embedder) {
        throw ConfigError("pipeline: every provider must be set");
    }
    c.ensemble.validate();
    const bool parallel = config_.workers > 1;
    keepalive_ = {c.embedder, c.reranker, c.generator, c.token_embedder};
    if (parallel && !c.embedder->thread_safe()) {
        c.embedder = std::make_shared<retrieval::SerializedEmbeddingProvider>(*c.embedder);
    }
    if (parallel && !c.reranker->thread_safe()) {
        c.reranker = std::make_shared<retrieval::SerializedRerankScorer>(*c.reranker);
    }
    if (parallel && !c.token_embedder->thread_safe()) {
        c.token_embedder = std::make_shared<retrieval::SerializedEmbeddingProvider>(*c.token_embedder);
    }
    generator_ = c.generator;
    if (parallel && !generator_->thread_safe()) {
        generator_ = std::make_shared<promptgen::SerializedGenerationClient>(*c.generator);
    }
    token_embedder_ = c.token_embedder;
    const bool need_rag = config_.modes != ModeSet::Vanilla;
    if (need_rag) {
        retrieval::RetrievalOptions ro;
        ro.k = config_.retrieval_k;
        ro.fallback_chunk_ids = config_.fallback_chunk_ids;
        try {
            retriever_ = std::make_unique<retrieval::Retriever>(c.kb, *c.embedder, *c.reranker, c.thesaurus, ro);
        } catch (const std::exception& e) {
            throw ConfigError(std::string("building retrieval indexes: ") + e.what());
        }
    }
    gen_slots_ = std::make_unique<std::counting_semaphore<64>>(static_cast<std::ptrdiff_t>(config_.generator.concurrency));
}

void Pipeline::attribute(FlowOutcome& out, const flowdata::FeatureVector& raw, std::span<const double> x) const {
    const auto& schema = components_.schema;
    const auto importance = attribution::gradient_importance(components_.ensemble, x, *out.prediction);
    const std::size_t k = config_.top_k_features;
    std::vector<std::size_t> indices;
    if (!schema.override_features.empty()) {
        indices = attribution::override_indices(schema, k);
        if (indices.size() < k) {
            for (std::size_t i : attribution::select_top_k(importance, importance.importance.size())) {
                if (indices.size() == k) break;
                if (std::find(indices.begin(), indices.end(), i) == indices.end()) indices.push_back(i);
            }
        }
    } else {
        indices = attribution::select_top_k(importance, k);
    }
    const auto selected = attribution::describe_selection(indices, raw, importance, schema);
    out.evidence = attribution::interpret_features(selected, schema);
}

FlowOutcome Pipeline::classify(const flowdata::FlowRecord& flow, std::size_t index) const {
    FlowOutcome out;
    out.index = index;
    out.flow_id = flow.flow_id;
    out.truth = flow.label;
    const auto start = Clock::now();
    try {
        auto t = Clock::now();
        flowdata::EncodeDiagnostics diag;
        const auto raw = flowdata::encode_features(flow, components_.schema, &diag);
        const auto norm = flowdata::apply_normalizer(components_.stats, raw);
        out.prediction = ensemble::ensemble_predict(norm.values, components_.ensemble);
        out.timings.classify_ms = elapsed_ms(t);
        t = Clock::now();
        attribute(out, raw, norm.values);
        out.timings.attribute_ms = elapsed_ms(t);
    } catch (const std::exception& e) {
        out.error = std::string("classification: ") + e.what();
    }
    out.timings.total_ms = elapsed_ms(start);
    return out;
}

FlowOutcome Pipeline::process(const flowdata::FlowRecord& flow, std::size_t index) const {
    const auto start = Clock::now();
    FlowOutcome out = classify(flow, index);
    if (!out.error.empty()) return out;

    const auto modes = expand_modes(config_.modes);
    out.query = build_query(*out.prediction, out.evidence, flow);
    std::vector<promptgen::RetrievedChunk> retrieved;
    std::string retrieval_error;
    if (retriever_) {
        const auto t = Clock::now();
        try {
            out.retrieval = retriever_->retrieve(out.query, config_.retrieval_k);
            const auto& kb = components_.kb;
            for (const auto& c : out.retrieval->ranked) {
                out.retrieved_chunk_ids.push_back(c.chunk_id);
                retrieved.push_back({c.chunk_id, kb.at(c.chunk).citation_label, kb.at(c.chunk).text});
            }
            for (auto i : out.retrieval->fallback_chunks) {
                out.fallback_chunk_ids.push_back(kb.at(i).chunk_id);
                retrieved.push_back({kb.at(i).chunk_id, kb.at(i).citation_label, kb.at(i).text});
            }
        } catch (const std::exception& e) {
            retrieval_error = std::string("retrieval: ") + e.what();
        }
        out.timings.retrieve_ms = elapsed_ms(t);
    }

    const auto ctx = promptgen::DetectionContext::from_prediction(*out.prediction, config_.dataset);
    const auto meta = promptgen::FlowMetadata::from_record(flow);
    const promptgen::GenerationLimits limits{config_.generator.max_words, config_.generator.temperature};
    for (auto mode : modes) {
        ModeReport rep;
        rep.mode = mode;
        try {
            if (mode == promptgen::PromptMode::Rag && !retrieval_error.empty()) throw Error(retrieval_error);
            auto t = Clock::now();
            const auto prompt = promptgen::build_prompt(
                ctx, meta, out.evidence,
                mode == promptgen::PromptMode::Rag ? std::span<const promptgen::RetrievedChunk>(retrieved)
                                                   : std::span<const promptgen::RetrievedChunk>(),
                mode, config_.top_k_features);
            rep.prompt_hash = prompt.hash();
            out.timings.prompt_ms += elapsed_ms(t);

            t = Clock::now();
            promptgen::GeneratedReport gen;
            {
                gen_slots_->acquire();
                try {
                    gen = promptgen::generate_report(prompt, *generator_, limits, audit_.get(), out.flow_id);
                } catch (...) {
                    gen_slots_->release();
                    throw;
                }
                gen_slots_->release();
            }
            rep.raw_text = gen.text;
            rep.truncated = gen.truncated;
            out.timings.generate_ms += elapsed_ms(t);

            t = Clock::now();
            rep.sections = promptgen::parse_report(rep.raw_text);
            out.timings.parse_ms += elapsed_ms(t);

            const ClassLabel ref = out.truth.value_or(out.prediction->predicted);
            if (auto it = components_.ground_truth.find(ref); it != components_.ground_truth.end()) {
                t = Clock::now();
                std::string candidate;
                for (const auto& s : rep.sections->sections) candidate += s + "\n";
                rep.scores = evalkit::score_report(candidate, it->second, *token_embedder_);
                rep.reference_class = std::string(to_string(ref));
                out.timings.evaluate_ms += elapsed_ms(t);
            }
        } catch (const std::exception& e) {
            rep.error = e.what();
        }
        out.reports.push_back(std::move(rep));
    }
    out.timings.total_ms = elapsed_ms(start);
    return out;
}

std::vector<std::string> completed_flow_ids(const fs::path& sidecar) {
    std::vector<std::string> ids;
    std::ifstream in(sidecar);
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        try {
            ids.push_back(json::parse(line).at("flow_id").get<std::string>());
        } catch (const std::exception&) {
            break;  // a torn final record ends the usable prefix
        }
    }
    return ids;
}

namespace {

std::string safe_name(std::string_view id) {
    std::string out;
    for (char c : id) out += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.' ? c : '_';
    return out;
}

void write_reports(const fs::path& dir, const FlowOutcome& o) {
    for (const auto& r : o.reports) {
        if (r.raw_text.empty()) continue;
        const std::string stem = safe_name(o.flow_id) + "." + std::string(promptgen::to_string(r.mode));
        std::ofstream txt(dir / (stem + ".txt"));
        txt << r.raw_text;
        json side{{"flow_id", o.flow_id},
                  {"mode", promptgen::to_string(r.mode)},
                  {"fallback_used", o.retrieval ? o.retrieval->fallback_used : false},
                  {"confidence_tier", o.prediction ? std::string(ensemble::to_string(o.prediction->tier)) : ""},
                  {"truncated", r.truncated}};
        if (r.sections) {
            side["sections"] = r.sections->to_json()["sections"];
            side["citations"] = r.sections->citations;
            side["word_count"] = r.sections->word_count;
        }
        if (!r.error.empty()) side["error"] = r.error;
        std::ofstream js(dir / (stem + ".json"));
        js << side.dump(2) << '\n';
    }
}

}  // namespace

std::vector<FlowOutcome> Pipeline::run(std::span<const flowdata::FlowRecord> flows, const fs::path& output_dir) const {
    std::size_t first = 0;
    std::ofstream sidecar, timings;
    fs::path report_dir;
    if (!output_dir.empty()) {
        fs::create_directories(output_dir);
        report_dir = output_dir / "reports";
        fs::create_directories(report_dir);
        const auto sidecar_path = output_dir / "outcomes.jsonl";
        const auto timings_path = output_dir / "timings.jsonl";
        if (config_.resume && fs::exists(sidecar_path)) {
            const auto done = completed_flow_ids(sidecar_path);
            if (done.size() > flows.size()) throw ConfigError("resume: sidecar holds more flows than the input");
            for (std::size_t i = 0; i < done.size(); ++i) {
                if (done[i] != flows[i].flow_id) {
                    throw ConfigError("resume: sidecar flow " + done[i] + " does not match input flow " + flows[i].flow_id);
                }
            }
            // Rewrite the intact prefix so a torn record cannot survive.
            std::vector<std::string> keep;
            {
                std::ifstream in(sidecar_path);
                std::string line;
                while (keep.size() < done.size() && std::getline(in, line)) {
                    if (!trim(line).empty()) keep.push_back(line);
                }
            }
            std::ofstream rewrite(sidecar_path, std::ios::trunc);
            for (const auto& l : keep) rewrite << l << '\n';
            first = done.size();
            sidecar.open(sidecar_path, std::ios::app);
            timings.open(timings_path, std::ios::app);
        } else {
            sidecar.open(sidecar_path, std::ios::trunc);
            timings.open(timings_path, std::ios::trunc);
            fs::remove(output_dir / "audit.jsonl");
        }
        if (!sidecar || !timings) throw Error("cannot write outcomes under " + output_dir.string());
        audit_ = std::make_unique<promptgen::AuditLog>(output_dir / "audit.jsonl");
    }

    const std::size_t pending = flows.size() - first;
    std::vector<std::optional<FlowOutcome>> slots(pending);
    std::vector<FlowOutcome> results;
    results.reserve(pending);
    std::mutex mutex;
    std::size_t next_to_write = 0;
    std::atomic<std::size_t> next{0};

    const auto flush_ready = [&] {
        while (next_to_write < pending && slots[next_to_write]) {
            auto& o = *slots[next_to_write];
            if (sidecar.is_open()) {
                sidecar << o.to_json().dump() << '\n';
                sidecar.flush();
                json t = o.timings.to_json();
                t["flow_id"] = o.flow_id;
                timings << t.dump() << '\n';
                timings.flush();
                write_reports(report_dir, o);
            }
            results.push_back(std::move(o));
            slots[next_to_write].reset();
            ++next_to_write;
        }
    };
    const auto worker = [&] {
        for (std::size_t i = next++; i < pending; i = next++) {
            FlowOutcome o = process(flows[first + i], first + i);
            std::lock_guard lock(mutex);
            slots[i] = std::move(o);
            flush_ready();
        }
    };
    const std::size_t nthreads = std::min(config_.workers, std::max<std::size_t>(pending, 1));
    if (nthreads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    return results;
}

// ---------------------------------------------------------------------------
// Summaries

json RunSummary::to_json() const {
    json doc{{"flows", flows}, {"failed", failed}, {"fallback_count", fallback_count}};
    json scores = json::object();
    for (const auto& [mode, values] : mean_scores) {
        json row = json::object();
        for (std::size_t i = 0; i < values.size(); ++i) row[evalkit::kSummaryRows[i]] = values[i];
        scores[mode] = row;
    }
    doc["mean_scores"] = scores;
    json cites = json::object();
    for (const auto& [mode, c] : citations) cites[mode] = c.to_json();
    doc["citations"] = cites;
    doc["rouge1_wilcoxon"] = rouge1_wilcoxon ? rouge1_wilcoxon->to_json() : json(nullptr);
    return doc;
}

RunSummary summarize(std::span<const FlowOutcome> outcomes) {
    RunSummary s;
    s.flows = outcomes.size();
    std::map<std::string, std::pair<std::array<double, 5>, std::size_t>> sums;
    std::map<std::string, std::vector<promptgen::ReportSections>> parsed;
    std::vector<double> rag_r1, van_r1;
    for (const auto& o : outcomes) {
        if (!o.ok()) ++s.failed;
        if (o.retrieval && o.retrieval->fallback_used) ++s.fallback_count;
        for (const auto& r : o.reports) {
            const std::string mode(promptgen::to_string(r.mode));
            if (r.sections) parsed[mode].push_back(*r.sections);
            if (!r.scores) continue;
            auto& [acc, n] = sums[mode];
            const auto v = evalkit::summary_values(*r.scores);
            for (std::size_t i = 0; i < v.size(); ++i) acc[i] += v[i];
            ++n;
        }
        const auto* rag = o.report(promptgen::PromptMode::Rag);
        const auto* van = o.report(promptgen::PromptMode::Vanilla);
        if (rag && van && rag->scores && van->scores) {
            rag_r1.push_back(rag->scores->rouge.rouge1.f1);
            van_r1.push_back(van->scores->rouge.rouge1.f1);
        }
    }
    for (auto& [mode, entry] : sums) {
        auto [acc, n] = entry;
        for (auto& x : acc) x /= static_cast<double>(n);
        s.mean_scores[mode] = acc;
    }
    for (const auto& [mode, reports] : parsed) s.citations[mode] = evalkit::citation_stats(reports);
    if (!rag_r1.empty()) {
        try {
            s.rouge1_wilcoxon = evalkit::wilcoxon_signed_rank(rag_r1, van_r1);
        } catch (const Error&) {
            // every pair tied
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Manifest evaluation

std::vector<ManifestEntry> load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open manifest " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("manifest " + path.string() + ": " + e.what());
    }
    const json& list = doc.is_object() ? doc.at("entries") : doc;
    const fs::path base = fs::absolute(path).parent_path();
    std::vector<ManifestEntry> out;
    for (const auto& item : list) {
        ManifestEntry e;
        e.flow_id = item.at("flow_id").get<std::string>();
        e.vanilla = resolve(item, "vanilla", base);
        e.rag = resolve(item, "rag", base);
        e.ground_truth = resolve(item, "ground_truth", base);
        if (e.vanilla.empty() || e.rag.empty() || e.ground_truth.empty()) {
            throw ConfigError("manifest entry " + e.flow_id + " needs vanilla, rag and ground_truth paths");
        }
        out.push_back(std::move(e));
    }
    return out;
}

namespace {

std::string report_body(const std::string& raw) {
    try {
        const auto sections = promptgen::parse_report(raw);
        std::string body;
        for (const auto& s : sections.sections) body += s + "\n";
        return body;
    } catch (const promptgen::ReportParseError&) {
        return raw;
    }
}

}  // namespace

ManifestEvaluation evaluate_manifest(std::span<const ManifestEntry> entries,
                                     const retrieval::EmbeddingProvider& token_embedder) {
    ManifestEvaluation ev;
    for (const auto& e : entries) {
        const auto reference = read_file(e.ground_truth);
        ev.flow_ids.push_back(e.flow_id);
        ev.vanilla.push_back(evalkit::score_report(report_body(read_file(e.vanilla)), reference, token_embedder));
        ev.rag.push_back(evalkit::score_report(report_body(read_file(e.rag)), reference, token_embedder));
    }
    return ev;
}

void ManifestEvaluation::write_table(std::ostream& out) const {
    out << "flow_id,mode";
    for (const char* name : evalkit::kSummaryRows) out << ",\"" << name << "\"";
    out << '\n';
    char buf[32];
    for (std::size_t i = 0; i < flow_ids.size(); ++i) {
        for (const auto* set : {&vanilla, &rag}) {
            out << flow_ids[i] << ',' << (set == &vanilla ? "vanilla" : "rag");
            for (double v : evalkit::summary_values((*set)[i])) {
                std::snprintf(buf, sizeof buf, "%.6f", v);
                out << ',' << buf;
            }
            out << '\n';
        }
    }
}

json ManifestEvaluation::summary() const {
    json rows = json::array();
    for (std::size_t m = 0; m < evalkit::kSummaryRows.size(); ++m) {
        std::vector<double> v, r;
        for (std::size_t i = 0; i < flow_ids.size(); ++i) {
            v.push_back(evalkit::summary_values(vanilla[i])[m]);
            r.push_back(evalkit::summary_values(rag[i])[m]);
        }
        const auto mean = [](const std::vector<double>& x) {
            double s = 0.0;
            for (double d : x) s += d;
            return x.empty() ? 0.0 : s / static_cast<double>(x.size());
        };
        const double mv = mean(v), mr = mean(r);
        json row{{"metric", evalkit::kSummaryRows[m]}, {"vanilla", mv}, {"rag", mr}};
        row["relative_change"] = mv > 0 ? json((mr - mv) / mv) : json(nullptr);
        try {
            row["wilcoxon"] = evalkit::wilcoxon_signed_rank(r, v).to_json();
        } catch (const Error&) {
            row["wilcoxon"] = nullptr;
        }
        rows.push_back(row);
    }
    return {{"reports", flow_ids.size()}, {"averaging", "per-report mean"}, {"rows", rows}};
}

}  // namespace idsrag::pipeline
