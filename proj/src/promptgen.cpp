#include "idsrag/promptgen.hpp"

#include <algorithm>
#include <cstdio>
#include <regex>
#include <sstream>

#include "idsrag/text.hpp"

namespace idsrag::promptgen {

using nlohmann::json;

std::string_view to_string(PromptMode mode) { return mode == PromptMode::Rag ? "rag" : "vanilla"; }

PromptMode parse_mode(std::string_view text) {
    const auto t = lowercase(trim(text));
    if (t == "rag") return PromptMode::Rag;
    if (t == "vanilla") return PromptMode::Vanilla;
    throw Error("unknown prompt mode: " + std::string(text));
}

void DetectionContext::validate() const {
    if (ensemble::assign_tier(confidence_score) != confidence_tier) {
        throw Error("detection context: tier " + std::string(ensemble::to_string(confidence_tier)) +
                    " does not match confidence " + std::to_string(confidence_score));
    }
}

DetectionContext DetectionContext::from_prediction(const ensemble::EnsemblePrediction& prediction,
                                                   std::string dataset) {
    return {prediction.predicted, prediction.confidence, prediction.tier, std::move(dataset)};
}

FlowMetadata FlowMetadata::from_record(const flowdata::FlowRecord& r) {
    return {r.flow_id, r.timestamp, r.src_ip, r.src_port, r.dst_ip, r.dst_port, r.protocol};
}

std::string_view system_instruction() {
    return "You are an experienced security operations analyst. Write a structured incident response "
           "report grounded in the evidence below. Reference NIST Special Publications and MITRE ATT&CK "
           "technique identifiers explicitly wherever they apply.";
}

std::string PromptDocument::text() const { return "SYSTEM:\n" + system_instruction + "\n\nUSER:\n" + user_text; }

std::string PromptDocument::hash() const { return to_hex(fnv1a64(text())); }

namespace {

std::string join_names(const std::vector<std::string>& names) {
    std::string out;
    for (const auto& n : names) out += (out.empty() ? "" : ", ") + n;
    return out;
}

// Collapses whitespace runs so a chunk occupies a single prompt line.
std::string single_line(std::string_view text) {
    std::string out;
    bool space = false;
    for (char c : trim(text)) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            space = true;
            continue;
        }
        if (space && !out.empty()) out += ' ';
        space = false;
        out += c;
    }
    return out;
}

std::string fixed4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

}  // namespace

TemplateError::TemplateError(std::vector<std::string> missing)
    : Error("unbound template variables: " + join_names(missing)), missing_(std::move(missing)) {}

std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& vars) {
    std::string out;
    std::vector<std::string> missing;
    std::size_t i = 0;
    while (i < tmpl.size()) {
        const auto open = tmpl.find('{', i);
        if (open == std::string_view::npos) {
            out.append(tmpl.substr(i));
            break;
        }
        const auto close = tmpl.find('}', open + 1);
        if (close == std::string_view::npos) throw Error("template: unterminated placeholder");
        out.append(tmpl.substr(i, open - i));
        const std::string name(tmpl.substr(open + 1, close - open - 1));
        if (auto it = vars.find(name); it != vars.end()) {
            out += it->second;
        } else if (std::find(missing.begin(), missing.end(), name) == missing.end()) {
            missing.push_back(name);
        }
        i = close + 1;
    }
    if (!missing.empty()) throw TemplateError(std::move(missing));
    return out;
}

std::string prompt_template(std::size_t k) {
    std::string t =
        "[DETECTION CONTEXT]\n"
        "  Attack class: {attack_class}\n"
        "  Confidence: {confidence_score} ({confidence_tier})\n"
        "  Dataset: {dataset}\n"
        "\n"
        "[NETWORK FLOW METADATA]\n"
        "  Flow ID: {flow_id}\n"
        "  Timestamp: {timestamp}\n"
        "  Source: {src_ip}:{src_port}\n"
        "  Destination: {dst_ip}:{dst_port}\n"
        "  Protocol: {protocol}\n"
        "\n"
        "[KEY ANOMALOUS INDICATORS]\n"
        "  Top-{K} features ranked by attribution for this decision:\n";
    for (std::size_t i = 1; i <= k; ++i) {
        const std::string p = "feature_" + std::to_string(i);
        t += "    Feature " + std::to_string(i) + ": {" + p + "_name} = {" + p + "_value}\n";
        t += "      -> {" + p + "_interpretation}\n";
    }
    t += "\n";
    t += kKnowledgeHeader;
    t += "\n{retrieved_chunks}\n\n";
    t += kRequestHeader;
    t += "\n  Generate a structured report with sections:\n";
    for (std::size_t i = 0; i < kSectionNames.size(); ++i) {
        t += "    " + std::to_string(i + 1) + ". " + kSectionNames[i] + "\n";
    }
    return t;
}

PromptDocument build_prompt(const DetectionContext& ctx, const FlowMetadata& meta,
                            std::span<const attribution::EvidenceItem> evidence,
                            std::span<const RetrievedChunk> retrieved, PromptMode mode, std::size_t k) {
    if (evidence.size() != k) {
        throw Error("build_prompt: expected " + std::to_string(k) + " evidence items, got " +
                    std::to_string(evidence.size()));
    }
    if (mode == PromptMode::Rag && retrieved.empty()) throw Error("build_prompt: rag mode needs retrieved chunks");
    ctx.validate();

    std::map<std::string, std::string> vars{
        {"attack_class", std::string(to_string(ctx.attack_class))},
        {"confidence_score", fixed4(ctx.confidence_score)},
        {"confidence_tier", std::string(ensemble::to_string(ctx.confidence_tier))},
        {"dataset", ctx.dataset},
        {"flow_id", meta.flow_id},
        {"timestamp", meta.timestamp},
        {"src_ip", meta.src_ip},
        {"src_port", std::to_string(meta.src_port)},
        {"dst_ip", meta.dst_ip},
        {"dst_port", std::to_string(meta.dst_port)},
        {"protocol", meta.protocol},
        {"K", std::to_string(k)},
    };
    for (std::size_t i = 0; i < evidence.size(); ++i) {
        const std::string p = "feature_" + std::to_string(i + 1);
        vars[p + "_name"] = evidence[i].feature_name;
        vars[p + "_value"] = evidence[i].value_text;
        vars[p + "_interpretation"] = single_line(evidence[i].rendered);
    }
    PromptDocument doc;
    doc.mode = mode;
    doc.evidence_count = evidence.size();
    doc.system_instruction = std::string(system_instruction());
    if (mode == PromptMode::Rag) {
        for (const auto& c : retrieved) {
            if (!doc.knowledge_body.empty()) doc.knowledge_body += '\n';
            doc.knowledge_body += "[source: " + c.citation_label + "] " + single_line(c.text);
        }
    }
    vars["retrieved_chunks"] = doc.knowledge_body;
    doc.user_text = render_template(prompt_template(k), vars);
    return doc;
}

GenerationResponse EchoClient::generate(const GenerationRequest& request) const {
    return {request.prompt, text::word_count(request.prompt), text::tokenize(request.prompt).size()};
}

namespace {

struct PromptParts {
    std::string context;
    std::string confidence;
    std::vector<std::string> indicators;
    std::vector<std::string> interpretations;
    std::vector<std::pair<std::string, std::string>> chunks;  // label, text
};

PromptParts split_prompt(std::string_view prompt) {
    PromptParts parts;
    std::istringstream in{std::string(prompt)};
    std::string line;
    std::string block;
    while (std::getline(in, line)) {
        const std::string t(trim(line));
        if (t.size() > 2 && t.front() == '[' && t.back() == ']' && t.find(' ') != std::string::npos &&
            t.rfind("[source:", 0) != 0) {
            block = t;
            continue;
        }
        if (t.empty()) continue;
        if (block == "[DETECTION CONTEXT]") {
            if (t.rfind("Attack class:", 0) == 0) parts.context = t.substr(13);
            if (t.rfind("Confidence:", 0) == 0) parts.confidence = t.substr(11);
        } else if (block == "[KEY ANOMALOUS INDICATORS]") {
            if (t.rfind("Feature ", 0) == 0) {
                const auto colon = t.find(':');
                parts.indicators.push_back(std::string(trim(t.substr(colon + 1))));
            } else if (t.rfind("->", 0) == 0) {
                parts.interpretations.push_back(std::string(trim(t.substr(2))));
            }
        } else if (block == kKnowledgeHeader) {
            if (t.rfind("[source: ", 0) == 0) {
                const auto close = t.find(']');
                if (close != std::string::npos) {
                    parts.chunks.emplace_back(t.substr(9, close - 9), std::string(trim(t.substr(close + 1))));
                }
            }
        }
    }
    for (auto* s : {&parts.context, &parts.confidence}) *s = std::string(trim(*s));
    return parts;
}

std::string first_words(std::string_view text, std::size_t n) { return truncate_words(text, n); }

}  // namespace

GenerationResponse ChunkCopyClient::generate(const GenerationRequest& request) const {
    const auto parts = split_prompt(request.prompt);
    std::array<std::string, 5> body;
    body[0] = "The flow was classified as " + parts.context + ".";
    for (const auto& interp : parts.interpretations) body[0] += " " + interp + ".";
    for (const auto& ind : parts.indicators) body[1] += (body[1].empty() ? "- " : "\n- ") + ind;
    body[2] = "Ensemble confidence " + parts.confidence + ".";

    if (parts.chunks.empty()) {
        body[3] = "Observed indicators are consistent with " + parts.context + " activity.";
        body[4] = "Review the listed indicators and apply standard incident handling for " + parts.context + ".";
    } else {
        // Remaining word budget is shared evenly among the copied chunks.
        std::size_t fixed = 5 * 3;
        for (std::size_t s = 0; s < 3; ++s) fixed += text::word_count(body[s]);
        const std::size_t budget = request.max_length > fixed ? request.max_length - fixed : 0;
        const std::size_t per_chunk = std::max<std::size_t>(1, budget / (parts.chunks.size() + 1));
        const std::size_t half = (parts.chunks.size() + 1) / 2;
        for (std::size_t i = 0; i < parts.chunks.size(); ++i) {
            const auto& [label, chunk] = parts.chunks[i];
            // Reserve room for the "(source: label)" suffix.
            const std::size_t label_words = text::word_count(label) + 1;
            const std::size_t keep = per_chunk > label_words ? per_chunk - label_words : 1;
            const std::string entry = first_words(chunk, keep) + " (source: " + label + ")";
            auto& dst = i < half ? body[3] : body[4];
            dst += (dst.empty() ? "" : "\n") + entry;
        }
        if (body[4].empty()) body[4] = body[3];
    }

    std::string out;
    for (std::size_t s = 0; s < 5; ++s) {
        out += std::to_string(s + 1) + ". " + kSectionNames[s] + "\n" + body[s] + "\n\n";
    }
    return {out, text::word_count(out), text::tokenize(out).size()};
}

GenerationResponse SerializedGenerationClient::generate(const GenerationRequest& request) const {
    std::lock_guard lock(mutex_);
    return inner_.generate(request);
}

AuditLog::AuditLog(const std::filesystem::path& path) : file_(path, std::ios::app), sink_(&file_) {
    if (!file_) throw Error("audit log: cannot open " + path.string());
}

void AuditLog::record(std::string_view flow_id, std::string_view prompt_hash, std::string_view model_id,
                      std::string_view response) {
    const json rec{{"flow_id", flow_id}, {"prompt_hash", prompt_hash}, {"model_id", model_id}, {"response", response}};
    std::lock_guard lock(mutex_);
    *sink_ << rec.dump() << '\n';
    sink_->flush();
}

std::string truncate_words(std::string_view text, std::size_t max_words, bool* truncated) {
    std::size_t count = 0;
    bool in_word = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const bool space = std::isspace(static_cast<unsigned char>(text[i])) != 0;
        if (!space && !in_word) {
            if (count == max_words) {
                if (truncated) *truncated = true;
                return std::string(trim(text.substr(0, i)));
            }
            ++count;
        }
        in_word = !space;
    }
    if (truncated) *truncated = false;
    return std::string(text);
}

GeneratedReport generate_report(const PromptDocument& prompt, const GenerationClient& client,
                                const GenerationLimits& limits, AuditLog* audit, std::string_view flow_id) {
    GeneratedReport report;
    report.prompt_hash = prompt.hash();
    report.model_id = client.model_id();
    const GenerationRequest request{client.model_id(), prompt.text(), limits.max_words, limits.temperature};
    GenerationResponse response;
    try {
        response = client.generate(request);
    } catch (const std::exception& e) {
        throw GenerationError(report.prompt_hash, e.what());
    }
    report.text = truncate_words(response.text, limits.max_words, &report.truncated);
    report.word_count = text::word_count(report.text);
    if (audit) audit->record(flow_id, report.prompt_hash, report.model_id, report.text);
    return report;
}

nlohmann::json ReportSections::to_json() const {
    json s = json::object();
    for (std::size_t i = 0; i < sections.size(); ++i) s[kSectionNames[i]] = sections[i];
    return {{"sections", s}, {"word_count", word_count}, {"citations", citations}};
}

ReportParseError::ReportParseError(std::vector<std::string> missing, std::vector<std::string> duplicated)
    : Error([&] {
          std::string msg = "malformed report:";
          if (!missing.empty()) msg += " missing sections [" + join_names(missing) + "]";
          if (!duplicated.empty()) msg += " duplicate sections [" + join_names(duplicated) + "]";
          return msg;
      }()),
      missing_(std::move(missing)),
      duplicated_(std::move(duplicated)) {}

std::vector<std::string> extract_citations(std::string_view text) {
    static const std::regex pattern(R"((NIST SP 800-\d+)|\b(T\d{4}(?:\.\d{3})?)\b)");
    std::vector<std::string> out;
    const std::string s(text);
    for (auto it = std::sregex_iterator(s.begin(), s.end(), pattern); it != std::sregex_iterator(); ++it) {
        std::string c = it->str();
        if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(std::move(c));
    }
    return out;
}

namespace {

const std::regex& heading_pattern() {
    static const std::regex re(
        R"(^\s*#*\s*(?:\*\*|__)?\s*(?:\d+\s*[.)]\s*)?(?:\*\*|__)?\s*)"
        R"((rationale|key\s+indicators|confidence\s+assessment|threat\s+assessment|recommendations))"
        R"(\s*(?:\*\*|__)?\s*(?::\s*(?:\*\*|__)?\s*(.*))?$)",
        std::regex::icase);
    return re;
}

std::size_t section_index(std::string name) {
    name = lowercase(name);
    for (std::size_t i = 0; i < kSectionNames.size(); ++i) {
        const auto canon = lowercase(kSectionNames[i]);
        // Compare with internal whitespace collapsed.
        if (text::join(text::tokenize(name), " ") == text::join(text::tokenize(canon), " ")) return i;
    }
    return kSectionNames.size();
}

}  // namespace

ReportSections make_sections(std::array<std::string, 5> bodies) {
    ReportSections r;
    std::string all;
    for (std::size_t i = 0; i < bodies.size(); ++i) {
        r.word_count += text::word_count(bodies[i]);
        all += bodies[i];
        all += '\n';
        r.sections[i] = std::move(bodies[i]);
    }
    r.citations = extract_citations(all);
    return r;
}

ReportSections parse_report(std::string_view raw) {
    std::array<std::vector<std::string>, 5> lines;
    std::array<int, 5> seen{};
    int current = -1;
    std::vector<std::string> duplicated;
    std::istringstream in{std::string(raw)};
    std::string line;
    std::smatch m;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (std::regex_match(line, m, heading_pattern())) {
            const auto idx = section_index(m[1].str());
            if (seen[idx]++ == 1) duplicated.push_back(kSectionNames[idx]);
            current = static_cast<int>(idx);
            if (m[2].matched && !trim(m[2].str()).empty()) lines[idx].push_back(m[2].str());
            continue;
        }
        if (current >= 0) lines[static_cast<std::size_t>(current)].push_back(line);
    }
    std::vector<std::string> missing;
    for (std::size_t i = 0; i < 5; ++i) {
        if (!seen[i]) missing.push_back(kSectionNames[i]);
    }
    if (!missing.empty() || !duplicated.empty()) throw ReportParseError(std::move(missing), std::move(duplicated));
    std::array<std::string, 5> bodies;
    for (std::size_t i = 0; i < 5; ++i) bodies[i] = std::string(trim(text::join(lines[i], "\n")));
    return make_sections(std::move(bodies));
}

std::string render(const ReportSections& sections) {
    std::string out;
    for (std::size_t i = 0; i < sections.sections.size(); ++i) {
        out += std::to_string(i + 1) + ". " + kSectionNames[i] + "\n" + sections.sections[i] + "\n\n";
    }
    return out;
}

}  // namespace idsrag::promptgen
