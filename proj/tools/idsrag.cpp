#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>

#include <nlohmann/json.hpp>

#include "idsrag/pipeline.hpp"
#include "idsrag/synthetic.hpp"
#include "idsrag/training.hpp"

namespace {

using namespace idsrag;
using nlohmann::json;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitFlowFailures = 1;
constexpr int kExitConfig = 2;

struct UsageError : Error {
    using Error::Error;
};

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw pipeline::ConfigError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw pipeline::ConfigError(path.string() + ": " + e.what());
    }
}

std::vector<flowdata::FlowRecord> read_flows(const fs::path& csv, const flowdata::FeatureSchema& schema,
                                             std::size_t* row_errors = nullptr) {
    std::ifstream in(csv);
    if (!in) throw pipeline::ConfigError("cannot open " + csv.string());
    auto result = flowdata::load_flows(in, schema);
    for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
    for (const auto& e : result.errors) std::cerr << csv.string() << ':' << e.line << ": " << e.message << '\n';
    if (row_errors) *row_errors = result.errors.size();
    return std::move(result.records);
}

const flowdata::FlowRecord& find_flow(const std::vector<flowdata::FlowRecord>& flows, const std::string& id,
                                      std::size_t* index) {
    for (std::size_t i = 0; i < flows.size(); ++i) {
        if (flows[i].flow_id == id) {
            *index = i;
            return flows[i];
        }
    }
    throw pipeline::ConfigError("flow " + id + " not found in the input");
}

pipeline::PipelineConfig load_config(const fs::path& path, const std::optional<fs::path>& input) {
    auto config = pipeline::PipelineConfig::load(path);
    if (input) config.flows = *input;
    if (config.flows.empty()) throw pipeline::ConfigError("no flow CSV: set 'flows' in the config or pass --input");
    return config;
}

std::string pad(std::string s, std::size_t width) {
    if (s.size() < width) s.append(width - s.size(), ' ');
    return s;
}

// --------------------------------------------------------------------------

int cmd_preprocess(const fs::path& schema_path, const fs::path& input, const fs::path& out, std::uint64_t seed,
                   const std::vector<double>& ratios) {
    if (ratios.size() != 3) throw UsageError("--ratios takes exactly three values");
    const auto schema = flowdata::FeatureSchema::load(schema_path);
    std::size_t errors = 0;
    auto flows = read_flows(input, schema, &errors);
    const auto ds = flowdata::build_dataset(std::move(flows), schema, {ratios[0], ratios[1], ratios[2]}, seed);
    ds.save(out);
    std::array<std::size_t, kNumClasses> counts{};
    for (const auto& f : ds.flows) ++counts[index_of(*f.label)];
    std::cout << "flows " << ds.flows.size() << " (rejected " << errors << ")\n";
    for (ClassLabel c : kAllClasses) std::cout << "  " << pad(std::string(to_string(c)), 7) << counts[index_of(c)] << '\n';
    std::cout << "split train " << ds.split.train.size() << " validation " << ds.split.validation.size() << " test "
              << ds.split.test.size() << '\n';
    std::cout << "wrote " << out.string() << '\n';
    return kExitOk;
}

int cmd_train(const fs::path& dataset_dir, const std::string& cls, const fs::path& config_path,
              std::optional<fs::path> out) {
    const ClassLabel target = parse_class_label(cls);
    const json doc = read_json(config_path);
    if (!doc.contains("train") || !doc.at("train").contains("seed")) {
        throw pipeline::ConfigError("training config: 'train.seed' must be given explicitly");
    }
    const auto options = ensemble::HeadOptions::from_json(doc);
    const auto ds = flowdata::EncodedDataset::load(dataset_dir);
    const auto labels = ensemble::dataset_labels(ds);
    const auto train = ensemble::make_binary(ds.normalized, labels, ds.split.train, target);
    const auto val = ensemble::make_binary(ds.normalized, labels, ds.split.validation, target);
    const auto result = ensemble::train_head(train, val, target, options, [](const ensemble::EpochRecord& r) {
        std::fprintf(stderr, "epoch %3zu  train_loss %.5f  val_loss %.5f  val_macro_f1 %.4f%s\n", r.epoch,
                     r.train_loss, r.val_loss, r.val_macro_f1, r.improved ? "  *" : "");
    });
    const fs::path dir = out.value_or(dataset_dir / "models");
    fs::create_directories(dir);
    const std::string stem = lowercase(to_string(target));
    result.model.save(dir / (stem + ".model.json"));
    json history = json::array();
    for (const auto& e : result.history.epochs) history.push_back(e.to_json());
    std::ofstream(dir / (stem + ".history.json"))
        << json{{"selected_epoch", result.history.selected_epoch}, {"epochs", history}}.dump(2) << '\n';

    if (!ds.split.test.empty()) {
        const auto test = ensemble::make_binary(ds.normalized, labels, ds.split.test, target);
        const auto report = ensemble::evaluate_classifier(result.model, test);
        std::cout << report.to_json().dump(2) << '\n';
    }
    std::cout << "selected epoch " << result.history.selected_epoch << " of " << result.history.epochs_trained()
              << "; wrote " << (dir / (stem + ".model.json")).string() << '\n';
    return kExitOk;
}

int cmd_classify(const fs::path& models, const fs::path& input, const fs::path& out, const fs::path& schema_path,
                 const fs::path& stats_path) {
    const auto schema = flowdata::FeatureSchema::load(schema_path);
    const auto stats = flowdata::NormalizationStats::from_json(read_json(stats_path));
    if (stats.mean.size() != schema.numeric_width()) throw pipeline::ConfigError("stats do not match the schema");
    const auto ens = ensemble::Ensemble::load(models);
    std::size_t row_errors = 0;
    const auto flows = read_flows(input, schema, &row_errors);
    std::ofstream sink(out);
    if (!sink) throw pipeline::ConfigError("cannot write " + out.string());
    std::size_t failed = row_errors;
    for (const auto& f : flows) {
        json rec{{"flow_id", f.flow_id}};
        try {
            const auto x = flowdata::apply_normalizer(stats, flowdata::encode_features(f, schema));
            const auto p = ensemble::ensemble_predict(x.values, ens);
            rec["class"] = to_string(p.predicted);
            rec["confidence"] = p.confidence;
            rec["tier"] = ensemble::to_string(p.tier);
            rec["per_class_probs"] = p.per_class_probs;
            if (f.label) rec["truth"] = to_string(*f.label);
        } catch (const std::exception& e) {
            rec["error"] = e.what();
            ++failed;
        }
        sink << rec.dump() << '\n';
    }
    std::cout << "classified " << flows.size() - (failed - row_errors) << " of " << flows.size() << " flows; wrote "
              << out.string() << '\n';
    return failed ? kExitFlowFailures : kExitOk;
}

int cmd_explain(const std::string& flow_id, const fs::path& config_path, const std::optional<fs::path>& input,
                bool as_json) {
    auto config = load_config(config_path, input);
    config.modes = pipeline::ModeSet::Vanilla;
    auto components = pipeline::Components::load(config);
    const auto flows = read_flows(config.flows, components.schema);
    std::size_t index = 0;
    const auto& flow = find_flow(flows, flow_id, &index);
    const pipeline::Pipeline p(config, std::move(components));
    const auto outcome = p.classify(flow, index);
    if (!outcome.error.empty()) {
        std::cerr << outcome.error << '\n';
        return kExitFlowFailures;
    }
    if (as_json) {
        std::cout << outcome.to_json().dump(2) << '\n';
        return kExitOk;
    }
    const auto& pred = *outcome.prediction;
    std::printf("%s: %s (confidence %.4f, %s)\n", flow_id.c_str(), std::string(to_string(pred.predicted)).c_str(),
                pred.confidence, std::string(ensemble::to_string(pred.tier)).c_str());
    for (std::size_t i = 0; i < outcome.evidence.size(); ++i) {
        const auto& e = outcome.evidence[i];
        std::printf("%zu. %s = %s  (importance %.6g)\n   %s\n", i + 1, e.feature_name.c_str(), e.value_text.c_str(),
                    e.importance, e.rendered.c_str());
    }
    return kExitOk;
}

int cmd_ingest(const fs::path& docs, const fs::path& out, const std::string& version, std::size_t chunk_size,
               std::size_t overlap, bool no_snap) {
    knowledge::ChunkingOptions options;
    options.chunk_size = chunk_size;
    options.overlap = overlap;
    options.snap_to_sentences = !no_snap;
    const auto kb = knowledge::ingest_directory(docs, options, version);
    knowledge::save_kb(kb, out);
    std::set<std::string> doc_ids;
    for (const auto& c : kb.chunks()) doc_ids.insert(c.doc_id);
    std::cout << "documents " << doc_ids.size() << ", chunks " << kb.size() << ", avgdl " << kb.stats().avgdl
              << "; wrote " << out.string() << " (" << kb.version_tag() << ")\n";
    return kExitOk;
}

int cmd_retrieve(const fs::path& kb_path, const std::string& query, std::size_t k, std::uint64_t seed,
                 std::size_t width, const std::optional<fs::path>& thesaurus_path,
                 const std::vector<std::string>& fallback, bool as_json) {
    const auto kb = knowledge::load_kb(kb_path);
    const retrieval::HashEmbedder embedder(width, seed);
    const retrieval::JaccardReranker reranker;
    auto thesaurus = thesaurus_path ? retrieval::ExpansionThesaurus::load(*thesaurus_path)
                                    : retrieval::ExpansionThesaurus::cybersecurity_default();
    retrieval::RetrievalOptions options;
    options.fallback_chunk_ids = fallback;
    const retrieval::Retriever retriever(kb, embedder, reranker, std::move(thesaurus), options);
    const auto result = retriever.retrieve(query, k);
    if (as_json) {
        json ranked = json::array();
        for (const auto& c : result.ranked) {
            ranked.push_back({{"chunk_id", c.chunk_id},
                              {"citation", kb.at(c.chunk).citation_label},
                              {"bm25_norm", c.bm25_norm},
                              {"sem_sim", c.sem_sim},
                              {"fused", c.fused},
                              {"rerank", c.rerank.value_or(0.0)}});
        }
        json fb = json::array();
        for (auto i : result.fallback_chunks) fb.push_back(kb.at(i).chunk_id);
        std::cout << json{{"query", result.query},
                          {"expanded_query", result.expanded_query},
                          {"ranked", ranked},
                          {"fallback_used", result.fallback_used},
                          {"fallback_chunks", fb}}
                         .dump(2)
                  << '\n';
        return kExitOk;
    }
    std::cout << "expanded: " << result.expanded_query << '\n';
    for (std::size_t i = 0; i < result.ranked.size(); ++i) {
        const auto& c = result.ranked[i];
        std::printf("%zu. %-28s rerank %.4f  fused %.4f  [%s]\n", i + 1, c.chunk_id.c_str(), c.rerank.value_or(0.0),
                    c.fused, kb.at(c.chunk).citation_label.c_str());
    }
    if (result.fallback_used) {
        std::cout << "fallback:";
        for (auto i : result.fallback_chunks) std::cout << ' ' << kb.at(i).chunk_id;
        std::cout << '\n';
    }
    return kExitOk;
}

int cmd_report(const std::string& flow_id, const std::string& mode, const fs::path& config_path,
               const std::optional<fs::path>& input) {
    auto config = load_config(config_path, input);
    config.modes = pipeline::parse_modes(mode);
    auto components = pipeline::Components::load(config);
    const auto flows = read_flows(config.flows, components.schema);
    std::size_t index = 0;
    const auto& flow = find_flow(flows, flow_id, &index);
    const pipeline::Pipeline p(config, std::move(components));
    const auto outcome = p.process(flow, index);
    if (!outcome.error.empty()) std::cerr << outcome.error << '\n';
    for (const auto& r : outcome.reports) {
        std::cout << "===== " << promptgen::to_string(r.mode) << " =====\n";
        if (!r.error.empty()) {
            std::cerr << promptgen::to_string(r.mode) << ": " << r.error << '\n';
            continue;
        }
        std::cout << (r.sections ? promptgen::render(*r.sections) : r.raw_text) << '\n';
        if (r.scores) std::cout << "scores vs " << r.reference_class << ": " << r.scores->to_json().dump() << '\n';
    }
    return outcome.ok() ? kExitOk : kExitFlowFailures;
}

int cmd_evaluate(const fs::path& manifest, const fs::path& out, std::optional<fs::path> summary_path,
                 std::uint64_t seed, std::size_t width) {
    const auto entries = pipeline::load_manifest(manifest);
    const retrieval::HashEmbedder embedder(width, seed);
    const auto ev = pipeline::evaluate_manifest(entries, embedder);
    std::ofstream table(out);
    if (!table) throw pipeline::ConfigError("cannot write " + out.string());
    ev.write_table(table);
    const auto summary = ev.summary();
    const fs::path sp = summary_path.value_or(fs::path(out.string() + ".summary.json"));
    std::ofstream(sp) << summary.dump(2) << '\n';
    std::printf("%-44s %10s %10s %10s %10s\n", "Metric", "Vanilla", "RAG", "Change", "p");
    for (const auto& row : summary.at("rows")) {
        char change[32] = "n/a", p[32] = "n/a";
        if (!row.at("relative_change").is_null()) {
            std::snprintf(change, sizeof change, "%+.1f%%", 100.0 * row.at("relative_change").get<double>());
        }
        if (!row.at("wilcoxon").is_null()) {
            std::snprintf(p, sizeof p, "%.3g", row.at("wilcoxon").at("p_value").get<double>());
        }
        std::printf("%-44s %10.4f %10.4f %10s %10s\n", row.at("metric").get<std::string>().c_str(),
                    row.at("vanilla").get<double>(), row.at("rag").get<double>(), change, p);
    }
    std::cout << "wrote " << out.string() << " and " << sp.string() << '\n';
    return kExitOk;
}

int cmd_pipeline(const fs::path& config_path, std::optional<std::size_t> workers, bool resume,
                 const std::optional<fs::path>& output) {
    auto config = load_config(config_path, std::nullopt);
    if (workers) config.workers = *workers;
    if (resume) config.resume = true;
    if (output) config.output_dir = *output;
    auto components = pipeline::Components::load(config);
    std::size_t row_errors = 0;
    const auto flows = read_flows(config.flows, components.schema, &row_errors);
    const pipeline::Pipeline p(config, std::move(components));
    const auto outcomes = p.run(flows, config.output_dir);
    const auto summary = pipeline::summarize(outcomes);
    json doc = summary.to_json();
    doc["rejected_rows"] = row_errors;
    doc["resumed_from"] = flows.size() - outcomes.size();
    std::ofstream(config.output_dir / "summary.json") << doc.dump(2) << '\n';
    for (const auto& o : outcomes) {
        if (o.ok()) continue;
        std::cerr << o.flow_id << ": " << (o.error.empty() ? "" : o.error);
        for (const auto& r : o.reports) {
            if (!r.error.empty()) std::cerr << ' ' << promptgen::to_string(r.mode) << ": " << r.error;
        }
        std::cerr << '\n';
    }
    std::cout << "flows " << outcomes.size() << ", failed " << summary.failed << ", fallback "
              << summary.fallback_count << "; outputs in " << config.output_dir.string() << '\n';
    for (const auto& [mode, values] : summary.mean_scores) {
        std::cout << "  " << pad(mode, 8);
        for (std::size_t i = 0; i < values.size(); ++i) {
            std::printf(" %s %.4f", i == 0 ? "greedy-F1" : evalkit::kSummaryRows[i], values[i]);
        }
        std::cout << '\n';
    }
    return summary.failed || row_errors ? kExitFlowFailures : kExitOk;
}

int cmd_synth(const fs::path& schema_path, const fs::path& out, const synthetic::FlowOptions& options) {
    const auto schema = flowdata::FeatureSchema::load(schema_path);
    const auto flows = synthetic::generate_flows(schema, options);
    std::ofstream sink(out);
    if (!sink) throw pipeline::ConfigError("cannot write " + out.string());
    synthetic::write_flows_csv(sink, flows, schema);
    std::cout << "wrote " << flows.size() << " flows to " << out.string() << '\n';
    return kExitOk;
}

int cmd_ablation(const synthetic::TwoGaussianOptions& task_options, std::uint64_t seed) {
    const auto task = synthetic::two_gaussian_task(task_options);
    auto options = synthetic::AblationOptions::defaults(task_options.dim);
    options.seed = seed;
    const auto rows = synthetic::run_balancing_ablation(task, options);
    std::printf("%-30s %8s %9s %8s %7s %10s\n", "Configuration", "Recall", "Precision", "F1", "Epochs", "TrainRows");
    for (const auto& r : rows) {
        std::printf("%-30s %8.4f %9.4f %8.4f %7zu %10zu\n", r.configuration.c_str(), r.recall, r.precision, r.f1,
                    r.epochs, r.train_rows);
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Flow classification, attribution, retrieval and report generation for intrusion triage"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "idsrag 1.0.0");

    // preprocess
    fs::path pp_schema, pp_input, pp_out;
    std::uint64_t pp_seed = 0;
    std::vector<double> pp_ratios{0.70, 0.15, 0.15};
    auto* pp = app.add_subcommand("preprocess", "Encode, split and normalize a flow CSV");
    pp->add_option("--schema", pp_schema, "Feature schema JSON")->required()->check(CLI::ExistingFile);
    pp->add_option("--input", pp_input, "Flow CSV")->required()->check(CLI::ExistingFile);
    pp->add_option("--out", pp_out, "Output dataset directory")->required();
    pp->add_option("--seed", pp_seed, "Split seed")->required();
    pp->add_option("--ratios", pp_ratios, "Train, validation and test fractions")->expected(3);

    // train
    fs::path tr_dataset, tr_config;
    std::optional<fs::path> tr_out;
    std::string tr_class;
    auto* tr = app.add_subcommand("train", "Train one one-vs-rest head");
    tr->add_option("--dataset", tr_dataset, "Dataset directory from preprocess")->required()->check(CLI::ExistingDirectory);
    tr->add_option("--class", tr_class, "benign | dos | ddos")->required();
    tr->add_option("--config", tr_config, "Head options JSON")->required()->check(CLI::ExistingFile);
    tr->add_option("--out", tr_out, "Model directory (default <dataset>/models)");

    // classify
    fs::path cl_models, cl_input, cl_out, cl_schema, cl_stats;
    auto* cl = app.add_subcommand("classify", "Classify every flow of a CSV");
    cl->add_option("--models", cl_models, "Directory with <class>.model.json")->required()->check(CLI::ExistingDirectory);
    cl->add_option("--input", cl_input, "Flow CSV")->required()->check(CLI::ExistingFile);
    cl->add_option("--out", cl_out, "Outcome JSONL")->required();
    cl->add_option("--schema", cl_schema, "Feature schema JSON")->required()->check(CLI::ExistingFile);
    cl->add_option("--stats", cl_stats, "Normalization stats JSON")->required()->check(CLI::ExistingFile);

    // explain
    std::string ex_flow;
    fs::path ex_config;
    std::optional<fs::path> ex_input;
    bool ex_json = false;
    auto* ex = app.add_subcommand("explain", "Print the evidence items of one flow");
    ex->add_option("--flow", ex_flow, "Flow id")->required();
    ex->add_option("--config", ex_config, "Pipeline config")->required()->check(CLI::ExistingFile);
    ex->add_option("--input", ex_input, "Flow CSV (default: the config's flows)");
    ex->add_flag("--json", ex_json, "Print the outcome record");

    // ingest-kb
    fs::path ik_docs, ik_out;
    std::string ik_version = "v1";
    std::size_t ik_size = 500, ik_overlap = 200;
    bool ik_no_snap = false;
    auto* ik = app.add_subcommand("ingest-kb", "Chunk a document directory into a knowledge base");
    ik->add_option("--docs", ik_docs, "Directory of .txt/.md documents")->required()->check(CLI::ExistingDirectory);
    ik->add_option("--out", ik_out, "Knowledge base JSONL")->required();
    ik->add_option("--version-tag", ik_version, "Version tag recorded in the KB");
    ik->add_option("--chunk-size", ik_size, "Tokens per chunk");
    ik->add_option("--overlap", ik_overlap, "Tokens shared by adjacent chunks");
    ik->add_flag("--no-snap", ik_no_snap, "Disable sentence-boundary snapping");

    // retrieve
    fs::path rt_kb;
    std::string rt_query;
    std::size_t rt_k = 5, rt_width = 768;
    std::uint64_t rt_seed = 0;
    std::optional<fs::path> rt_thesaurus;
    std::vector<std::string> rt_fallback;
    bool rt_json = false;
    auto* rt = app.add_subcommand("retrieve", "Run hybrid retrieval for a query");
    rt->add_option("--kb", rt_kb, "Knowledge base JSONL")->required()->check(CLI::ExistingFile);
    rt->add_option("--query", rt_query, "Query text")->required();
    rt->add_option("--k", rt_k, "Results to keep")->check(CLI::Range(1, 5));
    rt->add_option("--seed", rt_seed, "Hash embedder seed");
    rt->add_option("--width", rt_width, "Hash embedder width");
    rt->add_option("--thesaurus", rt_thesaurus, "Expansion thesaurus JSON")->check(CLI::ExistingFile);
    rt->add_option("--fallback", rt_fallback, "Fallback chunk ids");
    rt->add_flag("--json", rt_json, "Print JSON");

    // report
    std::string rp_flow, rp_mode = "both";
    fs::path rp_config;
    std::optional<fs::path> rp_input;
    auto* rp = app.add_subcommand("report", "Generate the report(s) of one flow");
    rp->add_option("--flow", rp_flow, "Flow id")->required();
    rp->add_option("--mode", rp_mode, "rag | vanilla | both");
    rp->add_option("--config", rp_config, "Pipeline config")->required()->check(CLI::ExistingFile);
    rp->add_option("--input", rp_input, "Flow CSV (default: the config's flows)");

    // evaluate
    fs::path ev_manifest, ev_out;
    std::optional<fs::path> ev_summary;
    std::uint64_t ev_seed = 0;
    std::size_t ev_width = 768;
    auto* ev = app.add_subcommand("evaluate", "Score vanilla and rag reports against ground truth");
    ev->add_option("--manifest", ev_manifest, "Manifest JSON")->required()->check(CLI::ExistingFile);
    ev->add_option("--out", ev_out, "Per-report CSV table")->required();
    ev->add_option("--summary", ev_summary, "Summary JSON (default <out>.summary.json)");
    ev->add_option("--seed", ev_seed, "Token embedder seed");
    ev->add_option("--width", ev_width, "Token embedder width");

    // pipeline
    fs::path pl_config;
    std::optional<std::size_t> pl_workers;
    std::optional<fs::path> pl_output;
    bool pl_resume = false;
    auto* pl = app.add_subcommand("pipeline", "Run every stage over the configured flows");
    pl->add_option("--config", pl_config, "Pipeline config")->required()->check(CLI::ExistingFile);
    pl->add_option("--workers", pl_workers, "Worker threads")->check(CLI::PositiveNumber);
    pl->add_option("--output", pl_output, "Output directory");
    pl->add_flag("--resume", pl_resume, "Skip flows already in outcomes.jsonl");

    // synth
    fs::path sy_schema, sy_out;
    synthetic::FlowOptions sy;
    std::vector<double> sy_mix{0.5, 0.25, 0.25};
    auto* syc = app.add_subcommand("synth", "Write a labeled synthetic flow CSV");
    syc->add_option("--schema", sy_schema, "Feature schema JSON")->required()->check(CLI::ExistingFile);
    syc->add_option("--out", sy_out, "Flow CSV")->required();
    syc->add_option("--count", sy.count, "Flows");
    syc->add_option("--seed", sy.seed, "Sampling seed")->required();
    syc->add_option("--profile-seed", sy.profile_seed, "Class profile seed");
    syc->add_option("--separation", sy.separation, "Class centre spread");
    syc->add_option("--noise", sy.noise, "Within-class noise");
    syc->add_option("--missing-rate", sy.missing_rate, "Fraction of blank numeric cells");
    syc->add_option("--mix", sy_mix, "Benign, DoS and DDoS weights")->expected(3);
    syc->add_option("--id-prefix", sy.id_prefix, "Flow id prefix");

    // ablation
    synthetic::TwoGaussianOptions ab_task;
    std::uint64_t ab_seed = 3;
    auto* ab = app.add_subcommand("ablation", "Balancing ablation on a two-Gaussian imbalanced task");
    ab->add_option("--ratio", ab_task.ratio, "Majority rows per minority row");
    ab->add_option("--separation", ab_task.separation, "Distance between the class means");
    ab->add_option("--dim", ab_task.dim, "Input width");
    ab->add_option("--data-seed", ab_task.seed, "Task seed");
    ab->add_option("--seed", ab_seed, "Training and resampling seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*pp) return cmd_preprocess(pp_schema, pp_input, pp_out, pp_seed, pp_ratios);
        if (*tr) return cmd_train(tr_dataset, tr_class, tr_config, tr_out);
        if (*cl) return cmd_classify(cl_models, cl_input, cl_out, cl_schema, cl_stats);
        if (*ex) return cmd_explain(ex_flow, ex_config, ex_input, ex_json);
        if (*ik) return cmd_ingest(ik_docs, ik_out, ik_version, ik_size, ik_overlap, ik_no_snap);
        if (*rt) return cmd_retrieve(rt_kb, rt_query, rt_k, rt_seed, rt_width, rt_thesaurus, rt_fallback, rt_json);
        if (*rp) return cmd_report(rp_flow, rp_mode, rp_config, rp_input);
        if (*ev) return cmd_evaluate(ev_manifest, ev_out, ev_summary, ev_seed, ev_width);
        if (*pl) return cmd_pipeline(pl_config, pl_workers, pl_resume, pl_output);
        if (*syc) {
            sy.mix = {sy_mix[0], sy_mix[1], sy_mix[2]};
            return cmd_synth(sy_schema, sy_out, sy);
        }
        if (*ab) return cmd_ablation(ab_task, ab_seed);
    } catch (const pipeline::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    }
    return kExitConfig;
}
