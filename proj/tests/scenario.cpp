#include "scenario.hpp"

#include <atomic>
#include <fstream>
#include <random>

#include "idsrag/synthetic.hpp"
#include "idsrag/training.hpp"

namespace scenario {

using namespace idsrag;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = IDSRAG_FIXTURES;

synthetic::FlowOptions flow_options(std::size_t count, std::uint64_t seed) {
    synthetic::FlowOptions fo;
    fo.count = count;
    fo.seed = seed;
    fo.id_prefix = "s" + std::to_string(seed);
    return fo;
}

}  // namespace

const Trained& trained() {
    static const Trained t = [] {
        Trained out;
        out.schema = flowdata::FeatureSchema::load(kFixtures / "cic_schema.json");
        auto fo = flow_options(1500, 21);
        fo.mix = {1.0 / 3, 1.0 / 3, 1.0 / 3};
        const auto ds = flowdata::build_dataset(synthetic::generate_flows(out.schema, fo), out.schema,
                                                {0.7, 0.15, 0.15}, 1);
        std::array<ensemble::HeadOptions, kNumClasses> opts;
        for (auto& o : opts) {
            o.mlp.layer_widths = {16, 8};
            o.mlp.dropout = {0.1, 0.1};
            o.train.batch_size = 64;
            o.train.max_epochs = 15;
            o.train.seed = 3;
        }
        out.ensemble = ensemble::train_ensemble(ds, opts).ensemble;
        out.stats = ds.stats;
        return out;
    }();
    return t;
}

std::vector<flowdata::FlowRecord> flows(std::size_t per_class, std::uint64_t seed) {
    const auto& schema = trained().schema;
    std::vector<flowdata::FlowRecord> out;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        auto fo = flow_options(per_class, seed * 10 + c);
        fo.mix = {0.0, 0.0, 0.0};
        fo.mix[c] = 1.0;
        fo.id_prefix = "f" + std::to_string(seed) + "-" + std::to_string(c);
        auto part = synthetic::generate_flows(schema, fo);
        out.insert(out.end(), part.begin(), part.end());
    }
    return out;
}

pipeline::Components components(std::shared_ptr<promptgen::GenerationClient> generator) {
    const auto& t = trained();
    pipeline::Components c;
    c.schema = t.schema;
    c.stats = t.stats;
    c.ensemble = t.ensemble;
    c.kb = knowledge::ingest_directory(kFixtures / "kb_docs", {}, "fixture");
    c.thesaurus = retrieval::ExpansionThesaurus::load(kFixtures / "thesaurus.json");
    c.ground_truth = pipeline::load_ground_truth(kFixtures / "ground_truth");
    c.embedder = std::make_shared<retrieval::HashEmbedder>(768, 0, false);
    c.reranker = std::make_shared<retrieval::JaccardReranker>();
    c.generator = generator ? std::move(generator) : std::make_shared<promptgen::ChunkCopyClient>();
    c.token_embedder = std::make_shared<retrieval::HashEmbedder>(768, 0, false);
    return c;
}

nlohmann::json write_artifacts(const fs::path& dir) {
    const auto& t = trained();
    fs::create_directories(dir);
    fs::copy_file(kFixtures / "cic_schema.json", dir / "schema.json", fs::copy_options::overwrite_existing);
    std::ofstream(dir / "stats.json") << t.stats.to_json().dump();
    t.ensemble.save(dir / "models");
    knowledge::save_kb(knowledge::ingest_directory(kFixtures / "kb_docs", {}, "fixture"), dir / "kb.jsonl");
    fs::copy(kFixtures / "ground_truth", dir / "truth", fs::copy_options::recursive | fs::copy_options::overwrite_existing);
    fs::copy_file(kFixtures / "thesaurus.json", dir / "thesaurus.json", fs::copy_options::overwrite_existing);
    return {{"schema", "schema.json"},       {"stats", "stats.json"}, {"models", "models"},
            {"kb", "kb.jsonl"},              {"thesaurus", "thesaurus.json"}, {"ground_truth", "truth"},
            {"output_dir", "out"},           {"seed", 0}};
}

TempDir::TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = fs::temp_directory_path() /
            ("idsrag-" + tag + "-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    fs::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

}  // namespace scenario
