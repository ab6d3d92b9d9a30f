#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <sstream>

#include "marecg/ingest/synth.hpp"
#include "marecg/train/trainer.hpp"

using namespace marecg;
using train::RunConfig;

namespace {

// Tiny configuration: window 1250 -> T = 49 tokens, single-block encoder.
RunConfig tiny_run(const char* ablation, int max_steps) {
    RunConfig cfg;
    cfg.set("ablation", ablation);
    cfg.set("window_len", "1250");
    cfg.set("d_model", "8");
    cfg.set("heads", "2");
    cfg.set("enc_blocks", "1");
    cfg.set("dec_blocks", "1");
    cfg.set("mlp_ratio", "2");
    cfg.set("pool_queries", "2");
    cfg.set("proto_embed_dim", "12");
    cfg.set("proto_concept_dim", "8");
    cfg.set("msps_hidden", "8");
    cfg.set("jepa_hidden", "8");
    cfg.set("view_dim", "8");
    cfg.set("mpct_text_dim", "8");
    cfg.set("micro_batch", "2");
    cfg.set("accumulation", "2");
    cfg.set("epochs", "1");
    cfg.set("max_steps", std::to_string(max_steps));
    return cfg;
}

const std::vector<ingest::EcgRecord>& tiny_corpus() {
    static const std::vector<ingest::EcgRecord> corpus = [] {
        auto synth = ingest::synth_corpus(8, 313, 1250, 4);
        std::vector<ingest::RawRecord> raw;
        for (const auto& r : synth) raw.push_back({r.id, r.signal, r.fs, r.codes});
        ingest::PreprocessConfig pc;
        pc.target_len = 1250;
        return ingest::preprocess_corpus(raw, pc, snomed::default_routing());
    }();
    return corpus;
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::istringstream is(line);
    std::string tok;
    while (std::getline(is, tok, sep)) out.push_back(tok);
    return out;
}

}  // namespace

TEST_CASE("training is deterministic: identical configs give identical ledgers") {
    auto cfg = tiny_run("C3", 2);
    auto r1 = train::train(cfg, tiny_corpus());
    auto r2 = train::train(cfg, tiny_corpus());
    CHECK(r1.ledger_csv == r2.ledger_csv);
    CHECK(r1.augmentation_log == r2.augmentation_log);
    CHECK(r1.skipped_steps == 0);
    CHECK(r1.applied_steps == 2);
    // The checkpoints carry identical tensor bytes.
    auto b1 = train::serialize_checkpoint(r1.final_checkpoint);
    auto b2 = train::serialize_checkpoint(r2.final_checkpoint);
    CHECK(b1 == b2);
}

TEST_CASE("C1 ledger carries AR columns only and total equals AR bitwise") {
    auto cfg = tiny_run("C1", 2);
    auto r = train::train(cfg, tiny_corpus());
    std::istringstream is(r.ledger_csv);
    std::string header;
    std::getline(is, header);
    auto cols = split(header, ',');
    for (const auto& c : cols) {
        CHECK(c.find("jepa") == std::string::npos);
        CHECK(c.find("gscl") == std::string::npos);
        CHECK(c.find("msps") == std::string::npos);
        CHECK(c.find("view") == std::string::npos);
        CHECK(c.find("mpct") == std::string::npos);
    }
    std::size_t ar_idx = 0, total_idx = 0;
    for (std::size_t i = 0; i < cols.size(); ++i) {
        if (cols[i] == "ar") ar_idx = i;
        if (cols[i] == "total") total_idx = i;
    }
    std::string row;
    while (std::getline(is, row)) {
        auto vals = split(row, ',');
        CHECK(vals[ar_idx] == vals[total_idx]);  // same printed bits
    }
    CHECK(r.ignored_terms == 0);
}

TEST_CASE("ledger column sets follow the ablation gating") {
    using objectives::Ablation;
    using objectives::AblationGates;
    auto has = [](const std::vector<std::string>& cols, const char* name) {
        for (const auto& c : cols)
            if (c == name) return true;
        return false;
    };
    auto c1 = train::ledger_columns(AblationGates::from(Ablation::C1));
    auto c2p = train::ledger_columns(AblationGates::from(Ablation::C2p));
    auto c2 = train::ledger_columns(AblationGates::from(Ablation::C2));
    auto c3 = train::ledger_columns(AblationGates::from(Ablation::C3));
    CHECK_FALSE(has(c1, "jepa"));
    CHECK(has(c2p, "jepa"));
    CHECK(has(c2p, "view"));
    CHECK(has(c2p, "mpct"));
    CHECK_FALSE(has(c2p, "gscl"));
    CHECK(has(c2, "gscl"));
    CHECK_FALSE(has(c2, "msps_w"));
    CHECK(has(c3, "msps_w"));
    // Adjacent column sets differ exactly by the newly gated component.
    CHECK(c2.size() == c2p.size() + 2);   // gscl, gscl_w
    CHECK(c3.size() == c2.size() + 3);    // msps_rhythm, msps_pos, msps_w
}

TEST_CASE("gradient accumulation equals the fused batch within 1e-5 relative") {
    // AR-only with all stochastic regularizers off; 4 records, same order.
    auto fused = tiny_run("C1", 1);
    fused.set("micro_batch", "4");
    fused.set("accumulation", "1");
    auto split_cfg = tiny_run("C1", 1);
    split_cfg.set("micro_batch", "2");
    split_cfg.set("accumulation", "2");

    auto g1 = train::accumulated_gradient(fused, tiny_corpus());
    auto g2 = train::accumulated_gradient(split_cfg, tiny_corpus());
    REQUIRE(g1.size() == g2.size());
    double num = 0, den = 0;
    for (std::size_t i = 0; i < g1.size(); ++i) {
        num += (g1[i] - g2[i]) * (g1[i] - g2[i]);
        den += g1[i] * g1[i];
    }
    REQUIRE(den > 0);
    CHECK(std::sqrt(num / den) < 1e-5);
}

TEST_CASE("checkpoint round trip is bitwise stable") {
    auto cfg = tiny_run("C1", 1);
    auto r = train::train(cfg, tiny_corpus());
    auto bytes = train::serialize_checkpoint(r.final_checkpoint);
    auto back = train::deserialize_checkpoint(bytes);
    auto bytes2 = train::serialize_checkpoint(back);
    CHECK(bytes == bytes2);
    REQUIRE(back.tensors.size() == r.final_checkpoint.tensors.size());
    for (std::size_t i = 0; i < back.tensors.size(); ++i) {
        CHECK(back.tensors[i].name == r.final_checkpoint.tensors[i].name);
        CHECK(back.tensors[i].data == r.final_checkpoint.tensors[i].data);
    }
    CHECK(back.manifest.ablation == "C1");
    CHECK(back.manifest.config_hash == cfg.hash());
    SUBCASE("corrupted magic is rejected") {
        bytes[0] ^= 0xff;
        CHECK_THROWS(train::deserialize_checkpoint(bytes));
    }
}

TEST_CASE("C3 augmentation log stays rhythm-safe; C2 does not") {
    auto c3 = train::train(tiny_run("C3", 1), tiny_corpus());
    REQUIRE_FALSE(c3.augmentation_log.empty());
    for (const auto& line : c3.augmentation_log) {
        CHECK(line.find("crop") == std::string::npos);
        CHECK(line.find("dilate") == std::string::npos);
        CHECK(line.find("amp") != std::string::npos);
    }
    // The unconstrained set draws crop or dilation with probability one per view.
    auto c2 = train::train(tiny_run("C2", 2), tiny_corpus());
    bool any_unsafe = false;
    for (const auto& line : c2.augmentation_log)
        any_unsafe = any_unsafe || line.find("crop") != std::string::npos ||
                     line.find("dilate") != std::string::npos;
    CHECK(any_unsafe);
}

TEST_CASE("root-only records are excluded from GSCL but contribute to AR") {
    // Corpus of 8 with every 4th record root-only coded: GSCL still sees
    // leaf-labelled records in each batch, so no batch is skipped; a corpus of
    // only root-only records skips every batch.
    auto cfg = tiny_run("C2", 1);
    auto r = train::train(cfg, tiny_corpus());
    CHECK(r.gscl_skipped_batches == 0);

    auto synth = ingest::synth_corpus(4, 99, 1250, 1);  // every record root-only
    std::vector<ingest::RawRecord> raw;
    for (const auto& rec : synth) raw.push_back({rec.id, rec.signal, rec.fs, rec.codes});
    ingest::PreprocessConfig pc;
    pc.target_len = 1250;
    auto corpus = ingest::preprocess_corpus(raw, pc, snomed::default_routing());
    for (const auto& rec : corpus) {
        CHECK(rec.leaf_target.root_only);
        CHECK_FALSE(rec.leaf_target.has_leaf());
    }
    auto r2 = train::train(cfg, corpus);
    CHECK(r2.gscl_skipped_batches == 2);  // both micro-batches of the single step
    // AR still trains: the ledger has a finite nonzero AR column.
    std::istringstream is(r2.ledger_csv);
    std::string header, row;
    std::getline(is, header);
    std::getline(is, row);
    auto cols = split(header, ',');
    auto vals = split(row, ',');
    for (std::size_t i = 0; i < cols.size(); ++i) {
        if (cols[i] == "ar") CHECK(std::stod(vals[i]) > 0.0);
        if (cols[i] == "gscl") CHECK(std::stod(vals[i]) == 0.0);
    }
}

TEST_CASE("ablation_matrix runs all four columns on a shared corpus and seed") {
    auto cfg = tiny_run("C1", 1);
    auto matrix = train::ablation_matrix(cfg, tiny_corpus());
    REQUIRE(matrix.size() == 4);
    CHECK(matrix[0].first == objectives::Ablation::C1);
    CHECK(matrix[3].first == objectives::Ablation::C3);
    // The GSCL column appears exactly from C2 on, MSPS exactly at C3.
    auto has_col = [](const train::TrainResult& r, const char* name) {
        std::istringstream is(r.ledger_csv);
        std::string header;
        std::getline(is, header);
        for (const auto& c : split(header, ','))
            if (c == name) return true;
        return false;
    };
    CHECK_FALSE(has_col(matrix[0].second, "gscl"));
    CHECK_FALSE(has_col(matrix[1].second, "gscl"));
    CHECK(has_col(matrix[2].second, "gscl"));
    CHECK(has_col(matrix[3].second, "gscl"));
    CHECK_FALSE(has_col(matrix[2].second, "msps_w"));
    CHECK(has_col(matrix[3].second, "msps_w"));
    // Identical seeds: every column's checkpoint manifest carries the shared seed.
    for (const auto& [ab, r] : matrix) {
        (void)ab;
        CHECK(r.final_checkpoint.manifest.seed == cfg.get_u("seed"));
    }
}

TEST_CASE("empty corpus is refused") {
    std::vector<ingest::EcgRecord> empty;
    CHECK_THROWS(train::train(tiny_run("C1", 1), empty));
}

TEST_CASE("run config: round trip, overrides, unknown keys") {
    RunConfig cfg;
    std::string dump = cfg.dump();
    auto parsed = RunConfig::parse(dump);
    CHECK(parsed.dump() == dump);
    CHECK(parsed.hash() == cfg.hash());
    cfg.set("d_model", "32");
    CHECK(cfg.get_i("d_model") == 32);
    CHECK(cfg.hash() != parsed.hash());
    CHECK_THROWS_AS(cfg.set("no_such_key", "1"), train::config_error);
    CHECK_THROWS_AS(RunConfig::parse("nonsense\n"), train::config_error);
    CHECK_THROWS_AS(RunConfig::parse("made_up=3\n"), train::config_error);
    // Comments and blank lines are fine.
    auto with_comments = RunConfig::parse("# tuned for the smoke run\nd_model=16\n\n");
    CHECK(with_comments.get_i("d_model") == 16);
}
