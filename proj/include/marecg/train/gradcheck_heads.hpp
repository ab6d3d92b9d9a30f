#pragma once

#include <functional>
#include <map>
#include <string>

#include "marecg/core/gradcheck.hpp"
#include "marecg/ingest/synth.hpp"
#include "marecg/train/pipeline.hpp"

namespace marecg::train {

// Finite-difference audit of one loss head in double precision at a tiny
// configuration (d <= 16). Each closure rebuilds the full forward for that
// head from fixed synthetic inputs, so the audit covers the encoder and
// projection path the head actually trains through.
struct HeadAudit {
    std::string head;
    num::GradCheckReport report;
};

inline RunConfig tiny_config() {
    RunConfig cfg;
    cfg.set("leads", "3");
    cfg.set("window_len", "150");
    cfg.set("patch_len", "50");
    cfg.set("patch_stride", "25");  // T = 5
    cfg.set("d_model", "16");
    cfg.set("heads", "2");
    cfg.set("enc_blocks", "1");
    cfg.set("dec_blocks", "1");
    cfg.set("mlp_ratio", "2");
    cfg.set("t_pred", "2");
    cfg.set("pool_queries", "2");
    cfg.set("proto_embed_dim", "12");
    cfg.set("proto_concept_dim", "8");
    cfg.set("proto_dropout", "0");   // the audit runs deterministic eval graphs
    cfg.set("msps_hidden", "12");
    cfg.set("msps_dropout", "0");
    cfg.set("jepa_hidden", "12");
    cfg.set("view_dim", "8");
    cfg.set("mpct_text_dim", "10");
    cfg.set("k_seq", "4");
    cfg.set("latent_dropout", "0");
    // Audit conditioning: healthy init scale keeps attention off its uniform
    // fixed point (where key gradients sink below the finite-difference noise
    // floor), and the milder temperatures tame the 1/tau^2 curvature that
    // otherwise dominates the truncation error of the central differences.
    // The exact-gradient check of the contrastive heads at the production
    // tau = 0.07 lives in the unit suites on isolated inputs.
    cfg.set("init_std", "0.25");
    cfg.set("view_tau", "0.2");
    cfg.set("mpct_tau", "0.2");
    cfg.set("opa_tau", "0.2");
    return cfg;
}

// Known head names: ar, jepa, view, mpct, gscl, patch_rhythm, patch_pos.
HeadAudit audit_head(const std::string& head, std::uint64_t seed = 3, double epsilon = 5e-5);

inline const std::vector<std::string>& audited_heads() {
    static const std::vector<std::string> names = {"ar",   "jepa",         "view",     "mpct",
                                                   "gscl", "patch_rhythm", "patch_pos"};
    return names;
}

}  // namespace marecg::train
