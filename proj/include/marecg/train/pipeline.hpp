#pragma once

#include <string>

#include "marecg/model/model.hpp"
#include "marecg/objectives/heads.hpp"
#include "marecg/train/runconfig.hpp"

namespace marecg::train {

// Everything a forward pass needs, instantiated from one RunConfig. Templated
// on the scalar so the trainer runs in float and the finite-difference audit
// runs the identical graph in double.
template <class S>
struct Pipeline {
    model::ModelConfig mcfg;
    objectives::PrototypeConfig proto_cfg;
    objectives::GsclConfig gscl_cfg;
    objectives::MspsConfig msps_cfg;
    objectives::JepaConfig jepa_cfg;
    objectives::ViewConfig view_cfg;
    objectives::MpctConfig mpct_cfg;
    objectives::TotalWeights weights;
    double recon_weight = 1.0;
    double mask_weight = 1.0;

    num::ParamStore<S> params;
    model::EncoderModel mdl;
    objectives::PrototypeNet proto;
    objectives::GsclHead gscl;
    objectives::MspsHeads msps;
    objectives::JepaHead jepa;
    objectives::ViewHead view;
    objectives::MpctHead mpct;

    num::Tensor<S> a_hat;           // normalized adjacency of the curated graph
    ontology::TreeDistance dtree;   // BFS distances, fixed buffer

    static Pipeline build(const RunConfig& cfg) {
        Pipeline p;
        p.mcfg.leads = static_cast<std::size_t>(cfg.get_i("leads"));
        p.mcfg.window = static_cast<std::size_t>(cfg.get_i("window_len"));
        p.mcfg.patch_len = static_cast<std::size_t>(cfg.get_i("patch_len"));
        p.mcfg.patch_stride = static_cast<std::size_t>(cfg.get_i("patch_stride"));
        p.mcfg.d_model = static_cast<std::size_t>(cfg.get_i("d_model"));
        p.mcfg.heads = static_cast<std::size_t>(cfg.get_i("heads"));
        p.mcfg.enc_blocks = static_cast<std::size_t>(cfg.get_i("enc_blocks"));
        p.mcfg.dec_blocks = static_cast<std::size_t>(cfg.get_i("dec_blocks"));
        p.mcfg.mlp_ratio = static_cast<std::size_t>(cfg.get_i("mlp_ratio"));
        p.mcfg.mask_ratio = cfg.get_f("mask_ratio");
        p.mcfg.t_pred = static_cast<std::size_t>(cfg.get_i("t_pred"));
        p.mcfg.pool_queries = static_cast<std::size_t>(cfg.get_i("pool_queries"));
        p.mcfg.pool_eta = cfg.get_f("pool_eta");
        p.mcfg.init_std = cfg.get_f("init_std");

        p.proto_cfg.embed_dim = static_cast<std::size_t>(cfg.get_i("proto_embed_dim"));
        p.proto_cfg.concept_dim = static_cast<std::size_t>(cfg.get_i("proto_concept_dim"));
        p.proto_cfg.dropout = cfg.get_f("proto_dropout");
        p.proto_cfg.init_std = cfg.get_f("init_std");

        p.gscl_cfg.tau = cfg.get_f("gscl_tau");
        p.gscl_cfg.sigma = cfg.get_f("gscl_sigma");
        p.gscl_cfg.weight = cfg.get_f("lambda_gscl");

        p.msps_cfg.hidden = static_cast<std::size_t>(cfg.get_i("msps_hidden"));
        p.msps_cfg.dropout = cfg.get_f("msps_dropout");
        p.msps_cfg.k_seq = static_cast<std::size_t>(cfg.get_i("k_seq"));
        p.msps_cfg.alpha_alt = cfg.get_f("alpha_alt");
        p.msps_cfg.alpha_rate = cfg.get_f("alpha_rate");
        p.msps_cfg.alpha_mrr = cfg.get_f("alpha_mrr");
        p.msps_cfg.alpha_cv = cfg.get_f("alpha_cv");
        p.msps_cfg.lambda_rhythm = cfg.get_f("lambda_rhythm");
        p.msps_cfg.lambda_pos = cfg.get_f("lambda_pos");
        p.msps_cfg.ramp_epochs = cfg.get_f("ramp_epochs");
        p.msps_cfg.delta_r = cfg.get_f("delta_r");

        p.jepa_cfg.hidden = static_cast<std::size_t>(cfg.get_i("jepa_hidden"));
        p.jepa_cfg.weight = cfg.get_f("lambda_jepa");
        p.jepa_cfg.ema_momentum = cfg.get_f("ema_momentum");

        p.view_cfg.tau = cfg.get_f("view_tau");
        p.view_cfg.proj_dim = static_cast<std::size_t>(cfg.get_i("view_dim"));
        p.view_cfg.weight = cfg.get_f("lambda_view");
        p.view_cfg.lead_mask_prob = cfg.get_f("lead_mask_prob");
        p.view_cfg.latent_dropout = cfg.get_f("latent_dropout");

        p.mpct_cfg.variants = static_cast<std::size_t>(cfg.get_i("mpct_variants"));
        p.mpct_cfg.text_dim = static_cast<std::size_t>(cfg.get_i("mpct_text_dim"));
        p.mpct_cfg.table_seed = cfg.get_u("mpct_table_seed");
        p.mpct_cfg.tau = cfg.get_f("mpct_tau");
        p.mpct_cfg.opa_tau = cfg.get_f("opa_tau");
        p.mpct_cfg.beta_ica = cfg.get_f("beta_ica");
        p.mpct_cfg.beta_bca = cfg.get_f("beta_bca");
        p.mpct_cfg.beta_opa = cfg.get_f("beta_opa");
        p.mpct_cfg.weight = cfg.get_f("lambda_mpct");

        p.weights.lambda_jepa = p.jepa_cfg.weight;
        p.weights.lambda_view = p.view_cfg.weight;
        p.weights.lambda_gscl = p.gscl_cfg.weight;
        p.weights.lambda_mpct = p.mpct_cfg.weight;
        p.recon_weight = cfg.get_f("recon_weight");
        p.mask_weight = cfg.get_f("mask_weight");

        num::Rng rng(num::mix_seed(cfg.get_u("seed"), 0x494e4954));  // "INIT"
        p.mdl = model::make_model(p.params, p.mcfg, rng);
        const auto& g = ontology::build_graph();
        p.proto = objectives::make_prototype_net(p.params, p.proto_cfg,
                                                 static_cast<std::size_t>(g.n), rng);
        p.gscl = objectives::make_gscl_head(p.params, p.gscl_cfg, p.mcfg.d_model,
                                            p.proto_cfg.concept_dim, rng, p.mcfg.init_std);
        p.msps = objectives::make_msps_heads(p.params, p.msps_cfg, p.mcfg.d_model, rng, p.mcfg.init_std);
        p.jepa = objectives::make_jepa_head(p.params, p.jepa_cfg, p.mcfg.d_model, rng, p.mcfg.init_std);
        p.view = objectives::make_view_head(p.params, p.view_cfg, p.mcfg.d_model, rng, p.mcfg.init_std);
        p.mpct = objectives::make_mpct_head(p.params, p.mpct_cfg, p.mcfg.d_model,
                                            p.proto_cfg.concept_dim, rng, p.mcfg.init_std);
        p.a_hat = objectives::normalized_adjacency_tensor<S>(g);
        p.dtree = ontology::tree_distance(g.adjacency, g.n);
        return p;
    }
};

}  // namespace marecg::train
