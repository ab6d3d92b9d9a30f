#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "marecg/core/rng.hpp"
#include "marecg/core/tape.hpp"
#include "marecg/model/model.hpp"
#include "marecg/ontology/graph.hpp"
#include "marecg/physio/physio.hpp"
#include "marecg/snomed/routing.hpp"

namespace marecg::objectives {

using model::LinearIds;
using model::linear;
using num::ParamStore;
using num::Rng;
using num::Tensor;

template <class S>
using Var = typename num::Tape<S>::Var;

// ---- concept prototypes (two-layer GCN over the fixed adjacency) ----

struct PrototypeConfig {
    std::size_t embed_dim = 192;    // d_e
    std::size_t concept_dim = 48;   // d_c
    double dropout = 0.1;
    double init_std = 0.02;
};

struct PrototypeNet {
    PrototypeConfig cfg;
    std::size_t embed = 0;  // [N, d_e]
    std::size_t w1 = 0;     // [d_e, d_e], bias-free
    std::size_t w2 = 0;     // [d_e, d_c], bias-free
    std::size_t ln1_g = 0, ln1_b = 0;
    std::size_t ln2_g = 0, ln2_b = 0;
};

inline std::size_t prototype_param_count(const PrototypeConfig& cfg, std::size_t n_nodes) {
    return n_nodes * cfg.embed_dim + cfg.embed_dim * cfg.embed_dim + cfg.embed_dim * cfg.concept_dim +
           2 * (cfg.embed_dim + cfg.concept_dim);
}

template <class S>
PrototypeNet make_prototype_net(ParamStore<S>& ps, const PrototypeConfig& cfg, std::size_t n_nodes,
                                Rng& rng) {
    PrototypeNet net;
    net.cfg = cfg;
    Tensor<S> e({n_nodes, cfg.embed_dim});
    for (auto& x : e.v) x = static_cast<S>(rng.gauss() * cfg.init_std);
    net.embed = ps.add("proto.embed", std::move(e));
    net.w1 = ps.add("proto.w1", model::init_normal<S>({cfg.embed_dim, cfg.embed_dim}, rng, cfg.init_std));
    net.w2 = ps.add("proto.w2", model::init_normal<S>({cfg.embed_dim, cfg.concept_dim}, rng, cfg.init_std));
    net.ln1_g = ps.add("proto.ln1.g", Tensor<S>({cfg.embed_dim}, S(1)));
    net.ln1_b = ps.add("proto.ln1.b", Tensor<S>({cfg.embed_dim}, S(0)));
    net.ln2_g = ps.add("proto.ln2.g", Tensor<S>({cfg.concept_dim}, S(1)));
    net.ln2_b = ps.add("proto.ln2.b", Tensor<S>({cfg.concept_dim}, S(0)));
    return net;
}

template <class S>
Tensor<S> normalized_adjacency_tensor(const ontology::ConceptGraph& g) {
    Tensor<S> a({static_cast<std::size_t>(g.n), static_cast<std::size_t>(g.n)});
    for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] = static_cast<S>(g.normalized_adjacency[i]);
    return a;
}

// P = row-normalize(LN((Drop(H1) + A.Drop(H1)) W2)), H1 = LN(GELU((E + A.E) W1)).
// Recomputed from (E, A) on every call; rows land on the unit sphere. A row
// whose pre-normalization norm hits the epsilon floor is reported through
// `floored_rows` (it cannot occur with live LayerNorm gains).
template <class S>
Var<S> compute_prototypes(num::Tape<S>& tp, ParamStore<S>& ps, const PrototypeNet& net,
                          const Tensor<S>& a_hat, bool train, std::uint64_t dropout_seed,
                          std::vector<std::size_t>* floored_rows = nullptr) {
    Var<S> a = tp.input(a_hat);
    Var<S> e = tp.param(ps, net.embed);
    Var<S> mixed1 = tp.add(e, tp.matmul(a, e));
    Var<S> h1 = tp.layernorm_rows(tp.gelu(tp.matmul(mixed1, tp.param(ps, net.w1))),
                                  tp.param(ps, net.ln1_g), tp.param(ps, net.ln1_b));
    Var<S> d1 = train && net.cfg.dropout > 0
                    ? tp.dropout(h1, net.cfg.dropout, num::mix_seed(dropout_seed, 0x6763))
                    : h1;
    Var<S> mixed2 = tp.add(d1, tp.matmul(a, d1));
    Var<S> h2 = tp.layernorm_rows(tp.matmul(mixed2, tp.param(ps, net.w2)), tp.param(ps, net.ln2_g),
                                  tp.param(ps, net.ln2_b));
    if (floored_rows) {
        floored_rows->clear();
        const auto& hv = tp.val(h2);
        for (std::size_t r = 0; r < hv.rows(); ++r) {
            double ss = 0;
            for (std::size_t c = 0; c < hv.cols(); ++c)
                ss += static_cast<double>(hv.at(r, c)) * static_cast<double>(hv.at(r, c));
            if (std::sqrt(ss) < 1e-8) floored_rows->push_back(r);
        }
    }
    return tp.l2_normalize_rows(h2);
}

// ---- GSCL ----

struct GsclConfig {
    double tau = 0.1;     // InfoNCE temperature
    double sigma = 1.0;   // soft-target smoothing temperature
    double weight = 1.0;  // lambda_GSCL
};

struct GsclHead {
    GsclConfig cfg;
    std::size_t w_sca = 0;  // [d, d_c]
};

template <class S>
GsclHead make_gscl_head(ParamStore<S>& ps, const GsclConfig& cfg, std::size_t d_model,
                        std::size_t d_concept, Rng& rng, double init_std) {
    GsclHead h;
    h.cfg = cfg;
    h.w_sca = ps.add("gscl.w_sca", model::init_normal<S>({d_model, d_concept}, rng, init_std));
    return h;
}

// Cross-entropy of the graph-smoothed soft target against the prototype
// softmax. h_batch is [B, d]; soft_targets is [B, N] and already normalized.
template <class S>
Var<S> gscl_loss(num::Tape<S>& tp, ParamStore<S>& ps, const GsclHead& head, Var<S> h_batch,
                 const Tensor<S>& soft_targets, Var<S> prototypes) {
    std::size_t b_n = tp.val(h_batch).rows();
    if (soft_targets.rows() != b_n) throw std::invalid_argument("gscl_loss: batch size mismatch");
    Var<S> proj = tp.l2_normalize_rows(tp.matmul(h_batch, tp.param(ps, head.w_sca)));
    Var<S> logits = tp.scale(tp.matmul(proj, tp.transpose(prototypes)),
                             static_cast<S>(1.0 / head.cfg.tau));
    Var<S> logq = tp.log_softmax_rows(logits);
    Tensor<S> w = soft_targets;
    S inv_b = static_cast<S>(-1.0 / static_cast<double>(b_n));
    for (auto& x : w.v) x *= inv_b;
    return tp.weighted_sum(logq, std::move(w));
}

// ---- MSPS ----

struct MspsConfig {
    std::size_t hidden = 256;
    double dropout = 0.1;
    std::size_t k_rate = 4;   // brady / normal / tachy / none logits
    std::size_t k_seq = 8;    // K_p
    std::size_t k_phase = 4;  // K_phi
    double alpha_alt = 1.0, alpha_rate = 1.0, alpha_mrr = 0.5, alpha_cv = 0.5;
    double lambda_rhythm = 0.20, lambda_pos = 0.10;
    double ramp_epochs = 5.0;
    double delta_r = 50.0;
};

struct MspsHeads {
    MspsConfig cfg;
    LinearIds rhythm1, rhythm2;  // d -> hidden -> 7 (alt | 4 rate | mRR | cv)
    LinearIds pos1, pos2;        // d -> hidden -> K_p + K_phi
};

template <class S>
MspsHeads make_msps_heads(ParamStore<S>& ps, const MspsConfig& cfg, std::size_t d_model, Rng& rng,
                          double init_std) {
    MspsHeads h;
    h.cfg = cfg;
    h.rhythm1 = model::make_linear(ps, "msps.rhythm1", d_model, cfg.hidden, rng, init_std);
    h.rhythm2 = model::make_linear(ps, "msps.rhythm2", cfg.hidden, 3 + cfg.k_rate, rng, init_std);
    h.pos1 = model::make_linear(ps, "msps.pos1", d_model, cfg.hidden, rng, init_std);
    h.pos2 = model::make_linear(ps, "msps.pos2", cfg.hidden, cfg.k_seq + cfg.k_phase, rng, init_std);
    return h;
}

// Per-record rhythm supervision after batch-level target preparation.
struct RhythmSupervision {
    physio::Flag alternation = physio::Flag::None;
    physio::RateBucket bucket = physio::RateBucket::None;
    double z_mean_rr = 0.0;  // z-scored across the micro-batch's valid records
    double z_rr_cv = 0.0;
    bool regression_valid = false;  // false when bucket is None
};

// Z-scores mean-RR / RR-CV across the records that have at least two peaks;
// the z-score denominator is epsilon-floored, so a single-record batch gets
// all-zero regression targets.
inline std::vector<RhythmSupervision> prepare_rhythm_supervision(
    const std::vector<physio::RhythmTargets>& targets) {
    std::vector<RhythmSupervision> out(targets.size());
    double n = 0, mean_mrr = 0, mean_cv = 0;
    for (const auto& t : targets) {
        if (t.bucket == physio::RateBucket::None) continue;
        ++n;
        mean_mrr += t.mean_rr;
        mean_cv += t.rr_cv;
    }
    if (n > 0) {
        mean_mrr /= n;
        mean_cv /= n;
    }
    double var_mrr = 0, var_cv = 0;
    for (const auto& t : targets) {
        if (t.bucket == physio::RateBucket::None) continue;
        var_mrr += (t.mean_rr - mean_mrr) * (t.mean_rr - mean_mrr);
        var_cv += (t.rr_cv - mean_cv) * (t.rr_cv - mean_cv);
    }
    double sd_mrr = n > 0 ? std::max(std::sqrt(var_mrr / n), 1e-8) : 1.0;
    double sd_cv = n > 0 ? std::max(std::sqrt(var_cv / n), 1e-8) : 1.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const auto& t = targets[i];
        out[i].alternation = t.alternation;
        out[i].bucket = t.bucket;
        if (t.bucket != physio::RateBucket::None) {
            out[i].regression_valid = true;
            out[i].z_mean_rr = (t.mean_rr - mean_mrr) / sd_mrr;
            out[i].z_rr_cv = (t.rr_cv - mean_cv) / sd_cv;
        }
    }
    return out;
}

template <class S>
struct RhythmLossTerms {
    Var<S> total;
    Var<S> alt, rate, mrr, cv;
};

// hbar_batch: per-record lead-mean token sequences concatenated, [sum_T, d];
// every record contributes T rows and its targets broadcast to all of them.
template <class S>
RhythmLossTerms<S> patch_rhythm_loss(num::Tape<S>& tp, ParamStore<S>& ps, const MspsHeads& heads,
                                     Var<S> hbar_batch, std::size_t t_n,
                                     const std::vector<RhythmSupervision>& sup, bool train,
                                     std::uint64_t dropout_seed) {
    const MspsConfig& cfg = heads.cfg;
    std::size_t b_n = sup.size();
    if (tp.val(hbar_batch).rows() != b_n * t_n)
        throw std::invalid_argument("patch_rhythm_loss: row count mismatch");
    Var<S> hidden = tp.gelu(linear(tp, ps, heads.rhythm1, hbar_batch));
    if (train && cfg.dropout > 0)
        hidden = tp.dropout(hidden, cfg.dropout, num::mix_seed(dropout_seed, 0x7268));
    Var<S> out = linear(tp, ps, heads.rhythm2, hidden);  // [B*T, 3 + k_rate]

    std::size_t rows = b_n * t_n;
    std::size_t width = 3 + cfg.k_rate;

    // Alternation BCE over records with a defined flag.
    std::size_t n_alt = 0, n_rate = 0, n_reg = 0;
    for (const auto& s : sup) {
        if (s.alternation != physio::Flag::None) ++n_alt;
        if (s.bucket != physio::RateBucket::None) ++n_rate;
        if (s.regression_valid) ++n_reg;
    }
    RhythmLossTerms<S> terms;
    Var<S> zero = tp.input(Tensor<S>({1}, S(0)));

    if (n_alt > 0) {
        // mean over selected patches of softplus(x) - x * y
        Tensor<S> w_sp({rows, width}, S(0));
        Tensor<S> w_x({rows, width}, S(0));
        S inv = static_cast<S>(1.0 / static_cast<double>(n_alt * t_n));
        for (std::size_t b = 0; b < b_n; ++b) {
            if (sup[b].alternation == physio::Flag::None) continue;
            S y = sup[b].alternation == physio::Flag::True ? S(1) : S(0);
            for (std::size_t i = 0; i < t_n; ++i) {
                w_sp.v[((b * t_n + i) * width) + 0] = inv;
                w_x.v[((b * t_n + i) * width) + 0] = y * inv;
            }
        }
        terms.alt = tp.sub(tp.weighted_sum(tp.softplus(out), std::move(w_sp)),
                           tp.weighted_sum(out, std::move(w_x)));
    } else {
        terms.alt = zero;
    }

    if (n_rate > 0) {
        Var<S> rate_logits = tp.slice_cols(out, 1, 1 + cfg.k_rate);
        Var<S> logp = tp.log_softmax_rows(rate_logits);
        Tensor<S> w({rows, cfg.k_rate}, S(0));
        S inv = static_cast<S>(-1.0 / static_cast<double>(n_rate * t_n));
        for (std::size_t b = 0; b < b_n; ++b) {
            if (sup[b].bucket == physio::RateBucket::None) continue;
            std::size_t cls = static_cast<std::size_t>(sup[b].bucket);
            for (std::size_t i = 0; i < t_n; ++i) w.v[(b * t_n + i) * cfg.k_rate + cls] = inv;
        }
        terms.rate = tp.weighted_sum(logp, std::move(w));
    } else {
        terms.rate = zero;
    }

    if (n_reg > 0) {
        Tensor<S> target_mrr({rows, 1}, S(0));
        Tensor<S> target_cv({rows, 1}, S(0));
        Tensor<S> w({rows, 1}, S(0));
        S inv = static_cast<S>(1.0 / static_cast<double>(n_reg * t_n));
        for (std::size_t b = 0; b < b_n; ++b) {
            if (!sup[b].regression_valid) continue;
            for (std::size_t i = 0; i < t_n; ++i) {
                target_mrr.v[b * t_n + i] = static_cast<S>(sup[b].z_mean_rr);
                target_cv.v[b * t_n + i] = static_cast<S>(sup[b].z_rr_cv);
                w.v[b * t_n + i] = inv;
            }
        }
        Var<S> d_mrr = tp.sub(tp.slice_cols(out, 1 + cfg.k_rate, 2 + cfg.k_rate), tp.input(target_mrr));
        Var<S> d_cv = tp.sub(tp.slice_cols(out, 2 + cfg.k_rate, 3 + cfg.k_rate), tp.input(target_cv));
        terms.mrr = tp.weighted_sum(tp.mul(d_mrr, d_mrr), w);
        terms.cv = tp.weighted_sum(tp.mul(d_cv, d_cv), std::move(w));
    } else {
        terms.mrr = zero;
        terms.cv = zero;
    }

    terms.total = tp.add(tp.add(tp.scale(terms.alt, static_cast<S>(cfg.alpha_alt)),
                                tp.scale(terms.rate, static_cast<S>(cfg.alpha_rate))),
                         tp.add(tp.scale(terms.mrr, static_cast<S>(cfg.alpha_mrr)),
                                tp.scale(terms.cv, static_cast<S>(cfg.alpha_cv))));
    return terms;
}

// Sequence-position and R-peak-phase cross-entropies with equal unit weight.
template <class S>
Var<S> patch_pos_loss(num::Tape<S>& tp, ParamStore<S>& ps, const MspsHeads& heads, Var<S> hbar_batch,
                      std::size_t t_n, const std::vector<physio::PositionTargets>& targets, bool train,
                      std::uint64_t dropout_seed) {
    const MspsConfig& cfg = heads.cfg;
    std::size_t b_n = targets.size();
    if (tp.val(hbar_batch).rows() != b_n * t_n)
        throw std::invalid_argument("patch_pos_loss: row count mismatch");
    Var<S> hidden = tp.gelu(linear(tp, ps, heads.pos1, hbar_batch));
    if (train && cfg.dropout > 0)
        hidden = tp.dropout(hidden, cfg.dropout, num::mix_seed(dropout_seed, 0x706f));
    Var<S> out = linear(tp, ps, heads.pos2, hidden);

    std::size_t rows = b_n * t_n;
    Var<S> seq_logp = tp.log_softmax_rows(tp.slice_cols(out, 0, cfg.k_seq));
    Tensor<S> w_seq({rows, cfg.k_seq}, S(0));
    S inv_seq = static_cast<S>(-1.0 / static_cast<double>(rows));
    for (std::size_t b = 0; b < b_n; ++b)
        for (std::size_t i = 0; i < t_n; ++i)
            w_seq.v[(b * t_n + i) * cfg.k_seq + static_cast<std::size_t>(targets[b].seq_bucket[i])] =
                inv_seq;
    Var<S> l_seq = tp.weighted_sum(seq_logp, std::move(w_seq));

    std::size_t n_unmasked = 0;
    for (const auto& t : targets)
        for (bool m : t.phase_masked)
            if (!m) ++n_unmasked;
    Var<S> l_phase;
    if (n_unmasked > 0) {
        Var<S> ph_logp = tp.log_softmax_rows(tp.slice_cols(out, cfg.k_seq, cfg.k_seq + cfg.k_phase));
        Tensor<S> w_ph({rows, cfg.k_phase}, S(0));
        S inv_ph = static_cast<S>(-1.0 / static_cast<double>(n_unmasked));
        for (std::size_t b = 0; b < b_n; ++b) {
            for (std::size_t i = 0; i < t_n; ++i) {
                if (targets[b].phase_masked[i]) continue;
                w_ph.v[(b * t_n + i) * cfg.k_phase + static_cast<std::size_t>(targets[b].phase[i])] =
                    inv_ph;
            }
        }
        l_phase = tp.weighted_sum(ph_logp, std::move(w_ph));
    } else {
        l_phase = tp.input(Tensor<S>({1}, S(0)));
    }
    return tp.add(l_seq, l_phase);
}

inline double msps_ramp(double epoch, double ramp_epochs) {
    if (epoch < 0) throw std::invalid_argument("msps_ramp: negative epoch");
    if (ramp_epochs <= 0) return 1.0;
    return std::min(1.0, epoch / ramp_epochs);
}

template <class S>
Var<S> msps_loss(num::Tape<S>& tp, const MspsConfig& cfg, Var<S> rhythm_loss, Var<S> pos_loss,
                 double epoch) {
    double r = msps_ramp(epoch, cfg.ramp_epochs);
    Var<S> mix = tp.add(tp.scale(rhythm_loss, static_cast<S>(cfg.lambda_rhythm)),
                        tp.scale(pos_loss, static_cast<S>(cfg.lambda_pos)));
    return tp.scale(mix, static_cast<S>(r));
}

// ---- JEPA ----

struct JepaConfig {
    std::size_t hidden = 256;
    double weight = 0.15;      // lambda_JEPA
    double ema_momentum = 0.996;
};

struct JepaHead {
    JepaConfig cfg;
    LinearIds w1, w2;  // d -> hidden -> d
};

template <class S>
JepaHead make_jepa_head(ParamStore<S>& ps, const JepaConfig& cfg, std::size_t d_model, Rng& rng,
                        double init_std) {
    JepaHead h;
    h.cfg = cfg;
    h.w1 = model::make_linear(ps, "jepa.w1", d_model, cfg.hidden, rng, init_std);
    h.w2 = model::make_linear(ps, "jepa.w2", cfg.hidden, d_model, rng, init_std);
    return h;
}

// MSE between predictor(context H at the masked sites) and the detached EMA
// target H at the same sites. ema_h is plain data: no gradient reaches it.
template <class S>
Var<S> jepa_loss(num::Tape<S>& tp, ParamStore<S>& ps, const JepaHead& head, Var<S> context_h,
                 const Tensor<S>& ema_h, const std::vector<std::size_t>& mask_rows) {
    if (mask_rows.empty()) return tp.input(Tensor<S>({1}, S(0)));
    std::size_t d = tp.val(context_h).cols();
    Var<S> ctx = tp.gather_rows(context_h, mask_rows);
    Var<S> pred = linear(tp, ps, head.w2, tp.gelu(linear(tp, ps, head.w1, ctx)));
    Tensor<S> tgt({mask_rows.size(), d});
    for (std::size_t r = 0; r < mask_rows.size(); ++r)
        for (std::size_t c = 0; c < d; ++c) tgt.v[r * d + c] = ema_h.v[mask_rows[r] * d + c];
    Var<S> diff = tp.sub(pred, tp.input(tgt));
    return tp.scale(tp.sum_all(tp.mul(diff, diff)),
                    static_cast<S>(1.0 / static_cast<double>(mask_rows.size() * d)));
}

// ---- view contrast (NT-Xent) ----

struct ViewConfig {
    double tau = 0.07;
    std::size_t proj_dim = 256;
    double weight = 0.1;        // lambda_view
    double lead_mask_prob = 0.25;
    double latent_dropout = 0.1;
};

struct ViewHead {
    ViewConfig cfg;
    LinearIds w1, w2;  // d -> d -> proj_dim
};

template <class S>
ViewHead make_view_head(ParamStore<S>& ps, const ViewConfig& cfg, std::size_t d_model, Rng& rng,
                        double init_std) {
    ViewHead h;
    h.cfg = cfg;
    h.w1 = model::make_linear(ps, "view.w1", d_model, d_model, rng, init_std);
    h.w2 = model::make_linear(ps, "view.w2", d_model, cfg.proj_dim, rng, init_std);
    return h;
}

// Standard NT-Xent over 2B projections; positives are (i, i+B).
template <class S>
Var<S> view_contrast_loss(num::Tape<S>& tp, ParamStore<S>& ps, const ViewHead& head, Var<S> h_view_a,
                          Var<S> h_view_b) {
    std::size_t b_n = tp.val(h_view_a).rows();
    if (b_n < 2) throw std::invalid_argument("view_contrast_loss: needs at least 2 records");
    if (tp.val(h_view_b).rows() != b_n) throw std::invalid_argument("view batch mismatch");
    auto project = [&](Var<S> h) {
        return tp.l2_normalize_rows(linear(tp, ps, head.w2, tp.gelu(linear(tp, ps, head.w1, h))));
    };
    Var<S> z = tp.concat_rows({project(h_view_a), project(h_view_b)});  // [2B, proj]
    Var<S> sims = tp.scale(tp.matmul(z, tp.transpose(z)), static_cast<S>(1.0 / head.cfg.tau));
    std::size_t n2 = 2 * b_n;
    Tensor<S> diag_mask({n2, n2}, S(0));
    for (std::size_t i = 0; i < n2; ++i) diag_mask.v[i * n2 + i] = S(-1e9);
    Var<S> logits = tp.add(sims, tp.input(diag_mask));
    Var<S> logp = tp.log_softmax_rows(logits);
    Tensor<S> w({n2, n2}, S(0));
    S inv = static_cast<S>(-1.0 / static_cast<double>(n2));
    for (std::size_t i = 0; i < b_n; ++i) {
        w.v[i * n2 + (i + b_n)] = inv;
        w.v[(i + b_n) * n2 + i] = inv;
    }
    return tp.weighted_sum(logp, std::move(w));
}

// ---- MPCT (legacy multi-prototype concept alignment) ----

struct MpctConfig {
    std::size_t variants = 3;     // K_var
    std::size_t text_dim = 384;   // d_text
    std::uint64_t table_seed = 1234;
    double tau = 0.07;            // attention + InfoNCE temperature
    double opa_tau = 0.1;
    double beta_ica = 0.3, beta_bca = 0.3, beta_opa = 0.2;
    double weight = 0.3;          // lambda_MPCT
};

struct MpctHead {
    MpctConfig cfg;
    std::size_t w_ica = 0;  // [d, d_text]
    std::size_t w_bca = 0;  // [d, d_text]
    std::size_t w_opa = 0;  // [d, d_c]
};

template <class S>
MpctHead make_mpct_head(ParamStore<S>& ps, const MpctConfig& cfg, std::size_t d_model,
                        std::size_t d_concept, Rng& rng, double init_std) {
    MpctHead h;
    h.cfg = cfg;
    h.w_ica = ps.add("mpct.w_ica", model::init_normal<S>({d_model, cfg.text_dim}, rng, init_std));
    h.w_bca = ps.add("mpct.w_bca", model::init_normal<S>({d_model, cfg.text_dim}, rng, init_std));
    h.w_opa = ps.add("mpct.w_opa", model::init_normal<S>({d_model, d_concept}, rng, init_std));
    return h;
}

// Deterministic unit-norm embedding for text variant k of concept node n.
// Stands in for a frozen text encoder over an ontology-grounded variant bag.
template <class S>
Tensor<S> variant_embedding(const MpctConfig& cfg, std::size_t node, std::size_t variant) {
    Rng rng(num::mix_seed(cfg.table_seed, node, variant, 0x4d504354));
    Tensor<S> e({1, cfg.text_dim});
    double ss = 0;
    for (auto& x : e.v) {
        double g = rng.gauss();
        x = static_cast<S>(g);
        ss += g * g;
    }
    S inv = static_cast<S>(1.0 / std::sqrt(ss));
    for (auto& x : e.v) x *= inv;
    return e;
}

// Variant bank for a record's active leaves: [n_active * K_var, d_text].
template <class S>
Tensor<S> variant_bank(const MpctConfig& cfg, const std::vector<int>& active_leaves) {
    Tensor<S> bank({active_leaves.size() * cfg.variants, cfg.text_dim});
    std::size_t r = 0;
    for (int node : active_leaves) {
        for (std::size_t k = 0; k < cfg.variants; ++k, ++r) {
            Tensor<S> e = variant_embedding<S>(cfg, static_cast<std::size_t>(node), k);
            std::copy(e.v.begin(), e.v.end(), bank.v.begin() + static_cast<long>(r * cfg.text_dim));
        }
    }
    return bank;
}

template <class S>
struct MpctInput {
    Var<S> h_rhythm;                 // [1, d]
    std::optional<Var<S>> beats;     // [n_beats, d] lead-mean features per beat
    std::vector<int> active_leaves;  // non-empty
};

template <class S>
struct MpctTerms {
    Var<S> total, ica, bca, opa;
};

namespace detail {

// Diagonal-positive bidirectional InfoNCE between two aligned [n, d] banks.
template <class S>
Var<S> bidirectional_infonce(num::Tape<S>& tp, Var<S> u, Var<S> v, double tau) {
    std::size_t n = tp.val(u).rows();
    Var<S> logits_uv = tp.scale(tp.matmul(u, tp.transpose(v)), static_cast<S>(1.0 / tau));
    Var<S> logits_vu = tp.transpose(logits_uv);
    Tensor<S> w({n, n}, S(0));
    S inv = static_cast<S>(-0.5 / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) w.v[i * n + i] = inv;
    Var<S> fwd = tp.weighted_sum(tp.log_softmax_rows(logits_uv), w);
    Var<S> bwd = tp.weighted_sum(tp.log_softmax_rows(logits_vu), std::move(w));
    return tp.add(fwd, bwd);
}

}  // namespace detail

// Instance-, beat-, and ontology-granularity alignment against the variant
// bank; prototypes enter OPA frozen (detached), matching the legacy head.
template <class S>
MpctTerms<S> mpct_loss(num::Tape<S>& tp, ParamStore<S>& ps, const MpctHead& head,
                       const std::vector<MpctInput<S>>& inputs, const Tensor<S>& frozen_prototypes) {
    const MpctConfig& cfg = head.cfg;
    Var<S> zero = tp.input(Tensor<S>({1}, S(0)));
    MpctTerms<S> t{zero, zero, zero, zero};
    if (inputs.empty()) return t;

    // ICA: record embedding vs cross-attention summary of its variant bank.
    std::vector<Var<S>> us, summaries;
    for (const auto& in : inputs) {
        Var<S> u = tp.l2_normalize_rows(tp.matmul(in.h_rhythm, tp.param(ps, head.w_ica)));
        Var<S> bank = tp.input(variant_bank<S>(cfg, in.active_leaves));
        Var<S> att = tp.softmax_rows(
            tp.scale(tp.matmul(u, tp.transpose(bank)), static_cast<S>(1.0 / cfg.tau)));
        summaries.push_back(tp.l2_normalize_rows(tp.matmul(att, bank)));
        us.push_back(u);
    }
    t.ica = detail::bidirectional_infonce(tp, tp.concat_rows(us), tp.concat_rows(summaries), cfg.tau);

    // BCA: per-beat features vs their attended concept variants, contrasted
    // within the record; records without beats are skipped.
    std::vector<Var<S>> bca_terms;
    for (const auto& in : inputs) {
        if (!in.beats) continue;
        Var<S> b = tp.l2_normalize_rows(tp.matmul(*in.beats, tp.param(ps, head.w_bca)));
        Var<S> bank = tp.input(variant_bank<S>(cfg, in.active_leaves));
        Var<S> att = tp.softmax_rows(
            tp.scale(tp.matmul(b, tp.transpose(bank)), static_cast<S>(1.0 / cfg.tau)));
        Var<S> aligned = tp.l2_normalize_rows(tp.matmul(att, bank));
        bca_terms.push_back(detail::bidirectional_infonce(tp, b, aligned, cfg.tau));
    }
    if (!bca_terms.empty()) {
        Var<S> acc = bca_terms[0];
        for (std::size_t i = 1; i < bca_terms.size(); ++i) acc = tp.add(acc, bca_terms[i]);
        t.bca = tp.scale(acc, static_cast<S>(1.0 / static_cast<double>(bca_terms.size())));
    }

    // OPA: KL(uniform over active leaves || softmax assignment over the 40
    // frozen prototypes).
    Var<S> proto = tp.input(frozen_prototypes);
    std::vector<Var<S>> opa_terms;
    for (const auto& in : inputs) {
        Var<S> q = tp.l2_normalize_rows(tp.matmul(in.h_rhythm, tp.param(ps, head.w_opa)));
        Var<S> logits = tp.scale(tp.matmul(q, tp.transpose(proto)), static_cast<S>(1.0 / cfg.opa_tau));
        Var<S> logp = tp.log_softmax_rows(logits);
        std::size_t n_nodes = frozen_prototypes.rows();
        Tensor<S> w({1, n_nodes}, S(0));
        double m = static_cast<double>(in.active_leaves.size());
        for (int c : in.active_leaves) w.v[static_cast<std::size_t>(c)] = static_cast<S>(-1.0 / m);
        // KL = -sum_active (1/m) log q - log m
        opa_terms.push_back(
            tp.add_scalar(tp.weighted_sum(logp, std::move(w)), static_cast<S>(-std::log(m))));
    }
    Var<S> acc = opa_terms[0];
    for (std::size_t i = 1; i < opa_terms.size(); ++i) acc = tp.add(acc, opa_terms[i]);
    t.opa = tp.scale(acc, static_cast<S>(1.0 / static_cast<double>(opa_terms.size())));

    t.total = tp.add(tp.add(tp.scale(t.ica, static_cast<S>(cfg.beta_ica)),
                            tp.scale(t.bca, static_cast<S>(cfg.beta_bca))),
                     tp.scale(t.opa, static_cast<S>(cfg.beta_opa)));
    return t;
}

// ---- ablation gating and the total loss ----

enum class Ablation { C1, C2p, C2, C3 };

inline const char* ablation_name(Ablation a) {
    switch (a) {
        case Ablation::C1: return "C1";
        case Ablation::C2p: return "C2p";
        case Ablation::C2: return "C2";
        case Ablation::C3: return "C3";
    }
    return "?";
}

inline std::optional<Ablation> ablation_from(const std::string& s) {
    if (s == "C1") return Ablation::C1;
    if (s == "C2p" || s == "C2'") return Ablation::C2p;
    if (s == "C2") return Ablation::C2;
    if (s == "C3") return Ablation::C3;
    return std::nullopt;
}

struct AblationGates {
    bool jepa = false;
    bool view = false;
    bool mpct = false;
    bool gscl = false;
    bool msps = false;
    bool lead_mask_latent_dropout = false;
    bool rhythm_safe_augmentations = false;

    static AblationGates from(Ablation a) {
        AblationGates g;
        if (a == Ablation::C1) return g;
        g.jepa = g.view = g.mpct = g.lead_mask_latent_dropout = true;
        if (a == Ablation::C2p) return g;
        g.gscl = true;
        if (a == Ablation::C2) return g;
        g.msps = true;
        g.rhythm_safe_augmentations = true;
        return g;
    }
};

struct TotalWeights {
    double lambda_jepa = 0.15;
    double lambda_view = 0.1;
    double lambda_gscl = 1.0;
    double lambda_mpct = 0.3;
};

// Gated accumulation in a fixed order (AR, JEPA, view, MPCT, GSCL, MSPS), so
// adjacent ablation columns differ by exactly one floating-point addition.
// Terms gated off are skipped entirely; a supplied-but-gated term bumps the
// ignored counter instead of contributing.
template <class S>
Var<S> total_loss(num::Tape<S>& tp, const AblationGates& gates, const TotalWeights& w, Var<S> ar,
                  std::optional<Var<S>> jepa, std::optional<Var<S>> view, std::optional<Var<S>> mpct,
                  std::optional<Var<S>> gscl, std::optional<Var<S>> msps,
                  std::size_t* ignored_terms = nullptr) {
    auto note_ignored = [&](bool present, bool gated_on) {
        if (present && !gated_on && ignored_terms) ++*ignored_terms;
    };
    note_ignored(jepa.has_value(), gates.jepa);
    note_ignored(view.has_value(), gates.view);
    note_ignored(mpct.has_value(), gates.mpct);
    note_ignored(gscl.has_value(), gates.gscl);
    note_ignored(msps.has_value(), gates.msps);

    Var<S> total = ar;
    if (gates.jepa && jepa) total = tp.add(total, tp.scale(*jepa, static_cast<S>(w.lambda_jepa)));
    if (gates.view && view) total = tp.add(total, tp.scale(*view, static_cast<S>(w.lambda_view)));
    if (gates.mpct && mpct) total = tp.add(total, tp.scale(*mpct, static_cast<S>(w.lambda_mpct)));
    if (gates.gscl && gscl) total = tp.add(total, tp.scale(*gscl, static_cast<S>(w.lambda_gscl)));
    if (gates.msps && msps) total = tp.add(total, *msps);  // MSPS carries its own weights
    return total;
}

}  // namespace marecg::objectives
