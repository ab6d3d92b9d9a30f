#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "marecg/core/optim.hpp"
#include "marecg/core/rng.hpp"
#include "marecg/core/tape.hpp"

namespace marecg::model {

using num::ParamStore;
using num::Rng;
using num::Tensor;

struct ModelConfig {
    std::size_t leads = 12;        // C
    std::size_t window = 4700;     // L
    std::size_t patch_len = 50;    // P_t
    std::size_t patch_stride = 25; // S_t
    std::size_t d_model = 768;
    std::size_t heads = 12;
    std::size_t enc_blocks = 12;
    std::size_t dec_blocks = 4;
    std::size_t mlp_ratio = 4;
    double mask_ratio = 0.5;
    std::size_t t_pred = 0;        // 0 selects ceil(T/4)
    std::size_t pool_queries = 4;
    double pool_eta = 0.1;
    double init_std = 0.02;

    std::size_t tokens() const {
        if (window < patch_len) throw std::invalid_argument("window shorter than patch");
        return (window - patch_len) / patch_stride + 1;
    }
    std::size_t t_pred_eff() const {
        std::size_t t = tokens();
        std::size_t p = t_pred ? t_pred : (t + 3) / 4;
        if (p > t) throw std::invalid_argument("prediction horizon exceeds token count");
        return p;
    }
};

// Per-block FLOP ratio of full spatiotemporal attention over the factorized
// spatial-then-temporal form.
inline double factorized_flop_ratio(std::size_t c, std::size_t t) {
    double cd = static_cast<double>(c), td = static_cast<double>(t);
    return (cd * cd * td * td) / (cd * td * td + cd * cd * td);
}

struct LinearIds {
    std::size_t w = 0;
    std::size_t b = 0;
    bool has_bias = false;
};

struct AttnIds {
    std::size_t wq = 0, wk = 0, wv = 0, wo = 0;
};

struct BlockIds {
    std::size_t ln1_g = 0, ln1_b = 0;
    AttnIds attn1;  // spatial (encoder) / causal temporal (decoder)
    std::size_t ln2_g = 0, ln2_b = 0;
    AttnIds attn2;  // temporal (encoder) / cross (decoder)
    std::size_t ln3_g = 0, ln3_b = 0;
    LinearIds mlp1, mlp2;
};

struct EncoderModel {
    ModelConfig cfg;
    std::size_t w_patch = 0;     // [P_t, d]
    std::size_t lead_embed = 0;  // [C, d]
    std::size_t pos_embed = 0;   // [T, d]
    std::size_t mask_token = 0;  // [1, d]
    std::vector<BlockIds> enc;
    std::size_t enc_lnf_g = 0, enc_lnf_b = 0;

    std::size_t dec_in_proj = 0;    // [P_t, d]
    std::size_t dec_start = 0;      // [1, d]
    std::size_t dec_lead_embed = 0; // [C, d]
    std::size_t dec_pos_embed = 0;  // [T, d]
    std::vector<BlockIds> dec;
    std::size_t dec_lnf_g = 0, dec_lnf_b = 0;
    LinearIds dec_out;  // [d, P_t]

    std::size_t pool_queries = 0;  // [Q, d]
    std::size_t pool_lead_w = 0;   // [d, 1]
    LinearIds pool_mlp1;  // [Q*d, d]
    LinearIds pool_mlp2;  // [d, d]
};

class encode_error : public std::runtime_error {
public:
    encode_error(const std::string& what, int block) : std::runtime_error(what), block_index(block) {}
    int block_index;
};

// ---- construction ----

template <class S>
Tensor<S> init_normal(std::vector<std::size_t> shape, Rng& rng, double std_dev) {
    Tensor<S> t(std::move(shape));
    for (auto& x : t.v) x = static_cast<S>(rng.trunc_gauss(std_dev));
    return t;
}

template <class S>
LinearIds make_linear(ParamStore<S>& ps, const std::string& name, std::size_t in, std::size_t out,
                      Rng& rng, double std_dev, bool bias = true) {
    LinearIds lin;
    lin.w = ps.add(name + ".w", init_normal<S>({in, out}, rng, std_dev));
    if (bias) {
        lin.b = ps.add(name + ".b", Tensor<S>({out}, S(0)));
        lin.has_bias = true;
    }
    return lin;
}

template <class S>
AttnIds make_attn(ParamStore<S>& ps, const std::string& name, std::size_t d, Rng& rng, double sd) {
    AttnIds a;
    a.wq = ps.add(name + ".wq", init_normal<S>({d, d}, rng, sd));
    a.wk = ps.add(name + ".wk", init_normal<S>({d, d}, rng, sd));
    a.wv = ps.add(name + ".wv", init_normal<S>({d, d}, rng, sd));
    a.wo = ps.add(name + ".wo", init_normal<S>({d, d}, rng, sd));
    return a;
}

template <class S>
BlockIds make_block(ParamStore<S>& ps, const std::string& name, std::size_t d, std::size_t mlp_ratio,
                    Rng& rng, double sd) {
    BlockIds b;
    b.ln1_g = ps.add(name + ".ln1.g", Tensor<S>({d}, S(1)));
    b.ln1_b = ps.add(name + ".ln1.b", Tensor<S>({d}, S(0)));
    b.attn1 = make_attn(ps, name + ".attn1", d, rng, sd);
    b.ln2_g = ps.add(name + ".ln2.g", Tensor<S>({d}, S(1)));
    b.ln2_b = ps.add(name + ".ln2.b", Tensor<S>({d}, S(0)));
    b.attn2 = make_attn(ps, name + ".attn2", d, rng, sd);
    b.ln3_g = ps.add(name + ".ln3.g", Tensor<S>({d}, S(1)));
    b.ln3_b = ps.add(name + ".ln3.b", Tensor<S>({d}, S(0)));
    b.mlp1 = make_linear(ps, name + ".mlp1", d, mlp_ratio * d, rng, sd);
    b.mlp2 = make_linear(ps, name + ".mlp2", mlp_ratio * d, d, rng, sd);
    return b;
}

template <class S>
EncoderModel make_model(ParamStore<S>& ps, const ModelConfig& cfg, Rng& rng) {
    if (cfg.d_model % cfg.heads != 0) throw std::invalid_argument("d_model must divide into heads");
    EncoderModel m;
    m.cfg = cfg;
    const std::size_t d = cfg.d_model, t = cfg.tokens();
    const double sd = cfg.init_std;
    m.w_patch = ps.add("tok.w_patch", init_normal<S>({cfg.patch_len, d}, rng, sd));
    m.lead_embed = ps.add("tok.lead_embed", init_normal<S>({cfg.leads, d}, rng, sd));
    m.pos_embed = ps.add("tok.pos_embed", init_normal<S>({t, d}, rng, sd));
    m.mask_token = ps.add("tok.mask_token", init_normal<S>({1, d}, rng, sd));
    for (std::size_t i = 0; i < cfg.enc_blocks; ++i)
        m.enc.push_back(make_block(ps, "enc.b" + std::to_string(i), d, cfg.mlp_ratio, rng, sd));
    m.enc_lnf_g = ps.add("enc.lnf.g", Tensor<S>({d}, S(1)));
    m.enc_lnf_b = ps.add("enc.lnf.b", Tensor<S>({d}, S(0)));

    m.dec_in_proj = ps.add("dec.in_proj", init_normal<S>({cfg.patch_len, d}, rng, sd));
    m.dec_start = ps.add("dec.start", init_normal<S>({1, d}, rng, sd));
    m.dec_lead_embed = ps.add("dec.lead_embed", init_normal<S>({cfg.leads, d}, rng, sd));
    m.dec_pos_embed = ps.add("dec.pos_embed", init_normal<S>({t, d}, rng, sd));
    for (std::size_t i = 0; i < cfg.dec_blocks; ++i)
        m.dec.push_back(make_block(ps, "dec.b" + std::to_string(i), d, cfg.mlp_ratio, rng, sd));
    m.dec_lnf_g = ps.add("dec.lnf.g", Tensor<S>({d}, S(1)));
    m.dec_lnf_b = ps.add("dec.lnf.b", Tensor<S>({d}, S(0)));
    m.dec_out = make_linear(ps, "dec.out", d, cfg.patch_len, rng, sd);

    m.pool_queries = ps.add("pool.queries", init_normal<S>({cfg.pool_queries, d}, rng, sd));
    m.pool_lead_w = ps.add("pool.lead_w", init_normal<S>({d, 1}, rng, sd));
    m.pool_mlp1 = make_linear(ps, "pool.mlp1", cfg.pool_queries * d, d, rng, sd);
    m.pool_mlp2 = make_linear(ps, "pool.mlp2", d, d, rng, sd);
    return m;
}

// ---- host-side lattice helpers (row index = lead * T + position) ----

template <class S>
Tensor<S> patchify(const std::vector<std::vector<float>>& signal, const ModelConfig& cfg) {
    const std::size_t c_n = signal.size(), t_n = cfg.tokens(), p = cfg.patch_len, s = cfg.patch_stride;
    Tensor<S> out({c_n * t_n, p});
    for (std::size_t c = 0; c < c_n; ++c) {
        if (signal[c].size() < cfg.window) throw std::invalid_argument("signal shorter than window");
        for (std::size_t i = 0; i < t_n; ++i) {
            for (std::size_t k = 0; k < p; ++k)
                out.v[(c * t_n + i) * p + k] = static_cast<S>(signal[c][i * s + k]);
        }
    }
    return out;
}

// Teacher-forcing input: row (c, i) holds patch (c, i-1); row (c, 0) is zero
// (it is overwritten by the learned start token after embedding).
template <class S>
Tensor<S> shift_patches_right(const Tensor<S>& patches, std::size_t c_n, std::size_t t_n) {
    Tensor<S> out(patches.shape, S(0));
    std::size_t p = patches.cols();
    for (std::size_t c = 0; c < c_n; ++c)
        for (std::size_t i = 1; i < t_n; ++i)
            for (std::size_t k = 0; k < p; ++k)
                out.v[(c * t_n + i) * p + k] = patches.v[(c * t_n + i - 1) * p + k];
    return out;
}

inline std::vector<std::size_t> row_lead_indices(std::size_t c_n, std::size_t t_n) {
    std::vector<std::size_t> idx(c_n * t_n);
    for (std::size_t c = 0; c < c_n; ++c)
        for (std::size_t i = 0; i < t_n; ++i) idx[c * t_n + i] = c;
    return idx;
}

inline std::vector<std::size_t> row_position_indices(std::size_t c_n, std::size_t t_n) {
    std::vector<std::size_t> idx(c_n * t_n);
    for (std::size_t c = 0; c < c_n; ++c)
        for (std::size_t i = 0; i < t_n; ++i) idx[c * t_n + i] = i;
    return idx;
}

// ---- mask plan ----

struct MaskPlan {
    std::vector<std::size_t> rows;  // lattice rows (lead * T + position), ascending
    double ratio = 0;
};

inline MaskPlan sample_mask(std::size_t c_n, std::size_t t_n, double ratio, std::uint64_t seed) {
    if (ratio <= 0.0 || ratio >= 1.0) throw std::invalid_argument("mask ratio must be in (0,1)");
    std::size_t total = c_n * t_n;
    std::size_t count = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(total)));
    std::vector<std::size_t> idx(total);
    for (std::size_t i = 0; i < total; ++i) idx[i] = i;
    Rng rng(num::mix_seed(seed, 0x4d41534b));  // "MASK"
    for (std::size_t j = 0; j < count; ++j) {
        std::size_t k = j + static_cast<std::size_t>(rng.below(total - j));
        std::swap(idx[j], idx[k]);
    }
    MaskPlan plan;
    plan.ratio = ratio;
    plan.rows.assign(idx.begin(), idx.begin() + static_cast<long>(count));
    std::sort(plan.rows.begin(), plan.rows.end());
    return plan;
}

// ---- forward pieces ----

template <class S>
using Var = typename num::Tape<S>::Var;

template <class S>
Var<S> linear(num::Tape<S>& tp, ParamStore<S>& ps, const LinearIds& lin, Var<S> x) {
    Var<S> y = tp.matmul(x, tp.param(ps, lin.w));
    if (lin.has_bias) y = tp.add_rowvec(y, tp.param(ps, lin.b));
    return y;
}

template <class S>
Var<S> tokenize(num::Tape<S>& tp, ParamStore<S>& ps, const EncoderModel& m, const Tensor<S>& patches) {
    std::size_t c_n = m.cfg.leads, t_n = m.cfg.tokens();
    if (patches.rows() != c_n * t_n) throw std::invalid_argument("tokenize: patch count mismatch");
    Var<S> z = tp.matmul(tp.input(patches), tp.param(ps, m.w_patch));
    Var<S> le = tp.gather_rows(tp.param(ps, m.lead_embed), row_lead_indices(c_n, t_n));
    Var<S> pe = tp.gather_rows(tp.param(ps, m.pos_embed), row_position_indices(c_n, t_n));
    return tp.add(tp.add(z, le), pe);
}

template <class S>
Var<S> apply_mask(num::Tape<S>& tp, ParamStore<S>& ps, const EncoderModel& m, Var<S> z,
                  const MaskPlan& plan) {
    return tp.replace_rows(z, plan.rows, tp.param(ps, m.mask_token));
}

inline std::vector<std::vector<std::size_t>> spatial_groups(std::size_t c_n, std::size_t t_n) {
    std::vector<std::vector<std::size_t>> g(t_n);
    for (std::size_t i = 0; i < t_n; ++i) {
        g[i].resize(c_n);
        for (std::size_t c = 0; c < c_n; ++c) g[i][c] = c * t_n + i;
    }
    return g;
}

inline std::vector<std::vector<std::size_t>> temporal_groups(std::size_t c_n, std::size_t t_n) {
    std::vector<std::vector<std::size_t>> g(c_n);
    for (std::size_t c = 0; c < c_n; ++c) {
        g[c].resize(t_n);
        for (std::size_t i = 0; i < t_n; ++i) g[c][i] = c * t_n + i;
    }
    return g;
}

using RowGroups = std::shared_ptr<const std::vector<std::vector<std::size_t>>>;

template <class S>
Var<S> attn_sublayer(num::Tape<S>& tp, ParamStore<S>& ps, const AttnIds& at, std::size_t ln_g,
                     std::size_t ln_b, Var<S> x, const RowGroups& groups, std::size_t heads,
                     bool causal, num::AttnProbe<S>* probe = nullptr) {
    Var<S> xn = tp.layernorm_rows(x, tp.param(ps, ln_g), tp.param(ps, ln_b));
    Var<S> q = tp.matmul(xn, tp.param(ps, at.wq));
    Var<S> k = tp.matmul(xn, tp.param(ps, at.wk));
    Var<S> v = tp.matmul(xn, tp.param(ps, at.wv));
    Var<S> att = tp.grouped_attention(q, k, v, heads, causal, groups, nullptr, probe);
    return tp.add(x, tp.matmul(att, tp.param(ps, at.wo)));
}

template <class S>
Var<S> cross_sublayer(num::Tape<S>& tp, ParamStore<S>& ps, const AttnIds& at, std::size_t ln_g,
                      std::size_t ln_b, Var<S> x, Var<S> memory, const RowGroups& groups,
                      std::size_t heads) {
    Var<S> xn = tp.layernorm_rows(x, tp.param(ps, ln_g), tp.param(ps, ln_b));
    Var<S> q = tp.matmul(xn, tp.param(ps, at.wq));
    Var<S> k = tp.matmul(memory, tp.param(ps, at.wk));
    Var<S> v = tp.matmul(memory, tp.param(ps, at.wv));
    Var<S> att = tp.grouped_attention(q, k, v, heads, false, groups, groups);
    return tp.add(x, tp.matmul(att, tp.param(ps, at.wo)));
}

template <class S>
Var<S> mlp_sublayer(num::Tape<S>& tp, ParamStore<S>& ps, const BlockIds& b, Var<S> x) {
    Var<S> xn = tp.layernorm_rows(x, tp.param(ps, b.ln3_g), tp.param(ps, b.ln3_b));
    return tp.add(x, linear(tp, ps, b.mlp2, tp.gelu(linear(tp, ps, b.mlp1, xn))));
}

// Factorized bidirectional encoder. Checks activations for finiteness after
// every block and reports the failing block index.
inline RowGroups shared_spatial_groups(std::size_t c_n, std::size_t t_n) {
    return std::make_shared<const std::vector<std::vector<std::size_t>>>(spatial_groups(c_n, t_n));
}

inline RowGroups shared_temporal_groups(std::size_t c_n, std::size_t t_n) {
    return std::make_shared<const std::vector<std::vector<std::size_t>>>(temporal_groups(c_n, t_n));
}

template <class S>
Var<S> encode(num::Tape<S>& tp, ParamStore<S>& ps, const EncoderModel& m, Var<S> z,
              num::AttnProbe<S>* probe = nullptr) {
    std::size_t c_n = m.cfg.leads, t_n = m.cfg.tokens();
    RowGroups sg = shared_spatial_groups(c_n, t_n);
    RowGroups tg = shared_temporal_groups(c_n, t_n);
    Var<S> x = z;
    for (std::size_t bi = 0; bi < m.enc.size(); ++bi) {
        const BlockIds& b = m.enc[bi];
        x = attn_sublayer(tp, ps, b.attn1, b.ln1_g, b.ln1_b, x, sg, m.cfg.heads, false, probe);
        probe = nullptr;
        x = attn_sublayer(tp, ps, b.attn2, b.ln2_g, b.ln2_b, x, tg, m.cfg.heads, false);
        x = mlp_sublayer(tp, ps, b, x);
        if (!tp.val(x).all_finite())
            throw encode_error("non-finite activation in encoder block " + std::to_string(bi),
                               static_cast<int>(bi));
    }
    return tp.layernorm_rows(x, tp.param(ps, m.enc_lnf_g), tp.param(ps, m.enc_lnf_b));
}

// Lead-axis mean: H [C*T, d] -> [T, d].
template <class S>
Var<S> lead_mean(num::Tape<S>& tp, Var<S> h, std::size_t c_n, std::size_t t_n) {
    std::vector<std::size_t> rows(t_n);
    Var<S> acc{};
    for (std::size_t c = 0; c < c_n; ++c) {
        for (std::size_t i = 0; i < t_n; ++i) rows[i] = c * t_n + i;
        Var<S> part = tp.gather_rows(h, rows);
        acc = (c == 0) ? part : tp.add(acc, part);
    }
    return tp.scale(acc, static_cast<S>(1.0 / static_cast<double>(c_n)));
}

template <class S>
struct PoolParts {
    Var<S> attn_branch;   // AttnPool output (MLP applied)
    Var<S> mean_scaled;   // eta * lead-time mean
    Var<S> h;             // sum of the two
};

template <class S>
PoolParts<S> rhythm_pool_parts(num::Tape<S>& tp, ParamStore<S>& ps, const EncoderModel& m, Var<S> h,
                               std::size_t c_n, std::size_t t_n) {
    const std::size_t d = m.cfg.d_model, qn = m.cfg.pool_queries;
    Var<S> queries = tp.param(ps, m.pool_queries);
    S inv_sqrt_d = static_cast<S>(1.0 / std::sqrt(static_cast<double>(d)));
    Tensor<S> avg_q({1, qn}, static_cast<S>(1.0 / static_cast<double>(qn)));

    std::vector<Var<S>> flats, lead_scores;
    std::vector<std::size_t> rows(t_n);
    for (std::size_t c = 0; c < c_n; ++c) {
        for (std::size_t i = 0; i < t_n; ++i) rows[i] = c * t_n + i;
        Var<S> hc = tp.gather_rows(h, rows);                                  // [T, d]
        Var<S> scores = tp.scale(tp.matmul(queries, tp.transpose(hc)), inv_sqrt_d);  // [Q, T]
        Var<S> att = tp.softmax_rows(scores);
        Var<S> out_c = tp.matmul(att, hc);                                    // [Q, d]
        Var<S> mean_q = tp.matmul(tp.input(avg_q), out_c);                    // [1, d]
        lead_scores.push_back(tp.matmul(mean_q, tp.param(ps, m.pool_lead_w)));  // [1, 1]
        flats.push_back(tp.reshape(out_c, {1, qn * d}));
    }
    Var<S> alpha = tp.softmax_rows(tp.reshape(tp.concat_rows(lead_scores), {1, c_n}));  // [1, C]
    Var<S> pooled = tp.matmul(alpha, tp.concat_rows(flats));  // [1, Q*d]
    Var<S> a1 = tp.gelu(linear(tp, ps, m.pool_mlp1, pooled));
    PoolParts<S> parts;
    parts.attn_branch = linear(tp, ps, m.pool_mlp2, a1);

    Tensor<S> avg_ct({1, c_n * t_n}, static_cast<S>(1.0 / static_cast<double>(c_n * t_n)));
    parts.mean_scaled = tp.scale(tp.matmul(tp.input(avg_ct), h), static_cast<S>(m.cfg.pool_eta));
    parts.h = tp.add(parts.attn_branch, parts.mean_scaled);
    return parts;
}

template <class S>
Var<S> rhythm_pool(num::Tape<S>& tp, ParamStore<S>& ps, const EncoderModel& m, Var<S> h,
                   std::size_t c_n, std::size_t t_n) {
    return rhythm_pool_parts(tp, ps, m, h, c_n, t_n).h;
}

// Mean squared error over selected lattice rows of a [rows, P] prediction,
// against the same rows of a constant target.
template <class S>
Var<S> mse_rows(num::Tape<S>& tp, Var<S> pred, const Tensor<S>& target,
                const std::vector<std::size_t>& rows) {
    std::size_t p = target.cols();
    Tensor<S> sel({rows.size(), p});
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t k = 0; k < p; ++k) sel.v[r * p + k] = target.v[rows[r] * p + k];
    Var<S> diff = tp.sub(tp.gather_rows(pred, rows), tp.input(sel));
    Var<S> sq = tp.mul(diff, diff);
    return tp.scale(tp.sum_all(sq), static_cast<S>(1.0 / static_cast<double>(rows.size() * p)));
}

template <class S>
struct DecodeResult {
    Var<S> recon_loss;  // MSE over the trailing prediction window, all leads
    Var<S> mask_loss;   // MSE over the masked lattice sites
    Var<S> predictions; // [C*T, P_t]
};

// Causal decoder: teacher-forced patch stream with per-lead causal
// self-attention, cross-attention over the (bidirectional) encoder output of
// the same lead, and a linear read-out to patch space.
template <class S>
DecodeResult<S> decode_and_reconstruct(num::Tape<S>& tp, ParamStore<S>& ps, const EncoderModel& m,
                                       Var<S> memory, const Tensor<S>& decoder_in_patches,
                                       const Tensor<S>& target_patches, const MaskPlan& plan) {
    std::size_t c_n = m.cfg.leads, t_n = m.cfg.tokens(), t_pred = m.cfg.t_pred_eff();
    Var<S> u = tp.matmul(tp.input(decoder_in_patches), tp.param(ps, m.dec_in_proj));
    u = tp.add(u, tp.gather_rows(tp.param(ps, m.dec_lead_embed), row_lead_indices(c_n, t_n)));
    u = tp.add(u, tp.gather_rows(tp.param(ps, m.dec_pos_embed), row_position_indices(c_n, t_n)));
    std::vector<std::size_t> start_rows(c_n);
    for (std::size_t c = 0; c < c_n; ++c) start_rows[c] = c * t_n;
    u = tp.replace_rows(u, start_rows, tp.param(ps, m.dec_start));

    RowGroups tg = shared_temporal_groups(c_n, t_n);
    for (const BlockIds& b : m.dec) {
        u = attn_sublayer(tp, ps, b.attn1, b.ln1_g, b.ln1_b, u, tg, m.cfg.heads, true);
        u = cross_sublayer(tp, ps, b.attn2, b.ln2_g, b.ln2_b, u, memory, tg, m.cfg.heads);
        u = mlp_sublayer(tp, ps, b, u);
    }
    Var<S> un = tp.layernorm_rows(u, tp.param(ps, m.dec_lnf_g), tp.param(ps, m.dec_lnf_b));
    Var<S> preds = linear(tp, ps, m.dec_out, un);

    std::vector<std::size_t> tail_rows;
    for (std::size_t c = 0; c < c_n; ++c)
        for (std::size_t i = t_n - t_pred; i < t_n; ++i) tail_rows.push_back(c * t_n + i);

    DecodeResult<S> res;
    res.predictions = preds;
    res.recon_loss = mse_rows(tp, preds, target_patches, tail_rows);
    res.mask_loss = mse_rows(tp, preds, target_patches, plan.rows);
    return res;
}

}  // namespace marecg::model
