#include "marecg/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <sstream>
#include <stdexcept>

namespace marecg::train {

namespace {

using model::EncoderModel;
using model::MaskPlan;
using num::ParamStore;
using num::Rng;
using num::Tensor;
using objectives::AblationGates;
using Tape = num::Tape<float>;
using Var = num::Tape<float>::Var;

struct PreparedRecord {
    const ingest::EcgRecord* rec = nullptr;
    std::size_t global_index = 0;
    physio::RhythmTargets rhythm;
    physio::PositionTargets position;
    std::vector<double> soft_target;                     // empty when no primary positive
    std::vector<std::vector<std::size_t>> beat_patches;  // patch time indices per beat
};

// Patch time indices whose window overlaps [peak - delta_r, peak + rr/2).
std::vector<std::vector<std::size_t>> beat_patch_groups(const std::vector<std::size_t>& peaks,
                                                        double mean_rr, const model::ModelConfig& mc,
                                                        double delta_r) {
    std::vector<std::vector<std::size_t>> groups;
    if (mean_rr <= 0) return groups;
    std::size_t t_n = mc.tokens();
    for (std::size_t p : peaks) {
        double lo = static_cast<double>(p) - delta_r;
        double hi = static_cast<double>(p) + mean_rr / 2.0;
        std::vector<std::size_t> g;
        for (std::size_t i = 0; i < t_n; ++i) {
            double a = static_cast<double>(i * mc.patch_stride);
            double b = a + static_cast<double>(mc.patch_len);
            if (b > lo && a < hi) g.push_back(i);
        }
        if (!g.empty()) groups.push_back(std::move(g));
    }
    return groups;
}

struct AugmentResult {
    std::vector<std::vector<float>> signal;
    std::string ops;
};

// View augmentations on the normalized signal. The rhythm-safe set keeps the
// time axis untouched; the unconstrained set may crop or dilate it.
AugmentResult augment(const std::vector<std::vector<float>>& sig, bool rhythm_safe,
                      double lead_mask_prob, Rng& rng) {
    AugmentResult res;
    res.signal = sig;
    double amp = rng.uniform(0.8, 1.25);
    res.ops = "amp";
    for (auto& lead : res.signal)
        for (float& x : lead) x = static_cast<float>(x * amp);

    double noise_sd = rng.uniform(0.01, 0.05);
    double wander_amp = rng.uniform(0.0, 0.1);
    double wander_freq = rng.uniform(0.1, 0.5);
    double wander_phase = rng.uniform(0.0, 6.283185307179586);
    res.ops += "+noise+wander";
    for (auto& lead : res.signal) {
        for (std::size_t i = 0; i < lead.size(); ++i) {
            double t = static_cast<double>(i);
            lead[i] += static_cast<float>(noise_sd * rng.gauss() +
                                          wander_amp * std::sin(wander_freq * 0.01 * t + wander_phase));
        }
    }
    bool any_mask = false;
    for (auto& lead : res.signal) {
        if (rng.uniform() < lead_mask_prob) {
            std::fill(lead.begin(), lead.end(), 0.0f);
            any_mask = true;
        }
    }
    if (any_mask) res.ops += "+leadmask";

    if (!rhythm_safe) {
        double which = rng.uniform();
        std::size_t len = res.signal[0].size();
        if (which < 0.5) {
            // Random temporal crop to 80%, content shifted left, zero tail.
            std::size_t keep = static_cast<std::size_t>(0.8 * static_cast<double>(len));
            std::size_t start = static_cast<std::size_t>(rng.below(len - keep + 1));
            for (auto& lead : res.signal) {
                std::vector<float> out(len, 0.0f);
                std::copy(lead.begin() + static_cast<long>(start),
                          lead.begin() + static_cast<long>(start + keep), out.begin());
                lead = std::move(out);
            }
            res.ops += "+crop";
        } else {
            // Time dilation by up to +/-10%, linear interpolation.
            double factor = rng.uniform(0.9, 1.1);
            for (auto& lead : res.signal) {
                std::vector<float> out(len, 0.0f);
                for (std::size_t i = 0; i < len; ++i) {
                    double srcpos = static_cast<double>(i) * factor;
                    std::size_t lo = static_cast<std::size_t>(srcpos);
                    if (lo + 1 >= len) break;
                    double frac = srcpos - static_cast<double>(lo);
                    out[i] = static_cast<float>((1.0 - frac) * lead[lo] + frac * lead[lo + 1]);
                }
                lead = std::move(out);
            }
            res.ops += "+dilate";
        }
    }
    return res;
}

// Encoder forward without gradients (EMA target path).
Tensor<float> frozen_encode(const Pipeline<float>& p, ParamStore<float>& store,
                            const Tensor<float>& patches) {
    Tape tp;
    tp.set_grad_enabled(false);
    Var z = model::tokenize(tp, store, p.mdl, patches);
    Var h = model::encode(tp, store, p.mdl, z);
    return tp.val(h);
}

struct MicroTerms {
    double ar_recon = 0, ar_mask = 0, ar = 0;
    double jepa = 0, view = 0, mpct = 0, gscl = 0;
    double msps_rhythm = 0, msps_pos = 0, msps = 0;
    double total = 0;
    bool gscl_active = false;
    bool view_active = false;
};

struct StepContext {
    Pipeline<float>* pipe;
    ParamStore<float>* ema;
    AblationGates gates;
    std::uint64_t seed;
    double epoch_float;
    std::vector<std::string>* aug_log;
    std::size_t* gscl_skipped;
    std::size_t* ignored_terms;
};

MicroTerms forward_backward_micro(const StepContext& ctx, const std::vector<PreparedRecord>& batch,
                                  std::size_t step, float accumulation_scale) {
    Pipeline<float>& p = *ctx.pipe;
    const EncoderModel& m = p.mdl;
    const std::size_t c_n = m.cfg.leads, t_n = m.cfg.tokens();
    Tape tp;

    std::vector<Var> ar_terms, ar_recon_terms, ar_mask_terms, jepa_terms;
    std::vector<Var> hs;                        // rhythm-pooled embedding per record
    std::vector<Var> view_a, view_b;
    std::vector<Var> hbars;
    std::vector<physio::RhythmTargets> rhythm_targets;
    std::vector<physio::PositionTargets> position_targets;
    std::vector<std::size_t> gscl_records;      // indices into batch with leaf targets

    for (std::size_t bi = 0; bi < batch.size(); ++bi) {
        const PreparedRecord& pr = batch[bi];
        Tensor<float> patches = model::patchify<float>(pr.rec->signal, m.cfg);
        MaskPlan plan = model::sample_mask(
            c_n, t_n, m.cfg.mask_ratio, num::mix_seed(ctx.seed, step, pr.global_index, 0x4152));

        Var z = model::tokenize(tp, p.params, m, patches);
        Var zm = model::apply_mask(tp, p.params, m, z, plan);
        Var h_enc = model::encode(tp, p.params, m, zm);

        Tensor<float> dec_in = model::shift_patches_right(patches, c_n, t_n);
        auto dec = model::decode_and_reconstruct(tp, p.params, m, h_enc, dec_in, patches, plan);
        ar_recon_terms.push_back(dec.recon_loss);
        ar_mask_terms.push_back(dec.mask_loss);
        ar_terms.push_back(tp.add(tp.scale(dec.recon_loss, static_cast<float>(p.recon_weight)),
                                  tp.scale(dec.mask_loss, static_cast<float>(p.mask_weight))));

        hs.push_back(model::rhythm_pool(tp, p.params, m, h_enc, c_n, t_n));
        hbars.push_back(model::lead_mean(tp, h_enc, c_n, t_n));
        rhythm_targets.push_back(pr.rhythm);
        position_targets.push_back(pr.position);
        if (!pr.soft_target.empty()) gscl_records.push_back(bi);

        if (ctx.gates.jepa) {
            Tensor<float> ema_h = frozen_encode(p, *ctx.ema, patches);
            jepa_terms.push_back(objectives::jepa_loss(tp, p.params, p.jepa, h_enc, ema_h, plan.rows));
        }
        if (ctx.gates.view) {
            for (int view_idx = 0; view_idx < 2; ++view_idx) {
                Rng arng(num::mix_seed(ctx.seed, step, pr.global_index,
                                       0x5649 + static_cast<std::uint64_t>(view_idx)));
                AugmentResult aug = augment(pr.rec->signal, ctx.gates.rhythm_safe_augmentations,
                                            ctx.gates.lead_mask_latent_dropout
                                                ? p.view_cfg.lead_mask_prob
                                                : 0.0,
                                            arng);
                if (ctx.aug_log) {
                    std::ostringstream line;
                    line << "step=" << step << " rec=" << pr.rec->id
                         << " view=" << (view_idx ? "B" : "A") << " ops=" << aug.ops;
                    ctx.aug_log->push_back(line.str());
                }
                Tensor<float> vpatch = model::patchify<float>(aug.signal, m.cfg);
                Var vz = model::tokenize(tp, p.params, m, vpatch);
                Var vh = model::encode(tp, p.params, m, vz);
                Var vpool = model::rhythm_pool(tp, p.params, m, vh, c_n, t_n);
                if (ctx.gates.lead_mask_latent_dropout && p.view_cfg.latent_dropout > 0) {
                    vpool = tp.dropout(vpool, p.view_cfg.latent_dropout,
                                       num::mix_seed(ctx.seed, step, pr.global_index,
                                                     0x4c44 + static_cast<std::uint64_t>(view_idx)));
                }
                (view_idx ? view_b : view_a).push_back(vpool);
            }
        }
    }

    auto mean_of = [&](const std::vector<Var>& terms) {
        Var acc = terms[0];
        for (std::size_t i = 1; i < terms.size(); ++i) acc = tp.add(acc, terms[i]);
        return tp.scale(acc, static_cast<float>(1.0 / static_cast<double>(terms.size())));
    };

    Var ar = mean_of(ar_terms);
    std::optional<Var> jepa, view, mpct, gscl, msps;

    if (ctx.gates.jepa) jepa = mean_of(jepa_terms);

    if (ctx.gates.view && batch.size() >= 2) {
        view = objectives::view_contrast_loss(tp, p.params, p.view, tp.concat_rows(view_a),
                                              tp.concat_rows(view_b));
    }

    // Prototypes are shared by GSCL (with gradient) and MPCT (frozen).
    std::optional<Var> prototypes;
    Tensor<float> frozen_protos;
    if (ctx.gates.gscl || ctx.gates.mpct) {
        Var pr_var = objectives::compute_prototypes(tp, p.params, p.proto, p.a_hat,
                                                    /*train=*/ctx.gates.gscl,
                                                    num::mix_seed(ctx.seed, step, 0x70726f));
        prototypes = pr_var;
        frozen_protos = tp.val(pr_var);
    }

    if (ctx.gates.mpct) {
        std::vector<objectives::MpctInput<float>> inputs;
        for (std::size_t bi : gscl_records) {
            const PreparedRecord& prr = batch[bi];
            objectives::MpctInput<float> in;
            Var h_in = hs[bi];
            if (ctx.gates.lead_mask_latent_dropout && p.view_cfg.latent_dropout > 0) {
                h_in = tp.dropout(h_in, p.view_cfg.latent_dropout,
                                  num::mix_seed(ctx.seed, step, prr.global_index, 0x4d50));
            }
            in.h_rhythm = h_in;
            in.active_leaves = prr.rec->leaf_target.active;
            if (!prr.beat_patches.empty()) {
                std::vector<Var> beats;
                for (const auto& g : prr.beat_patches) {
                    Var rows = tp.gather_rows(hbars[bi], g);
                    Tensor<float> avg({1, g.size()}, static_cast<float>(1.0 / g.size()));
                    beats.push_back(tp.matmul(tp.input(avg), rows));
                }
                in.beats = tp.concat_rows(beats);
            }
            inputs.push_back(std::move(in));
        }
        if (!inputs.empty())
            mpct = objectives::mpct_loss(tp, p.params, p.mpct, inputs, frozen_protos).total;
    }

    bool gscl_active = false;
    if (ctx.gates.gscl) {
        if (gscl_records.empty()) {
            if (ctx.gscl_skipped) ++*ctx.gscl_skipped;
        } else {
            std::vector<Var> sel;
            Tensor<float> targets({gscl_records.size(), static_cast<std::size_t>(p.dtree.n)});
            for (std::size_t k = 0; k < gscl_records.size(); ++k) {
                sel.push_back(hs[gscl_records[k]]);
                const auto& st = batch[gscl_records[k]].soft_target;
                for (std::size_t c = 0; c < st.size(); ++c)
                    targets.v[k * st.size() + c] = static_cast<float>(st[c]);
            }
            gscl = objectives::gscl_loss(tp, p.params, p.gscl, tp.concat_rows(sel), targets,
                                         *prototypes);
            gscl_active = true;
        }
    }

    MicroTerms out;
    if (ctx.gates.msps) {
        auto sup = objectives::prepare_rhythm_supervision(rhythm_targets);
        Var hbar_all = tp.concat_rows(hbars);
        auto rhythm_terms = objectives::patch_rhythm_loss(
            tp, p.params, p.msps, hbar_all, t_n, sup, /*train=*/true,
            num::mix_seed(ctx.seed, step, 0x6d735268));
        Var pos = objectives::patch_pos_loss(tp, p.params, p.msps, hbar_all, t_n, position_targets,
                                             /*train=*/true, num::mix_seed(ctx.seed, step, 0x6d7370));
        msps = objectives::msps_loss(tp, p.msps_cfg, rhythm_terms.total, pos, ctx.epoch_float);
        out.msps_rhythm = tp.val(rhythm_terms.total).scalar();
        out.msps_pos = tp.val(pos).scalar();
    }

    Var total = objectives::total_loss(tp, ctx.gates, p.weights, ar, jepa, view, mpct, gscl, msps,
                                       ctx.ignored_terms);

    out.ar = tp.val(ar).scalar();
    out.ar_recon = tp.val(mean_of(ar_recon_terms)).scalar();
    out.ar_mask = tp.val(mean_of(ar_mask_terms)).scalar();
    if (jepa) out.jepa = tp.val(*jepa).scalar();
    if (view) {
        out.view = tp.val(*view).scalar();
        out.view_active = true;
    }
    if (mpct) out.mpct = tp.val(*mpct).scalar();
    if (gscl) out.gscl = tp.val(*gscl).scalar();
    if (msps) out.msps = tp.val(*msps).scalar();
    out.total = tp.val(total).scalar();
    out.gscl_active = gscl_active;

    tp.backward(tp.scale(total, accumulation_scale));
    return out;
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace

std::vector<std::string> ledger_columns(const AblationGates& gates) {
    std::vector<std::string> cols = {"step", "epoch", "lr", "ar_recon", "ar_mask", "ar"};
    if (gates.jepa) {
        cols.push_back("jepa");
        cols.push_back("jepa_w");
    }
    if (gates.view) {
        cols.push_back("view");
        cols.push_back("view_w");
    }
    if (gates.mpct) {
        cols.push_back("mpct");
        cols.push_back("mpct_w");
    }
    if (gates.gscl) {
        cols.push_back("gscl");
        cols.push_back("gscl_w");
    }
    if (gates.msps) {
        cols.push_back("msps_rhythm");
        cols.push_back("msps_pos");
        cols.push_back("msps_w");
    }
    cols.push_back("total");
    cols.push_back("grad_norm");
    cols.push_back("clipped");
    cols.push_back("skipped");
    cols.push_back("rhythm_safe");
    return cols;
}

namespace {

std::vector<PreparedRecord> prepare_records(const RunConfig& cfg, const Pipeline<float>& pipe,
                                            const std::vector<ingest::EcgRecord>& corpus) {
    physio::RhythmThresholds rth;
    rth.brady_bpm = cfg.get_f("theta_brady");
    rth.tachy_bpm = cfg.get_f("theta_tachy");
    rth.theta_alt = cfg.get_f("theta_alt");
    rth.nu_alt = static_cast<int>(cfg.get_i("nu_alt"));
    physio::PatchGrid grid{pipe.mcfg.patch_len, pipe.mcfg.patch_stride, pipe.mcfg.tokens()};
    double delta_r = cfg.get_f("delta_r");
    std::size_t k_seq = cfg.get_u("k_seq");

    std::vector<PreparedRecord> prepared;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& rec = corpus[i];
        if (!rec.quality.pass) continue;
        PreparedRecord pr;
        pr.rec = &rec;
        pr.global_index = i;
        pr.rhythm = physio::rhythm_targets(rec.rpeaks, rec.fs, rth);
        pr.position = physio::position_targets(rec.rpeaks, pr.rhythm.mean_rr, grid, delta_r, k_seq);
        if (rec.leaf_target.has_leaf()) {
            pr.soft_target = snomed::soft_target(rec.leaf_target, pipe.dtree, pipe.gscl_cfg.sigma).t;
        }
        pr.beat_patches = beat_patch_groups(rec.rpeaks, pr.rhythm.mean_rr, pipe.mcfg, delta_r);
        prepared.push_back(std::move(pr));
    }
    return prepared;
}

}  // namespace

std::vector<double> accumulated_gradient(const RunConfig& cfg,
                                         const std::vector<ingest::EcgRecord>& corpus) {
    auto ablation = objectives::ablation_from(cfg.get("ablation"));
    if (!ablation) throw config_error("unknown ablation tag: " + cfg.get("ablation"));
    AblationGates gates = AblationGates::from(*ablation);
    Pipeline<float> pipe = Pipeline<float>::build(cfg);
    ParamStore<float> ema = pipe.params.clone_values();
    auto prepared = prepare_records(cfg, pipe, corpus);
    const std::size_t micro = cfg.get_u("micro_batch");
    const std::size_t accum = cfg.get_u("accumulation");
    if (prepared.size() < micro * accum) throw config_error("corpus smaller than one effective batch");

    pipe.params.zero_grads();
    std::size_t at = 0;
    for (std::size_t a = 0; a < accum; ++a) {
        std::vector<PreparedRecord> batch;
        for (std::size_t b = 0; b < micro; ++b) batch.push_back(prepared[at++]);
        StepContext ctx{&pipe, &ema, gates, cfg.get_u("seed"), 0.0, nullptr, nullptr, nullptr};
        forward_backward_micro(ctx, batch, 0, static_cast<float>(1.0 / accum));
    }
    std::vector<double> flat;
    for (const auto& e : pipe.params)
        for (float g : e.grad.v) flat.push_back(static_cast<double>(g));
    return flat;
}

std::vector<std::pair<objectives::Ablation, TrainResult>> ablation_matrix(
    const RunConfig& base_cfg, const std::vector<ingest::EcgRecord>& corpus) {
    std::vector<std::pair<objectives::Ablation, TrainResult>> out;
    for (auto ab : {objectives::Ablation::C1, objectives::Ablation::C2p, objectives::Ablation::C2,
                    objectives::Ablation::C3}) {
        RunConfig cfg = base_cfg;
        cfg.set("ablation", objectives::ablation_name(ab));
        out.emplace_back(ab, train(cfg, corpus));
    }
    return out;
}

TrainResult train(const RunConfig& cfg, const std::vector<ingest::EcgRecord>& corpus,
                  const std::string& checkpoint_dir) {
    auto ablation = objectives::ablation_from(cfg.get("ablation"));
    if (!ablation) throw config_error("unknown ablation tag: " + cfg.get("ablation"));
    AblationGates gates = AblationGates::from(*ablation);

    Pipeline<float> pipe = Pipeline<float>::build(cfg);
    ParamStore<float> ema = pipe.params.clone_values();

    const std::size_t micro = cfg.get_u("micro_batch");
    const std::size_t accum = cfg.get_u("accumulation");
    const std::size_t epochs = cfg.get_u("epochs");
    const std::size_t max_steps = cfg.get_u("max_steps");
    const std::uint64_t seed = cfg.get_u("seed");
    if (micro == 0 || accum == 0) throw config_error("micro_batch and accumulation must be positive");

    // Usable records: quality pass. Targets are derivable per record.
    std::vector<PreparedRecord> prepared = prepare_records(cfg, pipe, corpus);
    if (prepared.empty()) throw config_error("corpus empty after quality filter");

    const std::size_t effective = micro * accum;
    const std::size_t steps_per_epoch =
        std::max<std::size_t>(1, (prepared.size() + effective - 1) / effective);
    std::size_t total_steps = epochs * steps_per_epoch;
    if (max_steps) total_steps = std::min(total_steps, max_steps);

    num::AdamConfig adam;
    adam.beta1 = cfg.get_f("beta1");
    adam.beta2 = cfg.get_f("beta2");
    adam.weight_decay = cfg.get_f("weight_decay");
    num::LrSchedule sched;
    sched.peak_lr = cfg.get_f("peak_lr");
    sched.floor_lr = cfg.get_f("floor_lr");
    sched.warmup_epochs = cfg.get_f("warmup_epochs");
    sched.total_epochs = cfg.get_f("schedule_epochs");
    double clip_norm = cfg.get_f("clip_norm");
    double ema_momentum = cfg.get_f("ema_momentum");

    TrainResult result;
    std::ostringstream ledger;
    auto cols = ledger_columns(gates);
    for (std::size_t i = 0; i < cols.size(); ++i) ledger << (i ? "," : "") << cols[i];
    ledger << '\n';

    num::OptimState opt_state;
    // Cyclic shuffled deck of record indices.
    std::vector<std::size_t> deck;
    std::size_t deck_pos = 0, deck_epoch = 0;
    auto next_record = [&]() -> std::size_t {
        if (deck_pos >= deck.size()) {
            deck.resize(prepared.size());
            for (std::size_t i = 0; i < deck.size(); ++i) deck[i] = i;
            Rng rng(num::mix_seed(seed, deck_epoch++, 0x53485546));  // "SHUF"
            rng.shuffle(deck.begin(), deck.end());
            deck_pos = 0;
        }
        return deck[deck_pos++];
    };

    for (std::size_t step = 0; step < total_steps; ++step) {
        double epoch_float =
            static_cast<double>(opt_state.step) / static_cast<double>(steps_per_epoch);
        // The step applies the lr the schedule reaches at its end; evaluating
        // at the step start would hand AdamW the warmup's exact zero.
        double epoch_end =
            static_cast<double>(opt_state.step + 1) / static_cast<double>(steps_per_epoch);
        double lr = sched.at(std::min(epoch_end, sched.total_epochs));

        pipe.params.zero_grads();
        MicroTerms avg{};
        for (std::size_t a = 0; a < accum; ++a) {
            std::vector<PreparedRecord> batch;
            for (std::size_t b = 0; b < micro; ++b) batch.push_back(prepared[next_record()]);
            StepContext ctx{&pipe,
                            &ema,
                            gates,
                            seed,
                            epoch_float,
                            &result.augmentation_log,
                            &result.gscl_skipped_batches,
                            &result.ignored_terms};
            // Per-record randomness keys off (seed, optimizer step, record), so
            // the micro-batch split does not change what each record sees.
            MicroTerms t = forward_backward_micro(ctx, batch, step, static_cast<float>(1.0 / accum));
            avg.ar_recon += t.ar_recon / accum;
            avg.ar_mask += t.ar_mask / accum;
            avg.ar += t.ar / accum;
            avg.jepa += t.jepa / accum;
            avg.view += t.view / accum;
            avg.mpct += t.mpct / accum;
            avg.gscl += t.gscl / accum;
            avg.msps_rhythm += t.msps_rhythm / accum;
            avg.msps_pos += t.msps_pos / accum;
            avg.msps += t.msps / accum;
            avg.total += t.total / accum;
        }

        auto clip = num::clip_and_gate(pipe.params, clip_norm);
        bool applied = false;
        if (clip.applied) {
            applied = num::adamw_step(pipe.params, opt_state, lr, adam);
        }
        if (applied) {
            ++result.applied_steps;
            num::ema_update(ema, pipe.params, ema_momentum);
        } else {
            ++result.skipped_steps;
            pipe.params.zero_grads();
        }

        ledger << step << ',' << format_double(epoch_float) << ',' << format_double(lr);
        ledger << ',' << format_double(avg.ar_recon) << ',' << format_double(avg.ar_mask);
        ledger << ',' << format_double(avg.ar);
        if (gates.jepa)
            ledger << ',' << format_double(avg.jepa) << ','
                   << format_double(pipe.weights.lambda_jepa * avg.jepa);
        if (gates.view)
            ledger << ',' << format_double(avg.view) << ','
                   << format_double(pipe.weights.lambda_view * avg.view);
        if (gates.mpct)
            ledger << ',' << format_double(avg.mpct) << ','
                   << format_double(pipe.weights.lambda_mpct * avg.mpct);
        if (gates.gscl)
            ledger << ',' << format_double(avg.gscl) << ','
                   << format_double(pipe.weights.lambda_gscl * avg.gscl);
        if (gates.msps)
            ledger << ',' << format_double(avg.msps_rhythm) << ',' << format_double(avg.msps_pos)
                   << ',' << format_double(avg.msps);
        ledger << ',' << format_double(avg.total) << ',' << format_double(clip.norm) << ','
               << (clip.clipped ? 1 : 0) << ',' << (applied ? 0 : 1) << ','
               << (gates.rhythm_safe_augmentations ? 1 : 0) << '\n';

        bool at_epoch_boundary = (step + 1) % steps_per_epoch == 0 || step + 1 == total_steps;
        if (at_epoch_boundary && !checkpoint_dir.empty()) {
            CheckpointManifest man;
            man.ablation = objectives::ablation_name(*ablation);
            man.seed = seed;
            man.config_hash = cfg.hash();
            man.config_dump = cfg.dump();
            man.epoch = (step + 1) / steps_per_epoch;
            man.step = opt_state.step;
            std::filesystem::create_directories(checkpoint_dir);
            save_checkpoint(checkpoint_dir + "/ckpt_epoch" + std::to_string(man.epoch) + "_step" +
                                std::to_string(step + 1) + ".bin",
                            checkpoint_from_store(pipe.params, man));
        }
    }

    CheckpointManifest man;
    man.ablation = objectives::ablation_name(*ablation);
    man.seed = seed;
    man.config_hash = cfg.hash();
    man.config_dump = cfg.dump();
    man.epoch = total_steps / steps_per_epoch;
    man.step = opt_state.step;
    std::string csv = ledger.str();
    auto last_nl = csv.rfind('\n', csv.size() - 2);
    man.ledger_tail = last_nl == std::string::npos ? csv : csv.substr(last_nl + 1);
    result.ledger_csv = csv;
    result.final_checkpoint = checkpoint_from_store(pipe.params, man);
    return result;
}

}  // namespace marecg::train
