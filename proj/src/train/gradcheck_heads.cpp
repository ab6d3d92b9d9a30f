#include "marecg/train/gradcheck_heads.hpp"

#include <stdexcept>

namespace marecg::train {

namespace {

using DTape = num::Tape<double>;
using DVar = num::Tape<double>::Var;
using num::Tensor;

struct AuditFixture {
    Pipeline<double> pipe;
    std::vector<Tensor<double>> patches;     // two records
    std::vector<Tensor<double>> dec_inputs;
    std::vector<model::MaskPlan> plans;
    Tensor<double> ema_h0, ema_h1;           // fixed JEPA targets
    std::vector<objectives::RhythmSupervision> rhythm_sup;
    std::vector<physio::PositionTargets> position;
    Tensor<double> soft_targets;             // [2, 40]
    std::vector<std::vector<int>> active;
    std::vector<std::vector<std::size_t>> beat_groups;  // per record (time indices)
    std::vector<Tensor<double>> view_noise;  // fixed per (record, view)
};

AuditFixture make_fixture(std::uint64_t seed) {
    AuditFixture fx{Pipeline<double>::build(tiny_config()), {}, {}, {}, {}, {}, {}, {}, {}, {}, {}, {}};
    const auto& mc = fx.pipe.mcfg;
    std::size_t c_n = mc.leads, t_n = mc.tokens();
    num::Rng rng(num::mix_seed(seed, 0x61756474));

    for (int r = 0; r < 2; ++r) {
        std::vector<std::vector<float>> sig(c_n, std::vector<float>(mc.window));
        for (auto& lead : sig)
            for (auto& x : lead) x = static_cast<float>(rng.gauss());
        fx.patches.push_back(model::patchify<double>(sig, mc));
        fx.dec_inputs.push_back(model::shift_patches_right(fx.patches.back(), c_n, t_n));
        fx.plans.push_back(model::sample_mask(c_n, t_n, 0.4, num::mix_seed(seed, r)));
        for (int v = 0; v < 2; ++v) {
            Tensor<double> noise = fx.patches.back();
            for (auto& x : noise.v) x += 0.05 * rng.gauss();
            fx.view_noise.push_back(std::move(noise));
        }
    }

    // Fixed EMA targets: the initial-parameter encoder output, detached.
    for (int r = 0; r < 2; ++r) {
        DTape tp;
        tp.set_grad_enabled(false);
        DVar z = model::tokenize(tp, fx.pipe.params, fx.pipe.mdl, fx.patches[r]);
        DVar h = model::encode(tp, fx.pipe.params, fx.pipe.mdl, z);
        (r == 0 ? fx.ema_h0 : fx.ema_h1) = tp.val(h);
    }

    objectives::RhythmSupervision s0;
    s0.alternation = physio::Flag::True;
    s0.bucket = physio::RateBucket::Normal;
    s0.regression_valid = true;
    s0.z_mean_rr = 0.7;
    s0.z_rr_cv = -0.7;
    objectives::RhythmSupervision s1;
    s1.alternation = physio::Flag::False;
    s1.bucket = physio::RateBucket::Tachy;
    s1.regression_valid = true;
    s1.z_mean_rr = -0.7;
    s1.z_rr_cv = 0.7;
    fx.rhythm_sup = {s0, s1};

    for (int r = 0; r < 2; ++r) {
        physio::PositionTargets pt;
        pt.seq_bucket = physio::seq_position_targets(t_n, fx.pipe.msps_cfg.k_seq);
        pt.phase.assign(t_n, physio::PhaseClass::PreR);
        pt.phase_masked.assign(t_n, false);
        pt.phase[1] = physio::PhaseClass::R;
        pt.phase[2] = physio::PhaseClass::ST;
        pt.phase[3] = physio::PhaseClass::TWave;
        pt.phase_masked[4] = true;
        fx.position.push_back(std::move(pt));
    }

    fx.active = {{19, 25}, {16, 17}};
    fx.soft_targets = Tensor<double>({2, static_cast<std::size_t>(fx.pipe.dtree.n)});
    for (int r = 0; r < 2; ++r) {
        snomed::LeafTarget lt;
        lt.active = fx.active[static_cast<std::size_t>(r)];
        lt.primary = lt.active.back();
        auto st = snomed::soft_target(lt, fx.pipe.dtree, fx.pipe.gscl_cfg.sigma);
        for (std::size_t c = 0; c < st.t.size(); ++c)
            fx.soft_targets.v[static_cast<std::size_t>(r) * st.t.size() + c] = st.t[c];
    }
    fx.beat_groups = {{0, 1}, {2, 3}};
    return fx;
}

}  // namespace

HeadAudit audit_head(const std::string& head, std::uint64_t seed, double epsilon) {
    AuditFixture fx = make_fixture(seed);
    Pipeline<double>& p = fx.pipe;
    const auto& mc = p.mcfg;
    std::size_t c_n = mc.leads, t_n = mc.tokens();

    auto encode_record = [&](DTape& tp, int r, bool masked) {
        DVar z = model::tokenize(tp, p.params, p.mdl, fx.patches[static_cast<std::size_t>(r)]);
        if (masked) z = model::apply_mask(tp, p.params, p.mdl, z, fx.plans[static_cast<std::size_t>(r)]);
        return model::encode(tp, p.params, p.mdl, z);
    };

    std::function<double(bool)> loss_fn;
    if (head == "ar") {
        loss_fn = [&](bool grads) {
            DTape tp;
            DVar l{};
            for (int r = 0; r < 2; ++r) {
                DVar h = encode_record(tp, r, true);
                auto dec = model::decode_and_reconstruct(tp, p.params, p.mdl, h,
                                                         fx.dec_inputs[static_cast<std::size_t>(r)],
                                                         fx.patches[static_cast<std::size_t>(r)],
                                                         fx.plans[static_cast<std::size_t>(r)]);
                DVar lr = tp.add(dec.recon_loss, dec.mask_loss);
                l = r == 0 ? lr : tp.add(l, lr);
            }
            l = tp.scale(l, 0.5);
            if (grads) tp.backward(l);
            return tp.val(l).scalar();
        };
    } else if (head == "jepa") {
        loss_fn = [&](bool grads) {
            DTape tp;
            DVar l0 = objectives::jepa_loss(tp, p.params, p.jepa, encode_record(tp, 0, true), fx.ema_h0,
                                            fx.plans[0].rows);
            DVar l1 = objectives::jepa_loss(tp, p.params, p.jepa, encode_record(tp, 1, true), fx.ema_h1,
                                            fx.plans[1].rows);
            DVar l = tp.scale(tp.add(l0, l1), 0.5);
            if (grads) tp.backward(l);
            return tp.val(l).scalar();
        };
    } else if (head == "view") {
        loss_fn = [&](bool grads) {
            DTape tp;
            std::vector<DVar> ha, hb;
            for (int r = 0; r < 2; ++r) {
                for (int v = 0; v < 2; ++v) {
                    DVar z = model::tokenize(tp, p.params, p.mdl,
                                             fx.view_noise[static_cast<std::size_t>(2 * r + v)]);
                    DVar h = model::encode(tp, p.params, p.mdl, z);
                    (v == 0 ? ha : hb).push_back(model::rhythm_pool(tp, p.params, p.mdl, h, c_n, t_n));
                }
            }
            DVar l = objectives::view_contrast_loss(tp, p.params, p.view, tp.concat_rows(ha),
                                                    tp.concat_rows(hb));
            if (grads) tp.backward(l);
            return tp.val(l).scalar();
        };
    } else if (head == "mpct") {
        // The OPA prototypes are a detached snapshot; take it once, outside
        // the closure, so perturbing the prototype parameters cannot reach
        // the loss through the stop-gradient path.
        Tensor<double> frozen;
        {
            DTape sub;
            sub.set_grad_enabled(false);
            frozen = sub.val(objectives::compute_prototypes(sub, p.params, p.proto, p.a_hat,
                                                            false, 0));
        }
        loss_fn = [&, frozen](bool grads) {
            DTape tp;
            std::vector<objectives::MpctInput<double>> inputs;
            for (int r = 0; r < 2; ++r) {
                DVar h = encode_record(tp, r, false);
                objectives::MpctInput<double> in;
                in.h_rhythm = model::rhythm_pool(tp, p.params, p.mdl, h, c_n, t_n);
                in.active_leaves = fx.active[static_cast<std::size_t>(r)];
                DVar hbar = model::lead_mean(tp, h, c_n, t_n);
                DVar beat_rows = tp.gather_rows(hbar, fx.beat_groups[static_cast<std::size_t>(r)]);
                Tensor<double> avg({1, fx.beat_groups[static_cast<std::size_t>(r)].size()},
                                   1.0 / static_cast<double>(
                                             fx.beat_groups[static_cast<std::size_t>(r)].size()));
                in.beats = tp.matmul(tp.input(avg), beat_rows);
                inputs.push_back(std::move(in));
            }
            DVar l = objectives::mpct_loss(tp, p.params, p.mpct, inputs, frozen).total;
            if (grads) tp.backward(l);
            return tp.val(l).scalar();
        };
    } else if (head == "gscl") {
        loss_fn = [&](bool grads) {
            DTape tp;
            std::vector<DVar> hs;
            for (int r = 0; r < 2; ++r) {
                DVar h = encode_record(tp, r, false);
                hs.push_back(model::rhythm_pool(tp, p.params, p.mdl, h, c_n, t_n));
            }
            DVar protos = objectives::compute_prototypes(tp, p.params, p.proto, p.a_hat, false, 0);
            DVar l = objectives::gscl_loss(tp, p.params, p.gscl, tp.concat_rows(hs), fx.soft_targets,
                                           protos);
            if (grads) tp.backward(l);
            return tp.val(l).scalar();
        };
    } else if (head == "patch_rhythm" || head == "patch_pos") {
        bool rhythm = head == "patch_rhythm";
        loss_fn = [&, rhythm](bool grads) {
            DTape tp;
            std::vector<DVar> hbars;
            for (int r = 0; r < 2; ++r)
                hbars.push_back(model::lead_mean(tp, encode_record(tp, r, false), c_n, t_n));
            DVar hbar = tp.concat_rows(hbars);
            DVar l = rhythm ? objectives::patch_rhythm_loss(tp, p.params, p.msps, hbar, t_n,
                                                            fx.rhythm_sup, false, 0)
                                  .total
                            : objectives::patch_pos_loss(tp, p.params, p.msps, hbar, t_n, fx.position,
                                                         false, 0);
            if (grads) tp.backward(l);
            return tp.val(l).scalar();
        };
    } else {
        throw std::invalid_argument("unknown audit head: " + head);
    }

    HeadAudit audit;
    audit.head = head;
    audit.report = num::grad_check(loss_fn, p.params, epsilon, 12, num::mix_seed(seed, 0x73616d70));
    return audit;
}

}  // namespace marecg::train
