#include "marecg/physio/physio.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "marecg/dsp/filters.hpp"

namespace marecg::physio {

const char* rate_bucket_name(RateBucket b) {
    switch (b) {
        case RateBucket::Brady: return "brady";
        case RateBucket::Normal: return "normal";
        case RateBucket::Tachy: return "tachy";
        case RateBucket::None: return "none";
    }
    return "?";
}

const char* flag_name(Flag f) {
    switch (f) {
        case Flag::True: return "true";
        case Flag::False: return "false";
        case Flag::None: return "none";
    }
    return "?";
}

std::vector<std::size_t> detect_rpeaks(const std::vector<float>& lead, double fs) {
    const std::size_t n = lead.size();
    if (n < static_cast<std::size_t>(fs)) return {};  // not enough for filter warm-up

    std::vector<double> x(lead.begin(), lead.end());
    auto hp = dsp::filtfilt_biquad(dsp::butter_highpass(5.0, fs), x);
    auto bp = dsp::filtfilt_biquad(dsp::butter_lowpass(15.0, fs), hp);

    // Five-point derivative, squared.
    std::vector<double> sq(n, 0.0);
    for (std::size_t i = 2; i + 2 < n; ++i) {
        double d = (-bp[i - 2] - 2 * bp[i - 1] + 2 * bp[i + 1] + bp[i + 2]) / 8.0;
        sq[i] = d * d;
    }
    std::size_t mwi_win = static_cast<std::size_t>(0.150 * fs);
    auto mwi = dsp::moving_average_centered(sq, mwi_win);

    const std::size_t refractory = static_cast<std::size_t>(0.200 * fs);
    const std::size_t loc_win = static_cast<std::size_t>(0.100 * fs);

    // Candidate peaks: local maxima of the integrated signal.
    std::vector<std::size_t> cand;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        if (mwi[i] > mwi[i - 1] && mwi[i] >= mwi[i + 1] && mwi[i] > 0) cand.push_back(i);
    }
    if (cand.empty()) return {};

    // Threshold init from the first two seconds.
    std::size_t init_end = std::min<std::size_t>(n, static_cast<std::size_t>(2.0 * fs));
    double init_max = 0, init_mean = 0;
    for (std::size_t i = 0; i < init_end; ++i) {
        init_max = std::max(init_max, mwi[i]);
        init_mean += mwi[i];
    }
    init_mean /= static_cast<double>(init_end);
    double spk = 0.5 * init_max;
    double npk = 0.5 * init_mean;

    std::vector<std::size_t> accepted;  // integration-peak positions
    std::vector<double> rr_hist;
    auto threshold = [&] { return npk + 0.25 * (spk - npk); };
    auto avg_rr = [&]() -> double {
        if (rr_hist.empty()) return 0;
        std::size_t k = std::min<std::size_t>(8, rr_hist.size());
        double s = 0;
        for (std::size_t i = rr_hist.size() - k; i < rr_hist.size(); ++i) s += rr_hist[i];
        return s / static_cast<double>(k);
    };

    for (std::size_t ci = 0; ci < cand.size(); ++ci) {
        std::size_t c = cand[ci];
        double v = mwi[c];
        bool in_refractory = !accepted.empty() && c - accepted.back() < refractory;
        if (v > threshold() && !in_refractory) {
            if (!accepted.empty()) rr_hist.push_back(static_cast<double>(c - accepted.back()));
            accepted.push_back(c);
            spk = 0.125 * v + 0.875 * spk;
        } else if (!in_refractory) {
            npk = 0.125 * v + 0.875 * npk;
            // Search-back: when a beat is overdue, retry the strongest missed
            // candidate at half threshold.
            double arr = avg_rr();
            if (arr > 0 && !accepted.empty() &&
                static_cast<double>(c - accepted.back()) > 1.66 * arr) {
                std::size_t best = 0;
                double best_v = 0;
                for (std::size_t cj = 0; cj <= ci; ++cj) {
                    std::size_t cc = cand[cj];
                    if (cc <= accepted.back() + refractory || cc >= c) continue;
                    if (mwi[cc] > best_v) {
                        best_v = mwi[cc];
                        best = cc;
                    }
                }
                if (best_v > 0.5 * threshold()) {
                    rr_hist.push_back(static_cast<double>(best - accepted.back()));
                    accepted.push_back(best);
                    spk = 0.25 * best_v + 0.75 * spk;
                    std::sort(accepted.begin(), accepted.end());
                }
            }
        }
    }

    // Localize each detection on the band-passed signal.
    std::vector<std::size_t> peaks;
    for (std::size_t c : accepted) {
        std::size_t lo = c >= loc_win ? c - loc_win : 0;
        std::size_t hi = std::min(n - 1, c + loc_win);
        std::size_t best = lo;
        double best_v = std::fabs(bp[lo]);
        for (std::size_t i = lo + 1; i <= hi; ++i) {
            if (std::fabs(bp[i]) > best_v) {
                best_v = std::fabs(bp[i]);
                best = i;
            }
        }
        peaks.push_back(best);
    }
    std::sort(peaks.begin(), peaks.end());
    // Merge localizations that collapsed onto (nearly) the same sample.
    std::vector<std::size_t> out;
    for (std::size_t p : peaks) {
        if (!out.empty() && p - out.back() < refractory) continue;
        out.push_back(p);
    }
    return out;
}

RhythmTargets rhythm_targets(const std::vector<std::size_t>& peaks, double fs,
                             const RhythmThresholds& th) {
    for (std::size_t i = 1; i < peaks.size(); ++i) {
        if (peaks[i] <= peaks[i - 1]) throw std::invalid_argument("peaks must be strictly increasing");
    }
    RhythmTargets t;
    t.n_peaks = peaks.size();
    if (peaks.size() < 2) return t;  // bucket None, alternation None

    std::vector<double> rr(peaks.size() - 1);
    for (std::size_t i = 1; i < peaks.size(); ++i) rr[i - 1] = static_cast<double>(peaks[i] - peaks[i - 1]);
    double mean = 0;
    for (double r : rr) mean += r;
    mean /= static_cast<double>(rr.size());
    double var = 0;
    for (double r : rr) var += (r - mean) * (r - mean);
    var /= static_cast<double>(rr.size());
    t.mean_rr = mean;
    t.rr_cv = std::sqrt(var) / mean;
    t.hr_bpm = 60.0 * fs / mean;
    if (t.hr_bpm < th.brady_bpm) t.bucket = RateBucket::Brady;
    else if (t.hr_bpm > th.tachy_bpm) t.bucket = RateBucket::Tachy;
    else t.bucket = RateBucket::Normal;

    // Alternation: runs of sign-flipping successive RR differences whose
    // magnitudes (relative to the mean RR) all clear theta_alt.
    t.alternation = Flag::False;
    if (rr.size() >= 3) {
        int run = 0;
        for (std::size_t k = 2; k < rr.size(); ++k) {
            double d_prev = rr[k - 1] - rr[k - 2];
            double d_cur = rr[k] - rr[k - 1];
            bool flip = (d_prev > 0 && d_cur < 0) || (d_prev < 0 && d_cur > 0);
            bool big = std::fabs(d_prev) / mean >= th.theta_alt && std::fabs(d_cur) / mean >= th.theta_alt;
            if (flip && big) {
                ++run;
                if (run >= th.nu_alt) {
                    t.alternation = Flag::True;
                    break;
                }
            } else {
                run = 0;
            }
        }
    }
    return t;
}

std::vector<PhaseClass> phase_targets(const std::vector<std::size_t>& peaks, double mean_rr,
                                      const PatchGrid& grid, double delta_r,
                                      std::vector<bool>& masked_out) {
    std::vector<PhaseClass> phase(grid.count, PhaseClass::PreR);
    masked_out.assign(grid.count, true);
    if (peaks.empty() || mean_rr <= 0) return phase;  // all masked

    for (std::size_t i = 0; i < grid.count; ++i) {
        double center = grid.center(i);
        // Nearest peak; ties resolve to the earlier peak.
        double best_delta = 0;
        double best_abs = -1;
        for (std::size_t p : peaks) {
            double delta = center - static_cast<double>(p);
            double a = std::fabs(delta);
            if (best_abs < 0 || a < best_abs) {
                best_abs = a;
                best_delta = delta;
            }
        }
        if (best_abs > mean_rr) continue;  // no usable neighbourhood
        if (best_abs <= delta_r) {
            phase[i] = PhaseClass::R;
            masked_out[i] = false;
        } else if (best_delta > 0 && best_delta <= mean_rr / 3.0) {
            phase[i] = PhaseClass::ST;
            masked_out[i] = false;
        } else if (best_delta > 0 && best_delta <= mean_rr / 2.0) {
            phase[i] = PhaseClass::TWave;
            masked_out[i] = false;
        } else if (best_delta < 0) {
            phase[i] = PhaseClass::PreR;
            masked_out[i] = false;
        }
        // best_delta in (rr/2, rr] after a peak with no following peak: masked.
    }
    return phase;
}

std::vector<int> seq_position_targets(std::size_t t, std::size_t k_seq) {
    if (t < k_seq) throw std::invalid_argument("seq_position_targets: T < K_p");
    std::vector<int> out(t);
    for (std::size_t i = 0; i < t; ++i) out[i] = static_cast<int>(i * k_seq / t);
    return out;
}

PositionTargets position_targets(const std::vector<std::size_t>& peaks, double mean_rr,
                                 const PatchGrid& grid, double delta_r, std::size_t k_seq) {
    PositionTargets pt;
    pt.seq_bucket = seq_position_targets(grid.count, k_seq);
    pt.phase = phase_targets(peaks, mean_rr, grid, delta_r, pt.phase_masked);
    return pt;
}

}  // namespace marecg::physio
