#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace marecg::physio {

// Pan-Tompkins R-peak detection on a single raw (pre-normalization) lead at
// 500 Hz: zero-phase 5-15 Hz band-pass, five-point derivative, squaring,
// 150 ms moving-window integration, adaptive dual thresholds with a 200 ms
// refractory period and search-back, then localization on the band-passed
// signal. Returns strictly increasing sample indices; too-short signals
// yield an empty list.
std::vector<std::size_t> detect_rpeaks(const std::vector<float>& lead, double fs);

enum class RateBucket { Brady, Normal, Tachy, None };
enum class Flag { True, False, None };

const char* rate_bucket_name(RateBucket b);
const char* flag_name(Flag f);

struct RhythmTargets {
    double mean_rr = 0.0;  // samples
    double rr_cv = 0.0;
    double hr_bpm = 0.0;
    RateBucket bucket = RateBucket::None;
    Flag alternation = Flag::None;
    std::size_t n_peaks = 0;
};

struct RhythmThresholds {
    double brady_bpm = 60.0;   // brady iff hr < brady_bpm (strict)
    double tachy_bpm = 100.0;  // tachy iff hr > tachy_bpm (strict)
    double theta_alt = 0.15;   // relative RR swing floor
    int nu_alt = 2;            // consecutive alternations required
};

// Mean RR, RR coefficient of variation, heart-rate bucket, and the
// bigeminy/trigeminy alternation flag. The alternation predicate: at least
// nu_alt consecutive sign flips of successive RR differences, each with
// |diff| / mean_rr >= theta_alt. Fewer than two peaks gives bucket None and
// alternation None.
RhythmTargets rhythm_targets(const std::vector<std::size_t>& peaks, double fs,
                             const RhythmThresholds& th = {});

enum class PhaseClass { PreR, R, ST, TWave };

struct PatchGrid {
    std::size_t patch_len = 50;
    std::size_t stride = 25;
    std::size_t count = 0;  // T

    double center(std::size_t i) const {
        return static_cast<double>(i) * static_cast<double>(stride) +
               static_cast<double>(patch_len) / 2.0;
    }
};

struct PositionTargets {
    std::vector<int> seq_bucket;        // [T], class in [0, K_p)
    std::vector<PhaseClass> phase;      // [T], valid where !phase_masked
    std::vector<bool> phase_masked;     // [T]
};

// Phase of each patch center relative to the nearest R-peak. |delta| <=
// delta_r is R; (delta_r, rr/3] is ST; (rr/3, rr/2] is T-wave; [-rr, -delta_r)
// is pre-R; anything farther than rr from every peak (or an empty peak list,
// or undefined mean RR) is masked.
std::vector<PhaseClass> phase_targets(const std::vector<std::size_t>& peaks, double mean_rr,
                                      const PatchGrid& grid, double delta_r,
                                      std::vector<bool>& masked_out);

// seq_bucket[i] = floor(i * k_seq / t) for 0-based i; refuses t < k_seq.
std::vector<int> seq_position_targets(std::size_t t, std::size_t k_seq);

PositionTargets position_targets(const std::vector<std::size_t>& peaks, double mean_rr,
                                 const PatchGrid& grid, double delta_r, std::size_t k_seq);

}  // namespace marecg::physio
