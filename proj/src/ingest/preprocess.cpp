#include "marecg/ingest/record.hpp"

#include <algorithm>
#include <cmath>

#include "marecg/dsp/filters.hpp"

namespace marecg::ingest {

RevinStats revin_normalize(std::vector<std::vector<float>>& signal, float eps) {
    RevinStats st;
    for (auto& lead : signal) {
        double mean = 0;
        for (float x : lead) mean += x;
        mean /= static_cast<double>(lead.size());
        double var = 0;
        for (float x : lead) var += (x - mean) * (x - mean);
        var /= static_cast<double>(lead.size());
        float sd = std::max(static_cast<float>(std::sqrt(var)), eps);
        st.mean.push_back(static_cast<float>(mean));
        st.stddev.push_back(sd);
        for (float& x : lead) x = (x - static_cast<float>(mean)) / sd;
    }
    return st;
}

void revin_denormalize(std::vector<std::vector<float>>& signal, const RevinStats& stats) {
    for (std::size_t c = 0; c < signal.size(); ++c) {
        for (float& x : signal[c]) x = x * stats.stddev[c] + stats.mean[c];
    }
}

namespace {

std::vector<float> decimate2(const std::vector<float>& x, double fs) {
    // Zero-phase low-pass at 0.45x the target Nyquist, then 2:1 decimation.
    std::vector<double> xd(x.begin(), x.end());
    double target_nyquist = fs / 2.0 / 2.0;
    auto f = dsp::fir_lowpass_zero_phase(xd, 0.45 * target_nyquist, fs, 63);
    std::vector<float> out;
    out.reserve(x.size() / 2);
    for (std::size_t i = 0; i < f.size(); i += 2) out.push_back(static_cast<float>(f[i]));
    return out;
}

std::vector<float> crop_or_pad(const std::vector<float>& x, std::size_t len) {
    if (x.size() == len) return x;
    std::vector<float> out(len, 0.0f);
    if (x.size() > len) {
        std::size_t start = (x.size() - len) / 2;  // center crop
        std::copy(x.begin() + static_cast<long>(start), x.begin() + static_cast<long>(start + len),
                  out.begin());
    } else {
        std::copy(x.begin(), x.end(), out.begin());  // trailing zero pad
    }
    return out;
}

QualityVerdict screen(const std::vector<std::vector<float>>& sig, const PreprocessConfig& cfg) {
    QualityVerdict q;
    for (std::size_t c = 0; c < sig.size(); ++c) {
        const auto& lead = sig[c];
        std::size_t zeros = 0;
        std::size_t run = 1;
        float prev = lead.empty() ? 0.0f : lead[0];
        float peak = 0;
        for (float x : lead) peak = std::max(peak, std::fabs(x));
        for (std::size_t i = 0; i < lead.size(); ++i) {
            float x = lead[i];
            if (std::fabs(x) > cfg.amp_bound_mv) {
                return {false, "amplitude", static_cast<int>(c)};
            }
            if (x == 0.0f) ++zeros;
            if (i > 0) {
                run = (x == prev) ? run + 1 : 1;
                prev = x;
                bool extreme = std::fabs(x) >= 0.98f * peak &&
                               std::fabs(x) >= static_cast<float>(cfg.saturation_floor_mv);
                if (run >= cfg.saturation_run && extreme) {
                    return {false, "saturation", static_cast<int>(c)};
                }
            }
        }
        if (!lead.empty() &&
            static_cast<double>(zeros) / static_cast<double>(lead.size()) > cfg.zero_fraction) {
            return {false, "zero_fraction", static_cast<int>(c)};
        }
    }
    return q;
}

}  // namespace

EcgRecord preprocess(const std::string& id, const std::vector<std::vector<float>>& raw, double native_fs,
                     const std::vector<std::int64_t>& codes, const PreprocessConfig& cfg,
                     const snomed::RoutingTable& routing) {
    EcgRecord rec;
    rec.id = id;
    rec.codes = codes;
    rec.fs = cfg.target_fs;
    rec.leaf_target = snomed::resolve_codes(codes, routing);

    std::vector<std::vector<float>> sig;
    if (native_fs == cfg.target_fs) {
        sig = raw;
    } else if (native_fs == 2 * cfg.target_fs) {
        sig.reserve(raw.size());
        for (const auto& lead : raw) sig.push_back(decimate2(lead, native_fs));
    } else {
        rec.quality = {false, "unsupported_fs", -1};
        return rec;
    }
    for (auto& lead : sig) lead = crop_or_pad(lead, cfg.target_len);

    rec.quality = screen(sig, cfg);
    if (!rec.quality.pass) {
        rec.signal = std::move(sig);
        return rec;
    }
    // R-peaks come from the raw 500 Hz lead 1, before normalization.
    rec.rpeaks = physio::detect_rpeaks(sig[0], cfg.target_fs);
    rec.revin = revin_normalize(sig);
    rec.signal = std::move(sig);
    return rec;
}

}  // namespace marecg::ingest
