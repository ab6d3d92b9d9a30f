#include "marecg/ingest/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "marecg/core/rng.hpp"

namespace marecg::ingest {

namespace fs = std::filesystem;
using num::Rng;

namespace {

struct Wave {
    double amp_mv;     // sign carries polarity
    double center_s;   // offset from the R peak
    double width_s;
};

// Template morphology; quantities are for lead II and get scaled per lead.
struct Morphology {
    Wave p{0.15, -0.16, 0.022};
    Wave q{-0.10, -0.028, 0.009};
    Wave r{1.00, 0.0, 0.012};
    Wave s{-0.18, 0.028, 0.010};
    Wave t{0.32, 0.22, 0.055};
    double st_offset_mv = 0.0;  // plateau between S and T
};

// Rough projections of the cardiac dipole onto the 12 standard leads; only
// the relative scaling matters for the learning problem.
constexpr double kLeadScale[12] = {0.7, 1.0, 0.45, -0.85, 0.35, 0.75,
                                   0.35, 0.6, 0.85, 1.0,  0.9,  0.8};

double gauss_bump(double t, const Wave& w) {
    double d = (t - w.center_s) / w.width_s;
    return w.amp_mv * std::exp(-0.5 * d * d);
}

std::vector<double> rr_sequence(const SynthSpec& spec, Rng& rng, double duration_s) {
    double base = 60.0 / spec.rate_bpm;
    std::vector<double> rr;
    double total = 0;
    std::size_t k = 0;
    while (total < duration_s + base) {
        double v = base;
        switch (spec.rhythm) {
            case RhythmClass::Regular:
                v = base * (1.0 + rng.uniform(-0.02, 0.02));
                break;
            case RhythmClass::Irregular:
                v = base * (1.0 + rng.uniform(-0.28, 0.28));
                break;
            case RhythmClass::Bigeminy:
                v = base * (k % 2 == 0 ? 0.70 : 1.30);
                break;
        }
        rr.push_back(v);
        total += v;
        ++k;
    }
    return rr;
}

std::vector<std::int64_t> codes_for(const SynthSpec& spec) {
    if (spec.root_only_codes) return {698252002};  // cardiac dysrhythmia NOS
    std::vector<std::int64_t> codes;
    switch (spec.rhythm) {
        case RhythmClass::Regular:
            if (spec.rate_bpm < 60) codes.push_back(426177001);        // sinus bradycardia
            else if (spec.rate_bpm > 100) codes.push_back(427084000);  // sinus tachycardia
            else codes.push_back(426783006);                           // normal sinus rhythm
            break;
        case RhythmClass::Irregular:
            codes.push_back(164889003);  // atrial fibrillation
            break;
        case RhythmClass::Bigeminy:
            codes.push_back(427172004);  // premature ventricular contractions
            break;
    }
    if (spec.wide_qrs) codes.push_back(164909002);       // LBBB
    if (spec.st_elevation) codes.push_back(164931005);   // ST elevation, anterior leads
    return codes;
}

}  // namespace

SynthRecord synth_record(const SynthSpec& spec, std::uint64_t seed, const std::string& id) {
    if (spec.rate_bpm < 30 || spec.rate_bpm > 220)
        throw std::invalid_argument("synth_record: rate outside [30, 220] bpm");
    Rng rng(num::mix_seed(seed, 0x53594e54));  // "SYNT"

    Morphology m;
    if (spec.wide_qrs) {
        m.r.width_s = 0.030;
        m.s.width_s = 0.026;
        m.s.center_s = 0.055;
        m.r.amp_mv = 0.85;
    }
    if (spec.st_elevation) m.st_offset_mv = 0.22;

    const std::size_t L = spec.length;
    const double fs = spec.fs;
    double duration = static_cast<double>(L) / fs;

    auto rr = rr_sequence(spec, rng, duration);
    std::vector<double> peak_times;
    double t = 0.45 + rng.uniform(0.0, 0.08);  // first beat clears filter warm-up
    for (double v : rr) {
        if (t > duration - 0.20) break;
        peak_times.push_back(t);
        t += v;
    }

    SynthRecord out;
    out.id = id;
    out.fs = fs;
    out.spec = spec;
    out.codes = codes_for(spec);
    for (double pt : peak_times)
        out.true_rpeaks.push_back(static_cast<std::size_t>(std::llround(pt * fs)));

    out.signal.assign(12, std::vector<float>(L, 0.0f));
    // Baseline wander + noise drawn per lead, waves shared across leads.
    for (std::size_t c = 0; c < 12; ++c) {
        double scale = kLeadScale[c];
        double wander_phase = rng.uniform(0.0, 6.283185307179586);
        double wander_freq = rng.uniform(0.15, 0.4);
        for (std::size_t i = 0; i < L; ++i) {
            double ti = static_cast<double>(i) / fs;
            double v = spec.wander_mv * std::sin(2 * 3.141592653589793 * wander_freq * ti + wander_phase);
            for (std::size_t b = 0; b < peak_times.size(); ++b) {
                double dt = ti - peak_times[b];
                if (dt < -0.45 || dt > 0.55) continue;
                double beat = gauss_bump(dt, m.p) + gauss_bump(dt, m.q) + gauss_bump(dt, m.r) +
                              gauss_bump(dt, m.s) + gauss_bump(dt, m.t);
                if (m.st_offset_mv != 0.0 && dt > 0.04 && dt < 0.18)
                    beat += m.st_offset_mv;
                v += scale * beat;
            }
            v += spec.noise_mv * rng.gauss();
            out.signal[c][i] = static_cast<float>(v);
        }
    }
    return out;
}

std::vector<SynthRecord> synth_corpus(std::size_t n, std::uint64_t seed, std::size_t length,
                                      std::size_t root_only_every) {
    std::vector<SynthRecord> out;
    out.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        Rng rng(num::mix_seed(seed, k, 0xC0 + 1));
        SynthSpec spec;
        spec.length = length;
        switch (k % 4) {
            case 0:
                spec.rhythm = RhythmClass::Regular;
                spec.rate_bpm = rng.uniform(50, 110);
                break;
            case 1:
                spec.rhythm = RhythmClass::Regular;
                spec.rate_bpm = rng.uniform(40, 170);
                spec.st_elevation = rng.uniform() < 0.5;
                break;
            case 2:
                spec.rhythm = RhythmClass::Irregular;
                spec.rate_bpm = rng.uniform(60, 140);
                break;
            case 3:
                spec.rhythm = RhythmClass::Bigeminy;
                spec.rate_bpm = rng.uniform(50, 100);
                break;
        }
        spec.wide_qrs = (k % 5 == 4);
        spec.noise_mv = rng.uniform(0.004, 0.02);
        if (root_only_every && (k % root_only_every == root_only_every - 1))
            spec.root_only_codes = true;
        std::ostringstream name;
        name << "S" << std::setfill('0') << std::setw(5) << k;
        out.push_back(synth_record(spec, num::mix_seed(seed, k), name.str()));
    }
    return out;
}

std::vector<SynthRecord> synth_probe_corpus(std::size_t n, std::uint64_t seed, std::size_t length) {
    std::vector<SynthRecord> out;
    out.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        Rng rng(num::mix_seed(seed, k, 0x9B0));
        SynthSpec spec;
        spec.length = length;
        spec.noise_mv = rng.uniform(0.004, 0.015);
        switch (k % 4) {
            case 0:
                spec.rhythm = RhythmClass::Regular;
                spec.rate_bpm = rng.uniform(38, 52);  // sinus bradycardia
                break;
            case 1:
                spec.rhythm = RhythmClass::Regular;
                spec.rate_bpm = rng.uniform(115, 160);  // sinus tachycardia
                break;
            case 2:
                spec.rhythm = RhythmClass::Irregular;
                spec.rate_bpm = rng.uniform(70, 110);  // AF-like
                break;
            case 3:
                spec.rhythm = RhythmClass::Regular;
                spec.rate_bpm = rng.uniform(65, 95);
                spec.st_elevation = true;
                break;
        }
        std::ostringstream name;
        name << "P" << std::setfill('0') << std::setw(5) << k;
        out.push_back(synth_record(spec, num::mix_seed(seed, k, 7), name.str()));
    }
    return out;
}

void write_corpus(const std::string& dir, const std::vector<SynthRecord>& records) {
    fs::create_directories(dir);
    std::ofstream manifest(fs::path(dir) / "MANIFEST", std::ios::binary);
    for (const auto& r : records) {
        HeaderInfo h;
        h.id = r.id;
        h.nsig = static_cast<int>(r.signal.size());
        h.fs = r.fs;
        h.nsamp = r.signal.empty() ? 0 : r.signal[0].size();
        static const char* kLeadNames[12] = {"I",  "II", "III", "aVR", "aVL", "aVF",
                                             "V1", "V2", "V3",  "V4",  "V5",  "V6"};
        for (int c = 0; c < h.nsig; ++c) {
            SignalDesc d;
            d.file = r.id + ".dat";
            d.gain = 1000.0;
            d.baseline = 0.0;
            d.description = c < 12 ? kLeadNames[c] : "X";
            h.signals.push_back(std::move(d));
        }
        h.dx_codes = r.codes;
        std::ofstream hea(fs::path(dir) / (r.id + ".hea"), std::ios::binary);
        hea << write_header(h);
        auto bytes = write_signal16(r.signal, h);
        std::ofstream dat(fs::path(dir) / (r.id + ".dat"), std::ios::binary);
        dat.write(reinterpret_cast<const char*>(bytes.data()), static_cast<long>(bytes.size()));
        manifest << r.id << '\n';
    }
}

std::vector<RawRecord> load_corpus(const std::string& dir) {
    std::ifstream manifest(fs::path(dir) / "MANIFEST", std::ios::binary);
    if (!manifest) throw wfdb_error("cannot open manifest in " + dir);
    std::vector<RawRecord> out;
    std::string id;
    while (std::getline(manifest, id)) {
        if (id.empty()) continue;
        std::ifstream hea(fs::path(dir) / (id + ".hea"), std::ios::binary);
        if (!hea) throw wfdb_error("missing header for record " + id);
        std::stringstream hbuf;
        hbuf << hea.rdbuf();
        HeaderInfo h = parse_header(hbuf.str());
        std::ifstream dat(fs::path(dir) / (id + ".dat"), std::ios::binary);
        if (!dat) throw wfdb_error("missing signal for record " + id);
        std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(dat)),
                                        std::istreambuf_iterator<char>());
        RawRecord r;
        r.id = id;
        r.fs = h.fs;
        r.codes = h.dx_codes;
        r.signal = load_signal16(bytes, h);
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<EcgRecord> preprocess_corpus(const std::vector<RawRecord>& raw, const PreprocessConfig& cfg,
                                         const snomed::RoutingTable& routing) {
    std::vector<EcgRecord> out(raw.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (std::size_t i = 0; i < raw.size(); ++i) {
        out[i] = preprocess(raw[i].id, raw[i].signal, raw[i].fs, raw[i].codes, cfg, routing);
    }
    return out;
}

}  // namespace marecg::ingest
