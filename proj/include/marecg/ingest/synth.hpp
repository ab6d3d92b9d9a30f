#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "marecg/ingest/record.hpp"
#include "marecg/ingest/wfdb.hpp"

namespace marecg::ingest {

enum class RhythmClass { Regular, Irregular, Bigeminy };

struct SynthSpec {
    double rate_bpm = 60.0;                    // in [30, 220]
    RhythmClass rhythm = RhythmClass::Regular;
    bool wide_qrs = false;
    bool st_elevation = false;
    double noise_mv = 0.01;                    // additive Gaussian noise
    double wander_mv = 0.03;                   // baseline wander amplitude
    bool root_only_codes = false;              // emit a NOS code instead of leaf codes
    std::size_t length = 4700;
    double fs = 500.0;
};

struct SynthRecord {
    std::string id;
    std::vector<std::vector<float>> signal;  // 12 x L, raw millivolts
    double fs = 500.0;
    std::vector<std::int64_t> codes;         // drawn from the shipped routing table
    std::vector<std::size_t> true_rpeaks;    // ground truth R sample indices
    SynthSpec spec;
};

// 12-lead ECG assembled from per-lead scaled P-QRS-T Gaussian templates at
// the requested rate. Deterministic given (spec, seed).
SynthRecord synth_record(const SynthSpec& spec, std::uint64_t seed, const std::string& id = "synth");

// A mixed corpus cycling rhythm classes and rates, with a fixed share of
// root-only-coded records; record k is generated from seed+k.
std::vector<SynthRecord> synth_corpus(std::size_t n, std::uint64_t seed, std::size_t length = 4700,
                                      std::size_t root_only_every = 8);

// Class-separable corpus for probe evaluation: cycles four morphology/rate
// classes (sinus bradycardia, sinus tachycardia, irregular AF-like, anterior
// ST elevation).
std::vector<SynthRecord> synth_probe_corpus(std::size_t n, std::uint64_t seed,
                                            std::size_t length = 4700);

// Corpus directory layout: <id>.hea + <id>.dat plus MANIFEST (one id per line).
void write_corpus(const std::string& dir, const std::vector<SynthRecord>& records);
struct RawRecord {
    std::string id;
    std::vector<std::vector<float>> signal;
    double fs = 0;
    std::vector<std::int64_t> codes;
};
std::vector<RawRecord> load_corpus(const std::string& dir);

// Manifest-ordered preprocessing; records are processed in parallel but the
// output order always follows the manifest.
std::vector<EcgRecord> preprocess_corpus(const std::vector<RawRecord>& raw, const PreprocessConfig& cfg,
                                         const snomed::RoutingTable& routing);

}  // namespace marecg::ingest
