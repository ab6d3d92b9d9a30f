#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "marecg/physio/physio.hpp"
#include "marecg/snomed/routing.hpp"

namespace marecg::ingest {

struct QualityVerdict {
    bool pass = true;
    std::string reason;  // amplitude | saturation | zero_fraction | unsupported_fs
    int lead = -1;
};

// Per-lead normalization statistics, kept so the transform is invertible.
struct RevinStats {
    std::vector<float> mean;
    std::vector<float> stddev;  // epsilon-floored
};

struct PreprocessConfig {
    std::size_t target_len = 4700;     // L
    double target_fs = 500.0;
    double amp_bound_mv = 25.0;
    std::size_t saturation_run = 50;   // consecutive identical extreme samples
    double saturation_floor_mv = 0.5;  // plateaus below this amplitude are not saturation
    double zero_fraction = 0.9;
};

struct EcgRecord {
    std::string id;
    std::vector<std::vector<float>> signal;  // C x L, normalized after preprocess
    double fs = 500.0;
    std::vector<std::int64_t> codes;
    snomed::LeafTarget leaf_target;
    std::vector<std::size_t> rpeaks;  // detected on raw lead 1 before normalization
    QualityVerdict quality;
    RevinStats revin;
};

RevinStats revin_normalize(std::vector<std::vector<float>>& signal, float eps = 1e-8f);
void revin_denormalize(std::vector<std::vector<float>>& signal, const RevinStats& stats);

// Resample to 500 Hz (1000 Hz input is low-passed and decimated 2:1), center
// crop or right zero-pad to L, run the quality screen, detect R-peaks on raw
// lead 1, then RevIN-normalize. Native rates other than 500/1000 Hz fail the
// verdict with reason unsupported_fs.
EcgRecord preprocess(const std::string& id, const std::vector<std::vector<float>>& raw, double native_fs,
                     const std::vector<std::int64_t>& codes, const PreprocessConfig& cfg,
                     const snomed::RoutingTable& routing);

}  // namespace marecg::ingest
