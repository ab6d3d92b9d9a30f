#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "marecg/ingest/record.hpp"
#include "marecg/train/checkpoint.hpp"
#include "marecg/train/pipeline.hpp"
#include "marecg/train/runconfig.hpp"

namespace marecg::train {

struct TrainResult {
    std::string ledger_csv;          // per-step loss ledger (active columns only)
    Checkpoint final_checkpoint;
    std::size_t applied_steps = 0;
    std::size_t skipped_steps = 0;   // non-finite gradient gates
    std::size_t gscl_skipped_batches = 0;  // micro-batches with no leaf-labelled record
    std::size_t ignored_terms = 0;
    std::vector<std::string> augmentation_log;  // one entry per augmented view
};

// Single-process pretraining with gradient accumulation. Records failing the
// quality screen are dropped up front; an empty corpus is refused.
TrainResult train(const RunConfig& cfg, const std::vector<ingest::EcgRecord>& corpus,
                  const std::string& checkpoint_dir = "");

// Ledger column names active under a gating configuration (order fixed).
std::vector<std::string> ledger_columns(const objectives::AblationGates& gates);

// Gradient accumulated over one optimizer step's micro-batches (records taken
// in corpus order, no shuffle, no update applied), flattened across all
// parameters. Exposes the accumulation semantics for equivalence checks.
std::vector<double> accumulated_gradient(const RunConfig& cfg,
                                         const std::vector<ingest::EcgRecord>& corpus);

// Runs the four ablation columns (C1, C2p, C2, C3) over a shared corpus and
// seed; only the `ablation` key differs between runs, so the ledgers differ
// exactly by the gated columns.
std::vector<std::pair<objectives::Ablation, TrainResult>> ablation_matrix(
    const RunConfig& base_cfg, const std::vector<ingest::EcgRecord>& corpus);

}  // namespace marecg::train
