#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "marecg/ingest/record.hpp"
#include "marecg/train/checkpoint.hpp"

namespace marecg::probe {

struct FeatureMatrix {
    std::size_t n = 0, d = 0;
    std::vector<float> data;  // n x d, row per record

    float at(std::size_t r, std::size_t c) const { return data[r * d + c]; }
};

// Frozen-encoder rhythm-pooled features. The forward runs with gradients
// disabled and constructs encoder + pool ops only; when ops_per_record is
// given it receives the tape op count of each record's forward, which the
// tests audit against a bare encoder+pool walk.
FeatureMatrix extract_features(const train::Checkpoint& ckpt,
                               const std::vector<ingest::EcgRecord>& records,
                               std::vector<std::size_t>* ops_per_record = nullptr);

struct ProbeDataset {
    std::size_t n = 0, d = 0, k = 0;
    std::vector<double> features;       // n x d
    std::vector<std::uint8_t> targets;  // n x k multi-label
    std::vector<std::string> class_names;
};

// Classes are the leaf concepts with at least one positive in the corpus.
ProbeDataset make_probe_dataset(const FeatureMatrix& features,
                                const std::vector<ingest::EcgRecord>& records);

// Stratified subset: per class, round(rho * positives) positives (at least
// one when the class has any), plus round(rho * all-negative-count) records
// without positives. Deterministic in (dataset, rho, seed); subsets for
// different rho are independent draws.
std::vector<std::size_t> label_fraction_split(const ProbeDataset& ds, double rho, std::uint64_t seed);

struct LinearProbe {
    std::size_t d = 0, k = 0;
    std::vector<double> w;  // k x (d + 1), bias last
    std::vector<bool> degenerate;  // classes without both labels; scores fixed at 0
};

// One-vs-rest L2-regularized logistic regression, Newton iterations to a
// 1e-6 gradient-norm tolerance (bias unpenalized).
LinearProbe fit_linear_probe(const ProbeDataset& ds, const std::vector<std::size_t>& rows,
                             double l2 = 1e-4, double tol = 1e-6);

// Raw decision values (monotone in probability), [rows x k].
std::vector<double> probe_scores(const LinearProbe& probe, const ProbeDataset& ds,
                                 const std::vector<std::size_t>& rows);

struct AucReport {
    double macro = 0;
    std::vector<double> per_class;   // NaN for excluded classes
    std::vector<bool> included;      // classes with >= 1 positive and >= 1 negative
};

// Rank-statistic ROC-AUC with midrank tie handling, averaged over classes
// that have both labels present. Refuses when no class qualifies.
AucReport macro_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& targets,
                    std::size_t n, std::size_t k);

// O(n^2) pairwise comparison oracle for a single class (ties count 0.5).
double auc_pair_oracle(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels);

}  // namespace marecg::probe
