#include "marecg/probe/probe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "marecg/core/rng.hpp"
#include "marecg/model/model.hpp"
#include "marecg/ontology/graph.hpp"
#include "marecg/train/pipeline.hpp"

namespace marecg::probe {

using num::Rng;

FeatureMatrix extract_features(const train::Checkpoint& ckpt,
                               const std::vector<ingest::EcgRecord>& records,
                               std::vector<std::size_t>* ops_per_record) {
    train::RunConfig cfg = train::RunConfig::parse(ckpt.manifest.config_dump);
    train::Pipeline<float> pipe = train::Pipeline<float>::build(cfg);
    train::load_into_store(ckpt, pipe.params);

    const std::size_t d = pipe.mcfg.d_model;
    FeatureMatrix fm;
    fm.n = records.size();
    fm.d = d;
    fm.data.resize(fm.n * d);
    if (ops_per_record) ops_per_record->assign(records.size(), 0);

    for (std::size_t r = 0; r < records.size(); ++r) {
        num::Tape<float> tp;
        tp.set_grad_enabled(false);
        auto patches = model::patchify<float>(records[r].signal, pipe.mcfg);
        auto z = model::tokenize(tp, pipe.params, pipe.mdl, patches);
        auto h = model::encode(tp, pipe.params, pipe.mdl, z);
        auto pooled = model::rhythm_pool(tp, pipe.params, pipe.mdl, h, pipe.mcfg.leads,
                                         pipe.mcfg.tokens());
        const auto& hv = tp.val(pooled);
        std::copy(hv.v.begin(), hv.v.end(), fm.data.begin() + static_cast<long>(r * d));
        if (ops_per_record) (*ops_per_record)[r] = tp.num_ops();
    }
    return fm;
}

ProbeDataset make_probe_dataset(const FeatureMatrix& features,
                                const std::vector<ingest::EcgRecord>& records) {
    if (features.n != records.size()) throw std::invalid_argument("feature/record count mismatch");
    const auto& g = ontology::build_graph();
    std::vector<int> leaves;
    for (int leaf = ontology::kFirstLeaf; leaf < g.n; ++leaf) {
        for (const auto& rec : records) {
            const auto& act = rec.leaf_target.active;
            if (std::find(act.begin(), act.end(), leaf) != act.end()) {
                leaves.push_back(leaf);
                break;
            }
        }
    }
    ProbeDataset ds;
    ds.n = features.n;
    ds.d = features.d;
    ds.k = leaves.size();
    ds.features.assign(features.data.begin(), features.data.end());
    ds.targets.assign(ds.n * ds.k, 0);
    for (int leaf : leaves) ds.class_names.push_back(g.nodes[static_cast<std::size_t>(leaf)].abbr);
    for (std::size_t r = 0; r < ds.n; ++r) {
        const auto& act = records[r].leaf_target.active;
        for (std::size_t c = 0; c < leaves.size(); ++c) {
            if (std::find(act.begin(), act.end(), leaves[c]) != act.end()) ds.targets[r * ds.k + c] = 1;
        }
    }
    return ds;
}

std::vector<std::size_t> label_fraction_split(const ProbeDataset& ds, double rho, std::uint64_t seed) {
    if (rho <= 0.0 || rho > 1.0) throw std::invalid_argument("rho must be in (0, 1]");
    std::vector<std::vector<std::size_t>> positives(ds.k);
    std::vector<std::size_t> negatives;
    for (std::size_t r = 0; r < ds.n; ++r) {
        bool any = false;
        for (std::size_t c = 0; c < ds.k; ++c) {
            if (ds.targets[r * ds.k + c]) {
                positives[c].push_back(r);
                any = true;
            }
        }
        if (!any) negatives.push_back(r);
    }
    std::vector<std::size_t> order(ds.k);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (positives[a].size() != positives[b].size())
            return positives[a].size() < positives[b].size();
        return a < b;
    });

    std::vector<bool> chosen(ds.n, false);
    std::vector<std::size_t> chosen_pos_count(ds.k, 0);
    auto mark = [&](std::size_t r) {
        if (chosen[r]) return;
        chosen[r] = true;
        for (std::size_t c = 0; c < ds.k; ++c)
            if (ds.targets[r * ds.k + c]) ++chosen_pos_count[c];
    };

    // Rare classes first so their quota cannot be starved by co-occurrence.
    for (std::size_t c : order) {
        if (positives[c].empty()) continue;
        std::size_t need = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::llround(rho * static_cast<double>(positives[c].size()))));
        std::vector<std::size_t> pool = positives[c];
        Rng rng(num::mix_seed(seed, c, 0x504f53));
        rng.shuffle(pool.begin(), pool.end());
        for (std::size_t r : pool) {
            if (chosen_pos_count[c] >= need) break;
            mark(r);
        }
    }
    std::size_t need_neg =
        static_cast<std::size_t>(std::llround(rho * static_cast<double>(negatives.size())));
    Rng rng(num::mix_seed(seed, 0x4e4547));
    rng.shuffle(negatives.begin(), negatives.end());
    for (std::size_t i = 0; i < need_neg && i < negatives.size(); ++i) mark(negatives[i]);

    std::vector<std::size_t> out;
    for (std::size_t r = 0; r < ds.n; ++r)
        if (chosen[r]) out.push_back(r);
    return out;
}

namespace {

// Dense symmetric positive-definite solve via Cholesky.
bool cholesky_solve(std::vector<double>& a, std::vector<double>& b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a[i * n + j];
            for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
            if (i == j) {
                if (s <= 0) return false;
                a[i * n + i] = std::sqrt(s);
            } else {
                a[i * n + j] = s / a[j * n + j];
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= a[i * n + k] * b[k];
        b[i] = s / a[i * n + i];
    }
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t k = i + 1; k < n; ++k) s -= a[k * n + i] * b[k];
        b[i] = s / a[i * n + i];
    }
    return true;
}

}  // namespace

LinearProbe fit_linear_probe(const ProbeDataset& ds, const std::vector<std::size_t>& rows, double l2,
                             double tol) {
    const std::size_t d = ds.d, dim = d + 1, n = rows.size();
    LinearProbe probe;
    probe.d = d;
    probe.k = ds.k;
    probe.w.assign(ds.k * dim, 0.0);
    probe.degenerate.assign(ds.k, false);

    for (std::size_t cls = 0; cls < ds.k; ++cls) {
        std::size_t npos = 0;
        for (std::size_t r : rows) npos += ds.targets[r * ds.k + cls];
        if (npos == 0 || npos == n) {
            probe.degenerate[cls] = true;  // all-one-label class: weights stay zero
            continue;
        }
        std::vector<double> w(dim, 0.0);
        for (int iter = 0; iter < 200; ++iter) {
            std::vector<double> grad(dim, 0.0);
            std::vector<double> hess(dim * dim, 0.0);
            for (std::size_t r : rows) {
                const double* x = ds.features.data() + r * d;
                double y = ds.targets[r * ds.k + cls];
                double s = w[d];
                for (std::size_t j = 0; j < d; ++j) s += w[j] * x[j];
                double pr = 1.0 / (1.0 + std::exp(-s));
                double res = pr - y;
                double rw = std::max(pr * (1.0 - pr), 1e-10);
                for (std::size_t j = 0; j < d; ++j) grad[j] += res * x[j];
                grad[d] += res;
                for (std::size_t j = 0; j <= d; ++j) {
                    double xj = j < d ? x[j] : 1.0;
                    for (std::size_t kk = 0; kk <= j; ++kk) {
                        double xk = kk < d ? x[kk] : 1.0;
                        hess[j * dim + kk] += rw * xj * xk;
                    }
                }
            }
            for (std::size_t j = 0; j < d; ++j) grad[j] += l2 * w[j];  // bias unpenalized
            double gnorm = 0;
            for (double g : grad) gnorm += g * g;
            if (std::sqrt(gnorm) <= tol) break;
            for (std::size_t j = 0; j < dim; ++j) {
                for (std::size_t kk = j + 1; kk < dim; ++kk) hess[j * dim + kk] = hess[kk * dim + j];
                hess[j * dim + j] += (j < d ? l2 : 0.0) + 1e-12;
            }
            std::vector<double> step = grad;
            if (!cholesky_solve(hess, step, dim)) break;
            for (std::size_t j = 0; j < dim; ++j) w[j] -= step[j];
        }
        std::copy(w.begin(), w.end(), probe.w.begin() + static_cast<long>(cls * dim));
    }
    return probe;
}

std::vector<double> probe_scores(const LinearProbe& probe, const ProbeDataset& ds,
                                 const std::vector<std::size_t>& rows) {
    const std::size_t d = probe.d, dim = d + 1;
    std::vector<double> out(rows.size() * probe.k, 0.0);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double* x = ds.features.data() + rows[i] * d;
        for (std::size_t cls = 0; cls < probe.k; ++cls) {
            const double* w = probe.w.data() + cls * dim;
            double s = w[d];
            for (std::size_t j = 0; j < d; ++j) s += w[j] * x[j];
            out[i * probe.k + cls] = s;
        }
    }
    return out;
}

AucReport macro_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& targets,
                    std::size_t n, std::size_t k) {
    AucReport rep;
    rep.per_class.assign(k, std::numeric_limits<double>::quiet_NaN());
    rep.included.assign(k, false);
    double sum = 0;
    std::size_t count = 0;
    for (std::size_t cls = 0; cls < k; ++cls) {
        std::size_t npos = 0;
        for (std::size_t r = 0; r < n; ++r) npos += targets[r * k + cls];
        if (npos == 0 || npos == n) continue;
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            return scores[a * k + cls] < scores[b * k + cls];
        });
        // Midrank assignment over tied scores.
        std::vector<double> rank(n, 0.0);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && scores[idx[j + 1] * k + cls] == scores[idx[i] * k + cls]) ++j;
            double mid = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
            for (std::size_t t = i; t <= j; ++t) rank[idx[t]] = mid;
            i = j + 1;
        }
        double rank_sum = 0;
        for (std::size_t r = 0; r < n; ++r)
            if (targets[r * k + cls]) rank_sum += rank[r];
        double np = static_cast<double>(npos), nn = static_cast<double>(n - npos);
        double auc = (rank_sum - np * (np + 1) / 2.0) / (np * nn);
        rep.per_class[cls] = auc;
        rep.included[cls] = true;
        sum += auc;
        ++count;
    }
    if (count == 0) throw std::invalid_argument("macro_auc: no class with both labels present");
    rep.macro = sum / static_cast<double>(count);
    return rep;
}

double auc_pair_oracle(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
    double wins = 0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!labels[i]) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j]) continue;
            ++pairs;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    if (pairs == 0) throw std::invalid_argument("auc_pair_oracle: need both labels");
    return wins / static_cast<double>(pairs);
}

}  // namespace marecg::probe
