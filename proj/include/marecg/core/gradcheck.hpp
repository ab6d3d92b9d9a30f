#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "marecg/core/params.hpp"
#include "marecg/core/rng.hpp"

namespace marecg::num {

// Central finite-difference audit for an arbitrary scalar loss. The loss
// closure must be a pure function of the store values (fixed seeds inside),
// and is expected to run the whole check in double precision.
struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::size_t worst_coord = 0;
    bool nonfinite = false;
    std::string nonfinite_where;
};

// loss_fn(compute_grads): evaluates the loss at the current store values;
// when compute_grads is true it must also accumulate analytic gradients into
// the store. Coordinates are subsampled (per-tensor) to keep the audit fast.
inline GradCheckReport grad_check(const std::function<double(bool)>& loss_fn,
                                  ParamStore<double>& params, double epsilon = 1e-5,
                                  std::size_t max_coords_per_param = 24,
                                  std::uint64_t sample_seed = 17) {
    GradCheckReport rep;
    params.zero_grads();
    double base = loss_fn(true);
    if (!std::isfinite(base)) {
        rep.nonfinite = true;
        rep.nonfinite_where = "loss at base point";
        return rep;
    }
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& e = params.at(p);
        std::size_t n = e.value.numel();
        std::vector<std::size_t> coords;
        if (n <= max_coords_per_param) {
            for (std::size_t i = 0; i < n; ++i) coords.push_back(i);
        } else {
            Rng rng(mix_seed(sample_seed, p));
            for (std::size_t i = 0; i < max_coords_per_param; ++i)
                coords.push_back(static_cast<std::size_t>(rng.below(n)));
        }
        for (std::size_t i : coords) {
            double saved = e.value.v[i];
            e.value.v[i] = saved + epsilon;
            double up = loss_fn(false);
            e.value.v[i] = saved - epsilon;
            double dn = loss_fn(false);
            e.value.v[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(dn)) {
                rep.nonfinite = true;
                rep.nonfinite_where = e.name + "[" + std::to_string(i) + "]";
                return rep;
            }
            double cd = (up - dn) / (2.0 * epsilon);
            double an = e.grad.v[i];
            double denom = std::max({std::fabs(an), std::fabs(cd), 1e-8});
            double rel = std::fabs(an - cd) / denom;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_param = e.name;
                rep.worst_coord = i;
            }
        }
    }
    return rep;
}

}  // namespace marecg::num
