// Wall-clock comparison of the OpenMP kernels against the serial reference,
// plus a factorized-vs-full attention cost model printout.

#include <chrono>
#include <cstdio>
#include <vector>

#include "marecg/core/kernels.hpp"
#include "marecg/core/rng.hpp"
#include "marecg/model/model.hpp"

using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

template <class F>
double best_of(int reps, F&& f) {
    double best = 1e30;
    for (int i = 0; i < reps; ++i) {
        auto t0 = Clock::now();
        f();
        best = std::min(best, ms_since(t0));
    }
    return best;
}

}  // namespace

int main() {
    std::printf("threads: %d\n\n", marecg::kern::max_threads());
    marecg::num::Rng rng(1);

    std::printf("%-28s %10s %10s %8s\n", "kernel", "serial ms", "omp ms", "speedup");
    for (std::size_t n : {128, 256, 512}) {
        std::vector<float> a(n * n), b(n * n), out(n * n);
        for (auto& x : a) x = static_cast<float>(rng.gauss());
        for (auto& x : b) x = static_cast<float>(rng.gauss());
        double ts = best_of(3, [&] {
            marecg::kern::serial::matmul(a.data(), b.data(), out.data(), n, n, n);
        });
        double tp = best_of(3, [&] { marecg::kern::matmul(a.data(), b.data(), out.data(), n, n, n); });
        std::printf("matmul %4zux%-18zu %10.2f %10.2f %7.2fx\n", n, n, ts, tp, ts / tp);
    }
    for (std::size_t rows : {512, 4096}) {
        const std::size_t cols = 256;
        std::vector<float> x(rows * cols), y(rows * cols);
        for (auto& v : x) v = static_cast<float>(rng.gauss());
        double ts = best_of(5, [&] {
            marecg::kern::serial::softmax_rows(x.data(), y.data(), rows, cols);
        });
        double tp = best_of(5, [&] { marecg::kern::softmax_rows(x.data(), y.data(), rows, cols); });
        std::printf("softmax %5zux%-17zu %10.2f %10.2f %7.2fx\n", rows, cols, ts, tp, ts / tp);

        std::vector<float> g(cols, 1.0f), be(cols, 0.0f), is(rows);
        ts = best_of(5, [&] {
            marecg::kern::serial::layernorm_rows(x.data(), g.data(), be.data(), y.data(), is.data(),
                                                 rows, cols, 1e-5f);
        });
        tp = best_of(5, [&] {
            marecg::kern::layernorm_rows(x.data(), g.data(), be.data(), y.data(), is.data(), rows,
                                         cols, 1e-5f);
        });
        std::printf("layernorm %5zux%-15zu %10.2f %10.2f %7.2fx\n", rows, cols, ts, tp, ts / tp);
    }

    std::printf("\nfactorized attention cost model:\n");
    for (auto [c, t] : {std::pair<std::size_t, std::size_t>{12, 139}, {12, 187}}) {
        std::printf("  C=%zu T=%zu  full/factorized = %.2fx\n", c, t,
                    marecg::model::factorized_flop_ratio(c, t));
    }
    return 0;
}
