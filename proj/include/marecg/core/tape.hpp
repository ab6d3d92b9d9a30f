#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "marecg/core/kernels.hpp"
#include "marecg/core/params.hpp"
#include "marecg/core/rng.hpp"
#include "marecg/core/tensor.hpp"

namespace marecg::num {

// Captured attention weights for structural tests (row-stochasticity etc.).
template <class S>
struct AttnProbe {
    std::vector<Tensor<S>> head_weights;  // one [n_q, n_kv] matrix per head
};

// Reverse-mode tape over coarse-grained ops. Nodes are immutable once
// recorded; a tape lives on one logical thread for the duration of a forward
// plus backward and is cleared between micro-batches. Parameter leaves
// accumulate their gradients into the owning ParamStore, which is how
// gradient accumulation across micro-batches works.
template <class S>
class Tape {
public:
    struct Var {
        std::uint32_t id = 0;
    };

    Tape() { nodes_.reserve(1024); }

    const Tensor<S>& val(Var x) const { return nodes_[x.id].val; }
    const Tensor<S>& grad(Var x) const { return nodes_[x.id].grad; }
    std::size_t num_ops() const { return nodes_.size(); }

    void clear() { nodes_.clear(); }

    // With gradients disabled, parameter leaves degrade to plain inputs and
    // backward closures are never recorded (EMA targets, feature extraction).
    void set_grad_enabled(bool on) { grad_enabled_ = on; }
    bool grad_enabled() const { return grad_enabled_; }

    Var input(Tensor<S> value) { return push(std::move(value), false, nullptr); }

    Var param(ParamStore<S>& store, std::size_t pid) {
        auto& e = store.at(pid);
        if (!grad_enabled_) return input(e.value);
        Var out = push(e.value, true, nullptr);
        std::uint32_t oid = out.id;
        ParamStore<S>* ps = &store;
        nodes_[oid].back = [oid, ps, pid](Tape& t) {
            auto& g = t.nodes_[oid].grad;
            auto& pg = ps->at(pid).grad.v;
            for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += g.v[i];
        };
        return out;
    }

    // Parameter value used without gradient (EMA targets, frozen prototypes).
    Var frozen(const ParamStore<S>& store, std::size_t pid) { return input(store.at(pid).value); }

    // ---- arithmetic ----

    Var add(Var a, Var b) {
        check_same(a, b, "add");
        Tensor<S> out = nodes_[a.id].val;
        const auto& bv = nodes_[b.id].val.v;
        for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += bv[i];
        return binary(std::move(out), a, b, [](Tape& t, std::uint32_t o, std::uint32_t ai, std::uint32_t bi) {
            const auto& g = t.nodes_[o].grad.v;
            if (t.wants(ai)) {
                auto& ga = t.grad_buf(ai);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (t.wants(bi)) {
                auto& gb = t.grad_buf(bi);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
    }

    Var sub(Var a, Var b) {
        check_same(a, b, "sub");
        Tensor<S> out = nodes_[a.id].val;
        const auto& bv = nodes_[b.id].val.v;
        for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] -= bv[i];
        return binary(std::move(out), a, b, [](Tape& t, std::uint32_t o, std::uint32_t ai, std::uint32_t bi) {
            const auto& g = t.nodes_[o].grad.v;
            if (t.wants(ai)) {
                auto& ga = t.grad_buf(ai);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (t.wants(bi)) {
                auto& gb = t.grad_buf(bi);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        });
    }

    Var mul(Var a, Var b) {
        check_same(a, b, "mul");
        Tensor<S> out = nodes_[a.id].val;
        const auto& bv = nodes_[b.id].val.v;
        for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] *= bv[i];
        return binary(std::move(out), a, b, [](Tape& t, std::uint32_t o, std::uint32_t ai, std::uint32_t bi) {
            const auto& g = t.nodes_[o].grad.v;
            const auto& av = t.nodes_[ai].val.v;
            const auto& bvv = t.nodes_[bi].val.v;
            if (t.wants(ai)) {
                auto& ga = t.grad_buf(ai);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bvv[i];
            }
            if (t.wants(bi)) {
                auto& gb = t.grad_buf(bi);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
            }
        });
    }

    Var scale(Var a, S c) {
        Tensor<S> out = nodes_[a.id].val;
        for (auto& x : out.v) x *= c;
        return unary(std::move(out), a, [c](Tape& t, std::uint32_t o, std::uint32_t ai) {
            const auto& g = t.nodes_[o].grad.v;
            auto& ga = t.grad_buf(ai);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
        });
    }

    Var add_scalar(Var a, S c) {
        Tensor<S> out = nodes_[a.id].val;
        for (auto& x : out.v) x += c;
        return unary(std::move(out), a, [](Tape& t, std::uint32_t o, std::uint32_t ai) {
            const auto& g = t.nodes_[o].grad.v;
            auto& ga = t.grad_buf(ai);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
    }

    // out[r,c] = a[r,c] + v[c]; v is a rank-1 (or [1,n]) row vector.
    Var add_rowvec(Var a, Var vrow) {
        const auto& av = nodes_[a.id].val;
        const auto& vv = nodes_[vrow.id].val;
        std::size_t rows = av.rows(), cols = av.cols();
        if (vv.numel() != cols) throw std::invalid_argument("add_rowvec: width mismatch");
        Tensor<S> out = av;
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) out.v[r * cols + c] += vv.v[c];
        return binary(std::move(out), a, vrow,
                      [rows, cols](Tape& t, std::uint32_t o, std::uint32_t ai, std::uint32_t vi) {
                          const auto& g = t.nodes_[o].grad.v;
                          if (t.wants(ai)) {
                              auto& ga = t.grad_buf(ai);
                              for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                          }
                          if (t.wants(vi)) {
                              auto& gv = t.grad_buf(vi);
                              for (std::size_t r = 0; r < rows; ++r)
                                  for (std::size_t c = 0; c < cols; ++c) gv[c] += g[r * cols + c];
                          }
                      });
    }

    Var matmul(Var a, Var b) {
        const auto& av = nodes_[a.id].val;
        const auto& bv = nodes_[b.id].val;
        std::size_t m = av.rows(), k = av.cols(), k2 = bv.rows(), n = bv.cols();
        if (k != k2) {
            throw std::invalid_argument("matmul: inner dims " + shape_str(av.shape) + " x " +
                                        shape_str(bv.shape));
        }
        Tensor<S> out({m, n});
        kern::matmul(av.v.data(), bv.v.data(), out.v.data(), m, k, n);
        return binary(std::move(out), a, b,
                      [m, k, n](Tape& t, std::uint32_t o, std::uint32_t ai, std::uint32_t bi) {
                          const auto& g = t.nodes_[o].grad.v;
                          const auto& av2 = t.nodes_[ai].val.v;
                          const auto& bv2 = t.nodes_[bi].val.v;
                          if (t.wants(ai)) {
                              // dA = G * B^T
                              kern::matmul_nt_acc(g.data(), bv2.data(), t.grad_buf(ai).data(), m, n, k);
                          }
                          if (t.wants(bi)) {
                              // dB = A^T * G
                              kern::matmul_tn_acc(av2.data(), g.data(), t.grad_buf(bi).data(), m, k, n);
                          }
                      });
    }

    Var transpose(Var a) {
        const auto& av = nodes_[a.id].val;
        std::size_t m = av.rows(), n = av.cols();
        Tensor<S> out({n, m});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out.v[j * m + i] = av.v[i * n + j];
        return unary(std::move(out), a, [m, n](Tape& t, std::uint32_t o, std::uint32_t ai) {
            const auto& g = t.nodes_[o].grad.v;
            auto& ga = t.grad_buf(ai);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
        });
    }

    Var reshape(Var a, std::vector<std::size_t> shape) {
        const auto& av = nodes_[a.id].val;
        if (Tensor<S>::numel_of(shape) != av.numel()) throw std::invalid_argument("reshape: numel mismatch");
        Tensor<S> out(std::move(shape), av.v);
        return unary(std::move(out), a, [](Tape& t, std::uint32_t o, std::uint32_t ai) {
            const auto& g = t.nodes_[o].grad.v;
            auto& ga = t.grad_buf(ai);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
    }

    // ---- nonlinearities ----

    Var gelu(Var a) {
        const auto& av = nodes_[a.id].val;
        Tensor<S> out(av.shape);
        kern::gelu(av.v.data(), out.v.data(), av.numel());
        return unary(std::move(out), a, [](Tape& t, std::uint32_t o, std::uint32_t ai) {
            const auto& g = t.nodes_[o].grad.v;
            const auto& x = t.nodes_[ai].val.v;
            auto& ga = t.grad_buf(ai);
            constexpr S inv_sqrt2 = static_cast<S>(0.7071067811865476);
            constexpr S inv_sqrt2pi = static_cast<S>(0.3989422804014327);
            for (std::size_t i = 0; i < g.size(); ++i) {
                S xi = x[i];
                S cdf = S(0.5) * (S(1) + std::erf(xi * inv_sqrt2));
                S pdf = inv_sqrt2pi * std::exp(S(-0.5) * xi * xi);
                ga[i] += g[i] * (cdf + xi * pdf);
            }
        });
    }

    Var softplus(Var a) {
        const auto& av = nodes_[a.id].val;
        Tensor<S> out(av.shape);
        for (std::size_t i = 0; i < av.numel(); ++i) {
            double x = static_cast<double>(av.v[i]);
            out.v[i] = static_cast<S>(x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)));
        }
        return unary(std::move(out), a, [](Tape& t, std::uint32_t o, std::uint32_t ai) {
            const auto& g = t.nodes_[o].grad.v;
            const auto& x = t.nodes_[ai].val.v;
            auto& ga = t.grad_buf(ai);
            for (std::size_t i = 0; i < g.size(); ++i) {
                double s = 1.0 / (1.0 + std::exp(-static_cast<double>(x[i])));
                ga[i] += g[i] * static_cast<S>(s);
            }
        });
    }

    Var softmax_rows(Var a) {
        const auto& av = nodes_[a.id].val;
        std::size_t rows = av.rows(), cols = av.cols();
        Tensor<S> out(av.shape);
        kern::softmax_rows(av.v.data(), out.v.data(), rows, cols);
        return unary(std::move(out), a, [rows, cols](Tape& t, std::uint32_t o, std::uint32_t ai) {
            const auto& g = t.nodes_[o].grad.v;
            const auto& y = t.nodes_[o].val.v;
            auto& ga = t.grad_buf(ai);
            for (std::size_t r = 0; r < rows; ++r) {
                S dot = S(0);
                for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
                for (std::size_t c = 0; c < cols; ++c)
                    ga[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
            }
        });
    }

    Var log_softmax_rows(Var a) {
        const auto& av = nodes_[a.id].val;
        std::size_t rows = av.rows(), cols = av.cols();
        Tensor<S> out(av.shape);
        for (std::size_t r = 0; r < rows; ++r) {
            const S* xr = av.v.data() + r * cols;
            S* yr = out.v.data() + r * cols;
            S mx = xr[0];
            for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
            double lse = 0.0;
            for (std::size_t c = 0; c < cols; ++c) lse += std::exp(static_cast<double>(xr[c] - mx));
            S log_denom = mx + static_cast<S>(std::log(lse));
            for (std::size_t c = 0; c < cols; ++c) yr[c] = xr[c] - log_denom;
        }
        return unary(std::move(out), a, [rows, cols](Tape& t, std::uint32_t o, std::uint32_t ai) {
            const auto& g = t.nodes_[o].grad.v;
            const auto& y = t.nodes_[o].val.v;
            auto& ga = t.grad_buf(ai);
            for (std::size_t r = 0; r < rows; ++r) {
                S gsum = S(0);
                for (std::size_t c = 0; c < cols; ++c) gsum += g[r * cols + c];
                for (std::size_t c = 0; c < cols; ++c) {
                    S sm = static_cast<S>(std::exp(static_cast<double>(y[r * cols + c])));
                    ga[r * cols + c] += g[r * cols + c] - sm * gsum;
                }
            }
        });
    }

    Var layernorm_rows(Var a, Var gain, Var bias, S eps = S(1e-5)) {
        const auto& av = nodes_[a.id].val;
        std::size_t rows = av.rows(), cols = av.cols();
        if (nodes_[gain.id].val.numel() != cols || nodes_[bias.id].val.numel() != cols)
            throw std::invalid_argument("layernorm: gain/bias width mismatch");
        Tensor<S> out(av.shape);
        Tensor<S> inv_std({rows});
        kern::layernorm_rows(av.v.data(), nodes_[gain.id].val.v.data(), nodes_[bias.id].val.v.data(),
                             out.v.data(), inv_std.v.data(), rows, cols, eps);
        Var o = push(std::move(out), needs(a) || needs(gain) || needs(bias), nullptr);
        nodes_[o.id].saved.push_back(std::move(inv_std));
        std::uint32_t oid = o.id, ai = a.id, gi = gain.id, bi = bias.id;
        nodes_[oid].back = [oid, ai, gi, bi, rows, cols](Tape& t) {
            const auto& g = t.nodes_[oid].grad.v;
            const auto& x = t.nodes_[ai].val.v;
            const auto& gamma = t.nodes_[gi].val.v;
            const auto& is = t.nodes_[oid].saved[0].v;
            for (std::size_t r = 0; r < rows; ++r) {
                // Recover mean from saved inv_std and x.
                S mean = S(0);
                for (std::size_t c = 0; c < cols; ++c) mean += x[r * cols + c];
                mean /= static_cast<S>(cols);
                S sg = S(0), sgx = S(0);
                for (std::size_t c = 0; c < cols; ++c) {
                    S xh = (x[r * cols + c] - mean) * is[r];
                    S dxh = g[r * cols + c] * gamma[c];
                    sg += dxh;
                    sgx += dxh * xh;
                }
                S inv_n = S(1) / static_cast<S>(cols);
                if (t.wants(ai)) {
                    auto& ga = t.grad_buf(ai);
                    for (std::size_t c = 0; c < cols; ++c) {
                        S xh = (x[r * cols + c] - mean) * is[r];
                        S dxh = g[r * cols + c] * gamma[c];
                        ga[r * cols + c] += is[r] * (dxh - inv_n * sg - xh * inv_n * sgx);
                    }
                }
                if (t.wants(gi)) {
                    auto& gg = t.grad_buf(gi);
                    for (std::size_t c = 0; c < cols; ++c) {
                        S xh = (x[r * cols + c] - mean) * is[r];
                        gg[c] += g[r * cols + c] * xh;
                    }
                }
                if (t.wants(bi)) {
                    auto& gb = t.grad_buf(bi);
                    for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
                }
            }
        };
        return o;
    }

    Var l2_normalize_rows(Var a, S eps = S(1e-8)) {
        const auto& av = nodes_[a.id].val;
        std::size_t rows = av.rows(), cols = av.cols();
        Tensor<S> out(av.shape);
        Tensor<S> norms({rows});
        for (std::size_t r = 0; r < rows; ++r) {
            double ss = 0;
            for (std::size_t c = 0; c < cols; ++c) {
                double x = static_cast<double>(av.v[r * cols + c]);
                ss += x * x;
            }
            S n = std::max(static_cast<S>(std::sqrt(ss)), eps);
            norms.v[r] = n;
            for (std::size_t c = 0; c < cols; ++c) out.v[r * cols + c] = av.v[r * cols + c] / n;
        }
        Var o = push(std::move(out), needs(a), nullptr);
        nodes_[o.id].saved.push_back(std::move(norms));
        std::uint32_t oid = o.id, ai = a.id;
        nodes_[oid].back = [oid, ai, rows, cols, eps](Tape& t) {
            if (!t.wants(ai)) return;
            const auto& g = t.nodes_[oid].grad.v;
            const auto& y = t.nodes_[oid].val.v;
            const auto& x = t.nodes_[ai].val.v;
            const auto& n = t.nodes_[oid].saved[0].v;
            auto& ga = t.grad_buf(ai);
            for (std::size_t r = 0; r < rows; ++r) {
                double ss = 0;
                for (std::size_t c = 0; c < cols; ++c) {
                    double xv = static_cast<double>(x[r * cols + c]);
                    ss += xv * xv;
                }
                bool floored = std::sqrt(ss) < static_cast<double>(eps);
                if (floored) {
                    for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += g[r * cols + c] / eps;
                } else {
                    S dot = S(0);
                    for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
                    for (std::size_t c = 0; c < cols; ++c)
                        ga[r * cols + c] += (g[r * cols + c] - y[r * cols + c] * dot) / n[r];
                }
            }
        };
        return o;
    }

    // ---- structural ops ----

    Var gather_rows(Var a, std::vector<std::size_t> idx) {
        const auto& av = nodes_[a.id].val;
        std::size_t cols = av.cols();
        Tensor<S> out({idx.size(), cols});
        for (std::size_t t = 0; t < idx.size(); ++t) {
            if (idx[t] >= av.rows()) throw std::out_of_range("gather_rows: index out of range");
            for (std::size_t c = 0; c < cols; ++c) out.v[t * cols + c] = av.v[idx[t] * cols + c];
        }
        auto idx_ptr = std::make_shared<std::vector<std::size_t>>(std::move(idx));
        return unary(std::move(out), a, [idx_ptr, cols](Tape& t, std::uint32_t o, std::uint32_t ai) {
            const auto& g = t.nodes_[o].grad.v;
            auto& ga = t.grad_buf(ai);
            const auto& ix = *idx_ptr;
            for (std::size_t r = 0; r < ix.size(); ++r)
                for (std::size_t c = 0; c < cols; ++c) ga[ix[r] * cols + c] += g[r * cols + c];
        });
    }

    // Copies `row_source` (a single row) over the listed rows of `a`; the
    // replaced rows of the output are bit-identical to the source row.
    Var replace_rows(Var a, std::vector<std::size_t> rows_to_replace, Var row_source) {
        const auto& av = nodes_[a.id].val;
        const auto& sv = nodes_[row_source.id].val;
        std::size_t cols = av.cols();
        if (sv.numel() != cols) throw std::invalid_argument("replace_rows: width mismatch");
        Tensor<S> out = av;
        for (std::size_t r : rows_to_replace) {
            if (r >= av.rows()) throw std::out_of_range("replace_rows: row out of range");
            for (std::size_t c = 0; c < cols; ++c) out.v[r * cols + c] = sv.v[c];
        }
        auto rows_ptr = std::make_shared<std::vector<std::size_t>>(std::move(rows_to_replace));
        return binary(std::move(out), a, row_source,
                      [rows_ptr, cols](Tape& t, std::uint32_t o, std::uint32_t ai, std::uint32_t si) {
                          const auto& g = t.nodes_[o].grad.v;
                          const auto& rr = *rows_ptr;
                          std::vector<bool> replaced(t.nodes_[ai].val.rows(), false);
                          for (std::size_t r : rr) replaced[r] = true;
                          if (t.wants(ai)) {
                              auto& ga = t.grad_buf(ai);
                              for (std::size_t r = 0; r < replaced.size(); ++r) {
                                  if (replaced[r]) continue;
                                  for (std::size_t c = 0; c < cols; ++c)
                                      ga[r * cols + c] += g[r * cols + c];
                              }
                          }
                          if (t.wants(si)) {
                              auto& gs = t.grad_buf(si);
                              for (std::size_t r : rr)
                                  for (std::size_t c = 0; c < cols; ++c) gs[c] += g[r * cols + c];
                          }
                      });
    }

    // Columns [c0, c1) of a 2-D tensor.
    Var slice_cols(Var a, std::size_t c0, std::size_t c1) {
        const auto& av = nodes_[a.id].val;
        std::size_t rows = av.rows(), cols = av.cols();
        if (c0 >= c1 || c1 > cols) throw std::invalid_argument("slice_cols: bad range");
        std::size_t w = c1 - c0;
        Tensor<S> out({rows, w});
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < w; ++c) out.v[r * w + c] = av.v[r * cols + c0 + c];
        return unary(std::move(out), a, [rows, cols, c0, w](Tape& t, std::uint32_t o, std::uint32_t ai) {
            const auto& g = t.nodes_[o].grad.v;
            auto& ga = t.grad_buf(ai);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < w; ++c) ga[r * cols + c0 + c] += g[r * w + c];
        });
    }

    Var concat_rows(const std::vector<Var>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
        std::size_t cols = nodes_[parts[0].id].val.cols();
        std::size_t rows = 0;
        for (Var p : parts) {
            if (nodes_[p.id].val.cols() != cols) throw std::invalid_argument("concat_rows: width mismatch");
            rows += nodes_[p.id].val.rows();
        }
        Tensor<S> out({rows, cols});
        std::size_t at = 0;
        bool any_grad = false;
        std::vector<std::pair<std::uint32_t, std::size_t>> spans;  // (node, row offset)
        for (Var p : parts) {
            const auto& pv = nodes_[p.id].val;
            std::copy(pv.v.begin(), pv.v.end(), out.v.begin() + at * cols);
            spans.emplace_back(p.id, at);
            at += pv.rows();
            any_grad = any_grad || needs(p);
        }
        Var o = push(std::move(out), any_grad, nullptr);
        std::uint32_t oid = o.id;
        auto spans_ptr = std::make_shared<std::vector<std::pair<std::uint32_t, std::size_t>>>(std::move(spans));
        nodes_[oid].back = [oid, spans_ptr, cols](Tape& t) {
            const auto& g = t.nodes_[oid].grad.v;
            for (auto [pid, off] : *spans_ptr) {
                if (!t.wants(pid)) continue;
                auto& gp = t.grad_buf(pid);
                for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off * cols + i];
            }
        };
        return o;
    }

    // ---- attention (fused multi-head) ----
    //
    // q: [n_q, d], k/v: [n_kv, d] with d divisible by heads. The causal flag
    // restricts query i to keys j <= i (requires n_q == n_kv).
    Var attention(Var q, Var k, Var v, std::size_t heads, bool causal, AttnProbe<S>* probe = nullptr) {
        const auto& qv = nodes_[q.id].val;
        const auto& kv = nodes_[k.id].val;
        const auto& vv = nodes_[v.id].val;
        std::size_t n_q = qv.rows(), d = qv.cols(), n_kv = kv.rows();
        if (kv.cols() != d || vv.cols() != d || vv.rows() != n_kv)
            throw std::invalid_argument("attention: shape mismatch");
        if (heads == 0 || d % heads != 0) throw std::invalid_argument("attention: bad head count");
        if (causal && n_q != n_kv) throw std::invalid_argument("attention: causal requires square");
        std::size_t hd = d / heads;
        S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));

        Tensor<S> out({n_q, d});
        Tensor<S> weights({heads * n_q, n_kv});
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < n_q; ++i) {
                S* wrow = weights.v.data() + (h * n_q + i) * n_kv;
                std::size_t limit = causal ? i + 1 : n_kv;
                S mx = -std::numeric_limits<S>::infinity();
                for (std::size_t j = 0; j < limit; ++j) {
                    S s = S(0);
                    for (std::size_t c = 0; c < hd; ++c)
                        s += qv.v[i * d + h * hd + c] * kv.v[j * d + h * hd + c];
                    s *= inv_sqrt;
                    wrow[j] = s;
                    mx = std::max(mx, s);
                }
                S denom = S(0);
                for (std::size_t j = 0; j < limit; ++j) {
                    wrow[j] = std::exp(wrow[j] - mx);
                    denom += wrow[j];
                }
                S inv_denom = S(1) / denom;
                for (std::size_t j = 0; j < limit; ++j) wrow[j] *= inv_denom;
                for (std::size_t j = limit; j < n_kv; ++j) wrow[j] = S(0);
                for (std::size_t c = 0; c < hd; ++c) {
                    S acc = S(0);
                    for (std::size_t j = 0; j < limit; ++j) acc += wrow[j] * vv.v[j * d + h * hd + c];
                    out.v[i * d + h * hd + c] = acc;
                }
            }
        }
        if (probe) {
            probe->head_weights.clear();
            for (std::size_t h = 0; h < heads; ++h) {
                Tensor<S> w({n_q, n_kv});
                std::copy(weights.v.begin() + h * n_q * n_kv, weights.v.begin() + (h + 1) * n_q * n_kv,
                          w.v.begin());
                probe->head_weights.push_back(std::move(w));
            }
        }
        Var o = push(std::move(out), needs(q) || needs(k) || needs(v), nullptr);
        nodes_[o.id].saved.push_back(std::move(weights));
        std::uint32_t oid = o.id, qi = q.id, ki = k.id, vi = v.id;
        nodes_[oid].back = [oid, qi, ki, vi, heads, hd, n_q, n_kv, causal, inv_sqrt](Tape& t) {
            std::size_t d = heads * hd;
            const auto& g = t.nodes_[oid].grad.v;
            const auto& A = t.nodes_[oid].saved[0].v;
            const auto& qv2 = t.nodes_[qi].val.v;
            const auto& kv2 = t.nodes_[ki].val.v;
            const auto& vv2 = t.nodes_[vi].val.v;
            std::vector<S> dS(n_kv);
            for (std::size_t h = 0; h < heads; ++h) {
                for (std::size_t i = 0; i < n_q; ++i) {
                    const S* arow = A.data() + (h * n_q + i) * n_kv;
                    std::size_t limit = causal ? i + 1 : n_kv;
                    // dA[j] = sum_c g[i,c] * v[j,c];  dS = A .* (dA - sum_j dA[j]A[j])
                    S dot = S(0);
                    for (std::size_t j = 0; j < limit; ++j) {
                        S da = S(0);
                        for (std::size_t c = 0; c < hd; ++c)
                            da += g[i * d + h * hd + c] * vv2[j * d + h * hd + c];
                        dS[j] = da;
                        dot += da * arow[j];
                    }
                    for (std::size_t j = 0; j < limit; ++j) dS[j] = arow[j] * (dS[j] - dot);
                    if (t.wants(vi)) {
                        auto& gv = t.grad_buf(vi);
                        for (std::size_t j = 0; j < limit; ++j)
                            for (std::size_t c = 0; c < hd; ++c)
                                gv[j * d + h * hd + c] += arow[j] * g[i * d + h * hd + c];
                    }
                    if (t.wants(qi)) {
                        auto& gq = t.grad_buf(qi);
                        for (std::size_t j = 0; j < limit; ++j)
                            for (std::size_t c = 0; c < hd; ++c)
                                gq[i * d + h * hd + c] += inv_sqrt * dS[j] * kv2[j * d + h * hd + c];
                    }
                    if (t.wants(ki)) {
                        auto& gk = t.grad_buf(ki);
                        for (std::size_t j = 0; j < limit; ++j)
                            for (std::size_t c = 0; c < hd; ++c)
                                gk[j * d + h * hd + c] += inv_sqrt * dS[j] * qv2[i * d + h * hd + c];
                    }
                }
            }
        };
        return o;
    }

    // Attention restricted to row groups: query row r in group g attends keys
    // and values at kv_groups[g] (defaults to the query groups). Groups must
    // partition their row sets, which keeps the per-group parallel loop free
    // of write conflicts and bitwise deterministic for any thread count.
    Var grouped_attention(Var q, Var k, Var v, std::size_t heads, bool causal,
                          std::shared_ptr<const std::vector<std::vector<std::size_t>>> q_groups,
                          std::shared_ptr<const std::vector<std::vector<std::size_t>>> kv_groups =
                              nullptr,
                          AttnProbe<S>* probe = nullptr) {
        const auto& qv = nodes_[q.id].val;
        const auto& kv = nodes_[k.id].val;
        const auto& vv = nodes_[v.id].val;
        std::size_t d = qv.cols();
        if (kv.cols() != d || vv.cols() != d || kv.rows() != vv.rows())
            throw std::invalid_argument("grouped_attention: shape mismatch");
        if (heads == 0 || d % heads != 0) throw std::invalid_argument("grouped_attention: bad heads");
        if (!kv_groups) kv_groups = q_groups;
        if (q_groups->size() != kv_groups->size())
            throw std::invalid_argument("grouped_attention: group count mismatch");
        std::size_t hd = d / heads;
        S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));
        std::size_t n_groups = q_groups->size();

        // Per-group weight storage offsets: heads * n_q * n_kv scalars each.
        std::vector<std::size_t> offsets(n_groups + 1, 0);
        for (std::size_t g = 0; g < n_groups; ++g) {
            if (causal && (*q_groups)[g].size() != (*kv_groups)[g].size())
                throw std::invalid_argument("grouped_attention: causal requires square groups");
            offsets[g + 1] = offsets[g] + heads * (*q_groups)[g].size() * (*kv_groups)[g].size();
        }
        Tensor<S> out({qv.rows(), d}, S(0));
        Tensor<S> weights({offsets[n_groups]});

        auto run_group = [&](std::size_t g) {
            const auto& qg = (*q_groups)[g];
            const auto& kg = (*kv_groups)[g];
            std::size_t n_q = qg.size(), n_kv = kg.size();
            S* w = weights.v.data() + offsets[g];
            for (std::size_t h = 0; h < heads; ++h) {
                for (std::size_t i = 0; i < n_q; ++i) {
                    S* wrow = w + (h * n_q + i) * n_kv;
                    std::size_t limit = causal ? i + 1 : n_kv;
                    S mx = -std::numeric_limits<S>::infinity();
                    for (std::size_t j = 0; j < limit; ++j) {
                        S s = S(0);
                        const S* qrow = qv.v.data() + qg[i] * d + h * hd;
                        const S* krow = kv.v.data() + kg[j] * d + h * hd;
                        for (std::size_t c = 0; c < hd; ++c) s += qrow[c] * krow[c];
                        s *= inv_sqrt;
                        wrow[j] = s;
                        mx = std::max(mx, s);
                    }
                    S denom = S(0);
                    for (std::size_t j = 0; j < limit; ++j) {
                        wrow[j] = std::exp(wrow[j] - mx);
                        denom += wrow[j];
                    }
                    S inv_denom = S(1) / denom;
                    for (std::size_t j = 0; j < limit; ++j) wrow[j] *= inv_denom;
                    for (std::size_t j = limit; j < n_kv; ++j) wrow[j] = S(0);
                    S* orow = out.v.data() + qg[i] * d + h * hd;
                    for (std::size_t j = 0; j < limit; ++j) {
                        const S* vrow = vv.v.data() + kg[j] * d + h * hd;
                        for (std::size_t c = 0; c < hd; ++c) orow[c] += wrow[j] * vrow[c];
                    }
                }
            }
        };
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (n_groups >= 8)
#endif
        for (std::size_t g = 0; g < n_groups; ++g) run_group(g);

        if (probe) {
            probe->head_weights.clear();
            std::size_t n_q0 = (*q_groups)[0].size(), n_kv0 = (*kv_groups)[0].size();
            for (std::size_t h = 0; h < heads; ++h) {
                Tensor<S> w({n_q0, n_kv0});
                std::copy(weights.v.begin() + static_cast<long>(h * n_q0 * n_kv0),
                          weights.v.begin() + static_cast<long>((h + 1) * n_q0 * n_kv0),
                          w.v.begin());
                probe->head_weights.push_back(std::move(w));
            }
        }

        Var o = push(std::move(out), needs(q) || needs(k) || needs(v), nullptr);
        nodes_[o.id].saved.push_back(std::move(weights));
        std::uint32_t oid = o.id, qi = q.id, ki = k.id, vi = v.id;
        auto offs = std::make_shared<std::vector<std::size_t>>(std::move(offsets));
        nodes_[oid].back = [oid, qi, ki, vi, heads, hd, causal, inv_sqrt, q_groups, kv_groups,
                            offs](Tape& t) {
            std::size_t d = heads * hd;
            const auto& g_out = t.nodes_[oid].grad.v;
            const auto& A = t.nodes_[oid].saved[0].v;
            const auto& qv2 = t.nodes_[qi].val.v;
            const auto& kv2 = t.nodes_[ki].val.v;
            const auto& vv2 = t.nodes_[vi].val.v;
            bool wq = t.wants(qi), wk = t.wants(ki), wv = t.wants(vi);
            S* gq = wq ? t.grad_buf(qi).data() : nullptr;
            S* gk = wk ? t.grad_buf(ki).data() : nullptr;
            S* gv = wv ? t.grad_buf(vi).data() : nullptr;
            std::size_t n_groups = q_groups->size();
            auto back_group = [&](std::size_t grp) {
                const auto& qg = (*q_groups)[grp];
                const auto& kg = (*kv_groups)[grp];
                std::size_t n_q = qg.size(), n_kv = kg.size();
                const S* w = A.data() + (*offs)[grp];
                std::vector<S> dS(n_kv);
                for (std::size_t h = 0; h < heads; ++h) {
                    for (std::size_t i = 0; i < n_q; ++i) {
                        const S* arow = w + (h * n_q + i) * n_kv;
                        std::size_t limit = causal ? i + 1 : n_kv;
                        const S* grow = g_out.data() + qg[i] * d + h * hd;
                        S dot = S(0);
                        for (std::size_t j = 0; j < limit; ++j) {
                            S da = S(0);
                            const S* vrow = vv2.data() + kg[j] * d + h * hd;
                            for (std::size_t c = 0; c < hd; ++c) da += grow[c] * vrow[c];
                            dS[j] = da;
                            dot += da * arow[j];
                        }
                        for (std::size_t j = 0; j < limit; ++j) dS[j] = arow[j] * (dS[j] - dot);
                        for (std::size_t j = 0; j < limit; ++j) {
                            if (gv) {
                                S* gvr = gv + kg[j] * d + h * hd;
                                for (std::size_t c = 0; c < hd; ++c) gvr[c] += arow[j] * grow[c];
                            }
                            if (gq) {
                                S* gqr = gq + qg[i] * d + h * hd;
                                const S* krow = kv2.data() + kg[j] * d + h * hd;
                                for (std::size_t c = 0; c < hd; ++c)
                                    gqr[c] += inv_sqrt * dS[j] * krow[c];
                            }
                            if (gk) {
                                S* gkr = gk + kg[j] * d + h * hd;
                                const S* qrow = qv2.data() + qg[i] * d + h * hd;
                                for (std::size_t c = 0; c < hd; ++c)
                                    gkr[c] += inv_sqrt * dS[j] * qrow[c];
                            }
                        }
                    }
                }
            };
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (n_groups >= 8)
#endif
            for (std::size_t grp = 0; grp < n_groups; ++grp) back_group(grp);
        };
        return o;
    }

    // ---- reductions ----

    Var sum_all(Var a) {
        const auto& av = nodes_[a.id].val;
        S acc = S(0);
        for (S x : av.v) acc += x;
        Tensor<S> out({1});
        out.v[0] = acc;
        return unary(std::move(out), a, [](Tape& t, std::uint32_t o, std::uint32_t ai) {
            S g = t.nodes_[o].grad.v[0];
            auto& ga = t.grad_buf(ai);
            for (auto& x : ga) x += g;
        });
    }

    Var mean_all(Var a) {
        std::size_t n = nodes_[a.id].val.numel();
        return scale(sum_all(a), static_cast<S>(1.0 / static_cast<double>(n)));
    }

    // Scalar sum of w .* a with constant weights; the workhorse behind every
    // cross-entropy / masked mean in the loss heads.
    Var weighted_sum(Var a, Tensor<S> w) {
        const auto& av = nodes_[a.id].val;
        if (w.numel() != av.numel()) throw std::invalid_argument("weighted_sum: size mismatch");
        S acc = S(0);
        for (std::size_t i = 0; i < w.numel(); ++i) acc += w.v[i] * av.v[i];
        Tensor<S> out({1});
        out.v[0] = acc;
        auto w_ptr = std::make_shared<Tensor<S>>(std::move(w));
        return unary(std::move(out), a, [w_ptr](Tape& t, std::uint32_t o, std::uint32_t ai) {
            S g = t.nodes_[o].grad.v[0];
            auto& ga = t.grad_buf(ai);
            const auto& wv = w_ptr->v;
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * wv[i];
        });
    }

    // Inverted dropout with a stateless per-element stream: element i keeps a
    // value iff hash(seed, i) >= p. Deterministic and order-independent.
    Var dropout(Var a, double p, std::uint64_t seed) {
        if (p <= 0.0) return a;
        const auto& av = nodes_[a.id].val;
        Tensor<S> out = av;
        auto mask = std::make_shared<std::vector<std::uint8_t>>(av.numel());
        S keep_scale = static_cast<S>(1.0 / (1.0 - p));
        for (std::size_t i = 0; i < av.numel(); ++i) {
            double u = static_cast<double>(mix_seed(seed, i) >> 11) * 0x1.0p-53;
            bool keep = u >= p;
            (*mask)[i] = keep ? 1 : 0;
            out.v[i] = keep ? av.v[i] * keep_scale : S(0);
        }
        return unary(std::move(out), a, [mask, keep_scale](Tape& t, std::uint32_t o, std::uint32_t ai) {
            const auto& g = t.nodes_[o].grad.v;
            auto& ga = t.grad_buf(ai);
            for (std::size_t i = 0; i < g.size(); ++i)
                if ((*mask)[i]) ga[i] += g[i] * keep_scale;
        });
    }

    // ---- backward ----

    void backward(Var loss) {
        const auto& lv = nodes_[loss.id].val;
        if (!lv.is_scalar()) throw std::invalid_argument("backward: loss must be scalar");
        grad_buf(loss.id)[0] = S(1);
        for (std::uint32_t id = loss.id + 1; id-- > 0;) {
            Node& n = nodes_[id];
            if (!n.needs_grad || n.grad.v.empty() || !n.back) continue;
            n.back(*this);
        }
    }

    bool needs(Var a) const { return nodes_[a.id].needs_grad; }

private:
    struct Node {
        Tensor<S> val;
        Tensor<S> grad;  // allocated lazily on first write
        std::vector<Tensor<S>> saved;
        bool needs_grad = false;
        std::function<void(Tape&)> back;
    };

    std::vector<Node> nodes_;
    bool grad_enabled_ = true;

    bool wants(std::uint32_t id) const { return nodes_[id].needs_grad; }

    std::vector<S>& grad_buf(std::uint32_t id) {
        Node& n = nodes_[id];
        if (n.grad.v.empty()) n.grad = Tensor<S>(n.val.shape, S(0));
        return n.grad.v;
    }

    Var push(Tensor<S> val, bool needs_grad, std::function<void(Tape&)> back) {
        Node n;
        n.val = std::move(val);
        n.needs_grad = needs_grad;
        n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    template <class F>
    Var unary(Tensor<S> out, Var a, F&& f) {
        Var o = push(std::move(out), needs(a), nullptr);
        std::uint32_t oid = o.id, ai = a.id;
        if (nodes_[oid].needs_grad) {
            nodes_[oid].back = [oid, ai, f = std::forward<F>(f)](Tape& t) {
                if (t.wants(ai)) f(t, oid, ai);
            };
        }
        return o;
    }

    template <class F>
    Var binary(Tensor<S> out, Var a, Var b, F&& f) {
        Var o = push(std::move(out), needs(a) || needs(b), nullptr);
        std::uint32_t oid = o.id, ai = a.id, bi = b.id;
        if (nodes_[oid].needs_grad) {
            nodes_[oid].back = [oid, ai, bi, f = std::forward<F>(f)](Tape& t) { f(t, oid, ai, bi); };
        }
        return o;
    }

    void check_same(Var a, Var b, const char* op) {
        if (!nodes_[a.id].val.same_shape(nodes_[b.id].val))
            throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                        shape_str(nodes_[a.id].val.shape) + " vs " +
                                        shape_str(nodes_[b.id].val.shape));
    }
};

}  // namespace marecg::num
