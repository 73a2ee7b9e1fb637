#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "bambino/errors.hpp"
#include "bambino/tensor.hpp"

// Differentiable primitives. Every op computes its value eagerly and, when a
// tape is active and some input wants gradients, records a backward rule.
// Forward math is plain loops except the matmul kernels, which go through
// Eigen (single-threaded, fixed reduction order, so runs stay reproducible).

namespace bambino {

using TokenSeq = std::vector<int>;

constexpr double kMaskValue = -1e30;
constexpr double kLayerNormEps = 1e-5;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

namespace detail {

inline bool tracking(std::initializer_list<const DenseArray*> inputs) {
    if (!Tape::active()) return false;
    for (const auto* a : inputs) {
        if (a->requires_grad()) return true;
    }
    return false;
}

inline void record(const char* op, std::vector<DenseArray> inputs, DenseArray& out,
                   std::function<void()> backward) {
    out.set_requires_grad(true);
    Tape::active()->record(op, std::move(inputs), out, std::move(backward));
}

// True when `small` is a right-aligned suffix of `big` (scalars always are).
inline bool shape_is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    for (std::size_t i = 0; i < small.size(); ++i) {
        if (small[small.size() - 1 - i] != big[big.size() - 1 - i]) return false;
    }
    return true;
}

inline void require_rank(const DenseArray& a, std::size_t r, const char* op) {
    if (a.rank() != r) {
        throw ShapeError(std::string(op) + ": expected rank-" + std::to_string(r) +
                         " array, got shape " + shape_str(a.shape()));
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise add / multiply with leading-dimension broadcasting
// ---------------------------------------------------------------------------

namespace detail {

template <class Fwd, class Bwd>
DenseArray broadcast_binary(const char* op, const DenseArray& a, const DenseArray& b, Fwd fwd,
                            Bwd bwd) {
    const bool a_big = shape_is_suffix(b.shape(), a.shape());
    const bool b_big = !a_big && shape_is_suffix(a.shape(), b.shape());
    if (!a_big && !b_big) {
        throw ShapeError(std::string(op) + ": shapes not broadcastable " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    }
    const DenseArray& big = a_big ? a : b;
    const DenseArray& small = a_big ? b : a;
    const std::size_t n = big.size();
    const std::size_t m = small.size() == 0 ? 1 : small.size();

    DenseArray out = DenseArray::zeros(big.shape());
    for (std::size_t i = 0; i < n; ++i) {
        out.values()[i] = fwd(big.values()[i], small.values()[i % m], a_big);
    }
    if (tracking({&a, &b})) {
        record(op, {a, b}, out, [a, b, out, a_big, bwd]() {
            const DenseArray& big = a_big ? a : b;
            const DenseArray& small = a_big ? b : a;
            const std::size_t n = big.size();
            const std::size_t m = small.size() == 0 ? 1 : small.size();
            const auto& g = out.grad();
            for (std::size_t i = 0; i < n; ++i) {
                double dbig, dsmall;
                bwd(big.values()[i], small.values()[i % m], a_big, g[i], dbig, dsmall);
                if (big.requires_grad()) big.grad()[i] += dbig;
                if (small.requires_grad()) small.grad()[i % m] += dsmall;
            }
        });
    }
    return out;
}

}  // namespace detail

inline DenseArray add(const DenseArray& a, const DenseArray& b) {
    return detail::broadcast_binary(
        "add", a, b, [](double x, double y, bool) { return x + y; },
        [](double, double, bool, double g, double& dbig, double& dsmall) {
            dbig = g;
            dsmall = g;
        });
}

inline DenseArray mul(const DenseArray& a, const DenseArray& b) {
    return detail::broadcast_binary(
        "mul", a, b, [](double x, double y, bool) { return x * y; },
        [](double x, double y, bool, double g, double& dbig, double& dsmall) {
            dbig = g * y;
            dsmall = g * x;
        });
}

inline DenseArray scale(const DenseArray& a, double c) {
    DenseArray out = DenseArray::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] * c;
    if (detail::tracking({&a})) {
        detail::record("scale", {a}, out, [a, out, c]() {
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (std::size_t i = 0; i < a.size(); ++i) ga[i] += c * g[i];
        });
    }
    return out;
}

inline DenseArray sub(const DenseArray& a, const DenseArray& b) { return add(a, scale(b, -1.0)); }

// ---------------------------------------------------------------------------
// matrix ops
// ---------------------------------------------------------------------------

inline DenseArray matmul(const DenseArray& a, const DenseArray& b) {
    detail::require_rank(a, 2, "matmul");
    detail::require_rank(b, 2, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2) {
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    DenseArray out = DenseArray::zeros({m, n});
    {
        ConstMatMap A(a.values().data(), m, k), B(b.values().data(), k, n);
        MatMap C(out.values().data(), m, n);
        C.noalias() = A * B;
    }
    if (detail::tracking({&a, &b})) {
        detail::record("matmul", {a, b}, out, [a, b, out, m, k, n]() {
            ConstMatMap A(a.values().data(), m, k), B(b.values().data(), k, n);
            ConstMatMap G(out.grad().data(), m, n);
            if (a.requires_grad()) {
                MatMap GA(a.grad().data(), m, k);
                GA.noalias() += G * B.transpose();
            }
            if (b.requires_grad()) {
                MatMap GB(b.grad().data(), k, n);
                GB.noalias() += A.transpose() * G;
            }
        });
    }
    return out;
}

inline DenseArray transpose(const DenseArray& a) {
    detail::require_rank(a, 2, "transpose");
    const std::size_t r = a.dim(0), c = a.dim(1);
    DenseArray out = DenseArray::zeros({c, r});
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) out.values()[j * r + i] = a.values()[i * c + j];
    }
    if (detail::tracking({&a})) {
        detail::record("transpose", {a}, out, [a, out, r, c]() {
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (std::size_t i = 0; i < r; ++i) {
                for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// row softmax family
// ---------------------------------------------------------------------------

inline DenseArray softmax_rows(const DenseArray& a) {
    detail::require_rank(a, 2, "softmax_rows");
    const std::size_t r = a.dim(0), c = a.dim(1);
    DenseArray out = DenseArray::zeros({r, c});
    for (std::size_t i = 0; i < r; ++i) {
        const double* x = a.values().data() + i * c;
        double* y = out.values().data() + i * c;
        double mx = x[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            y[j] = std::exp(x[j] - mx);
            s += y[j];
        }
        for (std::size_t j = 0; j < c; ++j) y[j] /= s;
    }
    if (detail::tracking({&a})) {
        detail::record("softmax_rows", {a}, out, [a, out, r, c]() {
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (std::size_t i = 0; i < r; ++i) {
                const double* y = out.values().data() + i * c;
                const double* gr = g.data() + i * c;
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j) dot += gr[j] * y[j];
                for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += y[j] * (gr[j] - dot);
            }
        });
    }
    return out;
}

inline DenseArray log_softmax_rows(const DenseArray& a) {
    detail::require_rank(a, 2, "log_softmax_rows");
    const std::size_t r = a.dim(0), c = a.dim(1);
    DenseArray out = DenseArray::zeros({r, c});
    for (std::size_t i = 0; i < r; ++i) {
        const double* x = a.values().data() + i * c;
        double* y = out.values().data() + i * c;
        double mx = x[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += std::exp(x[j] - mx);
        const double lse = mx + std::log(s);
        for (std::size_t j = 0; j < c; ++j) y[j] = x[j] - lse;
    }
    if (detail::tracking({&a})) {
        detail::record("log_softmax_rows", {a}, out, [a, out, r, c]() {
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (std::size_t i = 0; i < r; ++i) {
                const double* y = out.values().data() + i * c;
                const double* gr = g.data() + i * c;
                double gsum = 0.0;
                for (std::size_t j = 0; j < c; ++j) gsum += gr[j];
                for (std::size_t j = 0; j < c; ++j) {
                    ga[i * c + j] += gr[j] - std::exp(y[j]) * gsum;
                }
            }
        });
    }
    return out;
}

// Mean negative log-probability of targets[t] under row t, skipping positions
// whose target equals ignore_index.
inline DenseArray cross_entropy_next_token(const DenseArray& logits, const TokenSeq& targets,
                                           int ignore_index) {
    detail::require_rank(logits, 2, "cross_entropy_next_token");
    const std::size_t t_len = logits.dim(0), v = logits.dim(1);
    if (targets.size() != t_len) {
        throw ShapeError("cross_entropy_next_token: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(t_len) + " logit rows");
    }
    std::size_t n_eff = 0;
    for (int y : targets) {
        if (y == ignore_index) continue;
        if (y < 0 || static_cast<std::size_t>(y) >= v) {
            throw VocabError("cross_entropy_next_token: target id " + std::to_string(y) +
                             " outside vocabulary of size " + std::to_string(v));
        }
        ++n_eff;
    }
    if (n_eff == 0) {
        throw DataError("cross_entropy_next_token: all positions ignored (degenerate batch)");
    }

    double total = 0.0;
    for (std::size_t i = 0; i < t_len; ++i) {
        if (targets[i] == ignore_index) continue;
        const double* x = logits.values().data() + i * v;
        double mx = x[0];
        for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, x[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < v; ++j) s += std::exp(x[j] - mx);
        total += (mx + std::log(s)) - x[targets[i]];
    }
    DenseArray out = DenseArray::scalar(total / static_cast<double>(n_eff));
    if (!out.all_finite()) throw NumericsError("cross_entropy_next_token: non-finite loss");

    if (detail::tracking({&logits})) {
        TokenSeq tgt = targets;
        detail::record("cross_entropy_next_token", {logits}, out,
                       [logits, out, tgt = std::move(tgt), ignore_index, t_len, v, n_eff]() {
                           const double g = out.grad()[0] / static_cast<double>(n_eff);
                           auto& gl = logits.grad();
                           for (std::size_t i = 0; i < t_len; ++i) {
                               if (tgt[i] == ignore_index) continue;
                               const double* x = logits.values().data() + i * v;
                               double mx = x[0];
                               for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, x[j]);
                               double s = 0.0;
                               for (std::size_t j = 0; j < v; ++j) s += std::exp(x[j] - mx);
                               for (std::size_t j = 0; j < v; ++j) {
                                   const double p = std::exp(x[j] - mx) / s;
                                   gl[i * v + j] +=
                                       g * (p - (static_cast<int>(j) == tgt[i] ? 1.0 : 0.0));
                               }
                           }
                       });
    }
    return out;
}

// ---------------------------------------------------------------------------
// normalization / activation
// ---------------------------------------------------------------------------

inline DenseArray layer_norm(const DenseArray& x, const DenseArray& gain, const DenseArray& bias) {
    detail::require_rank(x, 2, "layer_norm");
    detail::require_rank(gain, 1, "layer_norm");
    detail::require_rank(bias, 1, "layer_norm");
    const std::size_t n = x.dim(0), d = x.dim(1);
    if (gain.dim(0) != d || bias.dim(0) != d) {
        throw ShapeError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " do not match last dimension of " +
                         shape_str(x.shape()));
    }
    DenseArray out = DenseArray::zeros({n, d});
    std::vector<double> mean(n), inv(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* r = x.values().data() + i * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += r[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (r[j] - mu) * (r[j] - mu);
        var /= static_cast<double>(d);
        const double iv = 1.0 / std::sqrt(var + kLayerNormEps);
        mean[i] = mu;
        inv[i] = iv;
        double* o = out.values().data() + i * d;
        for (std::size_t j = 0; j < d; ++j) {
            o[j] = (r[j] - mu) * iv * gain.values()[j] + bias.values()[j];
        }
    }
    if (detail::tracking({&x, &gain, &bias})) {
        detail::record("layer_norm", {x, gain, bias}, out,
                       [x, gain, bias, out, mean = std::move(mean), inv = std::move(inv), n, d]() {
                           const auto& g = out.grad();
                           for (std::size_t i = 0; i < n; ++i) {
                               const double* r = x.values().data() + i * d;
                               const double* gr = g.data() + i * d;
                               const double iv = inv[i];
                               // xhat = (x - mu) * iv; gg = dL/dxhat
                               double sum_gg = 0.0, sum_gg_xhat = 0.0;
                               for (std::size_t j = 0; j < d; ++j) {
                                   const double xhat = (r[j] - mean[i]) * iv;
                                   const double gg = gr[j] * gain.values()[j];
                                   sum_gg += gg;
                                   sum_gg_xhat += gg * xhat;
                                   if (gain.requires_grad()) gain.grad()[j] += gr[j] * xhat;
                                   if (bias.requires_grad()) bias.grad()[j] += gr[j];
                               }
                               if (x.requires_grad()) {
                                   const double dn = static_cast<double>(d);
                                   for (std::size_t j = 0; j < d; ++j) {
                                       const double xhat = (r[j] - mean[i]) * iv;
                                       const double gg = gr[j] * gain.values()[j];
                                       x.grad()[i * d + j] +=
                                           iv * (gg - sum_gg / dn - xhat * sum_gg_xhat / dn);
                                   }
                               }
                           }
                       });
    }
    return out;
}

inline DenseArray gelu(const DenseArray& a) {
    DenseArray out = DenseArray::zeros(a.shape());
    constexpr double inv_sqrt2 = 0.7071067811865475;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a.values()[i];
        out.values()[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    }
    if (detail::tracking({&a})) {
        detail::record("gelu", {a}, out, [a, out]() {
            constexpr double inv_sqrt2 = 0.7071067811865475;
            constexpr double inv_sqrt2pi = 0.3989422804014327;
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (std::size_t i = 0; i < a.size(); ++i) {
                const double x = a.values()[i];
                const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
                const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                ga[i] += g[i] * (cdf + x * pdf);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// indexing / structure
// ---------------------------------------------------------------------------

// Gather rows of an embedding table: out[l, :] = table[ids[l], :].
inline DenseArray embedding_rows(const DenseArray& table, const TokenSeq& ids) {
    detail::require_rank(table, 2, "embedding_rows");
    const std::size_t v = table.dim(0), d = table.dim(1);
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= v) {
            throw VocabError("embedding_rows: id " + std::to_string(id) +
                             " outside table of size " + std::to_string(v));
        }
    }
    const std::size_t l = ids.size();
    DenseArray out = DenseArray::zeros({l, d});
    for (std::size_t i = 0; i < l; ++i) {
        const double* src = table.values().data() + static_cast<std::size_t>(ids[i]) * d;
        std::copy(src, src + d, out.values().data() + i * d);
    }
    if (detail::tracking({&table})) {
        TokenSeq idc = ids;
        detail::record("embedding_rows", {table}, out, [table, out, idc = std::move(idc), d]() {
            const auto& g = out.grad();
            auto& gt = table.grad();
            for (std::size_t i = 0; i < idc.size(); ++i) {
                double* dst = gt.data() + static_cast<std::size_t>(idc[i]) * d;
                const double* src = g.data() + i * d;
                for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

// Sets entries above the diagonal to a large negative constant so that a
// following row softmax assigns them zero weight.
inline DenseArray causal_mask(const DenseArray& scores) {
    detail::require_rank(scores, 2, "causal_mask");
    if (scores.dim(0) != scores.dim(1)) {
        throw ShapeError("causal_mask: expected square scores, got " + shape_str(scores.shape()));
    }
    const std::size_t t = scores.dim(0);
    DenseArray out = DenseArray::zeros({t, t});
    for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t j = 0; j < t; ++j) {
            out.values()[i * t + j] = j > i ? kMaskValue : scores.values()[i * t + j];
        }
    }
    if (detail::tracking({&scores})) {
        detail::record("causal_mask", {scores}, out, [scores, out, t]() {
            const auto& g = out.grad();
            auto& gs = scores.grad();
            for (std::size_t i = 0; i < t; ++i) {
                for (std::size_t j = 0; j <= i; ++j) gs[i * t + j] += g[i * t + j];
            }
        });
    }
    return out;
}

inline DenseArray concat(const std::vector<DenseArray>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no parts");
    const std::size_t rank = parts[0].rank();
    if (rank == 0 || rank > 2 || axis >= rank) {
        throw ShapeError("concat: unsupported rank " + std::to_string(rank) + " / axis " +
                         std::to_string(axis));
    }
    for (const auto& p : parts) {
        if (p.rank() != rank) throw ShapeError("concat: mixed ranks");
        for (std::size_t d = 0; d < rank; ++d) {
            if (d != axis && p.shape()[d] != parts[0].shape()[d]) {
                throw ShapeError("concat: shape " + shape_str(p.shape()) +
                                 " incompatible with " + shape_str(parts[0].shape()));
            }
        }
    }

    Shape out_shape = parts[0].shape();
    out_shape[axis] = 0;
    for (const auto& p : parts) out_shape[axis] += p.shape()[axis];
    DenseArray out = DenseArray::zeros(out_shape);

    const std::size_t out_cols = rank == 2 ? out_shape[1] : 1;
    std::size_t offset = 0;  // running offset along `axis`
    for (const auto& p : parts) {
        if (rank == 1 || axis == 0) {
            std::copy(p.values().begin(), p.values().end(),
                      out.values().begin() + static_cast<std::ptrdiff_t>(offset * out_cols));
            offset += p.shape()[axis];
        } else {
            const std::size_t pc = p.shape()[1];
            for (std::size_t i = 0; i < p.shape()[0]; ++i) {
                std::copy(p.values().begin() + static_cast<std::ptrdiff_t>(i * pc),
                          p.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * pc),
                          out.values().begin() + static_cast<std::ptrdiff_t>(i * out_cols + offset));
            }
            offset += pc;
        }
    }

    bool track = false;
    if (Tape::active()) {
        for (const auto& p : parts) track = track || p.requires_grad();
    }
    if (track) {
        detail::record("concat", parts, out, [parts, out, axis, rank, out_cols]() {
            const auto& g = out.grad();
            std::size_t offset = 0;
            for (const auto& p : parts) {
                if (p.requires_grad()) {
                    auto& gp = p.grad();
                    if (rank == 1 || axis == 0) {
                        for (std::size_t i = 0; i < p.size(); ++i) {
                            gp[i] += g[offset * out_cols + i];
                        }
                    } else {
                        const std::size_t pc = p.shape()[1];
                        for (std::size_t i = 0; i < p.shape()[0]; ++i) {
                            for (std::size_t j = 0; j < pc; ++j) {
                                gp[i * pc + j] += g[i * out_cols + offset + j];
                            }
                        }
                    }
                }
                offset += (rank == 1 || axis == 0) ? p.shape()[axis]
                                                   : p.shape()[1];
            }
        });
    }
    return out;
}

inline DenseArray slice(const DenseArray& a, std::size_t i0, std::size_t i1) {
    detail::require_rank(a, 1, "slice");
    if (i0 > i1 || i1 > a.dim(0)) {
        throw ShapeError("slice: range [" + std::to_string(i0) + "," + std::to_string(i1) +
                         ") outside " + shape_str(a.shape()));
    }
    DenseArray out = DenseArray::zeros({i1 - i0});
    std::copy(a.values().begin() + static_cast<std::ptrdiff_t>(i0),
              a.values().begin() + static_cast<std::ptrdiff_t>(i1), out.values().begin());
    if (detail::tracking({&a})) {
        detail::record("slice", {a}, out, [a, out, i0]() {
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i0 + i] += g[i];
        });
    }
    return out;
}

inline DenseArray slice(const DenseArray& a, std::size_t r0, std::size_t r1, std::size_t c0,
                        std::size_t c1) {
    detail::require_rank(a, 2, "slice");
    if (r0 > r1 || r1 > a.dim(0) || c0 > c1 || c1 > a.dim(1)) {
        throw ShapeError("slice: block [" + std::to_string(r0) + "," + std::to_string(r1) +
                         ")x[" + std::to_string(c0) + "," + std::to_string(c1) + ") outside " +
                         shape_str(a.shape()));
    }
    const std::size_t rows = r1 - r0, cols = c1 - c0, ac = a.dim(1);
    DenseArray out = DenseArray::zeros({rows, cols});
    for (std::size_t i = 0; i < rows; ++i) {
        const double* src = a.values().data() + (r0 + i) * ac + c0;
        std::copy(src, src + cols, out.values().data() + i * cols);
    }
    if (detail::tracking({&a})) {
        detail::record("slice", {a}, out, [a, out, r0, c0, rows, cols, ac]() {
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (std::size_t i = 0; i < rows; ++i) {
                for (std::size_t j = 0; j < cols; ++j) {
                    ga[(r0 + i) * ac + c0 + j] += g[i * cols + j];
                }
            }
        });
    }
    return out;
}

inline DenseArray reshape(const DenseArray& a, Shape shape) {
    if (shape_numel(shape) != a.size()) {
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
    }
    DenseArray out = DenseArray::from_values(std::move(shape), a.values());
    if (detail::tracking({&a})) {
        detail::record("reshape", {a}, out, [a, out]() {
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
    }
    return out;
}

// out[r] = a[r, idx[r]]
inline DenseArray gather_per_row(const DenseArray& a, const TokenSeq& idx) {
    detail::require_rank(a, 2, "gather_per_row");
    const std::size_t r = a.dim(0), c = a.dim(1);
    if (idx.size() != r) {
        throw ShapeError("gather_per_row: " + std::to_string(idx.size()) + " indices for " +
                         std::to_string(r) + " rows");
    }
    for (int j : idx) {
        if (j < 0 || static_cast<std::size_t>(j) >= c) {
            throw VocabError("gather_per_row: index " + std::to_string(j) + " outside row of " +
                             std::to_string(c));
        }
    }
    DenseArray out = DenseArray::zeros({r});
    for (std::size_t i = 0; i < r; ++i) {
        out.values()[i] = a.values()[i * c + static_cast<std::size_t>(idx[i])];
    }
    if (detail::tracking({&a})) {
        TokenSeq idc = idx;
        detail::record("gather_per_row", {a}, out, [a, out, idc = std::move(idc), c]() {
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (std::size_t i = 0; i < idc.size(); ++i) {
                ga[i * c + static_cast<std::size_t>(idc[i])] += g[i];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions and scalar-ish elementwise ops
// ---------------------------------------------------------------------------

inline DenseArray sum_all(const DenseArray& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    DenseArray out = DenseArray::scalar(s);
    if (detail::tracking({&a})) {
        detail::record("sum", {a}, out, [a, out]() {
            const double g = out.grad()[0];
            auto& ga = a.grad();
            for (std::size_t i = 0; i < a.size(); ++i) ga[i] += g;
        });
    }
    return out;
}

inline DenseArray mean_all(const DenseArray& a) {
    if (a.size() == 0) throw ShapeError("mean: empty array");
    return scale(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

inline DenseArray exp_elem(const DenseArray& a) {
    DenseArray out = DenseArray::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = std::exp(a.values()[i]);
    if (detail::tracking({&a})) {
        detail::record("exp", {a}, out, [a, out]() {
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (std::size_t i = 0; i < a.size(); ++i) ga[i] += g[i] * out.values()[i];
        });
    }
    return out;
}

inline DenseArray log_elem(const DenseArray& a) {
    DenseArray out = DenseArray::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a.values()[i] <= 0.0) throw NumericsError("log: non-positive input");
        out.values()[i] = std::log(a.values()[i]);
    }
    if (detail::tracking({&a})) {
        detail::record("log", {a}, out, [a, out]() {
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (std::size_t i = 0; i < a.size(); ++i) ga[i] += g[i] / a.values()[i];
        });
    }
    return out;
}

// Clamp to [lo, hi]; gradient passes where the input lies inside the interval
// (inclusive), and is zero where the clamp is active.
inline DenseArray clip_elem(const DenseArray& a, double lo, double hi) {
    if (!(lo <= hi)) throw ShapeError("clip: empty interval");
    DenseArray out = DenseArray::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out.values()[i] = std::min(std::max(a.values()[i], lo), hi);
    }
    if (detail::tracking({&a})) {
        detail::record("clip", {a}, out, [a, out, lo, hi]() {
            const auto& g = out.grad();
            auto& ga = a.grad();
            for (std::size_t i = 0; i < a.size(); ++i) {
                const double x = a.values()[i];
                if (x >= lo && x <= hi) ga[i] += g[i];
            }
        });
    }
    return out;
}

// Elementwise min; ties route the gradient to the first argument.
inline DenseArray minimum(const DenseArray& a, const DenseArray& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("minimum: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    DenseArray out = DenseArray::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out.values()[i] = std::min(a.values()[i], b.values()[i]);
    }
    if (detail::tracking({&a, &b})) {
        detail::record("minimum", {a, b}, out, [a, b, out]() {
            const auto& g = out.grad();
            for (std::size_t i = 0; i < a.size(); ++i) {
                if (a.values()[i] <= b.values()[i]) {
                    if (a.requires_grad()) a.grad()[i] += g[i];
                } else if (b.requires_grad()) {
                    b.grad()[i] += g[i];
                }
            }
        });
    }
    return out;
}

}  // namespace bambino
