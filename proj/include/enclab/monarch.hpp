#pragma once

// Monarch structured matrices: dense(M) = Pᵀ · BD(left) · P · BD(right),
// where BD assembles b blocks of b×b along the diagonal and P is the
// (b,b) perfect shuffle sending index a·b+c to c·b+a.  For the square
// case the shuffle is an involution, so P = Pᵀ.
//
// An apply costs exactly 2·b³ multiplications (two block stages, the
// shuffles are free); an instrumented counter lets tests assert this.

#include <cstdint>
#include <vector>

#include "enclab/autodiff.hpp"
#include "enclab/errors.hpp"
#include "enclab/rng.hpp"

namespace enclab {

// Multiplications performed inside monarch block stages since last reset.
inline thread_local std::uint64_t monarch_mult_count = 0;

struct MonarchMatrix {
    int b = 0;             // block count == block size; n = b²
    DiffArray left;        // [b, b, b]: b blocks, row-major b×b each
    DiffArray right;       // [b, b, b]

    int dim() const { return b * b; }
};

inline MonarchMatrix monarch_init(Graph& g, int b, double init_scale, Rng& rng) {
    if (b <= 0 || (b & (b - 1)) != 0)
        throw ConfigError("monarch_init: block count must be a power of two, got " +
                          std::to_string(b));
    if (init_scale < 0.0) throw ConfigError("monarch_init: scale must be nonnegative");
    MonarchMatrix m;
    m.b = b;
    m.left = g.leaf({b, b, b}, true);
    m.right = g.leaf({b, b, b}, true);
    for (auto& v : m.left.values()) v = rng.uniform(-init_scale, init_scale);
    for (auto& v : m.right.values()) v = rng.uniform(-init_scale, init_scale);
    return m;
}

// Default scale 1/√n keeps the dense operator's entries in the usual
// dense-init range.
inline double monarch_default_scale(int b) { return 1.0 / (b * 1.0); }

namespace detail {

// (P·v)[i] = v[p(i)] with p(a·b+c) = c·b+a.
inline void perfect_shuffle(const double* in, double* out, int b) {
    for (int a = 0; a < b; ++a)
        for (int c = 0; c < b; ++c) out[a * b + c] = in[c * b + a];
}

// One Monarch pass over a single vector of length n = b².
// scratch must hold 3·n doubles.  Writes the post-right-stage shuffled
// intermediate (P·BD(right)·x) into `mid` when non-null (backward needs it).
inline void monarch_vec_forward(const double* left, const double* right, const double* x,
                                double* y, int b, double* scratch, double* mid) {
    const int n = b * b;
    double* s1 = scratch;          // BD(right)·x
    double* s2 = scratch + n;      // P·s1
    double* s3 = scratch + 2 * n;  // BD(left)·s2
    for (int blk = 0; blk < b; ++blk) {
        const double* R = right + blk * b * b;
        const double* xb = x + blk * b;
        double* ob = s1 + blk * b;
        for (int r = 0; r < b; ++r) {
            double acc = 0.0;
            for (int c = 0; c < b; ++c) acc += R[r * b + c] * xb[c];
            ob[r] = acc;
        }
    }
    perfect_shuffle(s1, s2, b);
    for (int blk = 0; blk < b; ++blk) {
        const double* L = left + blk * b * b;
        const double* xb = s2 + blk * b;
        double* ob = s3 + blk * b;
        for (int r = 0; r < b; ++r) {
            double acc = 0.0;
            for (int c = 0; c < b; ++c) acc += L[r * b + c] * xb[c];
            ob[r] = acc;
        }
    }
    perfect_shuffle(s3, y, b);
    monarch_mult_count += 2ull * b * b * b;
    if (mid) std::copy(s2, s2 + n, mid);
}

}  // namespace detail

// dense(M)·x for a vector x of length n = b², without materializing dense(M).
inline DiffArray monarch_apply(const MonarchMatrix& m, DiffArray x) {
    const int n = m.dim();
    if (x.shape().size() != 1 || x.shape()[0] != n)
        throw DimensionError("monarch_apply: expected vector of length " + std::to_string(n) +
                             ", got " + shape_str(x.shape()));
    Graph& g = *x.graph();
    DiffArray out = g.make(x.shape());
    std::vector<double> scratch(3 * static_cast<std::size_t>(n));
    std::vector<double> mid(n);
    detail::monarch_vec_forward(m.left.values().data(), m.right.values().data(),
                                x.values().data(), out.values().data(), m.b, scratch.data(),
                                mid.data());
    if (g.recording()) {
        auto gl = m.left.id(), gr = m.right.id(), gx = x.id(), go = out.id();
        const int b = m.b;
        g.node(go).back = [&g, gl, gr, gx, go, b, mid = std::move(mid)] {
            const int n = b * b;
            const auto& og = g.node(go).grad;
            const auto& lv = g.node(gl).val;
            const auto& rv = g.node(gr).val;
            const auto& xv = g.node(gx).val;
            auto& lgr = g.node(gl).grad;
            auto& rgr = g.node(gr).grad;
            auto& xgr = g.node(gx).grad;
            std::vector<double> g3(n), g2(n), g1(n);
            detail::perfect_shuffle(og.data(), g3.data(), b);
            for (int blk = 0; blk < b; ++blk) {
                const double* L = lv.data() + blk * b * b;
                double* dL = lgr.data() + blk * b * b;
                const double* s2b = mid.data() + blk * b;
                const double* g3b = g3.data() + blk * b;
                double* g2b = g2.data() + blk * b;
                for (int c = 0; c < b; ++c) g2b[c] = 0.0;
                for (int r = 0; r < b; ++r) {
                    for (int c = 0; c < b; ++c) {
                        dL[r * b + c] += g3b[r] * s2b[c];
                        g2b[c] += L[r * b + c] * g3b[r];
                    }
                }
            }
            detail::perfect_shuffle(g2.data(), g1.data(), b);
            for (int blk = 0; blk < b; ++blk) {
                const double* R = rv.data() + blk * b * b;
                double* dR = rgr.data() + blk * b * b;
                const double* xb = xv.data() + blk * b;
                const double* g1b = g1.data() + blk * b;
                double* gxb = xgr.data() + blk * b;
                for (int r = 0; r < b; ++r) {
                    for (int c = 0; c < b; ++c) {
                        dR[r * b + c] += g1b[r] * xb[c];
                        gxb[c] += R[r * b + c] * g1b[r];
                    }
                }
            }
        };
    }
    return out;
}

// Row-wise application to X [rows × n]: each row is treated as a vector
// and replaced by dense(M)·row.
inline DiffArray monarch_apply_rows(const MonarchMatrix& m, DiffArray x) {
    const int n = m.dim();
    if (x.shape().size() != 2 || x.shape()[1] != n)
        throw DimensionError("monarch_apply_rows: expected [rows x " + std::to_string(n) +
                             "], got " + shape_str(x.shape()));
    const int rows = x.shape()[0];
    Graph& g = *x.graph();
    DiffArray out = g.make(x.shape());
    std::vector<double> scratch(3 * static_cast<std::size_t>(n));
    std::vector<double> mid(static_cast<std::size_t>(rows) * n);
    {
        const double* lv = m.left.values().data();
        const double* rv = m.right.values().data();
        const double* xv = x.values().data();
        double* ov = out.values().data();
        for (int i = 0; i < rows; ++i)
            detail::monarch_vec_forward(lv, rv, xv + static_cast<std::size_t>(i) * n,
                                        ov + static_cast<std::size_t>(i) * n, m.b,
                                        scratch.data(), mid.data() + static_cast<std::size_t>(i) * n);
    }
    if (g.recording()) {
        auto gl = m.left.id(), gr = m.right.id(), gx = x.id(), go = out.id();
        const int b = m.b;
        g.node(go).back = [&g, gl, gr, gx, go, b, rows, mid = std::move(mid)] {
            const int n = b * b;
            const auto& og = g.node(go).grad;
            const auto& lv = g.node(gl).val;
            const auto& rv = g.node(gr).val;
            const auto& xv = g.node(gx).val;
            auto& lgr = g.node(gl).grad;
            auto& rgr = g.node(gr).grad;
            auto& xgr = g.node(gx).grad;
            std::vector<double> g3(n), g2(n), g1(n);
            for (int i = 0; i < rows; ++i) {
                const double* grow = og.data() + static_cast<std::size_t>(i) * n;
                const double* xrow = xv.data() + static_cast<std::size_t>(i) * n;
                const double* mrow = mid.data() + static_cast<std::size_t>(i) * n;
                double* gxrow = xgr.data() + static_cast<std::size_t>(i) * n;
                detail::perfect_shuffle(grow, g3.data(), b);
                for (int blk = 0; blk < b; ++blk) {
                    const double* L = lv.data() + blk * b * b;
                    double* dL = lgr.data() + blk * b * b;
                    const double* s2b = mrow + blk * b;
                    const double* g3b = g3.data() + blk * b;
                    double* g2b = g2.data() + blk * b;
                    for (int c = 0; c < b; ++c) g2b[c] = 0.0;
                    for (int r = 0; r < b; ++r)
                        for (int c = 0; c < b; ++c) {
                            dL[r * b + c] += g3b[r] * s2b[c];
                            g2b[c] += L[r * b + c] * g3b[r];
                        }
                }
                detail::perfect_shuffle(g2.data(), g1.data(), b);
                for (int blk = 0; blk < b; ++blk) {
                    const double* R = rv.data() + blk * b * b;
                    double* dR = rgr.data() + blk * b * b;
                    const double* xb = xrow + blk * b;
                    const double* g1b = g1.data() + blk * b;
                    double* gxb = gxrow + blk * b;
                    for (int r = 0; r < b; ++r)
                        for (int c = 0; c < b; ++c) {
                            dR[r * b + c] += g1b[r] * xb[c];
                            gxb[c] += R[r * b + c] * g1b[r];
                        }
                }
            }
        };
    }
    return out;
}

// Explicit Pᵀ·BD(left)·P·BD(right) materialization; the test oracle for
// monarch_apply.  Assembled from scratch with plain matrix products so it
// shares no code with the fast path.  Returned as a non-trainable constant.
inline DiffArray monarch_dense(Graph& g, const MonarchMatrix& m) {
    const int b = m.b, n = m.dim();
    auto block_diag = [&](const std::vector<double>& blocks) {
        std::vector<double> full(static_cast<std::size_t>(n) * n, 0.0);
        for (int blk = 0; blk < b; ++blk)
            for (int r = 0; r < b; ++r)
                for (int c = 0; c < b; ++c)
                    full[static_cast<std::size_t>(blk * b + r) * n + (blk * b + c)] =
                        blocks[static_cast<std::size_t>(blk) * b * b + r * b + c];
        return full;
    };
    // P[i][j] = 1 iff i = p(j), p(a·b+c) = c·b+a.
    std::vector<double> P(static_cast<std::size_t>(n) * n, 0.0);
    for (int a = 0; a < b; ++a)
        for (int c = 0; c < b; ++c)
            P[static_cast<std::size_t>(c * b + a) * n + (a * b + c)] = 1.0;
    auto matprod = [&](const std::vector<double>& A, const std::vector<double>& B) {
        std::vector<double> C(static_cast<std::size_t>(n) * n, 0.0);
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < n; ++k) {
                const double a = A[static_cast<std::size_t>(i) * n + k];
                if (a == 0.0) continue;
                for (int j = 0; j < n; ++j)
                    C[static_cast<std::size_t>(i) * n + j] +=
                        a * B[static_cast<std::size_t>(k) * n + j];
            }
        return C;
    };
    auto transpose = [&](const std::vector<double>& A) {
        std::vector<double> T(static_cast<std::size_t>(n) * n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                T[static_cast<std::size_t>(j) * n + i] = A[static_cast<std::size_t>(i) * n + j];
        return T;
    };
    auto dense = matprod(transpose(P),
                         matprod(block_diag(m.left.values()),
                                 matprod(P, block_diag(m.right.values()))));
    return g.constant({n, n}, std::move(dense));
}

}  // namespace enclab
