#pragma once

// Tape-based reverse-mode differentiation over shaped double arrays.
//
// A Graph owns every node.  Leaves (parameters, constants) are created
// first and survive reset(); every operation appends an activation node
// whose backward closure scatters into its operands' grad buffers.
// backward() walks the tape in reverse creation order, which is a valid
// topological order because operands always precede their results.
//
// Contracts kept here:
//   - grad always has the shape of values,
//   - backward twice without zero_grad accumulates leaf grads additively,
//   - forward results are finite for finite inputs (the few ops that
//     could overflow are written in their stable forms).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "enclab/errors.hpp"
#include "enclab/fft.hpp"

namespace enclab {

using Shape = std::vector<int>;

inline std::size_t shape_size(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) {
        if (d <= 0) throw DimensionError("shape dims must be positive");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

class Graph;

// Lightweight handle; storage lives in the Graph.
class DiffArray {
public:
    DiffArray() = default;
    DiffArray(Graph* g, std::uint32_t id) : g_(g), id_(id) {}

    bool valid() const { return g_ != nullptr; }
    Graph* graph() const { return g_; }
    std::uint32_t id() const { return id_; }

    const Shape& shape() const;
    std::size_t size() const;
    const std::vector<double>& values() const;
    std::vector<double>& values();
    const std::vector<double>& grad() const;
    std::vector<double>& grad();
    bool trainable() const;

    double value() const;  // scalar convenience

private:
    Graph* g_ = nullptr;
    std::uint32_t id_ = 0;
};

class Graph {
public:
    Graph() = default;
    // Backward closures capture the graph's address.
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    struct Node {
        Shape shape;
        std::vector<double> val;
        std::vector<double> grad;
        std::function<void()> back;
        bool leaf = false;
        bool trainable = false;
    };

    DiffArray leaf(Shape shape, bool trainable = true) {
        std::size_t n = shape_size(shape);
        Node node;
        node.shape = std::move(shape);
        node.val.assign(n, 0.0);
        node.grad.assign(n, 0.0);
        node.leaf = true;
        node.trainable = trainable;
        nodes_.push_back(std::move(node));
        return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    DiffArray constant(Shape shape, std::vector<double> vals) {
        if (shape_size(shape) != vals.size())
            throw DimensionError("constant: shape/value size mismatch");
        DiffArray a = leaf(std::move(shape), false);
        node(a.id()).val = std::move(vals);
        return a;
    }

    DiffArray scalar_const(double v) { return constant({1}, {v}); }

    // Activation node created by an op.
    DiffArray make(Shape shape) {
        std::size_t n = shape_size(shape);
        Node node;
        node.shape = std::move(shape);
        node.val.assign(n, 0.0);
        if (recording_) node.grad.assign(n, 0.0);
        nodes_.push_back(std::move(node));
        return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    Node& node(std::uint32_t id) { return nodes_[id]; }
    const Node& node(std::uint32_t id) const { return nodes_[id]; }
    std::size_t node_count() const { return nodes_.size(); }

    bool recording() const { return recording_; }
    void set_recording(bool on) { recording_ = on; }

    // Everything created up to now survives reset().
    void freeze_leaves() { watermark_ = nodes_.size(); }

    void reset() { nodes_.resize(std::min(watermark_, nodes_.size())); }

    void zero_grad() {
        for (auto& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
    }

    void backward(DiffArray loss) {
        if (!recording_) throw ValueError("backward: graph is not recording");
        if (loss.size() != 1) throw DimensionError("backward: loss must be scalar");
        // Internal grads are per-pass scratch; leaf grads accumulate.
        for (std::size_t i = 0; i <= loss.id(); ++i) {
            if (!nodes_[i].leaf)
                std::fill(nodes_[i].grad.begin(), nodes_[i].grad.end(), 0.0);
        }
        nodes_[loss.id()].grad[0] += 1.0;
        for (std::uint32_t i = loss.id() + 1; i-- > 0;) {
            if (nodes_[i].back) nodes_[i].back();
        }
    }

private:
    std::deque<Node> nodes_;
    std::size_t watermark_ = 0;
    bool recording_ = true;
};

inline const Shape& DiffArray::shape() const { return g_->node(id_).shape; }
inline std::size_t DiffArray::size() const { return g_->node(id_).val.size(); }
inline const std::vector<double>& DiffArray::values() const { return g_->node(id_).val; }
inline std::vector<double>& DiffArray::values() { return g_->node(id_).val; }
inline const std::vector<double>& DiffArray::grad() const { return g_->node(id_).grad; }
inline std::vector<double>& DiffArray::grad() { return g_->node(id_).grad; }
inline bool DiffArray::trainable() const { return g_->node(id_).trainable; }
inline double DiffArray::value() const {
    if (size() != 1) throw DimensionError("value(): array is not scalar");
    return values()[0];
}

namespace detail {

inline void require_same_shape(const DiffArray& a, const DiffArray& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

inline DiffArray add(DiffArray a, DiffArray b) {
    detail::require_same_shape(a, b, "add");
    Graph& g = *a.graph();
    DiffArray out = g.make(a.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    if (g.recording()) {
        auto ga = a.id(), gb = b.id(), go = out.id();
        g.node(go).back = [&g, ga, gb, go] {
            const auto& og = g.node(go).grad;
            auto& agr = g.node(ga).grad;
            auto& bgr = g.node(gb).grad;
            for (std::size_t i = 0; i < og.size(); ++i) {
                agr[i] += og[i];
                bgr[i] += og[i];
            }
        };
    }
    return out;
}

inline DiffArray mul(DiffArray a, DiffArray b) {
    detail::require_same_shape(a, b, "mul");
    Graph& g = *a.graph();
    DiffArray out = g.make(a.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    if (g.recording()) {
        auto ga = a.id(), gb = b.id(), go = out.id();
        g.node(go).back = [&g, ga, gb, go] {
            const auto& og = g.node(go).grad;
            const auto& av = g.node(ga).val;
            const auto& bv = g.node(gb).val;
            auto& agr = g.node(ga).grad;
            auto& bgr = g.node(gb).grad;
            for (std::size_t i = 0; i < og.size(); ++i) {
                agr[i] += og[i] * bv[i];
                bgr[i] += og[i] * av[i];
            }
        };
    }
    return out;
}

inline DiffArray scale(DiffArray a, double c) {
    Graph& g = *a.graph();
    DiffArray out = g.make(a.shape());
    const auto& av = a.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * c;
    if (g.recording()) {
        auto ga = a.id(), go = out.id();
        g.node(go).back = [&g, ga, go, c] {
            const auto& og = g.node(go).grad;
            auto& agr = g.node(ga).grad;
            for (std::size_t i = 0; i < og.size(); ++i) agr[i] += og[i] * c;
        };
    }
    return out;
}

inline DiffArray add_const(DiffArray a, double c) {
    Graph& g = *a.graph();
    DiffArray out = g.make(a.shape());
    const auto& av = a.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + c;
    if (g.recording()) {
        auto ga = a.id(), go = out.id();
        g.node(go).back = [&g, ga, go] {
            const auto& og = g.node(go).grad;
            auto& agr = g.node(ga).grad;
            for (std::size_t i = 0; i < og.size(); ++i) agr[i] += og[i];
        };
    }
    return out;
}

// out[i,:] = m[i,:] + v  (bias broadcast over rows)
inline DiffArray add_rowvec(DiffArray m, DiffArray v) {
    if (m.shape().size() != 2 || v.shape().size() != 1 || m.shape()[1] != v.shape()[0])
        throw DimensionError("add_rowvec: need [LxD] and [D]");
    Graph& g = *m.graph();
    const int L = m.shape()[0], d = m.shape()[1];
    DiffArray out = g.make(m.shape());
    {
        const auto& mv = m.values();
        const auto& vv = v.values();
        auto& ov = out.values();
        for (int i = 0; i < L; ++i)
            for (int c = 0; c < d; ++c) ov[static_cast<std::size_t>(i) * d + c] =
                mv[static_cast<std::size_t>(i) * d + c] + vv[c];
    }
    if (g.recording()) {
        auto gm = m.id(), gv = v.id(), go = out.id();
        g.node(go).back = [&g, gm, gv, go, L, d] {
            const auto& og = g.node(go).grad;
            auto& mgr = g.node(gm).grad;
            auto& vgr = g.node(gv).grad;
            for (int i = 0; i < L; ++i)
                for (int c = 0; c < d; ++c) {
                    const double gval = og[static_cast<std::size_t>(i) * d + c];
                    mgr[static_cast<std::size_t>(i) * d + c] += gval;
                    vgr[c] += gval;
                }
        };
    }
    return out;
}

inline DiffArray sigmoid(DiffArray a) {
    Graph& g = *a.graph();
    DiffArray out = g.make(a.shape());
    const auto& av = a.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) {
        double x = av[i];
        ov[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                         : std::exp(x) / (1.0 + std::exp(x));
    }
    if (g.recording()) {
        auto ga = a.id(), go = out.id();
        g.node(go).back = [&g, ga, go] {
            const auto& og = g.node(go).grad;
            const auto& ov = g.node(go).val;
            auto& agr = g.node(ga).grad;
            for (std::size_t i = 0; i < og.size(); ++i)
                agr[i] += og[i] * ov[i] * (1.0 - ov[i]);
        };
    }
    return out;
}

inline DiffArray gelu(DiffArray a) {
    Graph& g = *a.graph();
    DiffArray out = g.make(a.shape());
    const auto& av = a.values();
    auto& ov = out.values();
    constexpr double inv_sqrt2 = 0.7071067811865475;
    for (std::size_t i = 0; i < ov.size(); ++i) {
        double x = av[i];
        ov[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    }
    if (g.recording()) {
        auto ga = a.id(), go = out.id();
        g.node(go).back = [&g, ga, go] {
            const auto& og = g.node(go).grad;
            const auto& av = g.node(ga).val;
            auto& agr = g.node(ga).grad;
            constexpr double inv_sqrt2pi = 0.3989422804014327;
            for (std::size_t i = 0; i < og.size(); ++i) {
                double x = av[i];
                double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475));
                double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                agr[i] += og[i] * (cdf + x * pdf);
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

inline DiffArray matmul(DiffArray a, DiffArray b) {
    if (a.shape().size() != 2 || b.shape().size() != 2)
        throw DimensionError("matmul: operands must be rank-2");
    const int m = a.shape()[0], k = a.shape()[1];
    const int k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2)
        throw DimensionError("matmul: inner dimensions disagree " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    Graph& g = *a.graph();
    DiffArray out = g.make({m, n});
    {
        const double* A = a.values().data();
        const double* B = b.values().data();
        double* C = out.values().data();
        for (int i = 0; i < m; ++i) {
            for (int p = 0; p < k; ++p) {
                const double aip = A[i * k + p];
                if (aip == 0.0) continue;
                const double* Brow = B + p * n;
                double* Crow = C + i * n;
                for (int j = 0; j < n; ++j) Crow[j] += aip * Brow[j];
            }
        }
    }
    if (g.recording()) {
        auto ga = a.id(), gb = b.id(), go = out.id();
        g.node(go).back = [&g, ga, gb, go, m, k, n] {
            const double* G = g.node(go).grad.data();
            const double* A = g.node(ga).val.data();
            const double* B = g.node(gb).val.data();
            double* dA = g.node(ga).grad.data();
            double* dB = g.node(gb).grad.data();
            // dA = G · Bᵀ
            for (int i = 0; i < m; ++i)
                for (int p = 0; p < k; ++p) {
                    double acc = 0.0;
                    const double* Grow = G + i * n;
                    const double* Brow = B + p * n;
                    for (int j = 0; j < n; ++j) acc += Grow[j] * Brow[j];
                    dA[i * k + p] += acc;
                }
            // dB = Aᵀ · G
            for (int p = 0; p < k; ++p)
                for (int i = 0; i < m; ++i) {
                    const double aip = A[i * k + p];
                    if (aip == 0.0) continue;
                    const double* Grow = G + i * n;
                    double* dBrow = dB + p * n;
                    for (int j = 0; j < n; ++j) dBrow[j] += aip * Grow[j];
                }
        };
    }
    return out;
}

// Gather rows of a [V×d] table; backward scatter-adds.
inline DiffArray lookup_rows(DiffArray table, const std::vector<int>& ids) {
    if (table.shape().size() != 2) throw DimensionError("lookup_rows: table must be rank-2");
    const int V = table.shape()[0], d = table.shape()[1];
    for (int id : ids)
        if (id < 0 || id >= V)
            throw DimensionError("lookup_rows: row index " + std::to_string(id) +
                                 " out of range [0," + std::to_string(V) + ")");
    Graph& g = *table.graph();
    const int L = static_cast<int>(ids.size());
    DiffArray out = g.make({L, d});
    {
        const auto& tv = table.values();
        auto& ov = out.values();
        for (int i = 0; i < L; ++i)
            std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d,
                        ov.data() + static_cast<std::size_t>(i) * d);
    }
    if (g.recording()) {
        auto gt = table.id(), go = out.id();
        g.node(go).back = [&g, gt, go, ids, d] {
            const auto& og = g.node(go).grad;
            auto& tgr = g.node(gt).grad;
            for (std::size_t i = 0; i < ids.size(); ++i) {
                const double* src = og.data() + i * d;
                double* dst = tgr.data() + static_cast<std::size_t>(ids[i]) * d;
                for (int c = 0; c < d; ++c) dst[c] += src[c];
            }
        };
    }
    return out;
}

// Multiply each row by a fixed (non-differentiated) coefficient.
inline DiffArray row_mask(DiffArray x, const std::vector<double>& mask) {
    if (x.shape().size() != 2 || static_cast<int>(mask.size()) != x.shape()[0])
        throw DimensionError("row_mask: mask length must equal row count");
    Graph& g = *x.graph();
    const int L = x.shape()[0], d = x.shape()[1];
    DiffArray out = g.make(x.shape());
    {
        const auto& xv = x.values();
        auto& ov = out.values();
        for (int i = 0; i < L; ++i)
            for (int c = 0; c < d; ++c) ov[i * d + c] = xv[i * d + c] * mask[i];
    }
    if (g.recording()) {
        auto gx = x.id(), go = out.id();
        g.node(go).back = [&g, gx, go, mask, d] {
            const auto& og = g.node(go).grad;
            auto& xgr = g.node(gx).grad;
            for (std::size_t i = 0; i < mask.size(); ++i)
                for (int c = 0; c < d; ++c) xgr[i * d + c] += og[i * d + c] * mask[i];
        };
    }
    return out;
}

// Mean of the rows with mask[i] != 0.
inline DiffArray mean_rows(DiffArray x, const std::vector<double>& mask) {
    if (x.shape().size() != 2 || static_cast<int>(mask.size()) != x.shape()[0])
        throw DimensionError("mean_rows: mask length must equal row count");
    const int L = x.shape()[0], d = x.shape()[1];
    double count = 0.0;
    for (double m : mask) count += (m != 0.0) ? 1.0 : 0.0;
    if (count == 0.0) throw ValueError("mean_rows: no rows selected");
    Graph& g = *x.graph();
    DiffArray out = g.make({d});
    {
        const auto& xv = x.values();
        auto& ov = out.values();
        for (int i = 0; i < L; ++i) {
            if (mask[i] == 0.0) continue;
            for (int c = 0; c < d; ++c) ov[c] += xv[i * d + c];
        }
        for (int c = 0; c < d; ++c) ov[c] /= count;
    }
    if (g.recording()) {
        auto gx = x.id(), go = out.id();
        g.node(go).back = [&g, gx, go, mask, d, count] {
            const auto& og = g.node(go).grad;
            auto& xgr = g.node(gx).grad;
            const double inv = 1.0 / count;
            for (std::size_t i = 0; i < mask.size(); ++i) {
                if (mask[i] == 0.0) continue;
                for (int c = 0; c < d; ++c) xgr[i * d + c] += og[c] * inv;
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

inline DiffArray layer_norm(DiffArray x, DiffArray gamma, DiffArray beta, double eps = 1e-5) {
    if (x.shape().size() != 2) throw DimensionError("layer_norm: x must be rank-2");
    const int L = x.shape()[0], d = x.shape()[1];
    if (gamma.shape() != Shape{d} || beta.shape() != Shape{d})
        throw DimensionError("layer_norm: gamma/beta must have shape [d]");
    if (eps <= 0.0) throw ValueError("layer_norm: eps must be positive");
    Graph& g = *x.graph();
    DiffArray out = g.make(x.shape());
    std::vector<double> inv_std(L), xhat;
    const bool rec = g.recording();
    if (rec) xhat.resize(static_cast<std::size_t>(L) * d);
    {
        const auto& xv = x.values();
        const auto& gv = gamma.values();
        const auto& bv = beta.values();
        auto& ov = out.values();
        for (int i = 0; i < L; ++i) {
            const double* row = xv.data() + static_cast<std::size_t>(i) * d;
            double mean = 0.0;
            for (int c = 0; c < d; ++c) mean += row[c];
            mean /= d;
            double var = 0.0;
            for (int c = 0; c < d; ++c) {
                double t = row[c] - mean;
                var += t * t;
            }
            var /= d;
            const double istd = 1.0 / std::sqrt(var + eps);
            inv_std[i] = istd;
            for (int c = 0; c < d; ++c) {
                double xh = (row[c] - mean) * istd;
                if (rec) xhat[static_cast<std::size_t>(i) * d + c] = xh;
                ov[static_cast<std::size_t>(i) * d + c] = gv[c] * xh + bv[c];
            }
        }
    }
    if (rec) {
        auto gx = x.id(), gg = gamma.id(), gb = beta.id(), go = out.id();
        g.node(go).back = [&g, gx, gg, gb, go, L, d, inv_std = std::move(inv_std),
                           xhat = std::move(xhat)] {
            const auto& og = g.node(go).grad;
            const auto& gv = g.node(gg).val;
            auto& xgr = g.node(gx).grad;
            auto& ggr = g.node(gg).grad;
            auto& bgr = g.node(gb).grad;
            for (int i = 0; i < L; ++i) {
                const double* grow = og.data() + static_cast<std::size_t>(i) * d;
                const double* xh = xhat.data() + static_cast<std::size_t>(i) * d;
                double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                for (int c = 0; c < d; ++c) {
                    double dxh = grow[c] * gv[c];
                    sum_dxh += dxh;
                    sum_dxh_xh += dxh * xh[c];
                    ggr[c] += grow[c] * xh[c];
                    bgr[c] += grow[c];
                }
                const double istd = inv_std[i];
                for (int c = 0; c < d; ++c) {
                    double dxh = grow[c] * gv[c];
                    xgr[static_cast<std::size_t>(i) * d + c] +=
                        istd * (dxh - sum_dxh / d - xh[c] * sum_dxh_xh / d);
                }
            }
        };
    }
    return out;
}

inline DiffArray l2_normalize(DiffArray x) {
    if (x.shape().size() != 1) throw DimensionError("l2_normalize: x must be rank-1");
    Graph& g = *x.graph();
    const std::size_t d = x.size();
    double norm_sq = 0.0;
    for (double v : x.values()) norm_sq += v * v;
    const double norm = std::sqrt(norm_sq);
    if (norm < 1e-300) throw ValueError("l2_normalize: zero-norm vector");
    DiffArray out = g.make(x.shape());
    {
        const auto& xv = x.values();
        auto& ov = out.values();
        for (std::size_t i = 0; i < d; ++i) ov[i] = xv[i] / norm;
    }
    if (g.recording()) {
        auto gx = x.id(), go = out.id();
        g.node(go).back = [&g, gx, go, norm, d] {
            const auto& og = g.node(go).grad;
            const auto& ov = g.node(go).val;
            auto& xgr = g.node(gx).grad;
            double dot = 0.0;
            for (std::size_t i = 0; i < d; ++i) dot += og[i] * ov[i];
            for (std::size_t i = 0; i < d; ++i)
                xgr[i] += (og[i] - ov[i] * dot) / norm;
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions / similarity
// ---------------------------------------------------------------------------

inline DiffArray dot(DiffArray a, DiffArray b) {
    detail::require_same_shape(a, b, "dot");
    Graph& g = *a.graph();
    DiffArray out = g.make({1});
    {
        const auto& av = a.values();
        const auto& bv = b.values();
        double acc = 0.0;
        for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
        out.values()[0] = acc;
    }
    if (g.recording()) {
        auto ga = a.id(), gb = b.id(), go = out.id();
        g.node(go).back = [&g, ga, gb, go] {
            const double gr = g.node(go).grad[0];
            const auto& av = g.node(ga).val;
            const auto& bv = g.node(gb).val;
            auto& agr = g.node(ga).grad;
            auto& bgr = g.node(gb).grad;
            for (std::size_t i = 0; i < av.size(); ++i) {
                agr[i] += gr * bv[i];
                bgr[i] += gr * av[i];
            }
        };
    }
    return out;
}

// a·b / (‖a‖‖b‖).  Zero-norm inputs are rejected by l2_normalize.
inline DiffArray cosine_sim(DiffArray a, DiffArray b) {
    return dot(l2_normalize(a), l2_normalize(b));
}

inline DiffArray stack_scalars(const std::vector<DiffArray>& xs) {
    if (xs.empty()) throw DimensionError("stack_scalars: empty input");
    Graph& g = *xs.front().graph();
    const int n = static_cast<int>(xs.size());
    DiffArray out = g.make({n});
    std::vector<std::uint32_t> ids(xs.size());
    for (int i = 0; i < n; ++i) {
        if (xs[i].size() != 1) throw DimensionError("stack_scalars: inputs must be scalar");
        out.values()[i] = xs[i].value();
        ids[i] = xs[i].id();
    }
    if (g.recording()) {
        auto go = out.id();
        g.node(go).back = [&g, go, ids = std::move(ids)] {
            const auto& og = g.node(go).grad;
            for (std::size_t i = 0; i < ids.size(); ++i) g.node(ids[i]).grad[0] += og[i];
        };
    }
    return out;
}

// −log softmax(scores)[target], computed via logsumexp.
inline DiffArray softmax_cross_entropy(DiffArray scores, int target) {
    if (scores.shape().size() != 1)
        throw DimensionError("softmax_cross_entropy: scores must be rank-1");
    const int n = scores.shape()[0];
    if (target < 0 || target >= n)
        throw DimensionError("softmax_cross_entropy: target " + std::to_string(target) +
                             " out of range [0," + std::to_string(n) + ")");
    Graph& g = *scores.graph();
    DiffArray out = g.make({1});
    {
        const auto& sv = scores.values();
        double mx = *std::max_element(sv.begin(), sv.end());
        double lse = 0.0;
        for (double v : sv) lse += std::exp(v - mx);
        lse = std::log(lse) + mx;
        out.values()[0] = lse - sv[target];
    }
    if (g.recording()) {
        auto gs = scores.id(), go = out.id();
        g.node(go).back = [&g, gs, go, n, target] {
            const double gr = g.node(go).grad[0];
            const auto& sv = g.node(gs).val;
            auto& sgr = g.node(gs).grad;
            double mx = *std::max_element(sv.begin(), sv.end());
            double z = 0.0;
            for (double v : sv) z += std::exp(v - mx);
            for (int i = 0; i < n; ++i) {
                double p = std::exp(sv[i] - mx) / z;
                sgr[i] += gr * (p - (i == target ? 1.0 : 0.0));
            }
        };
    }
    return out;
}

// Mean cross-entropy over the rows whose label != ignore_label.
inline DiffArray cross_entropy_rows(DiffArray logits, const std::vector<int>& labels,
                                    int ignore_label) {
    if (logits.shape().size() != 2)
        throw DimensionError("cross_entropy_rows: logits must be rank-2");
    const int L = logits.shape()[0], V = logits.shape()[1];
    if (static_cast<int>(labels.size()) != L)
        throw DimensionError("cross_entropy_rows: label count must equal row count");
    int selected = 0;
    for (int lab : labels) {
        if (lab == ignore_label) continue;
        if (lab < 0 || lab >= V)
            throw DimensionError("cross_entropy_rows: label out of range");
        ++selected;
    }
    if (selected == 0) throw ValueError("cross_entropy_rows: no labeled rows");
    Graph& g = *logits.graph();
    DiffArray out = g.make({1});
    {
        const auto& lv = logits.values();
        double total = 0.0;
        for (int i = 0; i < L; ++i) {
            if (labels[i] == ignore_label) continue;
            const double* row = lv.data() + static_cast<std::size_t>(i) * V;
            double mx = *std::max_element(row, row + V);
            double lse = 0.0;
            for (int c = 0; c < V; ++c) lse += std::exp(row[c] - mx);
            total += std::log(lse) + mx - row[labels[i]];
        }
        out.values()[0] = total / selected;
    }
    if (g.recording()) {
        auto gl = logits.id(), go = out.id();
        g.node(go).back = [&g, gl, go, labels, L, V, selected, ignore_label] {
            const double gr = g.node(go).grad[0] / selected;
            const auto& lv = g.node(gl).val;
            auto& lgr = g.node(gl).grad;
            for (int i = 0; i < L; ++i) {
                if (labels[i] == ignore_label) continue;
                const double* row = lv.data() + static_cast<std::size_t>(i) * V;
                double* grow = lgr.data() + static_cast<std::size_t>(i) * V;
                double mx = *std::max_element(row, row + V);
                double z = 0.0;
                for (int c = 0; c < V; ++c) z += std::exp(row[c] - mx);
                for (int c = 0; c < V; ++c) {
                    double p = std::exp(row[c] - mx) / z;
                    grow[c] += gr * (p - (c == labels[i] ? 1.0 : 0.0));
                }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

// y[i] = Σ_j u[j]·k[(i−j) mod L]; O(L log L) through the frequency domain.
// Gradients are the matching circular correlations.
inline DiffArray circular_conv_fft(DiffArray u, DiffArray k) {
    if (u.shape().size() != 1 || k.shape().size() != 1)
        throw DimensionError("circular_conv_fft: operands must be rank-1");
    if (u.shape() != k.shape())
        throw DimensionError("circular_conv_fft: length mismatch " + shape_str(u.shape()) +
                             " vs " + shape_str(k.shape()));
    Graph& g = *u.graph();
    DiffArray out = g.make(u.shape());
    out.values() = circular_convolve(u.values(), k.values());
    if (g.recording()) {
        auto gu = u.id(), gk = k.id(), go = out.id();
        g.node(go).back = [&g, gu, gk, go] {
            const auto& og = g.node(go).grad;
            auto du = circular_correlate(og, g.node(gk).val);
            auto dk = circular_correlate(og, g.node(gu).val);
            auto& ugr = g.node(gu).grad;
            auto& kgr = g.node(gk).grad;
            for (std::size_t i = 0; i < og.size(); ++i) {
                ugr[i] += du[i];
                kgr[i] += dk[i];
            }
        };
    }
    return out;
}

// Column-wise circular convolution: out[·,c] = conv(u[·,c], k[·,c]).
// u and k are both [L×d]; each channel owns an independent kernel.
inline DiffArray circular_conv_cols(DiffArray u, DiffArray k) {
    if (u.shape().size() != 2 || u.shape() != k.shape())
        throw DimensionError("circular_conv_cols: operands must be matching rank-2");
    const int L = u.shape()[0], d = u.shape()[1];
    if (!is_power_of_two(static_cast<std::size_t>(L)))
        throw DimensionError("circular_conv_cols: length must be a power of two");
    Graph& g = *u.graph();
    DiffArray out = g.make(u.shape());
    {
        const auto& uv = u.values();
        const auto& kv = k.values();
        auto& ov = out.values();
        std::vector<double> ucol(L), kcol(L);
        for (int c = 0; c < d; ++c) {
            for (int i = 0; i < L; ++i) {
                ucol[i] = uv[static_cast<std::size_t>(i) * d + c];
                kcol[i] = kv[static_cast<std::size_t>(i) * d + c];
            }
            auto y = circular_convolve(ucol, kcol);
            for (int i = 0; i < L; ++i) ov[static_cast<std::size_t>(i) * d + c] = y[i];
        }
    }
    if (g.recording()) {
        auto gu = u.id(), gk = k.id(), go = out.id();
        g.node(go).back = [&g, gu, gk, go, L, d] {
            const auto& og = g.node(go).grad;
            const auto& uv = g.node(gu).val;
            const auto& kv = g.node(gk).val;
            auto& ugr = g.node(gu).grad;
            auto& kgr = g.node(gk).grad;
            std::vector<double> gcol(L), ucol(L), kcol(L);
            for (int c = 0; c < d; ++c) {
                for (int i = 0; i < L; ++i) {
                    gcol[i] = og[static_cast<std::size_t>(i) * d + c];
                    ucol[i] = uv[static_cast<std::size_t>(i) * d + c];
                    kcol[i] = kv[static_cast<std::size_t>(i) * d + c];
                }
                auto du = circular_correlate(gcol, kcol);
                auto dk = circular_correlate(gcol, ucol);
                for (int i = 0; i < L; ++i) {
                    ugr[static_cast<std::size_t>(i) * d + c] += du[i];
                    kgr[static_cast<std::size_t>(i) * d + c] += dk[i];
                }
            }
        };
    }
    return out;
}

// Depthwise short filter, circular over L: out[i,c] = Σ_{j<w} u[(i−j) mod L, c]·w[c,j].
inline DiffArray short_conv_cols(DiffArray u, DiffArray w) {
    if (u.shape().size() != 2 || w.shape().size() != 2)
        throw DimensionError("short_conv_cols: operands must be rank-2");
    const int L = u.shape()[0], d = u.shape()[1];
    const int wd = w.shape()[0], width = w.shape()[1];
    if (wd != d) throw DimensionError("short_conv_cols: kernel channel count mismatch");
    Graph& g = *u.graph();
    DiffArray out = g.make(u.shape());
    {
        const auto& uv = u.values();
        const auto& wv = w.values();
        auto& ov = out.values();
        for (int i = 0; i < L; ++i)
            for (int j = 0; j < width; ++j) {
                const int src = (i - j + L) % L;
                const double* urow = uv.data() + static_cast<std::size_t>(src) * d;
                double* orow = ov.data() + static_cast<std::size_t>(i) * d;
                for (int c = 0; c < d; ++c) orow[c] += urow[c] * wv[c * width + j];
            }
    }
    if (g.recording()) {
        auto gu = u.id(), gw = w.id(), go = out.id();
        g.node(go).back = [&g, gu, gw, go, L, d, width] {
            const auto& og = g.node(go).grad;
            const auto& uv = g.node(gu).val;
            const auto& wv = g.node(gw).val;
            auto& ugr = g.node(gu).grad;
            auto& wgr = g.node(gw).grad;
            for (int i = 0; i < L; ++i)
                for (int j = 0; j < width; ++j) {
                    const int src = (i - j + L) % L;
                    const double* grow = og.data() + static_cast<std::size_t>(i) * d;
                    const double* urow = uv.data() + static_cast<std::size_t>(src) * d;
                    double* ugrow = ugr.data() + static_cast<std::size_t>(src) * d;
                    for (int c = 0; c < d; ++c) {
                        ugrow[c] += grow[c] * wv[c * width + j];
                        wgr[c * width + j] += grow[c] * urow[c];
                    }
                }
        };
    }
    return out;
}

}  // namespace enclab
