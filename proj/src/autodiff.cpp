#include "xdr/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace xdr::ad {

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Eigen::Map<const Mat<T>> view(const Tensor<T>& t) {
    return {t.data().data(), static_cast<Eigen::Index>(t.rows()),
            static_cast<Eigen::Index>(t.cols())};
}

template <typename T>
Eigen::Map<Mat<T>> view(Tensor<T>& t) {
    return {t.data().data(), static_cast<Eigen::Index>(t.rows()),
            static_cast<Eigen::Index>(t.cols())};
}

template <typename T>
void same_tape(const Var<T>& a, const Var<T>& b) {
    if (a.tape() != b.tape()) throw Error("operands recorded on different tapes");
}

template <typename T>
void require_matrix(const Var<T>& a, const char* op) {
    if (a.value().rank() != 2) {
        throw DimensionError(std::string(op) + " expects a matrix, got shape " +
                             shape_str(a.shape()));
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape

template <typename T>
Var<T> Tape<T>::parameter(const std::string& name, const Tensor<T>& value) {
    Node& node = nodes_.emplace_back();
    node.borrowed = &value;
    node.requires_grad = true;
    node.name = name;
    return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::constant_ref(const Tensor<T>& value) {
    Node& node = nodes_.emplace_back();
    node.borrowed = &value;
    return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
    return emit(std::move(value), false);
}

template <typename T>
Var<T> Tape<T>::emit(Tensor<T> value, bool requires_grad) {
    Node& node = nodes_.emplace_back();
    node.owned = std::move(value);
    node.requires_grad = requires_grad;
    return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
const Tensor<T>& Tape<T>::value(std::size_t id) const {
    const Node& node = nodes_.at(id);
    return node.borrowed ? *node.borrowed : node.owned;
}

template <typename T>
Tensor<T>& Tape<T>::grad(std::size_t id) {
    Node& node = nodes_.at(id);
    if (node.grad.empty()) node.grad = Tensor<T>(value(id).shape(), T{0});
    return node.grad;
}

template <typename T>
void Tape<T>::clear() {
    nodes_.clear();
    adjoints_.clear();
}

template <typename T>
std::map<std::string, Tensor<T>> Tape<T>::backward(const Var<T>& loss) {
    if (nodes_.empty()) throw Error("backward on an empty tape");
    if (loss.tape() != this) throw Error("loss was not produced on this tape");
    if (loss.value().size() != 1) {
        throw DimensionError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
    }
    grad(loss.id())[0] = T{1};
    for (auto it = adjoints_.rbegin(); it != adjoints_.rend(); ++it) (*it)(*this);

    std::map<std::string, Tensor<T>> out;
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
        Node& node = nodes_[id];
        if (node.name.empty()) continue;
        Tensor<T>& g = grad(id);
        auto [pos, inserted] = out.emplace(node.name, std::move(g));
        if (!inserted) {
            // same parameter bound twice on one tape
            Tensor<T>& acc = pos->second;
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += grad(id)[i];
        }
    }
    clear();
    return out;
}

// ---------------------------------------------------------------------------
// Ops

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    same_tape(a, b);
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.cols() != bv.rows()) {
        throw DimensionError("matmul inner dimensions disagree: " + shape_str(av.shape()) +
                             " . " + shape_str(bv.shape()));
    }
    Tensor<T> out({av.rows(), bv.cols()});
    view(out).noalias() = view(av) * view(bv);
    Tape<T>& tape = *a.tape();
    const bool rg = a.requires_grad() || b.requires_grad();
    Var<T> y = tape.emit(std::move(out), rg);
    if (rg) {
        tape.record([ia = a.id(), ib = b.id(), iy = y.id()](Tape<T>& t) {
            auto dy = view(t.grad(iy));
            if (t.requires_grad(ia)) view(t.grad(ia)).noalias() += dy * view(t.value(ib)).transpose();
            if (t.requires_grad(ib)) view(t.grad(ib)).noalias() += view(t.value(ia)).transpose() * dy;
        });
    }
    return y;
}

template <typename T>
Var<T> matmul_bt(const Var<T>& a, const Var<T>& b) {
    same_tape(a, b);
    require_matrix(a, "matmul_bt");
    require_matrix(b, "matmul_bt");
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.cols() != bv.cols()) {
        throw DimensionError("matmul_bt inner dimensions disagree: " + shape_str(av.shape()) +
                             " . " + shape_str(bv.shape()) + "^T");
    }
    Tensor<T> out({av.rows(), bv.rows()});
    view(out).noalias() = view(av) * view(bv).transpose();
    Tape<T>& tape = *a.tape();
    const bool rg = a.requires_grad() || b.requires_grad();
    Var<T> y = tape.emit(std::move(out), rg);
    if (rg) {
        tape.record([ia = a.id(), ib = b.id(), iy = y.id()](Tape<T>& t) {
            auto dy = view(t.grad(iy));
            if (t.requires_grad(ia)) view(t.grad(ia)).noalias() += dy * view(t.value(ib));
            if (t.requires_grad(ib)) view(t.grad(ib)).noalias() += dy.transpose() * view(t.value(ia));
        });
    }
    return y;
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    same_tape(a, b);
    if (a.shape() != b.shape()) {
        throw DimensionError("add shape mismatch: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    Tensor<T> out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    Tape<T>& tape = *a.tape();
    const bool rg = a.requires_grad() || b.requires_grad();
    Var<T> y = tape.emit(std::move(out), rg);
    if (rg) {
        tape.record([ia = a.id(), ib = b.id(), iy = y.id()](Tape<T>& t) {
            const auto& dy = t.grad(iy);
            for (auto id : {ia, ib}) {
                if (!t.requires_grad(id)) continue;
                auto& g = t.grad(id);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i];
            }
        });
    }
    return y;
}

template <typename T>
Var<T> add_row(const Var<T>& a, const Var<T>& bias) {
    same_tape(a, bias);
    const auto& av = a.value();
    const auto& bv = bias.value();
    if (bv.size() != av.cols()) {
        throw DimensionError("add_row bias " + shape_str(bv.shape()) + " does not match " +
                             shape_str(av.shape()));
    }
    Tensor<T> out = av;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv[c];
    }
    Tape<T>& tape = *a.tape();
    const bool rg = a.requires_grad() || bias.requires_grad();
    Var<T> y = tape.emit(std::move(out), rg);
    if (rg) {
        tape.record([ia = a.id(), ib = bias.id(), iy = y.id()](Tape<T>& t) {
            const auto& dy = t.grad(iy);
            if (t.requires_grad(ia)) {
                auto& g = t.grad(ia);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i];
            }
            if (t.requires_grad(ib)) {
                auto& g = t.grad(ib);
                const std::size_t n = g.size();
                for (std::size_t r = 0; r < dy.rows(); ++r) {
                    auto row = dy.row(r);
                    for (std::size_t c = 0; c < n; ++c) g[c] += row[c];
                }
            }
        });
    }
    return y;
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    same_tape(a, b);
    if (a.shape() != b.shape()) {
        throw DimensionError("mul shape mismatch: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    Tensor<T> out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    Tape<T>& tape = *a.tape();
    const bool rg = a.requires_grad() || b.requires_grad();
    Var<T> y = tape.emit(std::move(out), rg);
    if (rg) {
        tape.record([ia = a.id(), ib = b.id(), iy = y.id()](Tape<T>& t) {
            const auto& dy = t.grad(iy);
            const auto& va = t.value(ia);
            const auto& vb = t.value(ib);
            if (t.requires_grad(ia)) {
                auto& g = t.grad(ia);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * vb[i];
            }
            if (t.requires_grad(ib)) {
                auto& g = t.grad(ib);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * va[i];
            }
        });
    }
    return y;
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
    Tensor<T> out = a.value();
    for (auto& x : out.data()) x *= factor;
    Tape<T>& tape = *a.tape();
    Var<T> y = tape.emit(std::move(out), a.requires_grad());
    if (a.requires_grad()) {
        tape.record([ia = a.id(), iy = y.id(), factor](Tape<T>& t) {
            const auto& dy = t.grad(iy);
            auto& g = t.grad(ia);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * factor;
        });
    }
    return y;
}

template <typename T>
Var<T> scale_cols(const Var<T>& a, std::vector<T> factors) {
    const auto& av = a.value();
    if (factors.size() != av.cols()) {
        throw DimensionError("scale_cols factor count " + std::to_string(factors.size()) +
                             " does not match " + shape_str(av.shape()));
    }
    Tensor<T> out = av;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] *= factors[c];
    }
    Tape<T>& tape = *a.tape();
    Var<T> y = tape.emit(std::move(out), a.requires_grad());
    if (a.requires_grad()) {
        tape.record([ia = a.id(), iy = y.id(), f = std::move(factors)](Tape<T>& t) {
            const auto& dy = t.grad(iy);
            auto& g = t.grad(ia);
            for (std::size_t r = 0; r < g.rows(); ++r) {
                auto gr = g.row(r);
                auto dr = dy.row(r);
                for (std::size_t c = 0; c < gr.size(); ++c) gr[c] += dr[c] * f[c];
            }
        });
    }
    return y;
}

template <typename T>
Var<T> sum(const Var<T>& a) {
    T total{0};
    for (auto x : a.value().data()) total += x;
    Tape<T>& tape = *a.tape();
    Var<T> y = tape.emit(Tensor<T>::scalar(total), a.requires_grad());
    if (a.requires_grad()) {
        tape.record([ia = a.id(), iy = y.id()](Tape<T>& t) {
            const T dy = t.grad(iy)[0];
            for (auto& g : t.grad(ia).data()) g += dy;
        });
    }
    return y;
}

template <typename T>
Var<T> mean_rows(const Var<T>& a) {
    const auto& av = a.value();
    const std::size_t m = av.rows();
    const std::size_t n = av.cols();
    Tensor<T> out({n});
    for (std::size_t r = 0; r < m; ++r) {
        auto row = av.row(r);
        for (std::size_t c = 0; c < n; ++c) out[c] += row[c];
    }
    for (auto& x : out.data()) x /= static_cast<T>(m);
    Tape<T>& tape = *a.tape();
    Var<T> y = tape.emit(std::move(out), a.requires_grad());
    if (a.requires_grad()) {
        tape.record([ia = a.id(), iy = y.id(), m, n](Tape<T>& t) {
            const auto& dy = t.grad(iy);
            auto& g = t.grad(ia);
            const T inv = T{1} / static_cast<T>(m);
            for (std::size_t r = 0; r < m; ++r) {
                auto row = g.row(r);
                for (std::size_t c = 0; c < n; ++c) row[c] += dy[c] * inv;
            }
        });
    }
    return y;
}

template <typename T>
Var<T> gelu(const Var<T>& a) {
    const T inv_sqrt2 = static_cast<T>(0.70710678118654752440);
    const T inv_sqrt_2pi = static_cast<T>(0.39894228040143267794);
    const bool rg = a.requires_grad();
    Tensor<T> out = a.value();
    std::vector<T> slope(rg ? out.size() : 0);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T x = out[i];
        const T cdf = T{0.5} * (T{1} + std::erf(x * inv_sqrt2));
        out[i] = x * cdf;
        if (rg) slope[i] = cdf + x * inv_sqrt_2pi * std::exp(T{-0.5} * x * x);
    }
    Tape<T>& tape = *a.tape();
    Var<T> y = tape.emit(std::move(out), rg);
    if (rg) {
        tape.record([ia = a.id(), iy = y.id(), slope = std::move(slope)](Tape<T>& t) {
            const auto& dy = t.grad(iy);
            auto& g = t.grad(ia);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * slope[i];
        });
    }
    return y;
}

template <typename T>
Var<T> log1p_relu(const Var<T>& a) {
    Tensor<T> out = a.value();
    for (auto& x : out.data()) x = x > T{0} ? std::log1p(x) : T{0};
    Tape<T>& tape = *a.tape();
    Var<T> y = tape.emit(std::move(out), a.requires_grad());
    if (a.requires_grad()) {
        tape.record([ia = a.id(), iy = y.id()](Tape<T>& t) {
            const auto& x = t.value(ia);
            const auto& dy = t.grad(iy);
            auto& g = t.grad(ia);
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (x[i] > T{0}) g[i] += dy[i] / (T{1} + x[i]);
            }
        });
    }
    return y;
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps) {
    same_tape(x, gain);
    same_tape(x, bias);
    if (!(eps > T{0})) throw Error("layer_norm eps must be positive");
    const auto& xv = x.value();
    const std::size_t d = xv.cols();
    if (xv.empty() || d == 0) throw DimensionError("layer_norm on an empty last axis");
    if (gain.value().size() != d || bias.value().size() != d) {
        throw DimensionError("layer_norm gain/bias " + shape_str(gain.shape()) + "/" +
                             shape_str(bias.shape()) + " do not match last axis of " +
                             shape_str(xv.shape()));
    }
    const std::size_t m = xv.rows();
    const auto& gv = gain.value();
    const auto& bv = bias.value();
    Tensor<T> out(xv.shape());
    // normalized rows and inverse std, kept for the adjoint
    std::vector<T> xhat(xv.size());
    std::vector<T> inv_std(m);
    for (std::size_t r = 0; r < m; ++r) {
        auto row = xv.row(r);
        T mean{0};
        for (auto v : row) mean += v;
        mean /= static_cast<T>(d);
        T var{0};
        for (auto v : row) var += (v - mean) * (v - mean);
        var /= static_cast<T>(d);
        const T is = T{1} / std::sqrt(var + eps);
        inv_std[r] = is;
        auto orow = out.row(r);
        for (std::size_t c = 0; c < d; ++c) {
            const T h = (row[c] - mean) * is;
            xhat[r * d + c] = h;
            orow[c] = h * gv[c] + bv[c];
        }
    }
    Tape<T>& tape = *x.tape();
    const bool rg = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
    Var<T> y = tape.emit(std::move(out), rg);
    if (rg) {
        tape.record([ix = x.id(), ig = gain.id(), ib = bias.id(), iy = y.id(), m, d,
                     xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t) {
            const auto& dy = t.grad(iy);
            const auto& gv = t.value(ig);
            if (t.requires_grad(ig)) {
                auto& gg = t.grad(ig);
                for (std::size_t i = 0; i < m * d; ++i) gg[i % d] += dy[i] * xhat[i];
            }
            if (t.requires_grad(ib)) {
                auto& gb = t.grad(ib);
                for (std::size_t i = 0; i < m * d; ++i) gb[i % d] += dy[i];
            }
            if (t.requires_grad(ix)) {
                auto& gx = t.grad(ix);
                std::vector<T> dxhat(d);
                for (std::size_t r = 0; r < m; ++r) {
                    T mean_d{0};
                    T mean_dx{0};
                    for (std::size_t c = 0; c < d; ++c) {
                        dxhat[c] = dy[r * d + c] * gv[c];
                        mean_d += dxhat[c];
                        mean_dx += dxhat[c] * xhat[r * d + c];
                    }
                    mean_d /= static_cast<T>(d);
                    mean_dx /= static_cast<T>(d);
                    for (std::size_t c = 0; c < d; ++c) {
                        gx[r * d + c] +=
                            inv_std[r] * (dxhat[c] - mean_d - xhat[r * d + c] * mean_dx);
                    }
                }
            }
        });
    }
    return y;
}

template <typename T>
Var<T> embedding(const Var<T>& table, std::span<const std::uint32_t> ids) {
    require_matrix(table, "embedding");
    const auto& tv = table.value();
    const std::size_t d = tv.cols();
    if (ids.empty()) throw DimensionError("embedding lookup with no ids");
    Tensor<T> out({ids.size(), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= tv.rows()) {
            throw DimensionError("embedding id " + std::to_string(ids[i]) +
                                 " out of range for table " + shape_str(tv.shape()));
        }
        auto src = tv.row(ids[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    Tape<T>& tape = *table.tape();
    Var<T> y = tape.emit(std::move(out), table.requires_grad());
    if (table.requires_grad()) {
        tape.record([it = table.id(), iy = y.id(),
                     idx = std::vector<std::uint32_t>(ids.begin(), ids.end())](Tape<T>& t) {
            const auto& dy = t.grad(iy);
            auto& g = t.grad(it);
            for (std::size_t i = 0; i < idx.size(); ++i) {
                auto dst = g.row(idx[i]);
                auto src = dy.row(i);
                for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
            }
        });
    }
    return y;
}

template <typename T>
Var<T> select_rows(const Var<T>& x, std::span<const std::size_t> rows) {
    const auto& xv = x.value();
    if (rows.empty()) throw DimensionError("select_rows with no rows");
    Tensor<T> out({rows.size(), xv.cols()});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= xv.rows()) {
            throw DimensionError("select_rows index " + std::to_string(rows[i]) +
                                 " out of range for " + shape_str(xv.shape()));
        }
        auto src = xv.row(rows[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    Tape<T>& tape = *x.tape();
    Var<T> y = tape.emit(std::move(out), x.requires_grad());
    if (x.requires_grad()) {
        tape.record([ix = x.id(), iy = y.id(),
                     idx = std::vector<std::size_t>(rows.begin(), rows.end())](Tape<T>& t) {
            const auto& dy = t.grad(iy);
            auto& g = t.grad(ix);
            for (std::size_t i = 0; i < idx.size(); ++i) {
                auto dst = g.row(idx[i]);
                auto src = dy.row(i);
                for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
            }
        });
    }
    return y;
}

template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                 std::span<const std::size_t> offsets, std::size_t n_heads) {
    same_tape(q, k);
    same_tape(q, v);
    const auto& qv = q.value();
    if (k.shape() != qv.shape() || v.shape() != qv.shape() || qv.rank() != 2) {
        throw DimensionError("attention q/k/v shapes disagree: " + shape_str(q.shape()) + ", " +
                             shape_str(k.shape()) + ", " + shape_str(v.shape()));
    }
    const std::size_t d = qv.cols();
    if (n_heads == 0 || d % n_heads != 0) {
        throw DimensionError("attention width " + std::to_string(d) +
                             " not divisible by head count " + std::to_string(n_heads));
    }
    if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != qv.rows()) {
        throw DimensionError("attention offsets do not cover the packed rows");
    }
    const auto dh = static_cast<Eigen::Index>(d / n_heads);
    const T sc = T{1} / std::sqrt(static_cast<T>(dh));
    auto Q = view(qv);
    auto K = view(k.value());
    auto V = view(v.value());
    Tensor<T> out(qv.shape());
    auto O = view(out);
    std::vector<Mat<T>> probs;
    probs.reserve((offsets.size() - 1) * n_heads);
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
        const auto s0 = static_cast<Eigen::Index>(offsets[s]);
        const auto len = static_cast<Eigen::Index>(offsets[s + 1] - offsets[s]);
        if (len <= 0) throw DimensionError("attention over an empty sequence");
        for (std::size_t h = 0; h < n_heads; ++h) {
            const auto c0 = static_cast<Eigen::Index>(h) * dh;
            Mat<T> scores = (Q.block(s0, c0, len, dh) * K.block(s0, c0, len, dh).transpose()) * sc;
            for (Eigen::Index r = 0; r < len; ++r) {
                auto row = scores.row(r);
                const T mx = row.maxCoeff();
                row = (row.array() - mx).exp();
                row /= row.sum();
            }
            O.block(s0, c0, len, dh).noalias() = scores * V.block(s0, c0, len, dh);
            probs.push_back(std::move(scores));
        }
    }
    Tape<T>& tape = *q.tape();
    const bool rg = q.requires_grad() || k.requires_grad() || v.requires_grad();
    Var<T> y = tape.emit(std::move(out), rg);
    if (rg) {
        tape.record([iq = q.id(), ik = k.id(), iv = v.id(), iy = y.id(), n_heads, dh, sc,
                     offs = std::vector<std::size_t>(offsets.begin(), offsets.end()),
                     probs = std::move(probs)](Tape<T>& t) {
            auto Q = view(t.value(iq));
            auto K = view(t.value(ik));
            auto V = view(t.value(iv));
            auto dO = view(t.grad(iy));
            const bool gq = t.requires_grad(iq);
            const bool gk = t.requires_grad(ik);
            const bool gv = t.requires_grad(iv);
            std::size_t p = 0;
            for (std::size_t s = 0; s + 1 < offs.size(); ++s) {
                const auto s0 = static_cast<Eigen::Index>(offs[s]);
                const auto len = static_cast<Eigen::Index>(offs[s + 1] - offs[s]);
                for (std::size_t h = 0; h < n_heads; ++h, ++p) {
                    const auto c0 = static_cast<Eigen::Index>(h) * dh;
                    const Mat<T>& P = probs[p];
                    auto dOb = dO.block(s0, c0, len, dh);
                    if (gv) view(t.grad(iv)).block(s0, c0, len, dh).noalias() += P.transpose() * dOb;
                    if (!gq && !gk) continue;
                    Mat<T> dP = dOb * V.block(s0, c0, len, dh).transpose();
                    Mat<T> dS(len, len);
                    for (Eigen::Index r = 0; r < len; ++r) {
                        const T dot = (dP.row(r).array() * P.row(r).array()).sum();
                        dS.row(r) = P.row(r).array() * (dP.row(r).array() - dot);
                    }
                    dS *= sc;
                    if (gq) view(t.grad(iq)).block(s0, c0, len, dh).noalias() += dS * K.block(s0, c0, len, dh);
                    if (gk) view(t.grad(ik)).block(s0, c0, len, dh).noalias() += dS.transpose() * Q.block(s0, c0, len, dh);
                }
            }
        });
    }
    return y;
}

template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const std::int64_t> targets,
                             std::int64_t ignore_index) {
    const auto& lv = logits.value();
    const std::size_t n = lv.rows();
    const std::size_t classes = lv.cols();
    if (targets.size() != n) {
        throw DimensionError("cross entropy has " + std::to_string(targets.size()) +
                             " targets for logits " + shape_str(lv.shape()));
    }
    std::size_t count = 0;
    for (auto tgt : targets) {
        if (tgt == ignore_index) continue;
        if (tgt < 0 || static_cast<std::size_t>(tgt) >= classes) {
            throw DimensionError("cross entropy target " + std::to_string(tgt) +
                                 " outside [0, " + std::to_string(classes) + ")");
        }
        ++count;
    }
    if (count == 0) throw Error("no supervised positions");

    Tensor<T> probs(lv.shape());
    T loss{0};
    for (std::size_t r = 0; r < n; ++r) {
        if (targets[r] == ignore_index) continue;
        auto row = lv.row(r);
        const T mx = *std::max_element(row.begin(), row.end());
        T z{0};
        for (auto x : row) z += std::exp(x - mx);
        const T log_z = std::log(z) + mx;
        auto prow = probs.row(r);
        for (std::size_t c = 0; c < classes; ++c) prow[c] = std::exp(row[c] - log_z);
        loss += log_z - row[static_cast<std::size_t>(targets[r])];
    }
    loss /= static_cast<T>(count);

    Tape<T>& tape = *logits.tape();
    Var<T> y = tape.emit(Tensor<T>::scalar(loss), logits.requires_grad());
    if (logits.requires_grad()) {
        tape.record([il = logits.id(), iy = y.id(), count, ignore_index,
                     tg = std::vector<std::int64_t>(targets.begin(), targets.end()),
                     probs = std::move(probs)](Tape<T>& t) {
            const T dy = t.grad(iy)[0] / static_cast<T>(count);
            auto& g = t.grad(il);
            for (std::size_t r = 0; r < tg.size(); ++r) {
                if (tg[r] == ignore_index) continue;
                auto grow = g.row(r);
                auto prow = probs.row(r);
                for (std::size_t c = 0; c < grow.size(); ++c) grow[c] += dy * prow[c];
                grow[static_cast<std::size_t>(tg[r])] -= dy;
            }
        });
    }
    return y;
}

template <typename T>
Var<T> segment_max(const Var<T>& x, std::span<const std::size_t> offsets,
                   const std::vector<bool>& include) {
    const auto& xv = x.value();
    const std::size_t cols = xv.cols();
    if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != xv.rows()) {
        throw DimensionError("segment_max offsets do not cover the rows");
    }
    if (include.size() != xv.rows()) throw DimensionError("segment_max include mask length");
    const std::size_t n_seq = offsets.size() - 1;
    constexpr std::size_t none = std::numeric_limits<std::size_t>::max();
    Tensor<T> out({n_seq, cols});
    std::vector<std::size_t> arg(n_seq * cols, none);
    for (std::size_t s = 0; s < n_seq; ++s) {
        auto orow = out.row(s);
        for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r) {
            if (!include[r]) continue;
            auto row = xv.row(r);
            for (std::size_t c = 0; c < cols; ++c) {
                std::size_t& a = arg[s * cols + c];
                if (a == none || row[c] > orow[c]) {
                    orow[c] = row[c];
                    a = r;
                }
            }
        }
    }
    Tape<T>& tape = *x.tape();
    Var<T> y = tape.emit(std::move(out), x.requires_grad());
    if (x.requires_grad()) {
        tape.record([ix = x.id(), iy = y.id(), cols, arg = std::move(arg)](Tape<T>& t) {
            const auto& dy = t.grad(iy);
            auto& g = t.grad(ix);
            for (std::size_t i = 0; i < arg.size(); ++i) {
                if (arg[i] == none) continue;
                g[arg[i] * cols + i % cols] += dy[i];
            }
        });
    }
    return y;
}

template <typename T>
Var<T> rowdot(const Var<T>& a, const Var<T>& b) {
    same_tape(a, b);
    if (a.shape() != b.shape()) {
        throw DimensionError("rowdot shape mismatch: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    const auto& av = a.value();
    const auto& bv = b.value();
    const std::size_t m = av.rows();
    Tensor<T> out({m, 1});
    for (std::size_t r = 0; r < m; ++r) {
        auto ra = av.row(r);
        auto rb = bv.row(r);
        T s{0};
        for (std::size_t c = 0; c < ra.size(); ++c) s += ra[c] * rb[c];
        out[r] = s;
    }
    Tape<T>& tape = *a.tape();
    const bool rg = a.requires_grad() || b.requires_grad();
    Var<T> y = tape.emit(std::move(out), rg);
    if (rg) {
        tape.record([ia = a.id(), ib = b.id(), iy = y.id()](Tape<T>& t) {
            const auto& dy = t.grad(iy);
            const auto& va = t.value(ia);
            const auto& vb = t.value(ib);
            const std::size_t n = va.cols();
            if (t.requires_grad(ia)) {
                auto& g = t.grad(ia);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i / n] * vb[i];
            }
            if (t.requires_grad(ib)) {
                auto& g = t.grad(ib);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i / n] * va[i];
            }
        });
    }
    return y;
}

template <typename T>
Var<T> concat_cols(const Var<T>& a, const Var<T>& b) {
    same_tape(a, b);
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.rows() != bv.rows()) {
        throw DimensionError("concat_cols row mismatch: " + shape_str(av.shape()) + " | " +
                             shape_str(bv.shape()));
    }
    const std::size_t p = av.cols();
    const std::size_t q = bv.cols();
    Tensor<T> out({av.rows(), p + q});
    for (std::size_t r = 0; r < av.rows(); ++r) {
        auto orow = out.row(r);
        std::copy(av.row(r).begin(), av.row(r).end(), orow.begin());
        std::copy(bv.row(r).begin(), bv.row(r).end(), orow.begin() + static_cast<std::ptrdiff_t>(p));
    }
    Tape<T>& tape = *a.tape();
    const bool rg = a.requires_grad() || b.requires_grad();
    Var<T> y = tape.emit(std::move(out), rg);
    if (rg) {
        tape.record([ia = a.id(), ib = b.id(), iy = y.id(), p, q](Tape<T>& t) {
            const auto& dy = t.grad(iy);
            for (std::size_t r = 0; r < dy.rows(); ++r) {
                auto drow = dy.row(r);
                if (t.requires_grad(ia)) {
                    auto g = t.grad(ia).row(r);
                    for (std::size_t c = 0; c < p; ++c) g[c] += drow[c];
                }
                if (t.requires_grad(ib)) {
                    auto g = t.grad(ib).row(r);
                    for (std::size_t c = 0; c < q; ++c) g[c] += drow[p + c];
                }
            }
        });
    }
    return y;
}

#define XDR_INSTANTIATE(T)                                                                     \
    template class Tape<T>;                                                                    \
    template Var<T> matmul(const Var<T>&, const Var<T>&);                                      \
    template Var<T> matmul_bt(const Var<T>&, const Var<T>&);                                   \
    template Var<T> add(const Var<T>&, const Var<T>&);                                         \
    template Var<T> add_row(const Var<T>&, const Var<T>&);                                     \
    template Var<T> mul(const Var<T>&, const Var<T>&);                                         \
    template Var<T> scale(const Var<T>&, T);                                                   \
    template Var<T> scale_cols(const Var<T>&, std::vector<T>);                                 \
    template Var<T> sum(const Var<T>&);                                                        \
    template Var<T> mean_rows(const Var<T>&);                                                  \
    template Var<T> gelu(const Var<T>&);                                                       \
    template Var<T> log1p_relu(const Var<T>&);                                                 \
    template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                \
    template Var<T> embedding(const Var<T>&, std::span<const std::uint32_t>);                  \
    template Var<T> select_rows(const Var<T>&, std::span<const std::size_t>);                  \
    template Var<T> attention(const Var<T>&, const Var<T>&, const Var<T>&,                     \
                              std::span<const std::size_t>, std::size_t);                      \
    template Var<T> softmax_cross_entropy(const Var<T>&, std::span<const std::int64_t>,        \
                                          std::int64_t);                                       \
    template Var<T> segment_max(const Var<T>&, std::span<const std::size_t>,                   \
                                const std::vector<bool>&);                                     \
    template Var<T> rowdot(const Var<T>&, const Var<T>&);                                      \
    template Var<T> concat_cols(const Var<T>&, const Var<T>&);

XDR_INSTANTIATE(float)
XDR_INSTANTIATE(double)

#undef XDR_INSTANTIATE

}  // namespace xdr::ad
