#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "xdr/tensor.hpp"

namespace xdr::ad {

template <typename T>
class Tape;

/// Handle to a value recorded on a tape.
template <typename T>
class Var {
public:
    Var() = default;
    Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

    const Tensor<T>& value() const { return tape_->value(id_); }
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const { return tape_->requires_grad(id_); }

    Tape<T>* tape() const noexcept { return tape_; }
    std::size_t id() const noexcept { return id_; }

private:
    Tape<T>* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Reverse-mode gradient tape.
///
/// Ops append their output node and, when any input requires a gradient, an
/// adjoint closure. `backward` replays the closures in exact reverse order of
/// recording and then clears the tape. Parameters are borrowed, not copied, so
/// the tensors passed to `parameter` must outlive the tape's current record.
template <typename T>
class Tape {
public:
    using Adjoint = std::function<void(Tape&)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Named leaf that receives a gradient.
    Var<T> parameter(const std::string& name, const Tensor<T>& value);
    /// Leaf without gradient. Borrowed.
    Var<T> constant_ref(const Tensor<T>& value);
    /// Leaf without gradient. Owned.
    Var<T> constant(Tensor<T> value);

    /// Back-propagates from a scalar loss and returns the gradient of every
    /// named parameter. Gradients flow through every recorded op regardless of
    /// whether the optimizer later updates the parameter.
    std::map<std::string, Tensor<T>> backward(const Var<T>& loss);

    bool empty() const noexcept { return nodes_.empty(); }
    std::size_t op_count() const noexcept { return adjoints_.size(); }
    void clear();

    // Op-author interface.
    Var<T> emit(Tensor<T> value, bool requires_grad);
    void record(Adjoint adjoint) { adjoints_.push_back(std::move(adjoint)); }
    const Tensor<T>& value(std::size_t id) const;
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    /// Gradient buffer of a node, allocated with zeros on first access.
    Tensor<T>& grad(std::size_t id);

private:
    struct Node {
        Tensor<T> owned;
        const Tensor<T>* borrowed = nullptr;
        Tensor<T> grad;
        bool requires_grad = false;
        std::string name;
    };

    std::deque<Node> nodes_;
    std::vector<Adjoint> adjoints_;
};

// ---------------------------------------------------------------------------
// Differentiable ops. All 2-D ops use the rows() x cols() view of their inputs.

/// a[m x k] . b[k x n]
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);

/// a[m x k] . b[n x k]^T
template <typename T>
Var<T> matmul_bt(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

/// Adds bias[n] to every row of a[m x n].
template <typename T>
Var<T> add_row(const Var<T>& a, const Var<T>& bias);

/// Elementwise product.
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& a, T factor);

/// Multiplies column j of a[m x n] by the constant factors[j].
template <typename T>
Var<T> scale_cols(const Var<T>& a, std::vector<T> factors);

/// Sum of all elements, as a scalar.
template <typename T>
Var<T> sum(const Var<T>& a);

/// Column means of a[m x n], shape [n].
template <typename T>
Var<T> mean_rows(const Var<T>& a);

/// Exact (erf-based) GELU.
template <typename T>
Var<T> gelu(const Var<T>& a);

/// log(1 + max(0, x)); subgradient 0 at x = 0.
template <typename T>
Var<T> log1p_relu(const Var<T>& a);

/// Per-row normalization over the last axis followed by gain/bias.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps);

/// Rows of table[V x d] selected by ids; adjoint scatter-adds.
template <typename T>
Var<T> embedding(const Var<T>& table, std::span<const std::uint32_t> ids);

/// Rows of x selected by index.
template <typename T>
Var<T> select_rows(const Var<T>& x, std::span<const std::size_t> rows);

/// Multi-head scaled dot-product self-attention over packed sequences.
///
/// q, k, v are [N x d] with the rows of every sequence contiguous; `offsets`
/// has one entry per sequence plus a final sentinel equal to N. Attention never
/// crosses a sequence boundary, so no padding is needed.
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                 std::span<const std::size_t> offsets, std::size_t n_heads);

/// Mean negative log-softmax of the target class over rows whose target is
/// not `ignore_index`.
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const std::int64_t> targets,
                             std::int64_t ignore_index = -1);

/// Column-wise max over the rows of each packed sequence, restricted to rows
/// with `include[row]` set. Output [n_seq x cols]. A sequence without included
/// rows yields zeros. Ties send the gradient to the first maximal row.
template <typename T>
Var<T> segment_max(const Var<T>& x, std::span<const std::size_t> offsets,
                   const std::vector<bool>& include);

/// Row-wise dot products of a[m x n] and b[m x n], shape [m x 1].
template <typename T>
Var<T> rowdot(const Var<T>& a, const Var<T>& b);

/// [a | b] for a[m x p], b[m x q].
template <typename T>
Var<T> concat_cols(const Var<T>& a, const Var<T>& b);

}  // namespace xdr::ad
