#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "xdr/model.hpp"

namespace xdr {

/// Term-id -> weight map with strictly positive weights, sorted by term id.
struct SparseVector {
    std::vector<std::pair<std::uint32_t, float>> entries;

    std::size_t nnz() const noexcept { return entries.size(); }
    bool empty() const noexcept { return entries.empty(); }
    /// 0 for absent terms.
    float weight(std::uint32_t term) const;

    /// Keeps the strictly positive entries of a dense row.
    static SparseVector from_dense(std::span<const float> dense);
    /// Sorts, and drops non-positive weights. Duplicate terms are an error.
    static SparseVector from_pairs(std::vector<std::pair<std::uint32_t, float>> pairs);

    friend bool operator==(const SparseVector&, const SparseVector&) = default;
};

/// Inner product over shared term ids, accumulated in double.
double score(const SparseVector& q, const SparseVector& d);

/// SPLADE representation of one token sequence. Throws "empty content" when
/// the sequence holds only [CLS]/[SEP]/[PAD]/[MASK] tokens.
SparseVector encode_sparse(const ModelConfig& config, const Weights& weights,
                           std::span<const std::uint32_t> ids);

/// Batched encode_sparse; sequences without content map to empty vectors.
std::vector<SparseVector> encode_sparse_batch(const ModelConfig& config, const Weights& weights,
                                              std::span<const std::vector<std::uint32_t>> sequences,
                                              std::size_t batch_size = 32);

}  // namespace xdr
