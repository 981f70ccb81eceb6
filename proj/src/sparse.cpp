#include "xdr/sparse.hpp"

#include <algorithm>

#include "xdr/vocab.hpp"

namespace xdr {

namespace {

bool has_content(std::span<const std::uint32_t> ids) {
    return std::any_of(ids.begin(), ids.end(), [](std::uint32_t id) {
        return id != Vocabulary::kPad && id != Vocabulary::kCls && id != Vocabulary::kSep &&
               id != Vocabulary::kMask;
    });
}

}  // namespace

float SparseVector::weight(std::uint32_t term) const {
    auto it = std::lower_bound(entries.begin(), entries.end(), term,
                               [](const auto& e, std::uint32_t t) { return e.first < t; });
    return it != entries.end() && it->first == term ? it->second : 0.0f;
}

SparseVector SparseVector::from_dense(std::span<const float> dense) {
    SparseVector v;
    for (std::size_t j = 0; j < dense.size(); ++j) {
        if (dense[j] > 0.0f) v.entries.emplace_back(static_cast<std::uint32_t>(j), dense[j]);
    }
    return v;
}

SparseVector SparseVector::from_pairs(std::vector<std::pair<std::uint32_t, float>> pairs) {
    std::sort(pairs.begin(), pairs.end());
    SparseVector v;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (i > 0 && pairs[i].first == pairs[i - 1].first) {
            throw Error("duplicate term " + std::to_string(pairs[i].first) + " in sparse vector");
        }
        if (pairs[i].second > 0.0f) v.entries.push_back(pairs[i]);
    }
    return v;
}

double score(const SparseVector& q, const SparseVector& d) {
    double s = 0.0;
    auto a = q.entries.begin();
    auto b = d.entries.begin();
    while (a != q.entries.end() && b != d.entries.end()) {
        if (a->first < b->first) {
            ++a;
        } else if (b->first < a->first) {
            ++b;
        } else {
            s += static_cast<double>(a->second) * static_cast<double>(b->second);
            ++a;
            ++b;
        }
    }
    return s;
}

SparseVector encode_sparse(const ModelConfig& config, const Weights& weights,
                           std::span<const std::uint32_t> ids) {
    if (!has_content(ids)) throw Error("empty content");
    std::vector<std::vector<std::uint32_t>> seqs{std::vector<std::uint32_t>(ids.begin(), ids.end())};
    return encode_sparse_batch(config, weights, seqs).front();
}

std::vector<SparseVector> encode_sparse_batch(const ModelConfig& config, const Weights& weights,
                                              std::span<const std::vector<std::uint32_t>> sequences,
                                              std::size_t batch_size) {
    std::vector<SparseVector> out(sequences.size());
    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < sequences.size(); ++i) {
        if (has_content(sequences[i])) todo.push_back(i);
    }
    batch_size = std::max<std::size_t>(batch_size, 1);
    for (std::size_t start = 0; start < todo.size(); start += batch_size) {
        const std::size_t end = std::min(todo.size(), start + batch_size);
        std::vector<std::vector<std::uint32_t>> chunk;
        for (std::size_t i = start; i < end; ++i) chunk.push_back(sequences[todo[i]]);
        const PackedBatch batch = pack(chunk, config);
        ad::Tape<float> tape;
        const auto bound = model::bind(tape, weights, false);
        const Tensor<float>& reps = model::sparse_reps(config, bound, batch).value();
        for (std::size_t i = start; i < end; ++i) {
            out[todo[i]] = SparseVector::from_dense(reps.row(i - start));
        }
    }
    return out;
}

}  // namespace xdr
