#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "xdr/adam.hpp"
#include "xdr/autodiff.hpp"
#include "xdr/tensor.hpp"

namespace xdr {

/// Encoder hyperparameters plus the domain/task split point.
struct ModelConfig {
    std::size_t vocab_size = 2000;
    std::size_t layers = 6;
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t d_ffn = 128;
    std::size_t max_seq_len = 64;
    /// Number of transformer layers (after the embeddings) in the domain subset.
    std::int64_t k_domain_layers = 0;

    /// Throws on any broken invariant.
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

using Weights = ParameterMap<float>;

/// Tensor names in lexicographic order. Layer tensors are `layer.<i>.<part>`.
std::vector<std::string> parameter_names(const ModelConfig& config);

/// Shape of every named tensor.
std::map<std::string, Shape> parameter_shapes(const ModelConfig& config);

/// N(0, 0.02) matrices, unit layer-norm gains, zero biases.
Weights init_weights(const ModelConfig& config, std::uint64_t seed);

/// Sequences packed row-wise without padding.
struct PackedBatch {
    std::vector<std::uint32_t> ids;
    std::vector<std::uint32_t> positions;
    /// offsets[s] is the first row of sequence s; offsets.back() == ids.size().
    std::vector<std::size_t> offsets;

    std::size_t sequences() const noexcept { return offsets.empty() ? 0 : offsets.size() - 1; }
};

/// Validates ids and lengths against the config.
PackedBatch pack(std::span<const std::vector<std::uint32_t>> sequences, const ModelConfig& config);

namespace model {

template <typename T>
using Bound = std::map<std::string, ad::Var<T>>;

/// Binds every tensor on the tape, as gradient-receiving parameters or as
/// borrowed constants.
template <typename T>
Bound<T> bind(ad::Tape<T>& tape, const ParameterMap<T>& weights, bool with_grad);

/// Binds the tensors named in `constants` as constants and the rest as
/// parameters. Gradients still flow through constants to their inputs; only
/// their own gradient is not formed.
template <typename T>
Bound<T> bind(ad::Tape<T>& tape, const ParameterMap<T>& weights, const std::set<std::string>& constants);

/// Final hidden states [rows x d_model] of post-norm transformer layers.
template <typename T>
ad::Var<T> hidden_states(const ModelConfig& config, const Bound<T>& params, const PackedBatch& batch);

/// hidden . emb.token^T + mlm.bias
template <typename T>
ad::Var<T> mlm_logits(const Bound<T>& params, const ad::Var<T>& hidden);

/// Dense SPLADE representations [sequences x V]: max over content positions of
/// log(1 + relu(logit)), with the special-token columns zeroed.
template <typename T>
ad::Var<T> sparse_reps(const ModelConfig& config, const Bound<T>& params, const PackedBatch& batch);

}  // namespace model

/// MLM logits [seq_len x V] for one sequence. Pure; safe to call concurrently.
Tensor<float> forward_mlm(const ModelConfig& config, const Weights& weights,
                          std::span<const std::uint32_t> ids);

}  // namespace xdr
