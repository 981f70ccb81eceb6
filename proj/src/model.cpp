#include "xdr/model.hpp"

#include <algorithm>

#include "xdr/rng.hpp"
#include "xdr/vocab.hpp"

namespace xdr {

namespace {

constexpr float kInitStd = 0.02f;
constexpr double kLayerNormEps = 1e-5;

std::string layer_name(std::size_t i, const char* part) {
    return "layer." + std::to_string(i) + "." + part;
}

bool is_gain(const std::string& name) { return name.ends_with(".gain"); }

bool is_bias(const std::string& name) {
    return name.ends_with(".bias") || name.ends_with(".b") || name.ends_with(".b1") ||
           name.ends_with(".b2");
}

}  // namespace

void ModelConfig::validate() const {
    if (vocab_size <= Vocabulary::kNumSpecial) throw Error("vocab_size must exceed the special tokens");
    if (layers == 0) throw Error("model needs at least one layer");
    if (d_model == 0 || n_heads == 0 || d_ffn == 0) throw Error("model dimensions must be positive");
    if (d_model % n_heads != 0) {
        throw Error("d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                    std::to_string(n_heads));
    }
    if (max_seq_len < 2) throw Error("max_seq_len must be at least 2");
    if (k_domain_layers < 0) throw Error("k_domain_layers must be non-negative");
    if (static_cast<std::size_t>(k_domain_layers) >= layers) {
        throw Error("k_domain_layers " + std::to_string(k_domain_layers) + " >= L=" +
                    std::to_string(layers) + ": no task layers remain");
    }
}

std::map<std::string, Shape> parameter_shapes(const ModelConfig& c) {
    std::map<std::string, Shape> shapes;
    shapes["emb.token"] = {c.vocab_size, c.d_model};
    shapes["emb.position"] = {c.max_seq_len, c.d_model};
    shapes["mlm.bias"] = {c.vocab_size};
    for (std::size_t i = 0; i < c.layers; ++i) {
        for (const char* p : {"attn.q.w", "attn.k.w", "attn.v.w", "attn.o.w"}) {
            shapes[layer_name(i, p)] = {c.d_model, c.d_model};
        }
        for (const char* p : {"attn.q.b", "attn.k.b", "attn.v.b", "attn.o.b"}) {
            shapes[layer_name(i, p)] = {c.d_model};
        }
        for (const char* p : {"ln1.gain", "ln1.bias", "ln2.gain", "ln2.bias", "ffn.b2"}) {
            shapes[layer_name(i, p)] = {c.d_model};
        }
        shapes[layer_name(i, "ffn.w1")] = {c.d_model, c.d_ffn};
        shapes[layer_name(i, "ffn.b1")] = {c.d_ffn};
        shapes[layer_name(i, "ffn.w2")] = {c.d_ffn, c.d_model};
    }
    return shapes;
}

std::vector<std::string> parameter_names(const ModelConfig& config) {
    std::vector<std::string> names;
    for (const auto& [name, shape] : parameter_shapes(config)) names.push_back(name);
    return names;
}

Weights init_weights(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    Weights w;
    for (const auto& [name, shape] : parameter_shapes(config)) {
        Tensor<float> t(shape);
        if (is_gain(name)) {
            t.fill(1.0f);
        } else if (!is_bias(name)) {
            for (auto& x : t.data()) x = static_cast<float>(rng.normal()) * kInitStd;
        }
        w.emplace(name, std::move(t));
    }
    return w;
}

PackedBatch pack(std::span<const std::vector<std::uint32_t>> sequences, const ModelConfig& config) {
    if (sequences.empty()) throw Error("cannot pack an empty batch");
    PackedBatch b;
    b.offsets.push_back(0);
    for (const auto& seq : sequences) {
        if (seq.empty()) throw Error("cannot encode an empty token sequence");
        if (seq.size() > config.max_seq_len) {
            throw DimensionError("sequence length " + std::to_string(seq.size()) +
                                 " exceeds max_seq_len " + std::to_string(config.max_seq_len));
        }
        for (std::size_t i = 0; i < seq.size(); ++i) {
            if (seq[i] >= config.vocab_size) {
                throw DimensionError("token id " + std::to_string(seq[i]) + " >= vocab size " +
                                     std::to_string(config.vocab_size));
            }
            b.ids.push_back(seq[i]);
            b.positions.push_back(static_cast<std::uint32_t>(i));
        }
        b.offsets.push_back(b.ids.size());
    }
    return b;
}

namespace model {

template <typename T>
Bound<T> bind(ad::Tape<T>& tape, const ParameterMap<T>& weights, bool with_grad) {
    Bound<T> out;
    for (const auto& [name, t] : weights) {
        out.emplace(name, with_grad ? tape.parameter(name, t) : tape.constant_ref(t));
    }
    return out;
}

template <typename T>
Bound<T> bind(ad::Tape<T>& tape, const ParameterMap<T>& weights, const std::set<std::string>& constants) {
    Bound<T> out;
    for (const auto& [name, t] : weights) {
        out.emplace(name, constants.contains(name) ? tape.constant_ref(t) : tape.parameter(name, t));
    }
    return out;
}

template <typename T>
ad::Var<T> hidden_states(const ModelConfig& config, const Bound<T>& p, const PackedBatch& batch) {
    const auto eps = static_cast<T>(kLayerNormEps);
    auto P = [&p](const std::string& name) -> const ad::Var<T>& {
        auto it = p.find(name);
        if (it == p.end()) throw Error("missing tensor '" + name + "'");
        return it->second;
    };
    auto linear = [&](const ad::Var<T>& x, std::size_t i, const char* w, const char* b) {
        return ad::add_row(ad::matmul(x, P(layer_name(i, w))), P(layer_name(i, b)));
    };

    ad::Var<T> x = ad::add(ad::embedding(P("emb.token"), std::span<const std::uint32_t>(batch.ids)),
                           ad::embedding(P("emb.position"),
                                         std::span<const std::uint32_t>(batch.positions)));
    for (std::size_t i = 0; i < config.layers; ++i) {
        auto q = linear(x, i, "attn.q.w", "attn.q.b");
        auto k = linear(x, i, "attn.k.w", "attn.k.b");
        auto v = linear(x, i, "attn.v.w", "attn.v.b");
        auto ctx = ad::attention(q, k, v, std::span<const std::size_t>(batch.offsets), config.n_heads);
        auto attn_out = linear(ctx, i, "attn.o.w", "attn.o.b");
        auto h = ad::layer_norm(ad::add(x, attn_out), P(layer_name(i, "ln1.gain")),
                                P(layer_name(i, "ln1.bias")), eps);
        auto f = linear(ad::gelu(linear(h, i, "ffn.w1", "ffn.b1")), i, "ffn.w2", "ffn.b2");
        x = ad::layer_norm(ad::add(h, f), P(layer_name(i, "ln2.gain")),
                           P(layer_name(i, "ln2.bias")), eps);
    }
    return x;
}

template <typename T>
ad::Var<T> mlm_logits(const Bound<T>& p, const ad::Var<T>& hidden) {
    return ad::add_row(ad::matmul_bt(hidden, p.at("emb.token")), p.at("mlm.bias"));
}

template <typename T>
ad::Var<T> sparse_reps(const ModelConfig& config, const Bound<T>& p, const PackedBatch& batch) {
    auto logits = mlm_logits(p, hidden_states(config, p, batch));
    std::vector<bool> content(batch.ids.size());
    for (std::size_t r = 0; r < batch.ids.size(); ++r) {
        const auto id = batch.ids[r];
        content[r] = id != Vocabulary::kPad && id != Vocabulary::kCls && id != Vocabulary::kSep &&
                     id != Vocabulary::kMask;
    }
    auto pooled = ad::segment_max(ad::log1p_relu(logits),
                                  std::span<const std::size_t>(batch.offsets), content);
    std::vector<T> keep(config.vocab_size, T{1});
    for (std::uint32_t j = 0; j < Vocabulary::kNumSpecial; ++j) keep[j] = T{0};
    return ad::scale_cols(pooled, std::move(keep));
}

#define XDR_INSTANTIATE(T)                                                                    \
    template Bound<T> bind(ad::Tape<T>&, const ParameterMap<T>&, bool);                       \
    template Bound<T> bind(ad::Tape<T>&, const ParameterMap<T>&, const std::set<std::string>&); \
    template ad::Var<T> hidden_states(const ModelConfig&, const Bound<T>&, const PackedBatch&); \
    template ad::Var<T> mlm_logits(const Bound<T>&, const ad::Var<T>&);                       \
    template ad::Var<T> sparse_reps(const ModelConfig&, const Bound<T>&, const PackedBatch&);

XDR_INSTANTIATE(float)
XDR_INSTANTIATE(double)

#undef XDR_INSTANTIATE

}  // namespace model

Tensor<float> forward_mlm(const ModelConfig& config, const Weights& weights,
                          std::span<const std::uint32_t> ids) {
    std::vector<std::vector<std::uint32_t>> seqs{std::vector<std::uint32_t>(ids.begin(), ids.end())};
    const PackedBatch batch = pack(seqs, config);
    ad::Tape<float> tape;
    const auto bound = model::bind(tape, weights, false);
    return model::mlm_logits(bound, model::hidden_states(config, bound, batch)).value();
}

}  // namespace xdr
