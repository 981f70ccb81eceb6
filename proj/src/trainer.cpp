#include "xdr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <map>

#include "xdr/adam.hpp"
#include "xdr/vocab.hpp"

namespace xdr {

MaskedRow mask_tokens(std::span<const std::uint32_t> ids, double mask_prob, std::size_t vocab_size,
                      Rng& rng) {
    if (!(mask_prob > 0.0 && mask_prob < 1.0)) throw Error("mask_prob must be in (0, 1)");
    if (vocab_size <= Vocabulary::kNumSpecial) throw Error("vocabulary has no ordinary terms");
    MaskedRow row;
    row.input.assign(ids.begin(), ids.end());
    row.labels.assign(ids.size(), MaskedRow::kIgnore);
    row.actions.assign(ids.size(), MaskAction::None);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (Vocabulary::is_special(ids[i])) continue;
        if (!rng.bernoulli(mask_prob)) continue;
        row.labels[i] = ids[i];
        ++row.selected;
        const double u = rng.uniform();
        if (u < 0.8) {
            row.actions[i] = MaskAction::Mask;
            row.input[i] = Vocabulary::kMask;
        } else if (u < 0.9) {
            row.actions[i] = MaskAction::Random;
            row.input[i] = static_cast<std::uint32_t>(
                Vocabulary::kNumSpecial + rng.below(vocab_size - Vocabulary::kNumSpecial));
        } else {
            row.actions[i] = MaskAction::Keep;
        }
    }
    return row;
}

std::set<std::string> frozen_for(Stage stage, const ParameterPartition& partition) {
    switch (stage) {
        case Stage::PretrainSource:
        case Stage::PretrainTarget: return partition.task_names;
        case Stage::FinetuneSource: return partition.domain_names;
        case Stage::Base: return {};
        case Stage::Composed: break;
    }
    throw Error("stage " + stage_name(stage) + " is not trainable");
}

std::string to_json_line(const StepLog& log) {
    return nlohmann::json{{"step", log.step},
                          {"stage", stage_name(log.stage)},
                          {"loss", log.loss},
                          {"flops_term", log.flops_term}}
        .dump();
}

namespace {

std::uint64_t stage_seed(const StageSpec& spec) {
    return spec.seed ^ (0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(spec.stage) + 1));
}

std::set<std::string> resolve_frozen(const StageSpec& spec, const ParameterPartition* partition) {
    if (!partition) return spec.frozen;
    auto expected = frozen_for(spec.stage, *partition);
    if (!spec.frozen.empty() && spec.frozen != expected) {
        throw Error("stage " + stage_name(spec.stage) + " spec does not freeze its required subset");
    }
    return expected;
}

std::map<std::string, std::string> stage_notes(const StageSpec& spec) {
    return {{"seed", std::to_string(spec.seed)}, {"steps", std::to_string(spec.steps)}};
}

/// One masked batch: packed inputs, the rows that carry labels, and the labels.
struct MlmBatch {
    std::vector<std::vector<std::uint32_t>> inputs;
    std::vector<std::size_t> rows;
    std::vector<std::int64_t> targets;
};

MlmBatch sample_mlm_batch(std::span<const std::vector<std::uint32_t>> corpus, std::size_t batch,
                          double mask_prob, std::size_t vocab_size, Rng& rng) {
    MlmBatch b;
    std::size_t base_row = 0;
    for (std::size_t i = 0; i < batch; ++i) {
        const auto& seq = corpus[rng.below(corpus.size())];
        MaskedRow row = mask_tokens(seq, mask_prob, vocab_size, rng);
        for (std::size_t p = 0; p < row.labels.size(); ++p) {
            if (row.labels[p] == MaskedRow::kIgnore) continue;
            b.rows.push_back(base_row + p);
            b.targets.push_back(row.labels[p]);
        }
        base_row += row.input.size();
        b.inputs.push_back(std::move(row.input));
    }
    return b;
}

Weights train_mlm(const ModelConfig& config, Weights weights,
                  std::span<const std::vector<std::uint32_t>> corpus,
                  const std::set<std::string>& frozen, const StageSpec& spec, const LogSink& log) {
    if (corpus.empty()) throw Error("cannot pre-train on an empty corpus");
    if (spec.batch == 0) throw Error("batch size must be positive");
    Rng rng(stage_seed(spec));
    Adam adam(AdamConfig{.lr = spec.lr});
    for (std::size_t step = 0; step < spec.steps; ++step) {
        MlmBatch b = sample_mlm_batch(corpus, spec.batch, spec.mask_prob, config.vocab_size, rng);
        if (b.targets.empty()) continue;
        const PackedBatch packed = pack(b.inputs, config);
        ad::Tape<float> tape;
        const auto bound = model::bind(tape, weights, frozen);
        auto hidden = model::hidden_states(config, bound, packed);
        auto logits = model::mlm_logits(bound, ad::select_rows(hidden, std::span<const std::size_t>(b.rows)));
        auto loss = ad::softmax_cross_entropy(logits, std::span<const std::int64_t>(b.targets));
        const double loss_value = loss.value().item();
        auto grads = tape.backward(loss);
        adam.step(weights, grads, frozen);
        if (log) log({step, spec.stage, loss_value, 0.0});
    }
    return weights;
}

}  // namespace

Checkpoint train_base(const ModelConfig& config, std::span<const std::vector<std::uint32_t>> corpus,
                      const StageSpec& spec, std::uint64_t vocab_checksum, const LogSink& log) {
    if (spec.stage != Stage::Base) throw Error("train_base needs a base stage spec");
    Weights w = train_mlm(config, init_weights(config, spec.seed), corpus, {}, spec, log);
    return make_checkpoint(std::move(w), config, Stage::Base, {}, vocab_checksum, stage_notes(spec));
}

Checkpoint pretrain_mlm(const Checkpoint& base, std::span<const std::vector<std::uint32_t>> corpus,
                        const ParameterPartition& partition, const StageSpec& spec,
                        const LogSink& log) {
    if (spec.stage != Stage::PretrainSource && spec.stage != Stage::PretrainTarget) {
        throw Error("pretrain_mlm needs a pretrain_* stage spec, got " + stage_name(spec.stage));
    }
    if (partition.k != base.config().k_domain_layers) {
        throw Error("partition k differs from the checkpoint's k");
    }
    if (corpus.empty()) throw Error("cannot pre-train on an empty corpus");
    const auto frozen = resolve_frozen(spec, &partition);
    Weights w = train_mlm(base.config(), base.weights, corpus, frozen, spec, log);
    return make_checkpoint(std::move(w), base.config(), spec.stage, {base.link()},
                           base.manifest.vocab_checksum, stage_notes(spec));
}

double evaluate_mlm_loss(const ModelConfig& config, const Weights& weights,
                         std::span<const std::vector<std::uint32_t>> corpus, double mask_prob,
                         std::uint64_t seed, std::size_t max_sequences) {
    Rng rng(seed);
    double total = 0.0;
    std::size_t count = 0;
    const std::size_t n = std::min(corpus.size(), max_sequences);
    for (std::size_t start = 0; start < n; start += 16) {
        MlmBatch b;
        std::size_t base_row = 0;
        for (std::size_t i = start; i < std::min(n, start + 16); ++i) {
            MaskedRow row = mask_tokens(corpus[i], mask_prob, config.vocab_size, rng);
            for (std::size_t p = 0; p < row.labels.size(); ++p) {
                if (row.labels[p] == MaskedRow::kIgnore) continue;
                b.rows.push_back(base_row + p);
                b.targets.push_back(row.labels[p]);
            }
            base_row += row.input.size();
            b.inputs.push_back(std::move(row.input));
        }
        if (b.targets.empty()) continue;
        const PackedBatch packed = pack(b.inputs, config);
        ad::Tape<float> tape;
        const auto bound = model::bind(tape, weights, false);
        auto hidden = model::hidden_states(config, bound, packed);
        auto logits = model::mlm_logits(bound, ad::select_rows(hidden, std::span<const std::size_t>(b.rows)));
        auto loss = ad::softmax_cross_entropy(logits, std::span<const std::int64_t>(b.targets));
        total += loss.value().item() * static_cast<double>(b.targets.size());
        count += b.targets.size();
    }
    if (count == 0) throw Error("no supervised positions");
    return total / static_cast<double>(count);
}

template <typename T>
RankingLoss<T> ranking_loss(const ad::Var<T>& q, const ad::Var<T>& pos, const ad::Var<T>& neg,
                            T lambda_q, T lambda_d) {
    if (q.shape() != pos.shape() || q.shape() != neg.shape()) {
        throw DimensionError("ranking loss needs equal query/positive/negative shapes");
    }
    const std::size_t b = q.value().rows();
    auto logits = ad::concat_cols(ad::rowdot(q, pos), ad::matmul_bt(q, neg));
    const std::vector<std::int64_t> targets(b, 0);
    auto ce = ad::softmax_cross_entropy(logits, std::span<const std::int64_t>(targets));
    auto mq = ad::mean_rows(q);
    auto fq = ad::sum(ad::mul(mq, mq));
    auto md = ad::scale(ad::add(ad::mean_rows(pos), ad::mean_rows(neg)), T{0.5});
    auto fd = ad::sum(ad::mul(md, md));
    RankingLoss<T> out;
    out.contrastive = ce.value().item();
    out.flops_q = fq.value().item();
    out.flops_d = fd.value().item();
    out.total = ad::add(ce, ad::add(ad::scale(fq, lambda_q), ad::scale(fd, lambda_d)));
    return out;
}

template RankingLoss<float> ranking_loss(const ad::Var<float>&, const ad::Var<float>&,
                                         const ad::Var<float>&, float, float);
template RankingLoss<double> ranking_loss(const ad::Var<double>&, const ad::Var<double>&,
                                          const ad::Var<double>&, double, double);

std::vector<TokenizedTriple> resolve_triples(std::span<const TrainTriple> triples,
                                             const Corpus& corpus, const Vocabulary& vocab,
                                             std::size_t max_seq_len) {
    std::vector<TokenizedTriple> out;
    std::set<std::string> unknown;
    for (const auto& t : triples) {
        if (t.positive == t.negative) throw Error("triple positive equals negative: " + t.positive);
        const auto p = corpus.find(t.positive);
        const auto n = corpus.find(t.negative);
        if (p < 0) unknown.insert(t.positive);
        if (n < 0) unknown.insert(t.negative);
        if (p < 0 || n < 0) continue;
        out.push_back({tokenize(t.query, vocab, max_seq_len), static_cast<std::size_t>(p),
                       static_cast<std::size_t>(n)});
    }
    if (!unknown.empty()) {
        std::string msg = "triples reference unknown document ids:";
        for (const auto& id : unknown) msg += " " + id;
        throw Error(msg);
    }
    return out;
}

Checkpoint finetune_ir(const Checkpoint& input, std::span<const TokenizedTriple> triples,
                       std::span<const std::vector<std::uint32_t>> corpus,
                       const ParameterPartition& partition, const StageSpec& spec,
                       const LogSink& log) {
    if (spec.stage != Stage::FinetuneSource) throw Error("finetune_ir needs a finetune_source spec");
    if (input.stage() != Stage::PretrainSource && input.stage() != Stage::Base) {
        throw Error("finetune_ir starts from pretrain_source or base, got " + stage_name(input.stage()));
    }
    if (partition.k != input.config().k_domain_layers) {
        throw Error("partition k differs from the checkpoint's k");
    }
    if (triples.empty()) throw Error("no training triples");
    for (const auto& t : triples) {
        if (t.positive >= corpus.size() || t.negative >= corpus.size()) {
            throw Error("triple document index outside the corpus");
        }
    }
    const auto frozen = resolve_frozen(spec, &partition);
    const ModelConfig& config = input.config();
    Weights weights = input.weights;
    Rng rng(stage_seed(spec));
    Adam adam(AdamConfig{.lr = spec.lr});
    const std::size_t b = spec.batch;
    if (b == 0) throw Error("batch size must be positive");

    std::vector<std::size_t> q_rows(b), p_rows(b), n_rows(b);
    for (std::size_t i = 0; i < b; ++i) {
        q_rows[i] = i;
        p_rows[i] = b + i;
        n_rows[i] = 2 * b + i;
    }
    for (std::size_t step = 0; step < spec.steps; ++step) {
        std::vector<std::size_t> picks(b);
        for (auto& p : picks) p = rng.below(triples.size());
        std::vector<std::vector<std::uint32_t>> seqs;
        seqs.reserve(3 * b);
        for (auto p : picks) seqs.push_back(triples[p].query);
        for (auto p : picks) seqs.push_back(corpus[triples[p].positive]);
        for (auto p : picks) seqs.push_back(corpus[triples[p].negative]);
        const PackedBatch packed = pack(seqs, config);

        ad::Tape<float> tape;
        const auto bound = model::bind(tape, weights, frozen);
        auto reps = model::sparse_reps(config, bound, packed);
        auto loss = ranking_loss(ad::select_rows(reps, std::span<const std::size_t>(q_rows)),
                                 ad::select_rows(reps, std::span<const std::size_t>(p_rows)),
                                 ad::select_rows(reps, std::span<const std::size_t>(n_rows)),
                                 static_cast<float>(spec.lambda_q), static_cast<float>(spec.lambda_d));
        const double total = loss.total.value().item();
        const double flops = spec.lambda_q * loss.flops_q + spec.lambda_d * loss.flops_d;
        auto grads = tape.backward(loss.total);
        adam.step(weights, grads, frozen);
        if (log) log({step, spec.stage, total, flops});
    }
    auto notes = stage_notes(spec);
    notes["lambda_q"] = std::to_string(spec.lambda_q);
    notes["lambda_d"] = std::to_string(spec.lambda_d);
    return make_checkpoint(std::move(weights), config, Stage::FinetuneSource, {input.link()},
                           input.manifest.vocab_checksum, std::move(notes));
}

std::string mode_name(PipelineMode mode) {
    switch (mode) {
        case PipelineMode::Full: return "full";
        case PipelineMode::WoSource: return "wo_source";
        case PipelineMode::WoPretraining: return "wo_pretraining";
    }
    throw Error("invalid pipeline mode");
}

PipelineMode parse_mode(const std::string& name) {
    for (auto m : {PipelineMode::Full, PipelineMode::WoSource, PipelineMode::WoPretraining}) {
        if (mode_name(m) == name) return m;
    }
    throw Error("unknown pipeline mode '" + name + "'");
}

StageSpec PipelineSettings::spec_for(Stage stage, const ParameterPartition& partition) const {
    StageSpec s;
    s.stage = stage;
    s.batch = batch;
    s.seed = seed;
    s.lr = lr;
    s.mask_prob = mask_prob;
    s.lambda_q = lambda_q;
    s.lambda_d = lambda_d;
    s.frozen = frozen_for(stage, partition);
    switch (stage) {
        case Stage::Base: s.steps = base_steps; break;
        case Stage::PretrainSource:
        case Stage::PretrainTarget: s.steps = pretrain_steps; break;
        case Stage::FinetuneSource: s.steps = finetune_steps; break;
        case Stage::Composed: throw Error("composed is not a training stage");
    }
    return s;
}

PipelineResult run_pipeline(const PipelineData& data, const PipelineSettings& settings,
                            PipelineMode mode, PipelineCache* cache, const LogSink& log) {
    if (data.source_tokens.empty() || data.target_tokens.empty()) {
        throw Error("pipeline needs both source and target corpora");
    }
    if (data.triples.empty()) throw Error("pipeline needs source training triples");
    settings.model.validate();
    const ParameterPartition partition = partition_parameters(settings.model);
    PipelineCache local;
    PipelineCache& c = cache ? *cache : local;

    auto base = [&]() -> const Checkpoint& {
        if (!c.base) {
            c.base = train_base(settings.model, data.source_tokens,
                                settings.spec_for(Stage::Base, partition), data.vocab_checksum, log);
        }
        return *c.base;
    };
    auto pretrain_source = [&]() -> const Checkpoint& {
        if (!c.pretrain_source) {
            c.pretrain_source = pretrain_mlm(base(), data.source_tokens, partition,
                                             settings.spec_for(Stage::PretrainSource, partition), log);
        }
        return *c.pretrain_source;
    };
    auto pretrain_target = [&]() -> const Checkpoint& {
        if (!c.pretrain_target) {
            c.pretrain_target = pretrain_mlm(base(), data.target_tokens, partition,
                                             settings.spec_for(Stage::PretrainTarget, partition), log);
        }
        return *c.pretrain_target;
    };
    auto finetune = [&](const Checkpoint& from, std::optional<Checkpoint>& slot) -> const Checkpoint& {
        if (!slot) {
            slot = finetune_ir(from, data.triples, data.source_tokens, partition,
                               settings.spec_for(Stage::FinetuneSource, partition), log);
        }
        return *slot;
    };

    PipelineResult r;
    r.mode = mode;
    r.base = base();
    switch (mode) {
        case PipelineMode::Full:
            r.pretrain_source = pretrain_source();
            r.pretrain_target = pretrain_target();
            r.finetune = finetune(*r.pretrain_source, c.finetune_from_source);
            r.composed = compose(*r.pretrain_target, r.finetune);
            break;
        case PipelineMode::WoSource:
            r.pretrain_target = pretrain_target();
            r.finetune = finetune(r.base, c.finetune_from_base);
            r.composed = compose(*r.pretrain_target, r.finetune);
            break;
        case PipelineMode::WoPretraining:
            r.finetune = finetune(r.base, c.finetune_from_base);
            r.composed = compose(r.base, r.finetune);
            break;
    }
    return r;
}

}  // namespace xdr
