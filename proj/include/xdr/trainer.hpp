#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "xdr/autodiff.hpp"
#include "xdr/dataset.hpp"
#include "xdr/params.hpp"
#include "xdr/rng.hpp"
#include "xdr/sparse.hpp"

namespace xdr {

// ---------------------------------------------------------------------------
// MLM masking

enum class MaskAction : std::uint8_t { None, Mask, Random, Keep };

/// One masked sequence. labels[i] is the original id at selected positions
/// and kIgnore elsewhere.
struct MaskedRow {
    static constexpr std::int64_t kIgnore = -1;

    std::vector<std::uint32_t> input;
    std::vector<std::int64_t> labels;
    std::vector<MaskAction> actions;
    std::size_t selected = 0;
};

/// BERT-style masking: every non-special position is selected with
/// probability mask_prob; selected positions become [MASK] (80%), a random
/// non-special id (10%) or stay unchanged (10%).
MaskedRow mask_tokens(std::span<const std::uint32_t> ids, double mask_prob, std::size_t vocab_size,
                      Rng& rng);

// ---------------------------------------------------------------------------
// Stages

struct StageSpec {
    Stage stage = Stage::PretrainSource;
    std::size_t steps = 1000;
    std::size_t batch = 16;
    std::uint64_t seed = 7;
    double lr = 1e-3;
    double mask_prob = 0.15;
    double lambda_q = 1e-3;
    double lambda_d = 1e-4;
    /// Tensors the optimizer must not touch.
    std::set<std::string> frozen;
};

/// Pre-training stages freeze the task subset; fine-tuning freezes the domain
/// subset; the base stage trains everything.
std::set<std::string> frozen_for(Stage stage, const ParameterPartition& partition);

struct StepLog {
    std::size_t step = 0;
    Stage stage = Stage::Base;
    double loss = 0.0;
    double flops_term = 0.0;
};

using LogSink = std::function<void(const StepLog&)>;

/// JSON-lines rendering of a log record.
std::string to_json_line(const StepLog& log);

/// Full-parameter MLM training from a fresh initialization; the stand-in for
/// the generic pre-trained model every pipeline starts from.
Checkpoint train_base(const ModelConfig& config, std::span<const std::vector<std::uint32_t>> corpus,
                      const StageSpec& spec, std::uint64_t vocab_checksum, const LogSink& log = {});

/// Continued MLM pre-training with the task subset frozen.
Checkpoint pretrain_mlm(const Checkpoint& base, std::span<const std::vector<std::uint32_t>> corpus,
                        const ParameterPartition& partition, const StageSpec& spec,
                        const LogSink& log = {});

/// Mean MLM loss over a fixed, seeded masking of (a prefix of) the corpus.
double evaluate_mlm_loss(const ModelConfig& config, const Weights& weights,
                         std::span<const std::vector<std::uint32_t>> corpus, double mask_prob,
                         std::uint64_t seed, std::size_t max_sequences = 64);

// ---------------------------------------------------------------------------
// Ranking

template <typename T>
struct RankingLoss {
    ad::Var<T> total;
    T contrastive{};
    T flops_q{};
    T flops_d{};
};

/// In-batch softmax contrastive loss over [B x V] query, positive and
/// negative representations, plus FLOPS regularization of the queries
/// (lambda_q) and of all 2B documents (lambda_d).
template <typename T>
RankingLoss<T> ranking_loss(const ad::Var<T>& q, const ad::Var<T>& pos, const ad::Var<T>& neg,
                            T lambda_q, T lambda_d);

/// Triples resolved against the source corpus. Throws listing every unknown
/// document id.
struct TokenizedTriple {
    std::vector<std::uint32_t> query;
    std::size_t positive = 0;
    std::size_t negative = 0;
};

std::vector<TokenizedTriple> resolve_triples(std::span<const TrainTriple> triples,
                                             const Corpus& corpus, const Vocabulary& vocab,
                                             std::size_t max_seq_len);

/// Fine-tunes the task subset on source relevance triples with the domain
/// subset frozen.
Checkpoint finetune_ir(const Checkpoint& input, std::span<const TokenizedTriple> triples,
                       std::span<const std::vector<std::uint32_t>> corpus,
                       const ParameterPartition& partition, const StageSpec& spec,
                       const LogSink& log = {});

// ---------------------------------------------------------------------------
// Pipeline

enum class PipelineMode { Full, WoSource, WoPretraining };

std::string mode_name(PipelineMode mode);
PipelineMode parse_mode(const std::string& name);

struct PipelineSettings {
    ModelConfig model;
    std::uint64_t seed = 7;
    std::size_t base_steps = 1000;
    std::size_t pretrain_steps = 1000;
    std::size_t finetune_steps = 1000;
    std::size_t batch = 16;
    double lr = 1e-3;
    double mask_prob = 0.15;
    double lambda_q = 1e-3;
    double lambda_d = 1e-4;

    StageSpec spec_for(Stage stage, const ParameterPartition& partition) const;
};

struct PipelineData {
    std::vector<std::vector<std::uint32_t>> source_tokens;
    std::vector<std::vector<std::uint32_t>> target_tokens;
    std::vector<TokenizedTriple> triples;
    std::uint64_t vocab_checksum = 0;
};

/// Checkpoints of one pipeline run. `composed` is stage (d).
struct PipelineResult {
    PipelineMode mode = PipelineMode::Full;
    Checkpoint base;
    std::optional<Checkpoint> pretrain_source;
    std::optional<Checkpoint> pretrain_target;
    Checkpoint finetune;
    Checkpoint composed;
};

/// Stage outputs shared between modes of the same settings.
struct PipelineCache {
    std::optional<Checkpoint> base;
    std::optional<Checkpoint> pretrain_source;
    std::optional<Checkpoint> pretrain_target;
    std::optional<Checkpoint> finetune_from_base;
    std::optional<Checkpoint> finetune_from_source;
};

/// full: b.1 and b.2 from base, c from b.1, d = compose(b.2, c).
/// wo_source: b.2 from base, c from base, d = compose(b.2, c).
/// wo_pretraining: c from base, d = compose(base, c), which equals c.
PipelineResult run_pipeline(const PipelineData& data, const PipelineSettings& settings,
                            PipelineMode mode, PipelineCache* cache = nullptr,
                            const LogSink& log = {});

}  // namespace xdr
