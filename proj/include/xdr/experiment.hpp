#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xdr/dataset.hpp"
#include "xdr/eval.hpp"
#include "xdr/index.hpp"
#include "xdr/model.hpp"
#include "xdr/trainer.hpp"
#include "xdr/vocab.hpp"

namespace xdr {

/// A test collection: corpus, queries and judgments.
struct EvalSet {
    std::string name;
    Corpus corpus;
    std::vector<Query> queries;
    Qrels qrels;
};

/// Converts ranked internal ids to a run keyed by query id.
void append_to_run(Run& run, const InvertedIndex& index, const RankedList& ranked);

/// SPLADE run over an impact index of the collection.
struct SpladeRun {
    Run run;
    SparsityStats sparsity;
    InvertedIndex index;
};

SpladeRun splade_search(const ModelConfig& config, const Weights& weights, const Vocabulary& vocab,
                        const EvalSet& set, std::size_t cutoff);

Run bm25_search(const Vocabulary& vocab, const EvalSet& set, std::size_t cutoff, Bm25Params params = {});

/// Report over the given systems with every non-baseline system tested
/// against each named baseline present.
EvalReport make_report(const std::string& dataset, std::vector<SystemEval> systems,
                       const std::vector<std::string>& baselines = {"bm25", "zero_shot"},
                       double alpha = 0.05);

std::uint64_t vocabulary_checksum(const Vocabulary& vocab);

/// Tokenizes both corpora and resolves the triples against the source corpus.
PipelineData make_pipeline_data(const Vocabulary& vocab, const Corpus& source, const Corpus& target,
                                std::span<const TrainTriple> triples, std::size_t max_seq_len);

/// Target-side evaluation of pipeline variants: BM25, the zero-shot
/// stage-(c) model of the first mode, and each mode's composed model under
/// its mode name ("full", "wo_source", "wo_pretraining").
struct VariantEval {
    EvalReport report;
    std::vector<PipelineResult> pipelines;
};

VariantEval evaluate_variants(const PipelineData& data, const PipelineSettings& settings,
                              std::span<const PipelineMode> modes, const Vocabulary& vocab,
                              const EvalSet& target, std::size_t cutoff, PipelineCache* cache = nullptr,
                              const LogSink& log = {});

}  // namespace xdr
