#include "xdr/experiment.hpp"

#include <algorithm>

#include "xdr/error.hpp"
#include "xdr/sparse.hpp"

namespace xdr {

void append_to_run(Run& run, const InvertedIndex& index, const RankedList& ranked) {
    auto& entries = run[ranked.query_id];
    entries.clear();
    entries.reserve(ranked.hits.size());
    for (const auto& h : ranked.hits) entries.push_back({index.doc_id(h.doc), h.score});
}

SpladeRun splade_search(const ModelConfig& config, const Weights& weights, const Vocabulary& vocab,
                        const EvalSet& set, std::size_t cutoff) {
    if (set.corpus.empty()) throw Error("search over an empty corpus");
    const auto doc_tokens = tokenize_corpus(set.corpus, vocab, config.max_seq_len);
    const auto docs = encode_sparse_batch(config, weights, doc_tokens);
    std::vector<std::string> ids;
    ids.reserve(set.corpus.size());
    for (const auto& d : set.corpus) ids.push_back(d.id);

    std::vector<std::vector<std::uint32_t>> query_tokens;
    for (const auto& q : set.queries) query_tokens.push_back(tokenize(q.text, vocab, config.max_seq_len));
    const auto queries = encode_sparse_batch(config, weights, query_tokens);

    SpladeRun out;
    out.index = InvertedIndex::build_impact(ids, docs, config.vocab_size);
    out.sparsity = sparsity_stats(docs, queries);
    for (std::size_t i = 0; i < set.queries.size(); ++i) {
        append_to_run(out.run, out.index, retrieve_sparse(out.index, queries[i], cutoff, set.queries[i].id));
    }
    return out;
}

Run bm25_search(const Vocabulary& vocab, const EvalSet& set, std::size_t cutoff, Bm25Params params) {
    const InvertedIndex index = InvertedIndex::build_frequency(set.corpus, vocab);
    Run run;
    for (const auto& q : set.queries) {
        const auto terms = bm25_terms(q.text, vocab);
        append_to_run(run, index, retrieve_bm25(index, terms, cutoff, q.id, params));
    }
    return run;
}

EvalReport make_report(const std::string& dataset, std::vector<SystemEval> systems,
                       const std::vector<std::string>& baselines, double alpha) {
    EvalReport report;
    report.dataset = dataset;
    report.systems = std::move(systems);
    for (const auto& s : report.systems) {
        if (std::find(baselines.begin(), baselines.end(), s.name) != baselines.end()) continue;
        for (const auto& b : baselines) {
            const SystemEval* base = report.find(b);
            if (base) report.significance.push_back(compare_systems(s, *base, alpha));
        }
    }
    return report;
}

std::uint64_t vocabulary_checksum(const Vocabulary& vocab) {
    const std::string text = vocab.serialize();
    return fnv1a64({reinterpret_cast<const unsigned char*>(text.data()), text.size()});
}

PipelineData make_pipeline_data(const Vocabulary& vocab, const Corpus& source, const Corpus& target,
                                std::span<const TrainTriple> triples, std::size_t max_seq_len) {
    PipelineData data;
    data.source_tokens = tokenize_corpus(source, vocab, max_seq_len);
    data.target_tokens = tokenize_corpus(target, vocab, max_seq_len);
    data.triples = resolve_triples(triples, source, vocab, max_seq_len);
    data.vocab_checksum = vocabulary_checksum(vocab);
    return data;
}

VariantEval evaluate_variants(const PipelineData& data, const PipelineSettings& settings,
                              std::span<const PipelineMode> modes, const Vocabulary& vocab,
                              const EvalSet& target, std::size_t cutoff, PipelineCache* cache,
                              const LogSink& log) {
    if (modes.empty()) throw Error("no pipeline modes requested");
    PipelineCache local;
    PipelineCache& c = cache ? *cache : local;
    VariantEval out;
    for (PipelineMode m : modes) out.pipelines.push_back(run_pipeline(data, settings, m, &c, log));

    auto splade = [&](const std::string& name, const Checkpoint& ckpt) {
        SpladeRun r = splade_search(ckpt.config(), ckpt.weights, vocab, target, cutoff);
        SystemEval e = evaluate_run(name, r.run, target.qrels);
        e.sparsity = r.sparsity;
        return e;
    };
    std::vector<SystemEval> systems;
    systems.push_back(evaluate_run("bm25", bm25_search(vocab, target, cutoff), target.qrels));
    systems.push_back(splade("zero_shot", out.pipelines.front().finetune));
    for (const auto& p : out.pipelines) systems.push_back(splade(mode_name(p.mode), p.composed));
    out.report = make_report(target.name, std::move(systems));
    return out;
}

}  // namespace xdr
