#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xdr/dataset.hpp"
#include "xdr/eval.hpp"

namespace xdr {

/// Parameters of the synthetic two-domain benchmark.
///
/// Shared terms are split evenly into topic word sets. Each domain owns
/// `exclusive_terms` synonyms; exclusive term e belongs to topic e % n_topics
/// and stands for shared word e / n_topics of that topic.
struct SynthSpec {
    std::size_t n_topics = 8;
    std::size_t shared_terms = 200;
    std::size_t exclusive_terms = 60;
    std::size_t docs_per_domain = 800;
    std::size_t queries_per_domain = 100;
    /// Source queries kept for evaluation; the rest feed the training triples.
    std::size_t heldout_source_queries = 50;
    std::size_t triples = 2000;
    /// Probability that a shared word with a synonym is followed by it.
    double strength = 0.8;
    /// Probability that a document word is drawn from its topic.
    double topic_rate = 0.7;
    /// Probability that a query word is a domain-exclusive synonym.
    double query_exclusive_rate = 0.5;
    std::size_t doc_min_words = 10;
    std::size_t doc_max_words = 16;
    std::size_t query_words = 3;
    /// In-window occurrences every target-exclusive term must reach.
    std::size_t min_cooccurrence = 5;
    std::size_t window = 3;
    std::uint64_t seed = 7;

    /// Throws on infeasible sizes.
    void validate() const;
};

struct SynthDomain {
    Corpus corpus;
    std::vector<Query> queries;
    Qrels qrels;
    /// Empty for the target domain.
    std::vector<TrainTriple> triples;
    std::vector<std::size_t> doc_topics;
    std::vector<std::size_t> query_topics;
    std::vector<std::string> exclusive_terms;
};

struct SynthBenchmark {
    SynthDomain source;
    SynthDomain target;
    std::vector<std::string> shared_terms;
    /// Minimum over target-exclusive terms of in-window co-occurrences with a
    /// shared word of the same topic.
    std::size_t min_target_cooccurrence = 0;
};

SynthBenchmark synth_generate(const SynthSpec& spec);

/// Writes source/{corpus.jsonl, queries.tsv, qrels.txt, triples.tsv} and
/// target/{corpus.jsonl, queries.tsv, qrels.txt} under dir.
void write_benchmark(const SynthBenchmark& bench, const std::filesystem::path& dir);

}  // namespace xdr
