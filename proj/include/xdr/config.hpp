#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "xdr/dataset.hpp"
#include "xdr/eval.hpp"
#include "xdr/trainer.hpp"

namespace xdr {

/// Files of one collection; empty paths are absent.
struct DatasetPaths {
    std::filesystem::path corpus;
    std::filesystem::path queries;
    std::filesystem::path qrels;
    std::filesystem::path triples;
};

struct PipelineConfig {
    std::filesystem::path workdir;
    DatasetPaths source;
    DatasetPaths target;
    /// Upper bound on the vocabulary size, specials included.
    std::size_t vocab_max = 2000;
    /// `settings.model.vocab_size` is replaced by the built vocabulary size.
    PipelineSettings settings;
    PipelineMode mode = PipelineMode::Full;
    std::vector<std::int64_t> sweep;
    std::size_t cutoff = 100;

    /// Throws unless the referenced files exist, k and the sweep values lie
    /// in [0, layers) and the workdir can be created and written.
    void validate() const;
};

/// Parses a JSON configuration; relative paths resolve against base_dir.
/// Unknown keys are errors.
PipelineConfig parse_config(std::string_view json_text, const std::filesystem::path& base_dir);
PipelineConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const PipelineConfig& config);

struct CollectionStats {
    std::size_t documents = 0;
    std::size_t queries = 0;
    std::size_t judged_queries = 0;
    std::size_t judgments = 0;
    std::size_t triples = 0;
    /// Mean word counts of the tokenized text.
    double avg_doc_words = 0.0;
    double avg_query_words = 0.0;

    std::string summary() const;
};

struct Collection {
    Corpus corpus;
    std::vector<Query> queries;
    Qrels qrels;
    std::vector<TrainTriple> triples;
    CollectionStats stats;
};

CollectionStats collection_stats(const Collection& c);

/// Reads the files present in `paths` and checks cross references: query
/// ids must be unique, qrels must name known queries and documents, triples
/// known documents. Offenders are listed in the error.
Collection ingest(const DatasetPaths& paths);

}  // namespace xdr
