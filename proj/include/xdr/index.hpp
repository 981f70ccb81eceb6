#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "xdr/dataset.hpp"
#include "xdr/sparse.hpp"
#include "xdr/vocab.hpp"

namespace xdr {

enum class IndexKind { Impact, Frequency };

std::string index_kind_name(IndexKind kind);

struct Posting {
    std::uint32_t doc = 0;
    /// SPLADE weight (impact) or term frequency (frequency).
    float weight = 0.0f;

    friend bool operator==(const Posting&, const Posting&) = default;
};

/// Term-major posting lists over dense internal doc ids (corpus order).
///
/// Impact indexes store learned term weights; frequency indexes store raw
/// term frequencies and document lengths for BM25. Immutable once built.
class InvertedIndex {
public:
    InvertedIndex() = default;

    /// Impact index over precomputed document representations.
    static InvertedIndex build_impact(std::span<const std::string> doc_ids,
                                      std::span<const SparseVector> docs, std::size_t vocab_size);

    /// Frequency index over word-tokenized documents (no length truncation).
    static InvertedIndex build_frequency(const Corpus& corpus, const Vocabulary& vocab);

    IndexKind kind() const noexcept { return kind_; }
    std::size_t vocab_size() const noexcept { return postings_.size(); }
    std::size_t num_docs() const noexcept { return doc_ids_.size(); }
    double avgdl() const noexcept { return avgdl_; }
    const std::string& doc_id(std::uint32_t doc) const { return doc_ids_.at(doc); }
    std::uint32_t doc_length(std::uint32_t doc) const { return doc_lengths_.at(doc); }
    std::span<const Posting> postings(std::uint32_t term) const;
    std::size_t document_frequency(std::uint32_t term) const { return postings(term).size(); }

    /// Checksum over the serialized postings and doc store.
    std::uint64_t checksum() const;

    /// Writes {meta.json, postings.bin, docstore.bin}.
    void save(const std::filesystem::path& dir) const;
    static InvertedIndex load(const std::filesystem::path& dir);

    std::vector<unsigned char> serialize_postings() const;
    std::vector<unsigned char> serialize_docstore() const;

    friend bool operator==(const InvertedIndex&, const InvertedIndex&) = default;

private:
    void finalize_stats();

    IndexKind kind_ = IndexKind::Impact;
    std::vector<std::vector<Posting>> postings_;
    std::vector<std::string> doc_ids_;
    std::vector<std::uint32_t> doc_lengths_;
    double avgdl_ = 0.0;
};

/// Descending score, ties by ascending internal doc id.
struct ScoredDoc {
    std::uint32_t doc = 0;
    double score = 0.0;
};

struct RankedList {
    std::string query_id;
    std::vector<ScoredDoc> hits;
};

/// Sorts by (score desc, doc asc) and truncates to cutoff.
void rank_and_truncate(std::vector<ScoredDoc>& hits, std::size_t cutoff);

/// Exact top-cutoff by sparse dot product, term-at-a-time accumulation.
/// Documents with no shared term are not returned.
RankedList retrieve_sparse(const InvertedIndex& index, const SparseVector& query, std::size_t cutoff,
                           std::string query_id = {});

struct Bm25Params {
    double k1 = 0.9;
    double b = 0.4;
};

/// Non-negative (Lucene) idf: ln((N - df + 0.5) / (df + 0.5) + 1).
double bm25_idf(std::size_t num_docs, std::size_t df);

/// BM25 of one document; query terms count with multiplicity.
double bm25_score(const InvertedIndex& index, std::span<const std::uint32_t> query_terms,
                  std::uint32_t doc, Bm25Params params = {});

/// Exact top-cutoff BM25 over a frequency index.
RankedList retrieve_bm25(const InvertedIndex& index, std::span<const std::uint32_t> query_terms,
                         std::size_t cutoff, std::string query_id = {}, Bm25Params params = {});

/// In-vocabulary word ids of a text, without specials, for BM25 queries.
std::vector<std::uint32_t> bm25_terms(std::string_view text, const Vocabulary& vocab);

}  // namespace xdr
