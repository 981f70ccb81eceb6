#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "xdr/vocab.hpp"

namespace xdr {

struct Document {
    std::string id;
    std::string text;
};

/// Documents in file order; ids are unique.
class Corpus {
public:
    Corpus() = default;
    explicit Corpus(std::vector<Document> docs);

    std::size_t size() const noexcept { return docs_.size(); }
    bool empty() const noexcept { return docs_.empty(); }
    const Document& operator[](std::size_t i) const { return docs_[i]; }
    const std::vector<Document>& docs() const noexcept { return docs_; }
    /// Position of a document id, or -1.
    std::int64_t find(const std::string& id) const;

    auto begin() const { return docs_.begin(); }
    auto end() const { return docs_.end(); }

private:
    std::vector<Document> docs_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct Query {
    std::string id;
    std::string text;
};

/// One supervised example: a query with a relevant and a non-relevant doc id.
struct TrainTriple {
    std::string query;
    std::string positive;
    std::string negative;
};

/// JSON lines, one `{"id": ..., "text": ...}` object per line.
Corpus read_corpus_jsonl(const std::filesystem::path& path);
void write_corpus_jsonl(const Corpus& corpus, const std::filesystem::path& path);

/// `qid<TAB>text` per line.
std::vector<Query> read_queries_tsv(const std::filesystem::path& path);
void write_queries_tsv(const std::vector<Query>& queries, const std::filesystem::path& path);

/// `query_text<TAB>pos_doc_id<TAB>neg_doc_id` per line.
std::vector<TrainTriple> read_triples_tsv(const std::filesystem::path& path);
void write_triples_tsv(const std::vector<TrainTriple>& triples, const std::filesystem::path& path);

/// Token ids of every document, in corpus order.
std::vector<std::vector<std::uint32_t>> tokenize_corpus(const Corpus& corpus, const Vocabulary& vocab,
                                                        std::size_t max_seq_len);

/// Word streams of every document, for vocabulary construction.
std::vector<std::string> corpus_words(const Corpus& corpus);

}  // namespace xdr
