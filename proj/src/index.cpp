#include "xdr/index.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <map>
#include <unordered_set>

#include "xdr/error.hpp"
#include "xdr/params.hpp"

namespace xdr {

namespace fs = std::filesystem;

namespace {

constexpr std::uint32_t kFormatVersion = 1;

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) out.push_back(static_cast<unsigned char>(v >> s));
}

void put_magic(std::vector<unsigned char>& out, const char* magic) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(magic[i]));
}

class Reader {
public:
    Reader(const std::string& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int b = 0; b < 4; ++b) {
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + b])) << (8 * b);
        }
        pos_ += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    void magic(const char* m) {
        if (str(4) != std::string(m, 4)) throw CorruptionError(what_ + ": bad magic");
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw CorruptionError(what_ + ": truncated");
    }
    const std::string& bytes_;
    std::string what_;
    std::size_t pos_ = 0;
};

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file(const fs::path& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

std::string index_kind_name(IndexKind kind) {
    return kind == IndexKind::Impact ? "impact" : "frequency";
}

InvertedIndex InvertedIndex::build_impact(std::span<const std::string> doc_ids,
                                          std::span<const SparseVector> docs,
                                          std::size_t vocab_size) {
    if (doc_ids.size() != docs.size()) throw Error("doc id count differs from representation count");
    if (docs.empty()) throw Error("cannot index an empty corpus");
    InvertedIndex idx;
    idx.kind_ = IndexKind::Impact;
    idx.postings_.resize(vocab_size);
    std::unordered_set<std::string> seen;
    for (std::size_t d = 0; d < docs.size(); ++d) {
        if (!seen.insert(doc_ids[d]).second) throw Error("duplicate document id '" + doc_ids[d] + "'");
        idx.doc_ids_.push_back(doc_ids[d]);
        idx.doc_lengths_.push_back(static_cast<std::uint32_t>(docs[d].nnz()));
        for (const auto& [term, w] : docs[d].entries) {
            if (term >= vocab_size) throw DimensionError("term id outside the vocabulary");
            if (!(w > 0.0f)) throw Error("impact weights must be positive");
            idx.postings_[term].push_back({static_cast<std::uint32_t>(d), w});
        }
    }
    idx.finalize_stats();
    return idx;
}

InvertedIndex InvertedIndex::build_frequency(const Corpus& corpus, const Vocabulary& vocab) {
    if (corpus.empty()) throw Error("cannot index an empty corpus");
    InvertedIndex idx;
    idx.kind_ = IndexKind::Frequency;
    idx.postings_.resize(vocab.size());
    for (std::size_t d = 0; d < corpus.size(); ++d) {
        const auto words = split_words(corpus[d].text);
        std::map<std::uint32_t, std::uint32_t> tf;
        for (const auto& w : words) {
            const auto id = vocab.id(w);
            if (id != Vocabulary::kUnk) ++tf[id];
        }
        idx.doc_ids_.push_back(corpus[d].id);
        idx.doc_lengths_.push_back(static_cast<std::uint32_t>(words.size()));
        for (const auto& [term, count] : tf) {
            idx.postings_[term].push_back({static_cast<std::uint32_t>(d), static_cast<float>(count)});
        }
    }
    idx.finalize_stats();
    return idx;
}

void InvertedIndex::finalize_stats() {
    double total = 0.0;
    for (auto len : doc_lengths_) total += len;
    avgdl_ = doc_lengths_.empty() ? 0.0 : total / static_cast<double>(doc_lengths_.size());
}

std::span<const Posting> InvertedIndex::postings(std::uint32_t term) const {
    if (term >= postings_.size()) return {};
    return postings_[term];
}

std::vector<unsigned char> InvertedIndex::serialize_postings() const {
    std::vector<unsigned char> out;
    put_magic(out, "XDRP");
    put_u32(out, kFormatVersion);
    put_u32(out, static_cast<std::uint32_t>(postings_.size()));
    std::uint32_t nonempty = 0;
    for (const auto& pl : postings_) nonempty += pl.empty() ? 0 : 1;
    put_u32(out, nonempty);
    for (std::uint32_t t = 0; t < postings_.size(); ++t) {
        const auto& pl = postings_[t];
        if (pl.empty()) continue;
        put_u32(out, t);
        put_u32(out, static_cast<std::uint32_t>(pl.size()));
        for (const auto& p : pl) {
            put_u32(out, p.doc);
            put_u32(out, std::bit_cast<std::uint32_t>(p.weight));
        }
    }
    return out;
}

std::vector<unsigned char> InvertedIndex::serialize_docstore() const {
    std::vector<unsigned char> out;
    put_magic(out, "XDRD");
    put_u32(out, kFormatVersion);
    put_u32(out, static_cast<std::uint32_t>(doc_ids_.size()));
    for (std::size_t d = 0; d < doc_ids_.size(); ++d) {
        put_u32(out, doc_lengths_[d]);
        put_u32(out, static_cast<std::uint32_t>(doc_ids_[d].size()));
        out.insert(out.end(), doc_ids_[d].begin(), doc_ids_[d].end());
    }
    return out;
}

std::uint64_t InvertedIndex::checksum() const {
    return fnv1a64(serialize_docstore(), fnv1a64(serialize_postings()));
}

void InvertedIndex::save(const fs::path& dir) const {
    const auto postings = serialize_postings();
    const auto docstore = serialize_docstore();
    const nlohmann::json meta{{"kind", index_kind_name(kind_)},
                              {"format_version", kFormatVersion},
                              {"N", doc_ids_.size()},
                              {"avgdl", avgdl_},
                              {"vocab_size", postings_.size()},
                              {"checksum", checksum_hex(fnv1a64(docstore, fnv1a64(postings)))}};
    fs::path tmp = dir;
    tmp += ".tmp";
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    write_file(tmp / "postings.bin", postings);
    write_file(tmp / "docstore.bin", docstore);
    const std::string m = meta.dump(2) + "\n";
    write_file(tmp / "meta.json", std::vector<unsigned char>(m.begin(), m.end()));
    fs::remove_all(dir);
    fs::rename(tmp, dir);
}

InvertedIndex InvertedIndex::load(const fs::path& dir) {
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(read_file(dir / "meta.json"));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("bad index meta in " + dir.string() + ": " + e.what());
    }
    const std::string postings = read_file(dir / "postings.bin");
    const std::string docstore = read_file(dir / "docstore.bin");
    auto bytes = [](const std::string& s) {
        return std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(s.data()), s.size());
    };
    const std::uint64_t sum = fnv1a64(bytes(docstore), fnv1a64(bytes(postings)));
    if (checksum_hex(sum) != meta.at("checksum").get<std::string>()) {
        throw CorruptionError("index checksum mismatch in " + dir.string());
    }

    InvertedIndex idx;
    const auto kind = meta.at("kind").get<std::string>();
    if (kind == "impact") {
        idx.kind_ = IndexKind::Impact;
    } else if (kind == "frequency") {
        idx.kind_ = IndexKind::Frequency;
    } else {
        throw ParseError("unknown index kind '" + kind + "'");
    }

    Reader ds(docstore, "docstore.bin");
    ds.magic("XDRD");
    if (ds.u32() != kFormatVersion) throw ParseError("unsupported docstore version");
    const std::uint32_t n = ds.u32();
    for (std::uint32_t d = 0; d < n; ++d) {
        idx.doc_lengths_.push_back(ds.u32());
        const std::uint32_t len = ds.u32();
        idx.doc_ids_.push_back(ds.str(len));
    }
    if (!ds.done()) throw CorruptionError("docstore.bin: trailing bytes");

    Reader ps(postings, "postings.bin");
    ps.magic("XDRP");
    if (ps.u32() != kFormatVersion) throw ParseError("unsupported postings version");
    idx.postings_.resize(ps.u32());
    const std::uint32_t nonempty = ps.u32();
    for (std::uint32_t i = 0; i < nonempty; ++i) {
        const std::uint32_t term = ps.u32();
        const std::uint32_t count = ps.u32();
        if (term >= idx.postings_.size()) throw CorruptionError("postings.bin: term out of range");
        auto& pl = idx.postings_[term];
        for (std::uint32_t j = 0; j < count; ++j) {
            const std::uint32_t doc = ps.u32();
            const float w = ps.f32();
            if (doc >= n || (!pl.empty() && pl.back().doc >= doc)) {
                throw CorruptionError("postings.bin: doc ids not strictly increasing");
            }
            pl.push_back({doc, w});
        }
    }
    if (!ps.done()) throw CorruptionError("postings.bin: trailing bytes");
    idx.finalize_stats();
    if (meta.at("N").get<std::size_t>() != idx.num_docs()) throw CorruptionError("meta N disagrees");
    return idx;
}

void rank_and_truncate(std::vector<ScoredDoc>& hits, std::size_t cutoff) {
    auto before = [](const ScoredDoc& a, const ScoredDoc& b) {
        return a.score > b.score || (a.score == b.score && a.doc < b.doc);
    };
    if (hits.size() > cutoff) {
        std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(cutoff), hits.end(),
                          before);
        hits.resize(cutoff);
    } else {
        std::sort(hits.begin(), hits.end(), before);
    }
}

RankedList retrieve_sparse(const InvertedIndex& index, const SparseVector& query, std::size_t cutoff,
                           std::string query_id) {
    if (index.kind() != IndexKind::Impact) throw Error("sparse retrieval needs an impact index");
    RankedList out{std::move(query_id), {}};
    if (query.empty()) return out;
    std::vector<double> acc(index.num_docs(), 0.0);
    std::vector<bool> touched(index.num_docs(), false);
    for (const auto& [term, qw] : query.entries) {
        for (const auto& p : index.postings(term)) {
            acc[p.doc] += static_cast<double>(qw) * static_cast<double>(p.weight);
            touched[p.doc] = true;
        }
    }
    for (std::uint32_t d = 0; d < acc.size(); ++d) {
        if (touched[d]) out.hits.push_back({d, acc[d]});
    }
    rank_and_truncate(out.hits, cutoff);
    return out;
}

double bm25_idf(std::size_t num_docs, std::size_t df) {
    const double n = static_cast<double>(num_docs);
    const double f = static_cast<double>(df);
    return std::log((n - f + 0.5) / (f + 0.5) + 1.0);
}

namespace {

double bm25_term(double tf, double idf, double doc_len, double avgdl, const Bm25Params& p) {
    const double norm = p.k1 * (1.0 - p.b + p.b * doc_len / avgdl);
    return idf * tf * (p.k1 + 1.0) / (tf + norm);
}

}  // namespace

double bm25_score(const InvertedIndex& index, std::span<const std::uint32_t> query_terms,
                  std::uint32_t doc, Bm25Params params) {
    if (index.kind() != IndexKind::Frequency) throw Error("BM25 needs a frequency index");
    double s = 0.0;
    for (auto term : query_terms) {
        const auto pl = index.postings(term);
        auto it = std::lower_bound(pl.begin(), pl.end(), doc,
                                   [](const Posting& p, std::uint32_t d) { return p.doc < d; });
        if (it == pl.end() || it->doc != doc) continue;
        s += bm25_term(it->weight, bm25_idf(index.num_docs(), pl.size()), index.doc_length(doc),
                       index.avgdl(), params);
    }
    return s;
}

RankedList retrieve_bm25(const InvertedIndex& index, std::span<const std::uint32_t> query_terms,
                         std::size_t cutoff, std::string query_id, Bm25Params params) {
    if (index.kind() != IndexKind::Frequency) throw Error("BM25 needs a frequency index");
    RankedList out{std::move(query_id), {}};
    std::map<std::uint32_t, std::size_t> counts;
    for (auto t : query_terms) ++counts[t];
    std::vector<double> acc(index.num_docs(), 0.0);
    std::vector<bool> touched(index.num_docs(), false);
    for (const auto& [term, count] : counts) {
        const auto pl = index.postings(term);
        if (pl.empty()) continue;
        const double idf = bm25_idf(index.num_docs(), pl.size());
        for (const auto& p : pl) {
            acc[p.doc] += static_cast<double>(count) *
                          bm25_term(p.weight, idf, index.doc_length(p.doc), index.avgdl(), params);
            touched[p.doc] = true;
        }
    }
    for (std::uint32_t d = 0; d < acc.size(); ++d) {
        if (touched[d]) out.hits.push_back({d, acc[d]});
    }
    rank_and_truncate(out.hits, cutoff);
    return out;
}

std::vector<std::uint32_t> bm25_terms(std::string_view text, const Vocabulary& vocab) {
    std::vector<std::uint32_t> out;
    for (const auto& w : split_words(text)) {
        const auto id = vocab.id(w);
        if (id != Vocabulary::kUnk) out.push_back(id);
    }
    return out;
}

}  // namespace xdr
