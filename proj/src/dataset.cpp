#include "xdr/dataset.hpp"

#include <fstream>
#include <json.hpp>

#include "xdr/error.hpp"

namespace xdr {

namespace fs = std::filesystem;

namespace {

std::ifstream open_in(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    return in;
}

std::ofstream open_out(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    return out;
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const auto tab = line.find('\t', start);
        fields.push_back(line.substr(start, tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
    }
    return fields;
}

std::string where(const fs::path& path, std::size_t line_no) {
    return path.string() + ":" + std::to_string(line_no);
}

void strip_cr(std::string& line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace

Corpus::Corpus(std::vector<Document> docs) : docs_(std::move(docs)) {
    for (std::size_t i = 0; i < docs_.size(); ++i) {
        if (!index_.emplace(docs_[i].id, i).second) {
            throw Error("duplicate document id '" + docs_[i].id + "'");
        }
    }
}

std::int64_t Corpus::find(const std::string& id) const {
    auto it = index_.find(id);
    return it == index_.end() ? -1 : static_cast<std::int64_t>(it->second);
}

Corpus read_corpus_jsonl(const fs::path& path) {
    auto in = open_in(path);
    std::vector<Document> docs;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        strip_cr(line);
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            docs.push_back({j.at("id").get<std::string>(), j.at("text").get<std::string>()});
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(where(path, line_no) + ": " + e.what());
        }
    }
    return Corpus(std::move(docs));
}

void write_corpus_jsonl(const Corpus& corpus, const fs::path& path) {
    auto out = open_out(path);
    for (const auto& d : corpus) out << nlohmann::json{{"id", d.id}, {"text", d.text}}.dump() << '\n';
}

std::vector<Query> read_queries_tsv(const fs::path& path) {
    auto in = open_in(path);
    std::vector<Query> queries;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        strip_cr(line);
        if (line.empty()) continue;
        auto f = split_tabs(line);
        if (f.size() != 2 || f[0].empty()) {
            throw ParseError(where(path, line_no) + ": expected qid<TAB>text");
        }
        queries.push_back({f[0], f[1]});
    }
    return queries;
}

void write_queries_tsv(const std::vector<Query>& queries, const fs::path& path) {
    auto out = open_out(path);
    for (const auto& q : queries) out << q.id << '\t' << q.text << '\n';
}

std::vector<TrainTriple> read_triples_tsv(const fs::path& path) {
    auto in = open_in(path);
    std::vector<TrainTriple> triples;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        strip_cr(line);
        if (line.empty()) continue;
        auto f = split_tabs(line);
        if (f.size() != 3 || f[1].empty() || f[2].empty()) {
            throw ParseError(where(path, line_no) + ": expected query_text<TAB>pos_id<TAB>neg_id");
        }
        if (f[1] == f[2]) throw ParseError(where(path, line_no) + ": positive equals negative");
        triples.push_back({f[0], f[1], f[2]});
    }
    return triples;
}

void write_triples_tsv(const std::vector<TrainTriple>& triples, const fs::path& path) {
    auto out = open_out(path);
    for (const auto& t : triples) out << t.query << '\t' << t.positive << '\t' << t.negative << '\n';
}

std::vector<std::vector<std::uint32_t>> tokenize_corpus(const Corpus& corpus, const Vocabulary& vocab,
                                                        std::size_t max_seq_len) {
    std::vector<std::vector<std::uint32_t>> out;
    out.reserve(corpus.size());
    for (const auto& d : corpus) out.push_back(tokenize(d.text, vocab, max_seq_len));
    return out;
}

std::vector<std::string> corpus_words(const Corpus& corpus) {
    std::vector<std::string> words;
    for (const auto& d : corpus) {
        auto w = split_words(d.text);
        words.insert(words.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
    }
    return words;
}

}  // namespace xdr
