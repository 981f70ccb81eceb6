#include "xdr/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "xdr/error.hpp"

namespace xdr {

namespace {

const char* const kSpecialTokens[] = {"[PAD]", "[UNK]", "[MASK]", "[CLS]", "[SEP]"};

bool is_word_byte(unsigned char c) {
    return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

}  // namespace

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::string cur;
    for (unsigned char c : text) {
        if (is_word_byte(c)) {
            cur.push_back(static_cast<char>(c >= 'A' && c <= 'Z' ? c - 'A' + 'a' : c));
        } else if (!cur.empty()) {
            words.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

Vocabulary::Vocabulary(std::vector<std::string> terms) {
    terms_.reserve(terms.size() + kNumSpecial);
    for (const char* s : kSpecialTokens) terms_.emplace_back(s);
    for (auto& t : terms) {
        if (t.empty() || t.find('\n') != std::string::npos) {
            throw Error("vocabulary term is empty or contains a newline");
        }
        terms_.push_back(std::move(t));
    }
    for (std::uint32_t i = 0; i < terms_.size(); ++i) {
        if (!index_.emplace(terms_[i], i).second) {
            throw Error("duplicate vocabulary term '" + terms_[i] + "'");
        }
    }
}

Vocabulary Vocabulary::build(std::span<const std::vector<std::string>> corpora,
                             std::size_t max_size) {
    std::map<std::string, std::uint64_t> freq;
    for (const auto& stream : corpora) {
        for (const auto& tok : stream) ++freq[tok];
    }
    if (freq.empty()) throw Error("cannot build a vocabulary from empty corpora");
    if (max_size < kNumSpecial) throw Error("vocabulary size must leave room for special tokens");
    for (const char* s : kSpecialTokens) freq.erase(s);

    std::vector<std::pair<std::string, std::uint64_t>> ranked(freq.begin(), freq.end());
    // map iteration is already lexicographic; a stable sort keeps that for ties
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    const std::size_t keep = std::min(ranked.size(), max_size - kNumSpecial);
    std::vector<std::string> terms;
    terms.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) terms.push_back(std::move(ranked[i].first));
    return Vocabulary(std::move(terms));
}

std::uint32_t Vocabulary::id(std::string_view term) const {
    auto it = index_.find(std::string(term));
    return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view term) const {
    return index_.contains(std::string(term));
}

std::string Vocabulary::serialize() const {
    std::string out;
    for (std::size_t i = kNumSpecial; i < terms_.size(); ++i) {
        out += terms_[i];
        out += '\n';
    }
    return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write vocabulary " + path.string());
    out << serialize();
    if (!out) throw Error("failed writing vocabulary " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open vocabulary " + path.string());
    std::vector<std::string> terms;
    std::string line;
    while (std::getline(in, line)) terms.push_back(line);
    return Vocabulary(std::move(terms));
}

std::vector<std::uint32_t> tokenize(std::string_view text, const Vocabulary& vocab,
                                    std::size_t max_seq_len) {
    if (max_seq_len < 2) throw Error("max_seq_len must fit [CLS] and [SEP]");
    std::vector<std::uint32_t> ids{Vocabulary::kCls};
    for (const auto& w : split_words(text)) {
        if (ids.size() + 1 >= max_seq_len) break;
        ids.push_back(vocab.id(w));
    }
    ids.push_back(Vocabulary::kSep);
    return ids;
}

}  // namespace xdr
