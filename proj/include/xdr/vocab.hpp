#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace xdr {

/// Lowercased words split on ASCII whitespace and punctuation. Bytes >= 0x80
/// are kept as word characters so UTF-8 words survive intact.
std::vector<std::string> split_words(std::string_view text);

/// Word-level vocabulary shared by every stage of a pipeline run.
///
/// Ids are dense; the five special tokens occupy fixed ids 0..4 and ordinary
/// terms follow in decreasing corpus frequency (ties lexicographic).
class Vocabulary {
public:
    static constexpr std::uint32_t kPad = 0;
    static constexpr std::uint32_t kUnk = 1;
    static constexpr std::uint32_t kMask = 2;
    static constexpr std::uint32_t kCls = 3;
    static constexpr std::uint32_t kSep = 4;
    static constexpr std::uint32_t kNumSpecial = 5;

    /// Ordinary terms only, in id order starting at kNumSpecial.
    explicit Vocabulary(std::vector<std::string> terms);

    /// Frequency-ranked vocabulary over one or more token streams, truncated
    /// so that the total size (specials included) is at most max_size.
    static Vocabulary build(std::span<const std::vector<std::string>> corpora, std::size_t max_size);

    static Vocabulary load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
    /// Exactly the bytes `save` writes.
    std::string serialize() const;

    std::size_t size() const noexcept { return terms_.size(); }
    const std::string& term(std::uint32_t id) const { return terms_.at(id); }
    /// kUnk for unknown terms.
    std::uint32_t id(std::string_view term) const;
    bool contains(std::string_view term) const;
    static bool is_special(std::uint32_t id) noexcept { return id < kNumSpecial; }

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.terms_ == b.terms_; }

private:
    std::vector<std::string> terms_;
    std::unordered_map<std::string, std::uint32_t> index_;
};

/// [CLS] word ids [SEP], truncated to max_seq_len by dropping trailing words.
std::vector<std::uint32_t> tokenize(std::string_view text, const Vocabulary& vocab,
                                    std::size_t max_seq_len);

}  // namespace xdr
