#include "xdr/synth.hpp"

#include <algorithm>
#include <cstdio>
#include <unordered_map>

#include "xdr/error.hpp"
#include "xdr/rng.hpp"

namespace xdr {

namespace fs = std::filesystem;

void SynthSpec::validate() const {
    if (n_topics < 2) throw Error("synth: need at least 2 topics");
    if (shared_terms < n_topics) throw Error("synth: fewer shared terms than topics");
    const std::size_t per_topic = shared_terms / n_topics;
    if (exclusive_terms == 0) throw Error("synth: exclusive vocabulary is empty");
    if (exclusive_terms > per_topic * n_topics) {
        throw Error("synth: " + std::to_string(exclusive_terms) +
                    " exclusive terms exceed the " + std::to_string(per_topic * n_topics) +
                    " shared topic words they must stand for");
    }
    if (docs_per_domain < n_topics) throw Error("synth: fewer documents than topics");
    if (queries_per_domain == 0) throw Error("synth: no queries requested");
    if (heldout_source_queries == 0 || heldout_source_queries >= queries_per_domain) {
        throw Error("synth: held-out source queries must leave at least one training query");
    }
    if (triples == 0) throw Error("synth: no training triples requested");
    if (doc_min_words == 0 || doc_min_words > doc_max_words) throw Error("synth: bad document length range");
    if (query_words == 0) throw Error("synth: empty queries");
    for (double p : {strength, topic_rate, query_exclusive_rate}) {
        if (!(p >= 0.0 && p <= 1.0)) throw Error("synth: probabilities must lie in [0, 1]");
    }
}

namespace {

struct Lexicon {
    std::size_t n_topics = 0;
    std::size_t per_topic = 0;
    std::vector<std::string> shared;  // topic-major: topic t owns [t*per_topic, (t+1)*per_topic)
    std::unordered_map<std::string, std::size_t> shared_topic;

    const std::string& word(std::size_t topic, std::size_t i) const { return shared[topic * per_topic + i]; }
};

struct Exclusive {
    std::vector<std::string> terms;
    // (topic, shared index) -> exclusive term index, or -1
    std::vector<std::int64_t> synonym_of;
    std::vector<std::vector<std::size_t>> by_topic;
};

Exclusive make_exclusive(const SynthSpec& spec, const Lexicon& lex, const std::string& prefix) {
    Exclusive ex;
    ex.synonym_of.assign(lex.shared.size(), -1);
    ex.by_topic.resize(spec.n_topics);
    for (std::size_t e = 0; e < spec.exclusive_terms; ++e) {
        const std::size_t topic = e % spec.n_topics;
        const std::size_t j = e / spec.n_topics;
        ex.terms.push_back(prefix + std::to_string(topic) + "x" + std::to_string(j));
        ex.synonym_of[topic * lex.per_topic + j] = static_cast<std::int64_t>(e);
        ex.by_topic[topic].push_back(e);
    }
    return ex;
}

std::string join(const std::vector<std::string>& words) {
    std::string out;
    for (const auto& w : words) {
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

std::string make_id(const std::string& prefix, std::size_t i, int width) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%0*zu", width, i);
    return prefix + buf;
}

std::vector<std::string> make_document(const SynthSpec& spec, const Lexicon& lex, const Exclusive& ex,
                                       std::size_t topic, Rng& rng) {
    const std::size_t len = spec.doc_min_words + rng.below(spec.doc_max_words - spec.doc_min_words + 1);
    std::vector<std::string> words;
    for (std::size_t i = 0; i < len; ++i) {
        if (rng.bernoulli(spec.topic_rate)) {
            const std::size_t j = rng.below(lex.per_topic);
            words.push_back(lex.word(topic, j));
            const std::int64_t syn = ex.synonym_of[topic * lex.per_topic + j];
            if (syn >= 0 && rng.bernoulli(spec.strength)) words.push_back(ex.terms[syn]);
        } else {
            words.push_back(lex.shared[rng.below(lex.shared.size())]);
        }
    }
    return words;
}

std::vector<std::string> make_query(const SynthSpec& spec, const Lexicon& lex, const Exclusive& ex,
                                    std::size_t topic, Rng& rng) {
    std::vector<std::string> words;
    for (std::size_t i = 0; i < spec.query_words; ++i) {
        const auto& own = ex.by_topic[topic];
        if (!own.empty() && rng.bernoulli(spec.query_exclusive_rate)) {
            words.push_back(ex.terms[own[rng.below(own.size())]]);
        } else {
            words.push_back(lex.word(topic, rng.below(lex.per_topic)));
        }
    }
    return words;
}

SynthDomain make_domain(const SynthSpec& spec, const Lexicon& lex, const Exclusive& ex,
                        const std::string& prefix, Rng& rng,
                        std::vector<std::vector<std::string>>* doc_words) {
    SynthDomain d;
    d.exclusive_terms = ex.terms;
    std::vector<Document> docs;
    for (std::size_t i = 0; i < spec.docs_per_domain; ++i) {
        const std::size_t topic = i % spec.n_topics;
        auto words = make_document(spec, lex, ex, topic, rng);
        docs.push_back({make_id(prefix + "d", i, 4), join(words)});
        d.doc_topics.push_back(topic);
        if (doc_words) doc_words->push_back(std::move(words));
    }
    d.corpus = Corpus(std::move(docs));
    for (std::size_t q = 0; q < spec.queries_per_domain; ++q) {
        const std::size_t topic = q % spec.n_topics;
        d.queries.push_back({make_id(prefix + "q", q, 3), join(make_query(spec, lex, ex, topic, rng))});
        d.query_topics.push_back(topic);
    }
    return d;
}

void add_qrels(SynthDomain& d, std::size_t first_query) {
    for (std::size_t q = first_query; q < d.queries.size(); ++q) {
        for (std::size_t i = 0; i < d.corpus.size(); ++i) {
            if (d.doc_topics[i] == d.query_topics[q]) d.qrels.add(d.queries[q].id, d.corpus[i].id, 1);
        }
    }
}

}  // namespace

SynthBenchmark synth_generate(const SynthSpec& spec) {
    spec.validate();
    Lexicon lex;
    lex.n_topics = spec.n_topics;
    lex.per_topic = spec.shared_terms / spec.n_topics;
    for (std::size_t t = 0; t < spec.n_topics; ++t) {
        for (std::size_t i = 0; i < lex.per_topic; ++i) {
            lex.shared.push_back("sh" + std::to_string(t) + "x" + std::to_string(i));
            lex.shared_topic.emplace(lex.shared.back(), t);
        }
    }
    const Exclusive src = make_exclusive(spec, lex, "src");
    const Exclusive tgt = make_exclusive(spec, lex, "tgt");

    Rng rng(spec.seed);
    SynthBenchmark bench;
    bench.shared_terms = lex.shared;
    bench.source = make_domain(spec, lex, src, "s", rng, nullptr);
    std::vector<std::vector<std::string>> target_words;
    bench.target = make_domain(spec, lex, tgt, "t", rng, &target_words);

    // Training queries come first; the held-out tail carries the qrels.
    SynthDomain& s = bench.source;
    const std::size_t n_train = spec.queries_per_domain - spec.heldout_source_queries;
    std::vector<std::vector<std::size_t>> docs_of(spec.n_topics);
    for (std::size_t i = 0; i < s.corpus.size(); ++i) docs_of[s.doc_topics[i]].push_back(i);
    for (std::size_t n = 0; n < spec.triples; ++n) {
        const std::size_t q = rng.below(n_train);
        const std::size_t topic = s.query_topics[q];
        const auto& pos_pool = docs_of[topic];
        const std::size_t pos = pos_pool[rng.below(pos_pool.size())];
        std::size_t neg = rng.below(s.corpus.size());
        while (s.doc_topics[neg] == topic) neg = rng.below(s.corpus.size());
        s.triples.push_back({s.queries[q].text, s.corpus[pos].id, s.corpus[neg].id});
    }
    s.queries.erase(s.queries.begin(), s.queries.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.query_topics.erase(s.query_topics.begin(),
                         s.query_topics.begin() + static_cast<std::ptrdiff_t>(n_train));
    add_qrels(s, 0);
    add_qrels(bench.target, 0);

    // Self-audit: every target-exclusive term must sit near its topic's shared words.
    std::unordered_map<std::string, std::size_t> tgt_topic;
    for (std::size_t e = 0; e < tgt.terms.size(); ++e) tgt_topic.emplace(tgt.terms[e], e % spec.n_topics);
    std::unordered_map<std::string, std::size_t> counts;
    for (const auto& t : tgt.terms) counts[t] = 0;
    for (const auto& words : target_words) {
        for (std::size_t i = 0; i < words.size(); ++i) {
            auto it = tgt_topic.find(words[i]);
            if (it == tgt_topic.end()) continue;
            const std::size_t lo = i >= spec.window ? i - spec.window : 0;
            const std::size_t hi = std::min(words.size() - 1, i + spec.window);
            for (std::size_t j = lo; j <= hi; ++j) {
                auto sh = lex.shared_topic.find(words[j]);
                if (j != i && sh != lex.shared_topic.end() && sh->second == it->second) {
                    ++counts[words[i]];
                    break;
                }
            }
        }
    }
    bench.min_target_cooccurrence = SIZE_MAX;
    std::vector<std::string> weak;
    for (const auto& t : tgt.terms) {
        bench.min_target_cooccurrence = std::min(bench.min_target_cooccurrence, counts[t]);
        if (counts[t] < spec.min_cooccurrence) weak.push_back(t + "=" + std::to_string(counts[t]));
    }
    if (!weak.empty()) {
        std::string list;
        for (std::size_t i = 0; i < std::min<std::size_t>(weak.size(), 10); ++i) list += " " + weak[i];
        throw Error("synth: " + std::to_string(weak.size()) +
                    " target-exclusive terms co-occur too rarely with their topic:" + list);
    }
    return bench;
}

void write_benchmark(const SynthBenchmark& bench, const fs::path& dir) {
    fs::create_directories(dir / "source");
    fs::create_directories(dir / "target");
    write_corpus_jsonl(bench.source.corpus, dir / "source" / "corpus.jsonl");
    write_queries_tsv(bench.source.queries, dir / "source" / "queries.tsv");
    write_qrels(bench.source.qrels, dir / "source" / "qrels.txt");
    write_triples_tsv(bench.source.triples, dir / "source" / "triples.tsv");
    write_corpus_jsonl(bench.target.corpus, dir / "target" / "corpus.jsonl");
    write_queries_tsv(bench.target.queries, dir / "target" / "queries.tsv");
    write_qrels(bench.target.qrels, dir / "target" / "qrels.txt");
}

}  // namespace xdr
