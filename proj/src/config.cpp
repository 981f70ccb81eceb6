#include "xdr/config.hpp"

#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "xdr/error.hpp"
#include "xdr/vocab.hpp"

namespace xdr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ParseError(where + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw ParseError("unknown key '" + key + "' in " + where);
    }
}

template <typename V>
void read(const json& j, const char* key, V& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<V>();
    } catch (const json::exception& e) {
        throw ParseError(where + "." + key + ": " + e.what());
    }
}

void read_path(const json& j, const char* key, fs::path& out, const fs::path& base, const std::string& where) {
    std::string s;
    read(j, key, s, where);
    if (s.empty()) return;
    const fs::path p(s);
    out = p.is_absolute() ? p : base / p;
}

DatasetPaths read_dataset(const json& j, const fs::path& base, const std::string& where) {
    check_keys(j, where, {"corpus", "queries", "qrels", "triples"});
    DatasetPaths d;
    read_path(j, "corpus", d.corpus, base, where);
    read_path(j, "queries", d.queries, base, where);
    read_path(j, "qrels", d.qrels, base, where);
    read_path(j, "triples", d.triples, base, where);
    return d;
}

json dataset_json(const DatasetPaths& d) {
    json j = json::object();
    if (!d.corpus.empty()) j["corpus"] = d.corpus.string();
    if (!d.queries.empty()) j["queries"] = d.queries.string();
    if (!d.qrels.empty()) j["qrels"] = d.qrels.string();
    if (!d.triples.empty()) j["triples"] = d.triples.string();
    return j;
}

void require_file(const fs::path& p, const std::string& what) {
    if (p.empty()) throw Error("config: " + what + " is required");
    if (!fs::is_regular_file(p)) throw Error("config: " + what + " not found: " + p.string());
}

void optional_file(const fs::path& p, const std::string& what) {
    if (!p.empty() && !fs::is_regular_file(p)) throw Error("config: " + what + " not found: " + p.string());
}

}  // namespace

void PipelineConfig::validate() const {
    require_file(source.corpus, "source.corpus");
    require_file(source.triples, "source.triples");
    optional_file(source.queries, "source.queries");
    optional_file(source.qrels, "source.qrels");
    require_file(target.corpus, "target.corpus");
    require_file(target.queries, "target.queries");
    require_file(target.qrels, "target.qrels");
    optional_file(target.triples, "target.triples");
    if (vocab_max <= Vocabulary::kNumSpecial) throw Error("config: vocab_max leaves no room for terms");
    if (cutoff == 0) throw Error("config: cutoff must be positive");
    ModelConfig probe = settings.model;
    probe.vocab_size = std::max<std::size_t>(probe.vocab_size, Vocabulary::kNumSpecial + 1);
    probe.validate();
    for (auto k : sweep) {
        if (k < 0 || k >= static_cast<std::int64_t>(probe.layers)) {
            throw Error("config: sweep value k=" + std::to_string(k) + " outside [0, " +
                        std::to_string(probe.layers) + ")");
        }
    }
    if (workdir.empty()) throw Error("config: workdir is required");
    std::error_code ec;
    fs::create_directories(workdir, ec);
    const fs::path probe_file = workdir / ".write-probe";
    {
        std::ofstream out(probe_file);
        if (ec || !out) throw Error("config: workdir is not writable: " + workdir.string());
    }
    fs::remove(probe_file, ec);
}

PipelineConfig parse_config(std::string_view json_text, const fs::path& base_dir) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("config is not valid JSON: ") + e.what());
    }
    check_keys(j, "config", {"workdir", "source", "target", "model", "train", "seed", "mode", "sweep", "cutoff"});
    PipelineConfig c;
    read_path(j, "workdir", c.workdir, base_dir, "config");
    if (j.contains("source")) c.source = read_dataset(j["source"], base_dir, "source");
    if (j.contains("target")) c.target = read_dataset(j["target"], base_dir, "target");
    ModelConfig& m = c.settings.model;
    if (j.contains("model")) {
        const json& mj = j["model"];
        check_keys(mj, "model", {"vocab_max", "layers", "d_model", "n_heads", "d_ffn", "max_seq_len", "k"});
        read(mj, "vocab_max", c.vocab_max, "model");
        read(mj, "layers", m.layers, "model");
        read(mj, "d_model", m.d_model, "model");
        read(mj, "n_heads", m.n_heads, "model");
        read(mj, "d_ffn", m.d_ffn, "model");
        read(mj, "max_seq_len", m.max_seq_len, "model");
        read(mj, "k", m.k_domain_layers, "model");
    }
    m.vocab_size = c.vocab_max;
    PipelineSettings& s = c.settings;
    if (j.contains("train")) {
        const json& tj = j["train"];
        check_keys(tj, "train", {"base_steps", "pretrain_steps", "finetune_steps", "batch", "lr", "mask_prob",
                                 "lambda_q", "lambda_d"});
        read(tj, "base_steps", s.base_steps, "train");
        read(tj, "pretrain_steps", s.pretrain_steps, "train");
        read(tj, "finetune_steps", s.finetune_steps, "train");
        read(tj, "batch", s.batch, "train");
        read(tj, "lr", s.lr, "train");
        read(tj, "mask_prob", s.mask_prob, "train");
        read(tj, "lambda_q", s.lambda_q, "train");
        read(tj, "lambda_d", s.lambda_d, "train");
    }
    read(j, "seed", s.seed, "config");
    std::string mode = mode_name(c.mode);
    read(j, "mode", mode, "config");
    c.mode = parse_mode(mode);
    read(j, "sweep", c.sweep, "config");
    read(j, "cutoff", c.cutoff, "config");
    return c;
}

PipelineConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

std::string config_to_json(const PipelineConfig& c) {
    const ModelConfig& m = c.settings.model;
    const PipelineSettings& s = c.settings;
    json j;
    j["workdir"] = c.workdir.string();
    j["source"] = dataset_json(c.source);
    j["target"] = dataset_json(c.target);
    j["model"] = {{"vocab_max", c.vocab_max}, {"layers", m.layers},   {"d_model", m.d_model},
                  {"n_heads", m.n_heads},     {"d_ffn", m.d_ffn},     {"max_seq_len", m.max_seq_len},
                  {"k", m.k_domain_layers}};
    j["train"] = {{"base_steps", s.base_steps}, {"pretrain_steps", s.pretrain_steps},
                  {"finetune_steps", s.finetune_steps}, {"batch", s.batch},
                  {"lr", s.lr}, {"mask_prob", s.mask_prob},
                  {"lambda_q", s.lambda_q}, {"lambda_d", s.lambda_d}};
    j["seed"] = s.seed;
    j["mode"] = mode_name(c.mode);
    j["sweep"] = c.sweep;
    j["cutoff"] = c.cutoff;
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------

std::string CollectionStats::summary() const {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "documents=%zu queries=%zu judged_queries=%zu judgments=%zu triples=%zu "
                  "avg_doc_len=%.2f avg_query_len=%.2f",
                  documents, queries, judged_queries, judgments, triples, avg_doc_words, avg_query_words);
    return buf;
}

CollectionStats collection_stats(const Collection& c) {
    CollectionStats s;
    s.documents = c.corpus.size();
    s.queries = c.queries.size();
    s.triples = c.triples.size();
    for (const auto& [qid, judged] : c.qrels.all()) {
        s.judgments += judged.size();
        if (c.qrels.has_relevant(qid)) ++s.judged_queries;
    }
    double words = 0.0;
    for (const auto& d : c.corpus) words += static_cast<double>(split_words(d.text).size());
    if (s.documents) s.avg_doc_words = words / static_cast<double>(s.documents);
    words = 0.0;
    for (const auto& q : c.queries) words += static_cast<double>(split_words(q.text).size());
    if (s.queries) s.avg_query_words = words / static_cast<double>(s.queries);
    return s;
}

namespace {

void raise_dangling(const std::string& what, const std::vector<std::string>& offenders) {
    if (offenders.empty()) return;
    std::string list;
    const std::size_t shown = std::min<std::size_t>(offenders.size(), 20);
    for (std::size_t i = 0; i < shown; ++i) list += (i ? ", " : "") + offenders[i];
    if (shown < offenders.size()) list += ", ...";
    throw Error(std::to_string(offenders.size()) + " " + what + ": " + list);
}

}  // namespace

Collection ingest(const DatasetPaths& paths) {
    if (paths.corpus.empty()) throw Error("ingest needs a corpus");
    Collection c;
    c.corpus = read_corpus_jsonl(paths.corpus);
    if (!paths.queries.empty()) c.queries = read_queries_tsv(paths.queries);
    if (!paths.qrels.empty()) c.qrels = read_qrels(paths.qrels);
    if (!paths.triples.empty()) c.triples = read_triples_tsv(paths.triples);

    std::set<std::string> qids;
    std::vector<std::string> bad;
    for (const auto& q : c.queries) {
        if (!qids.insert(q.id).second) bad.push_back(q.id);
    }
    raise_dangling("duplicate query ids", bad);

    for (const auto& [qid, judged] : c.qrels.all()) {
        if (!paths.queries.empty() && !qids.contains(qid)) bad.push_back("query " + qid);
        for (const auto& [doc, grade] : judged) {
            if (c.corpus.find(doc) < 0) bad.push_back(qid + "/" + doc);
        }
    }
    raise_dangling("dangling qrels references", bad);

    for (std::size_t i = 0; i < c.triples.size(); ++i) {
        for (const auto* id : {&c.triples[i].positive, &c.triples[i].negative}) {
            if (c.corpus.find(*id) < 0) bad.push_back("line " + std::to_string(i + 1) + ": " + *id);
        }
    }
    raise_dangling("dangling triple references", bad);
    c.stats = collection_stats(c);
    return c;
}

}  // namespace xdr
