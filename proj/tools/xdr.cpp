// Command-line front end: synthetic data, stage training, checkpoint surgery,
// indexing, search, evaluation and the full adaptation pipeline.

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>

#include "xdr/config.hpp"
#include "xdr/error.hpp"
#include "xdr/eval.hpp"
#include "xdr/experiment.hpp"
#include "xdr/index.hpp"
#include "xdr/params.hpp"
#include "xdr/synth.hpp"
#include "xdr/trainer.hpp"
#include "xdr/vocab.hpp"

namespace fs = std::filesystem;
using namespace xdr;

namespace {

struct GlobalFlags {
    std::string config;
    std::string mode;
    std::optional<std::int64_t> k;
    std::optional<std::uint64_t> seed;
    std::string workdir;
    std::optional<std::size_t> cutoff;
    bool verbose = false;
};

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

/// Loaded configuration, vocabulary and collections of one invocation.
class Context {
public:
    explicit Context(const GlobalFlags& flags) : flags_(flags) {
        if (flags.config.empty()) throw Error("--config is required");
        cfg_ = load_config(flags.config);
        if (!flags.workdir.empty()) cfg_.workdir = flags.workdir;
        if (!flags.mode.empty()) cfg_.mode = parse_mode(flags.mode);
        if (flags.k) cfg_.settings.model.k_domain_layers = *flags.k;
        if (flags.seed) cfg_.settings.seed = *flags.seed;
        if (flags.cutoff) cfg_.cutoff = *flags.cutoff;
        cfg_.validate();
        source_ = ingest(cfg_.source);
        target_ = ingest(cfg_.target);
        if (source_.triples.empty()) throw Error("source triples file holds no triples");

        std::vector<std::vector<std::string>> words{corpus_words(source_.corpus), corpus_words(target_.corpus)};
        vocab_ = Vocabulary::build(words, cfg_.vocab_max);
        cfg_.settings.model.vocab_size = vocab_.size();
        cfg_.settings.model.validate();
        const fs::path vpath = cfg_.workdir / "vocab.txt";
        if (fs::exists(vpath)) {
            if (!(Vocabulary::load(vpath) == vocab_)) {
                throw Error("workdir " + cfg_.workdir.string() +
                            " holds a vocabulary built from different corpora; use a fresh workdir");
            }
        } else {
            vocab_.save(vpath);
        }
        log_.open(cfg_.workdir / "train_log.jsonl", std::ios::app);
    }

    const PipelineConfig& cfg() const { return cfg_; }
    const Vocabulary& vocab() const { return vocab_; }
    const Collection& source() const { return source_; }
    const Collection& target() const { return target_; }
    std::int64_t k() const { return cfg_.settings.model.k_domain_layers; }
    PipelineMode mode() const { return cfg_.mode; }

    EvalSet target_set() const { return {"target", target_.corpus, target_.queries, target_.qrels}; }

    const PipelineData& data() {
        if (!data_) {
            data_ = make_pipeline_data(vocab_, source_.corpus, target_.corpus, source_.triples,
                                       cfg_.settings.model.max_seq_len);
        }
        return *data_;
    }

    LogSink log_sink() {
        return [this](const StepLog& s) {
            log_ << to_json_line(s) << '\n';
            if (flags_.verbose && s.step % 100 == 0) {
                std::fprintf(stderr, "%s step %zu loss %.4f\n", stage_name(s.stage).c_str(), s.step, s.loss);
            }
        };
    }

    fs::path base_dir() const { return cfg_.workdir / "base"; }
    fs::path mode_dir(PipelineMode m) const { return mode_dir(m, k()); }
    fs::path mode_dir(PipelineMode m, std::int64_t k) const {
        return cfg_.workdir / ("k" + std::to_string(k)) / mode_name(m);
    }
    fs::path stage_dir(Stage s) const {
        return s == Stage::Base ? base_dir() : mode_dir(mode()) / stage_name(s);
    }

    /// Loads a stage checkpoint of the current mode and k, naming the
    /// missing stage tag when absent.
    Checkpoint require(Stage s) const {
        const fs::path dir = stage_dir(s);
        if (!fs::exists(dir / "manifest.json")) {
            throw Error("missing prerequisite checkpoint: stage '" + stage_name(s) + "' expected at " +
                        dir.string());
        }
        Checkpoint c = load_checkpoint(dir);
        if (c.manifest.vocab_checksum != vocabulary_checksum(vocab_)) {
            throw Error("checkpoint " + dir.string() + " was trained with a different vocabulary");
        }
        return s == Stage::Base ? with_k(c, k()) : c;
    }

    /// Base weights relabeled for a given k; base training does not depend on k.
    static Checkpoint with_k(const Checkpoint& base, std::int64_t k) {
        ModelConfig m = base.config();
        if (m.k_domain_layers == k) return base;
        m.k_domain_layers = k;
        return make_checkpoint(base.weights, m, base.stage(), base.manifest.parents,
                               base.manifest.vocab_checksum, base.manifest.notes);
    }

    void save(const Checkpoint& c, const fs::path& dir) const {
        fs::create_directories(dir.parent_path());
        save_checkpoint(c, dir);
        std::printf("wrote %s checkpoint %s -> %s\n", stage_name(c.stage()).c_str(),
                    checksum_hex(c.checksum()).c_str(), dir.string().c_str());
    }

private:
    GlobalFlags flags_;
    PipelineConfig cfg_;
    Vocabulary vocab_{std::vector<std::string>{}};
    Collection source_;
    Collection target_;
    std::optional<PipelineData> data_;
    std::ofstream log_;
};

// ---------------------------------------------------------------------------

void cmd_pretrain(Context& ctx, const std::string& which) {
    const ParameterPartition part = partition_parameters(ctx.cfg().settings.model);
    const PipelineSettings& s = ctx.cfg().settings;
    const PipelineData& data = ctx.data();
    if (which == "base") {
        Checkpoint base = train_base(s.model, data.source_tokens, s.spec_for(Stage::Base, part),
                                     data.vocab_checksum, ctx.log_sink());
        ctx.save(base, ctx.base_dir());
        return;
    }
    Stage stage;
    if (which == "source") {
        stage = Stage::PretrainSource;
        if (ctx.mode() != PipelineMode::Full) throw Error("mode " + mode_name(ctx.mode()) + " has no source pre-training");
    } else if (which == "target") {
        stage = Stage::PretrainTarget;
        if (ctx.mode() == PipelineMode::WoPretraining) throw Error("mode wo_pretraining has no target pre-training");
    } else {
        throw Error("unknown pretrain stage '" + which + "' (base, source or target)");
    }
    const Checkpoint base = ctx.require(Stage::Base);
    const auto& corpus = stage == Stage::PretrainSource ? data.source_tokens : data.target_tokens;
    Checkpoint out = pretrain_mlm(base, corpus, part, s.spec_for(stage, part), ctx.log_sink());
    ctx.save(out, ctx.stage_dir(stage));
}

void cmd_finetune(Context& ctx) {
    const ParameterPartition part = partition_parameters(ctx.cfg().settings.model);
    const Checkpoint input =
        ctx.require(ctx.mode() == PipelineMode::Full ? Stage::PretrainSource : Stage::Base);
    Checkpoint out = finetune_ir(input, ctx.data().triples, ctx.data().source_tokens, part,
                                 ctx.cfg().settings.spec_for(Stage::FinetuneSource, part), ctx.log_sink());
    ctx.save(out, ctx.stage_dir(Stage::FinetuneSource));
}

void cmd_compose(Context& ctx) {
    const Checkpoint domain =
        ctx.require(ctx.mode() == PipelineMode::WoPretraining ? Stage::Base : Stage::PretrainTarget);
    const Checkpoint task = ctx.require(Stage::FinetuneSource);
    ctx.save(compose(domain, task), ctx.stage_dir(Stage::Composed));
}

fs::path index_dir(const Context& ctx, Stage stage, bool bm25) {
    return bm25 ? ctx.cfg().workdir / "bm25_index" : ctx.mode_dir(ctx.mode()) / ("index_" + stage_name(stage));
}

void cmd_index(Context& ctx, const std::string& stage_tag, bool bm25) {
    if (bm25) {
        const InvertedIndex index = InvertedIndex::build_frequency(ctx.target().corpus, ctx.vocab());
        index.save(index_dir(ctx, Stage::Base, true));
        std::printf("wrote bm25 index (%zu docs) -> %s\n", index.num_docs(),
                    index_dir(ctx, Stage::Base, true).string().c_str());
        return;
    }
    const Stage stage = parse_stage(stage_tag);
    const Checkpoint ckpt = ctx.require(stage);
    const auto tokens = tokenize_corpus(ctx.target().corpus, ctx.vocab(), ckpt.config().max_seq_len);
    const auto docs = encode_sparse_batch(ckpt.config(), ckpt.weights, tokens);
    std::vector<std::string> ids;
    for (const auto& d : ctx.target().corpus) ids.push_back(d.id);
    const InvertedIndex index = InvertedIndex::build_impact(ids, docs, ckpt.config().vocab_size);
    index.save(index_dir(ctx, stage, false));
    const SparsityStats sp = sparsity_stats(docs);
    std::printf("wrote impact index (%zu docs, mean doc L0 %.1f) -> %s\n", index.num_docs(), sp.mean_l0_docs,
                index_dir(ctx, stage, false).string().c_str());
}

void cmd_search(Context& ctx, const std::string& stage_tag, bool bm25, const std::string& out_path) {
    const std::size_t cutoff = ctx.cfg().cutoff;
    Run run;
    std::string tag;
    fs::path dir;
    if (bm25) {
        dir = index_dir(ctx, Stage::Base, true);
        if (!fs::exists(dir)) throw Error("missing bm25 index at " + dir.string() + " (run `index --bm25`)");
        const InvertedIndex index = InvertedIndex::load(dir);
        for (const auto& q : ctx.target().queries) {
            append_to_run(run, index, retrieve_bm25(index, bm25_terms(q.text, ctx.vocab()), cutoff, q.id));
        }
        tag = "bm25";
    } else {
        const Stage stage = parse_stage(stage_tag);
        dir = index_dir(ctx, stage, false);
        if (!fs::exists(dir)) throw Error("missing impact index at " + dir.string() + " (run `index`)");
        const InvertedIndex index = InvertedIndex::load(dir);
        const Checkpoint ckpt = ctx.require(stage);
        for (const auto& q : ctx.target().queries) {
            const auto ids = tokenize(q.text, ctx.vocab(), ckpt.config().max_seq_len);
            std::vector<std::vector<std::uint32_t>> one{ids};
            const SparseVector rep = encode_sparse_batch(ckpt.config(), ckpt.weights, one).front();
            append_to_run(run, index, retrieve_sparse(index, rep, cutoff, q.id));
        }
        tag = mode_name(ctx.mode()) + "." + stage_name(stage);
    }
    const fs::path out = out_path.empty() ? ctx.mode_dir(ctx.mode()) / "runs" / (tag + ".trec") : fs::path(out_path);
    fs::create_directories(out.parent_path());
    write_run(run, out, tag);
    std::printf("wrote run (%zu queries) -> %s\n", run.size(), out.string().c_str());
}

void emit_report(const EvalReport& report, const fs::path& dir) {
    write_text(dir / "report.json", report.to_json());
    const std::string table = report.to_table();
    write_text(dir / "report.txt", table);
    std::fputs(table.c_str(), stdout);
    std::printf("wrote report -> %s\n", (dir / "report.json").string().c_str());
}

void cmd_evaluate(const GlobalFlags& flags, const std::vector<std::string>& runs, std::string qrels_path,
                  const std::string& out_dir) {
    if (runs.empty()) throw Error("evaluate needs at least one --run NAME=PATH");
    if (qrels_path.empty()) {
        if (flags.config.empty()) throw Error("evaluate needs --qrels or --config");
        qrels_path = load_config(flags.config).target.qrels.string();
    }
    const Qrels qrels = read_qrels(qrels_path);
    std::vector<SystemEval> systems;
    for (const auto& spec : runs) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0) throw Error("--run expects NAME=PATH, got '" + spec + "'");
        systems.push_back(evaluate_run(spec.substr(0, eq), read_run(spec.substr(eq + 1)), qrels));
    }
    const EvalReport report = make_report(fs::path(qrels_path).stem().string(), std::move(systems));
    if (out_dir.empty()) {
        std::fputs(report.to_table().c_str(), stdout);
    } else {
        emit_report(report, out_dir);
    }
}

void cmd_pipeline(Context& ctx) {
    std::vector<PipelineMode> modes{ctx.mode()};
    if (ctx.mode() == PipelineMode::Full) {
        modes.push_back(PipelineMode::WoSource);
        modes.push_back(PipelineMode::WoPretraining);
    }
    PipelineCache cache;
    const fs::path base_path = ctx.base_dir();
    if (fs::exists(base_path / "manifest.json")) cache.base = ctx.require(Stage::Base);
    const EvalSet target = ctx.target_set();
    VariantEval v = evaluate_variants(ctx.data(), ctx.cfg().settings, modes, ctx.vocab(), target,
                                      ctx.cfg().cutoff, &cache, ctx.log_sink());
    if (!fs::exists(base_path / "manifest.json")) ctx.save(v.pipelines.front().base, base_path);
    for (const auto& p : v.pipelines) {
        const fs::path dir = ctx.mode_dir(p.mode);
        if (p.pretrain_source) ctx.save(*p.pretrain_source, dir / stage_name(Stage::PretrainSource));
        if (p.pretrain_target) ctx.save(*p.pretrain_target, dir / stage_name(Stage::PretrainTarget));
        ctx.save(p.finetune, dir / stage_name(Stage::FinetuneSource));
        ctx.save(p.composed, dir / stage_name(Stage::Composed));
    }
    emit_report(v.report, ctx.cfg().workdir / ("k" + std::to_string(ctx.k())));
}

std::vector<std::int64_t> parse_k_list(const std::string& text) {
    std::vector<std::int64_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoll(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw Error("bad k value '" + item + "' in sweep list");
        }
    }
    return out;
}

void cmd_sweep(Context& ctx, const std::string& list) {
    std::vector<std::int64_t> ks = list.empty() ? ctx.cfg().sweep : parse_k_list(list);
    if (ks.empty()) throw Error("no k values to sweep (pass a list or set \"sweep\" in the config)");
    const auto layers = static_cast<std::int64_t>(ctx.cfg().settings.model.layers);
    for (auto k : ks) {
        if (k < 0 || k >= layers) throw Error("sweep value k=" + std::to_string(k) + " outside [0, " +
                                              std::to_string(layers) + ")");
    }
    const EvalSet target = ctx.target_set();
    const SystemEval bm25 = evaluate_run("bm25", bm25_search(ctx.vocab(), target, ctx.cfg().cutoff), target.qrels);

    std::optional<Checkpoint> base;
    if (fs::exists(ctx.base_dir() / "manifest.json")) base = ctx.require(Stage::Base);
    nlohmann::json rows = nlohmann::json::array();
    std::string table = "    k   nDCG@10    MRR@10  mean doc L0  median doc L0  mean query L0\n";
    char buf[160];
    std::snprintf(buf, sizeof buf, "%5s  %8.1f  %8.1f\n", "bm25", 100.0 * bm25.ndcg10, 100.0 * bm25.mrr10);
    table += buf;
    for (auto k : ks) {
        PipelineSettings s = ctx.cfg().settings;
        s.model.k_domain_layers = k;
        PipelineCache cache;
        if (base) cache.base = Context::with_k(*base, k);
        const std::vector<PipelineMode> modes{PipelineMode::Full};
        VariantEval v = evaluate_variants(ctx.data(), s, modes, ctx.vocab(), target, ctx.cfg().cutoff, &cache,
                                          ctx.log_sink());
        if (!base) {
            base = v.pipelines.front().base;
            ctx.save(*base, ctx.base_dir());
        }
        const auto& p = v.pipelines.front();
        const fs::path dir = ctx.mode_dir(PipelineMode::Full, k);
        ctx.save(*p.pretrain_source, dir / stage_name(Stage::PretrainSource));
        ctx.save(*p.pretrain_target, dir / stage_name(Stage::PretrainTarget));
        ctx.save(p.finetune, dir / stage_name(Stage::FinetuneSource));
        ctx.save(p.composed, dir / stage_name(Stage::Composed));
        const SystemEval* e = v.report.find("full");
        const SparsityStats sp = *e->sparsity;
        std::snprintf(buf, sizeof buf, "%5lld  %8.1f  %8.1f  %11.1f  %13.1f  %13.1f\n", static_cast<long long>(k),
                      100.0 * e->ndcg10, 100.0 * e->mrr10, sp.mean_l0_docs, sp.median_l0_docs, sp.mean_l0_queries);
        table += buf;
        rows.push_back({{"k", k},
                        {"ndcg10", e->ndcg10},
                        {"mrr10", e->mrr10},
                        {"mean_doc_l0", sp.mean_l0_docs},
                        {"median_doc_l0", sp.median_l0_docs},
                        {"mean_query_l0", sp.mean_l0_queries}});
        emit_report(v.report, ctx.cfg().workdir / ("k" + std::to_string(k)));
    }
    table += "(L0: non-zero vocabulary dimensions per representation)\n";
    nlohmann::json out = {{"dataset", "target"}, {"bm25_ndcg10", bm25.ndcg10}, {"rows", rows}};
    write_text(ctx.cfg().workdir / "sweep.json", out.dump(2) + "\n");
    write_text(ctx.cfg().workdir / "sweep.txt", table);
    std::fputs(table.c_str(), stdout);
}

void cmd_synth(const GlobalFlags& flags, SynthSpec spec, const std::string& out) {
    if (out.empty()) throw Error("synth-gen needs --out DIR");
    if (flags.seed) spec.seed = *flags.seed;
    const SynthBenchmark bench = synth_generate(spec);
    const fs::path dir(out);
    write_benchmark(bench, dir);
    PipelineConfig cfg;
    cfg.workdir = "work";
    cfg.source = {"source/corpus.jsonl", "source/queries.tsv", "source/qrels.txt", "source/triples.tsv"};
    cfg.target = {"target/corpus.jsonl", "target/queries.tsv", "target/qrels.txt", {}};
    cfg.settings.seed = spec.seed;
    cfg.settings.model.k_domain_layers = 1;
    cfg.sweep = {0, 1, 2, 4};
    write_text(dir / "config.json", config_to_json(cfg));
    std::printf("wrote synthetic benchmark (seed %llu, min target co-occurrence %zu) -> %s\n",
                static_cast<unsigned long long>(spec.seed), bench.min_target_cooccurrence, dir.string().c_str());
}

std::vector<double> read_values(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::vector<double> out;
    std::string tok;
    while (in >> tok) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(tok, &used));
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw ParseError(path.string() + ": not a number: '" + tok + "'");
        }
    }
    return out;
}

void cmd_ttest(const std::string& a, const std::string& b, const std::string& qrels_path) {
    std::vector<double> xa;
    std::vector<double> xb;
    if (qrels_path.empty()) {
        xa = read_values(a);
        xb = read_values(b);
    } else {
        const Qrels qrels = read_qrels(qrels_path);
        const SystemEval ea = evaluate_run("a", read_run(a), qrels);
        const SystemEval eb = evaluate_run("b", read_run(b), qrels);
        for (std::size_t i = 0; i < ea.per_query.size(); ++i) {
            xa.push_back(ea.per_query[i].ndcg10);
            xb.push_back(eb.per_query[i].ndcg10);
        }
    }
    const TTestResult r = paired_ttest(xa, xb);
    std::printf("n=%zu mean_diff=%.6f t=%.6f df=%zu p=%.6g\n", xa.size(), r.mean_diff, r.t, r.df, r.p);
}

void cmd_ingest(Context& ctx) {
    std::printf("source: %s\n", ctx.source().stats.summary().c_str());
    std::printf("target: %s\n", ctx.target().stats.summary().c_str());
    std::printf("vocabulary: %zu entries (checksum %s)\n", ctx.vocab().size(),
                checksum_hex(vocabulary_checksum(ctx.vocab())).c_str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cross-domain adaptation of a learned sparse retriever"};
    app.require_subcommand(1);
    app.fallthrough();
    GlobalFlags flags;
    app.add_option("--config", flags.config, "JSON configuration file");
    app.add_option("--mode", flags.mode, "full, wo_source or wo_pretraining")
        ->check(CLI::IsMember({"full", "wo_source", "wo_pretraining"}));
    app.add_option("--k", flags.k, "number of transformer layers in the domain subset");
    app.add_option("--seed", flags.seed, "random seed");
    app.add_option("--workdir", flags.workdir, "output directory (overrides the config)");
    app.add_option("--cutoff", flags.cutoff, "ranking depth (default 100)");
    app.add_flag("-v,--verbose", flags.verbose, "print training progress");

    auto* ingest_cmd = app.add_subcommand("ingest", "validate the configured collections and print statistics");

    std::string pretrain_stage = "target";
    auto* pretrain = app.add_subcommand("pretrain", "MLM training: the base model or a domain pre-training stage");
    pretrain->add_option("--stage", pretrain_stage, "base, source or target")->required();

    auto* finetune = app.add_subcommand("finetune", "fine-tune the task subset on source triples");
    auto* compose_cmd = app.add_subcommand("compose", "combine domain and task subsets into the final model");

    std::string index_stage = "composed";
    bool index_bm25 = false;
    auto* index = app.add_subcommand("index", "index the target corpus");
    index->add_option("--stage", index_stage, "checkpoint stage to encode with");
    index->add_flag("--bm25", index_bm25, "build a term-frequency index for BM25 instead");

    std::string search_stage = "composed";
    bool search_bm25 = false;
    std::string search_out;
    auto* search = app.add_subcommand("search", "run the target queries against an index");
    search->add_option("--stage", search_stage, "checkpoint stage of the impact index");
    search->add_flag("--bm25", search_bm25, "search the BM25 index");
    search->add_option("--out", search_out, "run file path");

    std::vector<std::string> eval_runs;
    std::string eval_qrels;
    std::string eval_out;
    auto* evaluate = app.add_subcommand("evaluate", "nDCG@10 / MRR@10 report over TREC run files");
    evaluate->add_option("--run", eval_runs, "NAME=PATH (repeatable)");
    evaluate->add_option("--qrels", eval_qrels, "qrels file (default: the config's target qrels)");
    evaluate->add_option("--out", eval_out, "directory for report.json and report.txt");

    auto* pipeline = app.add_subcommand("pipeline", "all stages plus the target-side report");

    std::string sweep_list;
    auto* sweep = app.add_subcommand("sweep-k", "repeat the full pipeline for several k");
    sweep->add_option("ks", sweep_list, "comma-separated k values (default: the config's sweep)");

    SynthSpec synth;
    std::string synth_out;
    auto* synth_cmd = app.add_subcommand("synth-gen", "generate the synthetic two-domain benchmark");
    synth_cmd->add_option("--out", synth_out, "output directory")->required();
    synth_cmd->add_option("--topics", synth.n_topics, "number of topics");
    synth_cmd->add_option("--shared", synth.shared_terms, "shared vocabulary size");
    synth_cmd->add_option("--exclusive", synth.exclusive_terms, "exclusive terms per domain");
    synth_cmd->add_option("--docs", synth.docs_per_domain, "documents per domain");
    synth_cmd->add_option("--queries", synth.queries_per_domain, "queries per domain");
    synth_cmd->add_option("--heldout", synth.heldout_source_queries, "held-out source queries");
    synth_cmd->add_option("--triples", synth.triples, "source training triples");
    synth_cmd->add_option("--strength", synth.strength, "co-occurrence strength");

    std::string ttest_a;
    std::string ttest_b;
    std::string ttest_qrels;
    auto* ttest = app.add_subcommand("ttest", "paired t-test of two runs (with --qrels) or two value lists");
    ttest->add_option("a", ttest_a, "first run or value file")->required();
    ttest->add_option("b", ttest_b, "second run or value file")->required();
    ttest->add_option("--qrels", ttest_qrels, "compare per-query nDCG@10 of two run files");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth_cmd->parsed()) {
            cmd_synth(flags, synth, synth_out);
        } else if (evaluate->parsed()) {
            cmd_evaluate(flags, eval_runs, eval_qrels, eval_out);
        } else if (ttest->parsed()) {
            cmd_ttest(ttest_a, ttest_b, ttest_qrels);
        } else {
            Context ctx(flags);
            if (ingest_cmd->parsed()) cmd_ingest(ctx);
            if (pretrain->parsed()) cmd_pretrain(ctx, pretrain_stage);
            if (finetune->parsed()) cmd_finetune(ctx);
            if (compose_cmd->parsed()) cmd_compose(ctx);
            if (index->parsed()) cmd_index(ctx, index_stage, index_bm25);
            if (search->parsed()) cmd_search(ctx, search_stage, search_bm25, search_out);
            if (pipeline->parsed()) cmd_pipeline(ctx);
            if (sweep->parsed()) cmd_sweep(ctx, sweep_list);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
