#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xdr/sparse.hpp"

namespace xdr {

/// (query id, doc id) -> relevance grade >= 0.
class Qrels {
public:
    void add(const std::string& qid, const std::string& docid, int grade);
    /// 0 for unjudged pairs.
    int grade(const std::string& qid, const std::string& docid) const;
    /// Judgments of one query, or nullptr.
    const std::map<std::string, int>* judgments(const std::string& qid) const;
    bool has_relevant(const std::string& qid) const;
    std::size_t num_queries() const noexcept { return by_query_.size(); }
    const std::map<std::string, std::map<std::string, int>>& all() const noexcept { return by_query_; }

private:
    std::map<std::string, std::map<std::string, int>> by_query_;
};

/// A run: per query, doc ids with scores in rank order.
struct RunEntry {
    std::string doc_id;
    double score = 0.0;
};

using Run = std::map<std::string, std::vector<RunEntry>>;

/// Gains 2^rel - 1, discount log2(rank + 1), ideal ranking from the qrels.
/// Returns 0 when the query has no relevant document.
double ndcg_at_k(std::span<const RunEntry> ranked, const std::map<std::string, int>& judged,
                 std::size_t k = 10);

/// Reciprocal rank of the first doc with grade >= 1 within the top k.
double mrr_at_k(std::span<const RunEntry> ranked, const std::map<std::string, int>& judged,
                std::size_t k = 10);

// ---------------------------------------------------------------------------
// Statistics

/// I_x(a, b) by continued fraction, relative accuracy ~1e-10.
double regularized_incomplete_beta(double a, double b, double x);

/// P(T <= t) for Student's t with df degrees of freedom.
double student_t_cdf(double t, double df);

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    std::size_t df = 0;
    double mean_diff = 0.0;
};

/// Two-sided paired t-test on a - b. Zero-variance differences give p = 1 when
/// the mean difference is 0 and p = 0 otherwise.
TTestResult paired_ttest(std::span<const double> a, std::span<const double> b);

// ---------------------------------------------------------------------------
// Sparsity

struct SparsityStats {
    double mean_l0_docs = 0.0;
    double median_l0_docs = 0.0;
    double mean_l0_queries = 0.0;
};

SparsityStats sparsity_stats(std::span<const SparseVector> docs,
                             std::span<const SparseVector> queries = {});

// ---------------------------------------------------------------------------
// TREC interchange

/// `qid 0 docid rel` lines. Negative grades and malformed lines are errors.
Qrels read_qrels(const std::filesystem::path& path);
void write_qrels(const Qrels& qrels, const std::filesystem::path& path);

/// `qid Q0 docid rank score tag` lines; entries re-sorted by score on read.
Run read_run(const std::filesystem::path& path);
/// Ranks regenerated from score order; scores with 6 decimals.
void write_run(const Run& run, const std::filesystem::path& path, const std::string& tag);

// ---------------------------------------------------------------------------
// Reports

struct QueryMetrics {
    std::string query_id;
    double ndcg10 = 0.0;
    double mrr10 = 0.0;
};

struct SystemEval {
    std::string name;
    /// Queries with at least one relevant document, sorted by id.
    std::vector<QueryMetrics> per_query;
    double ndcg10 = 0.0;
    double mrr10 = 0.0;
    std::optional<SparsityStats> sparsity;
};

/// Aggregates over queries with a relevant judgment; queries absent from the
/// run score 0.
SystemEval evaluate_run(const std::string& name, const Run& run, const Qrels& qrels);

struct Significance {
    std::string system;
    std::string baseline;
    TTestResult test;
    bool significant = false;
    bool improves = false;
};

/// Paired t-test on per-query nDCG@10 over the systems' shared queries.
Significance compare_systems(const SystemEval& system, const SystemEval& baseline,
                             double alpha = 0.05);

struct EvalReport {
    std::string dataset;
    std::vector<SystemEval> systems;
    std::vector<Significance> significance;

    const SystemEval* find(const std::string& name) const;
    std::string to_json() const;
    /// Systems x metrics table; daggers mark significant gains over the
    /// named baselines (first: dagger, second: double dagger).
    std::string to_table(const std::string& first_baseline = "bm25",
                         const std::string& second_baseline = "zero_shot") const;
};

/// nDCG@10 x 100 with datasets as rows and systems as columns; a dagger marks
/// a significant gain over the first baseline, a double dagger over the
/// second. An average row follows when there is more than one dataset.
std::string comparison_table(std::span<const EvalReport> reports,
                             const std::string& first_baseline = "bm25",
                             const std::string& second_baseline = "zero_shot");

}  // namespace xdr
