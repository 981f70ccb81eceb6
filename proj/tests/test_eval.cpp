#include <doctest.h>

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <sstream>

#include "random_cases.hpp"
#include "xdr/error.hpp"
#include "xdr/eval.hpp"

using namespace xdr;
using namespace xdr::testing;
namespace fs = std::filesystem;

namespace {

std::vector<RunEntry> run_of(std::initializer_list<const char*> docs) {
    std::vector<RunEntry> out;
    double s = static_cast<double>(docs.size());
    for (const char* d : docs) out.push_back({d, s--});
    return out;
}

double boost_two_sided(double t, double df) {
    boost::math::students_t dist(df);
    return 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(t)));
}

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("xdr_eval_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

SystemEval system_with(const std::string& name, std::initializer_list<double> ndcgs) {
    SystemEval s;
    s.name = name;
    int i = 0;
    for (double v : ndcgs) {
        s.per_query.push_back({"q" + std::to_string(i++), v, v});
        s.ndcg10 += v;
    }
    s.ndcg10 /= static_cast<double>(s.per_query.size());
    s.mrr10 = s.ndcg10;
    return s;
}

}  // namespace

TEST_CASE("single relevant document at rank r") {
    const std::map<std::string, int> judged{{"rel", 1}};
    CHECK(ndcg_at_k(run_of({"rel", "a", "b"}), judged) == doctest::Approx(1.0));
    CHECK(ndcg_at_k(run_of({"a", "b", "rel"}), judged) == doctest::Approx(0.5));
    CHECK(mrr_at_k(run_of({"a", "b", "rel"}), judged) == doctest::Approx(1.0 / 3.0));
    CHECK(mrr_at_k(run_of({"a", "b", "c", "rel"}), judged) == doctest::Approx(0.25));
    CHECK(ndcg_at_k(run_of({"a", "b", "c", "rel"}), judged) == doctest::Approx(1.0 / std::log2(5.0)));
}

TEST_CASE("relevance beyond the cutoff does not count") {
    const std::map<std::string, int> judged{{"rel", 2}};
    std::vector<RunEntry> ranked;
    for (int i = 0; i < 10; ++i) ranked.push_back({"x" + std::to_string(i), 20.0 - i});
    ranked.push_back({"rel", 1.0});
    CHECK(ndcg_at_k(ranked, judged) == 0.0);
    CHECK(mrr_at_k(ranked, judged) == 0.0);
    CHECK(ndcg_at_k(ranked, judged, 11) > 0.0);
}

TEST_CASE("queries without relevant documents score zero") {
    CHECK(ndcg_at_k(run_of({"a"}), {{"a", 0}}) == 0.0);
    CHECK(ndcg_at_k(run_of({"a"}), {}) == 0.0);
    CHECK(mrr_at_k(run_of({"a"}), {{"a", 0}}) == 0.0);
    CHECK(ndcg_at_k({}, {{"a", 1}}) == 0.0);
}

TEST_CASE("graded gains and ideal ordering") {
    const std::map<std::string, int> judged{{"a", 1}, {"b", 3}, {"c", 0}};
    CHECK(ndcg_at_k(run_of({"b", "a"}), judged) == doctest::Approx(1.0));
    const double dcg = 1.0 + 7.0 / std::log2(3.0);
    const double idcg = 7.0 + 1.0 / std::log2(3.0);
    CHECK(ndcg_at_k(run_of({"a", "b"}), judged) == doctest::Approx(dcg / idcg));
    // non-relevant padding between judged docs only lowers the score
    CHECK(ndcg_at_k(run_of({"b", "c", "a"}), judged) < 1.0);
    CHECK(mrr_at_k(run_of({"c", "a", "b"}), judged) == doctest::Approx(0.5));
}

TEST_CASE("nDCG is invariant to unjudged docs below the cutoff and to grade-0 judgments") {
    const std::map<std::string, int> judged{{"a", 2}, {"b", 1}};
    auto with_zero = judged;
    with_zero["z"] = 0;
    const auto base = run_of({"x", "a", "y", "b"});
    CHECK(ndcg_at_k(base, judged) == doctest::Approx(ndcg_at_k(base, with_zero)));
    auto longer = base;
    for (int i = 0; i < 20; ++i) longer.push_back({"pad" + std::to_string(i), -1.0 * i});
    CHECK(ndcg_at_k(longer, judged) == doctest::Approx(ndcg_at_k(base, judged)));
}

TEST_CASE("metrics equal oracles on 100 random runs") {
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        const auto err = check_metric_case(seed);
        CHECK_MESSAGE(err.empty(), "seed " << seed << ": " << err);
    }
}

TEST_CASE("incomplete beta and t distribution match boost") {
    for (double a : {0.5, 1.0, 2.5, 10.0}) {
        for (double b : {0.5, 1.0, 3.0}) {
            for (double x : {0.0, 0.01, 0.3, 0.5, 0.9, 1.0}) {
                CHECK(regularized_incomplete_beta(a, b, x) ==
                      doctest::Approx(boost::math::ibeta(a, b, x)).epsilon(1e-9));
            }
        }
    }
    for (double df : {1.0, 3.0, 7.5, 30.0}) {
        boost::math::students_t dist(df);
        for (double t : {-4.0, -1.0, 0.0, 0.5, 2.0, 6.0}) {
            CHECK(student_t_cdf(t, df) == doctest::Approx(boost::math::cdf(dist, t)).epsilon(1e-9));
        }
    }
    CHECK(student_t_cdf(std::numeric_limits<double>::infinity(), 3) == 1.0);
    CHECK_THROWS(student_t_cdf(1.0, 0.0));
}

TEST_CASE("paired t-test on d = 1,2,3,4") {
    const std::vector<double> a{1, 2, 3, 4};
    const std::vector<double> b{0, 0, 0, 0};
    const auto r = paired_ttest(a, b);
    CHECK(r.df == 3);
    CHECK(r.mean_diff == doctest::Approx(2.5));
    CHECK(r.t == doctest::Approx(2.5 / (std::sqrt(5.0 / 3.0) / 2.0)));
    CHECK(r.t == doctest::Approx(3.873).epsilon(1e-3));
    CHECK(std::fabs(r.p - 0.0305) < 1e-3);
    CHECK(r.p == doctest::Approx(boost_two_sided(r.t, 3.0)).epsilon(1e-9));

    const auto rev = paired_ttest(b, a);
    CHECK(rev.t == doctest::Approx(-r.t));
    CHECK(rev.p == doctest::Approx(r.p));
}

TEST_CASE("paired t-test matches boost on random samples") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 2 + rng.below(40);
        std::vector<double> a(n);
        std::vector<double> b(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = rng.uniform();
            b[i] = rng.uniform() + 0.1 * rng.uniform();
        }
        const auto r = paired_ttest(a, b);
        CHECK(r.p == doctest::Approx(boost_two_sided(r.t, static_cast<double>(n - 1))).epsilon(1e-8));
    }
}

TEST_CASE("paired t-test degenerate inputs") {
    const std::vector<double> same{0.3, 0.5, 0.7};
    const auto zero = paired_ttest(same, same);
    CHECK(zero.t == 0.0);
    CHECK(zero.p == 1.0);

    const std::vector<double> shifted{1.3, 1.5, 1.7};
    const auto shift = paired_ttest(shifted, same);
    CHECK(std::isinf(shift.t));
    CHECK(shift.t > 0);
    CHECK(shift.p == 0.0);

    const std::vector<double> one{1.0};
    CHECK_THROWS_WITH(paired_ttest(one, one), doctest::Contains("at least two"));
    CHECK_THROWS(paired_ttest(same, one));
}

TEST_CASE("sparsity statistics") {
    CHECK_THROWS(sparsity_stats({}));
    std::vector<SparseVector> docs{SparseVector::from_pairs({{5, 1.f}, {6, 1.f}, {7, 1.f}}),
                                   SparseVector::from_pairs({{5, 1.f}, {6, 1.f}, {7, 1.f}, {8, 1.f}, {9, 1.f}})};
    const auto s = sparsity_stats(docs);
    CHECK(s.mean_l0_docs == 4.0);
    CHECK(s.median_l0_docs == 4.0);
    CHECK(s.mean_l0_queries == 0.0);

    docs.push_back(SparseVector{});
    std::vector<SparseVector> queries{SparseVector::from_pairs({{5, 2.f}})};
    const auto t = sparsity_stats(docs, queries);
    CHECK(t.mean_l0_docs == doctest::Approx(8.0 / 3.0));
    CHECK(t.median_l0_docs == 3.0);
    CHECK(t.mean_l0_queries == 1.0);
}

TEST_CASE("TREC qrels and run round-trip") {
    const auto dir = scratch("trec");
    Qrels q;
    q.add("q1", "d1", 2);
    q.add("q1", "d2", 0);
    q.add("q2", "d3", 1);
    write_qrels(q, dir / "qrels.txt");
    const auto back = read_qrels(dir / "qrels.txt");
    CHECK(back.all() == q.all());
    CHECK(back.grade("q1", "d1") == 2);
    CHECK(back.grade("q1", "nope") == 0);
    CHECK(back.has_relevant("q2"));
    CHECK_THROWS_AS(q.add("q1", "d1", 1), ParseError);

    Run run;
    run["q1"] = {{"d2", 0.1234567}, {"d1", 3.5}};
    run["q2"] = {{"d3", 1.0}};
    write_run(run, dir / "run.txt", "tag");
    std::ifstream in(dir / "run.txt");
    std::string first;
    std::getline(in, first);
    CHECK(first == "q1 Q0 d1 1 3.500000 tag");
    std::getline(in, first);
    CHECK(first == "q1 Q0 d2 2 0.123457 tag");

    const auto rback = read_run(dir / "run.txt");
    REQUIRE(rback.at("q1").size() == 2);
    CHECK(rback.at("q1")[0].doc_id == "d1");
    CHECK(rback.at("q1")[1].score == doctest::Approx(0.123457));
    fs::remove_all(dir);
}

TEST_CASE("TREC parse errors name the line") {
    const auto dir = scratch("bad");
    {
        std::ofstream out(dir / "qrels.txt");
        out << "q1 0 d1 1\n\nq1 0 d2 -1\n";
    }
    CHECK_THROWS_WITH_AS(read_qrels(dir / "qrels.txt"), doctest::Contains("qrels.txt:3"), ParseError);
    {
        std::ofstream out(dir / "qrels.txt");
        out << "q1 0 d1\n";
    }
    CHECK_THROWS_AS(read_qrels(dir / "qrels.txt"), ParseError);
    {
        std::ofstream out(dir / "run.txt");
        out << "q1 Q0 d1 1 abc tag\n";
    }
    CHECK_THROWS_WITH_AS(read_run(dir / "run.txt"), doctest::Contains("run.txt:1"), ParseError);
    CHECK_THROWS(read_run(dir / "missing.txt"));
    fs::remove_all(dir);
}

TEST_CASE("evaluate_run averages over judged queries only") {
    Qrels q;
    q.add("q1", "d1", 1);
    q.add("q2", "d2", 1);
    q.add("q3", "d3", 0);  // no relevant doc: excluded
    Run run;
    run["q1"] = {{"d1", 1.0}};
    run["q3"] = {{"d3", 1.0}};
    const auto e = evaluate_run("sys", run, q);
    REQUIRE(e.per_query.size() == 2);
    CHECK(e.per_query[0].query_id == "q1");
    CHECK(e.per_query[1].ndcg10 == 0.0);  // q2 missing from the run
    CHECK(e.ndcg10 == doctest::Approx(0.5));
    CHECK(e.mrr10 == doctest::Approx(0.5));
}

TEST_CASE("compare_systems and report tables") {
    const auto base = system_with("bm25", {0.1, 0.2, 0.3, 0.4});
    const auto sys = system_with("composed", {1.1, 2.2, 3.3, 4.4});
    const auto sig = compare_systems(sys, base);
    CHECK(sig.test.df == 3);
    CHECK(sig.test.p == doctest::Approx(paired_ttest(std::vector<double>{1.1, 2.2, 3.3, 4.4},
                                                     std::vector<double>{0.1, 0.2, 0.3, 0.4})
                                            .p));
    CHECK(sig.significant);
    CHECK(sig.improves);
    CHECK_FALSE(compare_systems(base, sys).improves);

    EvalReport report;
    report.dataset = "toy";
    report.systems = {base, sys};
    report.significance = {sig};
    CHECK(report.find("composed") == &report.systems[1]);
    CHECK(report.find("nope") == nullptr);

    const auto table = report.to_table();
    CHECK(table.find("dataset: toy") != std::string::npos);
    CHECK(table.find("†") != std::string::npos);
    CHECK(table.find("‡ ") == std::string::npos);

    const auto j = nlohmann::json::parse(report.to_json());
    CHECK(j["systems"].size() == 2);
    CHECK(j["significance"][0]["baseline"] == "bm25");

    EvalReport other = report;
    other.dataset = "toy2";
    const std::vector<EvalReport> both{report, other};
    const auto cmp = comparison_table(both);
    CHECK(cmp.find("avg") != std::string::npos);
    CHECK(cmp.find("toy2") != std::string::npos);
    const std::vector<EvalReport> single{report};
    CHECK(comparison_table(single).find("avg") == std::string::npos);
}
