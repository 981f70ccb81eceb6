#include "xdr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <numeric>
#include <sstream>

#include "xdr/error.hpp"

namespace xdr {

namespace fs = std::filesystem;

void Qrels::add(const std::string& qid, const std::string& docid, int grade) {
    if (grade < 0) throw ParseError("negative relevance grade for " + qid + "/" + docid);
    if (!by_query_[qid].emplace(docid, grade).second) {
        throw ParseError("duplicate judgment for " + qid + "/" + docid);
    }
}

int Qrels::grade(const std::string& qid, const std::string& docid) const {
    auto q = by_query_.find(qid);
    if (q == by_query_.end()) return 0;
    auto d = q->second.find(docid);
    return d == q->second.end() ? 0 : d->second;
}

const std::map<std::string, int>* Qrels::judgments(const std::string& qid) const {
    auto q = by_query_.find(qid);
    return q == by_query_.end() ? nullptr : &q->second;
}

bool Qrels::has_relevant(const std::string& qid) const {
    const auto* j = judgments(qid);
    return j && std::any_of(j->begin(), j->end(), [](const auto& e) { return e.second > 0; });
}

double ndcg_at_k(std::span<const RunEntry> ranked, const std::map<std::string, int>& judged,
                 std::size_t k) {
    std::vector<int> ideal;
    for (const auto& [doc, g] : judged) {
        if (g > 0) ideal.push_back(g);
    }
    if (ideal.empty()) return 0.0;
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    double idcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, ideal.size()); ++i) {
        idcg += (std::exp2(ideal[i]) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
    }
    double dcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) {
        auto it = judged.find(ranked[i].doc_id);
        const int g = it == judged.end() ? 0 : it->second;
        if (g > 0) dcg += (std::exp2(g) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
    }
    return dcg / idcg;
}

double mrr_at_k(std::span<const RunEntry> ranked, const std::map<std::string, int>& judged,
                std::size_t k) {
    for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) {
        auto it = judged.find(ranked[i].doc_id);
        if (it != judged.end() && it->second >= 1) return 1.0 / static_cast<double>(i + 1);
    }
    return 0.0;
}

// ---------------------------------------------------------------------------

namespace {

// Modified Lentz evaluation of the incomplete beta continued fraction.
double beta_continued_fraction(double a, double b, double x) {
    constexpr int kMaxIter = 500;
    constexpr double kEps = 1e-15;
    constexpr double kTiny = 1e-300;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) return h;
    }
    throw Error("incomplete beta continued fraction did not converge");
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0 && b > 0.0)) throw Error("incomplete beta needs positive shape parameters");
    if (x < 0.0 || x > 1.0) throw Error("incomplete beta argument outside [0, 1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                             a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
    return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double df) {
    if (!(df > 0.0)) throw Error("degrees of freedom must be positive");
    if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
    const double x = df / (df + t * t);
    const double tail = 0.5 * regularized_incomplete_beta(0.5 * df, 0.5, x);
    return t > 0.0 ? 1.0 - tail : tail;
}

TTestResult paired_ttest(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw Error("paired t-test needs equally sized samples");
    const std::size_t n = a.size();
    if (n < 2) throw Error("paired t-test needs at least two pairs");
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double x : d) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    TTestResult r;
    r.df = n - 1;
    r.mean_diff = mean;
    if (sd == 0.0) {
        r.t = mean == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), mean);
        r.p = mean == 0.0 ? 1.0 : 0.0;
        return r;
    }
    r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
    const double dfv = static_cast<double>(r.df);
    r.p = regularized_incomplete_beta(0.5 * dfv, 0.5, dfv / (dfv + r.t * r.t));
    return r;
}

SparsityStats sparsity_stats(std::span<const SparseVector> docs, std::span<const SparseVector> queries) {
    if (docs.empty()) throw Error("sparsity statistics over an empty corpus");
    std::vector<double> l0;
    l0.reserve(docs.size());
    for (const auto& d : docs) l0.push_back(static_cast<double>(d.nnz()));
    SparsityStats s;
    s.mean_l0_docs = std::accumulate(l0.begin(), l0.end(), 0.0) / static_cast<double>(l0.size());
    std::sort(l0.begin(), l0.end());
    const std::size_t n = l0.size();
    s.median_l0_docs = n % 2 ? l0[n / 2] : 0.5 * (l0[n / 2 - 1] + l0[n / 2]);
    if (!queries.empty()) {
        double total = 0.0;
        for (const auto& q : queries) total += static_cast<double>(q.nnz());
        s.mean_l0_queries = total / static_cast<double>(queries.size());
    }
    return s;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_ws(const std::string& line) {
    std::istringstream in(line);
    std::vector<std::string> out;
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

std::string where(const fs::path& path, std::size_t line_no) {
    return path.string() + ":" + std::to_string(line_no);
}

template <typename Num>
Num parse_number(const std::string& s, const fs::path& path, std::size_t line_no) {
    try {
        std::size_t used = 0;
        Num v;
        if constexpr (std::is_same_v<Num, int>) {
            v = std::stoi(s, &used);
        } else {
            v = std::stod(s, &used);
        }
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ParseError(where(path, line_no) + ": bad number '" + s + "'");
    }
}

}  // namespace

Qrels read_qrels(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    Qrels q;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto f = split_ws(line);
        if (f.empty()) continue;
        if (f.size() != 4) throw ParseError(where(path, line_no) + ": expected 'qid 0 docid rel'");
        const int grade = parse_number<int>(f[3], path, line_no);
        if (grade < 0) throw ParseError(where(path, line_no) + ": negative relevance grade");
        try {
            q.add(f[0], f[2], grade);
        } catch (const ParseError& e) {
            throw ParseError(where(path, line_no) + ": " + e.what());
        }
    }
    return q;
}

void write_qrels(const Qrels& qrels, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& [qid, docs] : qrels.all()) {
        for (const auto& [doc, g] : docs) out << qid << " 0 " << doc << ' ' << g << '\n';
    }
}

Run read_run(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::map<std::string, std::vector<std::pair<int, RunEntry>>> raw;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto f = split_ws(line);
        if (f.empty()) continue;
        if (f.size() != 6) {
            throw ParseError(where(path, line_no) + ": expected 'qid Q0 docid rank score tag'");
        }
        const int rank = parse_number<int>(f[3], path, line_no);
        const double score = parse_number<double>(f[4], path, line_no);
        raw[f[0]].push_back({rank, {f[2], score}});
    }
    Run run;
    for (auto& [qid, entries] : raw) {
        std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
            return a.second.score > b.second.score ||
                   (a.second.score == b.second.score && a.first < b.first);
        });
        auto& out = run[qid];
        for (auto& e : entries) out.push_back(std::move(e.second));
    }
    return run;
}

void write_run(const Run& run, const fs::path& path, const std::string& tag) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    char buf[64];
    for (const auto& [qid, entries] : run) {
        std::vector<RunEntry> sorted = entries;
        std::stable_sort(sorted.begin(), sorted.end(),
                         [](const RunEntry& a, const RunEntry& b) { return a.score > b.score; });
        for (std::size_t i = 0; i < sorted.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.6f", sorted[i].score);
            out << qid << " Q0 " << sorted[i].doc_id << ' ' << (i + 1) << ' ' << buf << ' ' << tag
                << '\n';
        }
    }
}

// ---------------------------------------------------------------------------

SystemEval evaluate_run(const std::string& name, const Run& run, const Qrels& qrels) {
    SystemEval e;
    e.name = name;
    static const std::vector<RunEntry> kEmpty;
    for (const auto& [qid, judged] : qrels.all()) {
        if (!qrels.has_relevant(qid)) continue;
        auto it = run.find(qid);
        const auto& ranked = it == run.end() ? kEmpty : it->second;
        e.per_query.push_back({qid, ndcg_at_k(ranked, judged, 10), mrr_at_k(ranked, judged, 10)});
    }
    for (const auto& q : e.per_query) {
        e.ndcg10 += q.ndcg10;
        e.mrr10 += q.mrr10;
    }
    if (!e.per_query.empty()) {
        e.ndcg10 /= static_cast<double>(e.per_query.size());
        e.mrr10 /= static_cast<double>(e.per_query.size());
    }
    return e;
}

Significance compare_systems(const SystemEval& system, const SystemEval& baseline, double alpha) {
    std::map<std::string, double> base;
    for (const auto& q : baseline.per_query) base[q.query_id] = q.ndcg10;
    std::vector<double> a;
    std::vector<double> b;
    for (const auto& q : system.per_query) {
        auto it = base.find(q.query_id);
        if (it == base.end()) continue;
        a.push_back(q.ndcg10);
        b.push_back(it->second);
    }
    Significance s;
    s.system = system.name;
    s.baseline = baseline.name;
    s.test = paired_ttest(a, b);
    s.significant = s.test.p <= alpha;
    s.improves = s.significant && s.test.mean_diff > 0.0;
    return s;
}

const SystemEval* EvalReport::find(const std::string& name) const {
    for (const auto& s : systems) {
        if (s.name == name) return &s;
    }
    return nullptr;
}

std::string EvalReport::to_json() const {
    using nlohmann::json;
    json systems_j = json::array();
    for (const auto& s : systems) {
        json per = json::array();
        for (const auto& q : s.per_query) {
            per.push_back({{"query_id", q.query_id}, {"ndcg@10", q.ndcg10}, {"mrr@10", q.mrr10}});
        }
        json sj{{"name", s.name}, {"ndcg@10", s.ndcg10}, {"mrr@10", s.mrr10}, {"per_query", per}};
        if (s.sparsity) {
            sj["sparsity"] = {{"mean_l0_docs", s.sparsity->mean_l0_docs},
                              {"median_l0_docs", s.sparsity->median_l0_docs},
                              {"mean_l0_queries", s.sparsity->mean_l0_queries}};
        }
        systems_j.push_back(sj);
    }
    json sig = json::array();
    for (const auto& s : significance) {
        sig.push_back({{"system", s.system},
                       {"baseline", s.baseline},
                       {"t", std::isfinite(s.test.t) ? json(s.test.t) : json(s.test.t > 0 ? "inf" : "-inf")},
                       {"p_two_sided", s.test.p},
                       {"df", s.test.df},
                       {"significant@0.05", s.significant},
                       {"improves", s.improves}});
    }
    return json{{"dataset", dataset}, {"systems", systems_j}, {"significance", sig}}.dump(2);
}

std::string EvalReport::to_table(const std::string& first_baseline,
                                 const std::string& second_baseline) const {
    std::ostringstream out;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-18s %10s %9s %12s\n", "system", "nDCG@10", "MRR@10", "mean doc L0");
    out << "dataset: " << dataset << '\n' << buf;
    for (const auto& s : systems) {
        std::string marks;
        for (const auto& sig : significance) {
            if (sig.system != s.name || !sig.improves) continue;
            if (sig.baseline == first_baseline) marks += "\u2020";
            if (sig.baseline == second_baseline) marks += "\u2021";
        }
        std::string ndcg(16, '\0');
        std::snprintf(ndcg.data(), ndcg.size(), "%.1f", 100.0 * s.ndcg10);
        ndcg.resize(std::strlen(ndcg.c_str()));
        ndcg += marks;
        std::string l0 = "-";
        if (s.sparsity) {
            char lb[32];
            std::snprintf(lb, sizeof lb, "%.1f", s.sparsity->mean_l0_docs);
            l0 = lb;
        }
        std::snprintf(buf, sizeof buf, "%-18s %10s %9.1f %12s\n", s.name.c_str(), ndcg.c_str(),
                      100.0 * s.mrr10, l0.c_str());
        out << buf;
    }
    out << "(\u2020/\u2021: significant gain over " << first_baseline << "/" << second_baseline
        << ", paired two-sided t-test, p <= 0.05)\n";
    return out.str();
}

std::string comparison_table(std::span<const EvalReport> reports, const std::string& first_baseline,
                             const std::string& second_baseline) {
    std::vector<std::string> names;
    for (const auto& r : reports) {
        for (const auto& s : r.systems) {
            if (std::find(names.begin(), names.end(), s.name) == names.end()) names.push_back(s.name);
        }
    }
    std::ostringstream out;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%-16s", "dataset");
    out << buf;
    for (const auto& n : names) {
        std::snprintf(buf, sizeof buf, " %16s", n.c_str());
        out << buf;
    }
    out << '\n';
    std::vector<double> sums(names.size(), 0.0);
    std::vector<std::size_t> counts(names.size(), 0);
    for (const auto& r : reports) {
        std::snprintf(buf, sizeof buf, "%-16s", r.dataset.c_str());
        out << buf;
        for (std::size_t i = 0; i < names.size(); ++i) {
            const SystemEval* s = r.find(names[i]);
            std::string cell = "-";
            if (s) {
                std::snprintf(buf, sizeof buf, "%.1f", 100.0 * s->ndcg10);
                cell = buf;
                for (const auto& sig : r.significance) {
                    if (sig.system != s->name || !sig.improves) continue;
                    if (sig.baseline == first_baseline) cell += "\u2020";
                    if (sig.baseline == second_baseline) cell += "\u2021";
                }
                sums[i] += s->ndcg10;
                ++counts[i];
            }
            // pad by display width; each dagger is 3 bytes but one column
            std::size_t width = 0;
            for (unsigned char c : cell) width += (c & 0xC0) != 0x80;
            out << ' ' << std::string(width < 16 ? 16 - width : 0, ' ') << cell;
        }
        out << '\n';
    }
    if (reports.size() > 1) {
        std::snprintf(buf, sizeof buf, "%-16s", "avg");
        out << buf;
        for (std::size_t i = 0; i < names.size(); ++i) {
            if (counts[i]) {
                std::snprintf(buf, sizeof buf, " %16.1f", 100.0 * sums[i] / static_cast<double>(counts[i]));
            } else {
                std::snprintf(buf, sizeof buf, " %16s", "-");
            }
            out << buf;
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace xdr
