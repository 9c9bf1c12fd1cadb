#include "dcl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>

#include "dcl/error.hpp"

namespace dcl {

void Qrels::set(const std::string& query_id, const std::string& doc_id, int gain) {
    if (gain < 0) throw InputError("qrels: negative gain for " + query_id + "/" + doc_id);
    judgments_[query_id][doc_id] = gain;
}

int Qrels::gain(const std::string& query_id, const std::string& doc_id) const {
    auto q = judgments_.find(query_id);
    if (q == judgments_.end()) return 0;
    auto d = q->second.find(doc_id);
    return d == q->second.end() ? 0 : d->second;
}

const std::map<std::string, int>* Qrels::judgments(const std::string& query_id) const {
    auto q = judgments_.find(query_id);
    return q == judgments_.end() ? nullptr : &q->second;
}

namespace {

int gain_of(const std::map<std::string, int>& judged, const std::string& doc) {
    auto it = judged.find(doc);
    return it == judged.end() ? 0 : it->second;
}

std::size_t relevant_count(const std::map<std::string, int>& judged) {
    return static_cast<std::size_t>(
        std::count_if(judged.begin(), judged.end(), [](const auto& kv) { return kv.second >= 1; }));
}

}  // namespace

std::optional<double> average_precision(std::span<const std::string> ranked, const std::map<std::string, int>& judged) {
    const auto total = relevant_count(judged);
    if (total == 0) return std::nullopt;
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        if (gain_of(judged, ranked[i]) >= 1) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(i + 1);
        }
    }
    // Relevant documents missing from the ranking contribute zero precision.
    return sum / static_cast<double>(total);
}

std::optional<double> reciprocal_rank(std::span<const std::string> ranked, const std::map<std::string, int>& judged) {
    if (relevant_count(judged) == 0) return std::nullopt;
    for (std::size_t i = 0; i < ranked.size(); ++i)
        if (gain_of(judged, ranked[i]) >= 1) return 1.0 / static_cast<double>(i + 1);
    return 0.0;
}

std::optional<double> ndcg_at_k(std::span<const std::string> ranked, const std::map<std::string, int>& judged,
                                std::size_t k) {
    if (relevant_count(judged) == 0) return std::nullopt;
    auto discounted = [](int gain, std::size_t pos) {
        return (std::exp2(static_cast<double>(gain)) - 1.0) / std::log2(static_cast<double>(pos) + 2.0);
    };
    double dcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) dcg += discounted(gain_of(judged, ranked[i]), i);
    std::vector<int> ideal;
    for (const auto& [doc, g] : judged) ideal.push_back(g);
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    double idcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, ideal.size()); ++i) idcg += discounted(ideal[i], i);
    return dcg / idcg;
}

MetricTable evaluate_run(std::span<const RunEntry> run, const Qrels& qrels) {
    std::map<std::string, std::vector<const RunEntry*>> by_query;
    for (const auto& e : run) by_query[e.query_id].push_back(&e);

    std::vector<std::string> unknown;
    for (const auto& [q, entries] : by_query)
        if (!qrels.has_query(q)) unknown.push_back(q);
    if (!unknown.empty()) {
        std::string msg = "run references queries missing from qrels:";
        for (const auto& q : unknown) msg += " " + q;
        throw InputError(msg);
    }

    MetricTable t;
    std::vector<std::string> ranked;
    // Queries are visited in sorted id order, so the sums are reproducible.
    for (auto& [q, entries] : by_query) {
        std::stable_sort(entries.begin(), entries.end(),
                         [](const RunEntry* a, const RunEntry* b) { return a->rank < b->rank; });
        ranked.clear();
        for (const auto* e : entries) ranked.push_back(e->doc_id);
        const auto& judged = *qrels.judgments(q);
        const auto ap = average_precision(ranked, judged);
        if (!ap) {
            ++t.queries_without_relevant;
            continue;
        }
        ++t.queries_evaluated;
        t.map += *ap;
        t.mrr += *reciprocal_rank(ranked, judged);
        t.ndcg1 += *ndcg_at_k(ranked, judged, 1);
        t.ndcg3 += *ndcg_at_k(ranked, judged, 3);
        t.ndcg5 += *ndcg_at_k(ranked, judged, 5);
        t.ndcg10 += *ndcg_at_k(ranked, judged, 10);
    }
    if (t.queries_evaluated > 0) {
        const double n = static_cast<double>(t.queries_evaluated);
        for (double* v : {&t.map, &t.mrr, &t.ndcg1, &t.ndcg3, &t.ndcg5, &t.ndcg10}) *v /= n;
    }
    return t;
}

void write_run_file(std::ostream& out, std::span<const RunEntry> run) {
    char buf[64];
    for (const auto& e : run) {
        std::snprintf(buf, sizeof buf, "%.6g", e.score);
        out << e.query_id << " Q0 " << e.doc_id << ' ' << e.rank << ' ' << buf << ' ' << e.tag << '\n';
    }
}

std::vector<RunEntry> read_run_file(std::istream& in) {
    std::vector<RunEntry> run;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream is(line);
        RunEntry e;
        std::string q0, extra, rank, score;
        if (!(is >> e.query_id >> q0 >> e.doc_id >> rank >> score >> e.tag) || (is >> extra))
            throw InputError("run file line " + std::to_string(lineno) + ": expected 6 columns");
        try {
            std::size_t pos = 0;
            e.rank = std::stoi(rank, &pos);
            if (pos != rank.size() || e.rank < 1) throw std::invalid_argument("rank");
            e.score = std::stod(score, &pos);
            if (pos != score.size()) throw std::invalid_argument("score");
        } catch (const std::exception&) {
            throw InputError("run file line " + std::to_string(lineno) + ": bad rank or score");
        }
        run.push_back(std::move(e));
    }
    return run;
}

void write_qrels(std::ostream& out, const Qrels& qrels) {
    for (const auto& [q, docs] : qrels.all())
        for (const auto& [d, g] : docs) out << q << " 0 " << d << ' ' << g << '\n';
}

Qrels read_qrels(std::istream& in) {
    Qrels qrels;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream is(line);
        std::string q, iter, d, extra;
        int g = 0;
        if (!(is >> q >> iter >> d >> g) || (is >> extra) || g < 0)
            throw InputError("qrels line " + std::to_string(lineno) + ": expected 'query 0 doc gain'");
        qrels.set(q, d, g);
    }
    return qrels;
}

std::string format_metric_table(const MetricTable& t) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "MAP     %.4f\nMRR     %.4f\nNDCG@1  %.4f\nNDCG@3  %.4f\nNDCG@5  %.4f\nNDCG@10 %.4f\n"
                  "queries %zu (skipped without relevant: %zu)\n",
                  t.map, t.mrr, t.ndcg1, t.ndcg3, t.ndcg5, t.ndcg10, t.queries_evaluated,
                  t.queries_without_relevant);
    return buf;
}

}  // namespace dcl
