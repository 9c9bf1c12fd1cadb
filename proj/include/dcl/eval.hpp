#pragma once

#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace dcl {

struct RunEntry {
    std::string query_id;
    std::string doc_id;
    int rank = 0;  // 1-based
    double score = 0.0;
    std::string tag;

    bool operator==(const RunEntry&) const = default;
};

/// Relevance labels: query -> doc -> gain. Absent entries have gain 0 and a
/// gain >= 1 counts as relevant.
class Qrels {
public:
    void set(const std::string& query_id, const std::string& doc_id, int gain);
    bool has_query(const std::string& query_id) const { return judgments_.count(query_id) > 0; }
    int gain(const std::string& query_id, const std::string& doc_id) const;
    const std::map<std::string, int>* judgments(const std::string& query_id) const;
    const std::map<std::string, std::map<std::string, int>>& all() const { return judgments_; }
    std::size_t query_count() const { return judgments_.size(); }

    bool operator==(const Qrels&) const = default;

private:
    std::map<std::string, std::map<std::string, int>> judgments_;
};

/// Per-query metrics; nullopt when the query has no relevant document.
/// `judged` maps doc -> gain for this query.
std::optional<double> average_precision(std::span<const std::string> ranked, const std::map<std::string, int>& judged);
std::optional<double> reciprocal_rank(std::span<const std::string> ranked, const std::map<std::string, int>& judged);
/// Exponential gain (2^g - 1) / log2(rank + 1), normalized by the ideal DCG@k.
std::optional<double> ndcg_at_k(std::span<const std::string> ranked, const std::map<std::string, int>& judged,
                                std::size_t k);

struct MetricTable {
    double map = 0.0;
    double mrr = 0.0;
    double ndcg1 = 0.0;
    double ndcg3 = 0.0;
    double ndcg5 = 0.0;
    double ndcg10 = 0.0;
    std::size_t queries_evaluated = 0;
    std::size_t queries_without_relevant = 0;

    bool operator==(const MetricTable&) const = default;
};

/// Averages over queries with at least one relevant document; ranks (not
/// scores) decide the order. Throws InputError listing run query ids absent
/// from the qrels.
MetricTable evaluate_run(std::span<const RunEntry> run, const Qrels& qrels);

/// Six columns: query_id Q0 doc_id rank score tag; score as %.6g.
void write_run_file(std::ostream& out, std::span<const RunEntry> run);
/// Throws InputError with the 1-based line number for malformed input.
std::vector<RunEntry> read_run_file(std::istream& in);

/// Four columns: query_id 0 doc_id gain.
void write_qrels(std::ostream& out, const Qrels& qrels);
Qrels read_qrels(std::istream& in);

std::string format_metric_table(const MetricTable& table);

}  // namespace dcl
