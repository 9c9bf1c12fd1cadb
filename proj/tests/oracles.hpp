#pragma once

// Independent reference implementations used only by the tests. They are
// written for clarity, not speed, and share no code with the library.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace oracle {

// Central differences of f at p, one coordinate at a time.
inline std::vector<double> finite_difference(std::span<double> p, const std::function<double()>& f,
                                             double h = 1e-5) {
    std::vector<double> g(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double keep = p[i];
        p[i] = keep + h;
        const double up = f();
        p[i] = keep - h;
        const double down = f();
        p[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

inline double max_relative_error(std::span<const double> analytic, std::span<const double> numeric) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double a = analytic[i], n = numeric[i];
        const double denom = std::max({std::abs(a), std::abs(n), 1e-6});
        worst = std::max(worst, std::abs(a - n) / denom);
    }
    return worst;
}

// Okapi BM25 straight from the textbook formula, recounting everything.
inline double bm25(const std::vector<std::string>& query, const std::vector<std::string>& doc,
                   const std::vector<std::vector<std::string>>& corpus, double k1 = 1.2, double b = 0.75) {
    const double n = static_cast<double>(corpus.size());
    double total_len = 0.0;
    for (const auto& d : corpus) total_len += static_cast<double>(d.size());
    const double avgdl = n > 0 ? total_len / n : 0.0;
    double score = 0.0;
    for (const auto& term : query) {
        double df = 0.0;
        for (const auto& d : corpus)
            if (std::find(d.begin(), d.end(), term) != d.end()) df += 1.0;
        const double tf = static_cast<double>(std::count(doc.begin(), doc.end(), term));
        if (tf == 0.0) continue;
        const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
        const double norm = avgdl > 0 ? static_cast<double>(doc.size()) / avgdl : 0.0;
        score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm));
    }
    return score;
}

// Per-query metrics over a ranked list and graded judgments.
inline double average_precision(const std::vector<std::string>& ranked, const std::map<std::string, double>& gains) {
    double relevant_total = 0.0;
    for (const auto& [d, g] : gains)
        if (g > 0) relevant_total += 1.0;
    double hits = 0.0, sum = 0.0;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        auto it = gains.find(ranked[i]);
        if (it != gains.end() && it->second > 0) {
            hits += 1.0;
            sum += hits / static_cast<double>(i + 1);
        }
    }
    return sum / relevant_total;
}

inline double reciprocal_rank(const std::vector<std::string>& ranked, const std::map<std::string, double>& gains) {
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        auto it = gains.find(ranked[i]);
        if (it != gains.end() && it->second > 0) return 1.0 / static_cast<double>(i + 1);
    }
    return 0.0;
}

inline double ndcg(const std::vector<std::string>& ranked, const std::map<std::string, double>& gains, std::size_t k) {
    auto gain_of = [&](const std::string& d) {
        auto it = gains.find(d);
        return it == gains.end() ? 0.0 : it->second;
    };
    double dcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i)
        dcg += (std::pow(2.0, gain_of(ranked[i])) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
    std::vector<double> ideal;
    for (const auto& [d, g] : gains) ideal.push_back(g);
    std::sort(ideal.rbegin(), ideal.rend());
    double idcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, ideal.size()); ++i)
        idcg += (std::pow(2.0, ideal[i]) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
    return idcg > 0 ? dcg / idcg : 0.0;
}

}  // namespace oracle
