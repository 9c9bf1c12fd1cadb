#include "dcl/curriculum.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "dcl/error.hpp"

namespace dcl {

using json = nlohmann::json;

void PacingParams::validate() const {
    auto open_unit = [](double x) { return x > 0.0 && x < 1.0; };
    if (!open_unit(delta)) throw InputError("pacing: delta must lie in (0, 1)");
    if (!open_unit(eta)) throw InputError("pacing: eta must lie in (0, 1)");
    if (!open_unit(alpha)) throw InputError("pacing: alpha must lie in (0, 1)");
    if (!open_unit(beta)) throw InputError("pacing: beta must lie in (0, 1)");
    if (!(k >= 1.0) || !std::isfinite(k)) throw InputError("pacing: k must be >= 1");
    if (total_steps < 1) throw InputError("pacing: T must be >= 1");
}

namespace {

void check_step(const PacingParams& p, std::uint64_t t) {
    p.validate();
    if (t > p.total_steps)
        throw InputError("pacing: step " + std::to_string(t) + " outside [0, " + std::to_string(p.total_steps) + "]");
}

// (t (1 - base^k) / (span T) + base^k)^(1/k)
double pacing_core(double base, double span, double k, std::uint64_t t, std::uint64_t total) {
    const double base_k = std::pow(base, k);
    const double x = static_cast<double>(t) * (1.0 - base_k) / (span * static_cast<double>(total)) + base_k;
    return std::pow(x, 1.0 / k);
}

}  // namespace

double pacing_positive(const PacingParams& p, std::uint64_t t) {
    check_step(p, t);
    // The endpoints are pinned exactly; pow() would otherwise leave an ulp
    // of drift at t = 0 and t = alpha T.
    if (t == 0) return p.delta;
    if (static_cast<double>(t) >= p.alpha * static_cast<double>(p.total_steps)) return 1.0;
    return std::min(1.0, pacing_core(p.delta, p.alpha, p.k, t, p.total_steps));
}

double pacing_negative(const PacingParams& p, std::uint64_t t) {
    check_step(p, t);
    if (t == 0) return 1.0;
    if (static_cast<double>(t) >= p.beta * static_cast<double>(p.total_steps)) return p.eta;
    return std::max(p.eta, 1.0 + p.eta - pacing_core(p.eta, p.beta, p.k, t, p.total_steps));
}

std::size_t rank_in_corpus(std::span<const double> scores, std::size_t positive_index) {
    const double s = scores[positive_index];
    std::size_t better = 0;
    for (std::size_t j = 0; j < scores.size(); ++j)
        if (scores[j] > s || (scores[j] == s && j < positive_index)) ++better;
    return better + 1;
}

double difficulty_positive(std::size_t rank, double positive_score, double corpus_max_score) {
    if (!(corpus_max_score > 0.0))
        throw InputError("difficulty: corpus max score must be > 0 (degenerate scorer)");
    const double normalized = std::clamp(positive_score / corpus_max_score, 0.0, 1.0);
    return static_cast<double>(rank) + (1.0 - normalized);
}

double difficulty_positive(const ScoreSource& source, const SearchContext& context, const DocumentTable& docs,
                           double corpus_max_score) {
    const auto idx = docs.index_of(context.positive_doc_id);
    if (!idx) throw InputError("difficulty: unknown positive doc " + context.positive_doc_id);
    const auto scores = source.score_corpus(context);
    return difficulty_positive(rank_in_corpus(scores, *idx), scores[*idx], corpus_max_score);
}

double difficulty_negative(const ScoreSource& source, const SearchContext& context, std::string_view doc_id) {
    return source.score(context, doc_id);
}

DifficultyLedger::DifficultyLedger(std::vector<LedgerEntry> entries, std::string positive_scorer,
                                   std::string negative_scorer, std::string scorer_digest)
    : entries_(std::move(entries)),
      positive_scorer_(std::move(positive_scorer)),
      negative_scorer_(std::move(negative_scorer)),
      scorer_digest_(std::move(scorer_digest)) {
    if (entries_.empty()) throw InputError("ledger: no positive pairs");
    std::set<std::size_t> seen;
    for (auto& e : entries_) {
        if (!seen.insert(e.context).second)
            throw InputError("ledger: context " + std::to_string(e.context) + " appears twice");
        if (e.negatives.empty())
            throw InputError("ledger: context " + std::to_string(e.context) + " has an empty negative pool");
        std::sort(e.negatives.begin(), e.negatives.end(), [](const NegativeEntry& a, const NegativeEntry& b) {
            if (a.difficulty != b.difficulty) return a.difficulty > b.difficulty;
            return a.doc_id < b.doc_id;
        });
    }
    std::sort(entries_.begin(), entries_.end(), [](const LedgerEntry& a, const LedgerEntry& b) {
        if (a.difficulty != b.difficulty) return a.difficulty < b.difficulty;
        return a.context < b.context;
    });
}

namespace {
constexpr const char* kLedgerFormat = "dcl-ledger";
constexpr int kLedgerVersion = 1;
}  // namespace

void DifficultyLedger::save(const std::filesystem::path& path) const {
    json j;
    j["format"] = kLedgerFormat;
    j["version"] = kLedgerVersion;
    j["positive_scorer"] = positive_scorer_;
    j["negative_scorer"] = negative_scorer_;
    j["scorer_digest"] = scorer_digest_;
    json entries = json::array();
    for (const auto& e : entries_) {
        json negs = json::array();
        for (const auto& n : e.negatives) negs.push_back({{"doc_id", n.doc_id}, {"d_n", n.difficulty}});
        entries.push_back({{"context", e.context}, {"doc_id", e.positive_doc_id}, {"d_p", e.difficulty},
                           {"negatives", std::move(negs)}});
    }
    j["positives"] = std::move(entries);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    out << j.dump() << '\n';
}

DifficultyLedger DifficultyLedger::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open ledger " + path.string());
    json j;
    try {
        in >> j;
        if (j.value("format", "") != kLedgerFormat) throw InputError(path.string() + ": not a ledger file");
        if (j.value("version", 0) != kLedgerVersion) throw InputError(path.string() + ": unsupported ledger version");
        std::vector<LedgerEntry> entries;
        for (const auto& e : j.at("positives")) {
            LedgerEntry le;
            le.context = e.at("context").get<std::size_t>();
            le.positive_doc_id = e.at("doc_id").get<std::string>();
            le.difficulty = e.at("d_p").get<double>();
            for (const auto& n : e.at("negatives"))
                le.negatives.push_back({n.at("doc_id").get<std::string>(), n.at("d_n").get<double>()});
            entries.push_back(std::move(le));
        }
        return DifficultyLedger(std::move(entries), j.at("positive_scorer").get<std::string>(),
                                j.at("negative_scorer").get<std::string>(), j.at("scorer_digest").get<std::string>());
    } catch (const json::exception& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

DifficultyLedger build_ledger(const ScoreSource& positive_source, const ScoreSource& negative_source,
                              std::span<const SearchContext> contexts, std::span<const std::size_t> context_ids,
                              const DocumentTable& docs) {
    if (context_ids.empty()) throw InputError("ledger: no training contexts");

    struct Scored {
        std::size_t rank;
        double score;
    };
    std::vector<Scored> scored;
    scored.reserve(context_ids.size());
    double corpus_max = -std::numeric_limits<double>::infinity();
    for (auto id : context_ids) {
        const auto& c = contexts[id];
        const auto idx = docs.index_of(c.positive_doc_id);
        if (!idx) throw InputError("ledger: unknown positive doc " + c.positive_doc_id);
        const auto scores = positive_source.score_corpus(c);
        scored.push_back({rank_in_corpus(scores, *idx), scores[*idx]});
        corpus_max = std::max(corpus_max, scores[*idx]);
    }

    std::vector<LedgerEntry> entries;
    entries.reserve(context_ids.size());
    for (std::size_t i = 0; i < context_ids.size(); ++i) {
        const auto& c = contexts[context_ids[i]];
        LedgerEntry e;
        e.context = context_ids[i];
        e.positive_doc_id = c.positive_doc_id;
        e.difficulty = difficulty_positive(scored[i].rank, scored[i].score, corpus_max);
        for (const auto& neg : c.negative_pool)
            e.negatives.push_back({neg, difficulty_negative(negative_source, c, neg)});
        if (e.negatives.empty()) throw InputError("ledger: context " + c.key() + " has an empty negative pool");
        entries.push_back(std::move(e));
    }
    return DifficultyLedger(std::move(entries), positive_source.name(), negative_source.name(),
                            positive_source.digest() + "/" + negative_source.digest());
}

std::size_t prefix_size(double fraction, std::size_t n) {
    if (n == 0) return 0;
    // The epsilon absorbs representation error such as 0.3 * 10 -> 3.0000000000000004.
    const double raw = std::ceil(fraction * static_cast<double>(n) - 1e-9);
    return std::clamp<std::size_t>(raw < 1.0 ? 1 : static_cast<std::size_t>(raw), 1, n);
}

std::pair<std::size_t, std::size_t> negative_slice(const SamplingPlan& plan, std::size_t n) {
    const std::size_t half = (n + 1) / 2;
    switch (plan.region) {
        case NegativeRegion::TopHalf: return {0, half};
        case NegativeRegion::BottomHalf: return {n - half, n};
        case NegativeRegion::Prefix: break;
    }
    return {0, prefix_size(plan.negative_fraction, n)};
}

TrainingBatch sample_batch(const DifficultyLedger& ledger, const SamplingPlan& plan, std::size_t batch_size,
                           std::size_t m, Rng& rng) {
    if (batch_size < 1) throw InputError("sampler: batch_size must be >= 1");
    const std::size_t eligible = prefix_size(plan.positive_fraction, ledger.size());
    if (batch_size > eligible)
        throw InputError("sampler: batch_size " + std::to_string(batch_size) + " exceeds the " +
                         std::to_string(eligible) + " eligible positives");

    TrainingBatch batch;
    batch.items.reserve(batch_size);
    for (auto li : rng.sample_without_replacement(eligible, batch_size)) {
        const auto& entry = ledger[li];
        const auto [begin, end] = negative_slice(plan, entry.negatives.size());
        if (end - begin < m)
            throw InputError("sampler: context " + std::to_string(entry.context) + " has only " +
                             std::to_string(end - begin) + " eligible negatives, need " + std::to_string(m));
        BatchItem item{li, entry.context, entry.positive_doc_id, {}};
        item.negatives.reserve(m);
        for (auto ni : rng.sample_without_replacement(end - begin, m))
            item.negatives.push_back(entry.negatives[begin + ni].doc_id);
        batch.items.push_back(std::move(item));
    }
    return batch;
}

TrainingBatch sample_batch(const DifficultyLedger& ledger, const PacingParams& pacing, std::uint64_t t,
                           std::size_t batch_size, std::size_t m, Rng& rng) {
    SamplingPlan plan{pacing_positive(pacing, t), pacing_negative(pacing, t), NegativeRegion::Prefix};
    return sample_batch(ledger, plan, batch_size, m, rng);
}

}  // namespace dcl
