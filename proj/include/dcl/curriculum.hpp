#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dcl/rng.hpp"
#include "dcl/score_source.hpp"
#include "dcl/session_store.hpp"

namespace dcl {

struct PacingParams {
    double delta = 0.3;  // initial fraction of positives
    double eta = 0.7;    // final fraction of negatives
    double alpha = 0.5;  // positives fully exposed at alpha * T
    double beta = 0.5;   // negatives fully shrunk at beta * T
    double k = 2.0;      // pacing curvature, >= 1
    std::uint64_t total_steps = 1;

    /// Throws InputError unless delta, eta, alpha, beta lie in (0, 1),
    /// k >= 1 and total_steps >= 1.
    void validate() const;
};

/// Fraction of the ascending positive list eligible at step t:
///   min(1, (t (1 - delta^k) / (alpha T) + delta^k)^(1/k))
/// Throws InputError for t > T.
double pacing_positive(const PacingParams& p, std::uint64_t t);

/// Fraction of each descending negative list eligible at step t:
///   max(eta, 1 + eta - (t (1 - eta^k) / (beta T) + eta^k)^(1/k))
double pacing_negative(const PacingParams& p, std::uint64_t t);

/// 1-based position of `positive_index` in `scores` sorted descending,
/// ties resolved by index (== doc_id order in a DocumentTable).
std::size_t rank_in_corpus(std::span<const double> scores, std::size_t positive_index);

/// rank + (1 - clamp(score / corpus_max, 0, 1)). Throws InputError when
/// corpus_max <= 0.
double difficulty_positive(std::size_t rank, double positive_score, double corpus_max_score);

/// Ranks the positive against every document under `source`.
double difficulty_positive(const ScoreSource& source, const SearchContext& context, const DocumentTable& docs,
                           double corpus_max_score);

/// M(C, d-) itself.
double difficulty_negative(const ScoreSource& source, const SearchContext& context, std::string_view doc_id);

struct NegativeEntry {
    std::string doc_id;
    double difficulty = 0.0;

    bool operator==(const NegativeEntry&) const = default;
};

struct LedgerEntry {
    std::size_t context = 0;  // index into the context list the ledger was built from
    std::string positive_doc_id;
    double difficulty = 0.0;
    std::vector<NegativeEntry> negatives;  // descending difficulty, ties by doc_id

    bool operator==(const LedgerEntry&) const = default;
};

/// Positive pairs sorted ascending by difficulty (ties by context id), each
/// carrying its context's negative pool sorted descending.
class DifficultyLedger {
public:
    DifficultyLedger() = default;
    /// Sorts and validates; throws InputError for an empty entry list, a
    /// context appearing twice, or an empty negative pool.
    DifficultyLedger(std::vector<LedgerEntry> entries, std::string positive_scorer, std::string negative_scorer,
                     std::string scorer_digest);

    std::size_t size() const { return entries_.size(); }
    const LedgerEntry& operator[](std::size_t i) const { return entries_[i]; }
    const std::vector<LedgerEntry>& entries() const { return entries_; }

    const std::string& positive_scorer() const { return positive_scorer_; }
    const std::string& negative_scorer() const { return negative_scorer_; }
    const std::string& scorer_digest() const { return scorer_digest_; }

    void save(const std::filesystem::path& path) const;
    static DifficultyLedger load(const std::filesystem::path& path);

    bool operator==(const DifficultyLedger&) const = default;

private:
    std::vector<LedgerEntry> entries_;
    std::string positive_scorer_;
    std::string negative_scorer_;
    std::string scorer_digest_;
};

/// Scores every context's positive with `positive_source` (rank plus normalized score against
/// the full document table) and its negative pool with `negative_source`.
/// `context_ids` selects the training contexts; the corpus max runs over
/// exactly those positives.
DifficultyLedger build_ledger(const ScoreSource& positive_source, const ScoreSource& negative_source,
                              std::span<const SearchContext> contexts, std::span<const std::size_t> context_ids,
                              const DocumentTable& docs);

/// ceil(fraction * n), clamped to [1, n] for n > 0.
std::size_t prefix_size(double fraction, std::size_t n);

enum class NegativeRegion { Prefix, TopHalf, BottomHalf };

/// Which slice of the ledger a step may draw from.
struct SamplingPlan {
    double positive_fraction = 1.0;
    double negative_fraction = 1.0;  // used by NegativeRegion::Prefix
    NegativeRegion region = NegativeRegion::Prefix;
};

/// [begin, end) of the eligible slice of a negative list of size n.
std::pair<std::size_t, std::size_t> negative_slice(const SamplingPlan& plan, std::size_t n);

struct BatchItem {
    std::size_t ledger_index = 0;
    std::size_t context = 0;
    std::string positive_doc_id;
    std::vector<std::string> negatives;

    bool operator==(const BatchItem&) const = default;
};

struct TrainingBatch {
    std::vector<BatchItem> items;

    bool operator==(const TrainingBatch&) const = default;
};

/// Uniform draws without replacement: batch_size positives from the
/// eligible prefix, then m negatives from each item's eligible slice.
/// Throws InputError if batch_size exceeds the eligible positives or a
/// context's slice holds fewer than m negatives.
TrainingBatch sample_batch(const DifficultyLedger& ledger, const SamplingPlan& plan, std::size_t batch_size,
                           std::size_t m, Rng& rng);

TrainingBatch sample_batch(const DifficultyLedger& ledger, const PacingParams& pacing, std::uint64_t t,
                           std::size_t batch_size, std::size_t m, Rng& rng);

}  // namespace dcl
