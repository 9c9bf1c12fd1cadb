#pragma once

#include <span>
#include <string>
#include <vector>

#include "dcl/curriculum.hpp"
#include "dcl/encoder.hpp"
#include "dcl/session_store.hpp"

namespace dcl {

/// The trainable context-aware ranker: its own dual encoder plus a fixed
/// temperature. Independent of any DenseScorer parameters.
struct RankerParams {
    Vocabulary vocab;
    DualEncoder net;
    double temperature = 1.0;

    static RankerParams zeros(Vocabulary vocab, std::size_t d_emb, std::size_t hidden, double temperature = 1.0);
    static RankerParams random(Vocabulary vocab, std::size_t d_emb, std::size_t hidden, double temperature,
                               Rng& rng);

    std::string digest() const;
    bool operator==(const RankerParams&) const = default;
};

Checkpoint to_checkpoint(const RankerParams& params, std::optional<OptimizerState> state = std::nullopt);
RankerParams from_checkpoint(const Checkpoint& ckpt);

double rank_score(const RankerParams& params, std::span<const std::string> context_tokens, const Document& doc);
double rank_score(const RankerParams& params, const SearchContext& context, const Document& doc);

/// -log softmax(scores)[0]: the positive sits at index 0. Max-subtracted.
double listwise_loss(std::span<const double> scores);

/// One slate in id space: candidates[0] is the positive.
struct IdSlate {
    std::vector<std::uint32_t> context_ids;
    std::vector<std::vector<std::uint32_t>> candidates;
};

struct LossReport {
    double loss = 0.0;
    std::vector<double> grad;                 // congruent with DualEncoder::params()
    std::vector<std::size_t> positive_ranks;  // 1 + negatives scoring strictly higher
};

/// Mean listwise softmax cross-entropy over the slates with exact
/// gradients. Throws ComputeError on a non-finite score.
LossReport listwise_loss_and_grad(const DualEncoder& net, double temperature, std::span<const IdSlate> slates);

/// Builds {d+} + negatives slates for the batch and evaluates them.
/// Throws InputError if item negative counts differ.
LossReport loss_and_grad(const RankerParams& params, const TrainingBatch& batch,
                         std::span<const SearchContext> contexts, const DocumentTable& docs);

struct ScoredDoc {
    std::string doc_id;
    double score = 0.0;

    bool operator==(const ScoredDoc&) const = default;
};

/// Candidates sorted by score descending, ties by doc_id ascending.
std::vector<ScoredDoc> rank_slate(const RankerParams& params, std::span<const std::string> context_tokens,
                                  std::span<const std::string> candidate_doc_ids, const DocumentTable& docs);

}  // namespace dcl
