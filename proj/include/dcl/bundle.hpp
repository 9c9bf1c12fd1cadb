#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dcl/encoder.hpp"
#include "dcl/eval.hpp"
#include "dcl/session_store.hpp"
#include "dcl/trainer.hpp"

namespace dcl {

/// Ingested corpus: documents, sessions, their derived search contexts and
/// negative pools. Split membership is a pure function of session_id.
struct CorpusBundle {
    SessionLog log;
    ContextSet contexts;
    int negative_window = kDefaultNegativeWindow;

    static CorpusBundle from_log(SessionLog log, int window);

    /// Indices of train-split contexts with at least `min_negatives` negatives.
    std::vector<std::size_t> training_context_ids(std::size_t min_negatives = 1) const;

    /// Contexts of the train split, for scorer fitting.
    std::vector<SearchContext> training_contexts() const;

    /// Every clicked interaction of `split` as a full candidate slate.
    std::vector<EvalQuery> eval_queries(Split split) const;

    /// Gain 1 for clicked candidates, 0 for the rest (only `split`).
    Qrels click_qrels(Split split) const;

    /// Query tokens and candidate titles seen in the train split.
    Vocabulary training_vocabulary() const;
};

/// Versioned JSON ("dcl-bundle", version 1).
void save_bundle(const std::filesystem::path& path, const CorpusBundle& bundle);
CorpusBundle load_bundle(const std::filesystem::path& path);

}  // namespace dcl
