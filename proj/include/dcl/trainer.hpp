#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dcl/curriculum.hpp"
#include "dcl/eval.hpp"
#include "dcl/ranker.hpp"

namespace dcl {

enum class CurriculumMode { Dual, PosOnly, NegOnly, None, EasyNegOnly, HardNegOnly };

inline constexpr CurriculumMode kAllModes[] = {CurriculumMode::Dual,        CurriculumMode::PosOnly,
                                               CurriculumMode::NegOnly,     CurriculumMode::None,
                                               CurriculumMode::EasyNegOnly, CurriculumMode::HardNegOnly};

std::string_view mode_name(CurriculumMode mode);
CurriculumMode parse_mode(std::string_view name);

enum class OptimizerKind { Sgd, Momentum };

std::string_view optimizer_name(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view name);

struct TrainConfig {
    PacingParams pacing;  // pacing.total_steps is T
    std::size_t batch_size = 16;
    std::size_t negatives = 2;  // m
    double learning_rate = 0.05;
    OptimizerKind optimizer = OptimizerKind::Momentum;
    double momentum = 0.9;
    std::uint64_t seed = 0;
    std::uint64_t checkpoint_interval = 0;  // 0 disables
    CurriculumMode mode = CurriculumMode::Dual;
    std::size_t d_emb = 32;
    std::size_t hidden = 32;
    double temperature = 1.0;

    /// Throws InputError on invalid settings. delta = 1 and eta = 1 are
    /// accepted and switch the respective curriculum off.
    void validate() const;
};

/// ceil(positives / batch_size).
std::uint64_t steps_per_epoch(std::size_t positives, std::size_t batch_size);

/// The slice a step may draw from under the configured mode.
SamplingPlan sampling_plan(const TrainConfig& config, std::uint64_t t);

/// One ranked slate for evaluation: a query's context and all candidates.
struct EvalQuery {
    std::string query_id;
    Tokens context_tokens;
    std::vector<std::string> candidate_doc_ids;
};

/// Ranks every query's slate with rank_slate.
std::vector<RunEntry> make_run(const RankerParams& params, std::span<const EvalQuery> queries,
                               const DocumentTable& docs, const std::string& tag);

/// Mean -log softmax of the relevant documents over each full slate.
double slate_loss(const RankerParams& params, std::span<const EvalQuery> queries, const Qrels& qrels,
                  const DocumentTable& docs);

struct StepRecord {
    std::uint64_t t = 0;
    double f_p = 1.0;
    double f_n = 1.0;
    std::size_t eligible_positives = 0;
    double eligible_negative_fraction = 1.0;
    double loss = 0.0;
};

struct EpochRecord {
    std::size_t epoch = 0;
    std::uint64_t last_step = 0;
    MetricTable validation;
    double validation_loss = 0.0;
    bool warning_no_improvement = false;
};

struct TrainLog {
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
};

struct ValidationSet {
    std::span<const EvalQuery> queries;
    const Qrels* qrels = nullptr;
};

struct TrainHooks {
    /// Called after steps that land on the checkpoint interval, and once
    /// more after the final step. `state.step` is the next step to run.
    std::function<void(const RankerParams&, const OptimizerState&)> on_checkpoint;
    std::function<void(const StepRecord&)> on_step;
    std::function<void(const EpochRecord&)> on_epoch;
    /// Stop once this many steps are done, as if interrupted (0 = run to T).
    /// The checkpoint hook fires for the last completed step.
    std::uint64_t halt_after = 0;
};

struct TrainResult {
    RankerParams params;
    OptimizerState state;
    TrainLog log;
};

/// Parameter init drawn from the "init" substream of config.seed.
RankerParams initial_ranker(const TrainConfig& config, Vocabulary vocab);

/// Runs steps [resume.step, T) of curriculum-sampled training. Each step's
/// batch comes from the "sampler" substream indexed by the step, so a
/// resumed run replays the uninterrupted one exactly.
TrainResult train(const TrainConfig& config, const DifficultyLedger& ledger, std::span<const SearchContext> contexts,
                  const DocumentTable& docs, const ValidationSet& validation, RankerParams initial,
                  const TrainHooks& hooks = {}, std::optional<OptimizerState> resume = std::nullopt);

struct SweepRow {
    double delta = 0.0;
    double eta = 0.0;
    MetricTable validation;
    RankerParams params;  // final parameters of the run
};

/// One full training run per (delta, eta) with identical seeds.
std::vector<SweepRow> sweep(const TrainConfig& base, std::span<const double> deltas, std::span<const double> etas,
                            const DifficultyLedger& ledger, std::span<const SearchContext> contexts,
                            const DocumentTable& docs, const ValidationSet& validation, const Vocabulary& vocab);

}  // namespace dcl
