#include "dcl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "dcl/error.hpp"

namespace dcl {

std::string_view mode_name(CurriculumMode mode) {
    switch (mode) {
        case CurriculumMode::Dual: return "dual";
        case CurriculumMode::PosOnly: return "pos-only";
        case CurriculumMode::NegOnly: return "neg-only";
        case CurriculumMode::None: return "none";
        case CurriculumMode::EasyNegOnly: return "easy-neg-only";
        case CurriculumMode::HardNegOnly: return "hard-neg-only";
    }
    return "dual";
}

CurriculumMode parse_mode(std::string_view name) {
    for (auto m : kAllModes)
        if (mode_name(m) == name) return m;
    throw InputError("unknown curriculum mode '" + std::string(name) +
                     "' (expected dual|pos-only|neg-only|none|easy-neg-only|hard-neg-only)");
}

std::string_view optimizer_name(OptimizerKind kind) { return kind == OptimizerKind::Sgd ? "sgd" : "momentum"; }

OptimizerKind parse_optimizer(std::string_view name) {
    if (name == "sgd") return OptimizerKind::Sgd;
    if (name == "momentum") return OptimizerKind::Momentum;
    throw InputError("unknown optimizer '" + std::string(name) + "' (expected sgd|momentum)");
}

namespace {

bool positive_curriculum_on(const TrainConfig& c) {
    return (c.mode == CurriculumMode::Dual || c.mode == CurriculumMode::PosOnly) && c.pacing.delta < 1.0;
}

bool negative_curriculum_on(const TrainConfig& c) {
    return (c.mode == CurriculumMode::Dual || c.mode == CurriculumMode::NegOnly) && c.pacing.eta < 1.0;
}

// Pacing params with the disabling sentinels swapped for valid placeholders.
PacingParams checked_pacing(const TrainConfig& c) {
    PacingParams p = c.pacing;
    if (p.delta == 1.0) p.delta = 0.5;
    if (p.eta == 1.0) p.eta = 0.5;
    p.validate();
    return p;
}

}  // namespace

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw InputError("train: learning_rate must be > 0");
    if (negatives < 1) throw InputError("train: m (negatives per positive) must be >= 1");
    if (batch_size < 1) throw InputError("train: batch_size must be >= 1");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InputError("train: momentum must lie in [0, 1)");
    if (!(temperature > 0.0)) throw InputError("train: temperature must be > 0");
    if (d_emb == 0 || hidden == 0) throw InputError("train: encoder dims must be positive");
    if (pacing.total_steps > 0) checked_pacing(*this);
}

std::uint64_t steps_per_epoch(std::size_t positives, std::size_t batch_size) {
    if (batch_size == 0) throw InputError("batch_size must be >= 1");
    return (positives + batch_size - 1) / batch_size;
}

SamplingPlan sampling_plan(const TrainConfig& config, std::uint64_t t) {
    SamplingPlan plan;
    const auto pacing = checked_pacing(config);
    if (positive_curriculum_on(config)) plan.positive_fraction = pacing_positive(pacing, t);
    if (negative_curriculum_on(config)) plan.negative_fraction = pacing_negative(pacing, t);
    if (config.mode == CurriculumMode::EasyNegOnly) plan.region = NegativeRegion::BottomHalf;
    if (config.mode == CurriculumMode::HardNegOnly) plan.region = NegativeRegion::TopHalf;
    return plan;
}

std::vector<RunEntry> make_run(const RankerParams& params, std::span<const EvalQuery> queries,
                               const DocumentTable& docs, const std::string& tag) {
    std::vector<RunEntry> run;
    for (const auto& q : queries) {
        const auto ranked = rank_slate(params, q.context_tokens, q.candidate_doc_ids, docs);
        for (std::size_t i = 0; i < ranked.size(); ++i)
            run.push_back({q.query_id, ranked[i].doc_id, static_cast<int>(i + 1), ranked[i].score, tag});
    }
    return run;
}

double slate_loss(const RankerParams& params, std::span<const EvalQuery> queries, const Qrels& qrels,
                  const DocumentTable& docs) {
    double total = 0.0;
    std::size_t n = 0;
    std::vector<double> scores;
    for (const auto& q : queries) {
        const auto ranked = rank_slate(params, q.context_tokens, q.candidate_doc_ids, docs);
        for (const auto& target : ranked) {
            if (qrels.gain(q.query_id, target.doc_id) < 1) continue;
            scores.clear();
            scores.push_back(target.score);
            for (const auto& other : ranked)
                if (other.doc_id != target.doc_id) scores.push_back(other.score);
            total += listwise_loss(scores);
            ++n;
        }
    }
    return n ? total / static_cast<double>(n) : 0.0;
}

RankerParams initial_ranker(const TrainConfig& config, Vocabulary vocab) {
    auto rng = Rng::substream(config.seed, "init");
    return RankerParams::random(std::move(vocab), config.d_emb, config.hidden, config.temperature, rng);
}

TrainResult train(const TrainConfig& config, const DifficultyLedger& ledger, std::span<const SearchContext> contexts,
                  const DocumentTable& docs, const ValidationSet& validation, RankerParams initial,
                  const TrainHooks& hooks, std::optional<OptimizerState> resume) {
    config.validate();
    TrainResult result{std::move(initial), {}, {}};
    const std::uint64_t total = config.pacing.total_steps;
    if (total == 0) return result;

    for (const auto& e : ledger.entries())
        if (e.context >= contexts.size())
            throw InputError("ledger references context " + std::to_string(e.context) + " outside the bundle");

    auto params = result.params.net.params();
    OptimizerState state = resume.value_or(OptimizerState{});
    if (config.optimizer == OptimizerKind::Momentum && state.velocity.empty())
        state.velocity.assign(params.size(), 0.0);
    if (!state.velocity.empty() && state.velocity.size() != params.size())
        throw InputError("resume state does not match the parameter count");
    if (state.step > total) throw InputError("resume step lies beyond T");

    const auto epoch_len = steps_per_epoch(ledger.size(), config.batch_size);
    double previous_val_loss = std::numeric_limits<double>::infinity();

    for (std::uint64_t t = state.step; t < total; ++t) {
        const auto plan = sampling_plan(config, t);
        auto rng = Rng::substream(config.seed, "sampler", t);
        TrainingBatch batch;
        LossReport report;
        try {
            batch = sample_batch(ledger, plan, config.batch_size, config.negatives, rng);
            report = loss_and_grad(result.params, batch, contexts, docs);
        } catch (const InputError& e) {
            throw InputError("step " + std::to_string(t) + ": " + e.what());
        } catch (const ComputeError& e) {
            throw ComputeError("step " + std::to_string(t) + ": " + e.what());
        }

        if (config.optimizer == OptimizerKind::Momentum) {
            for (std::size_t i = 0; i < params.size(); ++i) {
                state.velocity[i] = config.momentum * state.velocity[i] + report.grad[i];
                params[i] -= config.learning_rate * state.velocity[i];
            }
        } else {
            for (std::size_t i = 0; i < params.size(); ++i) params[i] -= config.learning_rate * report.grad[i];
        }
        state.step = t + 1;

        StepRecord rec;
        rec.t = t;
        rec.f_p = plan.positive_fraction;
        rec.f_n = plan.region == NegativeRegion::Prefix ? plan.negative_fraction : 0.5;
        rec.eligible_positives = prefix_size(plan.positive_fraction, ledger.size());
        rec.eligible_negative_fraction = rec.f_n;
        rec.loss = report.loss;
        result.log.steps.push_back(rec);
        if (hooks.on_step) hooks.on_step(rec);

        if ((t + 1) % epoch_len == 0 || t + 1 == total) {
            EpochRecord ep;
            ep.epoch = static_cast<std::size_t>(t / epoch_len);
            ep.last_step = t;
            if (validation.qrels && !validation.queries.empty()) {
                const auto run = make_run(result.params, validation.queries, docs, "valid");
                ep.validation = evaluate_run(run, *validation.qrels);
                ep.validation_loss = slate_loss(result.params, validation.queries, *validation.qrels, docs);
                ep.warning_no_improvement = ep.validation_loss >= previous_val_loss;
                previous_val_loss = ep.validation_loss;
            }
            result.log.epochs.push_back(ep);
            if (hooks.on_epoch) hooks.on_epoch(ep);
        }
        const bool interval_hit = config.checkpoint_interval > 0 && (t + 1) % config.checkpoint_interval == 0;
        const bool halting = hooks.halt_after > 0 && t + 1 >= hooks.halt_after;
        if (hooks.on_checkpoint && (interval_hit || halting || t + 1 == total)) hooks.on_checkpoint(result.params, state);
        if (halting) break;
    }
    result.state = std::move(state);
    return result;
}

namespace {

std::string sweep_failure(double delta, double eta, const std::exception& ex) {
    char where[96];
    std::snprintf(where, sizeof where, "sweep failed at delta=%g eta=%g: ", delta, eta);
    return where + std::string(ex.what());
}

}  // namespace

std::vector<SweepRow> sweep(const TrainConfig& base, std::span<const double> deltas, std::span<const double> etas,
                            const DifficultyLedger& ledger, std::span<const SearchContext> contexts,
                            const DocumentTable& docs, const ValidationSet& validation, const Vocabulary& vocab) {
    for (double v : deltas)
        if (!(v > 0.0 && v <= 1.0)) throw InputError("sweep: delta values must lie in (0, 1]");
    for (double v : etas)
        if (!(v > 0.0 && v <= 1.0)) throw InputError("sweep: eta values must lie in (0, 1]");
    std::vector<SweepRow> rows;
    for (double d : deltas) {
        for (double e : etas) {
            TrainConfig cfg = base;
            cfg.pacing.delta = d;
            cfg.pacing.eta = e;
            try {
                auto result = train(cfg, ledger, contexts, docs, validation, initial_ranker(cfg, vocab));
                SweepRow row{d, e, {}, result.params};
                if (validation.qrels && !validation.queries.empty())
                    row.validation = evaluate_run(make_run(result.params, validation.queries, docs, "sweep"),
                                                  *validation.qrels);
                rows.push_back(row);
            } catch (const InputError& ex) {
                throw InputError(sweep_failure(d, e, ex));
            } catch (const std::exception& ex) {
                throw ComputeError(sweep_failure(d, e, ex));
            }
        }
    }
    return rows;
}

}  // namespace dcl
