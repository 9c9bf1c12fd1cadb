#include "dcl/commands.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "dcl/bm25.hpp"
#include "dcl/bundle.hpp"
#include "dcl/curriculum.hpp"
#include "dcl/dense_scorer.hpp"
#include "dcl/digest.hpp"
#include "dcl/error.hpp"
#include "dcl/eval.hpp"
#include "dcl/manifest.hpp"
#include "dcl/synthetic.hpp"
#include "dcl/trainer.hpp"

namespace dcl::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kManifestName = "manifest.json";
constexpr const char* kLockName = ".dcl.lock";

/// Exclusive ownership of an output directory for one command.
class OutputLock {
public:
    explicit OutputLock(const fs::path& dir) : path_(dir / kLockName) {
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw InputError("cannot create output directory " + dir.string() + ": " + ec.message());
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0)
            throw InputError("output directory " + dir.string() + " is locked by another command (" + path_.string() +
                             ")");
    }
    ~OutputLock() {
        if (fd_ >= 0) {
            ::close(fd_);
            std::error_code ec;
            fs::remove(path_, ec);
        }
    }
    OutputLock(const OutputLock&) = delete;
    OutputLock& operator=(const OutputLock&) = delete;

private:
    fs::path path_;
    int fd_ = -1;
};

/// Collects provenance while a command runs and writes the manifest last.
class Provenance {
public:
    Provenance(std::string command, const std::vector<std::string>& argv, const fs::path& out_dir,
               std::string effective_config, std::uint64_t seed)
        : out_dir_(out_dir), lock_(out_dir) {
        manifest_.command = std::move(command);
        manifest_.argv = argv;
        manifest_.effective_config = std::move(effective_config);
        manifest_.seed = seed;
        manifest_.started_at = utc_timestamp();
    }

    void input(const fs::path& path) { manifest_.inputs[path.string()] = sha256_file(path); }
    fs::path output(const std::string& name) {
        outputs_.push_back(name);
        return out_dir_ / name;
    }
    void scorer_digest(std::string d) { manifest_.scorer_digest = std::move(d); }

    void finish() {
        for (const auto& name : outputs_) manifest_.outputs[name] = sha256_file(out_dir_ / name);
        manifest_.finished_at = utc_timestamp();
        save_manifest(out_dir_ / kManifestName, manifest_);
    }

private:
    fs::path out_dir_;
    OutputLock lock_;
    RunManifest manifest_;
    std::vector<std::string> outputs_;
};

void require_file(const fs::path& p, const char* what) {
    std::error_code ec;
    if (!fs::is_regular_file(p, ec)) throw InputError(std::string(what) + " not found: " + p.string());
}

fs::path resolve_bundle(const fs::path& p) {
    std::error_code ec;
    if (fs::is_directory(p, ec)) return p / "bundle.json";
    return p;
}

std::string fmt(const char* format, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, format, v);
    return buf;
}

json metrics_json(const MetricTable& t) {
    return {{"MAP", t.map},       {"MRR", t.mrr},         {"NDCG@1", t.ndcg1},
            {"NDCG@3", t.ndcg3},  {"NDCG@5", t.ndcg5},    {"NDCG@10", t.ndcg10},
            {"queries", t.queries_evaluated}, {"queries_without_relevant", t.queries_without_relevant}};
}

// ---------------------------------------------------------------- options

struct SynthOptions {
    SyntheticSpec spec;
    std::optional<std::uint64_t> seed;
    int window = kDefaultNegativeWindow;
    std::string out;
};

struct IngestOptions {
    std::string log;
    std::string out;
    int window = kDefaultNegativeWindow;
};

struct DenseOptions {
    std::size_t dim = 32;
    std::size_t hidden = 32;
    std::size_t epochs = 20;
    std::size_t batch = 32;
    double lr = 0.5;
};

struct ScoreOptions {
    std::string bundle;
    std::string scorer = "bm25";
    std::string pos;
    std::string neg;
    double k1 = 1.2;
    double b = 0.75;
    std::string dense_checkpoint;
    bool fit = false;
    DenseOptions dense;
    std::uint64_t seed = 0;
    std::size_t min_negatives = 2;
    std::string out;
};

struct TrainOptions {
    std::string mode = "dual";
    double delta = 0.3;
    double eta = 0.7;
    double alpha = 0.5;
    double beta = 0.5;
    double k = 2.0;
    std::optional<std::uint64_t> steps;
    std::size_t epochs = 20;
    std::size_t batch = 16;
    std::size_t negatives = 2;
    double lr = 0.05;
    std::string optimizer = "momentum";
    double momentum = 0.9;
    std::uint64_t seed = 0;
    std::uint64_t checkpoint_interval = 0;
    std::size_t dim = 32;
    std::size_t hidden = 32;
    double temperature = 1.0;
};

void add_train_flags(CLI::App* sub, TrainOptions& o) {
    sub->add_option("--mode", o.mode, "dual|pos-only|neg-only|none|easy-neg-only|hard-neg-only")->capture_default_str();
    sub->add_option("--delta", o.delta, "initial positive fraction (1.0 disables)")->capture_default_str();
    sub->add_option("--eta", o.eta, "final negative fraction (1.0 disables)")->capture_default_str();
    sub->add_option("--alpha", o.alpha, "positives fully exposed at alpha*T")->capture_default_str();
    sub->add_option("--beta", o.beta, "negatives fully shrunk at beta*T")->capture_default_str();
    sub->add_option("--k", o.k, "pacing curvature (>= 1)")->capture_default_str();
    sub->add_option("--steps", o.steps, "total optimizer steps T (default: epochs x steps per epoch)");
    sub->add_option("--epochs", o.epochs, "epochs used to derive T")->capture_default_str();
    sub->add_option("--batch", o.batch, "positives per batch")->capture_default_str();
    sub->add_option("--negatives", o.negatives, "negatives per positive (m)")->capture_default_str();
    sub->add_option("--lr", o.lr, "learning rate")->capture_default_str();
    sub->add_option("--optimizer", o.optimizer, "sgd|momentum")->capture_default_str();
    sub->add_option("--momentum", o.momentum, "momentum coefficient")->capture_default_str();
    sub->add_option("--seed", o.seed, "master seed")->capture_default_str();
    sub->add_option("--checkpoint-interval", o.checkpoint_interval, "steps between checkpoints (0 = off)")
        ->capture_default_str();
    sub->add_option("--dim", o.dim, "embedding width")->capture_default_str();
    sub->add_option("--hidden", o.hidden, "tower hidden width")->capture_default_str();
    sub->add_option("--temperature", o.temperature, "score temperature")->capture_default_str();
}

TrainConfig make_train_config(const TrainOptions& o, std::size_t positives) {
    TrainConfig c;
    c.pacing.delta = o.delta;
    c.pacing.eta = o.eta;
    c.pacing.alpha = o.alpha;
    c.pacing.beta = o.beta;
    c.pacing.k = o.k;
    c.pacing.total_steps = o.steps ? *o.steps : o.epochs * steps_per_epoch(positives, o.batch);
    c.batch_size = o.batch;
    c.negatives = o.negatives;
    c.learning_rate = o.lr;
    c.optimizer = parse_optimizer(o.optimizer);
    c.momentum = o.momentum;
    c.seed = o.seed;
    c.checkpoint_interval = o.checkpoint_interval;
    c.mode = parse_mode(o.mode);
    c.d_emb = o.dim;
    c.hidden = o.hidden;
    c.temperature = o.temperature;
    c.validate();
    return c;
}

// ---------------------------------------------------------------- commands

void write_bundle_outputs(Provenance& prov, const CorpusBundle& bundle, std::ostream& out) {
    save_bundle(prov.output("bundle.json"), bundle);
    std::size_t train = 0, valid = 0, test = 0;
    for (const auto& s : bundle.log.sessions) {
        switch (assign_split(s.session_id)) {
            case Split::Train: ++train; break;
            case Split::Validation: ++valid; break;
            case Split::Test: ++test; break;
        }
    }
    out << "sessions      " << bundle.log.sessions.size() << " (train " << train << ", valid " << valid << ", test "
        << test << ")\n"
        << "interactions  " << bundle.log.interaction_count() << "\n"
        << "documents     " << bundle.log.documents.size() << "\n"
        << "contexts      " << bundle.contexts.contexts.size() << "\n"
        << "skipped       " << bundle.contexts.skipped_interactions << " click-free interactions\n";
}

int cmd_synth(const SynthOptions& o, const std::vector<std::string>& argv, const std::string& config,
              std::ostream& out) {
    if (!o.seed) throw InputError("synth: --seed is required");
    SyntheticSpec spec = o.spec;
    spec.seed = *o.seed;
    auto corpus = generate_synthetic(spec);

    Provenance prov("synth", argv, o.out, config, spec.seed);
    {
        std::ofstream f(prov.output("sessions.jsonl"), std::ios::binary);
        write_sessions(f, corpus.log);
    }
    {
        std::ofstream f(prov.output("labels.jsonl"), std::ios::binary);
        write_labels(f, corpus.labels);
    }
    {
        std::ofstream f(prov.output("topics.jsonl"), std::ios::binary);
        write_topic_terms(f, corpus.topic_terms);
    }

    // The audit rereads what was written, so it checks the files on disk.
    SessionLog reread;
    std::vector<SessionLabel> labels;
    std::vector<std::vector<std::string>> topics;
    {
        std::ifstream f(fs::path(o.out) / "sessions.jsonl", std::ios::binary);
        reread = parse_sessions(f);
        std::ifstream lf(fs::path(o.out) / "labels.jsonl", std::ios::binary);
        labels = read_labels(lf);
        std::ifstream tf(fs::path(o.out) / "topics.jsonl", std::ios::binary);
        topics = read_topic_terms(tf);
    }
    const auto audit = audit_separability(reread, labels, topics);
    auto bundle = CorpusBundle::from_log(std::move(reread), o.window);
    write_bundle_outputs(prov, bundle, out);
    out << "separable     " << audit.separable << "/" << audit.interactions << " (" << fmt("%.4f", audit.rate())
        << ")\n";
    if (spec.noise_rate == 0.0) {
        out << "audit         " << (audit.separable == audit.interactions ? "perfectly separable" : "NOT separable")
            << "\n";
        if (audit.separable != audit.interactions) throw ComputeError("synth: noise 0 corpus failed the audit");
    }
    prov.finish();
    return kExitOk;
}

int cmd_ingest(const IngestOptions& o, const std::vector<std::string>& argv, const std::string& config,
               std::ostream& out) {
    require_file(o.log, "session log");
    std::ifstream in(o.log, std::ios::binary);
    if (!in) throw InputError("cannot open session log " + o.log);
    auto log = parse_sessions(in);
    Provenance prov("ingest", argv, o.out, config, 0);
    prov.input(o.log);
    auto bundle = CorpusBundle::from_log(std::move(log), o.window);
    write_bundle_outputs(prov, bundle, out);
    prov.finish();
    return kExitOk;
}

int cmd_score(const ScoreOptions& o, const std::vector<std::string>& argv, const std::string& config,
              std::ostream& out) {
    const std::string pos_kind = o.pos.empty() ? o.scorer : o.pos;
    const std::string neg_kind = o.neg.empty() ? o.scorer : o.neg;
    for (const auto& k : {pos_kind, neg_kind})
        if (k != "bm25" && k != "dense") throw InputError("score: scorer must be bm25 or dense, got '" + k + "'");
    const bool need_dense = pos_kind == "dense" || neg_kind == "dense";
    if (need_dense && o.dense_checkpoint.empty() && !o.fit)
        throw InputError("score: dense scoring needs --dense-checkpoint or --fit");

    const auto bundle_path = resolve_bundle(o.bundle);
    require_file(bundle_path, "bundle");
    if (!o.dense_checkpoint.empty()) require_file(o.dense_checkpoint, "dense checkpoint");
    const auto bundle = load_bundle(bundle_path);
    const auto& docs = bundle.log.documents;

    Provenance prov("score", argv, o.out, config, o.seed);
    prov.input(bundle_path);

    const auto index = LexicalIndex::build(docs);
    Bm25Params bm{o.k1, o.b};
    bm.validate();
    const Bm25ScoreSource bm25(index, bm);

    std::optional<DenseScorer> dense;
    if (need_dense) {
        if (!o.dense_checkpoint.empty()) {
            prov.input(o.dense_checkpoint);
            auto ckpt = load_checkpoint(o.dense_checkpoint, ModelKind::DenseScorer);
            dense.emplace(std::move(ckpt.vocab), std::move(ckpt.net));
        } else {
            auto rng = Rng::substream(o.seed, "dense-init");
            auto init = DenseScorer::initialize(bundle.training_vocabulary(), o.dense.dim, o.dense.hidden, rng);
            const auto positives = bundle.training_contexts();
            InBatchConfig cfg{o.dense.batch, o.dense.epochs, o.dense.lr, mix_seed(o.seed, "dense-train", 0)};
            dense.emplace(train_in_batch(init, positives, docs, cfg, [&](std::size_t epoch, double loss) {
                out << "dense epoch " << epoch << " in-batch loss " << fmt("%.4f", loss) << "\n";
            }));
            save_checkpoint(prov.output("dense_scorer.ckpt"),
                            Checkpoint{ModelKind::DenseScorer, dense->vocab(), dense->net(), 1.0, std::nullopt});
        }
    }
    std::optional<DenseScoreSource> dense_source;
    if (dense) dense_source.emplace(*dense, docs);
    auto source_for = [&](const std::string& kind) -> const ScoreSource& {
        if (kind == "dense") return *dense_source;
        return bm25;
    };

    const auto ids = bundle.training_context_ids(o.min_negatives);
    const auto ledger =
        build_ledger(source_for(pos_kind), source_for(neg_kind), bundle.contexts.contexts, ids, docs);
    ledger.save(prov.output("ledger.json"));
    prov.scorer_digest(ledger.scorer_digest());

    out << "ledger        " << ledger.size() << " positive pairs (" << pos_kind << "/" << neg_kind << ")\n"
        << "d_p range     " << fmt("%.4f", ledger.entries().front().difficulty) << " .. "
        << fmt("%.4f", ledger.entries().back().difficulty) << "\n";
    prov.finish();
    return kExitOk;
}

struct LoadedTrainingData {
    CorpusBundle bundle;
    DifficultyLedger ledger;
    std::vector<EvalQuery> valid_queries;
    Qrels valid_qrels;
};

LoadedTrainingData load_training_data(const std::string& bundle_arg, const std::string& ledger_path,
                                      Provenance& prov) {
    const auto bundle_path = resolve_bundle(bundle_arg);
    require_file(bundle_path, "bundle");
    require_file(ledger_path, "ledger");
    prov.input(bundle_path);
    prov.input(ledger_path);
    LoadedTrainingData d{load_bundle(bundle_path), DifficultyLedger::load(ledger_path), {}, {}};
    d.valid_queries = d.bundle.eval_queries(Split::Validation);
    d.valid_qrels = d.bundle.click_qrels(Split::Validation);
    prov.scorer_digest(d.ledger.scorer_digest());
    return d;
}

json step_json(const StepRecord& r) {
    return {{"t", r.t},
            {"f_p", r.f_p},
            {"f_n", r.f_n},
            {"eligible_positives", r.eligible_positives},
            {"eligible_negative_fraction", r.eligible_negative_fraction},
            {"loss", r.loss}};
}

int cmd_train(const TrainOptions& o, const std::string& bundle_arg, const std::string& ledger_path,
              const std::string& out_dir, const std::string& resume_path, std::optional<std::uint64_t> stop_at,
              const std::vector<std::string>& argv, const std::string& config, std::ostream& out,
              std::ostream& err) {
    if (!resume_path.empty()) require_file(resume_path, "resume checkpoint");
    Provenance prov("train", argv, out_dir, config, o.seed);
    auto data = load_training_data(bundle_arg, ledger_path, prov);
    const auto cfg = make_train_config(o, data.ledger.size());
    RankerParams initial = initial_ranker(cfg, data.bundle.training_vocabulary());
    std::optional<OptimizerState> resume;
    if (!resume_path.empty()) {
        prov.input(resume_path);
        auto ckpt = load_checkpoint(resume_path, ModelKind::Ranker);
        initial = from_checkpoint(ckpt);
        resume = ckpt.optimizer;
        if (!resume) throw InputError("resume checkpoint carries no optimizer state");
    }

    const auto ckpt_dir = fs::path(out_dir) / "checkpoints";
    std::ofstream step_log(prov.output("train_log.jsonl"), std::ios::binary);
    std::ofstream epoch_log(prov.output("epochs.jsonl"), std::ios::binary);

    TrainHooks hooks;
    hooks.on_step = [&](const StepRecord& r) {
        step_log << step_json(r).dump() << '\n';
    };
    if (stop_at) hooks.halt_after = *stop_at;
    hooks.on_epoch = [&](const EpochRecord& e) {
        epoch_log << json{{"epoch", e.epoch},
                          {"last_step", e.last_step},
                          {"validation", metrics_json(e.validation)},
                          {"validation_loss", e.validation_loss},
                          {"warning_no_improvement", e.warning_no_improvement}}
                         .dump()
                  << '\n';
        if (e.warning_no_improvement)
            err << "warning: validation loss did not improve in epoch " << e.epoch << "\n";
        out << "epoch " << e.epoch << " valid MAP " << fmt("%.4f", e.validation.map) << " loss "
            << fmt("%.4f", e.validation_loss) << "\n";
    };
    hooks.on_checkpoint = [&](const RankerParams& p, const OptimizerState& s) {
        if (cfg.checkpoint_interval > 0 && s.step % cfg.checkpoint_interval == 0) {
            fs::create_directories(ckpt_dir);
            char name[64];
            std::snprintf(name, sizeof name, "checkpoints/step_%06llu.ckpt", static_cast<unsigned long long>(s.step));
            save_checkpoint(prov.output(name), to_checkpoint(p, s));
        }
    };

    const ValidationSet validation{data.valid_queries, &data.valid_qrels};
    const auto result = train(cfg, data.ledger, data.bundle.contexts.contexts, data.bundle.log.documents, validation,
                              initial, hooks, resume);
    step_log.close();
    epoch_log.close();

    const bool stopped = result.state.step < cfg.pacing.total_steps;
    save_checkpoint(prov.output("ranker.ckpt"), to_checkpoint(result.params, result.state));
    out << (stopped ? "stopped at step " : "trained ") << result.state.step << " of " << cfg.pacing.total_steps
        << " steps (" << mode_name(cfg.mode) << ")\n";
    prov.finish();
    return kExitOk;
}

int cmd_eval(const std::string& bundle_arg, const std::string& ckpt_path, const std::string& split_name_arg,
             const std::string& qrels_path, const std::vector<std::size_t>& ks, const std::string& tag,
             const std::string& out_dir, const std::vector<std::string>& argv, const std::string& config,
             std::ostream& out) {
    const auto bundle_path = resolve_bundle(bundle_arg);
    require_file(bundle_path, "bundle");
    require_file(ckpt_path, "checkpoint");
    if (!qrels_path.empty()) require_file(qrels_path, "qrels");
    const auto split = parse_split(split_name_arg);

    Provenance prov("eval", argv, out_dir, config, 0);
    prov.input(bundle_path);
    prov.input(ckpt_path);
    const auto bundle = load_bundle(bundle_path);
    const auto params = from_checkpoint(load_checkpoint(ckpt_path, ModelKind::Ranker));
    prov.scorer_digest(params.digest());

    Qrels qrels;
    if (!qrels_path.empty()) {
        prov.input(qrels_path);
        std::ifstream in(qrels_path);
        qrels = read_qrels(in);
    } else {
        qrels = bundle.click_qrels(split);
    }
    const auto queries = bundle.eval_queries(split);
    const auto run = make_run(params, queries, bundle.log.documents, tag);
    {
        std::ofstream f(prov.output("run.txt"), std::ios::binary);
        write_run_file(f, run);
        std::ofstream q(prov.output("qrels.txt"), std::ios::binary);
        write_qrels(q, qrels);
    }
    const auto table = evaluate_run(run, qrels);
    auto j = metrics_json(table);
    j["split"] = split_name(split);
    for (auto k : ks) {
        // Extra cutoffs beyond the standard four, averaged like the rest.
        std::map<std::string, std::vector<std::string>> ranked;
        for (const auto& e : run) ranked[e.query_id].push_back(e.doc_id);
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& [q, docs] : ranked) {
            if (const auto v = ndcg_at_k(docs, *qrels.judgments(q), k)) {
                sum += *v;
                ++n;
            }
        }
        j["NDCG@" + std::to_string(k)] = n ? sum / static_cast<double>(n) : 0.0;
    }
    {
        std::ofstream f(prov.output("metrics.json"), std::ios::binary);
        f << j.dump(2) << '\n';
    }
    out << format_metric_table(table);
    prov.finish();
    return kExitOk;
}

struct AblationRow {
    std::string kind;  // untrained | mode | grid
    std::string mode;
    double delta = 0.0;
    double eta = 0.0;
    std::uint64_t seed = 0;
    MetricTable test;
    double seconds = 0.0;
};

int cmd_ablate(const TrainOptions& o, const std::string& bundle_arg, const std::string& ledger_path,
               const std::string& out_dir, const std::vector<std::string>& modes, const std::vector<double>& deltas,
               const std::vector<double>& etas, const std::vector<std::uint64_t>& seeds_arg,
               const std::vector<std::string>& argv, const std::string& config, std::ostream& out) {
    Provenance prov("ablate", argv, out_dir, config, o.seed);
    auto data = load_training_data(bundle_arg, ledger_path, prov);
    const auto test_queries = data.bundle.eval_queries(Split::Test);
    const auto test_qrels = data.bundle.click_qrels(Split::Test);
    const auto vocab = data.bundle.training_vocabulary();
    const auto& docs = data.bundle.log.documents;
    const ValidationSet no_validation{};
    const std::vector<std::uint64_t> seeds = seeds_arg.empty() ? std::vector<std::uint64_t>{o.seed} : seeds_arg;
    for (const auto& m : modes) parse_mode(m);

    std::vector<AblationRow> rows;
    auto test_metrics = [&](const RankerParams& p) {
        return evaluate_run(make_run(p, test_queries, docs, "ablate"), test_qrels);
    };
    for (auto seed : seeds) {
        TrainOptions so = o;
        so.seed = seed;
        const auto base = make_train_config(so, data.ledger.size());
        rows.push_back({"untrained", "untrained", 0.0, 0.0, seed, test_metrics(initial_ranker(base, vocab)), 0.0});
        for (const auto& m : modes) {
            auto cfg = base;
            cfg.mode = parse_mode(m);
            const auto t0 = std::chrono::steady_clock::now();
            TrainResult r;
            try {
                r = train(cfg, data.ledger, data.bundle.contexts.contexts, docs, no_validation,
                          initial_ranker(cfg, vocab));
            } catch (const std::exception& e) {
                throw InputError("ablate: mode " + m + " seed " + std::to_string(seed) + ": " + e.what());
            }
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            rows.push_back({"mode", m, cfg.pacing.delta, cfg.pacing.eta, seed, test_metrics(r.params), secs});
            out << "seed " << seed << " " << m << " MAP " << fmt("%.4f", rows.back().test.map) << " in "
                << fmt("%.2f", secs) << " s\n";
        }
        if (!deltas.empty() && !etas.empty()) {
            auto cfg = base;
            cfg.mode = CurriculumMode::Dual;
            const auto grid = sweep(cfg, deltas, etas, data.ledger, data.bundle.contexts.contexts, docs,
                                    no_validation, vocab);
            for (const auto& g : grid) {
                rows.push_back({"grid", "dual", g.delta, g.eta, seed, test_metrics(g.params), 0.0});
                out << "seed " << seed << " grid delta " << g.delta << " eta " << g.eta << " MAP "
                    << fmt("%.4f", rows.back().test.map) << "\n";
            }
        }
    }

    // Mean and population std across seeds per configuration.
    struct Agg {
        std::vector<double> map, mrr, n1, n3, n5, n10;
    };
    std::map<std::tuple<std::string, std::string, double, double>, Agg> agg;
    std::vector<std::tuple<std::string, std::string, double, double>> order;
    {
        std::ofstream f(prov.output("ablation.jsonl"), std::ios::binary);
        for (const auto& r : rows) {
            f << json{{"kind", r.kind},  {"mode", r.mode},         {"delta", r.delta}, {"eta", r.eta},
                      {"seed", r.seed},  {"test", metrics_json(r.test)}}
                     .dump()
              << '\n';
            auto key = std::make_tuple(r.kind, r.mode, r.delta, r.eta);
            if (!agg.count(key)) order.push_back(key);
            auto& a = agg[key];
            a.map.push_back(r.test.map);
            a.mrr.push_back(r.test.mrr);
            a.n1.push_back(r.test.ndcg1);
            a.n3.push_back(r.test.ndcg3);
            a.n5.push_back(r.test.ndcg5);
            a.n10.push_back(r.test.ndcg10);
        }
    }
    auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    auto stdev = [&](const std::vector<double>& v) {
        const double m = mean(v);
        double s = 0.0;
        for (double x : v) s += (x - m) * (x - m);
        return std::sqrt(s / static_cast<double>(v.size()));
    };
    {
        std::ofstream f(prov.output("ablation_summary.jsonl"), std::ios::binary);
        out << "\nkind       mode            delta  eta    MAP     (std)    MRR     NDCG@1  NDCG@3  NDCG@5  NDCG@10\n";
        for (const auto& key : order) {
            const auto& a = agg[key];
            const auto& [kind, mode, d, e] = key;
            f << json{{"kind", kind},          {"mode", mode},          {"delta", d},
                      {"eta", e},              {"seeds", a.map.size()}, {"MAP_mean", mean(a.map)},
                      {"MAP_std", stdev(a.map)}, {"MRR_mean", mean(a.mrr)}, {"NDCG@1_mean", mean(a.n1)},
                      {"NDCG@3_mean", mean(a.n3)}, {"NDCG@5_mean", mean(a.n5)}, {"NDCG@10_mean", mean(a.n10)}}
                     .dump()
              << '\n';
            char line[256];
            std::snprintf(line, sizeof line, "%-10s %-15s %-6.2f %-6.2f %.4f  (%.4f)  %.4f  %.4f  %.4f  %.4f  %.4f\n",
                          kind.c_str(), mode.c_str(), d, e, mean(a.map), stdev(a.map), mean(a.mrr), mean(a.n1),
                          mean(a.n3), mean(a.n5), mean(a.n10));
            out << line;
        }
    }
    prov.finish();
    return kExitOk;
}

int cmd_replay(const std::string& manifest_path, const std::string& out_dir, std::ostream& out, std::ostream& err);

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Dual curriculum training toolkit for context-aware document ranking", "dcl"};
    app.set_config("--config", "", "TOML config file; command-line flags take precedence");
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    SynthOptions synth;
    auto* synth_cmd = app.add_subcommand("synth", "generate a planted-intent synthetic session corpus");
    synth_cmd->fallthrough();
    synth_cmd->add_option("--sessions", synth.spec.n_sessions, "number of sessions")->capture_default_str();
    synth_cmd->add_option("--vocab", synth.spec.vocab_size, "vocabulary size")->capture_default_str();
    synth_cmd->add_option("--topics", synth.spec.n_topics, "number of hidden topics")->capture_default_str();
    synth_cmd->add_option("--queries", synth.spec.queries_per_session, "queries per session")->capture_default_str();
    synth_cmd->add_option("--candidates", synth.spec.candidates_per_query, "candidates per query")
        ->capture_default_str();
    synth_cmd->add_option("--noise", synth.spec.noise_rate, "probability of a misplaced click")->capture_default_str();
    synth_cmd->add_option("--seed", synth.seed, "generator seed (required)");
    synth_cmd->add_option("--window", synth.window, "negative window half-width")->capture_default_str();
    synth_cmd->add_option("--out", synth.out, "output directory")->required();

    IngestOptions ingest;
    auto* ingest_cmd = app.add_subcommand("ingest", "parse a session log into a corpus bundle");
    ingest_cmd->fallthrough();
    ingest_cmd->add_option("--log", ingest.log, "line-delimited session log")->required();
    ingest_cmd->add_option("--out", ingest.out, "output directory")->required();
    ingest_cmd->add_option("--window", ingest.window, "negative window half-width")->capture_default_str();

    ScoreOptions score;
    auto* score_cmd = app.add_subcommand("score", "score pair difficulty and write a ledger");
    score_cmd->fallthrough();
    score_cmd->add_option("--bundle", score.bundle, "bundle file or directory")->required();
    score_cmd->add_option("--scorer", score.scorer, "bm25|dense for both curricula")->capture_default_str();
    score_cmd->add_option("--pos", score.pos, "scorer for positive difficulty (overrides --scorer)");
    score_cmd->add_option("--neg", score.neg, "scorer for negative difficulty (overrides --scorer)");
    score_cmd->add_option("--k1", score.k1, "BM25 k1")->capture_default_str();
    score_cmd->add_option("--b", score.b, "BM25 b")->capture_default_str();
    score_cmd->add_option("--dense-checkpoint", score.dense_checkpoint, "trained dense scorer checkpoint");
    score_cmd->add_flag("--fit", score.fit, "train the dense scorer with in-batch negatives first");
    score_cmd->add_option("--dense-dim", score.dense.dim, "dense embedding width")->capture_default_str();
    score_cmd->add_option("--dense-hidden", score.dense.hidden, "dense hidden width")->capture_default_str();
    score_cmd->add_option("--dense-epochs", score.dense.epochs, "dense fitting epochs")->capture_default_str();
    score_cmd->add_option("--dense-batch", score.dense.batch, "dense fitting batch size")->capture_default_str();
    score_cmd->add_option("--dense-lr", score.dense.lr, "dense fitting learning rate")->capture_default_str();
    score_cmd->add_option("--seed", score.seed, "master seed")->capture_default_str();
    score_cmd->add_option("--min-negatives", score.min_negatives, "drop contexts with fewer window negatives")
        ->capture_default_str();
    score_cmd->add_option("--out", score.out, "output directory")->required();

    TrainOptions train_opts;
    std::string train_bundle, train_ledger, train_out, resume;
    std::optional<std::uint64_t> stop_at;
    auto* train_cmd = app.add_subcommand("train", "train the ranker under a curriculum");
    train_cmd->fallthrough();
    train_cmd->add_option("--bundle", train_bundle, "bundle file or directory")->required();
    train_cmd->add_option("--ledger", train_ledger, "difficulty ledger")->required();
    train_cmd->add_option("--out", train_out, "output directory")->required();
    train_cmd->add_option("--resume", resume, "continue from a ranker checkpoint");
    train_cmd->add_option("--stop-at-step", stop_at, "stop after this many steps (simulated interruption)");
    add_train_flags(train_cmd, train_opts);

    std::string eval_bundle, eval_ckpt, eval_split = "test", eval_qrels, eval_out, eval_tag = "dcl";
    std::vector<std::size_t> eval_ks;
    auto* eval_cmd = app.add_subcommand("eval", "rank a split and compute MAP/MRR/NDCG");
    eval_cmd->fallthrough();
    eval_cmd->add_option("--bundle", eval_bundle, "bundle file or directory")->required();
    eval_cmd->add_option("--checkpoint", eval_ckpt, "ranker checkpoint")->required();
    eval_cmd->add_option("--split", eval_split, "train|valid|test")->capture_default_str();
    eval_cmd->add_option("--qrels", eval_qrels, "graded qrels file (default: clicks)");
    eval_cmd->add_option("--k", eval_ks, "additional NDCG cutoffs")->delimiter(',');
    eval_cmd->add_option("--tag", eval_tag, "run tag")->capture_default_str();
    eval_cmd->add_option("--out", eval_out, "output directory")->required();

    TrainOptions ablate_opts;
    std::string ablate_bundle, ablate_ledger, ablate_out;
    std::vector<std::string> ablate_modes{"dual", "pos-only", "neg-only", "none", "easy-neg-only", "hard-neg-only"};
    std::vector<double> ablate_deltas{0.1, 0.3, 0.5}, ablate_etas{0.5, 0.7, 0.9};
    std::vector<std::uint64_t> ablate_seeds;
    auto* ablate_cmd = app.add_subcommand("ablate", "run curriculum ablations and a delta/eta grid");
    ablate_cmd->fallthrough();
    ablate_cmd->add_option("--bundle", ablate_bundle, "bundle file or directory")->required();
    ablate_cmd->add_option("--ledger", ablate_ledger, "difficulty ledger")->required();
    ablate_cmd->add_option("--out", ablate_out, "output directory")->required();
    ablate_cmd->add_option("--modes", ablate_modes, "curriculum modes to run")->delimiter(',')->capture_default_str();
    ablate_cmd->add_option("--deltas", ablate_deltas, "grid over delta")->delimiter(',')->capture_default_str();
    ablate_cmd->add_option("--etas", ablate_etas, "grid over eta")->delimiter(',')->capture_default_str();
    ablate_cmd->add_option("--seeds", ablate_seeds, "seeds (default: --seed)")->delimiter(',');
    add_train_flags(ablate_cmd, ablate_opts);

    std::string replay_manifest, replay_out;
    auto* replay_cmd = app.add_subcommand("replay", "re-run a command from its manifest and compare digests");
    replay_cmd->fallthrough();
    replay_cmd->add_option("--manifest", replay_manifest, "manifest.json of a previous run")->required();
    replay_cmd->add_option("--out", replay_out, "fresh output directory")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    auto effective = [](CLI::App* sub) { return sub->config_to_str(true, false); };
    if (*synth_cmd) return cmd_synth(synth, args, effective(synth_cmd), out);
    if (*ingest_cmd) return cmd_ingest(ingest, args, effective(ingest_cmd), out);
    if (*score_cmd) return cmd_score(score, args, effective(score_cmd), out);
    if (*train_cmd)
        return cmd_train(train_opts, train_bundle, train_ledger, train_out, resume, stop_at, args,
                         effective(train_cmd), out, err);
    if (*eval_cmd)
        return cmd_eval(eval_bundle, eval_ckpt, eval_split, eval_qrels, eval_ks, eval_tag, eval_out, args,
                        effective(eval_cmd), out);
    if (*ablate_cmd)
        return cmd_ablate(ablate_opts, ablate_bundle, ablate_ledger, ablate_out, ablate_modes, ablate_deltas,
                          ablate_etas, ablate_seeds, args, effective(ablate_cmd), out);
    if (*replay_cmd) return cmd_replay(replay_manifest, replay_out, out, err);
    return kExitUsage;
}

int cmd_replay(const std::string& manifest_path, const std::string& out_dir, std::ostream& out, std::ostream& err) {
    require_file(manifest_path, "manifest");
    const auto m = load_manifest(manifest_path);
    if (const auto stale = stale_inputs(m); !stale.empty()) {
        std::string msg = "replay: inputs changed since the recorded run:";
        for (const auto& s : stale) msg += " " + s;
        throw InputError(msg);
    }
    auto argv = m.argv;
    bool replaced = false;
    for (std::size_t i = 0; i + 1 < argv.size(); ++i) {
        if (argv[i] == "--out") {
            argv[i + 1] = out_dir;
            replaced = true;
        } else if (argv[i].rfind("--out=", 0) == 0) {
            argv[i] = "--out=" + out_dir;
            replaced = true;
        }
    }
    if (!replaced) throw InputError("replay: recorded command has no --out argument");
    const int code = dispatch(argv, out, err);
    if (code != kExitOk) return code;
    const auto fresh = load_manifest(fs::path(out_dir) / kManifestName);
    bool same = fresh.outputs == m.outputs;
    for (const auto& [name, digest] : m.outputs) {
        auto it = fresh.outputs.find(name);
        const bool match = it != fresh.outputs.end() && it->second == digest;
        out << (match ? "match    " : "MISMATCH ") << name << "\n";
    }
    out << (same ? "replay reproduced all output digests\n" : "replay diverged\n");
    return same ? kExitOk : kExitInternal;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    try {
        return dispatch(args, out, err);
    } catch (const InputError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return kExitInternal;
    }
}

}  // namespace dcl::cli
