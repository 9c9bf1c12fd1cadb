#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dcl/bm25.hpp"
#include "dcl/bundle.hpp"
#include "dcl/commands.hpp"
#include "dcl/curriculum.hpp"
#include "dcl/digest.hpp"
#include "dcl/eval.hpp"
#include "dcl/manifest.hpp"
#include "dcl/ranker.hpp"
#include "oracles.hpp"

using namespace dcl;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code = 0;
    std::string out;
    std::string err;
};

Result dcl_run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

/// Fresh scratch directory per test.
fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "dcl_cli_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string fixture(const char* name) { return std::string(DCL_FIXTURES) + "/" + name; }

std::size_t line_count(const fs::path& p) {
    std::ifstream in(p);
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);) n += !line.empty();
    return n;
}

/// A small synthetic bundle plus a bm25 ledger, built once.
const fs::path& trained_inputs() {
    static const fs::path dir = [] {
        const auto d = scratch("inputs");
        REQUIRE(dcl_run({"synth", "--sessions", "80", "--seed", "3", "--out", (d / "data").string()}).code == 0);
        REQUIRE(dcl_run({"score", "--bundle", (d / "data").string(), "--out", (d / "ledger").string()}).code == 0);
        return d;
    }();
    return dir;
}

std::vector<std::string> train_args(const fs::path& out) {
    const auto& in = trained_inputs();
    return {"train", "--bundle", (in / "data").string(), "--ledger", (in / "ledger" / "ledger.json").string(),
            "--out", out.string(), "--steps", "40", "--batch", "4", "--dim", "8", "--hidden", "8", "--seed", "5"};
}

}  // namespace

TEST_CASE("help and usage errors") {
    CHECK(dcl_run({"--help"}).code == cli::kExitOk);
    CHECK(dcl_run({}).code == cli::kExitUsage);
    CHECK(dcl_run({"frobnicate"}).code == cli::kExitUsage);
    CHECK(dcl_run({"train", "--bogus-flag", "1"}).code == cli::kExitUsage);
}

TEST_CASE("the installed binary maps errors to exit codes") {
    const auto dir = scratch("binary");
    const std::string cmd = std::string(DCL_CLI) + " ingest --log " + (dir / "nope.jsonl").string() + " --out " +
                            (dir / "o").string() + " 2>" + (dir / "err.txt").string();
    const int status = std::system(cmd.c_str());
    CHECK(WEXITSTATUS(status) == cli::kExitUsage);
    std::ifstream err(dir / "err.txt");
    std::string msg((std::istreambuf_iterator<char>(err)), {});
    CHECK(msg.find("nope.jsonl") != std::string::npos);
}

TEST_CASE("ingest a missing log") {
    const auto dir = scratch("ingest_missing");
    const auto r = dcl_run({"ingest", "--log", (dir / "absent.jsonl").string(), "--out", (dir / "o").string()});
    CHECK(r.code == cli::kExitUsage);
    CHECK(r.err.find("absent.jsonl") != std::string::npos);
}

TEST_CASE("ingest reports line numbers for parse errors") {
    const auto dir = scratch("ingest_bad");
    {
        std::ofstream f(dir / "bad.jsonl");
        std::ifstream good(fixture("ingest_10.jsonl"));
        std::string line;
        std::getline(good, line);
        f << line << "\n{not json\n";
    }
    const auto r = dcl_run({"ingest", "--log", (dir / "bad.jsonl").string(), "--out", (dir / "o").string()});
    CHECK(r.code == cli::kExitUsage);
    CHECK(r.err.find("line 2") != std::string::npos);
}

TEST_CASE("ingest the ten-line fixture") {
    const auto dir = scratch("ingest_10");
    const auto a = dcl_run({"ingest", "--log", fixture("ingest_10.jsonl"), "--out", (dir / "a").string()});
    REQUIRE(a.code == 0);
    CHECK(a.out.find("sessions      4") != std::string::npos);
    CHECK(a.out.find("interactions  10") != std::string::npos);
    CHECK(a.out.find("skipped       1 click-free") != std::string::npos);
    const auto bundle = load_bundle(dir / "a" / "bundle.json");
    CHECK(a.out.find("documents     " + std::to_string(bundle.log.documents.size())) != std::string::npos);
    CHECK(a.out.find("contexts      " + std::to_string(bundle.contexts.contexts.size())) != std::string::npos);

    REQUIRE(dcl_run({"ingest", "--log", fixture("ingest_10.jsonl"), "--out", (dir / "b").string()}).code == 0);
    CHECK(sha256_file(dir / "a" / "bundle.json") == sha256_file(dir / "b" / "bundle.json"));
    const auto m = load_manifest(dir / "a" / "manifest.json");
    CHECK(m.command == "ingest");
    CHECK(m.outputs.at("bundle.json") == sha256_file(dir / "a" / "bundle.json"));
    CHECK(m.inputs.at(fixture("ingest_10.jsonl")) == sha256_file(fixture("ingest_10.jsonl")));
}

TEST_CASE("synth needs a seed and is deterministic") {
    const auto dir = scratch("synth");
    CHECK(dcl_run({"synth", "--sessions", "20", "--out", (dir / "x").string()}).code == cli::kExitUsage);
    for (const char* name : {"a", "b"})
        REQUIRE(dcl_run({"synth", "--sessions", "2000", "--seed", "7", "--out", (dir / name).string()}).code == 0);
    for (const char* f : {"sessions.jsonl", "labels.jsonl", "bundle.json"})
        CHECK(sha256_file(dir / "a" / f) == sha256_file(dir / "b" / f));
    const auto bundle = load_bundle(dir / "a" / "bundle.json");
    CHECK(bundle.log.sessions.size() == 2000);
}

TEST_CASE("a noise-free synth passes its audit") {
    const auto dir = scratch("synth_noise0");
    const auto r = dcl_run({"synth", "--sessions", "100", "--seed", "2", "--noise", "0", "--out", dir.string()});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("perfectly separable") != std::string::npos);
    CHECK(r.out.find("separable     300/300") != std::string::npos);
}

TEST_CASE("score errors and determinism") {
    const auto dir = scratch("score");
    const auto data = (trained_inputs() / "data").string();
    const auto dense = dcl_run({"score", "--bundle", data, "--scorer", "dense", "--out", (dir / "x").string()});
    CHECK(dense.code == cli::kExitUsage);
    CHECK(dense.err.find("--fit") != std::string::npos);
    CHECK(dcl_run({"score", "--bundle", data, "--scorer", "bert", "--out", (dir / "y").string()}).code ==
          cli::kExitUsage);
    REQUIRE(dcl_run({"score", "--bundle", data, "--out", (dir / "a").string()}).code == 0);
    REQUIRE(dcl_run({"score", "--bundle", data, "--out", (dir / "b").string()}).code == 0);
    CHECK(sha256_file(dir / "a" / "ledger.json") == sha256_file(dir / "b" / "ledger.json"));
}

TEST_CASE("mixed dense-positive and bm25-negative scoring") {
    const auto dir = scratch("score_mixed");
    const auto data = (trained_inputs() / "data").string();
    const auto r = dcl_run({"score", "--bundle", data, "--pos", "dense", "--neg", "bm25", "--fit", "--dense-epochs",
                            "2", "--dense-dim", "8", "--dense-hidden", "8", "--seed", "1", "--out", dir.string()});
    REQUIRE(r.code == 0);
    CHECK(fs::exists(dir / "dense_scorer.ckpt"));
    const auto ledger = DifficultyLedger::load(dir / "ledger.json");
    CHECK(ledger.positive_scorer() == "dense");
    CHECK(ledger.negative_scorer() == "bm25");

    // The fitted checkpoint can be reused without --fit.
    const auto again = dcl_run({"score", "--bundle", data, "--pos", "dense", "--neg", "bm25", "--dense-checkpoint",
                                (dir / "dense_scorer.ckpt").string(), "--out", (dir / "reuse").string()});
    REQUIRE(again.code == 0);
    CHECK(DifficultyLedger::load(dir / "reuse" / "ledger.json") == ledger);
}

TEST_CASE("bm25 ledger on the five-pair fixture matches a hand sort") {
    const auto dir = scratch("five_pairs");
    REQUIRE(dcl_run({"ingest", "--log", fixture("five_pairs.jsonl"), "--out", dir.string()}).code == 0);
    REQUIRE(dcl_run({"score", "--bundle", dir.string(), "--out", (dir / "s").string()}).code == 0);
    const auto ledger = DifficultyLedger::load(dir / "s" / "ledger.json");
    const auto bundle = load_bundle(dir / "bundle.json");

    // Oracle: naive BM25 of each single-query context against every title.
    std::vector<std::vector<std::string>> corpus;
    for (const auto& d : bundle.log.documents.documents()) corpus.push_back(d.title_tokens);
    struct Expected {
        std::size_t context;
        double d_p;
        std::vector<std::string> negatives;
    };
    std::vector<Expected> expected;
    double max_pos = 0.0;
    std::vector<std::pair<std::size_t, double>> rank_and_score;
    const auto ids = bundle.training_context_ids(2);
    REQUIRE(ids.size() == 5);
    for (auto id : ids) {
        const auto& c = bundle.contexts.contexts[id];
        const auto pos = *bundle.log.documents.index_of(c.positive_doc_id);
        std::vector<double> s;
        for (const auto& d : corpus) s.push_back(oracle::bm25(c.context_tokens, d, corpus));
        std::size_t rank = 1;
        for (std::size_t j = 0; j < s.size(); ++j) rank += s[j] > s[pos] || (s[j] == s[pos] && j < pos);
        rank_and_score.emplace_back(rank, s[pos]);
        max_pos = std::max(max_pos, s[pos]);
        std::vector<std::pair<double, std::string>> negs;
        for (const auto& n : c.negative_pool) negs.emplace_back(-s[*bundle.log.documents.index_of(n)], n);
        std::sort(negs.begin(), negs.end());
        Expected e{id, 0.0, {}};
        for (const auto& [_, n] : negs) e.negatives.push_back(n);
        expected.push_back(e);
    }
    for (std::size_t i = 0; i < expected.size(); ++i)
        expected[i].d_p = static_cast<double>(rank_and_score[i].first) + 1.0 - rank_and_score[i].second / max_pos;
    std::stable_sort(expected.begin(), expected.end(), [](const Expected& a, const Expected& b) { return a.d_p < b.d_p; });

    // "red" ranks the clicked "red wine" behind "red apple", so that pair is hardest.
    CHECK(bundle.contexts.contexts[ledger.entries().back().context].positive_doc_id == "H");
    REQUIRE(ledger.size() == expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
        CHECK(ledger[i].context == expected[i].context);
        CHECK(ledger[i].difficulty == doctest::Approx(expected[i].d_p).epsilon(1e-12));
        std::vector<std::string> got;
        for (const auto& n : ledger[i].negatives) got.push_back(n.doc_id);
        CHECK(got == expected[i].negatives);
    }
}

TEST_CASE("train writes one log line per step") {
    const auto dir = scratch("train");
    auto args = train_args(dir);
    args.insert(args.end(), {"--checkpoint-interval", "15"});
    const auto r = dcl_run(args);
    REQUIRE(r.code == 0);
    CHECK(r.out.find("trained 40 of 40 steps (dual)") != std::string::npos);
    CHECK(line_count(dir / "train_log.jsonl") == 40);
    CHECK(fs::exists(dir / "checkpoints" / "step_000015.ckpt"));
    CHECK(fs::exists(dir / "checkpoints" / "step_000030.ckpt"));
    CHECK(fs::exists(dir / "ranker.ckpt"));
    std::ifstream log(dir / "train_log.jsonl");
    std::string first;
    std::getline(log, first);
    const auto j = nlohmann::json::parse(first);
    CHECK(j.at("t") == 0);
    CHECK(j.at("f_p") == 0.3);
    const auto m = load_manifest(dir / "manifest.json");
    CHECK(m.effective_config.find("delta") != std::string::npos);
    CHECK(m.seed == 5);
}

TEST_CASE("an interrupted run resumed from its checkpoint matches the full run") {
    const auto dir = scratch("resume");
    REQUIRE(dcl_run(train_args(dir / "full")).code == 0);
    auto partial = train_args(dir / "part");
    partial.insert(partial.end(), {"--stop-at-step", "17"});
    const auto stopped = dcl_run(partial);
    REQUIRE(stopped.code == 0);
    CHECK(stopped.out.find("stopped at step 17 of 40") != std::string::npos);
    auto resumed = train_args(dir / "resumed");
    resumed.insert(resumed.end(), {"--resume", (dir / "part" / "ranker.ckpt").string()});
    REQUIRE(dcl_run(resumed).code == 0);
    CHECK(sha256_file(dir / "resumed" / "ranker.ckpt") == sha256_file(dir / "full" / "ranker.ckpt"));
    CHECK(line_count(dir / "resumed" / "train_log.jsonl") == 23);
}

TEST_CASE("config files sit between defaults and flags") {
    const auto dir = scratch("config");
    {
        std::ofstream f(dir / "cfg.toml");
        f << "[train]\nsteps = 12\nmode = \"none\"\nbatch = 4\n";
    }
    auto args = train_args(dir / "o");
    // Drop --steps so the file decides it; keep the flag-set batch.
    auto it = std::find(args.begin(), args.end(), "--steps");
    args.erase(it, it + 2);
    args.insert(args.end(), {"--config", (dir / "cfg.toml").string(), "--mode", "pos-only"});
    const auto r = dcl_run(args);
    REQUIRE(r.code == 0);
    CHECK(r.out.find("trained 12 of 12 steps (pos-only)") != std::string::npos);
}

TEST_CASE("replay reproduces outputs and rejects stale inputs") {
    const auto dir = scratch("replay");
    REQUIRE(dcl_run({"ingest", "--log", fixture("ingest_10.jsonl"), "--out", (dir / "i").string()}).code == 0);
    REQUIRE(dcl_run({"score", "--bundle", (dir / "i").string(), "--min-negatives", "1", "--out",
                     (dir / "s").string()})
                .code == 0);
    REQUIRE(dcl_run(train_args(dir / "t")).code == 0);
    for (const char* step : {"i", "s", "t"}) {
        const auto r = dcl_run({"replay", "--manifest", (dir / step / "manifest.json").string(), "--out",
                                (dir / (std::string(step) + "_again")).string()});
        CHECK(r.code == 0);
        CHECK(r.out.find("replay reproduced all output digests") != std::string::npos);
        CHECK(r.out.find("MISMATCH") == std::string::npos);
    }

    // Changing a recorded input makes the manifest stale.
    fs::copy_file(fixture("ingest_10.jsonl"), dir / "log.jsonl");
    REQUIRE(dcl_run({"ingest", "--log", (dir / "log.jsonl").string(), "--out", (dir / "j").string()}).code == 0);
    {
        std::ofstream f(dir / "log.jsonl", std::ios::app);
        std::ifstream src(fixture("four_records.jsonl"));
        f << src.rdbuf();
    }
    const auto stale = dcl_run({"replay", "--manifest", (dir / "j" / "manifest.json").string(), "--out",
                                (dir / "j2").string()});
    CHECK(stale.code == cli::kExitUsage);
    CHECK(stale.err.find("log.jsonl") != std::string::npos);
}

TEST_CASE("a locked output directory is refused") {
    const auto dir = scratch("lock");
    { std::ofstream lock(dir / ".dcl.lock"); }
    const auto r = dcl_run({"ingest", "--log", fixture("ingest_10.jsonl"), "--out", dir.string()});
    CHECK(r.code == cli::kExitUsage);
    CHECK(r.err.find("locked") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "bundle.json"));
    // The lock is released after a normal run.
    const auto other = scratch("lock_release");
    REQUIRE(dcl_run({"ingest", "--log", fixture("ingest_10.jsonl"), "--out", other.string()}).code == 0);
    CHECK_FALSE(fs::exists(other / ".dcl.lock"));
}

TEST_CASE("a zero checkpoint ranks by doc id") {
    const auto dir = scratch("eval_zero");
    REQUIRE(dcl_run({"ingest", "--log", fixture("five_pairs.jsonl"), "--out", dir.string()}).code == 0);
    const auto bundle = load_bundle(dir / "bundle.json");
    const auto params = RankerParams::zeros(bundle.training_vocabulary(), 4, 4);
    save_checkpoint(dir / "zero.ckpt", to_checkpoint(params, OptimizerState{}));
    const auto r = dcl_run({"eval", "--bundle", dir.string(), "--checkpoint", (dir / "zero.ckpt").string(), "--split",
                            "train", "--k", "2", "--out", (dir / "e").string()});
    REQUIRE(r.code == 0);

    std::ifstream run_in(dir / "e" / "run.txt");
    const auto run = read_run_file(run_in);
    std::map<std::string, std::vector<std::string>> ranked;
    for (const auto& e : run) ranked[e.query_id].push_back(e.doc_id);
    double map = 0.0, mrr = 0.0, ndcg2 = 0.0;
    const auto qrels = bundle.click_qrels(Split::Train);
    for (const auto& q : bundle.eval_queries(Split::Train)) {
        auto sorted = q.candidate_doc_ids;
        std::sort(sorted.begin(), sorted.end());
        CHECK(ranked.at(q.query_id) == sorted);
        std::map<std::string, double> g;
        for (const auto& [d, v] : *qrels.judgments(q.query_id)) g[d] = v;
        map += oracle::average_precision(sorted, g);
        mrr += oracle::reciprocal_rank(sorted, g);
        ndcg2 += oracle::ndcg(sorted, g, 2);
    }
    const double n = static_cast<double>(ranked.size());
    REQUIRE(n == 5);
    std::ifstream mj(dir / "e" / "metrics.json");
    const auto metrics = nlohmann::json::parse(mj);
    CHECK(metrics.at("MAP").get<double>() == doctest::Approx(map / n).epsilon(1e-12));
    CHECK(metrics.at("MRR").get<double>() == doctest::Approx(mrr / n).epsilon(1e-12));
    CHECK(metrics.at("NDCG@2").get<double>() == doctest::Approx(ndcg2 / n).epsilon(1e-12));

    // The emitted files re-evaluate to the same table.
    std::ifstream qin(dir / "e" / "qrels.txt");
    const auto table = evaluate_run(run, read_qrels(qin));
    CHECK(std::abs(table.map - metrics.at("MAP").get<double>()) <= 1e-6);
    CHECK(std::abs(table.ndcg10 - metrics.at("NDCG@10").get<double>()) <= 1e-6);
}

TEST_CASE("a hand-built perfect checkpoint scores 1.0 everywhere") {
    const auto dir = scratch("eval_perfect");
    REQUIRE(dcl_run({"ingest", "--log", fixture("five_pairs.jsonl"), "--out", dir.string()}).code == 0);
    const auto bundle = load_bundle(dir / "bundle.json");
    std::vector<std::string> words;
    for (const auto& d : bundle.log.documents.documents())
        words.insert(words.end(), d.title_tokens.begin(), d.title_tokens.end());
    const Vocabulary vocab(words);
    const auto v = vocab.size();
    // One-hot embeddings and identity layers: a candidate scores above zero
    // exactly when it shares a token with the query.
    auto params = RankerParams::zeros(vocab, v, v);
    auto p = params.net.params();
    for (std::size_t i = Vocabulary::kReserved; i < v; ++i) p[i * v + i] = 1.0;
    for (Tower t : {Tower::Context, Tower::Document}) {
        const auto o = params.net.tower_offsets(t);
        for (std::size_t i = 0; i < v; ++i) {
            p[o.w1 + i * v + i] = 1.0;
            p[o.w2 + i * v + i] = 1.0;
        }
    }
    save_checkpoint(dir / "perfect.ckpt", to_checkpoint(params, OptimizerState{}));
    // Validation and test queries have no token overlap with wrong candidates.
    for (const char* split : {"valid", "test"}) {
        const auto r = dcl_run({"eval", "--bundle", dir.string(), "--checkpoint", (dir / "perfect.ckpt").string(),
                                "--split", split, "--out", (dir / split).string()});
        REQUIRE(r.code == 0);
        std::ifstream mj(dir / split / "metrics.json");
        const auto m = nlohmann::json::parse(mj);
        CHECK(m.at("queries") == 1);
        for (const char* key : {"MAP", "MRR", "NDCG@1", "NDCG@3", "NDCG@5", "NDCG@10"})
            CHECK(m.at(key).get<double>() == 1.0);
    }
}

TEST_CASE("ablate reports each requested mode") {
    const auto dir = scratch("ablate");
    const auto& in = trained_inputs();
    const auto r = dcl_run({"ablate", "--bundle", (in / "data").string(), "--ledger",
                            (in / "ledger" / "ledger.json").string(), "--out", dir.string(), "--modes",
                            "dual,none,easy-neg-only", "--deltas", "0.3", "--etas", "0.7,1.0", "--seeds", "1",
                            "--steps", "20", "--batch", "4", "--dim", "8", "--hidden", "8"});
    REQUIRE(r.code == 0);
    std::ifstream rows(dir / "ablation.jsonl");
    std::vector<std::string> modes;
    std::size_t grid = 0, untrained = 0;
    for (std::string line; std::getline(rows, line);) {
        const auto j = nlohmann::json::parse(line);
        const auto kind = j.at("kind").get<std::string>();
        if (kind == "mode") modes.push_back(j.at("mode").get<std::string>());
        grid += kind == "grid";
        untrained += kind == "untrained";
        CHECK(j.at("test").contains("MAP"));
    }
    CHECK(modes == std::vector<std::string>{"dual", "none", "easy-neg-only"});
    CHECK(grid == 2);
    CHECK(untrained == 1);
    CHECK(r.out.find("easy-neg-only") != std::string::npos);
    CHECK(line_count(dir / "ablation_summary.jsonl") > 0);
}
