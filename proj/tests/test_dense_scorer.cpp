#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dcl/bundle.hpp"
#include "dcl/dense_scorer.hpp"
#include "dcl/error.hpp"
#include "dcl/synthetic.hpp"
#include "oracles.hpp"

using namespace dcl;

namespace {

std::vector<std::uint32_t> random_ids(Rng& rng, std::size_t vocab, std::size_t max_len) {
    std::vector<std::uint32_t> ids;
    const auto n = rng.uniform_index(max_len + 1);  // empty inputs included
    for (std::size_t i = 0; i < n; ++i) ids.push_back(static_cast<std::uint32_t>(rng.uniform_index(vocab)));
    return ids;
}

DenseScorer small_scorer(std::uint64_t seed) {
    Rng rng(seed);
    return DenseScorer::initialize(Vocabulary({"a", "b", "c", "d", "e"}), 4, 3, rng);
}

SearchContext context_of(Tokens tokens) {
    SearchContext c;
    c.context_tokens = std::move(tokens);
    return c;
}

}  // namespace

TEST_CASE("zero parameters encode to zero") {
    const DualEncoder net(EncoderShape{6, 3, 2});
    for (Tower t : {Tower::Context, Tower::Document}) {
        const auto enc = encode(net, std::vector<std::uint32_t>{2, 3, 4}, t);
        for (double v : enc.output) CHECK(v == 0.0);
    }
}

TEST_CASE("encoding ignores token order") {
    Rng rng(2);
    const auto net = DualEncoder::random(EncoderShape{8, 4, 5}, rng);
    const auto a = encode(net, std::vector<std::uint32_t>{2, 5, 7, 5}, Tower::Context).output;
    const auto b = encode(net, std::vector<std::uint32_t>{5, 7, 5, 2}, Tower::Context).output;
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-15));
}

TEST_CASE("hand-set two-dimensional encoder") {
    DualEncoder net(EncoderShape{4, 2, 2});
    auto p = net.params();
    // Embeddings: id 2 -> (1, 0), id 3 -> (0, 1).
    p[2 * 2 + 0] = 1.0;
    p[3 * 2 + 1] = 1.0;
    const auto v = net.tower_offsets(Tower::Context);
    // W1 = [[1, 0], [0, 2]], b1 = (0, 0.25), W2 = [[1, 1], [0, -1]], b2 = (0.5, 0).
    p[v.w1 + 0] = 1.0;
    p[v.w1 + 3] = 2.0;
    p[v.b1 + 1] = 0.25;
    p[v.w2 + 0] = 1.0;
    p[v.w2 + 1] = 1.0;
    p[v.w2 + 3] = -1.0;
    p[v.b2 + 0] = 0.5;
    const auto enc = encode(net, std::vector<std::uint32_t>{2, 3}, Tower::Context);
    // pooled (0.5, 0.5); hidden (tanh 0.5, tanh 1.25)
    const double h0 = std::tanh(0.5), h1 = std::tanh(1.25);
    CHECK(enc.output[0] == doctest::Approx(h0 + h1 + 0.5).epsilon(1e-15));
    CHECK(enc.output[1] == doctest::Approx(-h1).epsilon(1e-15));
    // The document tower is still all zeros.
    const auto doc = encode(net, std::vector<std::uint32_t>{2, 3}, Tower::Document);
    CHECK(doc.output[0] == 0.0);
}

TEST_CASE("empty input uses the reserved empty embedding") {
    Rng rng(5);
    const auto net = DualEncoder::random(EncoderShape{6, 3, 3}, rng);
    const auto empty = encode(net, std::vector<std::uint32_t>{}, Tower::Document);
    const auto reserved = encode(net, std::vector<std::uint32_t>{Vocabulary::kEmptyId}, Tower::Document);
    CHECK(empty.output == reserved.output);
}

TEST_CASE("vocabulary maps unknowns and drops separators") {
    const Vocabulary vocab({"b", "a", "a", std::string(kSegmentSeparator)});
    CHECK(vocab.size() == Vocabulary::kReserved + 2);
    const Tokens toks{"a", std::string(kSegmentSeparator), "zzz", "b"};
    const auto ids = vocab.to_ids(toks);
    CHECK(ids == std::vector<std::uint32_t>{vocab.id("a"), Vocabulary::kUnknownId, vocab.id("b")});
}

TEST_CASE("dense score examples") {
    const DenseScorer zero(Vocabulary({"a"}), DualEncoder(EncoderShape{3, 2, 2}));
    CHECK(zero.score(context_of({"a"}), Document{"d", {"a"}}) == 0.0);

    // Identical towers and inputs give the squared norm.
    auto scorer = small_scorer(3);
    auto p = scorer.net().params();
    const auto c = scorer.net().tower_offsets(Tower::Context);
    const auto d = scorer.net().tower_offsets(Tower::Document);
    for (std::size_t i = 0; i < d.w1 - c.w1; ++i) p[d.w1 + i] = p[c.w1 + i];
    const Tokens toks{"a", "c"};
    const auto u = scorer.encode(toks, Tower::Context);
    const double s = dense_score(scorer, context_of(toks), Document{"x", toks});
    CHECK(s == doctest::Approx(dot(u, u)).epsilon(1e-14));
    CHECK(s >= 0.0);
}

TEST_CASE("score_all equals pairwise scoring with one encode per input") {
    const auto scorer = small_scorer(4);
    Rng rng(6);
    const std::vector<std::string> words{"a", "b", "c", "d", "e", "zzz"};
    auto random_tokens = [&] {
        Tokens t;
        const auto n = rng.uniform_index(5);
        for (std::size_t i = 0; i < n; ++i) t.push_back(words[rng.uniform_index(words.size())]);
        return t;
    };
    for (auto [rows, cols] : {std::pair<std::size_t, std::size_t>{1, 1}, {3, 4}, {10, 20}}) {
        std::vector<SearchContext> contexts;
        std::vector<Document> docs;
        for (std::size_t i = 0; i < rows; ++i) contexts.push_back(context_of(random_tokens()));
        for (std::size_t j = 0; j < cols; ++j) docs.push_back(Document{"d" + std::to_string(j), random_tokens()});
        scorer.reset_encode_calls();
        const auto m = scorer.score_all(contexts, docs);
        CHECK(scorer.encode_calls() == rows + cols);
        REQUIRE(m.rows == rows);
        REQUIRE(m.cols == cols);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) CHECK(m.at(i, j) == dense_score(scorer, contexts[i], docs[j]));
        // Reversing both lists reverses the matrix.
        std::vector<SearchContext> rc(contexts.rbegin(), contexts.rend());
        std::vector<Document> rd(docs.rbegin(), docs.rend());
        const auto rm = scorer.score_all(rc, rd);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) CHECK(rm.at(rows - 1 - i, cols - 1 - j) == m.at(i, j));
        CHECK(scorer.score_all(contexts, docs) == m);
    }
}

TEST_CASE("score matrix cache is keyed by digests") {
    ScoreMatrix m{2, 3, {1, 2, 3, 4, 5, 6}};
    const auto path = std::filesystem::temp_directory_path() / "dcl_test_matrix.bin";
    save_score_matrix(path, m, "params", "corpus");
    CHECK(load_score_matrix(path, "params", "corpus") == m);
    CHECK_THROWS_AS(load_score_matrix(path, "other", "corpus"), InputError);
    CHECK_THROWS_AS(load_score_matrix(path, "params", "other"), InputError);
    std::filesystem::remove(path);
}

TEST_CASE("in-batch loss of equal scores is ln 2 for two pairs") {
    const DualEncoder zero(EncoderShape{5, 3, 2});
    const std::vector<IdPair> batch{{{2}, {3}}, {{4}, {2, 3}}};
    const auto r = in_batch_loss(zero, batch);
    CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK_THROWS_AS(in_batch_loss(zero, std::vector<IdPair>{{{2}, {3}}}), InputError);
}

TEST_CASE("in-batch gradient matches finite differences") {
    Rng rng(12);
    for (int trial = 0; trial < 100; ++trial) {
        const EncoderShape shape{6, 2 + rng.uniform_index(7), 2 + rng.uniform_index(5)};
        auto net = DualEncoder::random(shape, rng, 0.5 + rng.uniform01());
        std::vector<IdPair> batch(2 + rng.uniform_index(4));
        for (auto& pair : batch) {
            pair.context_ids = random_ids(rng, shape.vocab_size, 5);
            pair.doc_ids = random_ids(rng, shape.vocab_size, 4);
        }
        const auto r = in_batch_loss(net, batch);
        auto p = net.params();
        const auto numeric = oracle::finite_difference(p, [&] { return in_batch_loss(net, batch).loss; });
        const double err = oracle::max_relative_error(r.grad, numeric);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("in-batch training separates a noise-free synthetic set") {
    SyntheticSpec spec;
    spec.n_sessions = 300;
    spec.vocab_size = 400;
    spec.n_topics = 5;
    spec.noise_rate = 0.0;
    spec.seed = 5;
    auto bundle = CorpusBundle::from_log(generate_synthetic(spec).log, 3);
    const auto positives = bundle.training_contexts();
    Rng rng(1);
    const auto init = DenseScorer::initialize(bundle.training_vocabulary(), 16, 16, rng);
    InBatchConfig cfg;
    cfg.seed = 9;
    std::vector<double> losses;
    const auto trained =
        train_in_batch(init, positives, bundle.log.documents, cfg, [&](std::size_t, double l) { losses.push_back(l); });
    CHECK(losses.size() == cfg.epochs);
    CHECK(losses.back() < losses.front());

    std::vector<Document> docs;
    for (const auto& c : positives) docs.push_back(bundle.log.documents.at(c.positive_doc_id));
    const auto m = trained.score_all(positives, docs);
    double diag = 0.0, off = 0.0;
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) (i == j ? diag : off) += m.at(i, j);
    diag /= static_cast<double>(m.rows);
    off /= static_cast<double>(m.rows * (m.cols - 1));
    CHECK(diag > off);

    // Same seed, same result.
    const auto again = train_in_batch(init, positives, bundle.log.documents, cfg);
    CHECK(again.net() == trained.net());
}

TEST_CASE("in-batch training rejects batches smaller than two") {
    const auto scorer = small_scorer(1);
    std::vector<SearchContext> positives(3, context_of({"a"}));
    for (auto& p : positives) p.positive_doc_id = "x";
    DocumentTable docs({Document{"x", {"b"}}});
    InBatchConfig cfg;
    cfg.batch_size = 1;
    CHECK_THROWS_AS(train_in_batch(scorer, positives, docs, cfg), InputError);
}

TEST_CASE("dense score source agrees with the scorer") {
    const auto scorer = small_scorer(7);
    DocumentTable docs({Document{"x", {"a", "b"}}, Document{"y", {"e"}}, Document{"z", {}}});
    const DenseScoreSource src(scorer, docs);
    const auto ctx = context_of({"c", "d"});
    const auto all = src.score_corpus(ctx);
    for (std::size_t i = 0; i < docs.size(); ++i) {
        CHECK(all[i] == src.score(ctx, docs.documents()[i].doc_id));
        CHECK(all[i] == doctest::Approx(scorer.score(ctx, docs.documents()[i])).epsilon(1e-15));
    }
    CHECK(src.digest() == scorer.digest());
}

TEST_CASE("dense checkpoint round trip") {
    const auto scorer = small_scorer(8);
    const auto path = std::filesystem::temp_directory_path() / "dcl_test_dense.ckpt";
    save_checkpoint(path, Checkpoint{ModelKind::DenseScorer, scorer.vocab(), scorer.net(), 1.0, std::nullopt});
    const auto ckpt = load_checkpoint(path, ModelKind::DenseScorer);
    CHECK(ckpt.vocab == scorer.vocab());
    CHECK(ckpt.net == scorer.net());
    CHECK_FALSE(ckpt.optimizer.has_value());
    std::filesystem::remove(path);
}

TEST_CASE("corrupt checkpoints are rejected") {
    const auto path = std::filesystem::temp_directory_path() / "dcl_test_bad.ckpt";
    {
        std::ofstream f(path, std::ios::binary);
        f << "NOTACKPT";
    }
    CHECK_THROWS_AS(load_checkpoint(path), InputError);
    const auto scorer = small_scorer(8);
    save_checkpoint(path, Checkpoint{ModelKind::DenseScorer, scorer.vocab(), scorer.net(), 1.0, std::nullopt});
    const auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size - 9);
    CHECK_THROWS_AS(load_checkpoint(path), InputError);
    std::filesystem::remove(path);
}
