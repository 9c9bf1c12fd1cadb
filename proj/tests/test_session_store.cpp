#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "dcl/error.hpp"
#include "dcl/rng.hpp"
#include "dcl/session_store.hpp"
#include "dcl/synthetic.hpp"

using namespace dcl;

namespace {

SessionLog parse_text(const std::string& text) {
    std::istringstream in(text);
    return parse_sessions(in);
}

SessionLog parse_file(const std::string& name) {
    std::ifstream in(std::string(DCL_FIXTURES) + "/" + name);
    REQUIRE(in.good());
    return parse_sessions(in);
}

std::string error_of(const std::string& text) {
    try {
        parse_text(text);
    } catch (const InputError& e) {
        return e.what();
    }
    return "";
}

Interaction interaction(std::vector<std::string> cands, std::vector<std::string> clicked) {
    Interaction i;
    i.query_id = "q";
    i.candidate_doc_ids = std::move(cands);
    i.clicked_doc_ids = std::move(clicked);
    return i;
}

}  // namespace

TEST_CASE("single record parses into one session") {
    const auto log = parse_text(
        R"({"session_id":"s","query_position":1,"query_text":"Clay Aiken","candidates":[)"
        R"({"doc_id":"c1","title":"a","rank":1,"clicked":true},)"
        R"({"doc_id":"c2","title":"b","rank":2,"clicked":false},)"
        R"({"doc_id":"c3","title":"c","rank":3,"clicked":false}]})");
    REQUIRE(log.sessions.size() == 1);
    REQUIRE(log.sessions[0].interactions.size() == 1);
    const auto& i = log.sessions[0].interactions[0];
    CHECK(i.query_tokens == Tokens{"clay", "aiken"});
    CHECK(i.clicked_doc_ids == std::vector<std::string>{"c1"});
    CHECK(i.query_id == "s#1");
    CHECK(log.documents.size() == 3);
}

TEST_CASE("empty input gives an empty log") {
    const auto log = parse_text("");
    CHECK(log.sessions.empty());
    CHECK(log.documents.empty());
}

TEST_CASE("four-record fixture deduplicates documents") {
    const auto log = parse_file("four_records.jsonl");
    CHECK(log.sessions.size() == 2);
    CHECK(log.interaction_count() == 4);
    // Distinct titles by hand: alpha beta, gamma, delta epsilon, zeta, eta theta.
    CHECK(log.documents.size() == 5);
}

TEST_CASE("records are grouped by session and ordered by position") {
    const auto log = parse_text(
        R"({"session_id":"b","query_position":2,"query_text":"two","candidates":[{"doc_id":"x","title":"x","rank":1,"clicked":false}]})"
        "\n"
        R"({"session_id":"a","query_position":1,"query_text":"one","candidates":[{"doc_id":"x","title":"x","rank":1,"clicked":true}]})"
        "\n"
        R"({"session_id":"b","query_position":1,"query_text":"one","candidates":[{"doc_id":"y","title":"y","rank":1,"clicked":true}]})");
    REQUIRE(log.sessions.size() == 2);
    CHECK(log.sessions[0].session_id == "b");
    CHECK(log.sessions[0].interactions[0].position == 1);
    CHECK(log.sessions[0].interactions[1].position == 2);
}

TEST_CASE("candidates are ordered by logged rank") {
    const auto log = parse_text(
        R"({"session_id":"s","query_position":1,"query_text":"q","candidates":[)"
        R"({"doc_id":"late","title":"z","rank":7,"clicked":false},)"
        R"({"doc_id":"early","title":"y","rank":2,"clicked":true}]})");
    CHECK(log.sessions[0].interactions[0].candidate_doc_ids == std::vector<std::string>{"early", "late"});
}

TEST_CASE("parse errors name the line") {
    const std::string good =
        R"({"session_id":"s","query_position":1,"query_text":"q","candidates":[{"doc_id":"a","title":"a","rank":1,"clicked":true}]})";
    CHECK(error_of(good + "\n{not json").find("line 2") != std::string::npos);
    CHECK(error_of(good + "\n" + R"({"session_id":"t","query_position":1,"query_text":"q","candidates":[]})")
              .find("line 2") != std::string::npos);
    CHECK(error_of(good + "\n" + good).find("line 2") != std::string::npos);
    CHECK(error_of(good + "\n" + good).find("duplicate") != std::string::npos);
    CHECK(error_of(R"({"session_id":"s","query_text":"q","candidates":[]})").find("line 1") != std::string::npos);
    CHECK(error_of(good + "\n" +
                   R"({"session_id":"t","query_position":1,"query_text":"q","candidates":[{"doc_id":"a","title":"other","rank":1,"clicked":true}]})")
              .find("different title") != std::string::npos);
}

TEST_CASE("write then parse round-trips") {
    const auto log = parse_file("ingest_10.jsonl");
    std::ostringstream out;
    write_sessions(out, log);
    const auto again = parse_text(out.str());
    CHECK(again == log);
}

TEST_CASE("first query context is the query alone") {
    const auto log = parse_file("ingest_10.jsonl");
    const auto ctx = context_tokens_for(log.sessions[0], 0, log.documents);
    CHECK(ctx == Tokens{"clay", "aiken"});
}

TEST_CASE("two clicks on the second query share one context") {
    const auto log = parse_text(
        R"({"session_id":"s","query_position":1,"query_text":"q1","candidates":[{"doc_id":"d1","title":"first doc","rank":1,"clicked":true}]})"
        "\n"
        R"({"session_id":"s","query_position":2,"query_text":"q2","candidates":[{"doc_id":"d2","title":"two","rank":1,"clicked":true},{"doc_id":"d3","title":"three","rank":2,"clicked":true}]})");
    const auto set = build_contexts(log.sessions, log.documents, 3);
    REQUIRE(set.contexts.size() == 3);
    const Tokens expected{"q1", std::string(kSegmentSeparator), "first", "doc", std::string(kSegmentSeparator), "q2"};
    CHECK(set.contexts[1].context_tokens == expected);
    CHECK(set.contexts[2].context_tokens == expected);
    CHECK(set.contexts[1].positive_doc_id == "d2");
    CHECK(set.contexts[2].positive_doc_id == "d3");
}

TEST_CASE("click-free sessions produce only skips") {
    const auto log = parse_text(
        R"({"session_id":"s","query_position":1,"query_text":"a","candidates":[{"doc_id":"d1","title":"x","rank":1,"clicked":false}]})"
        "\n"
        R"({"session_id":"s","query_position":2,"query_text":"b","candidates":[{"doc_id":"d2","title":"y","rank":1,"clicked":false}]})");
    const auto set = build_contexts(log.sessions, log.documents, 3);
    CHECK(set.contexts.empty());
    CHECK(set.skipped_interactions == 2);
}

TEST_CASE("click-free history contributes its query only") {
    const auto log = parse_file("ingest_10.jsonl");
    // Session s3 starts with a query that has no click.
    const Session* s3 = nullptr;
    for (const auto& s : log.sessions)
        if (s.session_id == "s3") s3 = &s;
    REQUIRE(s3);
    const auto ctx = context_tokens_for(*s3, 1, log.documents);
    CHECK(ctx == Tokens{"paris", "flights", std::string(kSegmentSeparator), "paris", "hotels"});
}

TEST_CASE("negative window examples") {
    CHECK(negative_window_pool(interaction({"a", "b", "c", "d", "e"}, {"c"}), "c", 1) ==
          std::vector<std::string>{"b", "d"});
    CHECK(negative_window_pool(interaction({"a", "b", "c"}, {"a"}), "a", 5) == std::vector<std::string>{"b", "c"});
    CHECK(negative_window_pool(interaction({"a", "b", "c", "d", "e", "f", "g", "h", "i", "j"}, {"e", "f"}), "e", 3) ==
          std::vector<std::string>{"b", "c", "d", "g", "h"});
    CHECK_THROWS_AS(negative_window_pool(interaction({"a"}, {}), "z", 1), InputError);
}

TEST_CASE("window pools are unclicked subsets for any window") {
    Rng rng(21);
    for (int trial = 0; trial < 300; ++trial) {
        const auto n = 1 + rng.uniform_index(12);
        std::vector<std::string> cands, clicked;
        for (std::size_t i = 0; i < n; ++i) {
            cands.push_back("d" + std::to_string(i));
            if (rng.bernoulli(0.3)) clicked.push_back(cands.back());
        }
        if (clicked.empty()) clicked.push_back(cands[rng.uniform_index(n)]);
        const auto inter = interaction(cands, clicked);
        const int window = 1 + static_cast<int>(rng.uniform_index(12));
        for (const auto& c : clicked) {
            const auto pool = negative_window_pool(inter, c, window);
            for (const auto& d : pool) {
                CHECK(std::find(cands.begin(), cands.end(), d) != cands.end());
                CHECK_FALSE(inter.is_clicked(d));
            }
        }
    }
}

TEST_CASE("contexts count every click and never list the positive as a negative") {
    const auto log = parse_file("ingest_10.jsonl");
    const auto set = build_contexts(log.sessions, log.documents, 3);
    std::size_t clicks = 0, click_free = 0;
    for (const auto& s : log.sessions)
        for (const auto& i : s.interactions) {
            clicks += i.clicked_doc_ids.size();
            if (i.clicked_doc_ids.empty()) ++click_free;
        }
    CHECK(set.contexts.size() == clicks);
    CHECK(set.skipped_interactions == click_free);
    for (const auto& c : set.contexts) {
        CHECK(std::find(c.negative_pool.begin(), c.negative_pool.end(), c.positive_doc_id) == c.negative_pool.end());
        // Every context ends with its own query.
        const auto& last = c.context_tokens.back();
        CHECK(last != kSegmentSeparator);
    }
}

TEST_CASE("corpus stats") {
    DocumentTable docs({Document{"a", {"x", "y", "x"}}, Document{"b", {"y"}}});
    const auto stats = compute_corpus_stats(docs);
    CHECK(stats.doc_count == 2);
    CHECK(stats.total_token_count == 4);
    CHECK(stats.document_frequency.at("x") == 1);
    CHECK(stats.document_frequency.at("y") == 2);
    CHECK(stats.average_length == 2.0);
}

TEST_CASE("split assignment is a pure function of the session id") {
    std::size_t counts[3] = {0, 0, 0};
    for (int i = 0; i < 5000; ++i) {
        const auto id = "S" + std::to_string(i);
        const auto s = assign_split(id);
        CHECK(s == assign_split(id));
        ++counts[static_cast<int>(s)];
    }
    // Roughly 80/10/10.
    CHECK(counts[0] > 3700);
    CHECK(counts[1] > 350);
    CHECK(counts[2] > 350);
    CHECK(parse_split(split_name(Split::Validation)) == Split::Validation);
    CHECK_THROWS_AS(parse_split("dev"), InputError);
}

TEST_CASE("synthetic generation is deterministic") {
    SyntheticSpec spec;
    spec.n_sessions = 50;
    spec.vocab_size = 400;
    spec.n_topics = 5;
    spec.seed = 7;
    std::ostringstream a, b;
    write_sessions(a, generate_synthetic(spec).log);
    write_sessions(b, generate_synthetic(spec).log);
    CHECK(a.str() == b.str());
    spec.seed = 8;
    std::ostringstream c;
    write_sessions(c, generate_synthetic(spec).log);
    CHECK(a.str() != c.str());
}

TEST_CASE("synthetic counts") {
    SyntheticSpec spec;
    spec.n_sessions = 100;
    spec.queries_per_session = 3;
    spec.vocab_size = 400;
    spec.n_topics = 5;
    spec.seed = 1;
    const auto corpus = generate_synthetic(spec);
    CHECK(corpus.log.sessions.size() == 100);
    CHECK(corpus.log.interaction_count() == 300);
    CHECK(corpus.labels.size() == 100);
    for (const auto& s : corpus.log.sessions)
        for (const auto& i : s.interactions) {
            CHECK(i.candidate_doc_ids.size() == spec.candidates_per_query);
            CHECK(i.clicked_doc_ids.size() == 1);
        }
}

TEST_CASE("noise-free synthetic clicks have strictly maximal topic overlap") {
    SyntheticSpec spec;
    spec.n_sessions = 200;
    spec.vocab_size = 800;
    spec.n_topics = 10;
    spec.noise_rate = 0.0;
    spec.seed = 3;
    const auto corpus = generate_synthetic(spec);
    const auto audit = audit_separability(corpus.log, corpus.labels, corpus.topic_terms);
    CHECK(audit.interactions == 600);
    CHECK(audit.separable == audit.interactions);
}

TEST_CASE("noisy synthetic clicks miss at about the noise rate") {
    SyntheticSpec spec;
    spec.n_sessions = 1000;
    spec.vocab_size = 800;
    spec.n_topics = 10;
    spec.noise_rate = 0.2;
    spec.seed = 4;
    const auto corpus = generate_synthetic(spec);
    const auto audit = audit_separability(corpus.log, corpus.labels, corpus.topic_terms);
    // 3000 interactions, each misplaced with probability 0.2 (binomial sd ~ 22).
    const double missed = static_cast<double>(audit.interactions - audit.separable);
    CHECK(missed == doctest::Approx(600.0).epsilon(0.15));
}

TEST_CASE("synthetic generator settings are validated") {
    SyntheticSpec spec;
    spec.vocab_size = 100;
    spec.n_topics = 20;  // needs 160 terms
    CHECK_THROWS_AS(generate_synthetic(spec), InputError);
    spec = SyntheticSpec{};
    spec.noise_rate = 1.0;
    CHECK_THROWS_AS(generate_synthetic(spec), InputError);
    spec = SyntheticSpec{};
    spec.n_sessions = 0;
    CHECK_THROWS_AS(generate_synthetic(spec), InputError);
}

TEST_CASE("label sidecars round-trip") {
    SyntheticSpec spec;
    spec.n_sessions = 20;
    spec.vocab_size = 200;
    spec.n_topics = 4;
    spec.seed = 2;
    const auto corpus = generate_synthetic(spec);
    std::stringstream labels, topics;
    write_labels(labels, corpus.labels);
    write_topic_terms(topics, corpus.topic_terms);
    CHECK(read_labels(labels) == corpus.labels);
    CHECK(read_topic_terms(topics) == corpus.topic_terms);
}
