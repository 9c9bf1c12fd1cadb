#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dcl/score_source.hpp"
#include "dcl/session_store.hpp"

namespace dcl {

/// Lowercases ASCII and splits on whitespace and punctuation, dropping the
/// separators. Non-ASCII bytes are kept as token characters.
Tokens tokenize(std::string_view text);

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;

    /// Throws InputError unless k1 >= 0 and 0 <= b <= 1.
    void validate() const;
};

struct Posting {
    std::uint32_t doc = 0;  // index into the document table
    std::uint32_t tf = 0;

    bool operator==(const Posting&) const = default;
};

/// Inverted index over document titles. Immutable after build.
class LexicalIndex {
public:
    /// Throws InputError for an empty table.
    static LexicalIndex build(const DocumentTable& docs);

    const CorpusStats& stats() const { return stats_; }
    std::size_t doc_count() const { return doc_ids_.size(); }
    const std::string& doc_id(std::size_t idx) const { return doc_ids_[idx]; }
    std::size_t doc_index(std::string_view doc_id) const;  // throws InputError
    std::uint32_t doc_length(std::size_t idx) const { return doc_lengths_[idx]; }
    const std::vector<Posting>* postings(std::string_view term) const;
    double idf(std::string_view term) const;

    /// SHA-256 over a canonical serialization.
    std::string digest() const;

    void save(std::ostream& out) const;
    static LexicalIndex load(std::istream& in);
    void save(const std::filesystem::path& path) const;
    static LexicalIndex load(const std::filesystem::path& path);

    bool operator==(const LexicalIndex& other) const;

private:
    void finalize_stats();

    CorpusStats stats_;
    std::vector<std::string> doc_ids_;
    std::vector<std::uint32_t> doc_lengths_;
    std::unordered_map<std::string, std::vector<Posting>> postings_;
};

/// Okapi BM25 with idf = ln(1 + (N - df + 0.5) / (df + 0.5)). Each query
/// token occurrence contributes independently. Throws InputError for an
/// unknown doc_id.
double bm25_score(const LexicalIndex& index, const Bm25Params& params,
                  std::span<const std::string> query_tokens, std::string_view doc_id);

/// Scores the flattened context tokens as one bag.
double bm25_score_context(const LexicalIndex& index, const Bm25Params& params,
                          const SearchContext& context, std::string_view doc_id);

/// Scores for every document (by table index) in one postings pass.
std::vector<double> bm25_score_all(const LexicalIndex& index, const Bm25Params& params,
                                   std::span<const std::string> query_tokens);

/// M(C, d) = BM25 over the flattened context bag.
class Bm25ScoreSource final : public ScoreSource {
public:
    Bm25ScoreSource(const LexicalIndex& index, Bm25Params params);

    double score(const SearchContext& context, std::string_view doc_id) const override;
    std::vector<double> score_corpus(const SearchContext& context) const override;
    std::string name() const override { return "bm25"; }
    std::string digest() const override;

private:
    const LexicalIndex& index_;
    Bm25Params params_;
};

}  // namespace dcl
