#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dcl {

using Tokens = std::vector<std::string>;

/// Placed between the segments (queries, clicked titles) of a flattened
/// search context. The tokenizer never produces it, so it cannot collide
/// with document terms.
inline constexpr std::string_view kSegmentSeparator = "[SEP]";

struct Document {
    std::string doc_id;
    Tokens title_tokens;

    bool operator==(const Document&) const = default;
};

/// Deduplicated documents, kept sorted by doc_id.
class DocumentTable {
public:
    DocumentTable() = default;
    explicit DocumentTable(std::vector<Document> docs);

    /// Adds a document, or checks that an existing one carries identical
    /// tokens. Returns false on a conflicting duplicate.
    bool insert(Document doc);

    const Document* find(std::string_view doc_id) const;
    const Document& at(std::string_view doc_id) const;
    std::optional<std::size_t> index_of(std::string_view doc_id) const;

    std::size_t size() const { return docs_.size(); }
    bool empty() const { return docs_.empty(); }
    const std::vector<Document>& documents() const { return docs_; }

    bool operator==(const DocumentTable& other) const { return docs_ == other.docs_; }

private:
    void reindex();

    std::vector<Document> docs_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct Interaction {
    std::string query_id;
    int position = 0;  // 1-based within the session
    Tokens query_tokens;
    std::vector<std::string> candidate_doc_ids;  // logged rank order
    std::vector<std::string> clicked_doc_ids;    // subset, in candidate order

    bool is_clicked(std::string_view doc_id) const;
    bool operator==(const Interaction&) const = default;
};

struct Session {
    std::string session_id;
    std::vector<Interaction> interactions;  // timestamp order

    bool operator==(const Session&) const = default;
};

struct SessionLog {
    std::vector<Session> sessions;
    DocumentTable documents;

    std::size_t interaction_count() const;
    bool operator==(const SessionLog&) const = default;
};

/// Parses the line-delimited session log (one JSON object per interaction).
/// Throws InputError naming the 1-based line for malformed records,
/// interactions without candidates, or duplicate (session_id, query_position).
SessionLog parse_sessions(std::istream& in);

/// Writes the log back in the same record format; titles and queries are
/// re-emitted as space-joined tokens, so parse(write(x)) == x.
void write_sessions(std::ostream& out, const SessionLog& log);

struct SearchContext {
    std::string session_id;
    int position = 0;
    std::string query_id;
    Tokens context_tokens;
    std::string positive_doc_id;
    std::vector<std::string> negative_pool;

    /// Stable "session:position:doc" key.
    std::string key() const;
    bool operator==(const SearchContext&) const = default;
};

struct ContextSet {
    std::vector<SearchContext> contexts;  // ordered by (session_id, position, doc_id)
    std::size_t skipped_interactions = 0;  // interactions without any click
};

inline constexpr int kDefaultNegativeWindow = 3;

/// Flattened [q1, d1+, ..., qn] for the interaction at `index` in `session`.
/// Earlier queries contribute their tokens followed by each clicked title;
/// click-free queries contribute their tokens alone.
Tokens context_tokens_for(const Session& session, std::size_t index, const DocumentTable& docs);

/// One context per (interaction, clicked document).
ContextSet build_contexts(const std::vector<Session>& sessions, const DocumentTable& docs,
                          int window = kDefaultNegativeWindow);

/// Unclicked candidates within `window` logged positions of the clicked one,
/// in logged order. Throws InputError if the doc is not a candidate or
/// window < 1.
std::vector<std::string> negative_window_pool(const Interaction& interaction,
                                              std::string_view clicked_doc_id, int window);

struct CorpusStats {
    std::size_t doc_count = 0;
    std::size_t total_token_count = 0;
    std::map<std::string, std::size_t> document_frequency;
    double average_length = 0.0;
};

CorpusStats compute_corpus_stats(const DocumentTable& docs);

enum class Split { Train, Validation, Test };

std::string_view split_name(Split split);
Split parse_split(std::string_view name);

/// Deterministic hash-based assignment: ~80% train, 10% validation, 10% test.
Split assign_split(std::string_view session_id);

}  // namespace dcl
