#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "dcl/session_store.hpp"

namespace dcl {

struct SyntheticSpec {
    std::size_t n_sessions = 2000;
    std::size_t vocab_size = 2000;
    std::size_t n_topics = 20;
    std::size_t queries_per_session = 3;
    std::size_t candidates_per_query = 10;
    double noise_rate = 0.1;
    std::uint64_t seed = 0;
};

inline constexpr std::size_t kMinTermsPerTopic = 8;

struct SessionLabel {
    std::string session_id;
    std::size_t topic_id = 0;

    bool operator==(const SessionLabel&) const = default;
};

/// Generated log plus the hidden planted intents. Labels and topic term
/// sets are for auditing only and never enter a bundle.
struct SyntheticCorpus {
    SessionLog log;
    std::vector<SessionLabel> labels;
    std::vector<std::vector<std::string>> topic_terms;
};

/// Planted-intent click model. Each session draws a hidden topic; queries
/// sample its terms; the intended candidate carries 2-3 topic terms while
/// every distractor carries strictly fewer. With probability noise_rate
/// the click lands on a random distractor instead. Throws InputError for
/// zero counts, noise outside [0, 1), or vocab_size < n_topics * 8.
SyntheticCorpus generate_synthetic(const SyntheticSpec& spec);

/// Line-delimited {"session_id", "topic_id"}.
void write_labels(std::ostream& out, const std::vector<SessionLabel>& labels);
std::vector<SessionLabel> read_labels(std::istream& in);

/// Line-delimited {"topic_id", "terms": [...]}.
void write_topic_terms(std::ostream& out, const std::vector<std::vector<std::string>>& topics);
std::vector<std::vector<std::string>> read_topic_terms(std::istream& in);

struct SeparabilityAudit {
    std::size_t interactions = 0;
    std::size_t separable = 0;  // clicked doc has strictly the largest topic overlap

    double rate() const { return interactions ? static_cast<double>(separable) / static_cast<double>(interactions) : 0.0; }
};

/// Recomputes topic overlap for every clicked interaction from the sidecars.
SeparabilityAudit audit_separability(const SessionLog& log, const std::vector<SessionLabel>& labels,
                                     const std::vector<std::vector<std::string>>& topic_terms);

}  // namespace dcl
