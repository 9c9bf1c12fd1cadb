#include "dcl/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>

#include <json.hpp>

#include "dcl/error.hpp"
#include "dcl/rng.hpp"

namespace dcl {

using json = nlohmann::json;

namespace {

std::string term_name(std::size_t i, int width) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "w%0*zu", width, i);
    return buf;
}

std::string id_name(char prefix, std::size_t i, int width) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%c%0*zu", prefix, width, i);
    return buf;
}

int digits(std::size_t n) {
    int d = 1;
    while (n >= 10) {
        n /= 10;
        ++d;
    }
    return d;
}

class Generator {
public:
    explicit Generator(const SyntheticSpec& spec) : spec_(spec), rng_(Rng::substream(spec.seed, "synthetic")) {
        const int width = digits(spec.vocab_size - 1);
        terms_per_topic_ = std::max(kMinTermsPerTopic, spec.vocab_size / (2 * spec.n_topics));
        for (std::size_t i = 0; i < spec.vocab_size; ++i) vocab_.push_back(term_name(i, width));
        topics_.resize(spec.n_topics);
        for (std::size_t k = 0; k < spec.n_topics; ++k)
            for (std::size_t j = 0; j < terms_per_topic_; ++j) topics_[k].push_back(vocab_[k * terms_per_topic_ + j]);
        for (std::size_t i = spec.n_topics * terms_per_topic_; i < spec.vocab_size; ++i)
            background_.push_back(vocab_[i]);
    }

    SyntheticCorpus run() {
        SyntheticCorpus out;
        out.topic_terms = topics_;
        const int sw = digits(spec_.n_sessions);
        for (std::size_t s = 0; s < spec_.n_sessions; ++s) {
            const auto topic = static_cast<std::size_t>(rng_.uniform_index(spec_.n_topics));
            Session session{id_name('S', s + 1, sw), {}};
            for (std::size_t q = 0; q < spec_.queries_per_session; ++q)
                session.interactions.push_back(make_interaction(session.session_id, q + 1, topic, out.log.documents));
            out.labels.push_back({session.session_id, topic});
            out.log.sessions.push_back(std::move(session));
        }
        return out;
    }

private:
    const std::string& pick(const std::vector<std::string>& from) {
        return from[static_cast<std::size_t>(rng_.uniform_index(from.size()))];
    }

    std::vector<std::string> pick_distinct(const std::vector<std::string>& from, std::size_t n) {
        std::vector<std::string> out;
        for (auto i : rng_.sample_without_replacement(from.size(), std::min(n, from.size()))) out.push_back(from[i]);
        return out;
    }

    std::size_t other_topic(std::size_t topic) {
        if (spec_.n_topics == 1) return topic;
        auto t = static_cast<std::size_t>(rng_.uniform_index(spec_.n_topics - 1));
        return t >= topic ? t + 1 : t;
    }

    // Title with exactly `overlap` distinct terms of `topic`; the rest comes
    // from another topic and background terms.
    Tokens make_title(std::size_t topic, std::size_t overlap) {
        const std::size_t length = 4 + static_cast<std::size_t>(rng_.uniform_index(3));
        Tokens title = pick_distinct(topics_[topic], overlap);
        const std::size_t other = other_topic(topic);
        if (other != topic) {
            const std::size_t n_other = overlap == 0 ? 2 + static_cast<std::size_t>(rng_.uniform_index(2))
                                                     : static_cast<std::size_t>(rng_.uniform_index(2));
            for (auto& t : pick_distinct(topics_[other], n_other)) title.push_back(t);
        }
        while (title.size() < length && !background_.empty()) title.push_back(pick(background_));
        // Shuffle token order.
        const auto perm = rng_.sample_without_replacement(title.size(), title.size());
        Tokens shuffled;
        for (auto i : perm) shuffled.push_back(title[i]);
        return shuffled;
    }

    static std::string title_key(const Tokens& title) {
        std::string key;
        for (const auto& t : title) key += t + ' ';
        return key;
    }

    std::string add_document(Tokens title, DocumentTable& docs) {
        auto key = title_key(title);
        auto it = title_ids_.find(key);
        if (it != title_ids_.end()) return it->second;
        std::string id = id_name('D', next_doc_++, 7);
        docs.insert(Document{id, std::move(title)});
        title_ids_.emplace(std::move(key), id);
        return id;
    }

    Interaction make_interaction(const std::string& session_id, std::size_t position, std::size_t topic,
                                 DocumentTable& docs) {
        Interaction inter;
        inter.position = static_cast<int>(position);
        inter.query_id = session_id + "#" + std::to_string(position);
        inter.query_tokens = pick_distinct(topics_[topic], 1 + static_cast<std::size_t>(rng_.uniform_index(2)));
        if (!background_.empty() && rng_.bernoulli(0.5)) inter.query_tokens.push_back(pick(background_));

        const std::size_t n = spec_.candidates_per_query;
        const std::size_t intended_overlap = 2 + static_cast<std::size_t>(rng_.uniform_index(2));
        Tokens intended = make_title(topic, intended_overlap);
        // Half the time the intended title also repeats a query term.
        if (rng_.bernoulli(0.5)) {
            const auto& qt = inter.query_tokens.front();
            if (std::find(intended.begin(), intended.end(), qt) == intended.end()) {
                for (auto& t : intended) {
                    const auto& tt = topics_[topic];
                    if (std::find(tt.begin(), tt.end(), t) != tt.end()) {
                        t = qt;
                        break;
                    }
                }
            }
        }
        // Titles are registered in random order so doc ids carry no hint
        // of which candidate is the intended one.
        std::vector<Tokens> titles;
        std::set<std::string> keys;
        keys.insert(title_key(intended));
        titles.push_back(std::move(intended));
        while (titles.size() < n) {
            const std::size_t overlap =
                rng_.bernoulli(0.5) ? 0 : 1 + static_cast<std::size_t>(rng_.uniform_index(intended_overlap - 1));
            auto title = make_title(topic, overlap);
            if (keys.insert(title_key(title)).second) titles.push_back(std::move(title));
        }
        std::vector<std::string> ids(n);
        for (auto i : rng_.sample_without_replacement(n, n)) ids[i] = add_document(std::move(titles[i]), docs);
        std::size_t clicked = 0;
        if (n > 1 && rng_.bernoulli(spec_.noise_rate))
            clicked = 1 + static_cast<std::size_t>(rng_.uniform_index(n - 1));
        const std::string clicked_id = ids[clicked];
        for (auto i : rng_.sample_without_replacement(n, n)) inter.candidate_doc_ids.push_back(ids[i]);
        inter.clicked_doc_ids.push_back(clicked_id);
        return inter;
    }

    const SyntheticSpec& spec_;
    Rng rng_;
    std::size_t terms_per_topic_ = 0;
    std::vector<std::string> vocab_;
    std::vector<std::vector<std::string>> topics_;
    std::vector<std::string> background_;
    std::map<std::string, std::string> title_ids_;
    std::size_t next_doc_ = 1;
};

}  // namespace

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
    if (spec.n_sessions < 1 || spec.vocab_size < 1 || spec.n_topics < 1 || spec.queries_per_session < 1 ||
        spec.candidates_per_query < 1)
        throw InputError("synthetic: all counts must be >= 1");
    if (!(spec.noise_rate >= 0.0 && spec.noise_rate < 1.0)) throw InputError("synthetic: noise_rate must lie in [0, 1)");
    if (spec.vocab_size < spec.n_topics * kMinTermsPerTopic)
        throw InputError("synthetic: vocab_size " + std::to_string(spec.vocab_size) + " < n_topics x " +
                         std::to_string(kMinTermsPerTopic));
    return Generator(spec).run();
}

void write_labels(std::ostream& out, const std::vector<SessionLabel>& labels) {
    for (const auto& l : labels) out << json{{"session_id", l.session_id}, {"topic_id", l.topic_id}}.dump() << '\n';
}

std::vector<SessionLabel> read_labels(std::istream& in) {
    std::vector<SessionLabel> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = json::parse(line);
        out.push_back({j.at("session_id").get<std::string>(), j.at("topic_id").get<std::size_t>()});
    }
    return out;
}

void write_topic_terms(std::ostream& out, const std::vector<std::vector<std::string>>& topics) {
    for (std::size_t k = 0; k < topics.size(); ++k) out << json{{"topic_id", k}, {"terms", topics[k]}}.dump() << '\n';
}

std::vector<std::vector<std::string>> read_topic_terms(std::istream& in) {
    std::vector<std::vector<std::string>> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = json::parse(line);
        const auto k = j.at("topic_id").get<std::size_t>();
        if (out.size() <= k) out.resize(k + 1);
        out[k] = j.at("terms").get<std::vector<std::string>>();
    }
    return out;
}

SeparabilityAudit audit_separability(const SessionLog& log, const std::vector<SessionLabel>& labels,
                                     const std::vector<std::vector<std::string>>& topic_terms) {
    std::map<std::string, std::size_t> topic_of;
    for (const auto& l : labels) topic_of[l.session_id] = l.topic_id;
    SeparabilityAudit audit;
    for (const auto& s : log.sessions) {
        auto it = topic_of.find(s.session_id);
        if (it == topic_of.end() || it->second >= topic_terms.size())
            throw InputError("audit: no topic label for session " + s.session_id);
        const std::set<std::string> terms(topic_terms[it->second].begin(), topic_terms[it->second].end());
        auto overlap = [&](const std::string& doc_id) {
            std::set<std::string> seen;
            for (const auto& t : log.documents.at(doc_id).title_tokens)
                if (terms.count(t)) seen.insert(t);
            return seen.size();
        };
        for (const auto& inter : s.interactions) {
            if (inter.clicked_doc_ids.empty()) continue;
            ++audit.interactions;
            const auto best = overlap(inter.clicked_doc_ids.front());
            bool strict = true;
            for (const auto& c : inter.candidate_doc_ids)
                if (c != inter.clicked_doc_ids.front() && overlap(c) >= best) strict = false;
            audit.separable += strict ? 1 : 0;
        }
    }
    return audit;
}

}  // namespace dcl
