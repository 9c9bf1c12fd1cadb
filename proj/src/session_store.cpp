#include "dcl/session_store.hpp"

#include <algorithm>
#include <map>
#include <unordered_map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dcl/bm25.hpp"
#include "dcl/error.hpp"

namespace dcl {

using json = nlohmann::json;

DocumentTable::DocumentTable(std::vector<Document> docs) : docs_(std::move(docs)) {
    std::sort(docs_.begin(), docs_.end(),
              [](const Document& a, const Document& b) { return a.doc_id < b.doc_id; });
    for (std::size_t i = 1; i < docs_.size(); ++i)
        if (docs_[i].doc_id == docs_[i - 1].doc_id)
            throw InputError("duplicate doc_id " + docs_[i].doc_id);
    reindex();
}

bool DocumentTable::insert(Document doc) {
    if (const auto* existing = find(doc.doc_id)) return existing->title_tokens == doc.title_tokens;
    auto pos = std::lower_bound(docs_.begin(), docs_.end(), doc.doc_id,
                                [](const Document& d, const std::string& id) { return d.doc_id < id; });
    const auto at = static_cast<std::size_t>(pos - docs_.begin());
    docs_.insert(pos, std::move(doc));
    for (std::size_t i = at; i < docs_.size(); ++i) index_[docs_[i].doc_id] = i;
    return true;
}

void DocumentTable::reindex() {
    index_.clear();
    index_.reserve(docs_.size());
    for (std::size_t i = 0; i < docs_.size(); ++i) index_.emplace(docs_[i].doc_id, i);
}

const Document* DocumentTable::find(std::string_view doc_id) const {
    auto it = index_.find(std::string(doc_id));
    return it == index_.end() ? nullptr : &docs_[it->second];
}

const Document& DocumentTable::at(std::string_view doc_id) const {
    if (const auto* d = find(doc_id)) return *d;
    throw InputError("unknown doc_id " + std::string(doc_id));
}

std::optional<std::size_t> DocumentTable::index_of(std::string_view doc_id) const {
    auto it = index_.find(std::string(doc_id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

bool Interaction::is_clicked(std::string_view doc_id) const {
    return std::find(clicked_doc_ids.begin(), clicked_doc_ids.end(), doc_id) != clicked_doc_ids.end();
}

std::size_t SessionLog::interaction_count() const {
    std::size_t n = 0;
    for (const auto& s : sessions) n += s.interactions.size();
    return n;
}

namespace {

struct RawCandidate {
    std::string doc_id;
    std::string title;
    long rank = 0;
    bool clicked = false;
};

[[noreturn]] void fail_line(std::size_t line, const std::string& what) {
    throw InputError("line " + std::to_string(line) + ": " + what);
}

template <typename T>
T required(const json& obj, const char* key, std::size_t line) {
    auto it = obj.find(key);
    if (it == obj.end()) fail_line(line, std::string("missing field '") + key + "'");
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        fail_line(line, std::string("field '") + key + "' has the wrong type");
    }
}

std::string join(const Tokens& tokens) {
    std::string out;
    for (const auto& t : tokens) {
        if (!out.empty()) out.push_back(' ');
        out += t;
    }
    return out;
}

}  // namespace

SessionLog parse_sessions(std::istream& in) {
    SessionLog log;
    std::vector<std::string> order;  // sessions in first-appearance order
    std::map<std::string, std::map<int, Interaction>> grouped;
    std::unordered_map<std::string, Tokens> titles;

    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        json rec;
        try {
            rec = json::parse(text);
        } catch (const json::parse_error& e) {
            fail_line(line, std::string("malformed record: ") + e.what());
        }
        if (!rec.is_object()) fail_line(line, "record is not an object");

        const auto session_id = required<std::string>(rec, "session_id", line);
        const auto position = required<int>(rec, "query_position", line);
        const auto query_text = required<std::string>(rec, "query_text", line);
        if (session_id.empty()) fail_line(line, "empty session_id");
        if (position < 1) fail_line(line, "query_position must be >= 1");

        auto cands_it = rec.find("candidates");
        if (cands_it == rec.end() || !cands_it->is_array()) fail_line(line, "missing candidates array");
        if (cands_it->empty()) fail_line(line, "interaction has zero candidates");

        std::vector<RawCandidate> cands;
        for (const auto& c : *cands_it) {
            if (!c.is_object()) fail_line(line, "candidate is not an object");
            RawCandidate rc;
            rc.doc_id = required<std::string>(c, "doc_id", line);
            rc.title = required<std::string>(c, "title", line);
            rc.rank = required<long>(c, "rank", line);
            rc.clicked = required<bool>(c, "clicked", line);
            if (rc.doc_id.empty()) fail_line(line, "empty doc_id");
            cands.push_back(std::move(rc));
        }
        std::stable_sort(cands.begin(), cands.end(),
                         [](const RawCandidate& a, const RawCandidate& b) { return a.rank < b.rank; });

        Interaction inter;
        inter.position = position;
        inter.query_id = rec.contains("query_id") ? required<std::string>(rec, "query_id", line)
                                                  : session_id + "#" + std::to_string(position);
        inter.query_tokens = tokenize(query_text);
        std::set<std::string> seen;
        for (std::size_t i = 0; i < cands.size(); ++i) {
            auto& c = cands[i];
            if (i > 0 && c.rank == cands[i - 1].rank)
                fail_line(line, "duplicate rank " + std::to_string(c.rank));
            if (!seen.insert(c.doc_id).second) fail_line(line, "duplicate candidate " + c.doc_id);
            auto tokens = tokenize(c.title);
            auto [tit, fresh_doc] = titles.try_emplace(c.doc_id, tokens);
            if (!fresh_doc && tit->second != tokens)
                fail_line(line, "doc_id " + c.doc_id + " appears with a different title");
            inter.candidate_doc_ids.push_back(c.doc_id);
            if (c.clicked) inter.clicked_doc_ids.push_back(c.doc_id);
        }

        auto [sit, fresh_session] = grouped.try_emplace(session_id);
        if (fresh_session) order.push_back(session_id);
        if (!sit->second.emplace(position, std::move(inter)).second)
            fail_line(line, "duplicate (session_id, query_position) = (" + session_id + ", " +
                                std::to_string(position) + ")");
    }

    std::vector<Document> docs;
    docs.reserve(titles.size());
    for (auto& [id, tokens] : titles) docs.push_back(Document{id, std::move(tokens)});
    log.documents = DocumentTable(std::move(docs));

    for (const auto& id : order) {
        Session s{id, {}};
        for (auto& [pos, inter] : grouped[id]) s.interactions.push_back(std::move(inter));
        log.sessions.push_back(std::move(s));
    }
    return log;
}

void write_sessions(std::ostream& out, const SessionLog& log) {
    for (const auto& s : log.sessions) {
        for (const auto& inter : s.interactions) {
            json rec;
            rec["session_id"] = s.session_id;
            rec["query_position"] = inter.position;
            rec["query_id"] = inter.query_id;
            rec["query_text"] = join(inter.query_tokens);
            json cands = json::array();
            for (std::size_t i = 0; i < inter.candidate_doc_ids.size(); ++i) {
                const auto& id = inter.candidate_doc_ids[i];
                cands.push_back({{"doc_id", id},
                                 {"title", join(log.documents.at(id).title_tokens)},
                                 {"rank", i + 1},
                                 {"clicked", inter.is_clicked(id)}});
            }
            rec["candidates"] = std::move(cands);
            out << rec.dump() << '\n';
        }
    }
}

std::string SearchContext::key() const {
    return session_id + ":" + std::to_string(position) + ":" + positive_doc_id;
}

Tokens context_tokens_for(const Session& session, std::size_t index, const DocumentTable& docs) {
    Tokens out;
    auto append_segment = [&](const Tokens& seg) {
        if (!out.empty()) out.emplace_back(kSegmentSeparator);
        out.insert(out.end(), seg.begin(), seg.end());
    };
    for (std::size_t j = 0; j < index; ++j) {
        const auto& prev = session.interactions[j];
        append_segment(prev.query_tokens);
        for (const auto& clicked : prev.clicked_doc_ids) append_segment(docs.at(clicked).title_tokens);
    }
    const auto& current = session.interactions.at(index).query_tokens;
    if (!out.empty()) out.emplace_back(kSegmentSeparator);
    out.insert(out.end(), current.begin(), current.end());
    return out;
}

std::vector<std::string> negative_window_pool(const Interaction& interaction,
                                              std::string_view clicked_doc_id, int window) {
    if (window < 1) throw InputError("negative window must be >= 1");
    const auto& cands = interaction.candidate_doc_ids;
    auto it = std::find(cands.begin(), cands.end(), clicked_doc_id);
    if (it == cands.end())
        throw InputError("doc " + std::string(clicked_doc_id) + " is not a candidate of query " +
                         interaction.query_id);
    const auto center = static_cast<long>(it - cands.begin());
    std::vector<std::string> pool;
    for (long i = 0; i < static_cast<long>(cands.size()); ++i) {
        if (std::labs(i - center) > window) continue;
        if (interaction.is_clicked(cands[static_cast<std::size_t>(i)])) continue;
        pool.push_back(cands[static_cast<std::size_t>(i)]);
    }
    return pool;
}

ContextSet build_contexts(const std::vector<Session>& sessions, const DocumentTable& docs, int window) {
    ContextSet out;
    for (const auto& s : sessions) {
        for (std::size_t i = 0; i < s.interactions.size(); ++i) {
            const auto& inter = s.interactions[i];
            if (inter.clicked_doc_ids.empty()) {
                ++out.skipped_interactions;
                continue;
            }
            const auto tokens = context_tokens_for(s, i, docs);
            for (const auto& clicked : inter.clicked_doc_ids) {
                out.contexts.push_back(SearchContext{s.session_id, inter.position, inter.query_id, tokens,
                                                     clicked, negative_window_pool(inter, clicked, window)});
            }
        }
    }
    std::sort(out.contexts.begin(), out.contexts.end(), [](const SearchContext& a, const SearchContext& b) {
        return std::tie(a.session_id, a.position, a.positive_doc_id) <
               std::tie(b.session_id, b.position, b.positive_doc_id);
    });
    return out;
}

CorpusStats compute_corpus_stats(const DocumentTable& docs) {
    CorpusStats stats;
    stats.doc_count = docs.size();
    for (const auto& d : docs.documents()) {
        stats.total_token_count += d.title_tokens.size();
        std::set<std::string> uniq(d.title_tokens.begin(), d.title_tokens.end());
        for (const auto& t : uniq) ++stats.document_frequency[t];
    }
    if (stats.doc_count > 0)
        stats.average_length = static_cast<double>(stats.total_token_count) / static_cast<double>(stats.doc_count);
    return stats;
}

std::string_view split_name(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::Validation: return "valid";
        case Split::Test: return "test";
    }
    return "train";
}

Split parse_split(std::string_view name) {
    if (name == "train") return Split::Train;
    if (name == "valid" || name == "validation") return Split::Validation;
    if (name == "test") return Split::Test;
    throw InputError("unknown split '" + std::string(name) + "' (expected train|valid|test)");
}

Split assign_split(std::string_view session_id) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : session_id) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    switch (h % 10) {
        case 0: return Split::Test;
        case 1: return Split::Validation;
        default: return Split::Train;
    }
}

}  // namespace dcl
