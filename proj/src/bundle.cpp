#include "dcl/bundle.hpp"

#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "dcl/error.hpp"

namespace dcl {

using json = nlohmann::json;

namespace {
constexpr const char* kBundleFormat = "dcl-bundle";
constexpr int kBundleVersion = 1;
}  // namespace

CorpusBundle CorpusBundle::from_log(SessionLog log, int window) {
    CorpusBundle b;
    b.negative_window = window;
    b.contexts = build_contexts(log.sessions, log.documents, window);
    b.log = std::move(log);
    return b;
}

std::vector<std::size_t> CorpusBundle::training_context_ids(std::size_t min_negatives) const {
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < contexts.contexts.size(); ++i) {
        const auto& c = contexts.contexts[i];
        if (assign_split(c.session_id) == Split::Train && c.negative_pool.size() >= std::max<std::size_t>(1, min_negatives))
            ids.push_back(i);
    }
    return ids;
}

std::vector<SearchContext> CorpusBundle::training_contexts() const {
    std::vector<SearchContext> out;
    for (const auto& c : contexts.contexts)
        if (assign_split(c.session_id) == Split::Train) out.push_back(c);
    return out;
}

std::vector<EvalQuery> CorpusBundle::eval_queries(Split split) const {
    std::vector<EvalQuery> out;
    for (const auto& s : log.sessions) {
        if (assign_split(s.session_id) != split) continue;
        for (std::size_t i = 0; i < s.interactions.size(); ++i) {
            const auto& inter = s.interactions[i];
            if (inter.clicked_doc_ids.empty()) continue;
            out.push_back({inter.query_id, context_tokens_for(s, i, log.documents), inter.candidate_doc_ids});
        }
    }
    return out;
}

Qrels CorpusBundle::click_qrels(Split split) const {
    Qrels q;
    for (const auto& s : log.sessions) {
        if (assign_split(s.session_id) != split) continue;
        for (const auto& inter : s.interactions) {
            if (inter.clicked_doc_ids.empty()) continue;
            for (const auto& c : inter.candidate_doc_ids) q.set(inter.query_id, c, inter.is_clicked(c) ? 1 : 0);
        }
    }
    return q;
}

Vocabulary CorpusBundle::training_vocabulary() const {
    std::set<std::string> tokens;
    for (const auto& s : log.sessions) {
        if (assign_split(s.session_id) != Split::Train) continue;
        for (const auto& inter : s.interactions) {
            tokens.insert(inter.query_tokens.begin(), inter.query_tokens.end());
            for (const auto& c : inter.candidate_doc_ids) {
                const auto& t = log.documents.at(c).title_tokens;
                tokens.insert(t.begin(), t.end());
            }
        }
    }
    return Vocabulary(std::vector<std::string>(tokens.begin(), tokens.end()));
}

void save_bundle(const std::filesystem::path& path, const CorpusBundle& b) {
    json j;
    j["format"] = kBundleFormat;
    j["version"] = kBundleVersion;
    j["negative_window"] = b.negative_window;
    json docs = json::array();
    for (const auto& d : b.log.documents.documents()) docs.push_back({{"doc_id", d.doc_id}, {"title_tokens", d.title_tokens}});
    j["documents"] = std::move(docs);
    json sessions = json::array();
    for (const auto& s : b.log.sessions) {
        json inters = json::array();
        for (const auto& i : s.interactions)
            inters.push_back({{"query_id", i.query_id},
                              {"position", i.position},
                              {"query_tokens", i.query_tokens},
                              {"candidates", i.candidate_doc_ids},
                              {"clicked", i.clicked_doc_ids}});
        sessions.push_back({{"session_id", s.session_id},
                            {"split", split_name(assign_split(s.session_id))},
                            {"interactions", std::move(inters)}});
    }
    j["sessions"] = std::move(sessions);
    json contexts = json::array();
    for (const auto& c : b.contexts.contexts)
        contexts.push_back({{"session_id", c.session_id},
                            {"position", c.position},
                            {"query_id", c.query_id},
                            {"positive_doc_id", c.positive_doc_id},
                            {"context_tokens", c.context_tokens},
                            {"negative_pool", c.negative_pool}});
    j["contexts"] = std::move(contexts);
    j["skipped_interactions"] = b.contexts.skipped_interactions;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    out << j.dump() << '\n';
}

CorpusBundle load_bundle(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open bundle " + path.string());
    try {
        json j;
        in >> j;
        if (j.value("format", "") != kBundleFormat) throw InputError(path.string() + ": not a corpus bundle");
        if (j.value("version", 0) != kBundleVersion) throw InputError(path.string() + ": unsupported bundle version");
        CorpusBundle b;
        b.negative_window = j.at("negative_window").get<int>();
        std::vector<Document> docs;
        for (const auto& d : j.at("documents"))
            docs.push_back({d.at("doc_id").get<std::string>(), d.at("title_tokens").get<Tokens>()});
        b.log.documents = DocumentTable(std::move(docs));
        for (const auto& s : j.at("sessions")) {
            Session sess{s.at("session_id").get<std::string>(), {}};
            for (const auto& i : s.at("interactions"))
                sess.interactions.push_back({i.at("query_id").get<std::string>(), i.at("position").get<int>(),
                                             i.at("query_tokens").get<Tokens>(),
                                             i.at("candidates").get<std::vector<std::string>>(),
                                             i.at("clicked").get<std::vector<std::string>>()});
            b.log.sessions.push_back(std::move(sess));
        }
        for (const auto& c : j.at("contexts"))
            b.contexts.contexts.push_back({c.at("session_id").get<std::string>(), c.at("position").get<int>(),
                                           c.at("query_id").get<std::string>(), c.at("context_tokens").get<Tokens>(),
                                           c.at("positive_doc_id").get<std::string>(),
                                           c.at("negative_pool").get<std::vector<std::string>>()});
        b.contexts.skipped_interactions = j.at("skipped_interactions").get<std::size_t>();
        return b;
    } catch (const json::exception& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

}  // namespace dcl
