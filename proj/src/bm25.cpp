#include "dcl/bm25.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "dcl/digest.hpp"
#include "dcl/error.hpp"

namespace dcl {

using json = nlohmann::json;

namespace {
constexpr const char* kIndexFormat = "dcl-lexical-index";
constexpr int kIndexVersion = 1;
}  // namespace

Tokens tokenize(std::string_view text) {
    Tokens tokens;
    std::string current;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (c < 0x80 && (std::isspace(c) || std::ispunct(c))) {
            if (!current.empty()) tokens.push_back(std::move(current));
            current.clear();
        } else {
            current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

void Bm25Params::validate() const {
    if (!(k1 >= 0.0) || !std::isfinite(k1)) throw InputError("bm25: k1 must be >= 0");
    if (!(b >= 0.0 && b <= 1.0)) throw InputError("bm25: b must lie in [0, 1]");
}

LexicalIndex LexicalIndex::build(const DocumentTable& docs) {
    if (docs.empty()) throw InputError("cannot build a lexical index over an empty document table");
    LexicalIndex idx;
    idx.doc_ids_.reserve(docs.size());
    idx.doc_lengths_.reserve(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) {
        const auto& d = docs.documents()[i];
        idx.doc_ids_.push_back(d.doc_id);
        idx.doc_lengths_.push_back(static_cast<std::uint32_t>(d.title_tokens.size()));
        std::map<std::string, std::uint32_t> tf;
        for (const auto& t : d.title_tokens) ++tf[t];
        for (const auto& [term, count] : tf)
            idx.postings_[term].push_back(Posting{static_cast<std::uint32_t>(i), count});
    }
    idx.finalize_stats();
    return idx;
}

void LexicalIndex::finalize_stats() {
    stats_ = CorpusStats{};
    stats_.doc_count = doc_ids_.size();
    for (auto len : doc_lengths_) stats_.total_token_count += len;
    for (const auto& [term, plist] : postings_) stats_.document_frequency[term] = plist.size();
    if (stats_.doc_count > 0)
        stats_.average_length =
            static_cast<double>(stats_.total_token_count) / static_cast<double>(stats_.doc_count);
}

std::size_t LexicalIndex::doc_index(std::string_view doc_id) const {
    auto it = std::lower_bound(doc_ids_.begin(), doc_ids_.end(), doc_id);
    if (it == doc_ids_.end() || *it != doc_id) throw InputError("bm25: unknown doc_id " + std::string(doc_id));
    return static_cast<std::size_t>(it - doc_ids_.begin());
}

const std::vector<Posting>* LexicalIndex::postings(std::string_view term) const {
    auto it = postings_.find(std::string(term));
    return it == postings_.end() ? nullptr : &it->second;
}

double LexicalIndex::idf(std::string_view term) const {
    const auto* plist = postings(term);
    const double df = plist ? static_cast<double>(plist->size()) : 0.0;
    const double n = static_cast<double>(doc_count());
    return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

void LexicalIndex::save(std::ostream& out) const {
    json j;
    j["format"] = kIndexFormat;
    j["version"] = kIndexVersion;
    j["doc_ids"] = doc_ids_;
    j["doc_lengths"] = doc_lengths_;
    // Sorted term order keeps the file (and digest) canonical.
    std::map<std::string, const std::vector<Posting>*> ordered;
    for (const auto& [term, plist] : postings_) ordered.emplace(term, &plist);
    json terms = json::object();
    for (const auto& [term, plist] : ordered) {
        json arr = json::array();
        for (const auto& p : *plist) arr.push_back({p.doc, p.tf});
        terms[term] = std::move(arr);
    }
    j["postings"] = std::move(terms);
    out << j.dump() << '\n';
}

LexicalIndex LexicalIndex::load(std::istream& in) {
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw InputError(std::string("lexical index: ") + e.what());
    }
    if (j.value("format", "") != kIndexFormat) throw InputError("lexical index: wrong format tag");
    if (j.value("version", 0) != kIndexVersion)
        throw InputError("lexical index: unsupported version " + std::to_string(j.value("version", 0)));
    LexicalIndex idx;
    idx.doc_ids_ = j.at("doc_ids").get<std::vector<std::string>>();
    idx.doc_lengths_ = j.at("doc_lengths").get<std::vector<std::uint32_t>>();
    if (idx.doc_ids_.size() != idx.doc_lengths_.size()) throw InputError("lexical index: length table mismatch");
    for (const auto& [term, arr] : j.at("postings").items()) {
        auto& plist = idx.postings_[term];
        for (const auto& p : arr) plist.push_back(Posting{p.at(0).get<std::uint32_t>(), p.at(1).get<std::uint32_t>()});
    }
    idx.finalize_stats();
    return idx;
}

void LexicalIndex::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    save(out);
}

LexicalIndex LexicalIndex::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path.string());
    return load(in);
}

std::string LexicalIndex::digest() const {
    std::ostringstream os;
    save(os);
    return sha256_hex(os.str());
}

bool LexicalIndex::operator==(const LexicalIndex& other) const {
    return doc_ids_ == other.doc_ids_ && doc_lengths_ == other.doc_lengths_ && postings_ == other.postings_;
}

namespace {

double term_weight(const Bm25Params& p, double idf, double tf, double len, double avgdl) {
    const double norm = avgdl > 0.0 ? len / avgdl : 0.0;
    return idf * tf * (p.k1 + 1.0) / (tf + p.k1 * (1.0 - p.b + p.b * norm));
}

}  // namespace

double bm25_score(const LexicalIndex& index, const Bm25Params& params,
                  std::span<const std::string> query_tokens, std::string_view doc_id) {
    const auto doc = index.doc_index(doc_id);
    const double len = index.doc_length(doc);
    const double avgdl = index.stats().average_length;
    double score = 0.0;
    for (const auto& term : query_tokens) {
        const auto* plist = index.postings(term);
        if (!plist) continue;
        auto it = std::lower_bound(plist->begin(), plist->end(), doc,
                                   [](const Posting& p, std::size_t d) { return p.doc < d; });
        if (it == plist->end() || it->doc != doc) continue;
        score += term_weight(params, index.idf(term), it->tf, len, avgdl);
    }
    return score;
}

double bm25_score_context(const LexicalIndex& index, const Bm25Params& params,
                          const SearchContext& context, std::string_view doc_id) {
    return bm25_score(index, params, context.context_tokens, doc_id);
}

std::vector<double> bm25_score_all(const LexicalIndex& index, const Bm25Params& params,
                                   std::span<const std::string> query_tokens) {
    std::vector<double> scores(index.doc_count(), 0.0);
    const double avgdl = index.stats().average_length;
    // Summing per query-token occurrence, in query order, reproduces
    // bm25_score's floating-point accumulation order exactly.
    for (const auto& term : query_tokens) {
        const auto* plist = index.postings(term);
        if (!plist) continue;
        const double idf = index.idf(term);
        for (const auto& p : *plist)
            scores[p.doc] += term_weight(params, idf, p.tf, index.doc_length(p.doc), avgdl);
    }
    return scores;
}

}  // namespace dcl

namespace dcl {

Bm25ScoreSource::Bm25ScoreSource(const LexicalIndex& index, Bm25Params params) : index_(index), params_(params) {
    params_.validate();
}

double Bm25ScoreSource::score(const SearchContext& context, std::string_view doc_id) const {
    return bm25_score_context(index_, params_, context, doc_id);
}

std::vector<double> Bm25ScoreSource::score_corpus(const SearchContext& context) const {
    return bm25_score_all(index_, params_, context.context_tokens);
}

std::string Bm25ScoreSource::digest() const {
    std::ostringstream os;
    os.precision(17);
    os << "bm25 k1=" << params_.k1 << " b=" << params_.b << " index=" << index_.digest();
    return sha256_hex(os.str());
}

}  // namespace dcl
