#include "dcl/dense_scorer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "dcl/error.hpp"

namespace dcl {

DenseScorer::DenseScorer(Vocabulary vocab, DualEncoder net) : vocab_(std::move(vocab)), net_(std::move(net)) {
    if (vocab_.size() != net_.shape().vocab_size)
        throw InputError("dense scorer: vocabulary does not match encoder dims");
}

DenseScorer DenseScorer::initialize(Vocabulary vocab, std::size_t d_emb, std::size_t hidden, Rng& rng) {
    EncoderShape shape{vocab.size(), d_emb, hidden};
    auto net = DualEncoder::random(shape, rng);
    return DenseScorer(std::move(vocab), std::move(net));
}

std::vector<double> DenseScorer::encode(std::span<const std::string> tokens, Tower tower) const {
    ++encode_calls_;
    const auto ids = vocab_.to_ids(tokens);
    return dcl::encode(net_, ids, tower).output;
}

double DenseScorer::score(const SearchContext& context, const Document& doc) const {
    const auto u = encode(context.context_tokens, Tower::Context);
    const auto v = encode(doc.title_tokens, Tower::Document);
    return dot(u, v);
}

double dense_score(const DenseScorer& scorer, const SearchContext& context, const Document& doc) {
    return scorer.score(context, doc);
}

ScoreMatrix DenseScorer::score_all(std::span<const SearchContext> contexts, std::span<const Document> docs) const {
    ScoreMatrix m;
    m.rows = contexts.size();
    m.cols = docs.size();
    std::vector<std::vector<double>> doc_vecs;
    doc_vecs.reserve(docs.size());
    for (const auto& d : docs) doc_vecs.push_back(encode(d.title_tokens, Tower::Document));
    m.values.resize(m.rows * m.cols);
    for (std::size_t i = 0; i < contexts.size(); ++i) {
        const auto u = encode(contexts[i].context_tokens, Tower::Context);
        for (std::size_t j = 0; j < docs.size(); ++j) m.values[i * m.cols + j] = dot(u, doc_vecs[j]);
    }
    return m;
}

namespace {

constexpr char kMatrixMagic[8] = {'D', 'C', 'L', 'S', 'M', 'A', 'T', '\0'};
constexpr std::uint32_t kMatrixVersion = 1;

void write_string(std::ostream& out, const std::string& s) {
    const auto n = static_cast<std::uint32_t>(s.size());
    out.write(reinterpret_cast<const char*>(&n), sizeof n);
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
    std::uint32_t n = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof n);
    if (!in || n > (1u << 20)) throw InputError("score matrix: corrupt key");
    std::string s(n, '\0');
    in.read(s.data(), n);
    return s;
}

}  // namespace

void save_score_matrix(const std::filesystem::path& path, const ScoreMatrix& m, const std::string& params_digest,
                       const std::string& corpus_digest) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    out.write(kMatrixMagic, sizeof kMatrixMagic);
    out.write(reinterpret_cast<const char*>(&kMatrixVersion), sizeof kMatrixVersion);
    write_string(out, params_digest);
    write_string(out, corpus_digest);
    const std::uint64_t rows = m.rows, cols = m.cols;
    out.write(reinterpret_cast<const char*>(&rows), sizeof rows);
    out.write(reinterpret_cast<const char*>(&cols), sizeof cols);
    out.write(reinterpret_cast<const char*>(m.values.data()),
              static_cast<std::streamsize>(m.values.size() * sizeof(double)));
}

ScoreMatrix load_score_matrix(const std::filesystem::path& path, const std::string& params_digest,
                              const std::string& corpus_digest) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path.string());
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMatrixMagic, sizeof magic) != 0)
        throw InputError(path.string() + ": not a score matrix cache");
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    if (version != kMatrixVersion) throw InputError(path.string() + ": unsupported score matrix version");
    if (read_string(in) != params_digest) throw InputError(path.string() + ": cache keyed by different parameters");
    if (read_string(in) != corpus_digest) throw InputError(path.string() + ": cache keyed by a different corpus");
    std::uint64_t rows = 0, cols = 0;
    in.read(reinterpret_cast<char*>(&rows), sizeof rows);
    in.read(reinterpret_cast<char*>(&cols), sizeof cols);
    if (!in) throw InputError(path.string() + ": truncated score matrix");
    ScoreMatrix m;
    m.rows = rows;
    m.cols = cols;
    m.values.resize(rows * cols);
    in.read(reinterpret_cast<char*>(m.values.data()), static_cast<std::streamsize>(m.values.size() * sizeof(double)));
    if (!in) throw InputError(path.string() + ": truncated score matrix");
    return m;
}

LossAndGrad in_batch_loss(const DualEncoder& net, std::span<const IdPair> batch) {
    const std::size_t b = batch.size();
    if (b < 2) throw InputError("in-batch training needs at least two pairs per batch");
    const std::size_t d = net.shape().d_emb;

    std::vector<Encoding> ctx, doc;
    ctx.reserve(b);
    doc.reserve(b);
    for (const auto& p : batch) {
        ctx.push_back(encode(net, p.context_ids, Tower::Context));
        doc.push_back(encode(net, p.doc_ids, Tower::Document));
    }

    LossAndGrad out;
    out.grad.assign(net.param_count(), 0.0);
    std::vector<std::vector<double>> d_ctx(b, std::vector<double>(d, 0.0));
    std::vector<std::vector<double>> d_doc(b, std::vector<double>(d, 0.0));
    std::vector<double> row(b);
    const double inv_b = 1.0 / static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < b; ++j) row[j] = dot(ctx[i].output, doc[j].output);
        const double mx = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (double s : row) z += std::exp(s - mx);
        const double lse = mx + std::log(z);
        out.loss += (lse - row[i]) * inv_b;
        for (std::size_t j = 0; j < b; ++j) {
            const double g = (std::exp(row[j] - lse) - (i == j ? 1.0 : 0.0)) * inv_b;
            for (std::size_t k = 0; k < d; ++k) {
                d_ctx[i][k] += g * doc[j].output[k];
                d_doc[j][k] += g * ctx[i].output[k];
            }
        }
    }
    if (!std::isfinite(out.loss)) throw ComputeError("in-batch loss is not finite");
    for (std::size_t i = 0; i < b; ++i) {
        backward(net, ctx[i], Tower::Context, d_ctx[i], out.grad);
        backward(net, doc[i], Tower::Document, d_doc[i], out.grad);
    }
    return out;
}

DenseScorer train_in_batch(const DenseScorer& initial, std::span<const SearchContext> positives,
                           const DocumentTable& docs, const InBatchConfig& config,
                           const std::function<void(std::size_t, double)>& on_epoch) {
    if (config.batch_size < 2) throw InputError("in-batch training: batch_size must be >= 2");
    if (!(config.learning_rate > 0.0)) throw InputError("in-batch training: learning rate must be > 0");
    if (positives.size() < 2) throw InputError("in-batch training: need at least two positive pairs");

    DenseScorer scorer = initial;
    std::vector<IdPair> pairs;
    pairs.reserve(positives.size());
    for (const auto& c : positives)
        pairs.push_back({scorer.vocab().to_ids(c.context_tokens),
                         scorer.vocab().to_ids(docs.at(c.positive_doc_id).title_tokens)});

    std::vector<IdPair> batch;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        auto rng = Rng::substream(config.seed, "dense-shuffle", epoch);
        const auto order = rng.sample_without_replacement(pairs.size(), pairs.size());
        double total = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start + 1 < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            batch.clear();
            for (std::size_t i = start; i < end; ++i) batch.push_back(pairs[order[i]]);
            auto lg = in_batch_loss(scorer.net(), batch);
            auto params = scorer.net().params();
            for (std::size_t i = 0; i < params.size(); ++i) params[i] -= config.learning_rate * lg.grad[i];
            total += lg.loss;
            ++n_batches;
        }
        if (on_epoch) on_epoch(epoch, n_batches ? total / static_cast<double>(n_batches) : 0.0);
    }
    return scorer;
}

DenseScoreSource::DenseScoreSource(const DenseScorer& scorer, const DocumentTable& docs)
    : scorer_(scorer), docs_(docs), digest_(scorer.digest()) {
    doc_vectors_.reserve(docs.size());
    for (const auto& d : docs.documents()) doc_vectors_.push_back(scorer.encode(d.title_tokens, Tower::Document));
}

double DenseScoreSource::score(const SearchContext& context, std::string_view doc_id) const {
    const auto idx = docs_.index_of(doc_id);
    if (!idx) throw InputError("dense scorer: unknown doc_id " + std::string(doc_id));
    const auto u = scorer_.encode(context.context_tokens, Tower::Context);
    return dot(u, doc_vectors_[*idx]);
}

std::vector<double> DenseScoreSource::score_corpus(const SearchContext& context) const {
    const auto u = scorer_.encode(context.context_tokens, Tower::Context);
    std::vector<double> out(doc_vectors_.size());
    for (std::size_t j = 0; j < doc_vectors_.size(); ++j) out[j] = dot(u, doc_vectors_[j]);
    return out;
}

}  // namespace dcl
