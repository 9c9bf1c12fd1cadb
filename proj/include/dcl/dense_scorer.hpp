#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dcl/bm25.hpp"
#include "dcl/encoder.hpp"
#include "dcl/score_source.hpp"

namespace dcl {

/// Row-major |contexts| x |documents| score table.
struct ScoreMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
    bool operator==(const ScoreMatrix&) const = default;
};

/// Binary cache: magic "DCLSMAT\0", u32 version, both key digests as
/// length-prefixed strings, u64 rows, u64 cols, f64 values.
void save_score_matrix(const std::filesystem::path& path, const ScoreMatrix& m, const std::string& params_digest,
                       const std::string& corpus_digest);
/// Throws InputError if the stored keys differ from the expected ones.
ScoreMatrix load_score_matrix(const std::filesystem::path& path, const std::string& params_digest,
                              const std::string& corpus_digest);

/// Dot-product dual encoder over search contexts and document titles.
class DenseScorer {
public:
    DenseScorer() = default;
    DenseScorer(Vocabulary vocab, DualEncoder net);
    DenseScorer(const DenseScorer& other) : vocab_(other.vocab_), net_(other.net_) {}
    DenseScorer& operator=(const DenseScorer& other) {
        vocab_ = other.vocab_;
        net_ = other.net_;
        return *this;
    }

    static DenseScorer initialize(Vocabulary vocab, std::size_t d_emb, std::size_t hidden, Rng& rng);

    const Vocabulary& vocab() const { return vocab_; }
    const DualEncoder& net() const { return net_; }
    DualEncoder& net() { return net_; }

    std::vector<double> encode(std::span<const std::string> tokens, Tower tower) const;
    double score(const SearchContext& context, const Document& doc) const;

    /// Each input is encoded exactly once.
    ScoreMatrix score_all(std::span<const SearchContext> contexts, std::span<const Document> docs) const;

    std::size_t encode_calls() const { return encode_calls_.load(); }
    void reset_encode_calls() const { encode_calls_ = 0; }

    std::string digest() const { return model_digest(vocab_, net_); }

private:
    Vocabulary vocab_;
    DualEncoder net_;
    mutable std::atomic<std::size_t> encode_calls_{0};
};

double dense_score(const DenseScorer& scorer, const SearchContext& context, const Document& doc);

/// One (context, positive document) training example as vocabulary ids.
struct IdPair {
    std::vector<std::uint32_t> context_ids;
    std::vector<std::uint32_t> doc_ids;
};

struct LossAndGrad {
    double loss = 0.0;
    std::vector<double> grad;  // same layout as DualEncoder::params()
};

/// Mean over rows of the softmax cross-entropy where row i's own document
/// is the positive and the other batch documents are its negatives.
/// Throws InputError for fewer than two pairs.
LossAndGrad in_batch_loss(const DualEncoder& net, std::span<const IdPair> batch);

struct InBatchConfig {
    std::size_t batch_size = 32;
    std::size_t epochs = 20;
    double learning_rate = 0.5;
    std::uint64_t seed = 0;
};

/// Plain SGD on in_batch_loss over shuffled mini-batches; returns the
/// updated scorer. `on_epoch(epoch, mean_loss)` is called after each epoch.
/// A trailing batch with one pair is dropped.
DenseScorer train_in_batch(const DenseScorer& initial, std::span<const SearchContext> positives,
                           const DocumentTable& docs, const InBatchConfig& config,
                           const std::function<void(std::size_t, double)>& on_epoch = {});

/// M(C, d) backed by a frozen dense scorer; document encodings are
/// computed once at construction.
class DenseScoreSource final : public ScoreSource {
public:
    DenseScoreSource(const DenseScorer& scorer, const DocumentTable& docs);

    double score(const SearchContext& context, std::string_view doc_id) const override;
    std::vector<double> score_corpus(const SearchContext& context) const override;
    std::string name() const override { return "dense"; }
    std::string digest() const override { return digest_; }

private:
    const DenseScorer& scorer_;
    const DocumentTable& docs_;
    std::vector<std::vector<double>> doc_vectors_;
    std::string digest_;
};

}  // namespace dcl
