#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dcl/rng.hpp"
#include "dcl/session_store.hpp"

namespace dcl {

/// Token -> id map. Ids 0 and 1 are reserved for unknown tokens and for
/// the empty input; segment separators are dropped before lookup.
class Vocabulary {
public:
    static constexpr std::uint32_t kUnknownId = 0;
    static constexpr std::uint32_t kEmptyId = 1;
    static constexpr std::uint32_t kReserved = 2;

    Vocabulary() = default;
    /// Sorted unique tokens (separators and duplicates ignored).
    explicit Vocabulary(std::vector<std::string> tokens);

    std::size_t size() const { return kReserved + tokens_.size(); }
    std::uint32_t id(std::string_view token) const;
    std::vector<std::uint32_t> to_ids(std::span<const std::string> tokens) const;
    const std::vector<std::string>& tokens() const { return tokens_; }

    bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::uint32_t> ids_;
};

enum class Tower { Context, Document };

/// Small enough that learned structure outweighs the random start.
inline constexpr double kEmbeddingInitStd = 0.1;

struct EncoderShape {
    std::size_t vocab_size = Vocabulary::kReserved;
    std::size_t d_emb = 16;
    std::size_t hidden = 16;

    bool operator==(const EncoderShape&) const = default;
};

/// Shared embedding table plus a two-layer tanh tower per side, stored as
/// one flat parameter vector so that optimizers, checkpoints and gradient
/// checks all see the same layout:
///
///   E[vocab x d] | ctx: W1[h x d] b1[h] W2[d x h] b2[d] | doc: same
class DualEncoder {
public:
    DualEncoder() = default;
    explicit DualEncoder(EncoderShape shape);

    /// Gaussian init (std `embedding_std` for embeddings, 1/sqrt(fan_in)
    /// for weights, zero biases).
    static DualEncoder random(EncoderShape shape, Rng& rng, double embedding_std = kEmbeddingInitStd);

    const EncoderShape& shape() const { return shape_; }
    std::size_t param_count() const { return params_.size(); }
    std::span<double> params() { return params_; }
    std::span<const double> params() const { return params_; }

    std::span<const double> embedding(std::uint32_t id) const;

    struct TowerView {
        std::size_t w1, b1, w2, b2;  // offsets into the flat vector
    };
    TowerView tower_offsets(Tower tower) const;

    bool operator==(const DualEncoder& other) const = default;

private:
    EncoderShape shape_;
    std::vector<double> params_;
};

/// Forward-pass intermediates kept for the backward pass.
struct Encoding {
    std::vector<std::uint32_t> ids;  // pooled ids (kEmptyId for empty input)
    std::vector<double> pooled;      // mean embedding, d
    std::vector<double> hidden;      // tanh activations, h
    std::vector<double> output;      // d
};

Encoding encode(const DualEncoder& net, std::span<const std::uint32_t> ids, Tower tower);

/// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(output).
void backward(const DualEncoder& net, const Encoding& enc, Tower tower, std::span<const double> d_output,
              std::span<double> grad);

double dot(std::span<const double> a, std::span<const double> b);

enum class ModelKind : std::uint32_t { DenseScorer = 1, Ranker = 2 };

struct OptimizerState {
    std::uint64_t step = 0;
    std::vector<double> velocity;

    bool operator==(const OptimizerState&) const = default;
};

/// Versioned binary checkpoint: magic "DCLCKPT\0", u32 version, u32 kind,
/// u64 vocab/d/h dims, f64 temperature, vocabulary tokens, f64 params,
/// optional optimizer state. Integers and doubles are little-endian.
struct Checkpoint {
    ModelKind kind = ModelKind::Ranker;
    Vocabulary vocab;
    DualEncoder net;
    double temperature = 1.0;
    std::optional<OptimizerState> optimizer;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws InputError on bad magic, version, or truncated data. When
/// `expected` is set the kind tag must match.
Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<ModelKind> expected = std::nullopt);

/// Digest over dims, vocabulary and params.
std::string model_digest(const Vocabulary& vocab, const DualEncoder& net);

}  // namespace dcl
