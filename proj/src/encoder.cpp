#include "dcl/encoder.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dcl/digest.hpp"
#include "dcl/error.hpp"

namespace dcl {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

Vocabulary::Vocabulary(std::vector<std::string> tokens) {
    std::erase(tokens, std::string(kSegmentSeparator));
    std::sort(tokens.begin(), tokens.end());
    tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
    tokens_ = std::move(tokens);
    ids_.reserve(tokens_.size());
    for (std::size_t i = 0; i < tokens_.size(); ++i)
        ids_.emplace(tokens_[i], static_cast<std::uint32_t>(kReserved + i));
}

std::uint32_t Vocabulary::id(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    return it == ids_.end() ? kUnknownId : it->second;
}

std::vector<std::uint32_t> Vocabulary::to_ids(std::span<const std::string> tokens) const {
    std::vector<std::uint32_t> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens)
        if (t != kSegmentSeparator) ids.push_back(id(t));
    return ids;
}

namespace {

std::size_t tower_size(const EncoderShape& s) { return 2 * s.hidden * s.d_emb + s.hidden + s.d_emb; }

}  // namespace

DualEncoder::DualEncoder(EncoderShape shape)
    : shape_(shape), params_(shape.vocab_size * shape.d_emb + 2 * tower_size(shape), 0.0) {
    if (shape.vocab_size < Vocabulary::kReserved || shape.d_emb == 0 || shape.hidden == 0)
        throw InputError("encoder: dimensions must be positive");
}

DualEncoder DualEncoder::random(EncoderShape shape, Rng& rng, double embedding_std) {
    DualEncoder net(shape);
    auto p = net.params();
    const std::size_t emb = shape.vocab_size * shape.d_emb;
    for (std::size_t i = 0; i < emb; ++i) p[i] = rng.normal(0.0, embedding_std);
    for (Tower t : {Tower::Context, Tower::Document}) {
        const auto v = net.tower_offsets(t);
        const double s1 = 1.0 / std::sqrt(static_cast<double>(shape.d_emb));
        const double s2 = 1.0 / std::sqrt(static_cast<double>(shape.hidden));
        for (std::size_t i = 0; i < shape.hidden * shape.d_emb; ++i) p[v.w1 + i] = rng.normal(0.0, s1);
        for (std::size_t i = 0; i < shape.d_emb * shape.hidden; ++i) p[v.w2 + i] = rng.normal(0.0, s2);
    }
    return net;
}

std::span<const double> DualEncoder::embedding(std::uint32_t id) const {
    return std::span<const double>(params_).subspan(static_cast<std::size_t>(id) * shape_.d_emb, shape_.d_emb);
}

DualEncoder::TowerView DualEncoder::tower_offsets(Tower tower) const {
    const auto& s = shape_;
    std::size_t base = s.vocab_size * s.d_emb;
    if (tower == Tower::Document) base += tower_size(s);
    const std::size_t w1 = base;
    const std::size_t b1 = w1 + s.hidden * s.d_emb;
    const std::size_t w2 = b1 + s.hidden;
    const std::size_t b2 = w2 + s.d_emb * s.hidden;
    return {w1, b1, w2, b2};
}

Encoding encode(const DualEncoder& net, std::span<const std::uint32_t> ids, Tower tower) {
    const auto& s = net.shape();
    const auto p = net.params();
    Encoding enc;
    if (ids.empty()) {
        enc.ids.push_back(Vocabulary::kEmptyId);
    } else {
        enc.ids.assign(ids.begin(), ids.end());
    }
    enc.pooled.assign(s.d_emb, 0.0);
    for (auto id : enc.ids) {
        if (id >= s.vocab_size) throw InputError("encoder: token id out of range");
        const auto e = net.embedding(id);
        for (std::size_t k = 0; k < s.d_emb; ++k) enc.pooled[k] += e[k];
    }
    const double inv_n = 1.0 / static_cast<double>(enc.ids.size());
    for (auto& x : enc.pooled) x *= inv_n;

    const auto v = net.tower_offsets(tower);
    enc.hidden.resize(s.hidden);
    for (std::size_t j = 0; j < s.hidden; ++j) {
        double a = p[v.b1 + j];
        const double* row = &p[v.w1 + j * s.d_emb];
        for (std::size_t k = 0; k < s.d_emb; ++k) a += row[k] * enc.pooled[k];
        enc.hidden[j] = std::tanh(a);
    }
    enc.output.resize(s.d_emb);
    for (std::size_t i = 0; i < s.d_emb; ++i) {
        double o = p[v.b2 + i];
        const double* row = &p[v.w2 + i * s.hidden];
        for (std::size_t j = 0; j < s.hidden; ++j) o += row[j] * enc.hidden[j];
        enc.output[i] = o;
    }
    return enc;
}

void backward(const DualEncoder& net, const Encoding& enc, Tower tower, std::span<const double> d_output,
              std::span<double> grad) {
    const auto& s = net.shape();
    const auto p = net.params();
    const auto v = net.tower_offsets(tower);

    std::vector<double> d_act(s.hidden, 0.0);
    for (std::size_t i = 0; i < s.d_emb; ++i) {
        const double g = d_output[i];
        if (g == 0.0) continue;
        grad[v.b2 + i] += g;
        const double* row = &p[v.w2 + i * s.hidden];
        double* grow = &grad[v.w2 + i * s.hidden];
        for (std::size_t j = 0; j < s.hidden; ++j) {
            grow[j] += g * enc.hidden[j];
            d_act[j] += row[j] * g;
        }
    }
    std::vector<double> d_pooled(s.d_emb, 0.0);
    for (std::size_t j = 0; j < s.hidden; ++j) {
        const double da = d_act[j] * (1.0 - enc.hidden[j] * enc.hidden[j]);
        if (da == 0.0) continue;
        grad[v.b1 + j] += da;
        const double* row = &p[v.w1 + j * s.d_emb];
        double* grow = &grad[v.w1 + j * s.d_emb];
        for (std::size_t k = 0; k < s.d_emb; ++k) {
            grow[k] += da * enc.pooled[k];
            d_pooled[k] += row[k] * da;
        }
    }
    const double inv_n = 1.0 / static_cast<double>(enc.ids.size());
    for (auto id : enc.ids) {
        double* g = &grad[static_cast<std::size_t>(id) * s.d_emb];
        for (std::size_t k = 0; k < s.d_emb; ++k) g[k] += d_pooled[k] * inv_n;
    }
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

namespace {

constexpr char kMagic[8] = {'D', 'C', 'L', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

class Writer {
public:
    explicit Writer(std::ostream& out) : out_(out) {}
    template <typename T>
    void pod(const T& v) {
        out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
    }
    void bytes(std::string_view s) { out_.write(s.data(), static_cast<std::streamsize>(s.size())); }
    void doubles(std::span<const double> v) {
        pod<std::uint64_t>(v.size());
        out_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size_bytes()));
    }

private:
    std::ostream& out_;
};

class Reader {
public:
    Reader(std::istream& in, std::string name) : in_(in), name_(std::move(name)) {}
    template <typename T>
    T pod() {
        T v{};
        in_.read(reinterpret_cast<char*>(&v), sizeof(T));
        check();
        return v;
    }
    std::string bytes(std::size_t n) {
        std::string s(n, '\0');
        in_.read(s.data(), static_cast<std::streamsize>(n));
        check();
        return s;
    }
    std::vector<double> doubles(std::size_t max_count) {
        const auto n = pod<std::uint64_t>();
        if (n > max_count) throw InputError(name_ + ": implausible array length");
        std::vector<double> v(n);
        in_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
        check();
        return v;
    }

private:
    void check() {
        if (!in_) throw InputError(name_ + ": truncated checkpoint");
    }
    std::istream& in_;
    std::string name_;
};

void write_body(std::ostream& out, const Checkpoint& ckpt) {
    Writer w(out);
    w.bytes(std::string_view(kMagic, sizeof kMagic));
    w.pod(kCheckpointVersion);
    w.pod(static_cast<std::uint32_t>(ckpt.kind));
    const auto& s = ckpt.net.shape();
    w.pod<std::uint64_t>(s.vocab_size);
    w.pod<std::uint64_t>(s.d_emb);
    w.pod<std::uint64_t>(s.hidden);
    w.pod(ckpt.temperature);
    w.pod<std::uint64_t>(ckpt.vocab.tokens().size());
    for (const auto& t : ckpt.vocab.tokens()) {
        w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.size()));
        w.bytes(t);
    }
    w.doubles(ckpt.net.params());
    w.pod<std::uint8_t>(ckpt.optimizer ? 1 : 0);
    if (ckpt.optimizer) {
        w.pod<std::uint64_t>(ckpt.optimizer->step);
        w.doubles(ckpt.optimizer->velocity);
    }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    if (ckpt.vocab.size() != ckpt.net.shape().vocab_size)
        throw InputError("checkpoint: vocabulary size does not match encoder dims");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    write_body(out, ckpt);
    if (!out) throw InputError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<ModelKind> expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open checkpoint " + path.string());
    Reader r(in, path.string());
    if (r.bytes(sizeof kMagic) != std::string_view(kMagic, sizeof kMagic))
        throw InputError(path.string() + ": not a checkpoint (bad magic)");
    const auto version = r.pod<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw InputError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    Checkpoint ckpt;
    const auto kind = r.pod<std::uint32_t>();
    if (kind != 1 && kind != 2) throw InputError(path.string() + ": unknown model kind");
    ckpt.kind = static_cast<ModelKind>(kind);
    if (expected && *expected != ckpt.kind)
        throw InputError(path.string() + ": checkpoint holds the wrong model kind");
    EncoderShape shape;
    shape.vocab_size = r.pod<std::uint64_t>();
    shape.d_emb = r.pod<std::uint64_t>();
    shape.hidden = r.pod<std::uint64_t>();
    ckpt.temperature = r.pod<double>();
    const auto n_tokens = r.pod<std::uint64_t>();
    if (n_tokens + Vocabulary::kReserved != shape.vocab_size)
        throw InputError(path.string() + ": vocabulary size does not match dims header");
    std::vector<std::string> tokens;
    tokens.reserve(n_tokens);
    for (std::uint64_t i = 0; i < n_tokens; ++i) tokens.push_back(r.bytes(r.pod<std::uint32_t>()));
    ckpt.vocab = Vocabulary(std::move(tokens));
    if (ckpt.vocab.size() != shape.vocab_size)
        throw InputError(path.string() + ": vocabulary has duplicates");
    ckpt.net = DualEncoder(shape);
    auto params = r.doubles(ckpt.net.param_count());
    if (params.size() != ckpt.net.param_count()) throw InputError(path.string() + ": parameter count mismatch");
    std::copy(params.begin(), params.end(), ckpt.net.params().begin());
    if (r.pod<std::uint8_t>() == 1) {
        OptimizerState st;
        st.step = r.pod<std::uint64_t>();
        st.velocity = r.doubles(ckpt.net.param_count());
        if (!st.velocity.empty() && st.velocity.size() != ckpt.net.param_count())
            throw InputError(path.string() + ": optimizer state size mismatch");
        ckpt.optimizer = std::move(st);
    }
    return ckpt;
}

std::string model_digest(const Vocabulary& vocab, const DualEncoder& net) {
    std::ostringstream os;
    Checkpoint c{ModelKind::Ranker, vocab, net, 1.0, std::nullopt};
    write_body(os, c);
    return sha256_hex(os.str());
}

}  // namespace dcl
