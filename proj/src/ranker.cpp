#include "dcl/ranker.hpp"

#include <algorithm>
#include <cmath>

#include "dcl/error.hpp"

namespace dcl {

RankerParams RankerParams::zeros(Vocabulary vocab, std::size_t d_emb, std::size_t hidden, double temperature) {
    if (!(temperature > 0.0)) throw InputError("ranker: temperature must be > 0");
    EncoderShape shape{vocab.size(), d_emb, hidden};
    return RankerParams{std::move(vocab), DualEncoder(shape), temperature};
}

RankerParams RankerParams::random(Vocabulary vocab, std::size_t d_emb, std::size_t hidden, double temperature,
                                  Rng& rng) {
    if (!(temperature > 0.0)) throw InputError("ranker: temperature must be > 0");
    EncoderShape shape{vocab.size(), d_emb, hidden};
    return RankerParams{std::move(vocab), DualEncoder::random(shape, rng), temperature};
}

std::string RankerParams::digest() const { return model_digest(vocab, net); }

Checkpoint to_checkpoint(const RankerParams& params, std::optional<OptimizerState> state) {
    return Checkpoint{ModelKind::Ranker, params.vocab, params.net, params.temperature, std::move(state)};
}

RankerParams from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.kind != ModelKind::Ranker) throw InputError("checkpoint does not hold a ranker");
    if (!(ckpt.temperature > 0.0)) throw InputError("checkpoint: temperature must be > 0");
    return RankerParams{ckpt.vocab, ckpt.net, ckpt.temperature};
}

double rank_score(const RankerParams& params, std::span<const std::string> context_tokens, const Document& doc) {
    const auto u = encode(params.net, params.vocab.to_ids(context_tokens), Tower::Context);
    const auto v = encode(params.net, params.vocab.to_ids(doc.title_tokens), Tower::Document);
    return dot(u.output, v.output) / params.temperature;
}

double rank_score(const RankerParams& params, const SearchContext& context, const Document& doc) {
    return rank_score(params, context.context_tokens, doc);
}

double listwise_loss(std::span<const double> scores) {
    const double mx = *std::max_element(scores.begin(), scores.end());
    double z = 0.0;
    for (double s : scores) z += std::exp(s - mx);
    return (mx - scores[0]) + std::log(z);
}

LossReport listwise_loss_and_grad(const DualEncoder& net, double temperature, std::span<const IdSlate> slates) {
    LossReport report;
    report.grad.assign(net.param_count(), 0.0);
    if (slates.empty()) return report;
    const std::size_t d = net.shape().d_emb;
    const double inv_items = 1.0 / static_cast<double>(slates.size());
    const double inv_t = 1.0 / temperature;

    std::vector<Encoding> docs;
    std::vector<double> scores, d_ctx(d), d_doc(d);
    for (const auto& slate : slates) {
        const auto ctx = encode(net, slate.context_ids, Tower::Context);
        docs.clear();
        scores.clear();
        for (const auto& cand : slate.candidates) {
            docs.push_back(encode(net, cand, Tower::Document));
            scores.push_back(dot(ctx.output, docs.back().output) * inv_t);
        }
        for (double s : scores)
            if (!std::isfinite(s)) throw ComputeError("ranker: non-finite score");
        const double mx = *std::max_element(scores.begin(), scores.end());
        double z = 0.0;
        for (double s : scores) z += std::exp(s - mx);
        const double lse = mx + std::log(z);
        report.loss += (lse - scores[0]) * inv_items;

        std::size_t higher = 0;
        for (std::size_t j = 1; j < scores.size(); ++j)
            if (scores[j] > scores[0]) ++higher;
        report.positive_ranks.push_back(higher + 1);

        std::fill(d_ctx.begin(), d_ctx.end(), 0.0);
        for (std::size_t j = 0; j < docs.size(); ++j) {
            const double g = (std::exp(scores[j] - lse) - (j == 0 ? 1.0 : 0.0)) * inv_items * inv_t;
            for (std::size_t k = 0; k < d; ++k) {
                d_ctx[k] += g * docs[j].output[k];
                d_doc[k] = g * ctx.output[k];
            }
            backward(net, docs[j], Tower::Document, d_doc, report.grad);
        }
        backward(net, ctx, Tower::Context, d_ctx, report.grad);
    }
    if (!std::isfinite(report.loss)) throw ComputeError("ranker: non-finite loss");
    return report;
}

LossReport loss_and_grad(const RankerParams& params, const TrainingBatch& batch,
                         std::span<const SearchContext> contexts, const DocumentTable& docs) {
    std::vector<IdSlate> slates;
    slates.reserve(batch.items.size());
    for (const auto& item : batch.items) {
        if (!batch.items.empty() && item.negatives.size() != batch.items.front().negatives.size())
            throw InputError("ranker: batch items carry different negative counts");
        IdSlate s;
        s.context_ids = params.vocab.to_ids(contexts[item.context].context_tokens);
        s.candidates.push_back(params.vocab.to_ids(docs.at(item.positive_doc_id).title_tokens));
        for (const auto& n : item.negatives) s.candidates.push_back(params.vocab.to_ids(docs.at(n).title_tokens));
        slates.push_back(std::move(s));
    }
    return listwise_loss_and_grad(params.net, params.temperature, slates);
}

std::vector<ScoredDoc> rank_slate(const RankerParams& params, std::span<const std::string> context_tokens,
                                  std::span<const std::string> candidate_doc_ids, const DocumentTable& docs) {
    const auto u = encode(params.net, params.vocab.to_ids(context_tokens), Tower::Context);
    std::vector<ScoredDoc> out;
    out.reserve(candidate_doc_ids.size());
    for (const auto& id : candidate_doc_ids) {
        const auto v = encode(params.net, params.vocab.to_ids(docs.at(id).title_tokens), Tower::Document);
        out.push_back({id, dot(u.output, v.output) / params.temperature});
    }
    std::sort(out.begin(), out.end(), [](const ScoredDoc& a, const ScoredDoc& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.doc_id < b.doc_id;
    });
    return out;
}

}  // namespace dcl
