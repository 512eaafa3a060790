#include "dynamar/embedding_scorer.hpp"

#include "dynamar/error.hpp"

#include <algorithm>
#include <cmath>

namespace dynamar {

EmbeddingScorer::EmbeddingScorer(const Model& model, const Vocab& vocab, std::vector<std::string> probe_docs,
                                 int max_len)
    : model_(&model), vocab_(&vocab), max_len_(max_len) {
    if (probe_docs.empty() || probe_docs.size() > 2) fail(Errc::InvalidParams, "probe must be 1 or 2 documents");
    for (const auto& doc : probe_docs) probe_tokens_.push_back(vocab.encode(doc));
}

std::vector<double> EmbeddingScorer::pooled_embedding(const PromptTemplate& t) const {
    if (t.arity() != static_cast<int>(probe_tokens_.size()))
        fail(Errc::ArityMismatch, "probe arity does not match template");
    const EncodedInput input = render(t, probe_tokens_, max_len_, *vocab_);
    const HiddenStates hidden = forward(*model_, {input});
    const Tensor pooled = extract_representation(hidden, ReprKind::MeanPool);
    return {pooled.v.begin(), pooled.v.end()};
}

double EmbeddingScorer::score(const PromptTemplate& a, const PromptTemplate& b) const {
    if (a.arity() != b.arity()) fail(Errc::ArityMismatch, "templates differ in arity");
    if (a == b) return 0.0;
    const auto va = pooled_embedding(a);
    const auto vb = pooled_embedding(b);
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < va.size(); ++i) {
        dot += va[i] * vb[i];
        na += va[i] * va[i];
        nb += vb[i] * vb[i];
    }
    const double denom = std::sqrt(na) * std::sqrt(nb);
    if (denom == 0.0) return 0.0;
    const double cosine = dot / denom;
    return std::clamp((1.0 - cosine) / 2.0, 0.0, 1.0);
}

} // namespace dynamar
