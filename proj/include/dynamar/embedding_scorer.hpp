#pragma once

#include "dynamar/encoder.hpp"
#include "dynamar/templating.hpp"
#include "dynamar/tokenizer.hpp"

#include <string>
#include <vector>

namespace dynamar {

/// Dissimilarity from encoder geometry: render both templates around a
/// fixed probe document, mean-pool the final hidden states over non-PAD
/// positions, and map cosine similarity into [0,1] via (1 - cos) / 2.
class EmbeddingScorer final : public DissimilarityScorer {
public:
    EmbeddingScorer(const Model& model, const Vocab& vocab, std::vector<std::string> probe_docs, int max_len);

    double score(const PromptTemplate& a, const PromptTemplate& b) const override;
    std::string kind() const override { return "embedding"; }

private:
    std::vector<double> pooled_embedding(const PromptTemplate& t) const;

    const Model* model_;
    const Vocab* vocab_;
    std::vector<TokenSeq> probe_tokens_;
    int max_len_;
};

} // namespace dynamar
