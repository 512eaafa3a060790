#pragma once

#include "dynamar/rng.hpp"
#include "dynamar/tokenizer.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace dynamar {

/// One piece of a parsed template: literal text, a document slot, or the
/// mask placeholder.
struct TemplateSegment {
    enum class Kind { Literal, Slot, Mask };
    Kind kind = Kind::Literal;
    std::string text; // Literal only
    int slot = 0;     // Slot only: 0 for {x}/{x1}, 1 for {x2}

    bool operator==(const TemplateSegment&) const = default;
};

/// A prompt template with exactly one [MASK] and either a {x} slot or a
/// {x1},{x2} slot pair.
class PromptTemplate {
public:
    static PromptTemplate parse(const std::string& spec);

    int arity() const { return arity_; }
    const std::vector<TemplateSegment>& segments() const { return segments_; }
    const std::string& spec_string() const { return spec_; }

    /// Whitespace-separated words of all literal segments, deduplicated.
    std::vector<std::string> literal_words() const;

    bool operator==(const PromptTemplate& o) const { return segments_ == o.segments_; }

private:
    std::vector<TemplateSegment> segments_;
    int arity_ = 1;
    std::string spec_;
};

struct PromptPool {
    std::vector<PromptTemplate> templates;

    explicit PromptPool(std::vector<PromptTemplate> ts);
    std::size_t size() const { return templates.size(); }
    int arity() const { return templates.front().arity(); }
};

/// Token ids laid out for the encoder: CLS first, PAD only as a suffix,
/// at most one MASK.
struct EncodedInput {
    std::vector<TokenId> ids; // length == max_len
    std::optional<int> mask_index;
    int cls_index = 0;
    int attention_length = 0; // count of non-PAD tokens

    bool operator==(const EncodedInput&) const = default;
};

/// Shrink documents so their total length fits `budget`, splitting the
/// budget proportionally to original lengths with largest-remainder
/// rounding. Documents are cut at the tail.
std::vector<TokenSeq> truncate_documents(const std::vector<TokenSeq>& doc_tokens, long budget);

EncodedInput render(const PromptTemplate& tmpl, const std::vector<TokenSeq>& docs, int max_len, const Vocab& vocab);

double jaccard_dissimilarity(const PromptTemplate& a, const PromptTemplate& b);

class DissimilarityScorer {
public:
    virtual ~DissimilarityScorer() = default;
    virtual double score(const PromptTemplate& a, const PromptTemplate& b) const = 0;
    virtual std::string kind() const = 0;
};

class JaccardScorer final : public DissimilarityScorer {
public:
    double score(const PromptTemplate& a, const PromptTemplate& b) const override;
    std::string kind() const override { return "jaccard"; }
};

/// Greedy farthest-point selection of k templates. Seeds with
/// candidates[0]; each round adds the candidate whose minimum
/// dissimilarity to the selected set is largest (ties -> lowest index).
/// When `min_dissimilarity` is set, candidates closer than the threshold
/// to an earlier kept candidate are dropped before selection.
PromptPool select_pool(const std::vector<PromptTemplate>& candidates, std::size_t k, const DissimilarityScorer& scorer,
                       std::optional<double> min_dissimilarity = std::nullopt);

/// Uniform draw of a template index for one training example.
std::size_t sample_template(const PromptPool& pool, Rng& rng);

/// Index with the best evaluator value over 0..pool_size-1; ties -> lowest
/// index. Skips evaluation entirely for a single-template pool.
std::size_t select_best_index(std::size_t pool_size, const std::function<double(std::size_t)>& evaluate,
                              bool higher_is_better);

} // namespace dynamar
