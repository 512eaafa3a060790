#include "dynamar/templating.hpp"

#include "dynamar/error.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

namespace dynamar {

namespace {

struct Marker {
    std::size_t pos;
    std::size_t len;
    TemplateSegment segment;
};

// Earliest of "{x}", "{x1}", "{x2}", "[MASK]" at or after `from`.
std::optional<Marker> next_marker(const std::string& s, std::size_t from) {
    struct Pattern {
        const char* text;
        TemplateSegment seg;
    };
    static const Pattern patterns[] = {
        {"{x}", {TemplateSegment::Kind::Slot, "", 0}},
        {"{x1}", {TemplateSegment::Kind::Slot, "", 0}},
        {"{x2}", {TemplateSegment::Kind::Slot, "", 1}},
        {"[MASK]", {TemplateSegment::Kind::Mask, "", 0}},
    };
    std::optional<Marker> best;
    for (const auto& p : patterns) {
        const std::size_t pos = s.find(p.text, from);
        if (pos == std::string::npos) continue;
        if (!best || pos < best->pos) best = Marker{pos, std::string(p.text).size(), p.seg};
    }
    return best;
}

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::istringstream in(text);
    std::string w;
    while (in >> w) words.push_back(w);
    return words;
}

} // namespace

PromptTemplate PromptTemplate::parse(const std::string& spec) {
    if (spec.empty()) fail(Errc::BadSlots, "empty template");

    PromptTemplate tmpl;
    tmpl.spec_ = spec;

    int mask_count = 0;
    int x_count = 0, x1_count = 0, x2_count = 0;
    std::size_t at = 0;
    while (at < spec.size()) {
        const auto marker = next_marker(spec, at);
        const std::size_t lit_end = marker ? marker->pos : spec.size();
        if (lit_end > at)
            tmpl.segments_.push_back({TemplateSegment::Kind::Literal, spec.substr(at, lit_end - at), 0});
        if (!marker) break;
        const std::string raw = spec.substr(marker->pos, marker->len);
        if (marker->segment.kind == TemplateSegment::Kind::Mask) {
            ++mask_count;
        } else {
            if (raw == "{x}") ++x_count;
            if (raw == "{x1}") ++x1_count;
            if (raw == "{x2}") ++x2_count;
        }
        tmpl.segments_.push_back(marker->segment);
        at = marker->pos + marker->len;
    }

    if (mask_count == 0) fail(Errc::NoMask, "template has no [MASK]: " + spec);
    if (mask_count > 1) fail(Errc::MultipleMasks, "template has multiple [MASK]: " + spec);

    const bool single = x_count == 1 && x1_count == 0 && x2_count == 0;
    const bool pairwise = x_count == 0 && x1_count == 1 && x2_count == 1;
    if (!single && !pairwise)
        fail(Errc::BadSlots, "slots must be exactly {x} or exactly {x1},{x2}: " + spec);
    tmpl.arity_ = single ? 1 : 2;
    return tmpl;
}

std::vector<std::string> PromptTemplate::literal_words() const {
    std::set<std::string> seen;
    std::vector<std::string> words;
    for (const auto& seg : segments_) {
        if (seg.kind != TemplateSegment::Kind::Literal) continue;
        for (auto& w : split_words(seg.text))
            if (seen.insert(w).second) words.push_back(std::move(w));
    }
    return words;
}

PromptPool::PromptPool(std::vector<PromptTemplate> ts) : templates(std::move(ts)) {
    if (templates.empty()) fail(Errc::NotEnoughCandidates, "pool must be non-empty");
    for (const auto& t : templates)
        if (t.arity() != templates.front().arity())
            fail(Errc::ArityMismatch, "pool templates must share one arity");
}

std::vector<TokenSeq> truncate_documents(const std::vector<TokenSeq>& doc_tokens, long budget) {
    if (budget < 0) fail(Errc::InvalidParams, "budget must be non-negative");
    long total = 0;
    for (const auto& d : doc_tokens) total += static_cast<long>(d.size());
    if (total <= budget) return doc_tokens;

    const std::size_t n = doc_tokens.size();
    std::vector<long> base(n), rem(n);
    long assigned = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const long len = static_cast<long>(doc_tokens[i].size());
        base[i] = budget * len / total;
        rem[i] = budget * len % total;
        assigned += base[i];
    }
    long leftover = budget - assigned;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
    for (std::size_t i = 0; i < n && leftover > 0; ++i) {
        if (rem[order[i]] == 0) break;
        ++base[order[i]];
        --leftover;
    }

    std::vector<TokenSeq> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i].ids.assign(doc_tokens[i].ids.begin(), doc_tokens[i].ids.begin() + base[i]);
    }
    return out;
}

EncodedInput render(const PromptTemplate& tmpl, const std::vector<TokenSeq>& docs, int max_len, const Vocab& vocab) {
    if (static_cast<int>(docs.size()) != tmpl.arity())
        fail(Errc::ArityMismatch, "template arity " + std::to_string(tmpl.arity()) + " given " +
                                      std::to_string(docs.size()) + " documents");

    std::vector<TokenSeq> literal_ids;
    long literal_total = 0;
    for (const auto& seg : tmpl.segments()) {
        if (seg.kind == TemplateSegment::Kind::Literal) {
            literal_ids.push_back(vocab.encode(seg.text));
            literal_total += static_cast<long>(literal_ids.back().size());
        }
    }
    const long overhead = 1 /*CLS*/ + 1 /*SEP*/ + 1 /*MASK*/ + literal_total;
    if (overhead > max_len)
        fail(Errc::TemplateTooLong, "template overhead " + std::to_string(overhead) + " exceeds max_len " +
                                        std::to_string(max_len));

    const auto truncated = truncate_documents(docs, max_len - overhead);

    EncodedInput out;
    out.ids.reserve(static_cast<std::size_t>(max_len));
    out.ids.push_back(kClsId);
    std::size_t literal_at = 0;
    for (const auto& seg : tmpl.segments()) {
        switch (seg.kind) {
        case TemplateSegment::Kind::Literal: {
            const auto& ids = literal_ids[literal_at++].ids;
            out.ids.insert(out.ids.end(), ids.begin(), ids.end());
            break;
        }
        case TemplateSegment::Kind::Slot: {
            const auto& ids = truncated[static_cast<std::size_t>(seg.slot)].ids;
            out.ids.insert(out.ids.end(), ids.begin(), ids.end());
            break;
        }
        case TemplateSegment::Kind::Mask:
            out.mask_index = static_cast<int>(out.ids.size());
            out.ids.push_back(kMaskId);
            break;
        }
    }
    out.ids.push_back(kSepId);
    out.attention_length = static_cast<int>(out.ids.size());
    out.ids.resize(static_cast<std::size_t>(max_len), kPadId);
    return out;
}

double jaccard_dissimilarity(const PromptTemplate& a, const PromptTemplate& b) {
    if (a.arity() != b.arity()) fail(Errc::ArityMismatch, "templates differ in arity");
    const auto wa = a.literal_words();
    const auto wb = b.literal_words();
    const std::set<std::string> sa(wa.begin(), wa.end());
    const std::set<std::string> sb(wb.begin(), wb.end());
    std::size_t inter = 0;
    for (const auto& w : sa) inter += sb.count(w);
    const std::size_t uni = sa.size() + sb.size() - inter;
    if (uni == 0) return 0.0; // both literal-free: identical as far as words go
    return 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
}

double JaccardScorer::score(const PromptTemplate& a, const PromptTemplate& b) const {
    return jaccard_dissimilarity(a, b);
}

PromptPool select_pool(const std::vector<PromptTemplate>& candidates, std::size_t k, const DissimilarityScorer& scorer,
                       std::optional<double> min_dissimilarity) {
    if (candidates.empty()) fail(Errc::NotEnoughCandidates, "no candidates");
    for (const auto& c : candidates)
        if (c.arity() != candidates.front().arity())
            fail(Errc::ArityMismatch, "candidates must share one arity");

    // Optional pre-filter: keep a candidate only if it is at least the
    // threshold away from every candidate kept before it.
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (min_dissimilarity) {
            bool too_close = false;
            for (std::size_t j : eligible) {
                if (scorer.score(candidates[i], candidates[j]) < *min_dissimilarity) {
                    too_close = true;
                    break;
                }
            }
            if (too_close) continue;
        }
        eligible.push_back(i);
    }

    if (eligible.size() < k)
        fail(Errc::NotEnoughCandidates, "need " + std::to_string(k) + " templates, have " +
                                            std::to_string(eligible.size()) + " eligible candidates");

    std::vector<std::size_t> selected{eligible.front()};
    std::vector<bool> taken(candidates.size(), false);
    taken[eligible.front()] = true;

    while (selected.size() < k) {
        double best_min = -1.0;
        std::size_t best_idx = 0;
        for (std::size_t i : eligible) {
            if (taken[i]) continue;
            double min_d = std::numeric_limits<double>::infinity();
            for (std::size_t s : selected) min_d = std::min(min_d, scorer.score(candidates[i], candidates[s]));
            if (min_d > best_min) {
                best_min = min_d;
                best_idx = i;
            }
        }
        taken[best_idx] = true;
        selected.push_back(best_idx);
    }

    std::vector<PromptTemplate> pool;
    pool.reserve(k);
    for (std::size_t i : selected) pool.push_back(candidates[i]);
    return PromptPool(std::move(pool));
}

std::size_t sample_template(const PromptPool& pool, Rng& rng) {
    return static_cast<std::size_t>(rand_below(rng, pool.size()));
}

std::size_t select_best_index(std::size_t pool_size, const std::function<double(std::size_t)>& evaluate,
                              bool higher_is_better) {
    if (pool_size == 0) fail(Errc::NotEnoughCandidates, "empty pool");
    if (pool_size == 1) return 0;
    std::size_t best = 0;
    double best_value = evaluate(0);
    for (std::size_t i = 1; i < pool_size; ++i) {
        const double v = evaluate(i);
        if (higher_is_better ? v > best_value : v < best_value) {
            best = i;
            best_value = v;
        }
    }
    return best;
}

} // namespace dynamar
