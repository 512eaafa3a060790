#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dynamar/embedding_scorer.hpp"
#include "dynamar/error.hpp"
#include "dynamar/rng.hpp"
#include "dynamar/templating.hpp"
#include "dynamar/tokenizer.hpp"

#include <cmath>
#include <numeric>

using namespace dynamar;

namespace {

Errc thrown_code(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an Error");
    return Errc::IoError;
}

Vocab test_vocab() {
    return train_bpe({"red mug the price is big small they are same product and genre music  0123456789"}, 80);
}

TokenSeq seq_of_len(int n) {
    TokenSeq s;
    for (int i = 0; i < n; ++i) s.ids.push_back(static_cast<TokenId>(kNumSpecials + (i % 3)));
    return s;
}

// Independent largest-remainder allocator used as the truncation oracle.
std::vector<long> largest_remainder_oracle(const std::vector<long>& lengths, long budget) {
    const long total = std::accumulate(lengths.begin(), lengths.end(), 0L);
    if (total <= budget) return lengths;
    std::vector<long> base(lengths.size());
    std::vector<std::pair<long, std::size_t>> fracs; // (-remainder, index) for ascending sort
    long used = 0;
    for (std::size_t i = 0; i < lengths.size(); ++i) {
        base[i] = budget * lengths[i] / total;
        used += base[i];
        fracs.emplace_back(-(budget * lengths[i] % total), i);
    }
    std::sort(fracs.begin(), fracs.end());
    for (long extra = budget - used, j = 0; extra > 0; --extra, ++j) base[fracs[static_cast<std::size_t>(j)].second] += 1;
    return base;
}

} // namespace

TEST_CASE("parse single-document template") {
    const auto t = PromptTemplate::parse("{x} The price is [MASK]");
    CHECK(t.arity() == 1);
    REQUIRE(t.segments().size() == 3);
    CHECK(t.segments()[0].kind == TemplateSegment::Kind::Slot);
    CHECK(t.segments()[1].kind == TemplateSegment::Kind::Literal);
    CHECK(t.segments()[1].text == " The price is ");
    CHECK(t.segments()[2].kind == TemplateSegment::Kind::Mask);
}

TEST_CASE("parse pairwise template") {
    const auto t = PromptTemplate::parse("{x1} and {x2} are [MASK] product");
    CHECK(t.arity() == 2);
    CHECK(t.segments().size() == 6);
}

TEST_CASE("parse rejections") {
    CHECK(thrown_code([] { PromptTemplate::parse("{x} has no mask"); }) == Errc::NoMask);
    CHECK(thrown_code([] { PromptTemplate::parse("{x} [MASK] [MASK]"); }) == Errc::MultipleMasks);
    CHECK(thrown_code([] { PromptTemplate::parse("no slots [MASK]"); }) == Errc::BadSlots);
    CHECK(thrown_code([] { PromptTemplate::parse("{x} {x} twice [MASK]"); }) == Errc::BadSlots);
    CHECK(thrown_code([] { PromptTemplate::parse("{x1} alone [MASK]"); }) == Errc::BadSlots);
    CHECK(thrown_code([] { PromptTemplate::parse("{x} mixed {x2} [MASK]"); }) == Errc::BadSlots);
}

TEST_CASE("truncate_documents basics") {
    CHECK(truncate_documents({seq_of_len(10)}, 20)[0].size() == 10);

    const auto two = truncate_documents({seq_of_len(30), seq_of_len(10)}, 20);
    CHECK(two[0].size() == 15);
    CHECK(two[1].size() == 5);

    const auto zero = truncate_documents({seq_of_len(7), seq_of_len(7)}, 0);
    CHECK(zero[0].empty());
    CHECK(zero[1].empty());
}

TEST_CASE("truncation keeps prefixes and matches the largest-remainder oracle") {
    Rng rng(99);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 1 + static_cast<int>(rand_below(rng, 3));
        std::vector<TokenSeq> docs;
        std::vector<long> lengths;
        for (int i = 0; i < n; ++i) {
            const int len = static_cast<int>(rand_below(rng, 40));
            docs.push_back(seq_of_len(len));
            lengths.push_back(len);
        }
        const long budget = static_cast<long>(rand_below(rng, 60));
        const auto out = truncate_documents(docs, budget);
        const auto expect = largest_remainder_oracle(lengths, budget);
        REQUIRE(out.size() == docs.size());
        for (int i = 0; i < n; ++i) {
            CHECK(static_cast<long>(out[static_cast<std::size_t>(i)].size()) == expect[static_cast<std::size_t>(i)]);
            // tail truncation: kept ids are the original prefix
            for (std::size_t j = 0; j < out[static_cast<std::size_t>(i)].size(); ++j)
                CHECK(out[static_cast<std::size_t>(i)].ids[j] == docs[static_cast<std::size_t>(i)].ids[j]);
        }
    }
}

TEST_CASE("render lays out CLS, segments, MASK, SEP, PAD") {
    const Vocab vocab = test_vocab();
    const auto t = PromptTemplate::parse("{x} The price is [MASK]");
    const TokenSeq doc = vocab.encode("red mug");
    const auto enc = render(t, {doc}, 32, vocab);

    REQUIRE(enc.ids.size() == 32);
    CHECK(enc.ids[0] == kClsId);
    CHECK(enc.cls_index == 0);
    REQUIRE(enc.mask_index.has_value());
    // layout: CLS, doc, literal, MASK, SEP
    const auto literal = vocab.encode(" The price is ");
    const int expected_mask = 1 + static_cast<int>(doc.size() + literal.size());
    CHECK(*enc.mask_index == expected_mask);
    CHECK(enc.ids[static_cast<std::size_t>(*enc.mask_index)] == kMaskId);
    CHECK(enc.ids[static_cast<std::size_t>(enc.attention_length - 1)] == kSepId);
    for (std::size_t i = static_cast<std::size_t>(enc.attention_length); i < enc.ids.size(); ++i)
        CHECK(enc.ids[i] == kPadId);
    // document tokens appear right after CLS
    for (std::size_t i = 0; i < doc.size(); ++i) CHECK(enc.ids[1 + i] == doc.ids[i]);
}

TEST_CASE("render with empty pairwise docs still emits one MASK") {
    const Vocab vocab = test_vocab();
    const auto t = PromptTemplate::parse("{x1} and {x2} are [MASK] product");
    const auto enc = render(t, {TokenSeq{}, TokenSeq{}}, 32, vocab);
    int masks = 0;
    for (TokenId id : enc.ids) masks += id == kMaskId ? 1 : 0;
    CHECK(masks == 1);
    CHECK(enc.ids[0] == kClsId);
}

TEST_CASE("render errors") {
    const Vocab vocab = test_vocab();
    const auto t = PromptTemplate::parse("{x} The price is [MASK]");
    CHECK(thrown_code([&] { render(t, {TokenSeq{}, TokenSeq{}}, 32, vocab); }) == Errc::ArityMismatch);
    CHECK(thrown_code([&] { render(t, {TokenSeq{}}, 8, vocab); }) == Errc::TemplateTooLong);
}

TEST_CASE("jaccard dissimilarity") {
    const auto a = PromptTemplate::parse("{x1} and {x2} are same product [MASK]");
    CHECK(jaccard_dissimilarity(a, a) == doctest::Approx(0.0));

    const auto b = PromptTemplate::parse("{x1} also {x2} were equal [MASK]");
    CHECK(jaccard_dissimilarity(a, b) == doctest::Approx(1.0));

    // literals {are, same, product} vs {are, product, they}
    const auto c = PromptTemplate::parse("{x1} {x2} are same product [MASK]");
    const auto d = PromptTemplate::parse("{x1} {x2} are product they [MASK]");
    CHECK(jaccard_dissimilarity(c, d) == doctest::Approx(0.5));

    const auto single = PromptTemplate::parse("{x} są [MASK]");
    CHECK(thrown_code([&] { jaccard_dissimilarity(a, single); }) == Errc::ArityMismatch);
}

TEST_CASE("scorer properties on random template pairs") {
    const std::vector<std::string> words = {"alpha", "beta", "gamma", "delta", "epsilon", "zeta"};
    Rng rng(5);
    JaccardScorer scorer;
    for (int trial = 0; trial < 200; ++trial) {
        auto make = [&] {
            std::string spec = "{x}";
            const auto n = 1 + rand_below(rng, 4);
            for (std::uint64_t i = 0; i < n; ++i) spec += " " + words[rand_below(rng, words.size())];
            return PromptTemplate::parse(spec + " [MASK]");
        };
        const auto a = make();
        const auto b = make();
        const double ab = scorer.score(a, b);
        CHECK(ab >= 0.0);
        CHECK(ab <= 1.0);
        CHECK(ab == doctest::Approx(scorer.score(b, a)));
        CHECK(scorer.score(a, a) == doctest::Approx(0.0));
    }
}

TEST_CASE("select_pool picks k diverse templates deterministically") {
    std::vector<PromptTemplate> candidates;
    const std::vector<std::string> words = {"one", "two", "three", "four", "five",  "six",
                                            "seven", "eight", "nine", "ten", "eleven", "twelve"};
    Rng rng(11);
    for (int i = 0; i < 20; ++i) {
        std::string spec = "{x}";
        for (int w = 0; w < 3; ++w) spec += " " + words[rand_below(rng, words.size())];
        candidates.push_back(PromptTemplate::parse(spec + " [MASK]"));
    }
    const auto pool = select_pool(candidates, 5, JaccardScorer{});
    CHECK(pool.size() == 5);
    // first selected is always candidates[0]
    CHECK(pool.templates[0] == candidates[0]);
}

TEST_CASE("select_pool exhausts candidates when k equals the count") {
    std::vector<PromptTemplate> candidates = {
        PromptTemplate::parse("{x} aa bb [MASK]"),
        PromptTemplate::parse("{x} cc dd [MASK]"),
        PromptTemplate::parse("{x} ee ff [MASK]"),
    };
    const auto pool = select_pool(candidates, 3, JaccardScorer{});
    CHECK(pool.size() == 3);
    std::set<std::string> specs;
    for (const auto& t : pool.templates) specs.insert(t.spec_string());
    CHECK(specs.size() == 3);
}

TEST_CASE("select_pool leaves a duplicate of the seed for last") {
    std::vector<PromptTemplate> candidates = {
        PromptTemplate::parse("{x} red apple [MASK]"),
        PromptTemplate::parse("{x} green pear [MASK]"),
        PromptTemplate::parse("{x} red apple [MASK]"), // duplicate of #0
    };
    const auto pool = select_pool(candidates, 2, JaccardScorer{});
    CHECK(pool.templates[0] == candidates[0]);
    CHECK(pool.templates[1] == candidates[1]);
}

TEST_CASE("select_pool is invariant to duplicated selected candidates in the tail") {
    std::vector<PromptTemplate> candidates = {
        PromptTemplate::parse("{x} aa bb [MASK]"),
        PromptTemplate::parse("{x} cc dd [MASK]"),
        PromptTemplate::parse("{x} ee ff [MASK]"),
        PromptTemplate::parse("{x} gg hh [MASK]"),
    };
    const auto base = select_pool(candidates, 3, JaccardScorer{});
    auto padded = candidates;
    padded.push_back(candidates[0]);
    padded.push_back(candidates[1]);
    const auto with_dups = select_pool(padded, 3, JaccardScorer{});
    for (std::size_t i = 0; i < 3; ++i) CHECK(base.templates[i] == with_dups.templates[i]);
}

TEST_CASE("select_pool honors the min-dissimilarity pre-filter") {
    std::vector<PromptTemplate> candidates = {
        PromptTemplate::parse("{x} red apple [MASK]"),
        PromptTemplate::parse("{x} red apple extra [MASK]"), // close to #0
        PromptTemplate::parse("{x} green pear [MASK]"),
    };
    const auto pool = select_pool(candidates, 2, JaccardScorer{}, 0.5);
    CHECK(pool.templates[0] == candidates[0]);
    CHECK(pool.templates[1] == candidates[2]);
    CHECK(thrown_code([&] { select_pool(candidates, 3, JaccardScorer{}, 0.5); }) == Errc::NotEnoughCandidates);
}

TEST_CASE("select_pool needs enough candidates") {
    std::vector<PromptTemplate> candidates = {PromptTemplate::parse("{x} aa [MASK]")};
    CHECK(thrown_code([&] { select_pool(candidates, 2, JaccardScorer{}); }) == Errc::NotEnoughCandidates);
}

TEST_CASE("sample_template is uniform and deterministic") {
    std::vector<PromptTemplate> ts;
    for (int i = 0; i < 5; ++i)
        ts.push_back(PromptTemplate::parse("{x} word" + std::to_string(i) + " [MASK]"));
    const PromptPool pool(ts);

    const PromptPool singleton({ts[0]});
    Rng rng0(1);
    for (int i = 0; i < 50; ++i) CHECK(sample_template(singleton, rng0) == 0);

    Rng rng1(42);
    std::vector<int> counts(5, 0);
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) counts[sample_template(pool, rng1)] += 1;
    // chi-square against uniform, 4 dof, 99% critical value 13.2767
    double chi2 = 0.0;
    const double expected = draws / 5.0;
    for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
    CHECK(chi2 < 13.2767);

    Rng a(7), b(7);
    for (int i = 0; i < 100; ++i) CHECK(sample_template(pool, a) == sample_template(pool, b));
}

TEST_CASE("select_best_index prefers best value, ties to lowest index") {
    const std::vector<double> praucs = {0.8, 0.8, 0.9, 0.8, 0.8};
    int evaluated = 0;
    const auto best = select_best_index(praucs.size(), [&](std::size_t i) {
        ++evaluated;
        return praucs[i];
    }, true);
    CHECK(best == 2);
    CHECK(evaluated == 5);

    const auto tie = select_best_index(3, [](std::size_t) { return 0.5; }, true);
    CHECK(tie == 0);

    // lower-better direction
    const std::vector<double> rmses = {0.3, 0.2, 0.4};
    CHECK(select_best_index(rmses.size(), [&](std::size_t i) { return rmses[i]; }, false) == 1);

    // single-template pool: no evaluation at all
    int calls = 0;
    CHECK(select_best_index(1, [&](std::size_t) { ++calls; return 0.0; }, true) == 0);
    CHECK(calls == 0);
}

TEST_CASE("render invariant suite on randomized templates and documents") {
    const Vocab vocab = test_vocab();
    const std::vector<std::string> words = {"the", "price", "is", "big", "small", "same", "product", "music"};
    Rng rng(2024);
    const int max_len = 48;
    for (int trial = 0; trial < 2000; ++trial) {
        const int arity = 1 + static_cast<int>(rand_below(rng, 2));
        std::string spec = arity == 1 ? "{x}" : "{x1}";
        const auto n_words = rand_below(rng, 4);
        for (std::uint64_t w = 0; w < n_words; ++w) spec += " " + words[rand_below(rng, words.size())];
        if (arity == 2) spec += " {x2}";
        spec += " [MASK]";
        const auto tmpl = PromptTemplate::parse(spec);

        std::vector<TokenSeq> docs;
        for (int d = 0; d < arity; ++d) {
            std::string doc;
            const auto len = rand_below(rng, 20);
            for (std::uint64_t w = 0; w < len; ++w) doc += (w ? " " : "") + words[rand_below(rng, words.size())];
            docs.push_back(vocab.encode(doc));
        }

        const auto enc = render(tmpl, docs, max_len, vocab);
        REQUIRE(enc.ids.size() == static_cast<std::size_t>(max_len));
        CHECK(enc.ids[0] == kClsId);
        CHECK(enc.attention_length <= max_len);

        int masks = 0, seps = 0;
        for (int i = 0; i < enc.attention_length; ++i) {
            masks += enc.ids[static_cast<std::size_t>(i)] == kMaskId ? 1 : 0;
            seps += enc.ids[static_cast<std::size_t>(i)] == kSepId ? 1 : 0;
            CHECK(enc.ids[static_cast<std::size_t>(i)] != kPadId);
        }
        CHECK(masks == 1);
        CHECK(seps == 1);
        for (std::size_t i = static_cast<std::size_t>(enc.attention_length); i < enc.ids.size(); ++i)
            CHECK(enc.ids[i] == kPadId);

        // literal preservation: every literal token is present in order
        std::vector<TokenId> literal_ids;
        for (const auto& seg : tmpl.segments())
            if (seg.kind == TemplateSegment::Kind::Literal)
                for (TokenId id : vocab.encode(seg.text).ids) literal_ids.push_back(id);
        std::size_t cursor = 0;
        for (int i = 0; i < enc.attention_length && cursor < literal_ids.size(); ++i)
            if (enc.ids[static_cast<std::size_t>(i)] == literal_ids[cursor]) ++cursor;
        CHECK(cursor == literal_ids.size());
    }
}

TEST_CASE("embedding scorer identity, symmetry and external recomputation") {
    const Vocab vocab = test_vocab();
    ModelConfig cfg;
    cfg.layers = 2;
    cfg.dim = 32;
    cfg.heads = 2;
    cfg.max_len = 32;
    cfg.vocab_size = vocab.size();
    const Model model(cfg, 9);

    const EmbeddingScorer scorer(model, vocab, {"red mug"}, cfg.max_len);
    const auto a = PromptTemplate::parse("{x} The price is [MASK]");
    const auto b = PromptTemplate::parse("{x} same product [MASK]");

    CHECK(scorer.score(a, a) == doctest::Approx(0.0));
    const double ab = scorer.score(a, b);
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0);
    CHECK(ab == doctest::Approx(scorer.score(b, a)));

    // recompute the cosine from raw hidden states
    auto pooled = [&](const PromptTemplate& t) {
        const auto enc = render(t, {vocab.encode("red mug")}, cfg.max_len, vocab);
        const auto hidden = forward(model, {enc});
        return extract_representation(hidden, ReprKind::MeanPool);
    };
    const Tensor va = pooled(a);
    const Tensor vb = pooled(b);
    double dot = 0, na = 0, nb = 0;
    for (int c = 0; c < va.cols; ++c) {
        dot += va.at(0, c) * vb.at(0, c);
        na += va.at(0, c) * va.at(0, c);
        nb += vb.at(0, c) * vb.at(0, c);
    }
    const double expected = (1.0 - dot / (std::sqrt(na) * std::sqrt(nb))) / 2.0;
    CHECK(ab == doctest::Approx(expected).epsilon(1e-12));
}
