#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dynamar/error.hpp"
#include "dynamar/rng.hpp"
#include "dynamar/tokenizer.hpp"

#include <filesystem>
#include <string>
#include <vector>

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

} // namespace

TEST_CASE("train_bpe learns the most frequent pair first") {
    // "aaab" has pairs (a,a) twice and (a,b) once.
    const Vocab vocab = train_bpe({"aaab"}, 8);
    REQUIRE(vocab.merges().size() >= 1);
    CHECK(vocab.merges()[0] == std::make_pair(std::string("a"), std::string("a")));
    CHECK(vocab.size() <= 8);
}

TEST_CASE("train_bpe with no merge budget keeps the alphabet only") {
    const Vocab vocab = train_bpe({"x"}, 1 + kNumSpecials);
    CHECK(vocab.merges().empty());
    CHECK(vocab.size() == 6); // 5 specials + "x"
    CHECK(vocab.id_of("x") == 5);
}

TEST_CASE("train_bpe rejects a target below alphabet+specials") {
    CHECK(thrown_code([] { train_bpe({"abc"}, 3); }) == Errc::VocabTooSmall);
}

TEST_CASE("train_bpe rejects an empty corpus") {
    CHECK(thrown_code([] { train_bpe({}, 100); }) == Errc::EmptyCorpus);
}

TEST_CASE("encode of empty text is empty") {
    const Vocab vocab = train_bpe({"abc"}, 16);
    CHECK(vocab.encode("").ids.empty());
}

TEST_CASE("characters outside the alphabet encode to UNK") {
    const Vocab vocab = train_bpe({"abc"}, 16);
    const TokenSeq seq = vocab.encode("azb");
    REQUIRE(seq.size() == 3);
    CHECK(seq.ids[0] == vocab.id_of("a"));
    CHECK(seq.ids[1] == kUnkId);
    CHECK(seq.ids[2] == vocab.id_of("b"));
}

TEST_CASE("encode applies merges in training order") {
    const Vocab vocab = train_bpe({"aaab"}, 8);
    const TokenSeq seq = vocab.encode("aab");
    REQUIRE(seq.size() == 2);
    CHECK(seq.ids[0] == vocab.id_of("aa"));
    CHECK(seq.ids[1] == vocab.id_of("b"));
}

TEST_CASE("decode renders specials and round-trips corpus documents") {
    const std::vector<std::string> corpus = {"the cat sat", "the bat", "a cat hat"};
    const Vocab vocab = train_bpe(corpus, 40);
    for (const auto& doc : corpus) CHECK(vocab.decode(vocab.encode(doc)) == doc);

    TokenSeq mask_only;
    mask_only.ids = {kMaskId};
    CHECK(vocab.decode(mask_only) == "[MASK]");

    TokenSeq bad;
    bad.ids = {static_cast<TokenId>(vocab.size())};
    CHECK(thrown_code([&] { vocab.decode(bad); }) == Errc::UnknownId);
}

TEST_CASE("round trip over the training alphabet for random strings") {
    const std::vector<std::string> corpus = {"abcab abcab cababc", "ccba abba cabc"};
    const Vocab vocab = train_bpe(corpus, 64);
    const std::string alphabet = "abc ";
    Rng rng(123);
    for (int trial = 0; trial < 1000; ++trial) {
        std::string s;
        const auto len = rand_below(rng, 24);
        for (std::uint64_t i = 0; i < len; ++i) s += alphabet[rand_below(rng, alphabet.size())];
        CHECK(vocab.decode(vocab.encode(s)) == s);
    }
}

TEST_CASE("training is deterministic") {
    const std::vector<std::string> corpus = {"gadget widget gizmo", "widget gizmo gadget", "gizmo gizmo"};
    const Vocab a = train_bpe(corpus, 48);
    const Vocab b = train_bpe(corpus, 48);
    CHECK(a.merges() == b.merges());
    CHECK(a.to_json_string() == b.to_json_string());
}

TEST_CASE("encode of plain text never emits specials") {
    const std::vector<std::string> corpus = {"some [MASK] text with brackets []", "more text [PAD] here"};
    const Vocab vocab = train_bpe(corpus, 96);
    Rng rng(7);
    const std::string alphabet = "somet[]PADK xbrachwi";
    for (int trial = 0; trial < 200; ++trial) {
        std::string s;
        const auto len = rand_below(rng, 30);
        for (std::uint64_t i = 0; i < len; ++i) s += alphabet[rand_below(rng, alphabet.size())];
        for (TokenId id : vocab.encode(s).ids) CHECK(id >= kNumSpecials);
    }
    // Even the literal special string must not produce the special id.
    for (TokenId id : vocab.encode("[MASK]").ids) CHECK(id != kMaskId);
}

TEST_CASE("vocab json save/load round trip") {
    const Vocab vocab = train_bpe({"hello world", "hello there"}, 48);
    const auto path = std::filesystem::temp_directory_path() / "dynamar_vocab_test.json";
    vocab.save(path);
    const Vocab loaded = Vocab::load(path);
    CHECK(loaded.size() == vocab.size());
    CHECK(loaded.merges() == vocab.merges());
    CHECK(loaded.decode(loaded.encode("hello world")) == "hello world");
    std::filesystem::remove(path);
}

TEST_CASE("dense id invariant") {
    const Vocab vocab = train_bpe({"zzyy xxyy zzxx"}, 32);
    for (TokenId id = 0; id < vocab.size(); ++id) CHECK(vocab.id_of(vocab.token(id)) == id);
}
