#include "dynamar/tokenizer.hpp"

#include "dynamar/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace dynamar {

namespace {

using json = nlohmann::ordered_json;

const char* kSpecialNames[kNumSpecials] = {"[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"};

bool is_special_string(const std::string& s) {
    for (const char* name : kSpecialNames)
        if (s == name) return true;
    return false;
}

// Sentinel for characters outside the training alphabet. Can never match a
// merge rule or a vocab token, so it falls through to UNK at id-mapping time.
const std::string kUnknownSentinel = std::string(1, '\0') + "?";

// Left-to-right non-overlapping replacement of (left,right) with their
// concatenation.
void apply_merge(std::vector<std::string>& seq, const std::string& left, const std::string& right,
                 const std::string& merged) {
    std::vector<std::string> out;
    out.reserve(seq.size());
    std::size_t i = 0;
    while (i < seq.size()) {
        if (i + 1 < seq.size() && seq[i] == left && seq[i + 1] == right) {
            out.push_back(merged);
            i += 2;
        } else {
            out.push_back(std::move(seq[i]));
            i += 1;
        }
    }
    seq = std::move(out);
}

} // namespace

void Vocab::add_token(const std::string& tok) {
    token_to_id_.emplace(tok, static_cast<TokenId>(id_to_token_.size()));
    id_to_token_.push_back(tok);
}

TokenId Vocab::id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    if (it == token_to_id_.end()) fail(Errc::UnknownId, "token not in vocabulary: " + token);
    return it->second;
}

Vocab Vocab::train(const std::vector<std::string>& corpus, int target_vocab_size) {
    if (corpus.empty()) fail(Errc::EmptyCorpus, "training corpus is empty");

    std::set<char> alphabet;
    for (const std::string& doc : corpus)
        for (char c : doc) alphabet.insert(c);

    const int min_size = static_cast<int>(alphabet.size()) + kNumSpecials;
    if (target_vocab_size < min_size)
        fail(Errc::VocabTooSmall, "target " + std::to_string(target_vocab_size) + " below alphabet+specials " +
                                      std::to_string(min_size));

    Vocab vocab;
    for (const char* name : kSpecialNames) vocab.add_token(name);
    for (char c : alphabet) vocab.add_token(std::string(1, c));

    std::vector<std::vector<std::string>> seqs;
    seqs.reserve(corpus.size());
    for (const std::string& doc : corpus) {
        std::vector<std::string> seq;
        seq.reserve(doc.size());
        for (char c : doc) seq.emplace_back(1, c);
        seqs.push_back(std::move(seq));
    }

    while (vocab.size() < target_vocab_size) {
        // Count adjacent pairs; std::map gives a stable order so the
        // lexicographic tie-break is exact.
        std::map<std::pair<std::string, std::string>, long> counts;
        for (const auto& seq : seqs)
            for (std::size_t i = 0; i + 1 < seq.size(); ++i) ++counts[{seq[i], seq[i + 1]}];

        std::pair<std::string, std::string> best;
        long best_count = 0;
        for (const auto& [pair, count] : counts) {
            if (is_special_string(pair.first + pair.second)) continue;
            if (count > best_count) {
                best = pair;
                best_count = count;
            }
        }
        // A pair occurring once buys no compression; stop there.
        if (best_count < 2) break;

        const std::string merged = best.first + best.second;
        vocab.merges_.push_back(best);
        if (vocab.token_to_id_.find(merged) == vocab.token_to_id_.end()) vocab.add_token(merged);
        for (auto& seq : seqs) apply_merge(seq, best.first, best.second, merged);
    }

    return vocab;
}

TokenSeq Vocab::encode(const std::string& text) const {
    std::vector<std::string> seq;
    seq.reserve(text.size());
    for (char c : text) {
        std::string sym(1, c);
        if (token_to_id_.find(sym) == token_to_id_.end())
            seq.push_back(kUnknownSentinel);
        else
            seq.push_back(std::move(sym));
    }
    for (const auto& [left, right] : merges_) apply_merge(seq, left, right, left + right);

    TokenSeq out;
    out.ids.reserve(seq.size());
    for (const std::string& sym : seq) {
        auto it = token_to_id_.find(sym);
        out.ids.push_back(it == token_to_id_.end() ? kUnkId : it->second);
    }
    return out;
}

std::string Vocab::decode(const TokenSeq& seq) const {
    std::string out;
    for (TokenId id : seq.ids) {
        if (id < 0 || id >= size()) fail(Errc::UnknownId, "token id out of range: " + std::to_string(id));
        out += id_to_token_[static_cast<std::size_t>(id)];
    }
    return out;
}

std::string Vocab::to_json_string() const {
    json j;
    json merges = json::array();
    for (const auto& [l, r] : merges_) merges.push_back(json::array({l, r}));
    j["merges"] = std::move(merges);
    json tokens = json::object();
    // Emit in id order; ordered_json preserves insertion order so output is
    // deterministic.
    for (int id = 0; id < size(); ++id) tokens[id_to_token_[static_cast<std::size_t>(id)]] = id;
    j["tokens"] = std::move(tokens);
    j["specials"] = {{"PAD", kPadId}, {"CLS", kClsId}, {"SEP", kSepId}, {"MASK", kMaskId}, {"UNK", kUnkId}};
    return j.dump(2);
}

Vocab Vocab::from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        fail(Errc::ParseError, std::string("vocab json: ") + e.what());
    }
    Vocab vocab;
    const auto& tokens = j.at("tokens");
    std::vector<std::string> by_id(tokens.size());
    for (auto it = tokens.begin(); it != tokens.end(); ++it) {
        const int id = it.value().get<int>();
        if (id < 0 || id >= static_cast<int>(by_id.size()) || !by_id[static_cast<std::size_t>(id)].empty())
            fail(Errc::SchemaViolation, "vocab ids must be dense 0..size-1");
        by_id[static_cast<std::size_t>(id)] = it.key();
    }
    for (const auto& tok : by_id) vocab.add_token(tok);
    for (int s = 0; s < kNumSpecials; ++s)
        if (vocab.id_to_token_[static_cast<std::size_t>(s)] != kSpecialNames[s])
            fail(Errc::SchemaViolation, "specials must occupy ids 0..4");
    for (const auto& m : j.at("merges")) vocab.merges_.emplace_back(m.at(0).get<std::string>(), m.at(1).get<std::string>());
    return vocab;
}

void Vocab::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) fail(Errc::IoError, "cannot open for writing: " + path.string());
    out << to_json_string() << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(Errc::IoError, "cannot open for reading: " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return from_json_string(buf.str());
}

Vocab train_bpe(const std::vector<std::string>& corpus, int target_vocab_size) {
    return Vocab::train(corpus, target_vocab_size);
}

TokenSeq encode(const Vocab& vocab, const std::string& text) { return vocab.encode(text); }

std::string decode(const Vocab& vocab, const TokenSeq& seq) { return vocab.decode(seq); }

} // namespace dynamar
