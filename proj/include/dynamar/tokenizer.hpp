#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace dynamar {

using TokenId = std::int32_t;

// Reserved special-token ids. Fixed by contract; never produced when
// encoding plain text.
inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kClsId = 1;
inline constexpr TokenId kSepId = 2;
inline constexpr TokenId kMaskId = 3;
inline constexpr TokenId kUnkId = 4;
inline constexpr int kNumSpecials = 5;

struct TokenSeq {
    std::vector<TokenId> ids;

    std::size_t size() const { return ids.size(); }
    bool empty() const { return ids.empty(); }
};

/// Byte-pair-encoding vocabulary over a character-level base alphabet.
/// Immutable after training; safe to share across threads.
class Vocab {
public:
    Vocab() = default;

    static Vocab train(const std::vector<std::string>& corpus, int target_vocab_size);

    TokenSeq encode(const std::string& text) const;
    std::string decode(const TokenSeq& seq) const;

    int size() const { return static_cast<int>(id_to_token_.size()); }
    const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }
    const std::string& token(TokenId id) const { return id_to_token_.at(static_cast<std::size_t>(id)); }
    TokenId id_of(const std::string& token) const; // UnknownId if absent

    void save(const std::filesystem::path& path) const;
    static Vocab load(const std::filesystem::path& path);

    std::string to_json_string() const;
    static Vocab from_json_string(const std::string& text);

private:
    std::vector<std::pair<std::string, std::string>> merges_;
    std::unordered_map<std::string, TokenId> token_to_id_;
    std::vector<std::string> id_to_token_;

    void add_token(const std::string& tok);
    friend struct VocabBuilder;
};

/// Convenience free functions mirroring the operation names.
Vocab train_bpe(const std::vector<std::string>& corpus, int target_vocab_size);
TokenSeq encode(const Vocab& vocab, const std::string& text);
std::string decode(const Vocab& vocab, const TokenSeq& seq);

} // namespace dynamar
