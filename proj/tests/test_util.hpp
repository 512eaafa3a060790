#pragma once

#include "dynamar/encoder.hpp"
#include "dynamar/error.hpp"
#include "dynamar/rng.hpp"
#include "dynamar/templating.hpp"

#include <functional>
#include <vector>

namespace dynamar::testutil {

inline ModelConfig tiny_config(int vocab_size = 32) {
    ModelConfig cfg;
    cfg.layers = 2;
    cfg.dim = 16;
    cfg.heads = 2;
    cfg.max_len = 16;
    cfg.vocab_size = vocab_size;
    cfg.dropout = 0.0;
    return cfg;
}

/// [CLS] + n_tokens random ordinary ids (+ optional MASK) + [SEP] + PAD.
inline EncodedInput make_input(int vocab_size, int max_len, int n_tokens, Rng& rng, bool with_mask = false) {
    EncodedInput in;
    in.ids.push_back(kClsId);
    for (int i = 0; i < n_tokens; ++i)
        in.ids.push_back(static_cast<TokenId>(
            kNumSpecials + rand_below(rng, static_cast<std::uint64_t>(vocab_size - kNumSpecials))));
    if (with_mask) {
        const auto at = 1 + rand_below(rng, static_cast<std::uint64_t>(n_tokens + 1));
        in.ids.insert(in.ids.begin() + static_cast<std::ptrdiff_t>(at), kMaskId);
        in.mask_index = static_cast<int>(at);
    }
    in.ids.push_back(kSepId);
    in.attention_length = static_cast<int>(in.ids.size());
    in.ids.resize(static_cast<std::size_t>(max_len), kPadId);
    return in;
}

} // namespace dynamar::testutil
