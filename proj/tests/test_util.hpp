#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <spanret/encoder.hpp>
#include <spanret/contrastive.hpp>
#include <spanret/rng.hpp>

namespace spanret::testing {

inline std::vector<TokenId> random_ids(Rng& rng, std::size_t vocab_size, std::size_t min_len, std::size_t max_len)
{
    auto len = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(min_len),
                                                        static_cast<std::int64_t>(max_len)));
    std::vector<TokenId> ids(len);
    for (auto& id : ids) {
        id = static_cast<TokenId>(Vocabulary::reserved_count + rng.uniform_index(vocab_size - Vocabulary::reserved_count));
    }
    return ids;
}

inline TrainBatch random_batch(Rng& rng, std::size_t m, bool negatives, std::size_t vocab_size,
                               std::size_t max_len = 8)
{
    TrainBatch b;
    for (std::size_t i = 0; i < m; ++i) {
        b.queries.push_back(random_ids(rng, vocab_size, 1, max_len));
        b.positives.push_back(random_ids(rng, vocab_size, 1, max_len));
        if (negatives) {
            b.negatives.push_back(random_ids(rng, vocab_size, 1, max_len));
        }
    }
    return b;
}

inline EncoderConfig tiny_config(std::size_t vocab = 20, std::size_t dim = 8, std::size_t layers = 1)
{
    EncoderConfig c;
    c.vocab_size = vocab;
    c.dim = dim;
    c.layers = layers;
    c.heads = 2;
    c.ffn_dim = 16;
    c.max_seq_len = 12;
    c.dropout = 0.0;
    c.init_std = 0.5;
    return c;
}

} // namespace spanret::testing
