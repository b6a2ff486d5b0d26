#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "encoder.hpp"
#include "error.hpp"
#include "rng.hpp"
#include "threads.hpp"

namespace spanret {

/// Relevance score: plain inner product, accumulated in double.
template <typename T>
[[nodiscard]] double score(std::span<const T> query, std::span<const T> passage)
{
    if (query.size() != passage.size()) {
        throw Error(ErrorKind::invalid_argument, "score: dimension mismatch (" + std::to_string(query.size())
                                                     + " vs " + std::to_string(passage.size()) + ")");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < query.size(); ++i) {
        s += static_cast<double>(query[i]) * static_cast<double>(passage[i]);
    }
    return s;
}

/// m aligned (query, positive[, negative]) token-id sequences, without [CLS].
struct TrainBatch {
    std::vector<std::vector<TokenId>> queries;
    std::vector<std::vector<TokenId>> positives;
    std::vector<std::vector<TokenId>> negatives;

    [[nodiscard]] std::size_t size() const { return queries.size(); }
    [[nodiscard]] bool has_negatives() const { return !negatives.empty(); }
    [[nodiscard]] std::size_t candidate_count() const { return positives.size() + negatives.size(); }

    void validate() const
    {
        if (queries.empty() || positives.size() != queries.size()
            || (has_negatives() && negatives.size() != queries.size())) {
            throw Error(ErrorKind::invalid_argument, "batch: queries, positives and negatives must align");
        }
    }
};

struct BatchResult {
    double loss = 0.0;
    /// 1-based rank of each query's positive among all candidates.
    std::vector<std::size_t> positive_rank;

    [[nodiscard]] double top1() const
    {
        if (positive_rank.empty()) {
            return 0.0;
        }
        auto hits = std::count(positive_rank.begin(), positive_rank.end(), std::size_t{1});
        return static_cast<double>(hits) / static_cast<double>(positive_rank.size());
    }
};

struct LossOptions {
    bool train_mode = false;
    std::uint64_t dropout_key = 0;
    std::size_t threads = 1;
};

/// Mean over rows of -log softmax(scores[i])[i] using log-sum-exp. When
/// `grad` is non-null it receives d(loss)/d(scores).
[[nodiscard]] inline BatchResult softmax_cross_entropy(const std::vector<std::vector<double>>& scores,
                                                       std::vector<std::vector<double>>* grad = nullptr)
{
    BatchResult result;
    auto const m = scores.size();
    if (grad != nullptr) {
        grad->assign(m, {});
    }
    for (std::size_t i = 0; i < m; ++i) {
        auto const& row = scores[i];
        for (std::size_t j = 0; j < row.size(); ++j) {
            if (!std::isfinite(row[j])) {
                throw Error(ErrorKind::numeric, "non-finite score at batch row " + std::to_string(i));
            }
        }
        double const mx = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (double s : row) {
            sum += std::exp(s - mx);
        }
        double const lse = mx + std::log(sum);
        result.loss += lse - row[i];
        std::size_t rank = 1;
        for (std::size_t j = 0; j < row.size(); ++j) {
            if (j != i && row[j] > row[i]) {
                ++rank;
            }
        }
        result.positive_rank.push_back(rank);
        if (grad != nullptr) {
            auto& g = (*grad)[i];
            g.resize(row.size());
            for (std::size_t j = 0; j < row.size(); ++j) {
                g[j] = (std::exp(row[j] - lse) - (j == i ? 1.0 : 0.0)) / static_cast<double>(m);
            }
        }
    }
    result.loss /= static_cast<double>(m);
    return result;
}

/// Gradient buffers are reduced over this many fixed shards in order, so the
/// result does not depend on the worker count.
inline constexpr std::size_t kGradientShards = 8;

namespace detail {

template <typename T>
struct BatchForward {
    std::vector<RowVec<T>> outputs;
    std::vector<SequenceCache<T>> caches;
};

inline std::vector<const std::vector<TokenId>*> batch_sequences(const TrainBatch& batch)
{
    std::vector<const std::vector<TokenId>*> seqs;
    for (auto const* group : {&batch.queries, &batch.positives, &batch.negatives}) {
        for (auto const& s : *group) {
            seqs.push_back(&s);
        }
    }
    return seqs;
}

template <typename T>
BatchForward<T> forward_batch(const EncoderModel<T>& model, const TrainBatch& batch, const LossOptions& options,
                              bool keep_cache)
{
    auto const seqs = batch_sequences(batch);
    BatchForward<T> fw;
    fw.outputs.resize(seqs.size());
    if (keep_cache) {
        fw.caches.resize(seqs.size());
    }
    double const rate = options.train_mode ? model.config().dropout : 0.0;
    parallel_shards(kGradientShards, options.threads, [&](std::size_t shard) {
        auto [begin, end] = shard_range(seqs.size(), kGradientShards, shard);
        for (std::size_t s = begin; s < end; ++s) {
            auto input = encoder_input(*seqs[s], model.config().max_seq_len);
            auto positions = sequential_positions(input.size());
            DropoutStream stream{rate, derive_seed(options.dropout_key, {s})};
            fw.outputs[s] = forward_sequence<T>(model, input, positions, &stream,
                                                keep_cache ? &fw.caches[s] : nullptr);
        }
    });
    return fw;
}

template <typename T>
std::vector<std::vector<double>> score_matrix(const BatchForward<T>& fw, std::size_t m)
{
    std::size_t const candidates = fw.outputs.size() - m;
    std::vector<std::vector<double>> scores(m, std::vector<double>(candidates));
    for (std::size_t i = 0; i < m; ++i) {
        auto const& q = fw.outputs[i];
        for (std::size_t j = 0; j < candidates; ++j) {
            auto const& c = fw.outputs[m + j];
            scores[i][j] = score<T>(std::span<const T>(q.data(), static_cast<std::size_t>(q.size())),
                                    std::span<const T>(c.data(), static_cast<std::size_t>(c.size())));
        }
    }
    return scores;
}

} // namespace detail

/// In-batch-negative contrastive loss. Candidates for every query are all
/// positives followed by all negatives (2m with negatives, m without).
template <typename T>
[[nodiscard]] BatchResult batch_loss(const EncoderModel<T>& model, const TrainBatch& batch,
                                     const LossOptions& options = {})
{
    batch.validate();
    auto fw = detail::forward_batch(model, batch, options, false);
    return softmax_cross_entropy(detail::score_matrix(fw, batch.size()));
}

/// Loss plus its exact gradient with respect to every parameter. `grad` is
/// resized and overwritten.
template <typename T>
BatchResult loss_and_gradient(const EncoderModel<T>& model, const TrainBatch& batch, std::vector<T>& grad,
                              const LossOptions& options = {})
{
    batch.validate();
    std::size_t const m = batch.size();
    auto fw = detail::forward_batch(model, batch, options, true);
    std::vector<std::vector<double>> dscores;
    auto result = softmax_cross_entropy(detail::score_matrix(fw, m), &dscores);

    auto const dim = static_cast<Eigen::Index>(model.config().dim);
    std::size_t const candidates = fw.outputs.size() - m;
    std::vector<RowVec<T>> d_out(fw.outputs.size());
    for (std::size_t i = 0; i < m; ++i) {
        Eigen::Matrix<double, 1, Eigen::Dynamic> acc = Eigen::Matrix<double, 1, Eigen::Dynamic>::Zero(dim);
        for (std::size_t j = 0; j < candidates; ++j) {
            acc += dscores[i][j] * fw.outputs[m + j].template cast<double>();
        }
        d_out[i] = acc.template cast<T>();
    }
    for (std::size_t j = 0; j < candidates; ++j) {
        Eigen::Matrix<double, 1, Eigen::Dynamic> acc = Eigen::Matrix<double, 1, Eigen::Dynamic>::Zero(dim);
        for (std::size_t i = 0; i < m; ++i) {
            acc += dscores[i][j] * fw.outputs[i].template cast<double>();
        }
        d_out[m + j] = acc.template cast<T>();
    }

    std::size_t const total = model.layout().total();
    std::vector<std::vector<T>> shard_grads(kGradientShards);
    parallel_shards(kGradientShards, options.threads, [&](std::size_t shard) {
        auto [begin, end] = shard_range(fw.outputs.size(), kGradientShards, shard);
        if (begin == end) {
            return;
        }
        shard_grads[shard].assign(total, T(0));
        for (std::size_t s = begin; s < end; ++s) {
            backward_sequence<T>(model, fw.caches[s], d_out[s], shard_grads[shard]);
        }
    });
    grad.assign(total, T(0));
    for (auto const& g : shard_grads) {
        if (g.empty()) {
            continue;
        }
        for (std::size_t k = 0; k < total; ++k) {
            grad[k] += g[k];
        }
    }
    return result;
}

} // namespace spanret
