#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "artifact.hpp"
#include "contrastive.hpp"
#include "corpus.hpp"
#include "encoder.hpp"
#include "error.hpp"
#include "scored_hit.hpp"
#include "threads.hpp"
#include "tokenizer.hpp"

namespace spanret {

struct DenseBuildStats {
    std::size_t truncated = 0;
    std::size_t unknown_tokens = 0;
};

/// Exact inner-product index: one row per passage, row-major.
template <typename T>
class DenseIndex {
   public:
    DenseIndex() = default;
    DenseIndex(std::size_t dim, std::vector<std::string> ids, std::vector<T> rows, std::string fingerprint)
        : dim_(dim), ids_(std::move(ids)), rows_(std::move(rows)), fingerprint_(std::move(fingerprint))
    {
        if (rows_.size() != dim_ * ids_.size()) {
            throw Error(ErrorKind::invalid_argument, "dense index: row data does not match count x dim");
        }
        for (T v : rows_) {
            if (!std::isfinite(v)) {
                throw Error(ErrorKind::numeric, "dense index: non-finite passage vector");
            }
        }
    }

    /// Encodes title + [SEP] + body of every passage in eval mode. Row
    /// placement is fixed, so the result does not depend on `threads`.
    static DenseIndex build(const EncoderModel<T>& model, const Corpus& corpus, const Vocabulary& vocab,
                            std::size_t threads = 1, DenseBuildStats* stats = nullptr)
    {
        std::size_t const n = corpus.size();
        std::size_t const dim = model.config().dim;
        std::vector<std::string> ids;
        ids.reserve(n);
        for (auto const& p : corpus.passages()) {
            ids.push_back(p.passage_id);
        }
        std::vector<T> rows(n * dim);
        std::atomic<std::size_t> truncated{0};
        std::atomic<std::size_t> unknown{0};
        std::size_t const shards = std::max<std::size_t>(1, std::min<std::size_t>(n, 64));
        parallel_shards(shards, threads, [&](std::size_t shard) {
            auto [begin, end] = shard_range(n, shards, shard);
            for (std::size_t i = begin; i < end; ++i) {
                std::size_t unk = 0;
                auto ids_i = vocab.encode(passage_text_with_title(corpus.passage(i)), &unk);
                if (ids_i.size() + 1 > model.config().max_seq_len) {
                    ++truncated;
                }
                auto v = encode<T>(model, ids_i);
                std::copy(v.begin(), v.end(), rows.begin() + static_cast<std::ptrdiff_t>(i * dim));
                unknown += unk;
            }
        });
        if (stats != nullptr) {
            stats->truncated = truncated;
            stats->unknown_tokens = unknown;
        }
        return DenseIndex(dim, std::move(ids), std::move(rows), model.fingerprint());
    }

    [[nodiscard]] std::size_t size() const { return ids_.size(); }
    [[nodiscard]] std::size_t dim() const { return dim_; }
    [[nodiscard]] const std::string& fingerprint() const { return fingerprint_; }
    [[nodiscard]] const std::string& passage_id(std::size_t i) const { return ids_.at(i); }

    [[nodiscard]] std::span<const T> row(std::size_t i) const
    {
        return std::span<const T>(rows_).subspan(i * dim_, dim_);
    }

    [[nodiscard]] std::span<const T> data() const { return rows_; }

    /// Exhaustive scan with a query vector.
    [[nodiscard]] std::vector<ScoredHit> search_vector(std::span<const T> query, std::size_t k) const
    {
        if (k == 0) {
            throw Error(ErrorKind::invalid_argument, "search: k must be at least 1");
        }
        std::vector<ScoredHit> hits;
        hits.reserve(ids_.size());
        for (std::size_t i = 0; i < ids_.size(); ++i) {
            hits.push_back({ids_[i], score<T>(query, row(i))});
        }
        keep_top_k(hits, k);
        return hits;
    }

    /// Encodes the query (no title) with `model`, which must be the model
    /// the index was built from.
    [[nodiscard]] std::vector<ScoredHit> search(const EncoderModel<T>& model, std::span<const TokenId> query,
                                                std::size_t k) const
    {
        if (model.fingerprint() != fingerprint_) {
            throw Error(ErrorKind::version_mismatch, "dense index was built with a different model (index "
                                                         + fingerprint_ + ", model " + model.fingerprint() + ")");
        }
        auto q = encode<T>(model, query);
        return search_vector(q, k);
    }

    void write(std::ostream& out, const ArtifactHeader& header) const
    {
        BinaryWriter w(out);
        w.put_magic(kMagic, kVersion);
        w.put_header(header);
        w.put<std::uint32_t>(sizeof(T));
        w.put<std::uint64_t>(dim_);
        w.put<std::uint64_t>(ids_.size());
        w.put_string(fingerprint_);
        for (auto const& id : ids_) {
            w.put_string(id);
        }
        w.put_array(rows_.data(), rows_.size());
        w.check();
    }

    static DenseIndex read(std::istream& in, ArtifactHeader* header = nullptr)
    {
        BinaryReader r(in);
        r.expect_magic(kMagic, kVersion);
        auto h = r.get_header();
        if (header != nullptr) {
            *header = std::move(h);
        }
        if (r.get<std::uint32_t>() != sizeof(T)) {
            throw Error(ErrorKind::version_mismatch, "dense index scalar width differs from the requested type");
        }
        auto const dim = r.get<std::uint64_t>();
        auto const n = r.get<std::uint64_t>();
        auto fp = r.get_string();
        std::vector<std::string> ids;
        for (std::uint64_t i = 0; i < n; ++i) {
            ids.push_back(r.get_string());
        }
        auto rows = r.get_array<T>();
        if (rows.size() != dim * n) {
            throw Error(ErrorKind::malformed_input, "dense index: row data does not match count x dim");
        }
        return DenseIndex(dim, std::move(ids), std::move(rows), std::move(fp));
    }

   private:
    static constexpr std::string_view kMagic = "SPANRET-DENSE";
    static constexpr std::uint32_t kVersion = 1;

    std::size_t dim_ = 0;
    std::vector<std::string> ids_;
    std::vector<T> rows_;
    std::string fingerprint_;
};

} // namespace spanret
