#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "artifact.hpp"
#include "corpus.hpp"
#include "error.hpp"
#include "scored_hit.hpp"
#include "tokenizer.hpp"

namespace spanret {

struct Bm25Params {
    double k1 = 0.9;
    double b = 0.4;
};

struct Posting {
    std::uint32_t passage = 0;
    std::uint32_t tf = 0;

    bool operator==(const Posting&) const = default;
};

/// BM25 over title + [SEP] + body tokens. Terms are keyed by surface, with
/// their own dictionary, so rare words the encoder maps to [UNK] stay
/// searchable. Stop words are indexed.
class SparseIndex {
   public:
    SparseIndex() = default;

    /// `documents[i]` is the token sequence of passage `ids[i]`.
    SparseIndex(std::vector<std::string> ids, std::span<const TokenSeq> documents, Bm25Params params = {})
        : ids_(std::move(ids)), params_(params)
    {
        if (ids_.size() != documents.size()) {
            throw Error(ErrorKind::invalid_argument, "sparse index: id and document counts differ");
        }
        lengths_.reserve(documents.size());
        double total = 0.0;
        for (std::size_t d = 0; d < documents.size(); ++d) {
            std::unordered_map<std::uint32_t, std::uint32_t> counts;
            std::vector<std::uint32_t> order;
            for (auto const& tok : documents[d]) {
                auto [it, inserted] = terms_.emplace(tok.surface, static_cast<std::uint32_t>(postings_.size()));
                if (inserted) {
                    postings_.emplace_back();
                }
                if (counts[it->second]++ == 0) {
                    order.push_back(it->second);
                }
            }
            for (auto t : order) {
                postings_[t].push_back({static_cast<std::uint32_t>(d), counts[t]});
            }
            lengths_.push_back(static_cast<std::uint32_t>(documents[d].size()));
            total += static_cast<double>(documents[d].size());
        }
        avg_length_ = documents.empty() ? 0.0 : total / static_cast<double>(documents.size());
    }

    static SparseIndex build(const Corpus& corpus, Bm25Params params = {})
    {
        std::vector<std::string> ids;
        ids.reserve(corpus.size());
        for (auto const& p : corpus.passages()) {
            ids.push_back(p.passage_id);
        }
        auto docs = titled_passages(corpus);
        return SparseIndex(std::move(ids), docs, params);
    }

    [[nodiscard]] std::size_t size() const { return ids_.size(); }
    [[nodiscard]] double avg_length() const { return avg_length_; }
    [[nodiscard]] const Bm25Params& params() const { return params_; }
    [[nodiscard]] std::span<const std::uint32_t> lengths() const { return lengths_; }
    [[nodiscard]] const std::string& passage_id(std::size_t ordinal) const { return ids_.at(ordinal); }
    [[nodiscard]] std::size_t term_count() const { return postings_.size(); }

    [[nodiscard]] std::span<const Posting> postings(const std::string& term) const
    {
        auto it = terms_.find(term);
        if (it == terms_.end()) {
            return {};
        }
        return postings_[it->second];
    }

    [[nodiscard]] double idf(std::size_t df) const
    {
        auto const n = static_cast<double>(ids_.size());
        auto const f = static_cast<double>(df);
        return std::log(1.0 + (n - f + 0.5) / (f + 0.5));
    }

    [[nodiscard]] double bm25_score(const TokenSeq& query, std::size_t ordinal) const
    {
        if (ordinal >= ids_.size()) {
            throw Error(ErrorKind::invalid_argument, "bm25_score: passage ordinal out of range");
        }
        double s = 0.0;
        for (auto t : distinct_terms(query)) {
            auto const& list = postings_[t];
            auto it = std::lower_bound(list.begin(), list.end(), ordinal,
                                       [](const Posting& p, std::size_t o) { return p.passage < o; });
            if (it != list.end() && it->passage == ordinal) {
                s += term_weight(list.size(), it->tf, lengths_[ordinal]);
            }
        }
        return s;
    }

    /// Exact top-k among passages with a positive score.
    [[nodiscard]] std::vector<ScoredHit> search(const TokenSeq& query, std::size_t k) const
    {
        if (k == 0) {
            throw Error(ErrorKind::invalid_argument, "search: k must be at least 1");
        }
        std::vector<double> acc(ids_.size(), 0.0);
        std::vector<std::uint32_t> touched;
        for (auto t : distinct_terms(query)) {
            auto const& list = postings_[t];
            for (auto const& p : list) {
                if (acc[p.passage] == 0.0) {
                    touched.push_back(p.passage);
                }
                acc[p.passage] += term_weight(list.size(), p.tf, lengths_[p.passage]);
            }
        }
        std::vector<ScoredHit> hits;
        for (auto d : touched) {
            if (acc[d] > 0.0) {
                hits.push_back({ids_[d], acc[d]});
                acc[d] = -1.0; // guard against double insertion
            }
        }
        keep_top_k(hits, k);
        return hits;
    }

    void write(std::ostream& out, const ArtifactHeader& header) const
    {
        BinaryWriter w(out);
        w.put_magic(kMagic, kVersion);
        w.put_header(header);
        w.put<double>(params_.k1);
        w.put<double>(params_.b);
        w.put<std::uint64_t>(ids_.size());
        for (auto const& id : ids_) {
            w.put_string(id);
        }
        w.put_array(lengths_.data(), lengths_.size());
        std::vector<const std::string*> by_id(postings_.size());
        for (auto const& [term, id] : terms_) {
            by_id[id] = &term;
        }
        w.put<std::uint64_t>(postings_.size());
        for (std::size_t t = 0; t < postings_.size(); ++t) {
            w.put_string(*by_id[t]);
            w.put_array(postings_[t].data(), postings_[t].size());
        }
        w.check();
    }

    static SparseIndex read(std::istream& in, ArtifactHeader* header = nullptr)
    {
        BinaryReader r(in);
        r.expect_magic(kMagic, kVersion);
        auto h = r.get_header();
        if (header != nullptr) {
            *header = std::move(h);
        }
        SparseIndex idx;
        idx.params_.k1 = r.get<double>();
        idx.params_.b = r.get<double>();
        auto const n = r.get<std::uint64_t>();
        for (std::uint64_t i = 0; i < n; ++i) {
            idx.ids_.push_back(r.get_string());
        }
        idx.lengths_ = r.get_array<std::uint32_t>();
        if (idx.lengths_.size() != n) {
            throw Error(ErrorKind::malformed_input, "sparse index: length table does not match passage count");
        }
        double total = 0.0;
        for (auto l : idx.lengths_) {
            total += l;
        }
        idx.avg_length_ = n == 0 ? 0.0 : total / static_cast<double>(n);
        auto const terms = r.get<std::uint64_t>();
        for (std::uint64_t t = 0; t < terms; ++t) {
            auto term = r.get_string();
            auto list = r.get_array<Posting>();
            for (auto const& p : list) {
                if (p.passage >= n) {
                    throw Error(ErrorKind::malformed_input, "sparse index: posting out of range");
                }
            }
            idx.terms_.emplace(std::move(term), static_cast<std::uint32_t>(t));
            idx.postings_.push_back(std::move(list));
        }
        return idx;
    }

   private:
    static constexpr std::string_view kMagic = "SPANRET-BM25";
    static constexpr std::uint32_t kVersion = 1;

    [[nodiscard]] std::vector<std::uint32_t> distinct_terms(const TokenSeq& query) const
    {
        std::vector<std::uint32_t> out;
        std::unordered_set<std::uint32_t> seen;
        for (auto const& tok : query) {
            auto it = terms_.find(tok.surface);
            if (it != terms_.end() && seen.insert(it->second).second) {
                out.push_back(it->second);
            }
        }
        return out;
    }

    [[nodiscard]] double term_weight(std::size_t df, std::uint32_t tf, std::uint32_t length) const
    {
        double const f = tf;
        double const norm = params_.k1 * (1.0 - params_.b + params_.b * static_cast<double>(length) / avg_length_);
        return idf(df) * f / (f + norm);
    }

    std::vector<std::string> ids_;
    Bm25Params params_;
    std::vector<std::uint32_t> lengths_;
    double avg_length_ = 0.0;
    std::unordered_map<std::string, std::uint32_t> terms_;
    std::vector<std::vector<Posting>> postings_;
};

} // namespace spanret
