#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "artifact.hpp"
#include "corpus.hpp"
#include "error.hpp"
#include "threads.hpp"
#include "tokenizer.hpp"

namespace spanret {

struct SpanOccurrence {
    std::string passage_id;
    std::size_t start = 0;
    std::size_t length = 0;

    friend bool operator==(const SpanOccurrence&, const SpanOccurrence&) = default;
};

struct RecurringSpan {
    std::string doc_id;
    TokenSeq tokens;
    std::vector<SpanOccurrence> occurrences;
    /// Distinct passages containing the span, in document order.
    std::vector<std::string> passage_set;
};

struct MinerConfig {
    std::size_t min_len = 2;
    std::size_t max_len = 10;
};

/// Per-filter accounting over distinct n-grams (by content) within the
/// length bounds. Filter (1), whole words only, holds trivially for word
/// tokens; the length filters are enforced by enumeration.
struct MineStats {
    std::size_t documents = 0;
    std::size_t repeated_single_passage = 0;
    std::size_t cross_passage = 0;
    std::size_t rejected_stopwords = 0;
    std::size_t rejected_non_maximal = 0;
    std::size_t accepted = 0;

    MineStats& operator+=(const MineStats& o)
    {
        documents += o.documents;
        repeated_single_passage += o.repeated_single_passage;
        cross_passage += o.cross_passage;
        rejected_stopwords += o.rejected_stopwords;
        rejected_non_maximal += o.rejected_non_maximal;
        accepted += o.accepted;
        return *this;
    }
};

namespace detail {

struct NgramPos {
    std::uint32_t passage;
    std::uint32_t start;
};

struct NgramGroup {
    std::vector<NgramPos> occurrences;
};

} // namespace detail

/// Cross-passage recurring spans of one document.
///
/// A span is an n-gram, min_len <= n <= max_len, occurring in at least two
/// distinct passages, with at least one non-stop-word token, that is
/// maximal: it is dropped when every occurrence has the same left neighbour
/// (or the same right neighbour) and the extended n-gram still fits within
/// max_len, since that extension recurs at exactly the same places.
///
/// N-grams are grouped by a polynomial hash over interned token ids;
/// colliding groups are separated by exact comparison.
[[nodiscard]] inline std::vector<RecurringSpan> mine_document(std::span<const Passage> passages,
                                                              const MinerConfig& config,
                                                              MineStats* stats = nullptr)
{
    if (config.min_len < 1 || config.max_len < config.min_len) {
        throw Error(ErrorKind::invalid_argument, "span length bounds require 1 <= min_len <= max_len");
    }
    std::vector<RecurringSpan> result;
    MineStats local;
    local.documents = 1;
    if (passages.empty()) {
        if (stats != nullptr) {
            *stats += local;
        }
        return result;
    }

    std::unordered_map<std::string, std::uint32_t> intern;
    std::vector<bool> is_stop;
    std::vector<std::vector<std::uint32_t>> ids(passages.size());
    for (std::size_t p = 0; p < passages.size(); ++p) {
        for (auto const& t : passages[p].tokens) {
            auto [it, inserted] = intern.emplace(t.surface, static_cast<std::uint32_t>(is_stop.size()));
            if (inserted) {
                is_stop.push_back(t.is_stopword);
            }
            ids[p].push_back(it->second);
        }
    }

    constexpr std::uint64_t kBase = 0x100000001b3ULL;
    // hashes[p][s] holds the hash of the n-gram of the current length at s.
    std::vector<std::vector<std::uint64_t>> hashes(passages.size());
    for (std::size_t p = 0; p < passages.size(); ++p) {
        hashes[p].assign(ids[p].size(), 0);
    }

    auto same_content = [&](detail::NgramPos a, detail::NgramPos b, std::size_t n) {
        return std::equal(ids[a.passage].begin() + a.start, ids[a.passage].begin() + a.start + n,
                          ids[b.passage].begin() + b.start);
    };

    struct Found {
        detail::NgramPos first;
        std::size_t length;
        std::vector<detail::NgramPos> occurrences;
    };
    std::vector<Found> found;

    for (std::size_t n = 1; n <= config.max_len; ++n) {
        std::unordered_map<std::uint64_t, std::vector<std::size_t>> buckets;
        std::vector<detail::NgramGroup> groups;
        for (std::size_t p = 0; p < passages.size(); ++p) {
            auto const& seq = ids[p];
            if (seq.size() < n) {
                continue;
            }
            for (std::size_t s = 0; s + n <= seq.size(); ++s) {
                hashes[p][s] = hashes[p][s] * kBase + (seq[s + n - 1] + 1);
            }
            if (n < config.min_len) {
                continue;
            }
            for (std::size_t s = 0; s + n <= seq.size(); ++s) {
                detail::NgramPos pos{static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(s)};
                auto& bucket = buckets[hashes[p][s]];
                auto match = std::find_if(bucket.begin(), bucket.end(), [&](std::size_t g) {
                    return same_content(groups[g].occurrences.front(), pos, n);
                });
                if (match == bucket.end()) {
                    bucket.push_back(groups.size());
                    groups.push_back({{pos}});
                } else {
                    groups[*match].occurrences.push_back(pos);
                }
            }
        }

        for (auto& g : groups) {
            auto const& occ = g.occurrences;
            bool const multi_passage = occ.front().passage != occ.back().passage;
            if (!multi_passage) {
                if (occ.size() > 1) {
                    ++local.repeated_single_passage;
                }
                continue;
            }
            ++local.cross_passage;
            auto const& first = occ.front();
            bool all_stop = true;
            for (std::size_t i = 0; i < n; ++i) {
                all_stop = all_stop && is_stop[ids[first.passage][first.start + i]];
            }
            if (all_stop) {
                ++local.rejected_stopwords;
                continue;
            }
            if (n < config.max_len) {
                auto uniform_neighbour = [&](bool left) {
                    std::optional<std::uint32_t> common;
                    for (auto const& o : occ) {
                        auto const& seq = ids[o.passage];
                        if (left ? o.start == 0 : o.start + n >= seq.size()) {
                            return false;
                        }
                        auto const t = left ? seq[o.start - 1] : seq[o.start + n];
                        if (common && *common != t) {
                            return false;
                        }
                        common = t;
                    }
                    return true;
                };
                if (uniform_neighbour(true) || uniform_neighbour(false)) {
                    ++local.rejected_non_maximal;
                    continue;
                }
            }
            ++local.accepted;
            found.push_back({first, n, std::move(g.occurrences)});
        }
    }

    std::sort(found.begin(), found.end(), [](const Found& a, const Found& b) {
        if (a.first.passage != b.first.passage) {
            return a.first.passage < b.first.passage;
        }
        if (a.first.start != b.first.start) {
            return a.first.start < b.first.start;
        }
        return a.length < b.length;
    });

    for (auto const& f : found) {
        RecurringSpan span;
        span.doc_id = passages[0].doc_id;
        auto const& src = passages[f.first.passage].tokens;
        span.tokens.assign(src.begin() + f.first.start, src.begin() + f.first.start + f.length);
        for (auto const& o : f.occurrences) {
            auto const& pid = passages[o.passage].passage_id;
            span.occurrences.push_back({pid, o.start, f.length});
            if (span.passage_set.empty() || span.passage_set.back() != pid) {
                span.passage_set.push_back(pid);
            }
        }
        result.push_back(std::move(span));
    }
    if (stats != nullptr) {
        *stats += local;
    }
    return result;
}

/// Spans grouped by document, documents in corpus order. Documents without
/// spans are omitted.
class SpanStore {
   public:
    struct DocSpans {
        std::string doc_id;
        std::vector<RecurringSpan> spans;
    };

    void add(std::string doc_id, std::vector<RecurringSpan> spans)
    {
        if (spans.empty()) {
            return;
        }
        lookup_.emplace(doc_id, docs_.size());
        docs_.push_back({std::move(doc_id), std::move(spans)});
    }

    [[nodiscard]] std::span<const DocSpans> documents() const { return docs_; }

    [[nodiscard]] const std::vector<RecurringSpan>* spans_for(const std::string& doc_id) const
    {
        auto it = lookup_.find(doc_id);
        return it == lookup_.end() ? nullptr : &docs_[it->second].spans;
    }

    [[nodiscard]] std::size_t span_count() const
    {
        std::size_t n = 0;
        for (auto const& d : docs_) {
            n += d.spans.size();
        }
        return n;
    }

    [[nodiscard]] bool empty() const { return docs_.empty(); }

   private:
    std::vector<DocSpans> docs_;
    std::unordered_map<std::string, std::size_t> lookup_;
};

struct MineResult {
    SpanStore store;
    MineStats stats;
};

/// Mines every document. Documents are independent, so they are sharded
/// across workers and merged back in corpus order.
[[nodiscard]] inline MineResult mine_corpus(const Corpus& corpus, const MinerConfig& config,
                                            std::size_t threads = 1)
{
    auto const docs = corpus.documents();
    std::vector<std::vector<RecurringSpan>> per_doc(docs.size());
    std::vector<MineStats> per_doc_stats(docs.size());
    parallel_shards(docs.size(), threads, [&](std::size_t d) {
        try {
            per_doc[d] = mine_document(corpus.document_passages(docs[d]), config, &per_doc_stats[d]);
        } catch (Error const& e) {
            throw Error(e.kind(), "document " + docs[d].doc_id + ": " + e.what());
        }
    });
    MineResult result;
    for (std::size_t d = 0; d < docs.size(); ++d) {
        result.stats += per_doc_stats[d];
        result.store.add(docs[d].doc_id, std::move(per_doc[d]));
    }
    return result;
}

inline constexpr std::string_view kSpanStoreMagic = "spanret-spans";
inline constexpr std::uint32_t kSpanStoreVersion = 1;

inline void write_span_store(std::ostream& out, const SpanStore& store, const ArtifactHeader& header)
{
    out << header_to_json(kSpanStoreMagic, kSpanStoreVersion, header).dump() << '\n';
    for (auto const& doc : store.documents()) {
        for (auto const& s : doc.spans) {
            nlohmann::json j;
            j["doc_id"] = s.doc_id;
            j["tokens"] = surfaces(s.tokens);
            auto occ = nlohmann::json::array();
            for (auto const& o : s.occurrences) {
                occ.push_back({{"passage_id", o.passage_id}, {"start", o.start}, {"length", o.length}});
            }
            j["occurrences"] = std::move(occ);
            j["passage_set"] = s.passage_set;
            out << j.dump() << '\n';
        }
    }
}

struct SpanStoreFile {
    ArtifactHeader header;
    SpanStore store;
};

[[nodiscard]] inline SpanStoreFile read_span_store(std::istream& in, const Tokenizer& tokenizer)
{
    SpanStoreFile file;
    file.header = read_jsonl_header(in, kSpanStoreMagic, kSpanStoreVersion);
    std::string line;
    std::size_t lineno = 1;
    std::string current;
    std::vector<RecurringSpan> pending;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        RecurringSpan s;
        try {
            auto j = nlohmann::json::parse(line);
            s.doc_id = j.at("doc_id").get<std::string>();
            s.tokens = tokenizer.make_tokens(j.at("tokens").get<std::vector<std::string>>());
            for (auto const& o : j.at("occurrences")) {
                s.occurrences.push_back({o.at("passage_id").get<std::string>(), o.at("start").get<std::size_t>(),
                                         o.at("length").get<std::size_t>()});
            }
            s.passage_set = j.at("passage_set").get<std::vector<std::string>>();
        } catch (nlohmann::json::exception const& e) {
            throw Error(ErrorKind::malformed_input, "spans line " + std::to_string(lineno) + ": " + e.what());
        }
        if (s.doc_id != current && !pending.empty()) {
            file.store.add(current, std::move(pending));
            pending.clear();
        }
        current = s.doc_id;
        pending.push_back(std::move(s));
    }
    if (!pending.empty()) {
        file.store.add(current, std::move(pending));
    }
    return file;
}

} // namespace spanret
