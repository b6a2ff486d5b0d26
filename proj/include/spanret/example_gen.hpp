#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "artifact.hpp"
#include "corpus.hpp"
#include "error.hpp"
#include "rng.hpp"
#include "span_miner.hpp"
#include "tokenizer.hpp"

namespace spanret {

enum class TransformMode {
    window_alternate,
    window_keep,
    window_remove,
    prefix,
    whole_passage_mask,
};

[[nodiscard]] inline std::string_view to_string(TransformMode mode)
{
    switch (mode) {
    case TransformMode::window_alternate: return "window_alternate";
    case TransformMode::window_keep: return "window_keep";
    case TransformMode::window_remove: return "window_remove";
    case TransformMode::prefix: return "prefix";
    case TransformMode::whole_passage_mask: return "whole_passage_mask";
    }
    return "?";
}

[[nodiscard]] inline TransformMode parse_transform_mode(std::string_view name)
{
    for (auto m : {TransformMode::window_alternate, TransformMode::window_keep, TransformMode::window_remove,
                   TransformMode::prefix, TransformMode::whole_passage_mask}) {
        if (to_string(m) == name) {
            return m;
        }
    }
    throw Error(ErrorKind::invalid_argument, "unknown transform mode: " + std::string(name));
}

[[nodiscard]] inline bool is_window_mode(TransformMode mode)
{
    return mode == TransformMode::window_alternate || mode == TransformMode::window_keep
           || mode == TransformMode::window_remove;
}

struct WindowBounds {
    std::size_t min_len = 5;
    std::size_t max_len = 30;
};

struct QueryTransform {
    TokenSeq tokens;
    bool span_kept = false;
};

/// Turns the query passage into a pseudo-query around the span occurrence.
/// Returns nullopt when no valid query exists (the caller skips the span).
[[nodiscard]] inline std::optional<QueryTransform> transform_query(const TokenSeq& passage,
                                                                   const SpanOccurrence& occ, TransformMode mode,
                                                                   Rng& rng, WindowBounds window = {},
                                                                   double keep_probability = 0.5)
{
    std::size_t const n = passage.size();
    if (occ.length == 0 || occ.start + occ.length > n) {
        throw Error(ErrorKind::invalid_argument, "span occurrence lies outside the passage");
    }
    std::size_t const span_end = occ.start + occ.length;
    auto slice = [&](std::size_t b, std::size_t e) {
        return TokenSeq(passage.begin() + static_cast<std::ptrdiff_t>(b),
                        passage.begin() + static_cast<std::ptrdiff_t>(e));
    };

    if (mode == TransformMode::whole_passage_mask) {
        QueryTransform q;
        q.tokens = slice(0, occ.start);
        q.tokens.push_back(Vocabulary::special(Vocabulary::mask));
        auto rest = slice(span_end, n);
        q.tokens.insert(q.tokens.end(), rest.begin(), rest.end());
        return q;
    }

    if (mode == TransformMode::prefix) {
        std::size_t const longest = std::min(occ.start, window.max_len);
        if (longest == 0) {
            return std::nullopt;
        }
        auto const len = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(longest)));
        return QueryTransform{slice(occ.start - len, occ.start), false};
    }

    if (occ.length > window.max_len) {
        return std::nullopt;
    }
    auto len = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(window.min_len), static_cast<std::int64_t>(window.max_len)));
    len = std::min(std::max(len, occ.length), n);
    // Windows [s, s + len) with s <= occ.start and s + len >= span_end.
    std::size_t const lo = span_end > len ? span_end - len : 0;
    std::size_t const hi = std::min(occ.start, n - len);
    auto const s = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));

    bool keep = mode == TransformMode::window_keep;
    if (mode == TransformMode::window_alternate) {
        keep = rng.bernoulli(keep_probability);
    }
    QueryTransform q;
    q.span_kept = keep;
    if (keep) {
        q.tokens = slice(s, s + len);
    } else {
        q.tokens = slice(s, occ.start);
        auto right = slice(span_end, s + len);
        q.tokens.insert(q.tokens.end(), right.begin(), right.end());
        if (q.tokens.empty()) {
            return std::nullopt;
        }
    }
    return q;
}

struct SeedRecord {
    std::uint64_t seed = 0;
    std::uint64_t epoch = 0;
    std::uint64_t doc_index = 0;
    std::uint64_t span_index = 0;
    std::uint64_t example_seed = 0;

    friend bool operator==(const SeedRecord&, const SeedRecord&) = default;
};

struct PseudoExample {
    TokenSeq query;
    std::string positive_id;
    std::optional<std::string> negative_id;
    TokenSeq span;
    bool span_kept = false;
    SeedRecord seed_record;
};

struct GenerateConfig {
    TransformMode mode = TransformMode::window_alternate;
    bool negatives = true;
    std::size_t per_doc_cap = 1;
    std::uint64_t seed = 0;
    std::size_t epochs = 1;
    WindowBounds window;
    double keep_probability = 0.5;
};

struct GenerateStats {
    std::size_t emitted = 0;
    std::size_t skipped_no_negative = 0;
    std::size_t skipped_no_query = 0;
};

/// Samples (query, positive, negative) triples from mined spans.
///
/// Every document and every sampled span draws from its own stream derived
/// from (seed, epoch, document, span), so the output is a pure function of
/// the inputs and shards can be generated independently.
[[nodiscard]] inline std::vector<PseudoExample> generate(const Corpus& corpus, const SpanStore& store,
                                                         const GenerateConfig& config,
                                                         GenerateStats* stats = nullptr)
{
    if (config.per_doc_cap == 0) {
        throw Error(ErrorKind::invalid_argument, "per_doc_cap must be positive");
    }
    GenerateStats local;
    std::vector<PseudoExample> out;
    auto const docs = store.documents();

    // Validate once up front so a mismatch is reported before any output.
    for (auto const& doc : docs) {
        auto const* range = corpus.find_document(doc.doc_id);
        if (range == nullptr) {
            throw Error(ErrorKind::not_found, "span store document not in corpus: " + doc.doc_id);
        }
        for (auto const& span : doc.spans) {
            for (auto const& o : span.occurrences) {
                auto ord = corpus.find_passage(o.passage_id);
                if (!ord || *ord < range->begin || *ord >= range->end) {
                    throw Error(ErrorKind::not_found,
                                "span store/corpus mismatch in document " + doc.doc_id + ": " + o.passage_id);
                }
                auto const& toks = corpus.passage(*ord).tokens;
                if (o.start + o.length > toks.size()
                    || !std::equal(span.tokens.begin(), span.tokens.end(), toks.begin() + static_cast<std::ptrdiff_t>(o.start))) {
                    throw Error(ErrorKind::not_found,
                                "span store/corpus mismatch in document " + doc.doc_id + ": " + o.passage_id);
                }
            }
        }
    }

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t d = 0; d < docs.size(); ++d) {
            auto const& doc = docs[d];
            auto const& range = *corpus.find_document(doc.doc_id);
            auto const doc_passages = corpus.document_passages(range);

            Rng doc_rng(derive_seed(config.seed, {epoch, d}));
            std::vector<std::size_t> order(doc.spans.size());
            for (std::size_t i = 0; i < order.size(); ++i) {
                order[i] = i;
            }
            std::size_t const take = std::min(config.per_doc_cap, order.size());
            for (std::size_t i = 0; i < take; ++i) {
                auto j = i + doc_rng.uniform_index(order.size() - i);
                std::swap(order[i], order[j]);
            }

            for (std::size_t i = 0; i < take; ++i) {
                auto const& span = doc.spans[order[i]];
                std::uint64_t const example_seed = derive_seed(config.seed, {epoch, d, order[i]});
                Rng rng(example_seed);

                auto const& set = span.passage_set;
                auto const& query_id = set[rng.uniform_index(set.size())];
                std::vector<const SpanOccurrence*> in_query;
                for (auto const& o : span.occurrences) {
                    if (o.passage_id == query_id) {
                        in_query.push_back(&o);
                    }
                }
                auto const& occ = *in_query[rng.uniform_index(in_query.size())];

                std::vector<const std::string*> positives;
                for (auto const& pid : set) {
                    if (pid != query_id) {
                        positives.push_back(&pid);
                    }
                }
                auto const& positive_id = *positives[rng.uniform_index(positives.size())];

                std::optional<std::string> negative_id;
                if (config.negatives) {
                    std::unordered_set<std::string> const containing(set.begin(), set.end());
                    std::vector<const std::string*> pool;
                    for (auto const& p : doc_passages) {
                        if (containing.count(p.passage_id) == 0) {
                            pool.push_back(&p.passage_id);
                        }
                    }
                    if (pool.empty()) {
                        ++local.skipped_no_negative;
                        continue;
                    }
                    negative_id = *pool[rng.uniform_index(pool.size())];
                }

                auto const& query_passage = corpus.passage(*corpus.find_passage(query_id));
                auto q = transform_query(query_passage.tokens, occ, config.mode, rng, config.window,
                                         config.keep_probability);
                if (!q) {
                    ++local.skipped_no_query;
                    continue;
                }
                PseudoExample ex;
                ex.query = std::move(q->tokens);
                ex.span_kept = q->span_kept;
                ex.positive_id = positive_id;
                ex.negative_id = std::move(negative_id);
                ex.span = span.tokens;
                ex.seed_record = {config.seed, epoch, d, order[i], example_seed};
                out.push_back(std::move(ex));
                ++local.emitted;
            }
        }
    }
    if (stats != nullptr) {
        *stats = local;
    }
    return out;
}

inline constexpr std::string_view kExampleMagic = "spanret-examples";
inline constexpr std::uint32_t kExampleVersion = 1;

[[nodiscard]] inline nlohmann::json example_to_json(const PseudoExample& ex)
{
    nlohmann::json j;
    j["query"] = surfaces(ex.query);
    j["positive_id"] = ex.positive_id;
    j["negative_id"] = ex.negative_id ? nlohmann::json(*ex.negative_id) : nlohmann::json(nullptr);
    j["span"] = surfaces(ex.span);
    j["span_kept"] = ex.span_kept;
    j["seed_record"] = {{"seed", ex.seed_record.seed},
                        {"epoch", ex.seed_record.epoch},
                        {"doc_index", ex.seed_record.doc_index},
                        {"span_index", ex.seed_record.span_index},
                        {"example_seed", ex.seed_record.example_seed}};
    return j;
}

inline void write_examples(std::ostream& out, const std::vector<PseudoExample>& examples,
                           const ArtifactHeader& header)
{
    out << header_to_json(kExampleMagic, kExampleVersion, header).dump() << '\n';
    for (auto const& ex : examples) {
        out << example_to_json(ex).dump() << '\n';
    }
}

struct ExampleFile {
    ArtifactHeader header;
    std::vector<PseudoExample> examples;
};

[[nodiscard]] inline ExampleFile read_examples(std::istream& in, const Tokenizer& tokenizer)
{
    ExampleFile file;
    file.header = read_jsonl_header(in, kExampleMagic, kExampleVersion);
    std::string line;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        try {
            auto j = nlohmann::json::parse(line);
            PseudoExample ex;
            ex.query = tokenizer.make_tokens(j.at("query").get<std::vector<std::string>>());
            ex.positive_id = j.at("positive_id").get<std::string>();
            if (!j.at("negative_id").is_null()) {
                ex.negative_id = j.at("negative_id").get<std::string>();
            }
            ex.span = tokenizer.make_tokens(j.at("span").get<std::vector<std::string>>());
            ex.span_kept = j.at("span_kept").get<bool>();
            auto const& r = j.at("seed_record");
            ex.seed_record = {r.at("seed").get<std::uint64_t>(), r.at("epoch").get<std::uint64_t>(),
                              r.at("doc_index").get<std::uint64_t>(), r.at("span_index").get<std::uint64_t>(),
                              r.at("example_seed").get<std::uint64_t>()};
            file.examples.push_back(std::move(ex));
        } catch (nlohmann::json::exception const& e) {
            throw Error(ErrorKind::malformed_input, "examples line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return file;
}

} // namespace spanret
