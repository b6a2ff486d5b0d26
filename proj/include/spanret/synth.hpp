#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "corpus.hpp"
#include "error.hpp"
#include "evalkit.hpp"
#include "rng.hpp"
#include "tokenizer.hpp"

namespace spanret {

struct SynthConfig {
    std::size_t docs = 200;
    std::size_t entities = 40;
    std::uint64_t seed = 7;
    std::size_t passage_size = 24;
    std::size_t min_passages = 5;
    std::size_t max_passages = 10;
    std::size_t entities_per_doc = 2;
    std::size_t entity_min_len = 2;
    std::size_t entity_max_len = 4;
    std::size_t max_occurrences = 4;
    /// Words unique-ish to a document and the chance each filler token is
    /// drawn from them instead of the shared background pool.
    std::size_t signature_words = 8;
    double signature_rate = 0.4;
    std::size_t content_pool = 600;
    std::size_t background_pool = 300;

    void validate() const
    {
        if (docs == 0) {
            throw Error(ErrorKind::invalid_argument, "synth: docs must be at least 1");
        }
        if (entities == 0) {
            throw Error(ErrorKind::invalid_argument, "synth: entities must be at least 1");
        }
        if (entity_min_len < 2 || entity_max_len < entity_min_len) {
            throw Error(ErrorKind::invalid_argument, "synth: entity lengths must satisfy 2 <= min <= max");
        }
        if (min_passages < 2 || max_passages < min_passages) {
            throw Error(ErrorKind::invalid_argument, "synth: passages per doc must satisfy 2 <= min <= max");
        }
        if (passage_size < entity_max_len + 2) {
            throw Error(ErrorKind::invalid_argument, "synth: passage_size too small for the entity length");
        }
        if (max_occurrences < 2 || entities_per_doc == 0 || signature_words == 0 || background_pool < 2
            || content_pool < signature_words) {
            throw Error(ErrorKind::invalid_argument, "synth: invalid pool or occurrence settings");
        }
    }

    [[nodiscard]] nlohmann::json to_json() const
    {
        return {{"docs", docs},
                {"entities", entities},
                {"seed", seed},
                {"passage_size", passage_size},
                {"min_passages", min_passages},
                {"max_passages", max_passages},
                {"entities_per_doc", entities_per_doc},
                {"entity_min_len", entity_min_len},
                {"entity_max_len", entity_max_len},
                {"max_occurrences", max_occurrences},
                {"signature_words", signature_words},
                {"signature_rate", signature_rate},
                {"content_pool", content_pool},
                {"background_pool", background_pool}};
    }
};

struct PlantedSpan {
    std::string doc_id;
    std::vector<std::string> tokens;
    /// (passage position, token offset) of every occurrence.
    std::vector<std::pair<std::size_t, std::size_t>> occurrences;
};

struct SynthCorpus {
    std::vector<Document> documents;
    std::vector<PlantedSpan> planted;
    /// One question per planted span: the document's title and a few of its
    /// signature words; the answer is the entity.
    std::vector<QAExample> qa;
};

/// Pronounceable letter strings built from consonant-vowel syllables; none
/// is a stop word and all are distinct.
class PseudoWords {
   public:
    explicit PseudoWords(Rng& rng) : rng_(rng) {}

    std::string next()
    {
        static constexpr std::string_view consonants = "bdfgklmnprstvz";
        static constexpr std::string_view vowels = "aeiou";
        auto const& stop = *StopWords::english();
        for (;;) {
            std::size_t const syllables = 2 + rng_.uniform_index(2);
            std::string w;
            for (std::size_t s = 0; s < syllables; ++s) {
                w += consonants[rng_.uniform_index(consonants.size())];
                w += vowels[rng_.uniform_index(vowels.size())];
            }
            if (!stop.contains(w) && used_.insert(w).second) {
                return w;
            }
        }
    }

    std::vector<std::string> take(std::size_t n)
    {
        std::vector<std::string> out;
        out.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            out.push_back(next());
        }
        return out;
    }

   private:
    Rng& rng_;
    std::unordered_set<std::string> used_;
};

/// Deterministic in the seed. Text is plain words separated by spaces with
/// capitalised entity words and occasional full stops, so tokenization
/// recovers exactly the generated token positions.
[[nodiscard]] inline SynthCorpus synth(const SynthConfig& config)
{
    config.validate();
    Rng rng(derive_seed(config.seed, {0x73796e74ULL}));
    PseudoWords words(rng);
    auto const background = words.take(config.background_pool);
    auto const content = words.take(config.content_pool);
    std::vector<std::vector<std::string>> entities;
    for (std::size_t e = 0; e < config.entities; ++e) {
        auto len = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(config.entity_min_len),
                                                            static_cast<std::int64_t>(config.entity_max_len)));
        entities.push_back(words.take(len));
    }

    SynthCorpus out;
    for (std::size_t d = 0; d < config.docs; ++d) {
        Rng drng(derive_seed(config.seed, {d}));
        std::string const doc_id = "doc" + std::to_string(d);
        std::string const title = words.next();

        std::vector<std::size_t> sig_idx(content.size());
        for (std::size_t i = 0; i < sig_idx.size(); ++i) {
            sig_idx[i] = i;
        }
        drng.shuffle(sig_idx.begin(), sig_idx.end());
        std::vector<std::string> signature;
        for (std::size_t i = 0; i < config.signature_words; ++i) {
            signature.push_back(content[sig_idx[i]]);
        }

        auto const passages = static_cast<std::size_t>(drng.uniform_int(
            static_cast<std::int64_t>(config.min_passages), static_cast<std::int64_t>(config.max_passages)));
        std::vector<std::vector<std::string>> body(passages);
        for (auto& p : body) {
            for (std::size_t t = 0; t < config.passage_size; ++t) {
                p.push_back(drng.bernoulli(config.signature_rate) ? signature[drng.uniform_index(signature.size())]
                                                                  : background[drng.uniform_index(background.size())]);
            }
        }
        std::vector<std::vector<bool>> reserved(passages, std::vector<bool>(config.passage_size, false));
        std::vector<bool> capital(passages * config.passage_size, false);

        std::vector<std::size_t> chosen;
        std::size_t const per_doc = std::min(config.entities_per_doc, config.entities);
        while (chosen.size() < per_doc) {
            auto e = drng.uniform_index(config.entities);
            if (std::find(chosen.begin(), chosen.end(), e) == chosen.end()) {
                chosen.push_back(e);
            }
        }
        for (auto e : chosen) {
            auto const& ent = entities[e];
            std::size_t const len = ent.size();
            std::size_t const max_occ = std::min(config.max_occurrences, passages);
            auto const occ = static_cast<std::size_t>(drng.uniform_int(2, static_cast<std::int64_t>(max_occ)));
            std::vector<std::size_t> order(passages);
            for (std::size_t i = 0; i < passages; ++i) {
                order[i] = i;
            }
            drng.shuffle(order.begin(), order.end());
            PlantedSpan planted{doc_id, ent, {}};
            std::set<std::string> lefts;
            std::set<std::string> rights;
            for (std::size_t k = 0; k < passages && planted.occurrences.size() < occ; ++k) {
                std::size_t const p = order[k];
                // Keep one token either side inside the passage so every
                // occurrence has both neighbours.
                std::size_t placed = SIZE_MAX;
                for (int attempt = 0; attempt < 16 && placed == SIZE_MAX; ++attempt) {
                    std::size_t const start = 1 + drng.uniform_index(config.passage_size - len - 1);
                    bool free = true;
                    for (std::size_t i = start - 1; i <= start + len; ++i) {
                        free = free && !reserved[p][i];
                    }
                    if (free) {
                        placed = start;
                    }
                }
                if (placed == SIZE_MAX) {
                    continue;
                }
                auto& toks = body[p];
                for (std::size_t i = 0; i < len; ++i) {
                    toks[placed + i] = ent[i];
                    capital[p * config.passage_size + placed + i] = true;
                }
                // Distinct neighbours at every occurrence make the planted
                // span maximal; a neighbour is never an entity word.
                while (lefts.count(toks[placed - 1]) > 0) {
                    toks[placed - 1] = background[drng.uniform_index(background.size())];
                }
                while (rights.count(toks[placed + len]) > 0) {
                    toks[placed + len] = background[drng.uniform_index(background.size())];
                }
                lefts.insert(toks[placed - 1]);
                rights.insert(toks[placed + len]);
                for (std::size_t i = placed - 1; i <= placed + len; ++i) {
                    reserved[p][i] = true;
                }
                planted.occurrences.emplace_back(p, placed);
            }
            std::sort(planted.occurrences.begin(), planted.occurrences.end());
            if (planted.occurrences.size() >= 2) {
                std::string question = title;
                for (std::size_t i = 0; i < 3; ++i) {
                    question += ' ' + signature[i];
                }
                std::string answer;
                for (auto const& w : ent) {
                    answer += (answer.empty() ? "" : " ") + w;
                }
                out.qa.push_back({question, {answer}});
                out.planted.push_back(std::move(planted));
            }
        }

        std::string text;
        std::size_t n = 0;
        for (std::size_t p = 0; p < passages; ++p) {
            for (std::size_t t = 0; t < config.passage_size; ++t, ++n) {
                std::string w = body[p][t];
                if (capital[n]) {
                    w[0] = static_cast<char>(w[0] - 'a' + 'A');
                }
                if (drng.bernoulli(0.08)) {
                    w += '.';
                }
                text += (text.empty() ? "" : " ") + w;
            }
        }
        std::string pretty_title = title;
        pretty_title[0] = static_cast<char>(pretty_title[0] - 'a' + 'A');
        out.documents.push_back({doc_id, pretty_title, std::move(text)});
    }
    return out;
}

inline void write_qa_jsonl(std::ostream& out, std::span<const QAExample> qa)
{
    for (auto const& q : qa) {
        out << nlohmann::json{{"question", q.question}, {"answers", q.answers}}.dump() << '\n';
    }
}

} // namespace spanret
