#pragma once

#include <algorithm>
#include <cstdio>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "corpus.hpp"
#include "dense_index.hpp"
#include "encoder.hpp"
#include "error.hpp"
#include "example_gen.hpp"
#include "scored_hit.hpp"
#include "threads.hpp"
#include "tokenizer.hpp"

namespace spanret {

struct QAExample {
    std::string question;
    std::vector<std::string> answers;
};

[[nodiscard]] inline std::vector<QAExample> read_qa_jsonl(std::istream& in, const Tokenizer& tokenizer)
{
    std::vector<QAExample> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        auto const where = "qa line " + std::to_string(line_no) + ": ";
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (nlohmann::json::exception const& e) {
            throw Error(ErrorKind::malformed_input, where + e.what());
        }
        if (!j.is_object() || !j.contains("question") || !j["question"].is_string() || !j.contains("answers")
            || !j["answers"].is_array() || j["answers"].empty()) {
            throw Error(ErrorKind::malformed_input, where + "expected {\"question\": string, \"answers\": [string...]}");
        }
        QAExample ex{j["question"].get<std::string>(), {}};
        for (auto const& a : j["answers"]) {
            if (!a.is_string() || tokenizer.tokenize(a.get<std::string>()).empty()) {
                throw Error(ErrorKind::malformed_input, where + "answers must be non-empty strings");
            }
            ex.answers.push_back(a.get<std::string>());
        }
        out.push_back(std::move(ex));
    }
    return out;
}

/// True when some answer's tokens occur contiguously in title + [SEP] + body.
[[nodiscard]] inline bool has_answer(const Passage& passage, std::span<const TokenSeq> answers)
{
    auto const text = passage_text_with_title(passage);
    for (auto const& a : answers) {
        if (!a.empty() && std::search(text.begin(), text.end(), a.begin(), a.end()) != text.end()) {
            return true;
        }
    }
    return false;
}

struct EvalReport {
    std::string retriever;
    nlohmann::json config = nlohmann::json::object();
    std::vector<std::size_t> ks;
    std::vector<double> accuracy;
    /// 1-based rank of the first answer-bearing hit; nullopt when none was
    /// found within max(ks) or the question failed.
    std::vector<std::optional<std::size_t>> ranks;
    std::vector<bool> failed;
    std::size_t failed_count = 0;

    [[nodiscard]] double at(std::size_t k) const
    {
        auto it = std::find(ks.begin(), ks.end(), k);
        if (it == ks.end()) {
            throw Error(ErrorKind::invalid_argument, "report has no accuracy for k=" + std::to_string(k));
        }
        return accuracy[static_cast<std::size_t>(it - ks.begin())];
    }

    [[nodiscard]] nlohmann::json to_json() const
    {
        nlohmann::json acc = nlohmann::json::object();
        for (std::size_t i = 0; i < ks.size(); ++i) {
            acc[std::to_string(ks[i])] = accuracy[i];
        }
        return {{"retriever", retriever},     {"config", config},
                {"questions", ranks.size()},  {"failed", failed_count},
                {"accuracy", acc}};
    }

    void write_ranks_csv(std::ostream& out) const
    {
        out << "question,rank,failed\n";
        for (std::size_t i = 0; i < ranks.size(); ++i) {
            out << i << ',' << (ranks[i] ? std::to_string(*ranks[i]) : std::string()) << ','
                << (failed[i] ? 1 : 0) << '\n';
        }
    }
};

namespace detail {

inline void check_ks(std::span<const std::size_t> ks)
{
    if (ks.empty() || ks.front() == 0 || !std::is_sorted(ks.begin(), ks.end())
        || std::adjacent_find(ks.begin(), ks.end()) != ks.end()) {
        throw Error(ErrorKind::invalid_argument, "ks must be non-empty, positive and strictly increasing");
    }
}

/// Accuracy over the questions that did not fail.
inline void fill_accuracy(EvalReport& r)
{
    std::size_t const evaluated = r.ranks.size() - r.failed_count;
    r.accuracy.assign(r.ks.size(), 0.0);
    if (evaluated == 0) {
        return;
    }
    for (std::size_t i = 0; i < r.ks.size(); ++i) {
        std::size_t hits = 0;
        for (std::size_t q = 0; q < r.ranks.size(); ++q) {
            if (!r.failed[q] && r.ranks[q] && *r.ranks[q] <= r.ks[i]) {
                ++hits;
            }
        }
        r.accuracy[i] = static_cast<double>(hits) / static_cast<double>(evaluated);
    }
}

} // namespace detail

using Retriever = std::function<std::vector<ScoredHit>(const std::string& question, std::size_t k)>;

/// Retrieves max(ks) hits once per question. A retriever exception marks the
/// question failed; failed questions are excluded from the accuracy.
[[nodiscard]] inline EvalReport evaluate(const Retriever& retriever, const Corpus& corpus,
                                         const Tokenizer& tokenizer, std::span<const QAExample> qa,
                                         std::vector<std::size_t> ks, std::string retriever_name = {},
                                         nlohmann::json config = nlohmann::json::object(), std::size_t threads = 1)
{
    if (qa.empty()) {
        throw Error(ErrorKind::invalid_argument, "evaluate: empty QA set");
    }
    detail::check_ks(ks);
    EvalReport r;
    r.retriever = std::move(retriever_name);
    r.config = std::move(config);
    r.ks = std::move(ks);
    r.ranks.assign(qa.size(), std::nullopt);
    std::vector<char> failed(qa.size(), 0);
    std::size_t const depth = r.ks.back();
    std::size_t const shards = std::min<std::size_t>(qa.size(), 64);
    parallel_shards(shards, threads, [&](std::size_t shard) {
        auto [begin, end] = shard_range(qa.size(), shards, shard);
        for (std::size_t q = begin; q < end; ++q) {
            std::vector<TokenSeq> answers;
            for (auto const& a : qa[q].answers) {
                answers.push_back(tokenizer.tokenize(a));
            }
            try {
                auto hits = retriever(qa[q].question, depth);
                for (std::size_t i = 0; i < hits.size() && i < depth; ++i) {
                    auto ord = corpus.find_passage(hits[i].passage_id);
                    if (!ord) {
                        throw Error(ErrorKind::not_found, "retrieved unknown passage " + hits[i].passage_id);
                    }
                    if (has_answer(corpus.passage(*ord), answers)) {
                        r.ranks[q] = i + 1;
                        break;
                    }
                }
            } catch (std::exception const&) {
                failed[q] = 1;
                r.ranks[q] = std::nullopt;
            }
        }
    });
    r.failed.assign(failed.begin(), failed.end());
    r.failed_count = static_cast<std::size_t>(std::count(failed.begin(), failed.end(), 1));
    detail::fill_accuracy(r);
    return r;
}

/// Pseudo-query retrieval: the positive passage is the only gold passage.
template <typename T>
[[nodiscard]] EvalReport pseudo_eval(const EncoderModel<T>& model, const DenseIndex<T>& index,
                                     const Corpus& corpus, const Vocabulary& vocab,
                                     std::span<const PseudoExample> examples, std::vector<std::size_t> ks,
                                     std::size_t threads = 1)
{
    if (examples.empty()) {
        throw Error(ErrorKind::invalid_argument, "pseudo_eval: no examples");
    }
    detail::check_ks(ks);
    for (auto const& ex : examples) {
        if (!corpus.find_passage(ex.positive_id)) {
            throw Error(ErrorKind::not_found, "pseudo_eval: positive passage not in corpus: " + ex.positive_id);
        }
    }
    if (model.fingerprint() != index.fingerprint()) {
        throw Error(ErrorKind::version_mismatch, "pseudo_eval: dense index was built with a different model");
    }
    EvalReport r;
    r.retriever = "dense";
    r.ks = std::move(ks);
    r.ranks.assign(examples.size(), std::nullopt);
    r.failed.assign(examples.size(), false);
    std::size_t const depth = r.ks.back();
    std::size_t const shards = std::min<std::size_t>(examples.size(), 64);
    parallel_shards(shards, threads, [&](std::size_t shard) {
        auto [begin, end] = shard_range(examples.size(), shards, shard);
        for (std::size_t q = begin; q < end; ++q) {
            auto hits = index.search_vector(encode<T>(model, vocab.encode(examples[q].query)), depth);
            for (std::size_t i = 0; i < hits.size(); ++i) {
                if (hits[i].passage_id == examples[q].positive_id) {
                    r.ranks[q] = i + 1;
                    break;
                }
            }
        }
    });
    detail::fill_accuracy(r);
    return r;
}

} // namespace spanret
