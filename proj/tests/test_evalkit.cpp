#include <gtest/gtest.h>

#include <sstream>

#include <spanret/evalkit.hpp>

#include "oracles.hpp"
#include "test_util.hpp"

using namespace spanret;

namespace {

Passage passage(const Tokenizer& tok, const std::string& id, const std::string& title, const std::string& body)
{
    return Passage{id, "doc", title, tok.tokenize(title), tok.tokenize(body), 0};
}

std::vector<TokenSeq> answers(const Tokenizer& tok, std::initializer_list<std::string> as)
{
    std::vector<TokenSeq> out;
    for (auto const& a : as) {
        out.push_back(tok.tokenize(a));
    }
    return out;
}

/// Ten single-passage documents "p0".."p9"; p3 and p7 mention "red fox".
Corpus ten_passages(const Tokenizer& tok)
{
    Corpus c;
    for (int i = 0; i < 10; ++i) {
        std::string const id = "p" + std::to_string(i);
        std::string const body = (i == 3 || i == 7) ? "the red fox ran" : "nothing to see";
        c.add_document(id, {passage(tok, id, "", body)});
    }
    return c;
}

Retriever fixed(std::vector<std::string> order)
{
    return [order](const std::string&, std::size_t k) {
        std::vector<ScoredHit> hits;
        for (std::size_t i = 0; i < order.size() && i < k; ++i) {
            hits.push_back({order[i], static_cast<double>(order.size() - i)});
        }
        return hits;
    };
}

} // namespace

TEST(HasAnswer, TokenContainment)
{
    Tokenizer tok;
    auto p = passage(tok, "x", "Beatles", "John Lennon married Yoko Ono in 1969.");
    EXPECT_TRUE(has_answer(p, answers(tok, {"Yoko Ono"})));
    EXPECT_TRUE(has_answer(p, answers(tok, {"yoko  ONO"})));
    EXPECT_FALSE(has_answer(p, answers(tok, {"Ono Yoko"})));
    EXPECT_FALSE(has_answer(p, answers(tok, {"Yok"})));
    EXPECT_TRUE(has_answer(p, answers(tok, {"nobody", "1969"})));
    // The title is searched as well.
    EXPECT_TRUE(has_answer(p, answers(tok, {"beatles"})));
    EXPECT_FALSE(has_answer(p, answers(tok, {"beatles john"})));
}

TEST(HasAnswer, AgreesWithRegexOracle)
{
    Tokenizer tok;
    Rng rng(5);
    static const std::vector<std::string> alphabet{"ab", "b", "a", "ba", "c"};
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::string> body;
        std::vector<std::string> ans;
        for (std::size_t i = 0, n = 1 + rng.uniform_index(10); i < n; ++i) {
            body.push_back(alphabet[rng.uniform_index(alphabet.size())]);
        }
        for (std::size_t i = 0, n = 1 + rng.uniform_index(3); i < n; ++i) {
            ans.push_back(alphabet[rng.uniform_index(alphabet.size())]);
        }
        std::string text;
        std::string answer;
        for (auto const& w : body) {
            text += w + " ";
        }
        for (auto const& w : ans) {
            answer += w + " ";
        }
        auto p = passage(tok, "x", "", text);
        auto full = surfaces(passage_text_with_title(p));
        EXPECT_EQ(has_answer(p, answers(tok, {answer})), oracle::regex_contains(full, ans)) << text << "|" << answer;
    }
}

TEST(Evaluate, RanksAndAccuracy)
{
    Tokenizer tok;
    auto corpus = ten_passages(tok);
    std::vector<QAExample> qa{{"q1", {"red fox"}}, {"q2", {"red fox"}}};
    // q1 sees p3 first (rank 1); q2 sees six misses before p7 (rank 7).
    auto r1 = fixed({"p3", "p0"});
    auto r2 = fixed({"p0", "p1", "p2", "p4", "p5", "p6", "p7"});
    Retriever by_question = [&](const std::string& q, std::size_t k) { return q == "q1" ? r1(q, k) : r2(q, k); };
    auto report = evaluate(by_question, corpus, tok, qa, {1, 5, 10});
    EXPECT_DOUBLE_EQ(report.at(1), 0.5);
    EXPECT_DOUBLE_EQ(report.at(5), 0.5);
    EXPECT_DOUBLE_EQ(report.at(10), 1.0);
    EXPECT_EQ(report.ranks[0], std::optional<std::size_t>(1));
    EXPECT_EQ(report.ranks[1], std::optional<std::size_t>(7));
    EXPECT_THROW((void)report.at(20), Error);
    std::ostringstream csv;
    report.write_ranks_csv(csv);
    EXPECT_EQ(csv.str(), "question,rank,failed\n0,1,0\n1,7,0\n");
    EXPECT_EQ(report.to_json()["accuracy"]["10"], 1.0);
}

TEST(Evaluate, FailedQuestionsAreCountedSeparately)
{
    Tokenizer tok;
    auto corpus = ten_passages(tok);
    std::vector<QAExample> qa{{"ok", {"red fox"}}, {"boom", {"red fox"}}, {"miss", {"blue whale"}}};
    Retriever r = [](const std::string& q, std::size_t k) {
        if (q == "boom") {
            throw Error(ErrorKind::io, "backend down");
        }
        return fixed({"p3"})(q, k);
    };
    auto report = evaluate(r, corpus, tok, qa, {1, 5}, "test", {}, 2);
    EXPECT_EQ(report.failed_count, 1u);
    EXPECT_TRUE(report.failed[1]);
    EXPECT_DOUBLE_EQ(report.at(1), 0.5);
    EXPECT_EQ(report.to_json()["failed"], 1);

    Retriever ghost = fixed({"nope"});
    EXPECT_EQ(evaluate(ghost, corpus, tok, qa, {1}).failed_count, 3u);
}

TEST(Evaluate, RejectsBadArguments)
{
    Tokenizer tok;
    auto corpus = ten_passages(tok);
    auto r = fixed({"p3"});
    EXPECT_THROW((void)evaluate(r, corpus, tok, {}, {1}), Error);
    std::vector<QAExample> qa{{"q", {"red fox"}}};
    EXPECT_THROW((void)evaluate(r, corpus, tok, qa, {}), Error);
    EXPECT_THROW((void)evaluate(r, corpus, tok, qa, {5, 1}), Error);
    EXPECT_THROW((void)evaluate(r, corpus, tok, qa, {0, 1}), Error);
}

TEST(Evaluate, AccuracyIsMonotoneInK)
{
    Tokenizer tok;
    auto corpus = ten_passages(tok);
    Rng rng(3);
    std::vector<QAExample> qa(40, QAExample{"q", {"red fox"}});
    std::vector<std::vector<std::string>> orders;
    for (std::size_t i = 0; i < qa.size(); ++i) {
        qa[i].question = std::to_string(i);
        std::vector<std::string> ids;
        for (int p = 0; p < 10; ++p) {
            ids.push_back("p" + std::to_string(p));
        }
        rng.shuffle(ids.begin(), ids.end());
        orders.push_back(ids);
    }
    Retriever r = [&](const std::string& q, std::size_t k) { return fixed(orders[std::stoul(q)])(q, k); };
    auto report = evaluate(r, corpus, tok, qa, {1, 2, 3, 5, 8, 10});
    EXPECT_TRUE(std::is_sorted(report.accuracy.begin(), report.accuracy.end()));
    EXPECT_DOUBLE_EQ(report.at(10), 1.0);
}

TEST(QaJsonl, ParsesAndReportsLine)
{
    Tokenizer tok;
    std::istringstream good("{\"question\": \"who?\", \"answers\": [\"Yoko Ono\", \"Ono\"]}\n\n"
                            "{\"question\": \"what?\", \"answers\": [\"x\"]}\n");
    auto qa = read_qa_jsonl(good, tok);
    ASSERT_EQ(qa.size(), 2u);
    EXPECT_EQ(qa[0].answers.size(), 2u);
    for (std::string bad : {"{\"question\": \"q\", \"answers\": []}", "{\"question\": 3, \"answers\": [\"a\"]}",
                            "{\"question\": \"q\", \"answers\": [\"...\"]}", "not json"}) {
        std::istringstream in("{\"question\": \"ok\", \"answers\": [\"a\"]}\n" + bad + "\n");
        try {
            (void)read_qa_jsonl(in, tok);
            FAIL() << bad;
        } catch (Error const& e) {
            EXPECT_EQ(e.kind(), ErrorKind::malformed_input);
            EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
        }
    }
}

TEST(PseudoEval, MatchesBruteForceRanks)
{
    Tokenizer tok;
    Corpus corpus;
    Rng rng(9);
    std::vector<PseudoExample> examples;
    for (int d = 0; d < 40; ++d) {
        std::string body;
        for (int i = 0; i < 10; ++i) {
            body += "w" + std::to_string(rng.uniform_index(50)) + " ";
        }
        std::string const id = "d" + std::to_string(d);
        corpus.add_document(id, {passage(tok, id + "#0", "", body)});
        PseudoExample ex;
        auto toks = tok.tokenize(body);
        ex.query.assign(toks.begin(), toks.begin() + 4);
        ex.positive_id = id + "#0";
        examples.push_back(ex);
    }
    auto vocab = build_vocab(corpus, 1);
    EncoderModel<double> model(spanret::testing::tiny_config(vocab.size(), 8, 1), 4);
    auto index = DenseIndex<double>::build(model, corpus, vocab);
    auto report = pseudo_eval(model, index, corpus, vocab, examples, {1, 5, 40});
    EXPECT_DOUBLE_EQ(report.at(40), 1.0);
    std::size_t at5 = 0;
    for (std::size_t q = 0; q < examples.size(); ++q) {
        auto qv = encode<double>(model, vocab.encode(examples[q].query));
        std::vector<ScoredHit> all;
        for (std::size_t i = 0; i < corpus.size(); ++i) {
            auto row = index.row(i);
            all.push_back({corpus.passage(i).passage_id, std::inner_product(row.begin(), row.end(), qv.begin(), 0.0)});
        }
        auto ranked = oracle::rank_all(all, all.size());
        auto it = std::find_if(ranked.begin(), ranked.end(),
                               [&](const ScoredHit& h) { return h.passage_id == examples[q].positive_id; });
        std::size_t const rank = static_cast<std::size_t>(it - ranked.begin()) + 1;
        EXPECT_EQ(report.ranks[q], std::optional<std::size_t>(rank));
        at5 += rank <= 5 ? 1 : 0;
    }
    EXPECT_DOUBLE_EQ(report.at(5), static_cast<double>(at5) / 40.0);

    EncoderModel<double> other(spanret::testing::tiny_config(vocab.size(), 8, 1), 5);
    EXPECT_THROW((void)pseudo_eval(other, index, corpus, vocab, examples, {1}), Error);
    examples[0].positive_id = "missing";
    EXPECT_THROW((void)pseudo_eval(model, index, corpus, vocab, examples, {1}), Error);
}
