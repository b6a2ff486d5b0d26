#include <gtest/gtest.h>

#include <sstream>

#include <spanret/dense_index.hpp>

#include "oracles.hpp"
#include "test_util.hpp"

using namespace spanret;

namespace {

struct Fixture {
    Tokenizer tok;
    Corpus corpus;
    Vocabulary vocab;
};

Fixture make_fixture(std::size_t passages, std::uint64_t seed)
{
    Fixture f;
    Rng rng(seed);
    std::vector<Document> docs;
    for (std::size_t d = 0; d < passages; ++d) {
        std::string text;
        for (int i = 0; i < 6; ++i) {
            text += "w" + std::to_string(rng.uniform_index(30)) + " ";
        }
        docs.push_back({"d" + std::to_string(d), "title" + std::to_string(d % 7), text});
    }
    f.corpus = ingest(docs, f.tok, 100);
    f.vocab = build_vocab(f.corpus, 1);
    return f;
}

EncoderConfig config_for(const Vocabulary& v)
{
    auto c = spanret::testing::tiny_config(v.size(), 8, 1);
    c.max_seq_len = 16;
    return c;
}

} // namespace

TEST(Dense, RowsAreEncodedTitledPassages)
{
    auto f = make_fixture(10, 1);
    EncoderModel<double> model(config_for(f.vocab), 3);
    auto idx = DenseIndex<double>::build(model, f.corpus, f.vocab);
    ASSERT_EQ(idx.size(), 10u);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        auto want = encode<double>(model, f.vocab.encode(passage_text_with_title(f.corpus.passage(i))));
        auto row = idx.row(i);
        EXPECT_TRUE(std::equal(row.begin(), row.end(), want.begin()));
    }
}

TEST(Dense, EmptyCorpusAndDeterministicRebuild)
{
    auto f = make_fixture(12, 2);
    EncoderModel<float> model(config_for(f.vocab), 3);
    auto a = DenseIndex<float>::build(model, f.corpus, f.vocab, 1);
    auto b = DenseIndex<float>::build(model, f.corpus, f.vocab, 4);
    EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin(), b.data().end()));
    EXPECT_EQ(DenseIndex<float>::build(model, Corpus{}, f.vocab).size(), 0u);
}

TEST(Dense, SearchMatchesNaiveScanOracle)
{
    auto f = make_fixture(100, 3);
    EncoderModel<double> model(config_for(f.vocab), 5);
    auto idx = DenseIndex<double>::build(model, f.corpus, f.vocab);
    Rng rng(8);
    for (int q = 0; q < 100; ++q) {
        std::vector<TokenId> query;
        for (int i = 0; i < 4; ++i) {
            query.push_back(static_cast<TokenId>(rng.uniform_index(f.vocab.size())));
        }
        auto qv = encode<double>(model, query);
        std::vector<ScoredHit> all;
        for (std::size_t i = 0; i < f.corpus.size(); ++i) {
            auto pv = encode<double>(model, f.vocab.encode(passage_text_with_title(f.corpus.passage(i))));
            double s = 0.0;
            for (std::size_t j = 0; j < pv.size(); ++j) {
                s += qv[j] * pv[j];
            }
            all.push_back({f.corpus.passage(i).passage_id, s});
        }
        std::size_t const k = 1 + rng.uniform_index(100);
        auto want = oracle::rank_all(all, k);
        auto got = idx.search(model, query, k);
        ASSERT_EQ(got.size(), want.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            EXPECT_EQ(got[i].passage_id, want[i].passage_id);
            EXPECT_NEAR(got[i].score, want[i].score, 1e-12);
        }
    }
}

TEST(Dense, FullDepthIsATotalOrderAndScaleInvariant)
{
    auto f = make_fixture(30, 4);
    EncoderModel<double> model(config_for(f.vocab), 6);
    auto idx = DenseIndex<double>::build(model, f.corpus, f.vocab);
    auto q = encode<double>(model, std::vector<TokenId>{5, 6, 7});
    auto full = idx.search_vector(q, idx.size());
    EXPECT_EQ(full.size(), idx.size());
    std::vector<double> scaled(q.size());
    std::transform(q.begin(), q.end(), scaled.begin(), [](double x) { return 3.5 * x; });
    auto again = idx.search_vector(scaled, idx.size());
    for (std::size_t i = 0; i < full.size(); ++i) {
        EXPECT_EQ(full[i].passage_id, again[i].passage_id);
    }
}

TEST(Dense, DuplicateVectorsTieByPassageId)
{
    DenseIndex<double> idx(2, {"b", "a", "c"}, {1, 0, 1, 0, 0, 1}, "fp");
    auto hits = idx.search_vector(std::vector<double>{1.0, 0.0}, 3);
    EXPECT_EQ(hits[0].passage_id, "a");
    EXPECT_EQ(hits[1].passage_id, "b");
    EXPECT_EQ(hits[2].passage_id, "c");
}

TEST(Dense, FingerprintMismatchIsAnError)
{
    auto f = make_fixture(5, 5);
    EncoderModel<double> model(config_for(f.vocab), 1);
    EncoderModel<double> other(config_for(f.vocab), 2);
    auto idx = DenseIndex<double>::build(model, f.corpus, f.vocab);
    EXPECT_THROW((void)idx.search(other, std::vector<TokenId>{5}, 3), Error);
    EXPECT_NO_THROW((void)idx.search(model, std::vector<TokenId>{5}, 3));
}

TEST(Dense, PersistsAndCountsTruncation)
{
    auto f = make_fixture(8, 6);
    auto cfg = config_for(f.vocab);
    cfg.max_seq_len = 5;
    EncoderModel<float> model(cfg, 1);
    DenseBuildStats stats;
    auto idx = DenseIndex<float>::build(model, f.corpus, f.vocab, 1, &stats);
    EXPECT_EQ(stats.truncated, 8u);
    std::stringstream buf;
    idx.write(buf, ArtifactHeader{"h", {}, {}});
    auto back = DenseIndex<float>::read(buf);
    EXPECT_EQ(back.fingerprint(), idx.fingerprint());
    EXPECT_TRUE(std::equal(back.data().begin(), back.data().end(), idx.data().begin(), idx.data().end()));
    std::stringstream buf2;
    idx.write(buf2, ArtifactHeader{});
    EXPECT_THROW((void)DenseIndex<double>::read(buf2), Error);
}
