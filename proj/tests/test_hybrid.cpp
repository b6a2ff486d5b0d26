#include <gtest/gtest.h>

#include <map>

#include <spanret/hybrid.hpp>
#include <spanret/rng.hpp>

#include "oracles.hpp"

using namespace spanret;

namespace {

HybridConfig cfg(std::size_t k, std::size_t k_prime, double alpha = 1.0) { return HybridConfig{k, k_prime, alpha}; }

double score_of(const std::vector<ScoredHit>& hits, const std::string& id)
{
    for (auto const& h : hits) {
        if (h.passage_id == id) {
            return h.score;
        }
    }
    return std::nan("");
}

} // namespace

TEST(Fuse, SumsWhenInBothLists)
{
    auto out = fuse({{"a", 2.0}}, {{"a", 3.0}}, cfg(1, 1));
    ASSERT_EQ(out.size(), 1u);
    EXPECT_DOUBLE_EQ(out[0].score, 5.0);
}

TEST(Fuse, ImputesListMinimum)
{
    // "a" is dense-only: it receives the sparse list minimum 1.5.
    auto out = fuse({{"a", 2.0}, {"b", 1.0}}, {{"b", 4.0}, {"c", 1.5}}, cfg(3, 3));
    EXPECT_DOUBLE_EQ(score_of(out, "a"), 3.5);
    EXPECT_DOUBLE_EQ(score_of(out, "b"), 5.0);
    // "c" is sparse-only: dense minimum 1.0.
    EXPECT_DOUBLE_EQ(score_of(out, "c"), 2.5);
}

TEST(Fuse, EmptyListImputesZero)
{
    auto out = fuse({{"a", 2.0}, {"b", -1.0}}, {}, cfg(2, 5));
    EXPECT_DOUBLE_EQ(score_of(out, "a"), 2.0);
    EXPECT_DOUBLE_EQ(score_of(out, "b"), -1.0);
    auto sparse_only = fuse({}, {{"x", 0.7}}, cfg(1, 5));
    EXPECT_DOUBLE_EQ(sparse_only[0].score, 0.7);
}

TEST(Fuse, RejectsBadInput)
{
    EXPECT_THROW((void)fuse({{"a", 1.0}, {"a", 0.5}}, {}, cfg(1, 2)), Error);
    EXPECT_THROW((void)fuse({}, {}, cfg(5, 4)), Error);
    EXPECT_THROW((void)fuse({}, {}, cfg(0, 4)), Error);
    EXPECT_THROW((void)fuse({}, {}, cfg(1, 4, -0.1)), Error);
}

TEST(Fuse, FullDepthEqualsBruteForce)
{
    Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        std::size_t const n = 30;
        std::vector<ScoredHit> dense_all;
        std::vector<ScoredHit> sparse_all;
        std::map<std::string, double> truth;
        double const alpha = rng.uniform01() * 2.0;
        for (std::size_t i = 0; i < n; ++i) {
            std::string id = "p" + std::to_string(i);
            double const d = rng.normal();
            double const s = rng.bernoulli(0.5) ? 0.0 : 3.0 * rng.uniform01();
            dense_all.push_back({id, d});
            sparse_all.push_back({id, s});
            truth[id] = d + alpha * s;
        }
        std::vector<ScoredHit> brute;
        for (auto const& [id, s] : truth) {
            brute.push_back({id, s});
        }
        std::size_t const k = 1 + rng.uniform_index(n);
        auto want = oracle::rank_all(brute, k);
        auto got = fuse(oracle::rank_all(dense_all, n), oracle::rank_all(sparse_all, n), cfg(k, n, alpha));
        ASSERT_EQ(got.size(), want.size());
        for (std::size_t i = 0; i < k; ++i) {
            EXPECT_EQ(got[i].passage_id, want[i].passage_id);
            EXPECT_NEAR(got[i].score, want[i].score, 1e-12);
        }
    }
}

TEST(Fuse, HitsComeFromTheUnion)
{
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<ScoredHit> d;
        std::vector<ScoredHit> s;
        for (int i = 0; i < 10; ++i) {
            d.push_back({"d" + std::to_string(rng.uniform_index(40)), rng.normal()});
            s.push_back({"d" + std::to_string(rng.uniform_index(40)), rng.uniform01()});
        }
        auto dedup = [](std::vector<ScoredHit> v) {
            std::map<std::string, double> m;
            for (auto const& h : v) {
                m.emplace(h.passage_id, h.score);
            }
            std::vector<ScoredHit> out;
            for (auto const& [id, sc] : m) {
                out.push_back({id, sc});
            }
            return oracle::rank_all(out, out.size());
        };
        d = dedup(d);
        s = dedup(s);
        for (auto const& h : fuse(d, s, cfg(5, 10))) {
            bool const in_d = std::any_of(d.begin(), d.end(), [&](auto const& x) { return x.passage_id == h.passage_id; });
            bool const in_s = std::any_of(s.begin(), s.end(), [&](auto const& x) { return x.passage_id == h.passage_id; });
            EXPECT_TRUE(in_d || in_s);
        }
    }
}

TEST(Fuse, AlphaZeroFollowsDenseWhenSparseMissesAll)
{
    std::vector<ScoredHit> dense{{"c", 3.0}, {"a", 2.0}, {"b", 1.0}};
    std::vector<ScoredHit> sparse{{"x", 9.0}, {"y", 8.0}};
    auto out = fuse(dense, sparse, cfg(3, 5, 0.0));
    EXPECT_EQ(out[0].passage_id, "c");
    EXPECT_EQ(out[1].passage_id, "a");
    EXPECT_EQ(out[2].passage_id, "b");
}
